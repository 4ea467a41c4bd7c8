#include "lightpeft/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "lightpeft/errors.hpp"

namespace lightpeft {
namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const MatRM>;
using Map = Eigen::Map<MatRM>;
using StridedC = Eigen::Map<const MatRM, 0, Eigen::OuterStride<>>;
using Strided = Eigen::Map<MatRM, 0, Eigen::OuterStride<>>;

using Node = detail::Node;
using detail::Buffer;
using NodePtr = std::shared_ptr<Node>;

bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  if (!grad_enabled()) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

// Builds an op output. When no input needs a gradient the result is a plain
// leaf and nothing is recorded.
Tensor make_result(Shape shape, Buffer value, std::initializer_list<const Tensor*> inputs,
                   const char* op, Buffer saved, std::function<void(Node&)> bw) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  if (any_requires_grad(inputs)) {
    node->requires_grad = true;
    for (const Tensor* t : inputs) node->inputs.push_back(t->node());
    node->saved = std::move(saved);
    node->backward = std::move(bw);
  }
  node->sync_accounting();
  return Tensor(std::move(node));
}

Node& input(Node& self, std::size_t i) { return *self.inputs[i]; }

std::size_t last_dim(const Tensor& t) {
  if (t.rank() == 0) throw DimensionError("tensor has no axes");
  return t.shape().back();
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 1 || b.rank() != 2 || last_dim(a) != b.dim(0)) {
    throw DimensionError("matmul shape mismatch: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const std::size_t k = b.dim(0);
  const std::size_t n = b.dim(1);
  const std::size_t m = a.numel() / k;
  Shape out_shape = a.shape();
  out_shape.back() = n;
  Buffer out(m * n);
  Map(out.data(), m, n).noalias() = MapC(a.data().data(), m, k) * MapC(b.data().data(), k, n);
  return make_result(std::move(out_shape), std::move(out), {&a, &b}, "matmul", {},
                     [m, k, n](Node& self) {
                       Node& an = input(self, 0);
                       Node& bn = input(self, 1);
                       MapC dc(self.grad.data(), m, n);
                       if (an.requires_grad) {
                         Map(an.ensure_grad(), m, k).noalias() += dc * MapC(bn.value.data(), k, n).transpose();
                       }
                       if (bn.requires_grad) {
                         Map(bn.ensure_grad(), k, n).noalias() += MapC(an.value.data(), m, k).transpose() * dc;
                       }
                     });
}

Tensor elementwise(const Tensor& a, const Tensor& b, BinaryKind kind) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  bool ok = bs.size() <= as.size() && std::equal(bs.rbegin(), bs.rend(), as.rbegin());
  if (!ok) {
    throw DimensionError("cannot broadcast " + shape_str(bs) + " onto " + shape_str(as));
  }
  const std::size_t n = a.numel();
  const std::size_t nb = b.numel();
  Buffer out(n);
  const double* av = a.data().data();
  const double* bv = b.data().data();
  for (std::size_t base = 0; base < n; base += nb) {
    if (kind == BinaryKind::add) {
      for (std::size_t j = 0; j < nb; ++j) out[base + j] = av[base + j] + bv[j];
    } else {
      for (std::size_t j = 0; j < nb; ++j) out[base + j] = av[base + j] * bv[j];
    }
  }
  return make_result(as, std::move(out), {&a, &b}, kind == BinaryKind::add ? "add" : "mul", {},
                     [n, nb, kind](Node& self) {
                       Node& an = input(self, 0);
                       Node& bn = input(self, 1);
                       const double* g = self.grad.data();
                       if (an.requires_grad) {
                         double* ga = an.ensure_grad();
                         if (kind == BinaryKind::add) {
                           for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
                         } else {
                           const double* bv = bn.value.data();
                           for (std::size_t base = 0; base < n; base += nb) {
                             for (std::size_t j = 0; j < nb; ++j) ga[base + j] += g[base + j] * bv[j];
                           }
                         }
                       }
                       if (bn.requires_grad) {
                         double* gb = bn.ensure_grad();
                         const double* av = an.value.data();
                         for (std::size_t base = 0; base < n; base += nb) {
                           if (kind == BinaryKind::add) {
                             for (std::size_t j = 0; j < nb; ++j) gb[j] += g[base + j];
                           } else {
                             for (std::size_t j = 0; j < nb; ++j) gb[j] += g[base + j] * av[base + j];
                           }
                         }
                       }
                     });
}

namespace {

constexpr double kGeluCoeff = 0.044715;
const double kSqrt2OverPi = std::sqrt(2.0 / std::numbers::pi);

}  // namespace

double activation_value(double x, Activation kind) {
  if (kind == Activation::relu) return x > 0.0 ? x : 0.0;
  return 0.5 * x * (1.0 + std::tanh(kSqrt2OverPi * (x + kGeluCoeff * x * x * x)));
}

Tensor activation(const Tensor& x, Activation kind) {
  const std::size_t n = x.numel();
  Buffer out(n);
  const double* xv = x.data().data();
  if (kind == Activation::relu) {
    for (std::size_t i = 0; i < n; ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    return make_result(x.shape(), std::move(out), {&x}, "relu", {}, [n](Node& self) {
      Node& xn = input(self, 0);
      double* gx = xn.ensure_grad();
      const double* g = self.grad.data();
      for (std::size_t i = 0; i < n; ++i) {
        if (xn.value[i] > 0.0) gx[i] += g[i];
      }
    });
  }
  // tanh of the inner term is kept for the backward pass.
  Buffer th(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = xv[i];
    th[i] = std::tanh(kSqrt2OverPi * (v + kGeluCoeff * v * v * v));
    out[i] = 0.5 * v * (1.0 + th[i]);
  }
  return make_result(x.shape(), std::move(out), {&x}, "gelu", std::move(th), [n](Node& self) {
    Node& xn = input(self, 0);
    double* gx = xn.ensure_grad();
    const double* g = self.grad.data();
    const double* t = self.saved.data();
    for (std::size_t i = 0; i < n; ++i) {
      const double v = xn.value[i];
      const double d =
          0.5 * (1.0 + t[i]) + 0.5 * v * (1.0 - t[i] * t[i]) * kSqrt2OverPi * (1.0 + 3.0 * kGeluCoeff * v * v);
      gx[i] += g[i] * d;
    }
  });
}

namespace {

void softmax_rows_into(const double* values, std::size_t rows, std::size_t cols, double* out) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = values + r * cols;
    double* o = out + r * cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c) mx = std::max(mx, row[c]);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      o[c] = std::exp(row[c] - mx);
      total += o[c];
    }
    for (std::size_t c = 0; c < cols; ++c) o[c] /= total;
  }
}

}  // namespace

std::vector<double> softmax_rows(std::span<const double> values, std::size_t rows, std::size_t cols) {
  std::vector<double> out(rows * cols);
  softmax_rows_into(values.data(), rows, cols, out.data());
  return out;
}

Tensor softmax_ce_loss(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("softmax_ce_loss expects [batch, classes] logits matching " +
                         std::to_string(labels.size()) + " labels, got " + shape_str(logits.shape()));
  }
  const std::size_t rows = logits.dim(0);
  const std::size_t cols = logits.dim(1);
  for (int label : labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= cols) {
      throw IndexError("label " + std::to_string(label) + " outside [0, " + std::to_string(cols) + ")");
    }
  }
  Buffer probs(rows * cols);
  softmax_rows_into(logits.data().data(), rows, cols, probs.data());
  double loss = 0.0;
  const double* lv = logits.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = lv + r * cols;
    const double mx = *std::max_element(row, row + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += std::exp(row[c] - mx);
    loss += mx + std::log(total) - row[labels[r]];
  }
  loss /= static_cast<double>(rows);
  // Labels ride along in saved after the probabilities.
  for (int label : labels) probs.push_back(static_cast<double>(label));
  return make_result(Shape{1}, {loss}, {&logits}, "softmax_ce", std::move(probs),
                     [rows, cols](Node& self) {
                       Node& ln = input(self, 0);
                       double* gl = ln.ensure_grad();
                       const double g = self.grad[0] / static_cast<double>(rows);
                       const double* p = self.saved.data();
                       const double* lab = self.saved.data() + rows * cols;
                       for (std::size_t r = 0; r < rows; ++r) {
                         const auto label = static_cast<std::size_t>(lab[r]);
                         for (std::size_t c = 0; c < cols; ++c) {
                           gl[r * cols + c] += g * (p[r * cols + c] - (c == label ? 1.0 : 0.0));
                         }
                       }
                     });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t d = last_dim(x);
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm parameters " + shape_str(gain.shape()) + "/" +
                         shape_str(bias.shape()) + " do not match last axis of " + shape_str(x.shape()));
  }
  if (!(eps > 0.0)) throw ContractError("layer_norm eps must be positive");
  const std::size_t rows = x.numel() / d;
  Buffer out(x.numel());
  // saved = [xhat (rows*d), rstd (rows)]
  Buffer saved(rows * d + rows);
  const double* xv = x.data().data();
  const double* gv = gain.data().data();
  const double* bv = bias.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv + r * d;
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += row[c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= static_cast<double>(d);
    const double rstd = 1.0 / std::sqrt(var + eps);
    saved[rows * d + r] = rstd;
    for (std::size_t c = 0; c < d; ++c) {
      const double xhat = (row[c] - mean) * rstd;
      saved[r * d + c] = xhat;
      out[r * d + c] = xhat * gv[c] + bv[c];
    }
  }
  return make_result(x.shape(), std::move(out), {&x, &gain, &bias}, "layer_norm", std::move(saved),
                     [rows, d](Node& self) {
                       Node& xn = input(self, 0);
                       Node& gn = input(self, 1);
                       Node& bn = input(self, 2);
                       const double* g = self.grad.data();
                       const double* xhat = self.saved.data();
                       const double* rstd = self.saved.data() + rows * d;
                       if (gn.requires_grad || bn.requires_grad) {
                         double* gg = gn.requires_grad ? gn.ensure_grad() : nullptr;
                         double* gb = bn.requires_grad ? bn.ensure_grad() : nullptr;
                         for (std::size_t r = 0; r < rows; ++r) {
                           for (std::size_t c = 0; c < d; ++c) {
                             if (gg) gg[c] += g[r * d + c] * xhat[r * d + c];
                             if (gb) gb[c] += g[r * d + c];
                           }
                         }
                       }
                       if (xn.requires_grad) {
                         double* gx = xn.ensure_grad();
                         const double* gain = gn.value.data();
                         const double inv_d = 1.0 / static_cast<double>(d);
                         for (std::size_t r = 0; r < rows; ++r) {
                           double mean_dxhat = 0.0;
                           double mean_dxhat_xhat = 0.0;
                           for (std::size_t c = 0; c < d; ++c) {
                             const double dxhat = g[r * d + c] * gain[c];
                             mean_dxhat += dxhat;
                             mean_dxhat_xhat += dxhat * xhat[r * d + c];
                           }
                           mean_dxhat *= inv_d;
                           mean_dxhat_xhat *= inv_d;
                           for (std::size_t c = 0; c < d; ++c) {
                             const double dxhat = g[r * d + c] * gain[c];
                             gx[r * d + c] +=
                                 rstd[r] * (dxhat - mean_dxhat - xhat[r * d + c] * mean_dxhat_xhat);
                           }
                         }
                       }
                     });
}

Tensor scale(const Tensor& x, double factor) {
  const std::size_t n = x.numel();
  Buffer out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = x.data()[i] * factor;
  return make_result(x.shape(), std::move(out), {&x}, "scale", {}, [n, factor](Node& self) {
    double* gx = input(self, 0).ensure_grad();
    for (std::size_t i = 0; i < n; ++i) gx[i] += self.grad[i] * factor;
  });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  const std::size_t n = x.numel();
  return make_result(Shape{1}, {total}, {&x}, "sum", {}, [n](Node& self) {
    double* gx = input(self, 0).ensure_grad();
    for (std::size_t i = 0; i < n; ++i) gx[i] += self.grad[0];
  });
}

Tensor abs_sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += std::abs(v);
  const std::size_t n = x.numel();
  return make_result(Shape{1}, {total}, {&x}, "abs_sum", {}, [n](Node& self) {
    Node& xn = input(self, 0);
    double* gx = xn.ensure_grad();
    for (std::size_t i = 0; i < n; ++i) {
      const double v = xn.value[i];
      const double sign = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
      gx[i] += self.grad[0] * sign;
    }
  });
}

Tensor embedding(const Tensor& table, std::span<const int> ids, const Shape& index_shape) {
  if (table.rank() != 2) throw DimensionError("embedding table must be 2-D, got " + shape_str(table.shape()));
  if (shape_numel(index_shape) != ids.size()) {
    throw DimensionError("embedding index shape " + shape_str(index_shape) + " does not match " +
                         std::to_string(ids.size()) + " ids");
  }
  const std::size_t vocab = table.dim(0);
  const std::size_t d = table.dim(1);
  Buffer out(ids.size() * d);
  Buffer saved(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const int id = ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(vocab));
    }
    std::copy_n(table.data().data() + static_cast<std::size_t>(id) * d, d, out.data() + i * d);
    saved[i] = static_cast<double>(id);
  }
  Shape out_shape = index_shape;
  out_shape.push_back(d);
  const std::size_t count = ids.size();
  return make_result(std::move(out_shape), std::move(out), {&table}, "embedding", std::move(saved),
                     [count, d](Node& self) {
                       double* gt = input(self, 0).ensure_grad();
                       for (std::size_t i = 0; i < count; ++i) {
                         const auto id = static_cast<std::size_t>(self.saved[i]);
                         for (std::size_t c = 0; c < d; ++c) gt[id * d + c] += self.grad[i * d + c];
                       }
                     });
}

Tensor mean_pool(const Tensor& x) {
  if (x.rank() != 3) throw DimensionError("mean_pool expects [batch, seq, d], got " + shape_str(x.shape()));
  const std::size_t batch = x.dim(0);
  const std::size_t seq = x.dim(1);
  const std::size_t d = x.dim(2);
  Buffer out(batch * d, 0.0);
  const double inv = 1.0 / static_cast<double>(seq);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t s = 0; s < seq; ++s) {
      const double* row = x.data().data() + (b * seq + s) * d;
      for (std::size_t c = 0; c < d; ++c) out[b * d + c] += row[c];
    }
    for (std::size_t c = 0; c < d; ++c) out[b * d + c] *= inv;
  }
  return make_result(Shape{batch, d}, std::move(out), {&x}, "mean_pool", {},
                     [batch, seq, d, inv](Node& self) {
                       double* gx = input(self, 0).ensure_grad();
                       for (std::size_t b = 0; b < batch; ++b) {
                         for (std::size_t s = 0; s < seq; ++s) {
                           for (std::size_t c = 0; c < d; ++c) {
                             gx[(b * seq + s) * d + c] += self.grad[b * d + c] * inv;
                           }
                         }
                       }
                     });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionShape& shape) {
  const std::size_t width = shape.heads * shape.head_dim;
  if (q.rank() != 3 || q.shape() != k.shape() || q.shape() != v.shape() || q.dim(2) != width) {
    throw DimensionError("attention expects matching [batch, seq, " + std::to_string(width) +
                         "] q/k/v, got " + shape_str(q.shape()) + ", " + shape_str(k.shape()) + ", " +
                         shape_str(v.shape()));
  }
  const std::size_t batch = q.dim(0);
  const std::size_t seq = q.dim(1);
  const std::size_t heads = shape.heads;
  const std::size_t hd = shape.head_dim;
  const bool causal = shape.causal;
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(hd));

  Buffer out(q.numel());
  // saved = attention probabilities [batch, heads, seq, seq]
  Buffer probs(batch * heads * seq * seq);
  MatRM scores(seq, seq);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t offset = b * seq * width + h * hd;
      StridedC qm(q.data().data() + offset, seq, hd, Eigen::OuterStride<>(width));
      StridedC km(k.data().data() + offset, seq, hd, Eigen::OuterStride<>(width));
      StridedC vm(v.data().data() + offset, seq, hd, Eigen::OuterStride<>(width));
      scores.noalias() = qm * km.transpose();
      scores *= scale_factor;
      if (causal) {
        for (std::size_t i = 0; i < seq; ++i) {
          for (std::size_t j = i + 1; j < seq; ++j) scores(i, j) = -std::numeric_limits<double>::infinity();
        }
      }
      double* p = probs.data() + (b * heads + h) * seq * seq;
      softmax_rows_into(scores.data(), seq, seq, p);
      Strided om(out.data() + offset, seq, hd, Eigen::OuterStride<>(width));
      om.noalias() = MapC(p, seq, seq) * vm;
    }
  }
  return make_result(q.shape(), std::move(out), {&q, &k, &v}, "attention", std::move(probs),
                     [batch, seq, heads, hd, width, scale_factor](Node& self) {
                       Node& qn = input(self, 0);
                       Node& kn = input(self, 1);
                       Node& vn = input(self, 2);
                       double* gq = qn.requires_grad ? qn.ensure_grad() : nullptr;
                       double* gk = kn.requires_grad ? kn.ensure_grad() : nullptr;
                       double* gv = vn.requires_grad ? vn.ensure_grad() : nullptr;
                       MatRM dp(seq, seq);
                       for (std::size_t b = 0; b < batch; ++b) {
                         for (std::size_t h = 0; h < heads; ++h) {
                           const std::size_t offset = b * seq * width + h * hd;
                           const Eigen::OuterStride<> stride(width);
                           MapC p(self.saved.data() + (b * heads + h) * seq * seq, seq, seq);
                           StridedC dout(self.grad.data() + offset, seq, hd, stride);
                           StridedC qm(qn.value.data() + offset, seq, hd, stride);
                           StridedC km(kn.value.data() + offset, seq, hd, stride);
                           StridedC vm(vn.value.data() + offset, seq, hd, stride);
                           if (gv) Strided(gv + offset, seq, hd, stride).noalias() += p.transpose() * dout;
                           dp.noalias() = dout * vm.transpose();
                           // Softmax backward: ds = p * (dp - rowsum(dp * p)).
                           for (std::size_t i = 0; i < seq; ++i) {
                             double dot = 0.0;
                             for (std::size_t j = 0; j < seq; ++j) dot += dp(i, j) * p(i, j);
                             for (std::size_t j = 0; j < seq; ++j) dp(i, j) = p(i, j) * (dp(i, j) - dot) * scale_factor;
                           }
                           if (gq) Strided(gq + offset, seq, hd, stride).noalias() += dp * km;
                           if (gk) Strided(gk + offset, seq, hd, stride).noalias() += dp.transpose() * qm;
                         }
                       }
                     });
}

Tensor scale_column_groups(const Tensor& x, const Tensor& m, std::size_t width) {
  const std::size_t groups = m.numel();
  if (x.rank() < 1 || m.rank() != 1 || last_dim(x) != groups * width) {
    throw DimensionError("cannot scale " + shape_str(x.shape()) + " by " + std::to_string(groups) +
                         " groups of width " + std::to_string(width));
  }
  const std::size_t cols = groups * width;
  const std::size_t rows = x.numel() / cols;
  Buffer out(x.numel());
  const double* xv = x.data().data();
  const double* mv = m.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = xv[r * cols + c] * mv[c / width];
  }
  return make_result(x.shape(), std::move(out), {&x, &m}, "scale_groups", {},
                     [rows, cols, width](Node& self) {
                       Node& xn = input(self, 0);
                       Node& mn = input(self, 1);
                       const double* g = self.grad.data();
                       if (xn.requires_grad) {
                         double* gx = xn.ensure_grad();
                         for (std::size_t r = 0; r < rows; ++r) {
                           for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += g[r * cols + c] * mn.value[c / width];
                         }
                       }
                       if (mn.requires_grad) {
                         double* gm = mn.ensure_grad();
                         for (std::size_t r = 0; r < rows; ++r) {
                           for (std::size_t c = 0; c < cols; ++c) gm[c / width] += g[r * cols + c] * xn.value[r * cols + c];
                         }
                       }
                     });
}

}  // namespace lightpeft
