#include "lightpeft/peft.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lightpeft/errors.hpp"
#include "lightpeft/fm_prune.hpp"
#include "lightpeft/plan.hpp"

namespace lightpeft {

std::string to_string(PeftKind kind) { return kind == PeftKind::lora ? "lora" : "adapter"; }

std::string to_string(Site site) {
  switch (site) {
    case Site::q: return "q";
    case Site::k: return "k";
    case Site::v: return "v";
    case Site::o: return "o";
    case Site::fc1: return "fc1";
    case Site::fc2: return "fc2";
    case Site::after_mha: return "after_mha";
    case Site::after_ffn: return "after_ffn";
  }
  return "?";
}

PeftKind parse_peft_kind(const std::string& text) {
  if (text == "lora") return PeftKind::lora;
  if (text == "adapter") return PeftKind::adapter;
  throw ConfigError("unknown PEFT kind '" + text + "' (expected lora or adapter)");
}

Site parse_site(const std::string& text) {
  for (Site s : {Site::q, Site::k, Site::v, Site::o, Site::fc1, Site::fc2, Site::after_mha, Site::after_ffn}) {
    if (to_string(s) == text) return s;
  }
  throw ConfigError("unknown attach site '" + text + "'");
}

bool is_lora_site(Site site) { return site != Site::after_mha && site != Site::after_ffn; }

PeftModule PeftModule::clone() const {
  PeftModule c = *this;
  c.w_down = w_down.clone();
  c.w_up = w_up.clone();
  return c;
}

std::optional<std::size_t> PeftSet::find(std::size_t layer, Site site) const {
  for (std::size_t i = 0; i < modules.size(); ++i) {
    if (modules[i].attach.layer == layer && modules[i].attach.site == site) return i;
  }
  return std::nullopt;
}

std::vector<Tensor> PeftSet::parameters() const {
  std::vector<Tensor> out;
  for (const PeftModule& m : modules) {
    out.push_back(m.w_down);
    out.push_back(m.w_up);
  }
  return out;
}

std::size_t PeftSet::param_count() const {
  std::size_t n = 0;
  for (const PeftModule& m : modules) n += m.param_count();
  return n;
}

PeftSet PeftSet::clone() const {
  PeftSet c;
  for (const PeftModule& m : modules) c.modules.push_back(m.clone());
  return c;
}

Tensor lora_delta(const Tensor& x, const PeftModule& module) {
  if (module.kind != PeftKind::lora) throw ContractError("lora_delta called on an adapter module");
  return scale(matmul(matmul(x, module.w_down), module.w_up), module.scale);
}

Tensor adapter_apply(const Tensor& h, const PeftModule& module, Activation f) {
  if (module.kind != PeftKind::adapter) throw ContractError("adapter_apply called on a LoRA module");
  if (module.d_in() != module.d_out()) {
    throw ContractError("adapter must map d to d, got " + std::to_string(module.d_in()) + " -> " +
                        std::to_string(module.d_out()));
  }
  return add(h, matmul(activation(matmul(h, module.w_down), f), module.w_up));
}

std::pair<std::size_t, std::size_t> site_dims(const FoundationModel& model, AttachPoint point) {
  if (point.layer >= model.config.layers) {
    throw IndexError("attach layer " + std::to_string(point.layer) + " out of range");
  }
  const std::size_t d = model.config.hidden;
  const std::size_t attn = model.heads_in_layer(point.layer) * model.config.head_dim();
  const std::size_t ffn = model.ffn_in_layer(point.layer);
  switch (point.site) {
    case Site::q:
    case Site::k:
    case Site::v: return {d, attn};
    case Site::o: return {attn, d};
    case Site::fc1: return {d, ffn};
    case Site::fc2: return {ffn, d};
    case Site::after_mha:
    case Site::after_ffn: return {d, d};
  }
  return {d, d};
}

PeftModule make_module(const FoundationModel& model, PeftKind kind, AttachPoint point, std::size_t rank,
                       double scale, Rng& rng) {
  if (rank == 0) throw ContractError("PEFT rank must be at least 1");
  if (is_lora_site(point.site) != (kind == PeftKind::lora)) {
    throw ContractError("site " + to_string(point.site) + " does not accept " + to_string(kind) + " modules");
  }
  const auto [d_in, d_out] = site_dims(model, point);
  const double bound = 1.0 / std::sqrt(static_cast<double>(d_in));
  std::vector<double> down(d_in * rank);
  for (double& v : down) v = rng.uniform(-bound, bound);
  PeftModule m;
  m.kind = kind;
  m.attach = point;
  m.w_down = Tensor::from({d_in, rank}, std::move(down), true);
  m.w_up = Tensor::zeros({rank, d_out}, true);
  m.rank = rank;
  m.scale = kind == PeftKind::lora ? scale : 1.0;
  m.active_ranks.resize(rank);
  std::iota(m.active_ranks.begin(), m.active_ranks.end(), 0);
  return m;
}

std::vector<AttachPoint> estimation_points(std::size_t layers, PeftKind kind) {
  std::vector<AttachPoint> points;
  for (std::size_t l = 0; l < layers; ++l) {
    if (kind == PeftKind::lora) {
      for (Site s : {Site::q, Site::k, Site::v, Site::o, Site::fc1, Site::fc2}) points.push_back({l, s});
    } else {
      points.push_back({l, Site::after_mha});
      points.push_back({l, Site::after_ffn});
    }
  }
  return points;
}

PeftSet attach_at(const FoundationModel& model, const std::vector<AttachPoint>& points, const PeftConfig& cfg,
                  Rng& rng) {
  PeftSet set;
  for (const AttachPoint& p : points) {
    if (set.find(p.layer, p.site)) {
      throw ContractError("duplicate attach point layer " + std::to_string(p.layer) + " site " + to_string(p.site));
    }
    set.modules.push_back(make_module(model, cfg.kind, p, cfg.rank, cfg.scale, rng));
  }
  return set;
}

PeftSet attach_estimation_set(const FoundationModel& model, const PeftConfig& cfg, Rng& rng) {
  return attach_at(model, estimation_points(model.config.layers, cfg.kind), cfg, rng);
}

PeftModule shrink_ranks(const PeftModule& module, const std::vector<std::size_t>& keep) {
  if (keep.empty()) {
    throw ContractError("shrink_ranks with an empty keep set on layer " + std::to_string(module.attach.layer) +
                        " site " + to_string(module.attach.site) + "; remove the module instead");
  }
  std::vector<std::size_t> pos;
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (i > 0 && keep[i] <= keep[i - 1]) throw ContractError("rank keep set must be strictly increasing");
    auto it = std::find(module.active_ranks.begin(), module.active_ranks.end(), keep[i]);
    if (it == module.active_ranks.end()) {
      throw ContractError("rank " + std::to_string(keep[i]) + " is not active in layer " +
                          std::to_string(module.attach.layer) + " site " + to_string(module.attach.site));
    }
    pos.push_back(static_cast<std::size_t>(it - module.active_ranks.begin()));
  }
  const std::size_t d_in = module.d_in();
  const std::size_t d_out = module.d_out();
  const std::size_t old_r = module.active_rank();
  const std::size_t r = pos.size();
  std::vector<double> down(d_in * r);
  std::vector<double> up(r * d_out);
  for (std::size_t i = 0; i < d_in; ++i) {
    for (std::size_t j = 0; j < r; ++j) down[i * r + j] = module.w_down.at(i * old_r + pos[j]);
  }
  for (std::size_t j = 0; j < r; ++j) {
    std::copy_n(module.w_up.data().data() + pos[j] * d_out, d_out, up.data() + j * d_out);
  }
  PeftModule out = module;
  out.w_down = Tensor::from({d_in, r}, std::move(down), module.w_down.requires_grad());
  out.w_up = Tensor::from({r, d_out}, std::move(up), module.w_up.requires_grad());
  out.active_ranks = keep;
  return out;
}

namespace {

std::vector<std::size_t> kept_positions(const std::vector<std::size_t>& keep, const std::vector<std::size_t>& current) {
  std::vector<std::size_t> pos;
  for (std::size_t idx : keep) {
    auto it = std::lower_bound(current.begin(), current.end(), idx);
    if (it == current.end() || *it != idx) {
      throw LayoutError("plan index " + std::to_string(idx) + " is not present in the current layout");
    }
    pos.push_back(static_cast<std::size_t>(it - current.begin()));
  }
  return pos;
}

// Keeps columns (blocks of `width`) of a [rows, cols] matrix.
Tensor keep_columns(const Tensor& t, const std::vector<std::size_t>& blocks, std::size_t width) {
  const std::size_t rows = t.dim(0);
  const std::size_t cols = t.dim(1);
  const std::size_t out_cols = blocks.size() * width;
  std::vector<double> out(rows * out_cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      std::copy_n(t.data().data() + r * cols + blocks[b] * width, width, out.data() + r * out_cols + b * width);
    }
  }
  return Tensor::from({rows, out_cols}, std::move(out), t.requires_grad());
}

// Keeps row blocks of a [rows, cols] matrix, block b multiplied by factors[b].
Tensor keep_rows(const Tensor& t, const std::vector<std::size_t>& blocks, std::size_t width,
                 const std::vector<double>& factors) {
  const std::size_t cols = t.dim(1);
  std::vector<double> out(blocks.size() * width * cols);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    for (std::size_t i = 0; i < width; ++i) {
      const double* src = t.data().data() + (blocks[b] * width + i) * cols;
      double* dst = out.data() + (b * width + i) * cols;
      for (std::size_t c = 0; c < cols; ++c) dst[c] = src[c] * factors[b];
    }
  }
  return Tensor::from({blocks.size() * width, cols}, std::move(out), t.requires_grad());
}

}  // namespace

PeftSet reslice_for_layout(const PeftSet& peft, const HeadLayout& from, const PruningPlan& plan,
                           std::size_t head_dim, const MaskSet* masks) {
  PeftSet out;
  for (const PeftModule& m : peft.modules) {
    PeftModule c = m.clone();
    const std::size_t l = m.attach.layer;
    if (m.kind == PeftKind::lora) {
      const auto heads = kept_positions(plan.heads.at(l), from.heads.at(l));
      const auto dims = kept_positions(plan.ffn.at(l), from.ffn.at(l));
      auto factors = [&](bool head_mask, const std::vector<std::size_t>& pos) {
        std::vector<double> f(pos.size(), 1.0);
        if (masks) {
          const Tensor& mask = head_mask ? masks->head.at(l) : masks->ffn.at(l);
          for (std::size_t i = 0; i < pos.size(); ++i) f[i] = mask.at(pos[i]);
        }
        return f;
      };
      switch (m.attach.site) {
        case Site::q:
        case Site::k:
        case Site::v: c.w_up = keep_columns(m.w_up, heads, head_dim); break;
        case Site::o: c.w_down = keep_rows(m.w_down, heads, head_dim, factors(true, heads)); break;
        case Site::fc1: c.w_up = keep_columns(m.w_up, dims, 1); break;
        case Site::fc2: c.w_down = keep_rows(m.w_down, dims, 1, factors(false, dims)); break;
        default: break;
      }
    }
    out.modules.push_back(std::move(c));
  }
  return out;
}

}  // namespace lightpeft
