#include "lightpeft/fm_prune.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "lightpeft/errors.hpp"

namespace lightpeft {

MaskSet MaskSet::ones(const FoundationModel& model, bool requires_grad) {
  MaskSet m;
  for (std::size_t l = 0; l < model.config.layers; ++l) {
    m.head.push_back(Tensor::full({model.heads_in_layer(l)}, 1.0, requires_grad));
    m.ffn.push_back(Tensor::full({model.ffn_in_layer(l)}, 1.0, requires_grad));
  }
  return m;
}

std::vector<Tensor> MaskSet::parameters() const {
  std::vector<Tensor> out = head;
  out.insert(out.end(), ffn.begin(), ffn.end());
  return out;
}

std::size_t MaskSet::count() const {
  std::size_t n = 0;
  for (const Tensor& t : parameters()) n += t.numel();
  return n;
}

MaskSet MaskSet::clone() const {
  MaskSet c;
  for (const Tensor& t : head) c.head.push_back(t.clone());
  for (const Tensor& t : ffn) c.ffn.push_back(t.clone());
  return c;
}

Tensor mask_loss(const Tensor& task_loss, const MaskSet& masks, const MaskPenaltyConfig& cfg) {
  if (cfg.lambda_heads < 0.0 || cfg.lambda_ffn < 0.0) throw ContractError("mask penalties must be nonnegative");
  Tensor total = task_loss;
  if (cfg.lambda_heads != 0.0) {
    for (const Tensor& m : masks.head) total = add(total, scale(abs_sum(m), cfg.lambda_heads));
  }
  if (cfg.lambda_ffn != 0.0) {
    for (const Tensor& m : masks.ffn) total = add(total, scale(abs_sum(m), cfg.lambda_ffn));
  }
  return total;
}

std::size_t drop_count(double rate, std::size_t total) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ContractError("pruning rate " + std::to_string(rate) + " outside [0, 1)");
  }
  return static_cast<std::size_t>(std::floor(rate * static_cast<double>(total) + 1e-9));
}

Selection select_heads(const MaskSet& masks, double rate) {
  Selection sel;
  for (std::size_t l = 0; l < masks.head.size(); ++l) {
    const auto values = masks.head[l].data();
    const std::size_t n = values.size();
    const std::size_t drop = drop_count(rate, n);
    if (drop >= n) {
      throw ContractError("head pruning rate " + std::to_string(rate) + " would empty layer " + std::to_string(l));
    }
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return std::abs(values[a]) < std::abs(values[b]); });
    std::vector<std::size_t> keep(order.begin() + static_cast<std::ptrdiff_t>(drop), order.end());
    std::sort(keep.begin(), keep.end());
    sel.keep.push_back(std::move(keep));
  }
  return sel;
}

Selection select_ffn_dims(const MaskSet& masks, double rate) {
  struct Entry {
    double magnitude;
    std::size_t layer;
    std::size_t dim;
  };
  std::vector<Entry> pool;
  for (std::size_t l = 0; l < masks.ffn.size(); ++l) {
    const auto values = masks.ffn[l].data();
    for (std::size_t j = 0; j < values.size(); ++j) pool.push_back({std::abs(values[j]), l, j});
  }
  const std::size_t drop = drop_count(rate, pool.size());
  std::stable_sort(pool.begin(), pool.end(), [](const Entry& a, const Entry& b) {
    return std::tie(a.magnitude, a.layer, a.dim) < std::tie(b.magnitude, b.layer, b.dim);
  });
  Selection sel;
  sel.keep.resize(masks.ffn.size());
  for (std::size_t i = drop; i < pool.size(); ++i) sel.keep[pool[i].layer].push_back(pool[i].dim);
  for (std::size_t l = 0; l < masks.ffn.size(); ++l) {
    auto& keep = sel.keep[l];
    if (keep.empty() && masks.ffn[l].numel() > 0) {
      const auto values = masks.ffn[l].data();
      std::size_t best = 0;
      for (std::size_t j = 1; j < values.size(); ++j) {
        if (std::abs(values[j]) > std::abs(values[best])) best = j;
      }
      keep.push_back(best);
      sel.warnings.push_back("FFN pruning would empty layer " + std::to_string(l) + "; forced keep of dim " +
                             std::to_string(best));
    }
    std::sort(keep.begin(), keep.end());
  }
  return sel;
}

}  // namespace lightpeft
