#include "lightpeft/peft_prune.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

#include "lightpeft/errors.hpp"
#include "lightpeft/fm_prune.hpp"

namespace lightpeft {
namespace {

constexpr double kNormGuard = 1e-12;

double l2_norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v * v;
  return std::sqrt(s);
}

std::string module_name(const PeftModule& m) {
  return to_string(m.kind) + " module at layer " + std::to_string(m.attach.layer) + " site " +
         to_string(m.attach.site);
}

}  // namespace

ImportanceLedger ImportanceLedger::for_set(const PeftSet& peft) {
  ImportanceLedger ledger;
  for (const PeftModule& m : peft.modules) {
    LedgerEntry e;
    e.attach = m.attach;
    e.kind = m.kind;
    e.rank_importance.assign(m.rank, 0.0);
    ledger.entries.push_back(std::move(e));
  }
  return ledger;
}

void ImportanceLedger::observe_module(std::size_t index, double importance) {
  LedgerEntry& e = entries.at(index);
  ++e.batches;
  e.mean_importance += (importance - e.mean_importance) / static_cast<double>(e.batches);
}

void ImportanceLedger::accumulate_ranks(std::size_t index, const PeftModule& module, std::span<const double> scores) {
  LedgerEntry& e = entries.at(index);
  if (scores.size() != module.active_rank()) {
    throw ContractError("rank score count does not match active ranks of " + module_name(module));
  }
  for (std::size_t k = 0; k < scores.size(); ++k) e.rank_importance.at(module.active_ranks[k]) += scores[k];
}

double module_importance_lora(const Tensor& x, const PeftModule& module, const Tensor& frozen_weight) {
  NoGradGuard no_grad;
  const double num = l2_norm(lora_delta(x, module));
  const double den = l2_norm(matmul(x, frozen_weight));
  return num / std::max(den, kNormGuard);
}

double module_importance_adapter(const Tensor& h, const PeftModule& module, Activation f) {
  if (module.kind != PeftKind::adapter) throw ContractError("module_importance_adapter on " + module_name(module));
  NoGradGuard no_grad;
  const double num = l2_norm(matmul(activation(matmul(h, module.w_down), f), module.w_up));
  return num / std::max(l2_norm(h), kNormGuard);
}

ParamImportance rank_param_importance(const PeftModule& module) {
  if (!module.w_down.has_grad() || !module.w_up.has_grad()) {
    throw ContractError("no gradient available for " + module_name(module));
  }
  ParamImportance out;
  const auto taylor = [](const Tensor& w) {
    std::vector<double> s(w.numel());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = std::abs(w.grad()[i] * w.data()[i]);
    return s;
  };
  out.down = taylor(module.w_down);
  out.up = taylor(module.w_up);
  return out;
}

std::vector<double> rank_importance(const PeftModule& module) {
  const ParamImportance p = rank_param_importance(module);
  const std::size_t r = module.active_rank();
  const std::size_t d_in = module.d_in();
  const std::size_t d_out = module.d_out();
  std::vector<double> scores(r, 0.0);
  for (std::size_t i = 0; i < d_in; ++i) {
    for (std::size_t k = 0; k < r; ++k) scores[k] += p.down[i * r + k];
  }
  for (std::size_t k = 0; k < r; ++k) {
    for (std::size_t j = 0; j < d_out; ++j) scores[k] += p.up[k * d_out + j];
  }
  return scores;
}

std::vector<std::size_t> select_modules(const ImportanceLedger& ledger, double rate) {
  const std::size_t n = ledger.entries.size();
  const std::size_t drop = drop_count(rate, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  // Ledger order is (layer, site) order, so a stable sort breaks ties there.
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return ledger.entries[a].mean_importance < ledger.entries[b].mean_importance;
  });
  std::vector<std::size_t> kept(order.begin() + static_cast<std::ptrdiff_t>(drop), order.end());
  std::sort(kept.begin(), kept.end());
  return kept;
}

RankSelection select_ranks(const ImportanceLedger& ledger, const std::vector<std::size_t>& kept_modules, double rate) {
  struct Entry {
    double score;
    std::size_t slot;  // position in kept_modules
    std::size_t rank;
  };
  std::vector<Entry> pool;
  for (std::size_t s = 0; s < kept_modules.size(); ++s) {
    const auto& ranks = ledger.entries.at(kept_modules[s]).rank_importance;
    for (std::size_t k = 0; k < ranks.size(); ++k) pool.push_back({ranks[k], s, k});
  }
  const std::size_t drop = drop_count(rate, pool.size());
  std::stable_sort(pool.begin(), pool.end(), [](const Entry& a, const Entry& b) {
    return std::tie(a.score, a.slot, a.rank) < std::tie(b.score, b.slot, b.rank);
  });
  RankSelection sel;
  sel.keep.resize(kept_modules.size());
  for (std::size_t i = drop; i < pool.size(); ++i) sel.keep[pool[i].slot].push_back(pool[i].rank);
  for (std::size_t s = 0; s < kept_modules.size(); ++s) {
    auto& keep = sel.keep[s];
    const LedgerEntry& e = ledger.entries[kept_modules[s]];
    if (keep.empty() && !e.rank_importance.empty()) {
      const auto best = static_cast<std::size_t>(
          std::max_element(e.rank_importance.begin(), e.rank_importance.end()) - e.rank_importance.begin());
      keep.push_back(best);
      ++sel.forced;
      sel.warnings.push_back("rank pruning would empty " + to_string(e.kind) + " module at layer " +
                             std::to_string(e.attach.layer) + " site " + to_string(e.attach.site) +
                             "; forced keep of rank " + std::to_string(best));
    }
    std::sort(keep.begin(), keep.end());
  }
  return sel;
}

}  // namespace lightpeft
