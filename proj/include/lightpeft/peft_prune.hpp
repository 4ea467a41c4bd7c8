#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "lightpeft/peft.hpp"
#include "lightpeft/tensor.hpp"

namespace lightpeft {

struct LedgerEntry {
  AttachPoint attach;
  PeftKind kind = PeftKind::lora;
  std::size_t batches = 0;
  double mean_importance = 0.0;          // running mean of I_M
  std::vector<double> rank_importance;  // summed I_R, indexed by original rank

  bool operator==(const LedgerEntry&) const = default;
};

// Importance statistics gathered during estimation, one entry per attached
// module in attachment order.
struct ImportanceLedger {
  std::vector<LedgerEntry> entries;
  std::size_t steps_observed = 0;

  static ImportanceLedger for_set(const PeftSet& peft);

  void observe_module(std::size_t index, double importance);
  // Adds per-active-rank scores of `module` (ledger entry `index`).
  void accumulate_ranks(std::size_t index, const PeftModule& module, std::span<const double> scores);

  bool operator==(const ImportanceLedger&) const = default;
};

// ||s x W_down W_up||_2 / ||x W||_2 over all rows of x; denominator guarded by 1e-12.
double module_importance_lora(const Tensor& x, const PeftModule& module, const Tensor& frozen_weight);

// ||f(h W_down) W_up||_2 / ||h||_2, guarded likewise.
double module_importance_adapter(const Tensor& h, const PeftModule& module, Activation f);

// First-order Taylor scores |dL/dW * W| for both factors (same layout as the weights).
struct ParamImportance {
  std::vector<double> down;  // [d_in, active]
  std::vector<double> up;    // [active, d_out]
};

// Requires gradients on both factors; throws ContractError naming the module otherwise.
ParamImportance rank_param_importance(const PeftModule& module);

// Per active rank k: sum of column k of the W_down scores and row k of the W_up scores.
std::vector<double> rank_importance(const PeftModule& module);

// Drops the floor(rate * count) modules with the smallest mean I_M; ties go to
// the earlier (layer, site). Returns surviving ledger indices, ascending.
std::vector<std::size_t> select_modules(const ImportanceLedger& ledger, double rate);

struct RankSelection {
  std::vector<std::vector<std::size_t>> keep;  // parallel to the kept module list
  std::vector<std::string> warnings;
  std::size_t forced = 0;
};

// Global cut over the (module, rank) pairs of the surviving modules by summed
// I_R; ties go to the earlier (module, rank). A module left with no ranks
// keeps its highest-scoring one and the event is reported.
RankSelection select_ranks(const ImportanceLedger& ledger, const std::vector<std::size_t>& kept_modules, double rate);

}  // namespace lightpeft
