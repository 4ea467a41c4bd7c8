#pragma once

#include <cstddef>
#include <vector>

#include "lightpeft/transformer.hpp"

namespace lightpeft {

// Keep-sets produced by estimation. Head and FFN indices are in the dense
// model's indexing; module ids index the estimation set (ordered by layer,
// then site); kept_ranks[i] lists original rank indices for kept_modules[i].
struct PruningPlan {
  std::vector<std::vector<std::size_t>> heads;
  std::vector<std::vector<std::size_t>> ffn;
  std::vector<std::size_t> kept_modules;
  std::vector<std::vector<std::size_t>> kept_ranks;

  // Keeps every head/FFN dimension; module sections left empty.
  static PruningPlan keep_all(const ModelConfig& config);
  static PruningPlan from_layout(const HeadLayout& layout);

  HeadLayout foundation_layout() const { return HeadLayout{heads, ffn}; }
  bool operator==(const PruningPlan&) const = default;
};

}  // namespace lightpeft
