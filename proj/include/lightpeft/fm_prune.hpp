#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "lightpeft/tensor.hpp"
#include "lightpeft/transformer.hpp"

namespace lightpeft {

// Trainable scalar gates: one per head (m_A) and one per FFN intermediate
// dimension (m_F), per layer. Values are never clamped.
struct MaskSet {
  std::vector<Tensor> head;
  std::vector<Tensor> ffn;

  // All ones, sized to the model's current layout.
  static MaskSet ones(const FoundationModel& model, bool requires_grad = true);

  std::vector<Tensor> parameters() const;
  std::size_t count() const;
  MaskSet clone() const;
};

struct MaskPenaltyConfig {
  double lambda_heads = 1e-4;
  double lambda_ffn = 1e-4;
};

// task_loss + lambda_A * sum|m_A| + lambda_F * sum|m_F| over all layers.
Tensor mask_loss(const Tensor& task_loss, const MaskSet& masks, const MaskPenaltyConfig& cfg);

struct Selection {
  // Per layer, positions into the mask vector that survive, ascending.
  std::vector<std::vector<std::size_t>> keep;
  // Human-readable notes about forced keeps.
  std::vector<std::string> warnings;
};

// Number of units dropped for a rate; floor with a tolerance of 1e-9 so that
// exact fractions such as 1/3 of 98304 are not lost to rounding.
std::size_t drop_count(double rate, std::size_t total);

// Layer-wise: each layer drops its floor(rate * heads) smallest |m_A|; lower
// index dropped first on ties.
Selection select_heads(const MaskSet& masks, double rate);

// Global over all layers' |m_F|; ties broken by (layer, dim). A layer the cut
// would empty keeps its largest entry and a warning is recorded.
Selection select_ffn_dims(const MaskSet& masks, double rate);

}  // namespace lightpeft
