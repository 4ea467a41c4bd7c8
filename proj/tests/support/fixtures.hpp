#pragma once

#include <cstdint>
#include <vector>

#include "lightpeft/batch.hpp"
#include "lightpeft/fm_prune.hpp"
#include "lightpeft/peft.hpp"
#include "lightpeft/pipeline.hpp"
#include "lightpeft/rng.hpp"
#include "lightpeft/tensor.hpp"
#include "lightpeft/transformer.hpp"

namespace lptest {

// Uniform entries in [lo, hi].
lightpeft::Tensor random_tensor(lightpeft::Shape shape, lightpeft::Rng& rng, bool requires_grad = true,
                                double lo = -2.0, double hi = 2.0);

// Small encoder for gradient and equivalence checks.
lightpeft::ModelConfig tiny_config(std::size_t layers = 2, std::size_t hidden = 8, std::size_t heads = 2,
                                   std::size_t ffn = 12);

lightpeft::TokenBatch random_batch(const lightpeft::ModelConfig& cfg, std::size_t batch, std::size_t seq,
                                   lightpeft::Rng& rng);

// Masks with entries drawn uniformly from [lo, hi].
lightpeft::MaskSet random_masks(const lightpeft::FoundationModel& model, lightpeft::Rng& rng, double lo = 0.2,
                                double hi = 1.5, bool requires_grad = false);

// Fills every PEFT factor with small random values so deltas are nonzero.
void randomize_peft(lightpeft::PeftSet& peft, lightpeft::Rng& rng, double scale = 0.3);

// A quick end-to-end configuration (a few seconds per run).
lightpeft::RunConfig quick_run_config(lightpeft::TaskKind kind = lightpeft::TaskKind::pattern_match,
                                      std::uint64_t seed = 7);

double max_abs_diff(const lightpeft::Tensor& a, const lightpeft::Tensor& b);

}  // namespace lptest
