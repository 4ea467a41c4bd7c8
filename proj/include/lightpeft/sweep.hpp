#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "lightpeft/pipeline.hpp"

namespace lightpeft {

// rho: sets both foundation rates (rho_a, rho_f).
// t_prime: estimation steps as a fraction of total steps.
// lambda: sets both mask penalties.
enum class SweepAxis { rho, t_prime, lambda };

std::string to_string(SweepAxis axis);
SweepAxis parse_sweep_axis(const std::string& text);

struct SweepRow {
  double value = 0.0;
  std::vector<double> accuracies;  // one per seed
  double accuracy = 0.0;           // mean over seeds
  double foundation_retention = 1.0;
  double trainable_retention = 1.0;
  double mean_head_mask = 1.0;
  double mean_ffn_mask = 1.0;
  double seconds = 0.0;
};

struct SweepResult {
  SweepAxis axis = SweepAxis::rho;
  std::vector<SweepRow> rows;
};

RunConfig apply_sweep_value(const RunConfig& base, SweepAxis axis, double value);

// Runs the full pipeline once per (value, seed); seeds are base.seed + k.
SweepResult run_sweep(const RunConfig& base, SweepAxis axis, const std::vector<double>& values,
                      std::size_t seeds = 1);

void write_sweep(const SweepResult& result, std::ostream& out, ReportFormat format);

}  // namespace lightpeft
