#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "lightpeft/pipeline.hpp"

namespace lightpeft {

enum class BenchMode { model_size, rank_sweep, module_count_sweep, pruned_vs_dense };

std::string to_string(BenchMode mode);
BenchMode parse_bench_mode(const std::string& text);

struct BenchOptions {
  std::size_t batches = 10;      // timings are sums over this many batches
  std::size_t repetitions = 3;   // arms are interleaved within each repetition
  double prune_heads = 0.5;      // pruned-vs-dense foundation rates
  double prune_ffn = 0.5;
};

// One configuration under test. The first arm of a bench is the reference
// for the ratio columns.
struct BenchArm {
  std::string label;
  FoundationModel model;
  PeftSet peft;
};

struct BenchRow {
  std::string label;
  std::vector<double> forward_seconds;   // one 10-batch sum per repetition
  std::vector<double> backward_seconds;
  std::int64_t training_bytes = 0;       // weights + peak of grads, optimizer state, activations
  ParamCounts params;
  double forward_mean = 0.0, forward_stddev = 0.0;
  double backward_mean = 0.0, backward_stddev = 0.0;
  double forward_speedup = 1.0;   // reference forward time / this arm's
  double backward_speedup = 1.0;
  double memory_ratio = 1.0;      // this arm's bytes / reference bytes
};

struct BenchResult {
  BenchMode mode = BenchMode::model_size;
  std::vector<BenchRow> rows;
};

// Times forward and backward passes of every arm on the same batches.
std::vector<BenchRow> measure_arms(std::vector<BenchArm>& arms, const std::vector<TokenBatch>& batches,
                                   std::size_t repetitions);

std::vector<BenchArm> bench_arms(const RunConfig& config, BenchMode mode, const BenchOptions& options);
BenchResult run_bench(const RunConfig& config, BenchMode mode, const BenchOptions& options = {});

void write_bench(const BenchResult& result, std::ostream& out, ReportFormat format);

}  // namespace lightpeft
