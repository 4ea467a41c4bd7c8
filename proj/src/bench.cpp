#include "lightpeft/bench.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>

#include "lightpeft/errors.hpp"

namespace lightpeft {

std::string to_string(BenchMode mode) {
  switch (mode) {
    case BenchMode::model_size: return "model-size";
    case BenchMode::rank_sweep: return "rank-sweep";
    case BenchMode::module_count_sweep: return "module-count-sweep";
    case BenchMode::pruned_vs_dense: return "pruned-vs-dense";
  }
  return "?";
}

BenchMode parse_bench_mode(const std::string& text) {
  if (text == "model-size") return BenchMode::model_size;
  if (text == "rank-sweep") return BenchMode::rank_sweep;
  if (text == "module-count-sweep") return BenchMode::module_count_sweep;
  if (text == "pruned-vs-dense") return BenchMode::pruned_vs_dense;
  throw ConfigError("unknown bench mode '" + text +
                    "' (expected model-size, rank-sweep, module-count-sweep or pruned-vs-dense)");
}

namespace {

using Clock = std::chrono::steady_clock;

double elapsed(Clock::time_point a, Clock::time_point b) { return std::chrono::duration<double>(b - a).count(); }

std::pair<double, double> mean_std(const std::vector<double>& v) {
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return {mean, v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0};
}

std::int64_t weight_bytes(const BenchArm& arm) {
  std::size_t n = 0;
  for (const Tensor& t : arm.model.foundation_parameters()) n += t.numel();
  for (const Tensor& t : arm.model.classifier_parameters()) n += t.numel();
  n += arm.peft.param_count();
  return static_cast<std::int64_t>(n * sizeof(double));
}

// One repetition of one arm: `batches` training steps, with forward and
// backward timed separately. Returns the accounted peak above the bytes that
// were live before the arm started, i.e. grads, optimizer state and tape.
std::int64_t run_once(BenchArm& arm, const std::vector<TokenBatch>& batches, double& fwd, double& bwd) {
  const std::int64_t live0 = MemoryStats::live_bytes();
  MemoryStats::reset_peak();
  std::vector<ParamGroup> groups;
  for (const Tensor& t : arm.peft.parameters()) groups.push_back({t, true});
  for (const Tensor& t : arm.model.classifier_parameters()) groups.push_back({t, false});
  {
    AdamW opt(groups, AdamWConfig{});
    fwd = 0.0;
    bwd = 0.0;
    for (const TokenBatch& batch : batches) {
      opt.clear_grads();
      const auto t0 = Clock::now();
      Tensor loss = softmax_ce_loss(model_forward(arm.model, batch, ForwardContext{nullptr, &arm.peft, nullptr}),
                                    batch.labels);
      const auto t1 = Clock::now();
      backward(loss);
      const auto t2 = Clock::now();
      fwd += elapsed(t0, t1);
      bwd += elapsed(t1, t2);
      opt.step(1e-3);
    }
    opt.clear_grads();
  }
  return MemoryStats::peak_bytes() - live0;
}

PeftSet attach_sites(const FoundationModel& model, const std::vector<Site>& sites, std::size_t rank,
                     std::uint64_t seed) {
  std::vector<AttachPoint> points;
  for (std::size_t l = 0; l < model.config.layers; ++l) {
    for (Site s : sites) points.push_back({l, s});
  }
  Rng rng(Rng::mix(seed, 0x9ef7));
  PeftConfig pc;
  pc.rank = rank;
  return attach_at(model, points, pc, rng);
}

// Gives the zero-initialized up-projections some weight so the timed
// backward pass sees a realistic graph.
void perturb(PeftSet& peft, std::uint64_t seed) {
  Rng rng(Rng::mix(seed, 0xbe4c));
  for (PeftModule& m : peft.modules) {
    for (double& v : m.w_up.mutable_data()) v = 0.01 * rng.normal();
  }
}

const std::vector<Site> kAllLora = {Site::q, Site::k, Site::v, Site::o, Site::fc1, Site::fc2};

}  // namespace

std::vector<BenchRow> measure_arms(std::vector<BenchArm>& arms, const std::vector<TokenBatch>& batches,
                                   std::size_t repetitions) {
  if (arms.empty()) throw ContractError("bench needs at least one arm");
  if (repetitions == 0 || batches.empty()) throw ContractError("bench needs at least one repetition and batch");
  std::vector<BenchRow> rows(arms.size());
  std::vector<std::int64_t> peak(arms.size(), 0);
  // Untimed warm-up so the first arm does not pay for cold caches.
  {
    double f = 0.0, b = 0.0;
    run_once(arms.front(), {batches.front()}, f, b);
  }
  for (std::size_t rep = 0; rep < repetitions; ++rep) {
    for (std::size_t i = 0; i < arms.size(); ++i) {
      double f = 0.0, b = 0.0;
      peak[i] = std::max(peak[i], run_once(arms[i], batches, f, b));
      rows[i].forward_seconds.push_back(f);
      rows[i].backward_seconds.push_back(b);
    }
  }
  for (std::size_t i = 0; i < arms.size(); ++i) {
    BenchRow& r = rows[i];
    r.label = arms[i].label;
    r.training_bytes = weight_bytes(arms[i]) + peak[i];
    r.params = count_params(arms[i].model, &arms[i].peft);
    std::tie(r.forward_mean, r.forward_stddev) = mean_std(r.forward_seconds);
    std::tie(r.backward_mean, r.backward_stddev) = mean_std(r.backward_seconds);
    r.forward_speedup = rows[0].forward_mean / r.forward_mean;
    r.backward_speedup = rows[0].backward_mean / r.backward_mean;
    r.memory_ratio = static_cast<double>(r.training_bytes) / static_cast<double>(rows[0].training_bytes);
  }
  return rows;
}

std::vector<BenchArm> bench_arms(const RunConfig& raw, BenchMode mode, const BenchOptions& options) {
  const RunConfig cfg = raw.resolved();
  const std::uint64_t seed = cfg.train.seed;
  const std::size_t rank = cfg.peft.rank;
  std::vector<BenchArm> arms;
  auto add = [&](std::string label, FoundationModel model, PeftSet peft) {
    perturb(peft, seed);
    arms.push_back({std::move(label), std::move(model), std::move(peft)});
  };
  switch (mode) {
    case BenchMode::model_size: {
      // Depth and width scaled together from the configured shape.
      for (std::size_t k : {1, 2, 3}) {
        ModelConfig mc = cfg.model;
        mc.layers = cfg.model.layers * k / 2 > 0 ? cfg.model.layers * k / 2 : 1;
        mc.hidden = cfg.model.hidden * k / 2 > 0 ? cfg.model.hidden * k / 2 : cfg.model.heads;
        mc.hidden -= mc.hidden % mc.heads;
        mc.ffn_dim = 2 * mc.hidden;
        FoundationModel m = FoundationModel::init(mc, seed);
        PeftSet p = attach_sites(m, kAllLora, rank, seed);
        add("L=" + std::to_string(mc.layers) + ",d=" + std::to_string(mc.hidden), std::move(m), std::move(p));
      }
      break;
    }
    case BenchMode::rank_sweep: {
      FoundationModel m = FoundationModel::init(cfg.model, seed);
      for (std::size_t r : {8, 16, 32}) {
        add("r=" + std::to_string(r), m.clone(), attach_sites(m, kAllLora, r, seed));
      }
      break;
    }
    case BenchMode::module_count_sweep: {
      // Q,K,V,O all have d x d hosts, so 4r on one site matches r on four.
      FoundationModel m = FoundationModel::init(cfg.model, seed);
      add("Q r=" + std::to_string(4 * rank), m.clone(), attach_sites(m, {Site::q}, 4 * rank, seed));
      add("Q,K r=" + std::to_string(2 * rank), m.clone(), attach_sites(m, {Site::q, Site::k}, 2 * rank, seed));
      add("Q,K,V,O r=" + std::to_string(rank), m.clone(),
          attach_sites(m, {Site::q, Site::k, Site::v, Site::o}, rank, seed));
      break;
    }
    case BenchMode::pruned_vs_dense: {
      FoundationModel dense = FoundationModel::init(cfg.model, seed);
      PeftSet peft = attach_sites(dense, kAllLora, rank, seed);
      TrainConfig tc = cfg.train;
      tc.rho_heads = options.prune_heads;
      tc.rho_ffn = options.prune_ffn;
      // Without estimation every score ties, so selection falls back to index order.
      const MaskSet masks = MaskSet::ones(dense, false);
      PruneResult pruned = prune_all(dense, peft, masks, ImportanceLedger::for_set(peft), tc);
      add("dense", std::move(dense), std::move(peft));
      add("pruned", std::move(pruned.model), std::move(pruned.peft));
      break;
    }
  }
  return arms;
}

BenchResult run_bench(const RunConfig& raw, BenchMode mode, const BenchOptions& options) {
  const RunConfig cfg = raw.resolved();
  std::vector<BenchArm> arms = bench_arms(cfg, mode, options);
  const TaskData data = generate(cfg.task);
  BatchStream stream(data.train, cfg.train.batch_size, Rng::mix(cfg.train.seed, 0xba7c));
  std::vector<TokenBatch> batches;
  for (std::size_t i = 0; i < options.batches; ++i) batches.push_back(stream.next());
  BenchResult result;
  result.mode = mode;
  result.rows = measure_arms(arms, batches, options.repetitions);
  return result;
}

void write_bench(const BenchResult& result, std::ostream& out, ReportFormat format) {
  const bool tsv = format == ReportFormat::tsv;
  const char* cols[] = {"arm", "foundation_params", "peft_params", "time.fwd_s", "time.fwd_sd",
                        "time.bwd_s", "time.bwd_sd", "time.fwd_speedup", "time.bwd_speedup",
                        "train_bytes", "mem_ratio"};
  auto cell = [&](const auto& v, int width) {
    if (tsv) {
      out << v;
    } else {
      out << std::left << std::setw(width) << v;
    }
  };
  out << "# mode " << to_string(result.mode) << '\n';
  for (std::size_t i = 0; i < std::size(cols); ++i) {
    if (tsv && i) out << '\t';
    cell(cols[i], i == 0 ? 16 : 18);
  }
  out << '\n' << std::setprecision(5);
  for (const BenchRow& r : result.rows) {
    cell(r.label, 16);
    auto next = [&](const auto& v) {
      if (tsv) out << '\t';
      cell(v, 18);
    };
    next(r.params.foundation);
    next(r.params.peft);
    next(r.forward_mean);
    next(r.forward_stddev);
    next(r.backward_mean);
    next(r.backward_stddev);
    next(r.forward_speedup);
    next(r.backward_speedup);
    next(r.training_bytes);
    next(r.memory_ratio);
    out << '\n';
  }
}

}  // namespace lightpeft
