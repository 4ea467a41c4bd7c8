#include "lightpeft/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "lightpeft/artifact_io.hpp"
#include "lightpeft/errors.hpp"

namespace lightpeft {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void check_rate(double rate, const char* name) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError(std::string(name) + " must lie in [0, 1)");
}

std::vector<ParamGroup> trainable_groups(const FoundationModel& model, const PeftSet& peft, const MaskSet* masks) {
  std::vector<ParamGroup> groups;
  for (const Tensor& t : peft.parameters()) groups.push_back({t, true});
  if (masks) {
    for (const Tensor& t : masks->parameters()) groups.push_back({t, false});
  }
  groups.push_back({model.classifier_weight, true});
  groups.push_back({model.classifier_bias, false});
  return groups;
}

double mean_abs(const std::vector<Tensor>& tensors) {
  double total = 0.0;
  std::size_t n = 0;
  for (const Tensor& t : tensors) {
    for (double v : t.data()) total += std::abs(v);
    n += t.numel();
  }
  return n ? total / static_cast<double>(n) : 0.0;
}

}  // namespace

void TrainConfig::validate() const {
  if (total_steps == 0) throw ConfigError("total_steps must be positive");
  if (estimation_steps >= total_steps) throw ConfigError("estimation_steps must be smaller than total_steps");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(lr_estimation > 0.0) || !(lr_finetune > 0.0)) throw ConfigError("learning rates must be positive");
  if (!(adamw.beta1 >= 0.0 && adamw.beta1 < 1.0)) throw ConfigError("beta1 must lie in [0, 1)");
  if (!(adamw.beta2 >= 0.0 && adamw.beta2 < 1.0)) throw ConfigError("beta2 must lie in [0, 1)");
  if (!(adamw.eps > 0.0)) throw ConfigError("eps must be positive");
  if (adamw.weight_decay < 0.0) throw ConfigError("weight_decay must be nonnegative");
  if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) throw ConfigError("warmup_fraction must lie in [0, 1]");
  check_rate(rho_heads, "rho_a");
  check_rate(rho_ffn, "rho_f");
  check_rate(rho_modules, "rho_m");
  check_rate(rho_ranks, "rho_r");
  if (penalty.lambda_heads < 0.0) throw ConfigError("lambda_a must be nonnegative");
  if (penalty.lambda_ffn < 0.0) throw ConfigError("lambda_f must be nonnegative");
}

RunConfig RunConfig::resolved() const {
  RunConfig r = *this;
  r.model.vocab_size = task.vocab_size;
  r.model.max_seq = task.seq_len;
  r.model.num_classes = task.num_classes;
  r.task.seed = train.seed;
  r.model.validate();
  r.task.validate();
  r.train.validate();
  if (r.peft.rank == 0) throw ConfigError("rank must be positive");
  return r;
}

EstimationResult estimate(FoundationModel& model, PeftSet& peft, MaskSet& masks, BatchStream& batches,
                          const TrainConfig& cfg, std::size_t steps) {
  EstimationResult result;
  result.ledger = ImportanceLedger::for_set(peft);
  const auto start = Clock::now();
  AdamW opt(trainable_groups(model, peft, &masks), cfg.adamw);
  ModuleProbe probe;
  for (std::size_t step = 0; step < steps; ++step) {
    const TokenBatch batch = batches.next();
    opt.clear_grads();
    Tensor logits = model_forward(model, batch, ForwardContext{&masks, &peft, &probe});
    Tensor loss = mask_loss(softmax_ce_loss(logits, batch.labels), masks, cfg.penalty);
    backward(loss);
    for (std::size_t i = 0; i < peft.modules.size(); ++i) {
      if (probe.observed[i]) result.ledger.observe_module(i, probe.importance[i]);
      result.ledger.accumulate_ranks(i, peft.modules[i], rank_importance(peft.modules[i]));
    }
    ++result.ledger.steps_observed;
    opt.step(warmup_lr(cfg.lr_estimation, step, steps, cfg.warmup_fraction));
    result.stats.losses.push_back(loss.item());
  }
  opt.clear_grads();
  result.stats.steps = steps;
  result.stats.seconds = seconds_since(start);
  return result;
}

PruneResult prune_all(const FoundationModel& model, const PeftSet& peft, const MaskSet& masks,
                      const ImportanceLedger& ledger, const TrainConfig& cfg) {
  if (ledger.entries.size() != peft.modules.size()) {
    throw ContractError("ledger covers " + std::to_string(ledger.entries.size()) + " modules but " +
                        std::to_string(peft.modules.size()) + " are attached");
  }
  PruneResult out;
  const Selection heads = select_heads(masks, cfg.rho_heads);
  const Selection ffn = select_ffn_dims(masks, cfg.rho_ffn);
  out.warnings = ffn.warnings;
  for (std::size_t l = 0; l < model.config.layers; ++l) {
    std::vector<std::size_t> h;
    for (std::size_t pos : heads.keep[l]) h.push_back(model.layout.heads[l][pos]);
    std::vector<std::size_t> f;
    for (std::size_t pos : ffn.keep[l]) f.push_back(model.layout.ffn[l][pos]);
    out.plan.heads.push_back(std::move(h));
    out.plan.ffn.push_back(std::move(f));
  }
  out.model = materialize(model, out.plan, &masks);
  const PeftSet sliced = reslice_for_layout(peft, model.layout, out.plan, model.config.head_dim(), &masks);

  out.plan.kept_modules = select_modules(ledger, cfg.rho_modules);
  const RankSelection ranks = select_ranks(ledger, out.plan.kept_modules, cfg.rho_ranks);
  out.plan.kept_ranks = ranks.keep;
  out.warnings.insert(out.warnings.end(), ranks.warnings.begin(), ranks.warnings.end());
  for (std::size_t i = 0; i < out.plan.kept_modules.size(); ++i) {
    out.peft.modules.push_back(shrink_ranks(sliced.modules[out.plan.kept_modules[i]], ranks.keep[i]));
  }
  return out;
}

PhaseStats finetune(FoundationModel& model, PeftSet& peft, BatchStream& batches, const TrainConfig& cfg,
                    std::size_t steps, double lr) {
  PhaseStats stats;
  const auto start = Clock::now();
  AdamW opt(trainable_groups(model, peft, nullptr), cfg.adamw);
  for (std::size_t step = 0; step < steps; ++step) {
    const TokenBatch batch = batches.next();
    opt.clear_grads();
    Tensor loss = softmax_ce_loss(model_forward(model, batch, ForwardContext{nullptr, &peft, nullptr}), batch.labels);
    backward(loss);
    opt.step(warmup_lr(lr, step, steps, cfg.warmup_fraction));
    stats.losses.push_back(loss.item());
  }
  opt.clear_grads();
  stats.steps = steps;
  stats.seconds = seconds_since(start);
  return stats;
}

std::vector<double> predict_logits(const FoundationModel& model, const PeftSet* peft, const Dataset& data) {
  if (data.size() == 0) throw DataError("cannot evaluate on an empty dataset");
  NoGradGuard no_grad;
  constexpr std::size_t kChunk = 256;
  std::vector<double> logits;
  logits.reserve(data.size() * model.config.num_classes);
  for (std::size_t begin = 0; begin < data.size(); begin += kChunk) {
    const TokenBatch batch = data.slice(begin, std::min(data.size(), begin + kChunk));
    const Tensor out = model_forward(model, batch, ForwardContext{nullptr, peft, nullptr});
    logits.insert(logits.end(), out.data().begin(), out.data().end());
  }
  return logits;
}

double evaluate(const FoundationModel& model, const PeftSet* peft, const Dataset& data) {
  const std::vector<double> logits = predict_logits(model, peft, data);
  const std::size_t classes = model.config.num_classes;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double* row = logits.data() + i * classes;
    const auto pred = static_cast<int>(std::max_element(row, row + classes) - row);
    if (pred == data.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

namespace {

std::uint64_t stream_seed(std::uint64_t seed) { return Rng::mix(seed, 0xba7c); }

}  // namespace

RunArtifacts run_light_peft(const RunConfig& raw) {
  const RunConfig cfg = raw.resolved();
  const TrainConfig& tc = cfg.train;
  RunArtifacts out{FoundationModel::init(cfg.model, tc.seed), {}, {}, {}, {}, generate(cfg.task), {}};
  RunReport& report = out.report;
  report.config = cfg;
  report.mode = "light-peft";

  FoundationModel model = out.base.clone();
  Rng peft_rng(Rng::mix(tc.seed, 0x9ef7));
  PeftSet peft = attach_estimation_set(model, cfg.peft, peft_rng);
  MaskSet masks = MaskSet::ones(model);
  report.before = count_params(model, &peft, &masks);
  BatchStream batches(out.data.train, tc.batch_size, stream_seed(tc.seed));
  if (out.data.train.size() < tc.batch_size) {
    throw DataError("training split of " + std::to_string(out.data.train.size()) +
                    " samples is smaller than one batch of " + std::to_string(tc.batch_size));
  }

  if (tc.estimation_steps == 0) report.warnings.push_back("estimation skipped; tie-break selection");
  EstimationResult est = estimate(model, peft, masks, batches, tc, tc.estimation_steps);
  report.estimation = est.stats;
  report.mean_head_mask = mean_abs(masks.head);
  report.mean_ffn_mask = mean_abs(masks.ffn);

  PruneResult pruned = prune_all(model, peft, masks, est.ledger, tc);
  report.warnings.insert(report.warnings.end(), pruned.warnings.begin(), pruned.warnings.end());
  report.plan = pruned.plan;

  report.finetuning =
      finetune(pruned.model, pruned.peft, batches, tc, tc.total_steps - tc.estimation_steps, tc.lr_finetune);
  report.after = count_params(pruned.model, &pruned.peft);
  report.foundation_retention =
      static_cast<double>(report.after.foundation) / static_cast<double>(report.before.foundation);
  report.trainable_retention =
      static_cast<double>(report.after.peft) / static_cast<double>(std::max<std::size_t>(report.before.peft, 1));

  const auto eval_start = Clock::now();
  report.accuracy = evaluate(pruned.model, &pruned.peft, out.data.eval);
  report.eval_seconds = seconds_since(eval_start);

  out.model = std::move(pruned.model);
  out.peft = std::move(pruned.peft);
  out.masks = std::move(masks);
  out.ledger = std::move(est.ledger);
  return out;
}

RunArtifacts run_lora_baseline(const RunConfig& raw) {
  RunConfig cfg = raw.resolved();
  cfg.peft.kind = PeftKind::lora;
  const TrainConfig& tc = cfg.train;
  RunArtifacts out{FoundationModel::init(cfg.model, tc.seed), {}, {}, {}, {}, generate(cfg.task), {}};
  RunReport& report = out.report;
  report.config = cfg;
  report.mode = "lora-baseline";

  FoundationModel model = out.base.clone();
  Rng peft_rng(Rng::mix(tc.seed, 0x9ef7));
  PeftSet peft = attach_estimation_set(model, cfg.peft, peft_rng);
  report.before = count_params(model, &peft);
  BatchStream batches(out.data.train, tc.batch_size, stream_seed(tc.seed));
  report.finetuning = finetune(model, peft, batches, tc, tc.total_steps, tc.lr_finetune);
  report.after = report.before;
  report.plan = PruningPlan::keep_all(cfg.model);
  for (std::size_t i = 0; i < peft.modules.size(); ++i) {
    report.plan.kept_modules.push_back(i);
    report.plan.kept_ranks.push_back(peft.modules[i].active_ranks);
  }
  const auto eval_start = Clock::now();
  report.accuracy = evaluate(model, &peft, out.data.eval);
  report.eval_seconds = seconds_since(eval_start);
  out.model = std::move(model);
  out.peft = std::move(peft);
  return out;
}

namespace {

double tail_mean(const std::vector<double>& v, std::size_t n) {
  if (v.empty()) return 0.0;
  n = std::min(n, v.size());
  double s = 0.0;
  for (std::size_t i = v.size() - n; i < v.size(); ++i) s += v[i];
  return s / static_cast<double>(n);
}

std::string join_sizes(const std::vector<std::vector<std::size_t>>& sets) {
  std::ostringstream os;
  for (std::size_t i = 0; i < sets.size(); ++i) os << (i ? "," : "") << sets[i].size();
  return os.str();
}

}  // namespace

void write_report(const RunReport& r, std::ostream& out, ReportFormat format) {
  std::vector<std::pair<std::string, std::string>> rows;
  auto put = [&rows](const std::string& key, const auto& value) {
    std::ostringstream os;
    os << std::setprecision(10) << value;
    rows.emplace_back(key, os.str());
  };
  put("mode", r.mode);
  std::ostringstream cfg_text;
  write_config(r.config, cfg_text);
  std::istringstream cfg_lines(cfg_text.str());
  for (std::string line; std::getline(cfg_lines, line);) {
    const auto eq = line.find(" = ");
    if (eq != std::string::npos) rows.emplace_back("config." + line.substr(0, eq), line.substr(eq + 3));
  }
  put("estimation.steps", r.estimation.steps);
  put("estimation.final_loss", tail_mean(r.estimation.losses, 10));
  put("estimation.mean_abs_head_mask", r.mean_head_mask);
  put("estimation.mean_abs_ffn_mask", r.mean_ffn_mask);
  put("plan.heads_per_layer", join_sizes(r.plan.heads));
  put("plan.ffn_dims_per_layer", join_sizes(r.plan.ffn));
  put("plan.kept_modules", r.plan.kept_modules.size());
  std::size_t ranks = 0;
  for (const auto& k : r.plan.kept_ranks) ranks += k.size();
  put("plan.kept_ranks", ranks);
  put("params.foundation_before", r.before.foundation);
  put("params.foundation_after", r.after.foundation);
  put("params.foundation_retention", r.foundation_retention);
  put("params.trainable_before", r.before.trainable());
  put("params.peft_after", r.after.peft);
  put("params.trainable_retention", r.trainable_retention);
  put("params.classifier", r.after.classifier);
  put("finetune.steps", r.finetuning.steps);
  put("finetune.final_loss", tail_mean(r.finetuning.losses, 10));
  put("eval.accuracy", r.accuracy);
  for (std::size_t i = 0; i < r.warnings.size(); ++i) put("warning." + std::to_string(i), r.warnings[i]);
  put("time.estimation_seconds", r.estimation.seconds);
  put("time.finetune_seconds", r.finetuning.seconds);
  put("time.eval_seconds", r.eval_seconds);

  for (const auto& [key, value] : rows) {
    if (format == ReportFormat::tsv) {
      out << key << '\t' << value << '\n';
    } else {
      out << std::left << std::setw(34) << key << ' ' << value << '\n';
    }
  }
}

}  // namespace lightpeft
