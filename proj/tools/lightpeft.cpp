#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "lightpeft/artifact_io.hpp"
#include "lightpeft/bench.hpp"
#include "lightpeft/errors.hpp"
#include "lightpeft/pipeline.hpp"
#include "lightpeft/sweep.hpp"

namespace fs = std::filesystem;
using namespace lightpeft;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::string format = "text";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Config file (key = value lines)")->required();
  cmd->add_option("--seed", c.seed, "Override the seed from the config");
  cmd->add_option("--out", c.out, "Directory for checkpoints and reports");
  cmd->add_option("--format", c.format, "Report format")->check(CLI::IsMember({"text", "tsv"}));
}

RunConfig load(const Common& c) {
  RunConfig cfg = load_config(c.config);
  if (c.seed) cfg.train.seed = *c.seed;
  return cfg.resolved();
}

ReportFormat format_of(const Common& c) { return c.format == "tsv" ? ReportFormat::tsv : ReportFormat::text; }

fs::path out_dir(const Common& c) {
  fs::create_directories(c.out);
  return fs::path(c.out);
}

using Rows = std::vector<std::pair<std::string, std::string>>;

template <class T>
void put(Rows& rows, const std::string& key, const T& value) {
  std::ostringstream os;
  os << std::setprecision(10) << value;
  rows.emplace_back(key, os.str());
}

void emit(const Rows& rows, ReportFormat format) {
  for (const auto& [k, v] : rows) {
    if (format == ReportFormat::tsv) {
      std::cout << k << '\t' << v << '\n';
    } else {
      std::cout << std::left << std::setw(34) << k << ' ' << v << '\n';
    }
  }
}

void write_text(const fs::path& path, const std::string& text) { write_file_atomic(path, text); }

MaskSet masks_from(const FoundationModel& dense, const Checkpoint& ck) {
  MaskSet masks = MaskSet::ones(dense, false);
  for (std::size_t l = 0; l < dense.config.layers; ++l) {
    auto h = masks.head[l].mutable_data();
    for (std::size_t i = 0; i < ck.plan.heads[l].size(); ++i) h[ck.plan.heads[l][i]] = ck.head_masks[l][i];
    auto f = masks.ffn[l].mutable_data();
    for (std::size_t i = 0; i < ck.plan.ffn[l].size(); ++i) f[ck.plan.ffn[l][i]] = ck.ffn_masks[l][i];
  }
  return masks;
}

// estimate: dense base + masks + PEFT + ledger after t' steps.
int cmd_estimate(const Common& c) {
  const RunConfig cfg = load(c);
  const fs::path dir = out_dir(c);
  FoundationModel model = FoundationModel::init(cfg.model, cfg.train.seed);
  save_foundation(dir / "foundation.lpft", model);
  const TaskData data = generate(cfg.task);
  Rng peft_rng(Rng::mix(cfg.train.seed, 0x9ef7));
  PeftSet peft = attach_estimation_set(model, cfg.peft, peft_rng);
  MaskSet masks = MaskSet::ones(model);
  BatchStream batches(data.train, cfg.train.batch_size, Rng::mix(cfg.train.seed, 0xba7c));
  if (cfg.train.estimation_steps == 0) std::cerr << "warning: estimation skipped; tie-break selection\n";
  const EstimationResult est = estimate(model, peft, masks, batches, cfg.train, cfg.train.estimation_steps);
  save_checkpoint(dir / "estimation.lpft",
                  make_checkpoint(model, peft, PruningPlan::from_layout(model.layout), &masks));
  std::ostringstream ledger;
  write_ledger(est.ledger, ledger);
  write_text(dir / "ledger.tsv", ledger.str());
  Rows rows;
  put(rows, "estimation.steps", est.stats.steps);
  put(rows, "estimation.final_loss", est.stats.losses.empty() ? 0.0 : est.stats.losses.back());
  put(rows, "estimation.modules", est.ledger.entries.size());
  put(rows, "time.estimation_seconds", est.stats.seconds);
  emit(rows, format_of(c));
  return 0;
}

int cmd_prune(const Common& c) {
  const RunConfig cfg = load(c);
  const fs::path dir = out_dir(c);
  FoundationModel dense = load_foundation(dir / "foundation.lpft");
  const Checkpoint est = load_checkpoint(dir / "estimation.lpft");
  std::ifstream ledger_in(dir / "ledger.tsv");
  if (!ledger_in) throw LoadError("cannot open " + (dir / "ledger.tsv").string());
  const ImportanceLedger ledger = read_ledger(ledger_in);
  dense.classifier_weight = est.classifier_weight;
  dense.classifier_bias = est.classifier_bias;
  const MaskSet masks = masks_from(dense, est);
  const PruneResult pruned = prune_all(dense, est.peft, masks, ledger, cfg.train);
  save_foundation(dir / "pruned.lpft", pruned.model);
  save_checkpoint(dir / "pruned_task.lpft", make_checkpoint(pruned.model, pruned.peft, pruned.plan, &masks));
  for (const std::string& w : pruned.warnings) std::cerr << "warning: " << w << '\n';
  const ParamCounts before = count_params(dense, &est.peft);
  const ParamCounts after = count_params(pruned.model, &pruned.peft);
  Rows rows;
  put(rows, "params.foundation_before", before.foundation);
  put(rows, "params.foundation_after", after.foundation);
  put(rows, "params.foundation_retention",
      static_cast<double>(after.foundation) / static_cast<double>(before.foundation));
  put(rows, "params.peft_before", before.peft);
  put(rows, "params.peft_after", after.peft);
  put(rows, "plan.kept_modules", pruned.plan.kept_modules.size());
  emit(rows, format_of(c));
  return 0;
}

int cmd_finetune(const Common& c) {
  const RunConfig cfg = load(c);
  const fs::path dir = out_dir(c);
  const FoundationModel base = load_foundation(dir / "pruned.lpft");
  const Checkpoint start = load_checkpoint(dir / "pruned_task.lpft");
  TaskModel task = swap_adapter(base, start);
  const TaskData data = generate(cfg.task);
  BatchStream batches(data.train, cfg.train.batch_size, Rng::mix(cfg.train.seed, 0xba7c));
  // Continue the batch sequence where estimation left off.
  for (std::size_t i = 0; i < cfg.train.estimation_steps; ++i) batches.next();
  const PhaseStats stats = finetune(task.model, task.peft, batches, cfg.train,
                                    cfg.train.total_steps - cfg.train.estimation_steps, cfg.train.lr_finetune);
  Checkpoint done = start;
  done.peft = task.peft.clone();
  done.classifier_weight = task.model.classifier_weight.clone();
  done.classifier_bias = task.model.classifier_bias.clone();
  save_checkpoint(dir / "task.lpft", done);
  Rows rows;
  put(rows, "finetune.steps", stats.steps);
  put(rows, "finetune.final_loss", stats.losses.empty() ? 0.0 : stats.losses.back());
  put(rows, "time.finetune_seconds", stats.seconds);
  emit(rows, format_of(c));
  return 0;
}

int cmd_run_all(const Common& c, bool baseline) {
  const RunConfig cfg = load(c);
  const fs::path dir = out_dir(c);
  const RunArtifacts run = baseline ? run_lora_baseline(cfg) : run_light_peft(cfg);
  save_foundation(dir / "pruned.lpft", run.model);
  save_checkpoint(dir / "task.lpft", make_checkpoint(run.model, run.peft, run.report.plan,
                                                     baseline ? nullptr : &run.masks));
  if (!baseline) {
    std::ostringstream ledger;
    write_ledger(run.ledger, ledger);
    write_text(dir / "ledger.tsv", ledger.str());
  }
  for (const std::string& w : run.report.warnings) std::cerr << "warning: " << w << '\n';
  std::ostringstream report;
  write_report(run.report, report, format_of(c));
  write_text(dir / "report.txt", report.str());
  std::cout << report.str();
  return 0;
}

int eval_pair(const Common& c, const fs::path& base_path, const fs::path& adapter_path) {
  const RunConfig cfg = load(c);
  const FoundationModel base = load_foundation(base_path);
  const TaskModel task = swap_adapter(base, load_checkpoint(adapter_path));
  const TaskData data = generate(cfg.task);
  Rows rows;
  put(rows, "eval.task", to_string(cfg.task.kind));
  put(rows, "eval.samples", data.eval.size());
  put(rows, "eval.accuracy", evaluate(task.model, &task.peft, data.eval));
  emit(rows, format_of(c));
  return 0;
}

std::vector<double> parse_values(const std::string& text) {
  std::vector<double> values;
  std::istringstream in(text);
  for (std::string item; std::getline(in, item, ',');) {
    try {
      std::size_t used = 0;
      values.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("--values: '" + item + "' is not a number");
    }
  }
  return values;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Light-PEFT: prune a foundation model and its PEFT modules early in fine-tuning"};
  app.require_subcommand(1);

  Common common;
  auto* estimate_cmd = app.add_subcommand("estimate", "Run the masked estimation phase");
  auto* prune_cmd = app.add_subcommand("prune", "Prune from the estimation outputs in --out");
  auto* finetune_cmd = app.add_subcommand("finetune", "Fine-tune the pruned model in --out");
  auto* run_cmd = app.add_subcommand("run-all", "Estimate, prune, fine-tune and evaluate");
  bool baseline = false;
  run_cmd->add_flag("--baseline", baseline, "Run the unpruned LoRA baseline instead");
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate pruned.lpft + task.lpft from --out");
  auto* swap_cmd = app.add_subcommand("swap", "Assemble a base and an adapter checkpoint and evaluate");
  std::string base_path, adapter_path;
  swap_cmd->add_option("--base", base_path, "Foundation checkpoint")->required();
  swap_cmd->add_option("--adapter", adapter_path, "Task checkpoint")->required();
  auto* bench_cmd = app.add_subcommand("bench", "Time forward/backward passes");
  std::string mode = "pruned-vs-dense";
  BenchOptions bench_opts;
  bench_cmd->add_option("--mode", mode, "model-size, rank-sweep, module-count-sweep or pruned-vs-dense");
  bench_cmd->add_option("--batches", bench_opts.batches, "Batches per timing sum");
  bench_cmd->add_option("--reps", bench_opts.repetitions, "Interleaved repetitions");
  auto* sweep_cmd = app.add_subcommand("sweep", "Run the pipeline over a list of values");
  std::string axis, values_text;
  std::size_t seeds = 1;
  sweep_cmd->add_option("--axis", axis, "rho, t_prime or lambda")->required();
  sweep_cmd->add_option("--values", values_text, "Comma-separated values")->required();
  sweep_cmd->add_option("--seeds", seeds, "Seeds averaged per value");

  for (CLI::App* cmd : {estimate_cmd, prune_cmd, finetune_cmd, run_cmd, eval_cmd, swap_cmd, bench_cmd, sweep_cmd}) {
    add_common(cmd, common);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*estimate_cmd) return cmd_estimate(common);
    if (*prune_cmd) return cmd_prune(common);
    if (*finetune_cmd) return cmd_finetune(common);
    if (*run_cmd) return cmd_run_all(common, baseline);
    if (*eval_cmd) return eval_pair(common, fs::path(common.out) / "pruned.lpft", fs::path(common.out) / "task.lpft");
    if (*swap_cmd) return eval_pair(common, base_path, adapter_path);
    if (*bench_cmd) {
      const BenchMode m = parse_bench_mode(mode);
      const BenchResult result = run_bench(load(common), m, bench_opts);
      write_bench(result, std::cout, format_of(common));
      return 0;
    }
    if (*sweep_cmd) {
      const SweepResult result =
          run_sweep(load(common), parse_sweep_axis(axis), parse_values(values_text), seeds);
      write_sweep(result, std::cout, format_of(common));
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
