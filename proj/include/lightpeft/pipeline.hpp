#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "lightpeft/data.hpp"
#include "lightpeft/fm_prune.hpp"
#include "lightpeft/optimizer.hpp"
#include "lightpeft/peft.hpp"
#include "lightpeft/peft_prune.hpp"
#include "lightpeft/plan.hpp"
#include "lightpeft/transformer.hpp"

namespace lightpeft {

struct TrainConfig {
  std::size_t total_steps = 400;
  std::size_t estimation_steps = 40;
  std::size_t batch_size = 32;
  double lr_estimation = 3e-3;
  double lr_finetune = 3e-3;
  AdamWConfig adamw;
  double warmup_fraction = 0.06;
  double rho_heads = 0.25;
  double rho_ffn = 1.0 / 3.0;
  double rho_modules = 0.5;
  double rho_ranks = 0.5;
  MaskPenaltyConfig penalty;
  std::uint64_t seed = 0;

  void validate() const;
};

// Everything one run needs. The seed in `train` drives the foundation
// weights, PEFT init, data generation and batch order.
struct RunConfig {
  ModelConfig model;
  TaskSpec task;
  PeftConfig peft;
  TrainConfig train;

  // Copies shared fields (vocab, seq, classes, seed) from task/train into
  // the model/task sections and validates everything.
  RunConfig resolved() const;
};

struct PhaseStats {
  std::size_t steps = 0;
  std::vector<double> losses;
  double seconds = 0.0;
};

struct EstimationResult {
  ImportanceLedger ledger;
  PhaseStats stats;
};

// Runs `steps` joint updates of masks, PEFT factors and classifier on the
// masked loss. After each backward and before the optimizer step the rank
// Taylor scores are accumulated; the per-batch module ratios come from the
// same forward pass.
EstimationResult estimate(FoundationModel& model, PeftSet& peft, MaskSet& masks, BatchStream& batches,
                          const TrainConfig& cfg, std::size_t steps);

struct PruneResult {
  FoundationModel model;
  PeftSet peft;
  PruningPlan plan;
  std::vector<std::string> warnings;
};

// Heads (layer-wise) and FFN dims (global) from the masks, materialization
// with mask folding, re-slicing of PEFT factors, then module and rank
// selection from the ledger.
PruneResult prune_all(const FoundationModel& model, const PeftSet& peft, const MaskSet& masks,
                      const ImportanceLedger& ledger, const TrainConfig& cfg);

// Plain task-loss training of the PEFT factors and the classifier head.
PhaseStats finetune(FoundationModel& model, PeftSet& peft, BatchStream& batches, const TrainConfig& cfg,
                    std::size_t steps, double lr);

// Argmax accuracy; ties go to the lowest class.
double evaluate(const FoundationModel& model, const PeftSet* peft, const Dataset& data);

// Logits for a whole dataset, evaluated in chunks without recording a graph.
std::vector<double> predict_logits(const FoundationModel& model, const PeftSet* peft, const Dataset& data);

struct RunReport {
  RunConfig config;
  std::string mode;  // "light-peft" or "lora-baseline"
  PhaseStats estimation;
  PhaseStats finetuning;
  double accuracy = 0.0;
  ParamCounts before;
  ParamCounts after;
  double foundation_retention = 1.0;
  double trainable_retention = 1.0;
  PruningPlan plan;
  std::vector<std::string> warnings;
  double eval_seconds = 0.0;
  double mean_head_mask = 1.0;  // mean |m_A| after estimation
  double mean_ffn_mask = 1.0;
};

struct RunArtifacts {
  FoundationModel base;    // dense, as initialized
  FoundationModel model;   // pruned (or dense for the baseline), with trained classifier
  PeftSet peft;
  MaskSet masks;           // masks at the end of estimation (dense layout)
  ImportanceLedger ledger;
  TaskData data;
  RunReport report;
};

RunArtifacts run_light_peft(const RunConfig& cfg);

// Unpruned LoRA on every site for the same total number of steps.
RunArtifacts run_lora_baseline(const RunConfig& cfg);

enum class ReportFormat { text, tsv };

// Timing lines all start with "time." so reports can be compared modulo timing.
void write_report(const RunReport& report, std::ostream& out, ReportFormat format);

}  // namespace lightpeft
