#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "lightpeft/peft.hpp"
#include "lightpeft/peft_prune.hpp"
#include "lightpeft/pipeline.hpp"
#include "lightpeft/plan.hpp"
#include "lightpeft/transformer.hpp"

namespace lightpeft {

inline constexpr std::uint32_t kFormatVersion = 1;

// What a task needs on top of a (possibly pruned) foundation: the plan, the
// final mask values of the kept units, the PEFT factors and the classifier.
struct Checkpoint {
  std::uint32_t format_version = kFormatVersion;
  ModelConfig config;
  PruningPlan plan;
  std::vector<std::vector<double>> head_masks;  // per layer, parallel to plan.heads
  std::vector<std::vector<double>> ffn_masks;   // per layer, parallel to plan.ffn
  PeftSet peft;
  Tensor classifier_weight;
  Tensor classifier_bias;
};

// `dense_masks` are indexed by dense positions; without them every kept mask is 1.
Checkpoint make_checkpoint(const FoundationModel& model, const PeftSet& peft, const PruningPlan& plan,
                           const MaskSet* dense_masks = nullptr);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Full encoder weights plus layout, in the same container.
void save_foundation(const std::filesystem::path& path, const FoundationModel& model);
FoundationModel load_foundation(const std::filesystem::path& path);

// In-memory variants used by the file functions.
std::string encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(const std::string& bytes);
std::string encode_foundation(const FoundationModel& model);
FoundationModel decode_foundation(const std::string& bytes);

// Byte counts of the encoded mask values and PEFT factors.
struct PayloadSizes {
  std::size_t mask_bytes = 0;
  std::size_t peft_bytes = 0;
};
PayloadSizes payload_sizes(const Checkpoint& checkpoint);

struct TaskModel {
  FoundationModel model;
  PeftSet peft;
};

// Assembles a runnable model from a foundation and a task checkpoint. A base
// whose layout already equals the checkpoint plan is used as is; a dense base
// is re-materialized from the plan with the stored masks folded in. Anything
// else throws CompatibilityError naming the first differing index.
TaskModel swap_adapter(const FoundationModel& base, const Checkpoint& adapter);

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed = 0xcbf29ce484222325ULL);

// Hash over all encoder tensors; used to show frozen weights stay untouched.
std::uint64_t foundation_fingerprint(const FoundationModel& model);

// "key = value" lines, '#' comments. Omitted keys keep their defaults.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
void write_config(const RunConfig& config, std::ostream& out);

// Tab-separated ledger dump; doubles written with 17 significant digits.
void write_ledger(const ImportanceLedger& ledger, std::ostream& out);
ImportanceLedger read_ledger(std::istream& in);

// Writes to a temporary sibling and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace lightpeft
