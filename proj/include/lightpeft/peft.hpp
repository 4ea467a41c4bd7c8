#pragma once

#include <compare>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "lightpeft/rng.hpp"
#include "lightpeft/tensor.hpp"
#include "lightpeft/transformer.hpp"

namespace lightpeft {

struct PruningPlan;
struct MaskSet;

enum class PeftKind { lora, adapter };

// LoRA sites wrap a weight matrix; adapter sites follow a sub-layer.
enum class Site { q, k, v, o, fc1, fc2, after_mha, after_ffn };

std::string to_string(PeftKind kind);
std::string to_string(Site site);
PeftKind parse_peft_kind(const std::string& text);
Site parse_site(const std::string& text);
bool is_lora_site(Site site);

struct AttachPoint {
  std::size_t layer = 0;
  Site site = Site::q;
  auto operator<=>(const AttachPoint&) const = default;
};

// One bottleneck module: x W_down W_up. For LoRA the output is scaled by
// `scale` and added to the host matmul; for adapters it is f(h W_down) W_up
// added to the sub-layer output. `active_ranks` holds the original indices of
// the ranks still present (W_down columns / W_up rows, in order).
struct PeftModule {
  PeftKind kind = PeftKind::lora;
  AttachPoint attach;
  Tensor w_down;  // [d_in, active]
  Tensor w_up;    // [active, d_out]
  std::size_t rank = 0;  // rank at attachment
  double scale = 1.0;
  std::vector<std::size_t> active_ranks;

  std::size_t d_in() const { return w_down.dim(0); }
  std::size_t d_out() const { return w_up.dim(1); }
  std::size_t active_rank() const { return active_ranks.size(); }
  std::size_t param_count() const { return w_down.numel() + w_up.numel(); }
  PeftModule clone() const;
};

struct PeftSet {
  std::vector<PeftModule> modules;

  // Index of the module at (layer, site), if attached.
  std::optional<std::size_t> find(std::size_t layer, Site site) const;
  std::vector<Tensor> parameters() const;
  std::size_t param_count() const;
  PeftSet clone() const;
};

struct PeftConfig {
  PeftKind kind = PeftKind::lora;
  std::size_t rank = 8;
  double scale = 2.0;  // alpha / r with alpha = 16, r = 8
};

// s * x W_down W_up over the module's active ranks.
Tensor lora_delta(const Tensor& x, const PeftModule& module);

// h + f(h W_down) W_up
Tensor adapter_apply(const Tensor& h, const PeftModule& module, Activation f);

// Input/output widths of the host weight at a site under the current layout.
std::pair<std::size_t, std::size_t> site_dims(const FoundationModel& model, AttachPoint point);

// W_down ~ U(-1/sqrt(d_in), 1/sqrt(d_in)), W_up = 0.
PeftModule make_module(const FoundationModel& model, PeftKind kind, AttachPoint point, std::size_t rank,
                       double scale, Rng& rng);

// Every site of every layer, ordered by (layer, site): LoRA on Q,K,V,O,FC1,FC2;
// adapters after MHA and after FFN.
std::vector<AttachPoint> estimation_points(std::size_t layers, PeftKind kind);

PeftSet attach_estimation_set(const FoundationModel& model, const PeftConfig& cfg, Rng& rng);
PeftSet attach_at(const FoundationModel& model, const std::vector<AttachPoint>& points, const PeftConfig& cfg,
                  Rng& rng);

// Keeps only the listed original rank indices (a subset of active_ranks).
PeftModule shrink_ranks(const PeftModule& module, const std::vector<std::size_t>& keep);

// Slices LoRA factors so they fit a model materialized with `plan` from a
// model whose layout is `from`. Head and FFN masks (sized to `from`) are
// folded into the W_down rows of O and FC2 modules, mirroring materialize().
PeftSet reslice_for_layout(const PeftSet& peft, const HeadLayout& from, const PruningPlan& plan,
                           std::size_t head_dim, const MaskSet* masks = nullptr);

}  // namespace lightpeft
