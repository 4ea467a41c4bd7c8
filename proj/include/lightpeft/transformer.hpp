#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "lightpeft/batch.hpp"
#include "lightpeft/ops.hpp"
#include "lightpeft/tensor.hpp"

namespace lightpeft {

struct MaskSet;
struct PeftSet;
struct ModuleProbe;
struct PruningPlan;

// Shape of the toy classifier. Blocks are pre-norm:
//   h += MHA(LN1(h)); h += FFN(LN2(h)); logits = meanpool(LN_f(h)) W_cls + b_cls
// There is no dropout anywhere.
struct ModelConfig {
  std::size_t layers = 4;
  std::size_t hidden = 64;
  std::size_t heads = 4;
  std::size_t ffn_dim = 128;
  std::size_t vocab_size = 32;
  std::size_t max_seq = 32;
  std::size_t num_classes = 2;
  Activation activation = Activation::gelu;
  bool causal = false;
  double ln_eps = 1e-5;

  std::size_t head_dim() const { return hidden / heads; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Surviving heads and FFN dimensions per layer, in original (dense) indexing.
struct HeadLayout {
  std::vector<std::vector<std::size_t>> heads;
  std::vector<std::vector<std::size_t>> ffn;

  static HeadLayout dense(const ModelConfig& config);
  // Throws LayoutError unless indices are strictly increasing, in range and
  // every layer keeps at least one head and one FFN dimension.
  void validate(const ModelConfig& config) const;
  bool operator==(const HeadLayout&) const = default;
};

struct LayerWeights {
  Tensor ln1_gain, ln1_bias;
  Tensor w_q, w_k, w_v;  // [d, heads * d_H]; head i owns column block i
  Tensor w_o;            // [heads * d_H, d]; head i owns row block i
  Tensor ln2_gain, ln2_bias;
  Tensor w_fc1;  // [d, d_F]
  Tensor w_fc2;  // [d_F, d]
};

// Frozen encoder plus an always-trainable classifier head.
struct FoundationModel {
  ModelConfig config;
  HeadLayout layout;
  Tensor token_embedding;     // [vocab, d]
  Tensor position_embedding;  // [max_seq, d]
  std::vector<LayerWeights> layers;
  Tensor final_gain, final_bias;
  Tensor classifier_weight;  // [d, classes]
  Tensor classifier_bias;    // [classes]

  // Deterministic random "pretrained" weights for the given seed.
  static FoundationModel init(const ModelConfig& config, std::uint64_t seed);

  std::size_t heads_in_layer(std::size_t layer) const { return layout.heads.at(layer).size(); }
  std::size_t ffn_in_layer(std::size_t layer) const { return layout.ffn.at(layer).size(); }

  // Encoder tensors (everything except the classifier head).
  std::vector<Tensor> foundation_parameters() const;
  std::vector<Tensor> classifier_parameters() const { return {classifier_weight, classifier_bias}; }
  void set_foundation_requires_grad(bool flag);

  FoundationModel clone() const;
};

// Collects per-batch module importances during a forward pass; entry i
// belongs to module i of the attached PeftSet.
struct ModuleProbe {
  std::vector<double> importance;
  std::vector<bool> observed;

  void reset(std::size_t modules) {
    importance.assign(modules, 0.0);
    observed.assign(modules, false);
  }
};

struct ForwardContext {
  const MaskSet* masks = nullptr;
  const PeftSet* peft = nullptr;
  ModuleProbe* probe = nullptr;
};

// x is the (already normalized) sub-layer input [batch, seq, d]. LoRA deltas
// on Q/K/V/O are added when attached; each head's output is scaled by its
// head mask before the output projection.
Tensor mha_forward(const FoundationModel& model, const Tensor& x, std::size_t layer, const ForwardContext& ctx);

// Act(x (W_fc1 + dW_fc1)) * m_F (W_fc2 + dW_fc2)
Tensor ffn_forward(const FoundationModel& model, const Tensor& x, std::size_t layer, const ForwardContext& ctx);

// Full classifier forward; returns logits [batch, classes].
Tensor model_forward(const FoundationModel& model, const TokenBatch& batch, const ForwardContext& ctx = {});

// Structurally removes the heads/FFN dimensions not kept by the plan. When
// masks are given (sized to the current layout) their surviving values are
// folded into W_O rows and W_fc2 rows, so the result needs no masks.
FoundationModel materialize(const FoundationModel& model, const PruningPlan& plan, const MaskSet* masks = nullptr);

struct ParamCounts {
  std::size_t foundation = 0;  // embeddings, blocks, final norm
  std::size_t classifier = 0;
  std::size_t peft = 0;
  std::size_t masks = 0;  // nonzero only while masks are trainable

  std::size_t trainable() const { return peft + masks; }
};

// Closed-form encoder parameter count for a layout; no weights needed.
std::size_t foundation_param_count(const ModelConfig& config, const HeadLayout& layout);

ParamCounts count_params(const FoundationModel& model, const PeftSet* peft = nullptr,
                         const MaskSet* trainable_masks = nullptr);

}  // namespace lightpeft
