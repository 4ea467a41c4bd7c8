#include "lightpeft/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "lightpeft/errors.hpp"
#include "lightpeft/fm_prune.hpp"
#include "lightpeft/peft.hpp"
#include "lightpeft/plan.hpp"
#include "lightpeft/rng.hpp"

namespace lightpeft {

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string(name) + " must be positive");
  };
  positive(layers, "layers");
  positive(hidden, "hidden");
  positive(heads, "heads");
  positive(ffn_dim, "ffn_dim");
  positive(vocab_size, "vocab_size");
  positive(max_seq, "max_seq");
  positive(num_classes, "num_classes");
  if (hidden % heads != 0) {
    throw ConfigError("hidden (" + std::to_string(hidden) + ") must be divisible by heads (" +
                      std::to_string(heads) + ")");
  }
  if (!(ln_eps > 0.0)) throw ConfigError("ln_eps must be positive");
}

HeadLayout HeadLayout::dense(const ModelConfig& config) {
  HeadLayout layout;
  std::vector<std::size_t> heads(config.heads);
  std::iota(heads.begin(), heads.end(), 0);
  std::vector<std::size_t> ffn(config.ffn_dim);
  std::iota(ffn.begin(), ffn.end(), 0);
  layout.heads.assign(config.layers, heads);
  layout.ffn.assign(config.layers, ffn);
  return layout;
}

namespace {

void validate_indices(const std::vector<std::size_t>& idx, std::size_t limit, std::size_t layer, const char* what) {
  if (idx.empty()) {
    throw LayoutError(std::string("layer ") + std::to_string(layer) + " keeps no " + what);
  }
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= limit || (i > 0 && idx[i] <= idx[i - 1])) {
      throw LayoutError(std::string("layer ") + std::to_string(layer) + " " + what +
                        " indices must be strictly increasing and below " + std::to_string(limit));
    }
  }
}

}  // namespace

void HeadLayout::validate(const ModelConfig& config) const {
  if (heads.size() != config.layers || ffn.size() != config.layers) {
    throw LayoutError("layout covers " + std::to_string(heads.size()) + "/" + std::to_string(ffn.size()) +
                      " layers, model has " + std::to_string(config.layers));
  }
  for (std::size_t l = 0; l < config.layers; ++l) {
    validate_indices(heads[l], config.heads, l, "heads");
    validate_indices(ffn[l], config.ffn_dim, l, "FFN dims");
  }
}

PruningPlan PruningPlan::keep_all(const ModelConfig& config) { return from_layout(HeadLayout::dense(config)); }

PruningPlan PruningPlan::from_layout(const HeadLayout& layout) {
  PruningPlan plan;
  plan.heads = layout.heads;
  plan.ffn = layout.ffn;
  return plan;
}

namespace {

Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.normal() * stddev;
  return Tensor::from(std::move(shape), std::move(v));
}

}  // namespace

FoundationModel FoundationModel::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  FoundationModel m;
  m.config = config;
  m.layout = HeadLayout::dense(config);
  const std::size_t d = config.hidden;
  const std::size_t f = config.ffn_dim;
  Rng rng(Rng::mix(seed, 0x464d));
  m.token_embedding = normal_tensor({config.vocab_size, d}, 1.0, rng);
  m.position_embedding = normal_tensor({config.max_seq, d}, 1.0, rng);
  const double in_d = 1.0 / std::sqrt(static_cast<double>(d));
  const double in_f = 1.0 / std::sqrt(static_cast<double>(f));
  for (std::size_t l = 0; l < config.layers; ++l) {
    LayerWeights w;
    w.ln1_gain = Tensor::full({d}, 1.0);
    w.ln1_bias = Tensor::zeros({d});
    w.w_q = normal_tensor({d, d}, in_d, rng);
    w.w_k = normal_tensor({d, d}, in_d, rng);
    w.w_v = normal_tensor({d, d}, in_d, rng);
    w.w_o = normal_tensor({d, d}, in_d, rng);
    w.ln2_gain = Tensor::full({d}, 1.0);
    w.ln2_bias = Tensor::zeros({d});
    w.w_fc1 = normal_tensor({d, f}, in_d, rng);
    w.w_fc2 = normal_tensor({f, d}, in_f, rng);
    m.layers.push_back(std::move(w));
  }
  m.final_gain = Tensor::full({d}, 1.0);
  m.final_bias = Tensor::zeros({d});
  std::vector<double> cls(d * config.num_classes);
  for (double& x : cls) x = rng.uniform(-in_d, in_d);
  m.classifier_weight = Tensor::from({d, config.num_classes}, std::move(cls), true);
  m.classifier_bias = Tensor::zeros({config.num_classes}, true);
  return m;
}

std::vector<Tensor> FoundationModel::foundation_parameters() const {
  std::vector<Tensor> out{token_embedding, position_embedding};
  for (const LayerWeights& w : layers) {
    for (const Tensor& t : {w.ln1_gain, w.ln1_bias, w.w_q, w.w_k, w.w_v, w.w_o, w.ln2_gain, w.ln2_bias, w.w_fc1,
                            w.w_fc2}) {
      out.push_back(t);
    }
  }
  out.push_back(final_gain);
  out.push_back(final_bias);
  return out;
}

void FoundationModel::set_foundation_requires_grad(bool flag) {
  for (Tensor& t : foundation_parameters()) t.set_requires_grad(flag);
}

FoundationModel FoundationModel::clone() const {
  FoundationModel c;
  c.config = config;
  c.layout = layout;
  c.token_embedding = token_embedding.clone();
  c.position_embedding = position_embedding.clone();
  for (const LayerWeights& w : layers) {
    c.layers.push_back(LayerWeights{w.ln1_gain.clone(), w.ln1_bias.clone(), w.w_q.clone(), w.w_k.clone(),
                                    w.w_v.clone(), w.w_o.clone(), w.ln2_gain.clone(), w.ln2_bias.clone(),
                                    w.w_fc1.clone(), w.w_fc2.clone()});
  }
  c.final_gain = final_gain.clone();
  c.final_bias = final_bias.clone();
  c.classifier_weight = classifier_weight.clone();
  c.classifier_bias = classifier_bias.clone();
  return c;
}

namespace {

constexpr double kNormGuard = 1e-12;

double l2_norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v * v;
  return std::sqrt(s);
}

void record(const ForwardContext& ctx, std::size_t index, double numerator, double denominator) {
  if (!ctx.probe) return;
  ctx.probe->importance.at(index) = numerator / std::max(denominator, kNormGuard);
  ctx.probe->observed.at(index) = true;
}

// x W (+ s x W_down W_up when a LoRA module sits on this weight).
Tensor linear_site(const Tensor& x, const Tensor& weight, std::size_t layer, Site site, const ForwardContext& ctx) {
  Tensor base = matmul(x, weight);
  if (!ctx.peft) return base;
  const auto index = ctx.peft->find(layer, site);
  if (!index) return base;
  const PeftModule& module = ctx.peft->modules[*index];
  Tensor delta = lora_delta(x, module);
  record(ctx, *index, l2_norm(delta), l2_norm(base));
  return add(base, delta);
}

Tensor adapter_site(const Tensor& h, std::size_t layer, Site site, Activation f, const ForwardContext& ctx) {
  if (!ctx.peft) return h;
  const auto index = ctx.peft->find(layer, site);
  if (!index) return h;
  const PeftModule& module = ctx.peft->modules[*index];
  Tensor branch = matmul(activation(matmul(h, module.w_down), f), module.w_up);
  record(ctx, *index, l2_norm(branch), l2_norm(h));
  return add(h, branch);
}

void check_mask(const Tensor& mask, std::size_t expected, std::size_t layer, const char* what) {
  if (mask.numel() != expected) {
    throw LayoutError(std::string(what) + " mask of layer " + std::to_string(layer) + " has " +
                      std::to_string(mask.numel()) + " entries, layer has " + std::to_string(expected));
  }
}

}  // namespace

Tensor mha_forward(const FoundationModel& model, const Tensor& x, std::size_t layer, const ForwardContext& ctx) {
  if (layer >= model.layers.size()) throw IndexError("layer " + std::to_string(layer) + " out of range");
  const LayerWeights& w = model.layers[layer];
  const std::size_t heads = model.heads_in_layer(layer);
  const std::size_t hd = model.config.head_dim();
  Tensor q = linear_site(x, w.w_q, layer, Site::q, ctx);
  Tensor k = linear_site(x, w.w_k, layer, Site::k, ctx);
  Tensor v = linear_site(x, w.w_v, layer, Site::v, ctx);
  Tensor heads_out = attention(q, k, v, AttentionShape{heads, hd, model.config.causal});
  if (ctx.masks) {
    const Tensor& m = ctx.masks->head.at(layer);
    check_mask(m, heads, layer, "head");
    heads_out = scale_column_groups(heads_out, m, hd);
  }
  return linear_site(heads_out, w.w_o, layer, Site::o, ctx);
}

Tensor ffn_forward(const FoundationModel& model, const Tensor& x, std::size_t layer, const ForwardContext& ctx) {
  if (layer >= model.layers.size()) throw IndexError("layer " + std::to_string(layer) + " out of range");
  const LayerWeights& w = model.layers[layer];
  Tensor hidden = activation(linear_site(x, w.w_fc1, layer, Site::fc1, ctx), model.config.activation);
  if (ctx.masks) {
    const Tensor& m = ctx.masks->ffn.at(layer);
    check_mask(m, model.ffn_in_layer(layer), layer, "FFN");
    hidden = mul(hidden, m);
  }
  return linear_site(hidden, w.w_fc2, layer, Site::fc2, ctx);
}

Tensor model_forward(const FoundationModel& model, const TokenBatch& batch, const ForwardContext& ctx) {
  const ModelConfig& cfg = model.config;
  if (batch.seq == 0 || batch.seq > cfg.max_seq) {
    throw IndexError("sequence length " + std::to_string(batch.seq) + " outside [1, " +
                     std::to_string(cfg.max_seq) + "]");
  }
  if (batch.tokens.size() != batch.batch * batch.seq) {
    throw DimensionError("token buffer holds " + std::to_string(batch.tokens.size()) + " ids, expected " +
                         std::to_string(batch.batch * batch.seq));
  }
  if (ctx.masks && (ctx.masks->head.size() != cfg.layers || ctx.masks->ffn.size() != cfg.layers)) {
    throw LayoutError("mask set covers a different number of layers than the model");
  }
  if (ctx.probe && ctx.peft) ctx.probe->reset(ctx.peft->modules.size());

  std::vector<int> positions(batch.seq);
  std::iota(positions.begin(), positions.end(), 0);
  Tensor x = embedding(model.token_embedding, batch.tokens, Shape{batch.batch, batch.seq});
  x = add(x, embedding(model.position_embedding, positions, Shape{batch.seq}));
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const LayerWeights& w = model.layers[l];
    Tensor attn = mha_forward(model, layer_norm(x, w.ln1_gain, w.ln1_bias, cfg.ln_eps), l, ctx);
    attn = adapter_site(attn, l, Site::after_mha, cfg.activation, ctx);
    x = add(x, attn);
    Tensor ffn = ffn_forward(model, layer_norm(x, w.ln2_gain, w.ln2_bias, cfg.ln_eps), l, ctx);
    ffn = adapter_site(ffn, l, Site::after_ffn, cfg.activation, ctx);
    x = add(x, ffn);
  }
  x = layer_norm(x, model.final_gain, model.final_bias, cfg.ln_eps);
  return add(matmul(mean_pool(x), model.classifier_weight), model.classifier_bias);
}

namespace {

// Positions (into `current`) of each original index in `keep`.
std::vector<std::size_t> positions_of(const std::vector<std::size_t>& keep, const std::vector<std::size_t>& current,
                                      std::size_t layer, const char* what) {
  std::vector<std::size_t> pos;
  pos.reserve(keep.size());
  for (std::size_t idx : keep) {
    auto it = std::lower_bound(current.begin(), current.end(), idx);
    if (it == current.end() || *it != idx) {
      throw LayoutError(std::string(what) + " " + std::to_string(idx) + " of layer " + std::to_string(layer) +
                        " is not present in the current layout");
    }
    pos.push_back(static_cast<std::size_t>(it - current.begin()));
  }
  return pos;
}

// Column blocks `blocks` (each `width` wide) of a [rows, n] matrix.
Tensor take_column_blocks(const Tensor& t, const std::vector<std::size_t>& blocks, std::size_t width) {
  const std::size_t rows = t.dim(0);
  const std::size_t cols = t.dim(1);
  const std::size_t out_cols = blocks.size() * width;
  std::vector<double> out(rows * out_cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      std::copy_n(t.data().data() + r * cols + blocks[b] * width, width, out.data() + r * out_cols + b * width);
    }
  }
  return Tensor::from({rows, out_cols}, std::move(out), t.requires_grad());
}

// Row blocks of a [n, cols] matrix, block b scaled by factors[b].
Tensor take_row_blocks(const Tensor& t, const std::vector<std::size_t>& blocks, std::size_t width,
                       const std::vector<double>& factors) {
  const std::size_t cols = t.dim(1);
  std::vector<double> out(blocks.size() * width * cols);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    for (std::size_t i = 0; i < width; ++i) {
      const double* src = t.data().data() + (blocks[b] * width + i) * cols;
      double* dst = out.data() + (b * width + i) * cols;
      for (std::size_t c = 0; c < cols; ++c) dst[c] = src[c] * factors[b];
    }
  }
  return Tensor::from({blocks.size() * width, cols}, std::move(out), t.requires_grad());
}

std::vector<double> mask_factors(const MaskSet* masks, bool heads, std::size_t layer,
                                 const std::vector<std::size_t>& pos) {
  std::vector<double> f(pos.size(), 1.0);
  if (!masks) return f;
  const Tensor& m = heads ? masks->head.at(layer) : masks->ffn.at(layer);
  for (std::size_t i = 0; i < pos.size(); ++i) f[i] = m.at(pos[i]);
  return f;
}

}  // namespace

FoundationModel materialize(const FoundationModel& model, const PruningPlan& plan, const MaskSet* masks) {
  const ModelConfig& cfg = model.config;
  plan.foundation_layout().validate(cfg);
  if (masks) {
    if (masks->head.size() != cfg.layers || masks->ffn.size() != cfg.layers) {
      throw LayoutError("mask set covers a different number of layers than the model");
    }
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      check_mask(masks->head[l], model.heads_in_layer(l), l, "head");
      check_mask(masks->ffn[l], model.ffn_in_layer(l), l, "FFN");
    }
  }
  FoundationModel out = model.clone();
  out.layout = plan.foundation_layout();
  const std::size_t hd = cfg.head_dim();
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const auto head_pos = positions_of(plan.heads[l], model.layout.heads[l], l, "head");
    const auto ffn_pos = positions_of(plan.ffn[l], model.layout.ffn[l], l, "FFN dim");
    const LayerWeights& src = model.layers[l];
    LayerWeights& dst = out.layers[l];
    dst.w_q = take_column_blocks(src.w_q, head_pos, hd);
    dst.w_k = take_column_blocks(src.w_k, head_pos, hd);
    dst.w_v = take_column_blocks(src.w_v, head_pos, hd);
    dst.w_o = take_row_blocks(src.w_o, head_pos, hd, mask_factors(masks, true, l, head_pos));
    dst.w_fc1 = take_column_blocks(src.w_fc1, ffn_pos, 1);
    dst.w_fc2 = take_row_blocks(src.w_fc2, ffn_pos, 1, mask_factors(masks, false, l, ffn_pos));
  }
  return out;
}

std::size_t foundation_param_count(const ModelConfig& config, const HeadLayout& layout) {
  const std::size_t d = config.hidden;
  const std::size_t hd = config.head_dim();
  std::size_t total = config.vocab_size * d + config.max_seq * d + 2 * d;
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::size_t attn_width = layout.heads.at(l).size() * hd;
    const std::size_t ffn_width = layout.ffn.at(l).size();
    total += 4 * d + 4 * d * attn_width + 2 * d * ffn_width;
  }
  return total;
}

ParamCounts count_params(const FoundationModel& model, const PeftSet* peft, const MaskSet* trainable_masks) {
  ParamCounts counts;
  for (const Tensor& t : model.foundation_parameters()) counts.foundation += t.numel();
  for (const Tensor& t : model.classifier_parameters()) counts.classifier += t.numel();
  if (peft) counts.peft = peft->param_count();
  if (trainable_masks) counts.masks = trainable_masks->count();
  return counts;
}

}  // namespace lightpeft
