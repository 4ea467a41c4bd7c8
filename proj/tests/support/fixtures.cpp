#include "fixtures.hpp"

#include <algorithm>
#include <cmath>

#include "lightpeft/errors.hpp"

namespace lptest {

using namespace lightpeft;

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad, double lo, double hi) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

ModelConfig tiny_config(std::size_t layers, std::size_t hidden, std::size_t heads, std::size_t ffn) {
  ModelConfig c;
  c.layers = layers;
  c.hidden = hidden;
  c.heads = heads;
  c.ffn_dim = ffn;
  c.vocab_size = 11;
  c.max_seq = 6;
  c.num_classes = 3;
  return c;
}

TokenBatch random_batch(const ModelConfig& cfg, std::size_t batch, std::size_t seq, Rng& rng) {
  TokenBatch b;
  b.batch = batch;
  b.seq = seq;
  for (std::size_t i = 0; i < batch * seq; ++i) b.tokens.push_back(static_cast<int>(rng.below(cfg.vocab_size)));
  for (std::size_t i = 0; i < batch; ++i) b.labels.push_back(static_cast<int>(rng.below(cfg.num_classes)));
  return b;
}

MaskSet random_masks(const FoundationModel& model, Rng& rng, double lo, double hi, bool requires_grad) {
  MaskSet m = MaskSet::ones(model, requires_grad);
  for (Tensor& t : m.head) {
    for (double& v : t.mutable_data()) v = rng.uniform(lo, hi);
  }
  for (Tensor& t : m.ffn) {
    for (double& v : t.mutable_data()) v = rng.uniform(lo, hi);
  }
  return m;
}

void randomize_peft(PeftSet& peft, Rng& rng, double scale) {
  for (PeftModule& m : peft.modules) {
    for (double& v : m.w_down.mutable_data()) v = scale * rng.uniform(-1.0, 1.0);
    for (double& v : m.w_up.mutable_data()) v = scale * rng.uniform(-1.0, 1.0);
  }
}

RunConfig quick_run_config(TaskKind kind, std::uint64_t seed) {
  RunConfig c;
  c.task.kind = kind;
  c.task.vocab_size = 12;
  c.task.seq_len = 8;
  c.task.train_size = 256;
  c.task.eval_size = 64;
  c.model.layers = 2;
  c.model.hidden = 16;
  c.model.heads = 4;
  c.model.ffn_dim = 24;
  c.peft.rank = 4;
  c.train.total_steps = 30;
  c.train.estimation_steps = 6;
  c.train.batch_size = 16;
  c.train.seed = seed;
  return c;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw DimensionError("max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  double d = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) d = std::max(d, std::abs(a.data()[i] - b.data()[i]));
  return d;
}

}  // namespace lptest
