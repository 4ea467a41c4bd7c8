#pragma once

#include <cstddef>
#include <vector>

#include "lightpeft/tensor.hpp"

namespace lightpeft {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct ParamGroup {
  Tensor param;
  bool decay = true;
};

// Adam with decoupled weight decay. Moment buffers are tensors so they show
// up in MemoryStats. Parameters without a gradient are skipped for the step.
class AdamW {
 public:
  AdamW(std::vector<ParamGroup> params, AdamWConfig cfg);

  void step(double lr);
  void clear_grads();
  std::size_t steps() const { return t_; }

 private:
  std::vector<ParamGroup> params_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  AdamWConfig cfg_;
  std::size_t t_ = 0;
};

// Plain gradient descent: p -= lr * grad.
class Sgd {
 public:
  explicit Sgd(std::vector<Tensor> params) : params_(std::move(params)) {}
  void step(double lr);
  void clear_grads();

 private:
  std::vector<Tensor> params_;
};

// Linear warmup over ceil(fraction * total) steps, then constant.
double warmup_lr(double base_lr, std::size_t step, std::size_t total_steps, double warmup_fraction);

}  // namespace lightpeft
