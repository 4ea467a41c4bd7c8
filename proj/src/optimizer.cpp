#include "lightpeft/optimizer.hpp"

#include <algorithm>
#include <cmath>

namespace lightpeft {

AdamW::AdamW(std::vector<ParamGroup> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const ParamGroup& g : params_) {
    m_.push_back(Tensor::zeros(g.param.shape()));
    v_.push_back(Tensor::zeros(g.param.shape()));
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i].param;
    if (!p.has_grad()) continue;
    auto w = p.mutable_data();
    auto g = p.grad();
    auto m = m_[i].mutable_data();
    auto v = v_[i].mutable_data();
    const double decay = params_[i].decay ? cfg_.weight_decay : 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
      w[j] -= lr * decay * w[j];
      w[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps);
    }
  }
}

void AdamW::clear_grads() {
  for (ParamGroup& g : params_) g.param.clear_grad();
}

void Sgd::step(double lr) {
  for (Tensor& p : params_) {
    if (!p.has_grad()) continue;
    auto w = p.mutable_data();
    auto g = p.grad();
    for (std::size_t j = 0; j < w.size(); ++j) w[j] -= lr * g[j];
  }
}

void Sgd::clear_grads() {
  for (Tensor& p : params_) p.clear_grad();
}

double warmup_lr(double base_lr, std::size_t step, std::size_t total_steps, double warmup_fraction) {
  const auto warmup = static_cast<std::size_t>(std::ceil(warmup_fraction * static_cast<double>(total_steps)));
  if (warmup == 0 || step >= warmup) return base_lr;
  return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
}

}  // namespace lightpeft
