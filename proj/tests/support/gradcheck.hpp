#pragma once

#include <functional>
#include <string>
#include <vector>

#include "lightpeft/tensor.hpp"

namespace lptest {

struct GradCheck {
  double max_rel_error = 0.0;
  std::string worst;  // "param <i> entry <j>: analytic a vs numeric n"
  std::size_t entries = 0;
};

// Compares backward() against central differences for every entry of every
// leaf in `params`. The error of a tensor is max |analytic - numeric| divided
// by max(max |numeric|, 1e-6) over that tensor.
GradCheck check_gradients(const std::function<lightpeft::Tensor()>& loss_fn, std::vector<lightpeft::Tensor> params,
                          double step = 1e-5);

}  // namespace lptest
