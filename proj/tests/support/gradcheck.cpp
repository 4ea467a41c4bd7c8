#include "gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace lptest {

using lightpeft::Tensor;

GradCheck check_gradients(const std::function<Tensor()>& loss_fn, std::vector<Tensor> params, double step) {
  for (Tensor& p : params) p.clear_grad();
  lightpeft::backward(loss_fn());
  GradCheck out;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi];
    const std::vector<double> analytic(p.grad().begin(), p.grad().end());
    std::vector<double> numeric(p.numel());
    {
      lightpeft::NoGradGuard guard;
      for (std::size_t j = 0; j < p.numel(); ++j) {
        const double orig = p.data()[j];
        p.mutable_data()[j] = orig + step;
        const double up = loss_fn().item();
        p.mutable_data()[j] = orig - step;
        const double down = loss_fn().item();
        p.mutable_data()[j] = orig;
        numeric[j] = (up - down) / (2.0 * step);
      }
    }
    double scale = 1e-6;
    for (double v : numeric) scale = std::max(scale, std::abs(v));
    for (std::size_t j = 0; j < numeric.size(); ++j) {
      const double rel = std::abs(analytic[j] - numeric[j]) / scale;
      if (rel > out.max_rel_error || out.worst.empty()) {
        out.max_rel_error = std::max(out.max_rel_error, rel);
        std::ostringstream os;
        os << "param " << pi << " entry " << j << ": analytic " << analytic[j] << " vs numeric " << numeric[j];
        out.worst = os.str();
      }
    }
    out.entries += numeric.size();
    p.clear_grad();
  }
  return out;
}

}  // namespace lptest
