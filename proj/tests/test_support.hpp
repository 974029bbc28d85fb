#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "pmf/rng.hpp"
#include "pmf/tensor.hpp"

namespace pmf::testing {

inline Tensor random_tensor(Rng& rng, std::vector<int> shape, double lo = -1.0,
                            double hi = 1.0, bool requires_grad = true) {
  size_t n = 1;
  for (int d : shape) n *= static_cast<size_t>(d);
  std::vector<double> data(n);
  for (double& v : data) v = rng.uniform(lo, hi);
  return Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

// Independent central-difference oracle: uses only forward evaluations, so
// it cannot share a defect with the tape's backward rules.
inline double max_grad_error(const std::function<Tensor()>& forward,
                             std::vector<Tensor> params, double h = 1e-5) {
  Tape::current().clear();
  Tensor loss = forward();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  for (const Tensor& p : params) {
    analytic.push_back(p.has_grad() ? p.grad() : std::vector<double>(p.numel(), 0.0));
  }
  for (Tensor& p : params) p.zero_grad();

  double worst = 0.0;
  NoGradGuard guard;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& data = params[pi].data();
    for (size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + h;
      const double up = forward().value();
      data[i] = saved - h;
      const double down = forward().value();
      data[i] = saved;
      const double fd = (up - down) / (2.0 * h);
      const double an = analytic[pi][i];
      const double rel = std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace pmf::testing
