// Copyright 2026 The viewmatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "viewmatch/diffcore/optimizer.hpp"

#include <cmath>

namespace viewmatch::diffcore {

void Adam::step(ParameterSet<float>& params, const ParameterSet<float>& grads) {
  std::size_t node = 0;
  for (const auto& [name, p] : params) {
    const Tensor<float>& g = grads.at(name);
    if (g.shape() != p.shape()) {
      throw ShapeError("gradient for '" + name + "' has shape " + shape_string(g.shape()) +
                       ", parameter has " + shape_string(p.shape()));
    }
    if (!g.all_finite()) throw NonFiniteError("gradient '" + name + "'", node);
    ++node;
  }
  if (m_.size() == 0) {
    m_ = params.zeros_like();
    v_ = params.zeros_like();
  }
  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (auto& [name, p] : params) {
    const Tensor<float>& g = grads.at(name);
    Tensor<float>& m = m_.at(name);
    Tensor<float>& v = v_.at(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      const double mi = b1 * m[i] + (1.0 - b1) * gi;
      const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double update = config_.learning_rate * (mi / c1) / (std::sqrt(vi / c2) + config_.epsilon);
      p[i] = static_cast<float>(p[i] - update);
    }
  }
}

}  // namespace viewmatch::diffcore
