// Copyright 2026 The viewmatch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

#include "viewmatch/diffcore/tape.hpp"

namespace viewmatch::diffcore {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with bias-corrected moments. Moments are allocated lazily on the
// first step and mirror the parameter shapes.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  // Throws NonFiniteError if any gradient entry is NaN/Inf; parameters are
  // left untouched in that case.
  void step(ParameterSet<float>& params, const ParameterSet<float>& grads);

  const AdamConfig& config() const { return config_; }
  std::int64_t steps() const { return steps_; }
  const ParameterSet<float>& first_moment() const { return m_; }
  const ParameterSet<float>& second_moment() const { return v_; }

 private:
  AdamConfig config_;
  ParameterSet<float> m_;
  ParameterSet<float> v_;
  std::int64_t steps_ = 0;
};

}  // namespace viewmatch::diffcore
