// Copyright 2026 The viewmatch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "viewmatch/diffcore/engine.hpp"

namespace viewmatch::diffcore {

struct GradCheckOptions {
  double step = 1e-3;
  double tolerance = 1e-3;
  std::size_t coords_per_param = 32;
  // Denominator floor for the relative error, so coordinates whose true
  // gradient is zero are judged by absolute error.
  double abs_floor = 1e-6;
  std::uint64_t seed = 0;
};

struct ParamCheck {
  std::string name;
  std::size_t checked = 0;
  std::size_t excluded = 0;
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  std::vector<std::string> notes;
  double max_rel_error = 0.0;
  bool passed = true;
};

namespace detail {
struct Probe {
  double loss;
  std::uint64_t kinks;
};

template <typename LossFn>
Probe probe(const ParameterSet<double>& params, LossFn& loss_fn) {
  Tape<double> tape;
  tape.set_track_kinks(true);
  Binding<double> bound(tape, params, /*trainable=*/false);
  Var<double> loss = loss_fn(tape, bound);
  return {loss.value().item(), tape.kink_signature()};
}
}  // namespace detail

// Compares reverse-mode gradients with central differences in double
// precision. Up to `coords_per_param` coordinates are sampled per parameter
// (all of them for smaller tensors). A coordinate whose +/- probes switch
// any ReLU differently from the unperturbed pass sits on a kink; it is
// excluded and listed in the notes.
template <typename LossFn>
GradCheckReport grad_check(const ParameterSet<double>& params, LossFn&& loss_fn,
                           const GradCheckOptions& opt = {}) {
  GradCheckReport report;
  auto analytic = forward_backward(params, loss_fn);
  const auto base = detail::probe(params, loss_fn);
  ParameterSet<double> work = params;
  std::mt19937_64 rng(opt.seed);

  for (const auto& [name, value] : params) {
    ParamCheck pc;
    pc.name = name;
    std::vector<std::size_t> order(value.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t want = std::min(opt.coords_per_param, value.size());
    Tensor<double>& slot = work.at(name);
    const Tensor<double>& g = analytic.grads.at(name);
    for (std::size_t idx : order) {
      if (pc.checked >= want) break;
      const double original = slot[idx];
      slot[idx] = original + opt.step;
      const auto plus = detail::probe(work, loss_fn);
      slot[idx] = original - opt.step;
      const auto minus = detail::probe(work, loss_fn);
      slot[idx] = original;
      if (plus.kinks != base.kinks || minus.kinks != base.kinks) {
        ++pc.excluded;
        report.notes.push_back(name + "[" + std::to_string(idx) + "] excluded: nondifferentiable point");
        continue;
      }
      const double numeric = (plus.loss - minus.loss) / (2.0 * opt.step);
      const double denom = std::max({std::abs(numeric), std::abs(g[idx]), opt.abs_floor});
      const double rel = std::abs(numeric - g[idx]) / denom;
      pc.max_rel_error = std::max(pc.max_rel_error, rel);
      ++pc.checked;
    }
    report.max_rel_error = std::max(report.max_rel_error, pc.max_rel_error);
    if (pc.max_rel_error >= opt.tolerance) report.passed = false;
    report.params.push_back(pc);
  }
  return report;
}

template <typename LossFn>
GradCheckReport grad_check(const ParameterSet<float>& params, LossFn&& loss_fn,
                           const GradCheckOptions& opt = {}) {
  return grad_check(params.template cast<double>(), std::forward<LossFn>(loss_fn), opt);
}

}  // namespace viewmatch::diffcore
