// Copyright 2026 The viewmatch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <string>
#include <thread>
#include <vector>

#include "viewmatch/diffcore/tape.hpp"

namespace viewmatch::diffcore {

template <typename T>
struct PassResult {
  T loss{};
  ParameterSet<T> grads;  // same names and order as the parameters
  std::map<std::string, Tensor<T>> outputs;
};

// One forward and backward pass. `loss_fn(tape, binding)` builds the
// computation from the bound parameters and returns a scalar loss; values it
// registers with tape.mark_output() are returned as named outputs.
// Parameters the loss does not reach receive zero gradients.
template <typename T, typename LossFn>
PassResult<T> forward_backward(const ParameterSet<T>& params, LossFn&& loss_fn) {
  Tape<T> tape;
  Binding<T> bound(tape, params);
  Var<T> loss = loss_fn(tape, bound);
  if (loss.value().size() != 1) {
    throw ShapeError("loss must be a scalar, got " + shape_string(loss.shape()));
  }
  tape.backward(loss);
  PassResult<T> result;
  result.loss = loss.value()[0];
  for (const auto& name : bound.names()) result.grads.add(name, tape.grad(bound[name].id));
  result.outputs = tape.outputs();
  return result;
}

// Splits a batch into `shards` independent passes (loss summed over shards)
// and evaluates them on up to `workers` threads. Results are reduced in shard
// order, so the output does not depend on the worker count.
template <typename T, typename ShardFn>
PassResult<T> forward_backward_sharded(const ParameterSet<T>& params, std::size_t shards,
                                       std::size_t workers, ShardFn&& shard_fn) {
  if (shards == 0) throw std::invalid_argument("forward_backward_sharded: zero shards");
  std::vector<PassResult<T>> parts(shards);
  std::vector<std::exception_ptr> errors(shards);
  auto run = [&](std::size_t s) {
    try {
      parts[s] = forward_backward(params, [&](Tape<T>& tape, const Binding<T>& bound) {
        return shard_fn(s, tape, bound);
      });
    } catch (...) {
      errors[s] = std::current_exception();
    }
  };
  workers = std::max<std::size_t>(1, std::min(workers, shards));
  if (workers == 1) {
    for (std::size_t s = 0; s < shards; ++s) run(s);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t s = w; s < shards; s += workers) run(s);
      });
    }
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  PassResult<T> total = std::move(parts[0]);
  for (std::size_t s = 1; s < shards; ++s) {
    total.loss += parts[s].loss;
    auto it = parts[s].grads.begin();
    for (auto& [name, g] : total.grads) {
      const auto& other = (it++)->second;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += other[i];
    }
  }
  return total;
}

}  // namespace viewmatch::diffcore
