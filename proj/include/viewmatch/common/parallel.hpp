// Copyright 2026 The viewmatch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace viewmatch {

inline int resolve_workers(int requested) {
  if (requested > 0) return requested;
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

// Runs fn(i) for i in [0, n). Each index writes only its own output slot, so
// the result does not depend on the worker count. Rethrows the exception of
// the lowest failing index.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  const auto w = static_cast<std::size_t>(std::min<std::size_t>(static_cast<std::size_t>(resolve_workers(workers)), n));
  if (w <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> threads;
  threads.reserve(w);
  for (std::size_t t = 0; t < w; ++t) {
    threads.emplace_back([&, t] {
      for (std::size_t i = t; i < n; i += w) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : threads) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace viewmatch
