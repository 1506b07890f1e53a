// Copyright 2026 The viewmatch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "viewmatch/diffcore/tape.hpp"

// Differentiable operations. Every op validates shapes, records itself on the
// tape of its inputs and registers the vector-Jacobian product. Implemented
// for float and double.
namespace viewmatch::diffcore {

// a [N,K] x b [K,M] -> [N,M]
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b);
// a [N,K] x b[M,K]^T -> [N,M]
template <typename T>
Var<T> matmul_transposed(Var<T> a, Var<T> b);
// a [B,N,K] x b [B,K,M] -> [B,N,M]
template <typename T>
Var<T> batched_matmul(Var<T> a, Var<T> b);

// Elementwise sum; `b` is broadcast into the shape of `a` (numpy rules,
// right-aligned, size-1 or missing axes).
template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> sub(Var<T> a, Var<T> b);
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);
template <typename T>
Var<T> scale(Var<T> a, double factor);

template <typename T>
Var<T> relu(Var<T> a);
template <typename T>
Var<T> sigmoid(Var<T> a);
template <typename T>
Var<T> sin(Var<T> a);
template <typename T>
Var<T> cos(Var<T> a);

template <typename T>
Var<T> reshape(Var<T> a, Shape shape);
// Columns [begin, end) of the last axis.
template <typename T>
Var<T> slice_last(Var<T> a, std::int64_t begin, std::int64_t end);
// Concatenation along the last axis; leading axes must agree.
template <typename T>
Var<T> concat_last(const std::vector<Var<T>>& parts);

template <typename T>
Var<T> sum(Var<T> a);
template <typename T>
Var<T> mean(Var<T> a);
// mean((a - b)^2) over all elements
template <typename T>
Var<T> mse(Var<T> a, Var<T> b);
// Mean over rows of -log softmax(logits)[row, label].
template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, const std::vector<int>& labels);
// Divides every row of a [N,D] by its Euclidean norm.
template <typename T>
Var<T> normalize_rows(Var<T> a);

// x [B,C,H,W], w [O,C,k,k], bias [O]. Supported: k=3 stride 2 padding 1, and
// k=1 stride 1. Output spatial size is ceil(H/stride).
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> bias, int stride);
// Adjoint of the 3x3 stride-2 convolution: x [B,C,H,W], w [C,O,3,3],
// bias [O] -> [B,O,2H,2W].
template <typename T>
Var<T> conv_transpose2d(Var<T> x, Var<T> w, Var<T> bias);

}  // namespace viewmatch::diffcore
