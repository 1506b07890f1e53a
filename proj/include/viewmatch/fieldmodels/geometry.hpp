// Copyright 2026 The viewmatch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <vector>

#include "viewmatch/diffcore/tensor.hpp"
#include "viewmatch/renderview/camera.hpp"

namespace viewmatch::fieldmodels {

// Unit direction d and moment m = p x d of an oriented line.
struct PluckerRay {
  std::array<double, 3> d{};
  std::array<double, 3> m{};
};

// Throws std::invalid_argument for a zero direction. The moment is taken
// from the point of the line closest to the origin, so origins shifted along
// the ray differ only by rounding.
PluckerRay to_plucker(const renderview::Ray& ray);

// Six-value field input (d, m) at the field's float precision.
std::array<float, 6> field_input(const PluckerRay& p);

// Field inputs for every pixel of each pose: [B, H*W, 6], row-major pixels.
template <typename T>
diffcore::Tensor<T> plucker_grid(const std::vector<renderview::CameraPose>& poses, const renderview::Intrinsics& intr);

// Field inputs for selected pixels: pixels[b] holds flat pixel indices
// (i * W + j) for pose b; all lists must have equal length. [B, R, 6].
template <typename T>
diffcore::Tensor<T> plucker_pixels(const std::vector<renderview::CameraPose>& poses, const renderview::Intrinsics& intr,
                                   const std::vector<std::vector<int>>& pixels);

// Per-element sinusoids of a 4x4 camera matrix, row-major elements. For each
// element x the block is [sin(2^k pi x) for k < L] then [cos(2^k pi x) for
// k < L]; total length 16 * 2 * L.
std::vector<double> pose_encoding(const renderview::Mat4& m, int frequencies);

template <typename T>
diffcore::Tensor<T> pose_encoding_batch(const std::vector<renderview::CameraPose>& poses, int frequencies);

}  // namespace viewmatch::fieldmodels
