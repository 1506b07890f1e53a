// Copyright 2026 The viewmatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "viewmatch/fieldmodels/geometry.hpp"

#include <Eigen/Geometry>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace viewmatch::fieldmodels {

using diffcore::Tensor;
using renderview::Vec3;

PluckerRay to_plucker(const renderview::Ray& ray) {
  const double len = ray.direction.norm();
  if (!(len > 1e-12) || !std::isfinite(len)) throw std::invalid_argument("to_plucker: zero or non-finite direction");
  const Vec3 d = ray.direction / len;
  const Vec3 p0 = ray.origin - ray.origin.dot(d) * d;
  const Vec3 m = p0.cross(d);
  return {{d.x(), d.y(), d.z()}, {m.x(), m.y(), m.z()}};
}

std::array<float, 6> field_input(const PluckerRay& p) {
  return {static_cast<float>(p.d[0]), static_cast<float>(p.d[1]), static_cast<float>(p.d[2]),
          static_cast<float>(p.m[0]), static_cast<float>(p.m[1]), static_cast<float>(p.m[2])};
}

template <typename T>
Tensor<T> plucker_pixels(const std::vector<renderview::CameraPose>& poses, const renderview::Intrinsics& intr,
                         const std::vector<std::vector<int>>& pixels) {
  if (poses.size() != pixels.size()) throw std::invalid_argument("plucker_pixels: one pixel list per pose required");
  const std::size_t r = pixels.empty() ? 0 : pixels[0].size();
  Tensor<T> out({static_cast<std::int64_t>(poses.size()), static_cast<std::int64_t>(r), 6});
  auto data = out.data();
  for (std::size_t b = 0; b < poses.size(); ++b) {
    if (pixels[b].size() != r) throw std::invalid_argument("plucker_pixels: pixel lists differ in length");
    for (std::size_t k = 0; k < r; ++k) {
      const int flat = pixels[b][k];
      const auto in = field_input(to_plucker(renderview::pixel_ray(poses[b], intr, flat / intr.width, flat % intr.width)));
      for (std::size_t c = 0; c < 6; ++c) data[(b * r + k) * 6 + c] = static_cast<T>(in[c]);
    }
  }
  return out;
}

template <typename T>
Tensor<T> plucker_grid(const std::vector<renderview::CameraPose>& poses, const renderview::Intrinsics& intr) {
  std::vector<int> all(static_cast<std::size_t>(intr.width * intr.height));
  for (std::size_t k = 0; k < all.size(); ++k) all[k] = static_cast<int>(k);
  return plucker_pixels<T>(poses, intr, std::vector<std::vector<int>>(poses.size(), all));
}

std::vector<double> pose_encoding(const renderview::Mat4& m, int frequencies) {
  if (frequencies < 1) throw std::invalid_argument("pose_encoding: frequencies must be positive");
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(32 * frequencies));
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) {
      const double x = m(r, c);
      for (int k = 0; k < frequencies; ++k) out.push_back(std::sin(std::ldexp(std::numbers::pi, k) * x));
      for (int k = 0; k < frequencies; ++k) out.push_back(std::cos(std::ldexp(std::numbers::pi, k) * x));
    }
  }
  return out;
}

template <typename T>
Tensor<T> pose_encoding_batch(const std::vector<renderview::CameraPose>& poses, int frequencies) {
  const auto len = static_cast<std::size_t>(32 * frequencies);
  Tensor<T> out({static_cast<std::int64_t>(poses.size()), static_cast<std::int64_t>(len)});
  auto data = out.data();
  for (std::size_t b = 0; b < poses.size(); ++b) {
    const auto enc = pose_encoding(poses[b].cam_to_world, frequencies);
    for (std::size_t k = 0; k < len; ++k) data[b * len + k] = static_cast<T>(enc[k]);
  }
  return out;
}

template Tensor<float> plucker_pixels<float>(const std::vector<renderview::CameraPose>&, const renderview::Intrinsics&,
                                             const std::vector<std::vector<int>>&);
template Tensor<double> plucker_pixels<double>(const std::vector<renderview::CameraPose>&, const renderview::Intrinsics&,
                                               const std::vector<std::vector<int>>&);
template Tensor<float> plucker_grid<float>(const std::vector<renderview::CameraPose>&, const renderview::Intrinsics&);
template Tensor<double> plucker_grid<double>(const std::vector<renderview::CameraPose>&, const renderview::Intrinsics&);
template Tensor<float> pose_encoding_batch<float>(const std::vector<renderview::CameraPose>&, int);
template Tensor<double> pose_encoding_batch<double>(const std::vector<renderview::CameraPose>&, int);

}  // namespace viewmatch::fieldmodels
