// Copyright 2026 The viewmatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "viewmatch/renderview/camera.hpp"

#include <Eigen/Geometry>
#include <Eigen/LU>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "viewmatch/common/rng.hpp"

namespace viewmatch::renderview {

void Intrinsics::validate() const {
  if (width < 8 || height < 8) throw std::invalid_argument("image size must be at least 8x8");
  if (!(fov_deg >= 10.0 && fov_deg <= 120.0)) throw std::invalid_argument("field of view must lie in [10, 120] degrees");
}

double Intrinsics::focal_px() const {
  return (static_cast<double>(height) / 2.0) / std::tan(fov_deg * std::numbers::pi / 360.0);
}

CameraPose CameraPose::look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
  const Vec3 f = (target - eye).normalized();
  Vec3 u = up.normalized();
  if (std::abs(f.dot(u)) > 0.999) u = std::abs(f.z()) < 0.9 ? Vec3::UnitZ() : Vec3::UnitX();
  const Vec3 r = f.cross(u).normalized();
  const Vec3 true_up = r.cross(f);
  CameraPose p;
  p.cam_to_world.block<3, 1>(0, 0) = r;
  p.cam_to_world.block<3, 1>(0, 1) = true_up;
  p.cam_to_world.block<3, 1>(0, 2) = -f;
  p.cam_to_world.block<3, 1>(0, 3) = eye;
  return p;
}

CameraPose CameraPose::from_row_major(const std::array<double, 16>& m) {
  CameraPose p;
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) p.cam_to_world(r, c) = m[static_cast<std::size_t>(r * 4 + c)];
  }
  return p;
}

std::array<double, 16> CameraPose::row_major() const {
  std::array<double, 16> m{};
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) m[static_cast<std::size_t>(r * 4 + c)] = cam_to_world(r, c);
  }
  return m;
}

bool CameraPose::valid(double tol) const {
  if (!cam_to_world.allFinite()) return false;
  const Mat3 rot = rotation();
  if (((rot.transpose() * rot) - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  if (std::abs(rot.determinant() - 1.0) > tol) return false;
  return cam_to_world(3, 0) == 0.0 && cam_to_world(3, 1) == 0.0 && cam_to_world(3, 2) == 0.0 &&
         cam_to_world(3, 3) == 1.0;
}

CameraPose CameraPose::rolled_quarter_turns(int k) const {
  CameraPose p = *this;
  k = ((k % 4) + 4) % 4;
  for (int t = 0; t < k; ++t) {
    // Columns are permuted and negated, never recomputed, so the roll is exact.
    const Vec3 r = p.cam_to_world.block<3, 1>(0, 0);
    const Vec3 u = p.cam_to_world.block<3, 1>(0, 1);
    p.cam_to_world.block<3, 1>(0, 0) = u;
    p.cam_to_world.block<3, 1>(0, 1) = -r;
  }
  return p;
}

CameraPose sample_pose_sphere(std::uint64_t seed, double radius) {
  if (!(radius > 1.0)) throw std::invalid_argument("camera radius must exceed 1");
  Rng rng(seed);
  const double z = uniform(rng, -1.0, 1.0);
  const double phi = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double s = std::sqrt(std::max(0.0, 1.0 - z * z));
  const Vec3 eye(radius * s * std::cos(phi), radius * s * std::sin(phi), radius * z);
  return CameraPose::look_at(eye, Vec3::Zero());
}

CameraPose sample_pose_ring(std::uint64_t seed, double radius, double elevation_deg) {
  if (!(radius > 1.0)) throw std::invalid_argument("camera radius must exceed 1");
  if (!(elevation_deg > 0.0 && elevation_deg < 90.0)) throw std::invalid_argument("elevation must lie in (0, 90)");
  Rng rng(seed);
  const double az = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double el = elevation_deg * std::numbers::pi / 180.0;
  const double h = radius * std::cos(el);
  const Vec3 eye(h * std::cos(az), radius * std::sin(el), h * std::sin(az));
  return CameraPose::look_at(eye, Vec3::Zero());
}

std::string to_string(SamplerKind k) { return k == SamplerKind::Sphere ? "sphere" : "ring"; }

SamplerKind sampler_from_string(const std::string& s) {
  if (s == "sphere") return SamplerKind::Sphere;
  if (s == "ring") return SamplerKind::Ring;
  throw std::invalid_argument("unknown sampler '" + s + "' (expected sphere or ring)");
}

Ray pixel_ray(const CameraPose& pose, const Intrinsics& intr, int i, int j) {
  if (i < 0 || i >= intr.height || j < 0 || j >= intr.width) {
    throw std::out_of_range("pixel (" + std::to_string(i) + ", " + std::to_string(j) + ") outside image");
  }
  const double f = intr.focal_px();
  const double x = (static_cast<double>(j) + 0.5 - static_cast<double>(intr.width) / 2.0) / f;
  const double y = -(static_cast<double>(i) + 0.5 - static_cast<double>(intr.height) / 2.0) / f;
  const auto& m = pose.cam_to_world;
  Vec3 d;
  // x and y terms first so that quarter-turn rolls give bitwise-identical rays.
  for (int k = 0; k < 3; ++k) d[k] = (x * m(k, 0) + y * m(k, 1)) - m(k, 2);
  return {pose.position(), d / d.norm()};
}

Eigen::Vector2d project(const CameraPose& pose, const Intrinsics& intr, const Vec3& point) {
  const Vec3 local = pose.rotation().transpose() * (point - pose.position());
  if (!(local.z() < 0.0)) throw std::domain_error("point is not in front of the camera");
  const double f = intr.focal_px();
  const double x = local.x() / -local.z();
  const double y = local.y() / -local.z();
  const double col = x * f + static_cast<double>(intr.width) / 2.0 - 0.5;
  const double row = -y * f + static_cast<double>(intr.height) / 2.0 - 0.5;
  return {row, col};
}

}  // namespace viewmatch::renderview
