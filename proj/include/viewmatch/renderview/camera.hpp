// Copyright 2026 The viewmatch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <string>

namespace viewmatch::renderview {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

struct Intrinsics {
  int width = 64;
  int height = 64;
  // Vertical field of view. The image plane sits at unit distance.
  double fov_deg = 45.0;

  void validate() const;
  // Focal length in pixels.
  double focal_px() const;
  bool operator==(const Intrinsics&) const = default;
};

// Camera-to-world rigid transform. Right-handed; the camera looks along its
// local -z axis with local +y up.
struct CameraPose {
  Mat4 cam_to_world = Mat4::Identity();

  static CameraPose look_at(const Vec3& eye, const Vec3& target, const Vec3& up = Vec3::UnitY());
  static CameraPose from_row_major(const std::array<double, 16>& m);

  Vec3 position() const { return cam_to_world.block<3, 1>(0, 3); }
  Mat3 rotation() const { return cam_to_world.block<3, 3>(0, 0); }
  // Unit viewing direction in world space.
  Vec3 forward() const { return -rotation().col(2); }
  std::array<double, 16> row_major() const;
  // Rotation block orthonormal with determinant +1 and bottom row (0,0,0,1).
  bool valid(double tol = 1e-6) const;
  // Same camera rotated about its viewing axis by quarter turns.
  CameraPose rolled_quarter_turns(int k) const;
};

struct Ray {
  Vec3 origin;
  Vec3 direction;
};

// Position uniform on the sphere of `radius`, looking at the origin.
CameraPose sample_pose_sphere(std::uint64_t seed, double radius);

// Azimuth uniform on a circle at the given elevation above the horizon,
// looking down at the origin.
CameraPose sample_pose_ring(std::uint64_t seed, double radius, double elevation_deg = 45.0);

enum class SamplerKind { Sphere, Ring };
std::string to_string(SamplerKind k);
SamplerKind sampler_from_string(const std::string& s);

// Ray through the center of pixel (row i, column j). Throws std::out_of_range.
Ray pixel_ray(const CameraPose& pose, const Intrinsics& intr, int i, int j);

// Continuous (row, column) pixel coordinates of a world point, in the same
// convention as pixel_ray: pixel (i, j) has its center at (i, j).
Eigen::Vector2d project(const CameraPose& pose, const Intrinsics& intr, const Vec3& point);

}  // namespace viewmatch::renderview
