// Copyright 2026 The viewmatch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "viewmatch/renderview/camera.hpp"
#include "viewmatch/shapegen/mesh.hpp"

namespace viewmatch::renderview {

// Row-major grayscale image with values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w, float fill) : height(h), width(w), pixels(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill) {}
  float& at(int i, int j) { return pixels[static_cast<std::size_t>(i) * static_cast<std::size_t>(width) + static_cast<std::size_t>(j)]; }
  float at(int i, int j) const {
    return pixels[static_cast<std::size_t>(i) * static_cast<std::size_t>(width) + static_cast<std::size_t>(j)];
  }
  bool operator==(const Image&) const = default;
};

struct RenderedView {
  std::string object_id;
  CameraPose pose;
  Intrinsics intrinsics;
  Image image;
};

struct Shading {
  double ambient = 0.2;
  double diffuse = 0.6;
  float background = 1.0f;
};

inline constexpr double kDeterminantEpsilon = 1e-9;

// Moller-Trumbore. Returns the ray parameter of a hit with t > 0.
std::optional<double> intersect_triangle(const Ray& ray, const Vec3& a, const Vec3& b, const Vec3& c);

// Triangulated mesh with a bounding-volume hierarchy for ray casting.
class MeshAccel {
 public:
  explicit MeshAccel(const shapegen::Mesh& mesh);

  struct Hit {
    double t = 0.0;
    std::size_t triangle = 0;
  };
  // Nearest hit; ties on t go to the lower triangle index.
  std::optional<Hit> nearest(const Ray& ray) const;
  // Same result by testing every triangle. Used as a test oracle.
  std::optional<Hit> nearest_brute_force(const Ray& ray) const;
  // Unit geometric normal of a triangle (from its winding).
  const Vec3& normal(std::size_t triangle) const { return normals_[triangle]; }
  std::size_t triangle_count() const { return tris_.size(); }

 private:
  struct Node {
    Eigen::Vector3d lo, hi;
    int left = -1, right = -1;
    std::size_t begin = 0, end = 0;
  };
  int build(std::size_t begin, std::size_t end);
  bool test(const Ray& ray, std::size_t tri, std::optional<Hit>& best) const;

  std::vector<std::array<Vec3, 3>> tris_;
  std::vector<Vec3> normals_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

// Flat-shaded headlight render: ambient + diffuse * max(0, n.l) with l the
// reversed camera axis (one direction per view), clamped to [0, 1]; misses get the
// background value. Rows are rendered in parallel; output does not depend
// on `workers`.
RenderedView render_mesh(const shapegen::Mesh& mesh, const CameraPose& pose, const Intrinsics& intr,
                         const Shading& shading = {}, int workers = 1);
Image render_accel(const MeshAccel& accel, const CameraPose& pose, const Intrinsics& intr,
                   const Shading& shading = {}, int workers = 1);

}  // namespace viewmatch::renderview
