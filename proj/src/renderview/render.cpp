// Copyright 2026 The viewmatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "viewmatch/renderview/render.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <limits>

#include "viewmatch/common/parallel.hpp"

namespace viewmatch::renderview {

namespace {

constexpr std::size_t kLeafSize = 4;

bool ray_box(const Ray& ray, const Eigen::Vector3d& inv, const Eigen::Vector3d& lo, const Eigen::Vector3d& hi,
             double t_max) {
  double t0 = 0.0, t1 = t_max;
  for (int k = 0; k < 3; ++k) {
    double a = (lo[k] - ray.origin[k]) * inv[k];
    double b = (hi[k] - ray.origin[k]) * inv[k];
    if (a > b) std::swap(a, b);
    // NaN from 0 * inf means the ray lies in the slab plane; treat as inside.
    if (!std::isnan(a)) t0 = std::max(t0, a);
    if (!std::isnan(b)) t1 = std::min(t1, b);
    if (t0 > t1) return false;
  }
  return true;
}

}  // namespace

std::optional<double> intersect_triangle(const Ray& ray, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 e1 = b - a;
  const Vec3 e2 = c - a;
  const Vec3 p = ray.direction.cross(e2);
  const double det = e1.dot(p);
  if (std::abs(det) < kDeterminantEpsilon) return std::nullopt;
  const double inv = 1.0 / det;
  const Vec3 s = ray.origin - a;
  const double u = s.dot(p) * inv;
  if (u < 0.0 || u > 1.0) return std::nullopt;
  const Vec3 q = s.cross(e1);
  const double v = ray.direction.dot(q) * inv;
  if (v < 0.0 || u + v > 1.0) return std::nullopt;
  const double t = e2.dot(q) * inv;
  if (!(t > kDeterminantEpsilon)) return std::nullopt;
  return t;
}

MeshAccel::MeshAccel(const shapegen::Mesh& mesh) {
  for (const auto& tri : mesh.triangles()) {
    std::array<Vec3, 3> t{mesh.vertices[tri[0]], mesh.vertices[tri[1]], mesh.vertices[tri[2]]};
    Vec3 n = (t[1] - t[0]).cross(t[2] - t[0]);
    const double len = n.norm();
    tris_.push_back(t);
    normals_.push_back(len > 0.0 ? Vec3(n / len) : Vec3::Zero());
  }
  order_.resize(tris_.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  if (!tris_.empty()) build(0, tris_.size());
}

int MeshAccel::build(std::size_t begin, std::size_t end) {
  Node node;
  node.lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  node.hi = Vec3::Constant(-std::numeric_limits<double>::infinity());
  for (std::size_t k = begin; k < end; ++k) {
    for (const auto& v : tris_[order_[k]]) {
      node.lo = node.lo.cwiseMin(v);
      node.hi = node.hi.cwiseMax(v);
    }
  }
  node.begin = begin;
  node.end = end;
  const int index = static_cast<int>(nodes_.size());
  nodes_.push_back(node);
  if (end - begin <= kLeafSize) return index;

  int axis = 0;
  (node.hi - node.lo).maxCoeff(&axis);
  auto centroid = [&](std::size_t t) { return tris_[t][0][axis] + tris_[t][1][axis] + tris_[t][2][axis]; };
  const std::size_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin), order_.begin() + static_cast<std::ptrdiff_t>(mid),
                   order_.begin() + static_cast<std::ptrdiff_t>(end), [&](std::size_t x, std::size_t y) {
                     const double cx = centroid(x), cy = centroid(y);
                     return cx < cy || (cx == cy && x < y);
                   });
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[static_cast<std::size_t>(index)].left = left;
  nodes_[static_cast<std::size_t>(index)].right = right;
  return index;
}

bool MeshAccel::test(const Ray& ray, std::size_t tri, std::optional<Hit>& best) const {
  const auto& t = tris_[tri];
  const auto hit = intersect_triangle(ray, t[0], t[1], t[2]);
  if (!hit) return false;
  if (!best || *hit < best->t || (*hit == best->t && tri < best->triangle)) {
    best = Hit{*hit, tri};
    return true;
  }
  return false;
}

std::optional<MeshAccel::Hit> MeshAccel::nearest(const Ray& ray) const {
  std::optional<Hit> best;
  if (nodes_.empty()) return best;
  const Eigen::Vector3d inv = ray.direction.cwiseInverse();
  int stack[64];
  int top = 0;
  stack[top++] = 0;
  while (top > 0) {
    const Node& n = nodes_[static_cast<std::size_t>(stack[--top])];
    const double t_max = best ? best->t : std::numeric_limits<double>::infinity();
    // Boxes are closed, so a tie at exactly best->t is still visited.
    if (!ray_box(ray, inv, n.lo, n.hi, t_max)) continue;
    if (n.left < 0) {
      for (std::size_t k = n.begin; k < n.end; ++k) test(ray, order_[k], best);
    } else {
      stack[top++] = n.right;
      stack[top++] = n.left;
    }
  }
  return best;
}

std::optional<MeshAccel::Hit> MeshAccel::nearest_brute_force(const Ray& ray) const {
  std::optional<Hit> best;
  for (std::size_t t = 0; t < tris_.size(); ++t) test(ray, t, best);
  return best;
}

Image render_accel(const MeshAccel& accel, const CameraPose& pose, const Intrinsics& intr, const Shading& shading,
                   int workers) {
  intr.validate();
  Image img(intr.height, intr.width, shading.background);
  const Vec3 light = -pose.forward();
  parallel_for(static_cast<std::size_t>(intr.height), workers, [&](std::size_t row) {
    const int i = static_cast<int>(row);
    for (int j = 0; j < intr.width; ++j) {
      const Ray ray = pixel_ray(pose, intr, i, j);
      const auto hit = accel.nearest(ray);
      if (!hit) continue;
      const double ndotl = accel.normal(hit->triangle).dot(light);
      const double v = std::clamp(shading.ambient + shading.diffuse * std::max(0.0, ndotl), 0.0, 1.0);
      img.at(i, j) = static_cast<float>(v);
    }
  });
  return img;
}

RenderedView render_mesh(const shapegen::Mesh& mesh, const CameraPose& pose, const Intrinsics& intr,
                         const Shading& shading, int workers) {
  const MeshAccel accel(mesh);
  RenderedView view;
  view.pose = pose;
  view.intrinsics = intr;
  view.image = render_accel(accel, pose, intr, shading, workers);
  return view;
}

}  // namespace viewmatch::renderview
