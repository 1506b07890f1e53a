// Copyright 2026 The viewmatch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace viewmatch::shapegen {

using Vec3 = Eigen::Vector3d;
using Face = std::vector<std::uint32_t>;

class MeshError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Provenance {
  std::string recipe;
  int family = -1;
  std::uint64_t seed = 0;
  // Number of rejected attempts before this mesh was accepted.
  int regenerations = 0;
};

// Polygon mesh with outward (counter-clockwise) face winding. Generated
// meshes are all-quad.
struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<Face> faces;
  Provenance provenance;

  std::size_t edge_count() const;
  bool all_quads() const;
  bool is_closed_manifold() const;
  std::vector<std::array<std::uint32_t, 3>> triangles() const;
};

// Catmull-Clark subdivision of a closed quad mesh, repeated `iterations` times.
Mesh subdivide(const Mesh& mesh, int iterations);

// Translates the vertex centroid to the origin and scales so the farthest
// vertex lies on the unit sphere.
Mesh normalize_mesh(const Mesh& mesh);

// True if two faces that share no vertex intersect (beyond `tolerance`).
bool has_self_intersection(const Mesh& mesh, double tolerance = 1e-9);

void write_obj(const std::filesystem::path& path, const Mesh& mesh);
Mesh read_obj(const std::filesystem::path& path);

}  // namespace viewmatch::shapegen
