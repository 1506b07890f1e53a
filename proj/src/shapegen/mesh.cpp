// Copyright 2026 The viewmatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "viewmatch/shapegen/mesh.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace viewmatch::shapegen {

namespace {

using EdgeKey = std::pair<std::uint32_t, std::uint32_t>;

EdgeKey edge_key(std::uint32_t a, std::uint32_t b) { return a < b ? EdgeKey{a, b} : EdgeKey{b, a}; }

// Directed-edge usage count; a closed, consistently oriented manifold uses
// every directed edge once and its reverse once.
std::map<EdgeKey, int> undirected_edges(const Mesh& mesh) {
  std::map<EdgeKey, int> edges;
  for (const auto& f : mesh.faces) {
    for (std::size_t k = 0; k < f.size(); ++k) ++edges[edge_key(f[k], f[(k + 1) % f.size()])];
  }
  return edges;
}

bool segment_hits_triangle(const Vec3& p, const Vec3& q, const Vec3& a, const Vec3& b, const Vec3& c, double tol) {
  const Vec3 dir = q - p;
  const Vec3 e1 = b - a;
  const Vec3 e2 = c - a;
  const Vec3 h = dir.cross(e2);
  const double det = e1.dot(h);
  if (std::abs(det) < 1e-14) return false;
  const double inv = 1.0 / det;
  const Vec3 s = p - a;
  const double u = inv * s.dot(h);
  if (u <= tol || u >= 1.0 - tol) return false;
  const Vec3 qv = s.cross(e1);
  const double v = inv * dir.dot(qv);
  if (v <= tol || u + v >= 1.0 - tol) return false;
  const double t = inv * e2.dot(qv);
  return t > tol && t < 1.0 - tol;
}

bool triangles_intersect(const std::array<Vec3, 3>& x, const std::array<Vec3, 3>& y, double tol) {
  for (int k = 0; k < 3; ++k) {
    if (segment_hits_triangle(x[k], x[(k + 1) % 3], y[0], y[1], y[2], tol)) return true;
    if (segment_hits_triangle(y[k], y[(k + 1) % 3], x[0], x[1], x[2], tol)) return true;
  }
  return false;
}

Mesh subdivide_once(const Mesh& mesh) {
  if (!mesh.all_quads()) throw MeshError("Catmull-Clark subdivision requires an all-quad mesh");
  const std::size_t nv = mesh.vertices.size();
  const std::size_t nf = mesh.faces.size();

  std::vector<Vec3> face_points(nf, Vec3::Zero());
  for (std::size_t f = 0; f < nf; ++f) {
    for (auto v : mesh.faces[f]) face_points[f] += mesh.vertices[v];
    face_points[f] /= static_cast<double>(mesh.faces[f].size());
  }

  struct EdgeInfo {
    std::vector<std::size_t> faces;
    std::uint32_t index = 0;
  };
  std::map<EdgeKey, EdgeInfo> edges;
  for (std::size_t f = 0; f < nf; ++f) {
    const auto& face = mesh.faces[f];
    for (std::size_t k = 0; k < face.size(); ++k) {
      edges[edge_key(face[k], face[(k + 1) % face.size()])].faces.push_back(f);
    }
  }

  Mesh out;
  out.provenance = mesh.provenance;
  out.vertices.reserve(nv + edges.size() + nf);
  // Layout: updated original vertices, then edge points, then face points.
  out.vertices.resize(nv);
  std::vector<Vec3> edge_points;
  edge_points.reserve(edges.size());
  std::uint32_t next = static_cast<std::uint32_t>(nv);
  for (auto& [key, info] : edges) {
    if (info.faces.size() != 2) throw MeshError("Catmull-Clark subdivision requires a closed manifold mesh");
    const Vec3 ep = (mesh.vertices[key.first] + mesh.vertices[key.second] + face_points[info.faces[0]] +
                     face_points[info.faces[1]]) /
                    4.0;
    info.index = next++;
    edge_points.push_back(ep);
  }

  std::vector<Vec3> face_sum(nv, Vec3::Zero());
  std::vector<Vec3> edge_mid_sum(nv, Vec3::Zero());
  std::vector<int> valence(nv, 0);
  std::vector<int> face_count(nv, 0);
  for (std::size_t f = 0; f < nf; ++f) {
    for (auto v : mesh.faces[f]) {
      face_sum[v] += face_points[f];
      ++face_count[v];
    }
  }
  for (const auto& [key, info] : edges) {
    const Vec3 mid = (mesh.vertices[key.first] + mesh.vertices[key.second]) / 2.0;
    for (auto v : {key.first, key.second}) {
      edge_mid_sum[v] += mid;
      ++valence[v];
    }
  }
  for (std::size_t v = 0; v < nv; ++v) {
    const double n = valence[v];
    const Vec3 favg = face_sum[v] / static_cast<double>(face_count[v]);
    const Vec3 ravg = edge_mid_sum[v] / n;
    out.vertices[v] = (favg + 2.0 * ravg + (n - 3.0) * mesh.vertices[v]) / n;
  }
  out.vertices.insert(out.vertices.end(), edge_points.begin(), edge_points.end());
  const auto face_base = static_cast<std::uint32_t>(out.vertices.size());
  out.vertices.insert(out.vertices.end(), face_points.begin(), face_points.end());

  out.faces.reserve(nf * 4);
  for (std::size_t f = 0; f < nf; ++f) {
    const auto& face = mesh.faces[f];
    const std::uint32_t fp = face_base + static_cast<std::uint32_t>(f);
    for (std::size_t k = 0; k < 4; ++k) {
      const std::uint32_t v = face[k];
      const std::uint32_t e_next = edges.at(edge_key(v, face[(k + 1) % 4])).index;
      const std::uint32_t e_prev = edges.at(edge_key(face[(k + 3) % 4], v)).index;
      out.faces.push_back({v, e_next, fp, e_prev});
    }
  }
  return out;
}

}  // namespace

std::size_t Mesh::edge_count() const { return undirected_edges(*this).size(); }

bool Mesh::all_quads() const {
  return std::all_of(faces.begin(), faces.end(), [](const Face& f) { return f.size() == 4; });
}

bool Mesh::is_closed_manifold() const {
  std::map<EdgeKey, int> directed;
  for (const auto& f : faces) {
    for (std::size_t k = 0; k < f.size(); ++k) {
      const auto a = f[k], b = f[(k + 1) % f.size()];
      if (a >= vertices.size() || b >= vertices.size() || a == b) return false;
      ++directed[{a, b}];
    }
  }
  for (const auto& [e, count] : directed) {
    if (count != 1) return false;
    auto rev = directed.find({e.second, e.first});
    if (rev == directed.end() || rev->second != 1) return false;
  }
  return true;
}

std::vector<std::array<std::uint32_t, 3>> Mesh::triangles() const {
  std::vector<std::array<std::uint32_t, 3>> tris;
  tris.reserve(faces.size() * 2);
  for (const auto& f : faces) {
    for (std::size_t k = 1; k + 1 < f.size(); ++k) tris.push_back({f[0], f[k], f[k + 1]});
  }
  return tris;
}

Mesh subdivide(const Mesh& mesh, int iterations) {
  if (iterations < 0) throw MeshError("negative subdivision iteration count");
  if (!mesh.all_quads()) throw MeshError("Catmull-Clark subdivision requires an all-quad mesh");
  Mesh out = mesh;
  for (int i = 0; i < iterations; ++i) out = subdivide_once(out);
  return out;
}

Mesh normalize_mesh(const Mesh& mesh) {
  if (mesh.vertices.empty()) throw MeshError("cannot normalize an empty mesh");
  Vec3 centroid = Vec3::Zero();
  for (const auto& v : mesh.vertices) centroid += v;
  centroid /= static_cast<double>(mesh.vertices.size());
  double radius = 0.0;
  for (const auto& v : mesh.vertices) radius = std::max(radius, (v - centroid).norm());
  if (!(radius > 1e-12) || !std::isfinite(radius)) throw MeshError("cannot normalize a zero-extent mesh");
  Mesh out = mesh;
  for (auto& v : out.vertices) v = (v - centroid) / radius;
  return out;
}

bool has_self_intersection(const Mesh& mesh, double tolerance) {
  const auto tris = mesh.triangles();
  std::vector<std::array<Vec3, 3>> pts(tris.size());
  std::vector<Eigen::AlignedBox3d> boxes(tris.size());
  for (std::size_t i = 0; i < tris.size(); ++i) {
    for (int k = 0; k < 3; ++k) {
      pts[i][static_cast<std::size_t>(k)] = mesh.vertices[tris[i][static_cast<std::size_t>(k)]];
      boxes[i].extend(pts[i][static_cast<std::size_t>(k)]);
    }
  }
  for (std::size_t i = 0; i < tris.size(); ++i) {
    for (std::size_t j = i + 1; j < tris.size(); ++j) {
      bool shared = false;
      for (auto a : tris[i]) {
        for (auto b : tris[j]) shared = shared || a == b;
      }
      if (shared || !boxes[i].intersects(boxes[j])) continue;
      if (triangles_intersect(pts[i], pts[j], tolerance)) return true;
    }
  }
  return false;
}

void write_obj(const std::filesystem::path& path, const Mesh& mesh) {
  std::ofstream out(path);
  if (!out) throw MeshError("cannot write " + path.string());
  out << "# recipe " << mesh.provenance.recipe << " family " << mesh.provenance.family << " seed "
      << mesh.provenance.seed << " regenerations " << mesh.provenance.regenerations << '\n';
  out << std::setprecision(17);
  for (const auto& v : mesh.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& f : mesh.faces) {
    out << 'f';
    for (auto i : f) out << ' ' << (i + 1);
    out << '\n';
  }
  if (!out) throw MeshError("write failed: " + path.string());
}

Mesh read_obj(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MeshError("cannot read " + path.string());
  Mesh mesh;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "v") {
      Vec3 v;
      ls >> v.x() >> v.y() >> v.z();
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      Face f;
      std::string tok;
      while (ls >> tok) {
        const long idx = std::stol(tok.substr(0, tok.find('/')));
        if (idx < 1 || static_cast<std::size_t>(idx) > mesh.vertices.size()) {
          throw MeshError("face index out of range in " + path.string());
        }
        f.push_back(static_cast<std::uint32_t>(idx - 1));
      }
      mesh.faces.push_back(std::move(f));
    }
  }
  return mesh;
}

}  // namespace viewmatch::shapegen
