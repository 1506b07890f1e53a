// Copyright 2026 The viewmatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "viewmatch/shapegen/generator.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "viewmatch/common/parallel.hpp"
#include "viewmatch/common/rng.hpp"

namespace viewmatch::shapegen {

using nlohmann::json;

namespace {

Mesh box(const Vec3& dims) {
  Mesh m;
  const Vec3 h = dims / 2.0;
  for (int i = 0; i < 8; ++i) {
    m.vertices.emplace_back((i & 1) ? h.x() : -h.x(), (i & 2) ? h.y() : -h.y(), (i & 4) ? h.z() : -h.z());
  }
  // Counter-clockwise seen from outside.
  m.faces = {{0, 2, 3, 1}, {4, 5, 7, 6}, {0, 1, 5, 4}, {2, 6, 7, 3}, {0, 4, 6, 2}, {1, 3, 7, 5}};
  return m;
}

Vec3 face_normal(const Mesh& m, const Face& f) {
  // Newell's method.
  Vec3 n = Vec3::Zero();
  for (std::size_t k = 0; k < f.size(); ++k) {
    const Vec3& a = m.vertices[f[k]];
    const Vec3& b = m.vertices[f[(k + 1) % f.size()]];
    n.x() += (a.y() - b.y()) * (a.z() + b.z());
    n.y() += (a.z() - b.z()) * (a.x() + b.x());
    n.z() += (a.x() - b.x()) * (a.y() + b.y());
  }
  return n.normalized();
}

Vec3 any_perpendicular(const Vec3& n) {
  const Vec3 helper = std::abs(n.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  return n.cross(helper).normalized();
}

void extrude_face(Mesh& m, std::size_t face_index, const Vec3& offset) {
  const Face old = m.faces[face_index];
  const auto base = static_cast<std::uint32_t>(m.vertices.size());
  for (auto v : old) m.vertices.push_back(m.vertices[v] + offset);
  Face cap;
  for (std::uint32_t k = 0; k < old.size(); ++k) cap.push_back(base + k);
  m.faces[face_index] = cap;
  for (std::uint32_t k = 0; k < old.size(); ++k) {
    const std::uint32_t k1 = (k + 1) % static_cast<std::uint32_t>(old.size());
    m.faces.push_back({old[k], old[k1], base + k1, base + k});
  }
}

bool check_range(double lo, double hi) { return std::isfinite(lo) && std::isfinite(hi) && lo <= hi; }

}  // namespace

void Recipe::validate() const {
  if (extrusions.lo < 0 || extrusions.lo > extrusions.hi) {
    throw std::invalid_argument("recipe '" + name + "': extrusion count range is empty or negative");
  }
  if (!check_range(extrusion_length.lo, extrusion_length.hi) || extrusion_length.lo <= 0.0) {
    throw std::invalid_argument("recipe '" + name + "': extrusion length range must be positive and nonempty");
  }
  if (!check_range(extrusion_angle_deg.lo, extrusion_angle_deg.hi) || extrusion_angle_deg.lo < 0.0 ||
      extrusion_angle_deg.hi >= 90.0) {
    throw std::invalid_argument("recipe '" + name + "': extrusion angle range must lie in [0, 90)");
  }
  if (!check_range(base_dims.lo, base_dims.hi) || base_dims.lo <= 0.0) {
    throw std::invalid_argument("recipe '" + name + "': base dimension range must be positive and nonempty");
  }
  if (subdivisions < 0 || subdivisions > 2) {
    throw std::invalid_argument("recipe '" + name + "': subdivision iterations must be 0, 1 or 2");
  }
}

std::vector<Recipe> default_families() {
  Recipe a;
  a.family = 0;
  a.name = "stubby";
  a.extrusions = {5, 7};
  a.extrusion_length = {0.2, 0.5};
  a.extrusion_angle_deg = {0.0, 10.0};
  a.base_dims = {0.9, 1.3};

  Recipe b;
  b.family = 1;
  b.name = "spiky";
  b.extrusions = {8, 10};
  b.extrusion_length = {0.5, 1.0};
  b.extrusion_angle_deg = {0.0, 20.0};
  b.base_dims = {0.6, 0.9};

  Recipe c;
  c.family = 2;
  c.name = "tilted";
  c.extrusions = {5, 10};
  c.extrusion_length = {0.3, 0.8};
  c.extrusion_angle_deg = {30.0, 55.0};
  c.base_dims = {0.7, 1.1};
  return {a, b, c};
}

Mesh extrude_base(const Recipe& recipe, std::uint64_t attempt_seed) {
  recipe.validate();
  Rng rng(attempt_seed);
  const Vec3 dims(uniform(rng, recipe.base_dims.lo, recipe.base_dims.hi),
                  uniform(rng, recipe.base_dims.lo, recipe.base_dims.hi),
                  uniform(rng, recipe.base_dims.lo, recipe.base_dims.hi));
  Mesh m = box(dims);
  const auto count = uniform_int(rng, recipe.extrusions.lo, recipe.extrusions.hi);
  for (std::int64_t e = 0; e < count; ++e) {
    const auto f = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(m.faces.size()) - 1));
    const double tilt = uniform(rng, recipe.extrusion_angle_deg.lo, recipe.extrusion_angle_deg.hi) *
                        std::numbers::pi / 180.0;
    const double azimuth = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    const double length = uniform(rng, recipe.extrusion_length.lo, recipe.extrusion_length.hi);
    const Vec3 n = face_normal(m, m.faces[f]);
    const Vec3 axis = Eigen::AngleAxisd(azimuth, n) * any_perpendicular(n);
    const Vec3 dir = Eigen::AngleAxisd(tilt, axis) * n;
    extrude_face(m, f, dir * length);
  }
  return m;
}

Mesh generate_shape(const Recipe& recipe, std::uint64_t seed) {
  recipe.validate();
  for (int attempt = 0; attempt < kMaxRegenerations; ++attempt) {
    Mesh body = extrude_base(recipe, derive_seed(seed, {static_cast<std::uint64_t>(attempt)}));
    if (has_self_intersection(body)) continue;
    Mesh smooth = subdivide(body, recipe.subdivisions);
    if (recipe.subdivisions > 0 && has_self_intersection(smooth)) continue;
    Mesh out = normalize_mesh(smooth);
    out.provenance = {recipe.name, recipe.family, seed, attempt};
    return out;
  }
  throw MeshError("recipe '" + recipe.name + "' produced only self-intersecting shapes for seed " +
                  std::to_string(seed));
}

std::string to_string(Split s) { return s == Split::Train ? "train" : "test"; }

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  throw std::invalid_argument("unknown split '" + s + "'");
}

const Recipe& Catalog::recipe_for(const CatalogEntry& e) const {
  for (const auto& r : families) {
    if (r.family == e.family) return r;
  }
  throw std::out_of_range("catalog has no recipe for family " + std::to_string(e.family));
}

Mesh Catalog::mesh_for(const CatalogEntry& e) const { return generate_shape(recipe_for(e), e.seed); }

std::vector<CatalogEntry> Catalog::in_split(Split s) const {
  std::vector<CatalogEntry> out;
  for (const auto& e : objects) {
    if (e.split == s) out.push_back(e);
  }
  return out;
}

Catalog build_stimulus_set(const std::vector<Recipe>& families, const StimulusOptions& opt) {
  if (families.empty()) throw std::invalid_argument("build_stimulus_set needs at least one family");
  if (opt.objects_per_family < 1) throw std::invalid_argument("objects_per_family must be positive");
  if (!(opt.train_fraction >= 0.0 && opt.train_fraction <= 1.0)) {
    throw std::invalid_argument("train_fraction must lie in [0, 1]");
  }
  const int n = opt.objects_per_family;
  const int n_test = opt.test_per_family
                         ? *opt.test_per_family
                         : static_cast<int>(std::lround(static_cast<double>(n) * (1.0 - opt.train_fraction)));
  if (n_test < 0 || n_test > n) throw std::invalid_argument("test count per family exceeds objects per family");

  Catalog cat;
  cat.families = families;
  cat.seed = opt.seed;
  for (const auto& r : families) {
    r.validate();
    const bool held_out =
        std::find(opt.holdout_families.begin(), opt.holdout_families.end(), r.family) != opt.holdout_families.end();
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    Rng rng(derive_seed(opt.seed, {0x5e11, static_cast<std::uint64_t>(r.family)}));
    shuffle_range(order.begin(), order.end(), rng);
    std::vector<bool> is_test(static_cast<std::size_t>(n), held_out);
    for (int k = 0; k < n_test; ++k) is_test[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])] = true;
    for (int i = 0; i < n; ++i) {
      CatalogEntry e;
      e.object_id = "f" + std::to_string(r.family) + "_" + std::to_string(i);
      e.family = r.family;
      e.seed = derive_seed(opt.seed, {static_cast<std::uint64_t>(r.family), static_cast<std::uint64_t>(i)});
      e.split = is_test[static_cast<std::size_t>(i)] ? Split::Test : Split::Train;
      cat.objects.push_back(std::move(e));
    }
  }
  return cat;
}

json to_json(const Recipe& r) {
  return json{{"family", r.family},
              {"name", r.name},
              {"extrusions", {r.extrusions.lo, r.extrusions.hi}},
              {"extrusion_length", {r.extrusion_length.lo, r.extrusion_length.hi}},
              {"extrusion_angle_deg", {r.extrusion_angle_deg.lo, r.extrusion_angle_deg.hi}},
              {"base_dims", {r.base_dims.lo, r.base_dims.hi}},
              {"subdivisions", r.subdivisions},
              {"seed", r.seed}};
}

Recipe recipe_from_json(const json& j) {
  Recipe r;
  r.family = j.at("family").get<int>();
  r.name = j.value("name", r.name);
  if (j.contains("extrusions")) r.extrusions = {j["extrusions"].at(0).get<int>(), j["extrusions"].at(1).get<int>()};
  auto range = [&](const char* key, Range& out) {
    if (j.contains(key)) out = {j[key].at(0).get<double>(), j[key].at(1).get<double>()};
  };
  range("extrusion_length", r.extrusion_length);
  range("extrusion_angle_deg", r.extrusion_angle_deg);
  range("base_dims", r.base_dims);
  r.subdivisions = j.value("subdivisions", r.subdivisions);
  r.seed = j.value("seed", r.seed);
  r.validate();
  return r;
}

json to_json(const Catalog& c) {
  json fams = json::array();
  for (const auto& r : c.families) fams.push_back(to_json(r));
  json objs = json::array();
  for (const auto& e : c.objects) {
    objs.push_back({{"object_id", e.object_id}, {"family", e.family}, {"seed", e.seed}, {"split", to_string(e.split)}});
  }
  return json{{"seed", c.seed}, {"families", fams}, {"objects", objs}};
}

Catalog catalog_from_json(const json& j) {
  Catalog c;
  c.seed = j.value("seed", std::uint64_t{0});
  for (const auto& r : j.at("families")) c.families.push_back(recipe_from_json(r));
  for (const auto& o : j.at("objects")) {
    c.objects.push_back({o.at("object_id").get<std::string>(), o.at("family").get<int>(),
                         o.at("seed").get<std::uint64_t>(), split_from_string(o.at("split").get<std::string>())});
  }
  return c;
}

void write_catalog(const std::filesystem::path& path, const Catalog& c) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json(c).dump(2) << '\n';
}

Catalog read_catalog(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return catalog_from_json(json::parse(in));
}

void write_meshes(const std::filesystem::path& dir, const Catalog& c, int workers) {
  std::filesystem::create_directories(dir);
  parallel_for(c.objects.size(), workers, [&](std::size_t i) {
    const auto& e = c.objects[i];
    write_obj(dir / (e.object_id + ".obj"), c.mesh_for(e));
  });
  write_catalog(dir / "catalog.json", c);
}

}  // namespace viewmatch::shapegen
