// Copyright 2026 The viewmatch Authors
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <set>

#include "doctest.h"
#include "viewmatch/shapegen/generator.hpp"

using namespace viewmatch::shapegen;

namespace {

Recipe fixed_recipe(int extrusions, int subdivisions) {
  Recipe r;
  r.name = "fixed";
  r.extrusions = {extrusions, extrusions};
  r.base_dims = {1.0, 1.0};
  r.subdivisions = subdivisions;
  return r;
}

long euler(const Mesh& m) {
  return static_cast<long>(m.vertices.size()) - static_cast<long>(m.edge_count()) +
         static_cast<long>(m.faces.size());
}

Mesh unit_cube() { return extrude_base(fixed_recipe(0, 0), 1); }

}  // namespace

TEST_CASE("zero extrusions give the unit cube") {
  const Mesh m = extrude_base(fixed_recipe(0, 0), 7);
  CHECK(m.vertices.size() == 8);
  CHECK(m.faces.size() == 6);
  CHECK(m.all_quads());
  CHECK(m.is_closed_manifold());
  for (const auto& v : m.vertices) CHECK(v.cwiseAbs().maxCoeff() == doctest::Approx(0.5));

  const Mesh g = generate_shape(fixed_recipe(0, 0), 7);
  CHECK(g.vertices.size() == 8);
  CHECK(g.faces.size() == 6);
}

TEST_CASE("a single extrusion adds four vertices and four faces") {
  const Mesh m = generate_shape(fixed_recipe(1, 0), 11);
  CHECK(m.vertices.size() == 12);
  CHECK(m.faces.size() == 10);
  CHECK(m.is_closed_manifold());
  CHECK(euler(m) == 2);
}

TEST_CASE("generation is deterministic per (recipe, seed)") {
  const auto fams = default_families();
  for (const auto& r : fams) {
    const Mesh a = generate_shape(r, 123);
    const Mesh b = generate_shape(r, 123);
    REQUIRE(a.vertices.size() == b.vertices.size());
    for (std::size_t i = 0; i < a.vertices.size(); ++i) CHECK(a.vertices[i] == b.vertices[i]);
    CHECK(a.faces == b.faces);
    const Mesh c = generate_shape(r, 124);
    CHECK((c.vertices.size() != a.vertices.size() || c.vertices[0] != a.vertices[0]));
  }
}

TEST_CASE("extrusion count is drawn from the recipe range") {
  Recipe r = fixed_recipe(0, 0);
  r.extrusions = {5, 10};
  std::set<std::size_t> counts;
  for (std::uint64_t s = 0; s < 200; ++s) {
    const Mesh m = extrude_base(r, s);
    const std::size_t n = (m.faces.size() - 6) / 4;
    CHECK(n >= 5);
    CHECK(n <= 10);
    counts.insert(n);
  }
  CHECK(counts.size() == 6);
}

TEST_CASE("catmull-clark on the cube") {
  const Mesh cube = unit_cube();
  const Mesh s = subdivide(cube, 1);
  // V' = V + E + F for one iteration on a quad mesh.
  CHECK(s.vertices.size() == 8 + 12 + 6);
  CHECK(s.faces.size() == 24);
  CHECK(s.is_closed_manifold());
  // Every subdivided vertex is strictly inside the original [-0.5, 0.5]^3,
  // except face points which sit on the original faces.
  for (std::size_t i = 0; i < 8 + 12; ++i) CHECK(s.vertices[i].cwiseAbs().maxCoeff() < 0.5);
  for (const auto& v : s.vertices) CHECK(v.cwiseAbs().maxCoeff() <= 0.5);
  // Original corners move to (n-3)/n-weighted averages: for the unit cube
  // each corner ends at 5/18 along each axis.
  for (std::size_t i = 0; i < 8; ++i) CHECK(s.vertices[i].cwiseAbs().maxCoeff() == doctest::Approx(5.0 / 18.0));

  const Mesh same = subdivide(cube, 0);
  CHECK(same.vertices == cube.vertices);
  CHECK(same.faces == cube.faces);
}

TEST_CASE("subdivision preserves the genus-0 Euler characteristic") {
  for (const auto& r : default_families()) {
    Recipe raw = r;
    raw.subdivisions = 0;
    Mesh m = generate_shape(raw, 5);
    CHECK(euler(m) == 2);
    for (int it = 1; it <= 2; ++it) {
      m = subdivide(m, 1);
      CHECK(euler(m) == 2);
      CHECK(m.is_closed_manifold());
    }
  }
}

TEST_CASE("subdivide rejects non-quad faces") {
  Mesh tri;
  tri.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  tri.faces = {{0, 2, 1}, {0, 1, 3}, {1, 2, 3}, {0, 3, 2}};
  CHECK_THROWS_AS(subdivide(tri, 1), MeshError);
}

TEST_CASE("normalization") {
  const Mesh n = normalize_mesh(unit_cube());
  double maxn = 0.0;
  viewmatch::shapegen::Vec3 c = viewmatch::shapegen::Vec3::Zero();
  for (const auto& v : n.vertices) {
    maxn = std::max(maxn, v.norm());
    c += v;
  }
  CHECK(maxn == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(c.norm() < 1e-12);

  const Mesh again = normalize_mesh(n);
  for (std::size_t i = 0; i < n.vertices.size(); ++i) CHECK((again.vertices[i] - n.vertices[i]).norm() < 1e-7);

  Mesh flat;
  flat.vertices = {{1, 1, 1}, {1, 1, 1}};
  CHECK_THROWS_AS(normalize_mesh(flat), MeshError);
  CHECK_THROWS_AS(normalize_mesh(Mesh{}), MeshError);
}

TEST_CASE("generated shapes are manifold, finite and inside the unit sphere") {
  for (const auto& r : default_families()) {
    for (std::uint64_t s = 0; s < 8; ++s) {
      const Mesh m = generate_shape(r, s);
      CHECK(m.is_closed_manifold());
      CHECK(!has_self_intersection(m));
      double maxn = 0.0;
      for (const auto& v : m.vertices) {
        CHECK(v.allFinite());
        maxn = std::max(maxn, v.norm());
      }
      CHECK(maxn <= 1.0 + 1e-12);
      CHECK(maxn == doctest::Approx(1.0));
      CHECK(m.provenance.seed == s);
      CHECK(m.provenance.recipe == r.name);
    }
  }
}

TEST_CASE("self-intersection detector") {
  Mesh m;
  m.vertices = {{-1, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0.5, -1}, {0, 0.5, 1}, {0.2, -1, 0}};
  m.faces = {{0, 1, 2}, {3, 4, 5}};
  CHECK(has_self_intersection(m));
  m.vertices[5] = {5, 5, 5};
  m.vertices[3] = {5, 6, 5};
  m.vertices[4] = {6, 5, 5};
  CHECK(!has_self_intersection(m));
}

TEST_CASE("stimulus set splits") {
  StimulusOptions opt;
  opt.objects_per_family = 10;
  opt.train_fraction = 0.8;
  opt.seed = 3;
  const auto one = build_stimulus_set({default_families()[0]}, opt);
  CHECK(one.in_split(Split::Train).size() == 8);
  CHECK(one.in_split(Split::Test).size() == 2);

  opt.objects_per_family = 100;
  const auto three = build_stimulus_set(default_families(), opt);
  std::set<std::string> train_ids;
  std::set<int> train_fams;
  for (const auto& e : three.in_split(Split::Train)) {
    train_ids.insert(e.object_id);
    train_fams.insert(e.family);
  }
  for (const auto& e : three.in_split(Split::Test)) {
    CHECK(train_ids.count(e.object_id) == 0);
    CHECK(train_fams.count(e.family) == 1);
  }

  opt.holdout_families = {1};
  const auto held = build_stimulus_set(default_families(), opt);
  bool f_in_test = false;
  for (const auto& e : held.in_split(Split::Train)) CHECK(e.family != 1);
  for (const auto& e : held.in_split(Split::Test)) f_in_test = f_in_test || e.family == 1;
  CHECK(f_in_test);

  CHECK_THROWS(build_stimulus_set({}, opt));
}

TEST_CASE("catalog is a pure function of its inputs and round-trips through JSON") {
  StimulusOptions opt;
  opt.objects_per_family = 6;
  opt.seed = 42;
  const auto a = build_stimulus_set(default_families(), opt);
  const auto b = build_stimulus_set(default_families(), opt);
  CHECK(to_json(a) == to_json(b));
  const auto back = catalog_from_json(to_json(a));
  CHECK(to_json(back) == to_json(a));

  const auto dir = std::filesystem::temp_directory_path() / "viewmatch_test_shapegen";
  std::filesystem::remove_all(dir);
  Catalog small = a;
  small.objects.resize(2);
  write_meshes(dir, small, 2);
  const Mesh m = read_obj(dir / (small.objects[0].object_id + ".obj"));
  const Mesh ref = small.mesh_for(small.objects[0]);
  REQUIRE(m.vertices.size() == ref.vertices.size());
  for (std::size_t i = 0; i < m.vertices.size(); ++i) CHECK((m.vertices[i] - ref.vertices[i]).norm() < 1e-12);
  CHECK(m.faces == ref.faces);
  CHECK(to_json(read_catalog(dir / "catalog.json")) == to_json(small));
  std::filesystem::remove_all(dir);
}
