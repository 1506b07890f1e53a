// Copyright 2026 The viewmatch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "viewmatch/shapegen/mesh.hpp"

namespace viewmatch::shapegen {

struct IntRange {
  int lo = 0;
  int hi = 0;
};

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct Recipe {
  int family = 0;
  std::string name = "default";
  IntRange extrusions{5, 10};
  Range extrusion_length{0.3, 0.8};
  // Tilt of the extrusion direction away from the face normal.
  Range extrusion_angle_deg{0.0, 30.0};
  // Edge length of the base box, drawn independently per axis.
  Range base_dims{0.8, 1.2};
  int subdivisions = 1;
  std::uint64_t seed = 0;

  // Throws std::invalid_argument.
  void validate() const;
};

// Three families with distinct extrusion regimes: few short straight
// extrusions, many long ones, and strongly tilted ones.
std::vector<Recipe> default_families();

inline constexpr int kMaxRegenerations = 256;

// Unsubdivided, unnormalized body for a single attempt. Exposed for tests.
Mesh extrude_base(const Recipe& recipe, std::uint64_t attempt_seed);

// Full pipeline: extrude, reject self-intersecting attempts, subdivide,
// normalize. Throws MeshError after kMaxRegenerations rejected attempts.
Mesh generate_shape(const Recipe& recipe, std::uint64_t seed);

enum class Split { Train, Test };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct CatalogEntry {
  std::string object_id;
  int family = 0;
  std::uint64_t seed = 0;
  Split split = Split::Train;
};

struct StimulusOptions {
  int objects_per_family = 10;
  double train_fraction = 0.8;
  // Overrides train_fraction when set.
  std::optional<int> test_per_family;
  // Families whose objects are all placed in the test split.
  std::vector<int> holdout_families;
  std::uint64_t seed = 0;
};

struct Catalog {
  std::vector<Recipe> families;
  std::vector<CatalogEntry> objects;
  std::uint64_t seed = 0;

  const Recipe& recipe_for(const CatalogEntry& e) const;
  Mesh mesh_for(const CatalogEntry& e) const;
  std::vector<CatalogEntry> in_split(Split s) const;
};

Catalog build_stimulus_set(const std::vector<Recipe>& families, const StimulusOptions& opt);

nlohmann::json to_json(const Recipe& r);
Recipe recipe_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Catalog& c);
Catalog catalog_from_json(const nlohmann::json& j);

void write_catalog(const std::filesystem::path& path, const Catalog& c);
Catalog read_catalog(const std::filesystem::path& path);

// Generates every mesh (in parallel over objects) and writes <id>.obj files
// plus catalog.json into `dir`.
void write_meshes(const std::filesystem::path& dir, const Catalog& c, int workers);

}  // namespace viewmatch::shapegen
