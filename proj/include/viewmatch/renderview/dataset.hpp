// Copyright 2026 The viewmatch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "viewmatch/renderview/render.hpp"
#include "viewmatch/shapegen/generator.hpp"

namespace viewmatch::renderview {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// 8-bit grayscale PNG; pixel values are round(255 * v).
void write_png(const std::filesystem::path& path, const Image& img);
Image read_png(const std::filesystem::path& path);

// Little-endian float32 values, row-major, no header.
void write_raw(const std::filesystem::path& path, const Image& img);
Image read_raw(const std::filesystem::path& path, int height, int width);

struct ViewRecord {
  std::string object_id;
  int family = 0;
  shapegen::Split split = shapegen::Split::Train;
  int view_index = 0;
  CameraPose pose;
  Intrinsics intrinsics;
  // Relative to the manifest directory.
  std::string path;
  std::string raw_path;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::string sampler;
  double radius = 2.0;
  std::uint64_t seed = 0;
  std::vector<ViewRecord> records;

  // Raw sidecar when present, otherwise the PNG.
  Image load_image(const ViewRecord& r) const;
  // Records grouped by object id, in first-appearance order.
  std::vector<std::vector<std::size_t>> by_object() const;
};

struct DatasetOptions {
  int views_per_object = 20;
  SamplerKind sampler = SamplerKind::Ring;
  double radius = 2.0;
  double elevation_deg = 45.0;
  Intrinsics intrinsics;
  Shading shading;
  std::uint64_t seed = 0;
  bool write_raw = false;
  int workers = 1;
};

CameraPose sample_pose(SamplerKind kind, std::uint64_t seed, double radius, double elevation_deg);

// Seed of a view's pose; depends only on the dataset seed, the object's
// seed and the view index.
std::uint64_t view_seed(std::uint64_t dataset_seed, std::uint64_t object_seed, int view_index);

// Renders views for every catalog object into out_dir/images and writes
// out_dir/manifest.json. Objects are rendered in parallel.
DatasetManifest write_dataset(const shapegen::Catalog& catalog, const DatasetOptions& opt,
                              const std::filesystem::path& out_dir);

nlohmann::json to_json(const DatasetManifest& m);
// Accepts either {"records": [...]} or a bare array of records, so that
// externally rendered datasets can be ingested.
DatasetManifest manifest_from_json(const nlohmann::json& j, const std::filesystem::path& root);
DatasetManifest read_manifest(const std::filesystem::path& manifest_path);
void write_manifest(const std::filesystem::path& manifest_path, const DatasetManifest& m);

}  // namespace viewmatch::renderview
