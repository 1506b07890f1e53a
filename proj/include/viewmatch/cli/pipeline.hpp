// Copyright 2026 The viewmatch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "viewmatch/evalign/report.hpp"

namespace viewmatch::cli {

class CliError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string tool_version();

// 64-bit FNV-1a as 16 hex digits.
std::string fnv1a_hex(std::string_view bytes);
std::string file_digest(const std::filesystem::path& path);
std::string utc_now();

// Provenance record written as run.json into every output directory.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  nlohmann::json options = nlohmann::json::object();
  std::vector<std::pair<std::string, std::string>> inputs;  // path, digest
  std::vector<std::string> outputs;                          // relative to the directory
  std::uint64_t seed = 0;
  std::string started;
  std::string finished;
  std::string version;

  // Digest of command, options and input digests; identical reruns share it.
  std::string config_hash() const;
};

nlohmann::json to_json(const RunManifest& m);
RunManifest run_manifest_from_json(const nlohmann::json& j);
void write_run_manifest(const std::filesystem::path& dir, const RunManifest& m);
RunManifest read_run_manifest(const std::filesystem::path& dir);

// features.json (tap, dims, row keys) plus features.f64 (row-major doubles).
void write_features(const std::filesystem::path& dir, const evalign::FeatureMatrix& f, const nlohmann::json& meta);
evalign::FeatureMatrix read_features(const std::filesystem::path& dir);

nlohmann::json to_json(const evalign::ModelOutcomes& m);
evalign::ModelOutcomes model_outcomes_from_json(const nlohmann::json& j);
void write_outcomes(const std::filesystem::path& path, const evalign::ModelOutcomes& m);
evalign::ModelOutcomes read_outcomes(const std::filesystem::path& path);

struct FeatureRequest {
  std::filesystem::path checkpoint;
  std::filesystem::path manifest;  // dataset manifest holding train and test splits
  evalign::Tap tap = evalign::Tap::Latents;
  // Components kept; -1 picks 150 for field weights and none otherwise.
  int pca = -1;
  // Training views per object in the PCA fit set.
  int fit_views = 1;
  // Only views referenced by these trials are extracted when set.
  std::optional<evalign::TrialSet> trials;
  int workers = 1;
};

struct FeatureResult {
  evalign::FeatureMatrix features;
  std::string model_name;
  std::string checkpoint_id;
  int pca_components = 0;  // 0 when no reduction
  std::vector<std::string> notes;
};

// Test-split features of a checkpoint. The PCA fit set is the train split of
// the same manifest without the families the checkpoint was trained without.
FeatureResult compute_features(const FeatureRequest& req);

// Test-split records of a manifest, optionally restricted to some families.
renderview::DatasetManifest test_split(const renderview::DatasetManifest& m, const std::vector<int>& families = {});

}  // namespace viewmatch::cli
