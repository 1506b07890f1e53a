// Copyright 2026 The viewmatch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "viewmatch/diffcore/optimizer.hpp"
#include "viewmatch/fieldmodels/models.hpp"
#include "viewmatch/renderview/dataset.hpp"

namespace viewmatch::trainer {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite loss or gradient. The message names the model, step and epoch.
class DivergenceError : public TrainingError {
 public:
  using TrainingError::TrainingError;
};

struct TrainConfig {
  fieldmodels::ModelConfig model;
  std::string manifest;
  std::vector<int> holdout_families;
  int epochs = 10;
  int batch_size = 16;
  diffcore::AdamConfig adam{5e-4, 0.9, 0.999, 1e-8};
  std::uint64_t seed = 0;
  // Target pixels sampled per view for the field model; 0 renders them all.
  int rays_per_view = 256;
  // Ablation: use the input view as the target (field and multi-view AE).
  bool same_view = false;
  // Stop after this many optimizer steps when positive.
  std::int64_t max_steps = 0;
  // Each batch is split into this many independent passes. Results depend on
  // `shards` but never on `workers`.
  int shards = 1;
  int workers = 1;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct LogEntry {
  std::int64_t step = 0;
  int epoch = 0;
  double loss = 0.0;
  double wall_seconds = 0.0;
};

struct TrainRecord {
  std::vector<LogEntry> log;
  std::vector<double> epoch_loss;  // mean step loss per epoch
  double wall_seconds = 0.0;
  std::string checkpoint_id;
};

struct TrainResult {
  fieldmodels::ModelConfig model;
  diffcore::ParameterSet<float> params;
  TrainRecord record;
};

// Views of one object held in memory as 8-bit gray.
struct ObjectViews {
  std::string object_id;
  int family = 0;
  std::vector<int> view_indices;
  std::vector<renderview::CameraPose> poses;
  std::vector<std::vector<std::uint8_t>> images;
};

struct TrainingData {
  renderview::Intrinsics intrinsics;
  std::vector<ObjectViews> objects;
  int num_families = 0;  // 1 + largest family index seen
};

// Loads every record of `split`, grouped by object. All views must share one
// resolution.
TrainingData load_training_data(const renderview::DatasetManifest& m, shapegen::Split split, int workers = 1);

// Partition by family, ignoring the split column: the first manifest keeps
// every record outside `families`, the second every record inside.
std::pair<renderview::DatasetManifest, renderview::DatasetManifest> holdout_split(
    const renderview::DatasetManifest& m, const std::vector<int>& families);

// Reads the manifest, drops held-out families and loads the train split.
TrainingData prepare_training_data(const TrainConfig& cfg);

TrainResult train_lfn(const TrainConfig& cfg, const TrainingData& data);
// Variant is taken from cfg.model.kind and must be an autoencoder.
TrainResult train_autoencoder(const TrainConfig& cfg, const TrainingData& data);
TrainResult train_contrastive(const TrainConfig& cfg, const TrainingData& data);
TrainResult train_zoo_member(const TrainConfig& cfg, const TrainingData& data);
// Member k varies seed, width multiplier and depth.
std::vector<TrainResult> train_zoo(const TrainConfig& cfg, const TrainingData& data, int n_models);
TrainConfig zoo_member_config(const TrainConfig& base, int k);

// Dispatches on cfg.model.kind (a single member for the zoo).
TrainResult train(const TrainConfig& cfg, const TrainingData& data);

// Fraction of views whose argmax logit equals the family.
double zoo_accuracy(const fieldmodels::ModelConfig& model, const diffcore::ParameterSet<float>& params,
                    const TrainingData& data);

// [B, C, S, S] batch of images scaled to [0, 1]; gray is replicated across C.
diffcore::Tensor<float> image_batch(const TrainingData& data, const std::vector<std::pair<int, int>>& refs,
                                    int channels);

// The checkpoint echoes {"model": ..., "train": ...}. Returns the id
// (hex digest of the encoded checkpoint).
std::string save_trained(const std::filesystem::path& path, const TrainConfig& cfg, const TrainResult& result);

struct LoadedModel {
  fieldmodels::ModelConfig model;
  nlohmann::json train;  // empty object for checkpoints without a train echo
  diffcore::ParameterSet<float> params;
  std::string checkpoint_id;
};
LoadedModel load_trained(const std::filesystem::path& path);

void write_log_csv(const std::filesystem::path& path, const TrainRecord& record);

}  // namespace viewmatch::trainer
