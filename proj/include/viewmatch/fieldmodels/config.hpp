// Copyright 2026 The viewmatch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace viewmatch::fieldmodels {

enum class ModelKind { Lfn, AePlain, AeViewConditioned, AeMultiView, Contrastive, Zoo };

// "lfn", "ae_plain", "ae_view", "ae_multiview", "contrastive", "zoo".
std::string to_string(ModelKind k);
ModelKind model_kind_from_string(const std::string& s);
bool is_autoencoder(ModelKind k);

// Raised for invalid configs; the message starts with the offending field
// path, e.g. "field.hidden: must be positive".
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct EncoderConfig {
  int image_size = 64;
  int image_channels = 1;
  // One stride-2 3x3 conv + ReLU block per entry.
  std::vector<int> channels{16, 32, 64, 64};
  int latent_dim = 256;
};

struct FieldConfig {
  // Linear layers: 6 -> hidden, (layers - 2) x (hidden -> hidden), hidden -> out_channels.
  int layers = 8;
  int hidden = 64;
  int out_channels = 1;
};

struct HypernetConfig {
  int hidden = 64;
  // Std of the latent-dependent part of each emitted weight, relative to the
  // He-init std of that field layer.
  double output_scale = 0.5;
};

struct DecoderConfig {
  // Input channels of each stride-2 transposed conv; the last one maps to the
  // image channels. Spatial start size is image_size / 2^len.
  std::vector<int> channels{64, 64, 32, 16};
};

struct PoseEmbedConfig {
  int frequencies = 6;
  int dim = 256;
};

struct ContrastiveConfig {
  int embed_dim = 2048;
  double temperature = 0.1;
  double momentum = 0.999;
};

struct ZooConfig {
  double width_multiplier = 1.0;
  int depth = 4;
  int hidden = 128;
  int classes = 3;
};

struct ModelConfig {
  ModelKind kind = ModelKind::Lfn;
  std::string preset = "desk";
  EncoderConfig encoder;
  FieldConfig field;
  HypernetConfig hypernet;
  DecoderConfig decoder;
  PoseEmbedConfig pose;
  ContrastiveConfig contrastive;
  ZooConfig zoo;

  void validate() const;
};

// "desk" (default, 64x64), "tiny" (CI scale, 32x32) and "paper" (reported
// sizes; not trainable on a single CPU core in reasonable time).
ModelConfig preset_config(const std::string& preset, ModelKind kind);

nlohmann::json to_json(const ModelConfig& c);
// Missing fields fall back to the named preset (default "desk").
ModelConfig model_config_from_json(const nlohmann::json& j);

std::size_t field_parameter_count(const FieldConfig& f);
int pose_encoding_length(const PoseEmbedConfig& p);
// Zoo conv channels after applying the width multiplier.
std::vector<int> zoo_channels(const ZooConfig& z);

}  // namespace viewmatch::fieldmodels
