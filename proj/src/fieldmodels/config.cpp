// Copyright 2026 The viewmatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "viewmatch/fieldmodels/config.hpp"

#include <cmath>

namespace viewmatch::fieldmodels {

using nlohmann::json;

namespace {

void require(bool ok, const std::string& path, const std::string& what) {
  if (!ok) throw ConfigError(path + ": " + what);
}

template <typename V>
void read(const json& j, const char* key, V& out, const std::string& path) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const json::exception&) {
    throw ConfigError(path + "." + key + ": wrong type");
  }
}

}  // namespace

std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::Lfn: return "lfn";
    case ModelKind::AePlain: return "ae_plain";
    case ModelKind::AeViewConditioned: return "ae_view";
    case ModelKind::AeMultiView: return "ae_multiview";
    case ModelKind::Contrastive: return "contrastive";
    case ModelKind::Zoo: return "zoo";
  }
  return "unknown";
}

ModelKind model_kind_from_string(const std::string& s) {
  for (auto k : {ModelKind::Lfn, ModelKind::AePlain, ModelKind::AeViewConditioned, ModelKind::AeMultiView,
                 ModelKind::Contrastive, ModelKind::Zoo}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("kind: unknown model kind '" + s + "'");
}

bool is_autoencoder(ModelKind k) {
  return k == ModelKind::AePlain || k == ModelKind::AeViewConditioned || k == ModelKind::AeMultiView;
}

void ModelConfig::validate() const {
  const auto& e = encoder;
  require(e.image_size >= 4, "encoder.image_size", "must be at least 4");
  require(e.image_channels >= 1, "encoder.image_channels", "must be positive");
  if (kind != ModelKind::Zoo) {
    require(!e.channels.empty(), "encoder.channels", "must not be empty");
    for (int c : e.channels) require(c > 0, "encoder.channels", "entries must be positive");
    require(e.image_size % (1 << e.channels.size()) == 0, "encoder.image_size",
            "must be divisible by 2^(number of encoder blocks)");
  }
  require(e.latent_dim > 0, "encoder.latent_dim", "must be positive");
  require(field.layers >= 2, "field.layers", "must be at least 2");
  require(field.hidden > 0, "field.hidden", "must be positive");
  require(field.out_channels > 0, "field.out_channels", "must be positive");
  require(hypernet.hidden > 0, "hypernet.hidden", "must be positive");
  require(hypernet.output_scale >= 0.0, "hypernet.output_scale", "must be non-negative");
  if (is_autoencoder(kind)) {
    require(!decoder.channels.empty(), "decoder.channels", "must not be empty");
    for (int c : decoder.channels) require(c > 0, "decoder.channels", "entries must be positive");
    require(e.image_size % (1 << decoder.channels.size()) == 0, "decoder.channels",
            "image_size must be divisible by 2^(number of decoder blocks)");
  }
  require(pose.frequencies > 0, "pose.frequencies", "must be positive");
  require(pose.dim > 0, "pose.dim", "must be positive");
  require(contrastive.embed_dim > 0, "contrastive.embed_dim", "must be positive");
  require(contrastive.temperature > 0.0, "contrastive.temperature", "must be positive");
  require(contrastive.momentum >= 0.0 && contrastive.momentum <= 1.0, "contrastive.momentum", "must lie in [0, 1]");
  if (kind == ModelKind::Zoo) {
    require(zoo.width_multiplier > 0.0, "zoo.width_multiplier", "must be positive");
    require(zoo.depth >= 1 && zoo.depth <= 5, "zoo.depth", "must lie in [1, 5]");
    require(e.image_size % (1 << zoo.depth) == 0, "zoo.depth", "image_size must be divisible by 2^depth");
    require(zoo.hidden > 0, "zoo.hidden", "must be positive");
    require(zoo.classes >= 2, "zoo.classes", "needs at least two families");
  }
}

ModelConfig preset_config(const std::string& preset, ModelKind kind) {
  ModelConfig c;
  c.kind = kind;
  c.preset = preset;
  if (preset == "desk") {
    // Defaults above.
  } else if (preset == "tiny") {
    c.encoder = {32, 1, {8, 8, 16}, 32};
    c.field = {8, 16, 1};
    c.hypernet.hidden = 16;
    c.decoder.channels = {16, 8, 8};
    c.pose = {6, 32};
    c.contrastive.embed_dim = 64;
    c.zoo.hidden = 32;
  } else if (preset == "paper") {
    c.encoder = {128, 3, {64, 128, 256, 512, 512}, 256};
    c.field = {8, 256, 3};
    c.hypernet.hidden = 256;
    c.decoder.channels = {512, 256, 128, 64, 32};
    c.pose = {6, 256};
    c.contrastive.embed_dim = 2048;
  } else {
    throw ConfigError("preset: unknown preset '" + preset + "' (expected desk, tiny or paper)");
  }
  return c;
}

json to_json(const ModelConfig& c) {
  return json{{"kind", to_string(c.kind)},
              {"preset", c.preset},
              {"encoder",
               {{"image_size", c.encoder.image_size},
                {"image_channels", c.encoder.image_channels},
                {"channels", c.encoder.channels},
                {"latent_dim", c.encoder.latent_dim}}},
              {"field", {{"layers", c.field.layers}, {"hidden", c.field.hidden}, {"out_channels", c.field.out_channels}}},
              {"hypernet", {{"hidden", c.hypernet.hidden}, {"output_scale", c.hypernet.output_scale}}},
              {"decoder", {{"channels", c.decoder.channels}}},
              {"pose", {{"frequencies", c.pose.frequencies}, {"dim", c.pose.dim}}},
              {"contrastive",
               {{"embed_dim", c.contrastive.embed_dim},
                {"temperature", c.contrastive.temperature},
                {"momentum", c.contrastive.momentum}}},
              {"zoo",
               {{"width_multiplier", c.zoo.width_multiplier},
                {"depth", c.zoo.depth},
                {"hidden", c.zoo.hidden},
                {"classes", c.zoo.classes}}}};
}

ModelConfig model_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("<root>: model config must be a JSON object");
  std::string kind_name = "lfn";
  read(j, "kind", kind_name, "<root>");
  std::string preset = "desk";
  read(j, "preset", preset, "<root>");
  ModelConfig c = preset_config(preset, model_kind_from_string(kind_name));
  auto section = [&](const char* name) -> const json& {
    static const json empty = json::object();
    if (!j.contains(name)) return empty;
    if (!j.at(name).is_object()) throw ConfigError(std::string(name) + ": must be an object");
    return j.at(name);
  };
  const json& e = section("encoder");
  read(e, "image_size", c.encoder.image_size, "encoder");
  read(e, "image_channels", c.encoder.image_channels, "encoder");
  read(e, "channels", c.encoder.channels, "encoder");
  read(e, "latent_dim", c.encoder.latent_dim, "encoder");
  const json& f = section("field");
  read(f, "layers", c.field.layers, "field");
  read(f, "hidden", c.field.hidden, "field");
  read(f, "out_channels", c.field.out_channels, "field");
  const json& h = section("hypernet");
  read(h, "hidden", c.hypernet.hidden, "hypernet");
  read(h, "output_scale", c.hypernet.output_scale, "hypernet");
  read(section("decoder"), "channels", c.decoder.channels, "decoder");
  const json& p = section("pose");
  read(p, "frequencies", c.pose.frequencies, "pose");
  read(p, "dim", c.pose.dim, "pose");
  const json& k = section("contrastive");
  read(k, "embed_dim", c.contrastive.embed_dim, "contrastive");
  read(k, "temperature", c.contrastive.temperature, "contrastive");
  read(k, "momentum", c.contrastive.momentum, "contrastive");
  const json& z = section("zoo");
  read(z, "width_multiplier", c.zoo.width_multiplier, "zoo");
  read(z, "depth", c.zoo.depth, "zoo");
  read(z, "hidden", c.zoo.hidden, "zoo");
  read(z, "classes", c.zoo.classes, "zoo");
  c.validate();
  return c;
}

std::size_t field_parameter_count(const FieldConfig& f) {
  const auto h = static_cast<std::size_t>(f.hidden);
  const auto c = static_cast<std::size_t>(f.out_channels);
  return (6 * h + h) + static_cast<std::size_t>(f.layers - 2) * (h * h + h) + (h * c + c);
}

int pose_encoding_length(const PoseEmbedConfig& p) { return 16 * 2 * p.frequencies; }

std::vector<int> zoo_channels(const ZooConfig& z) {
  static constexpr int kBase[5] = {8, 16, 32, 32, 32};
  std::vector<int> out;
  for (int d = 0; d < z.depth; ++d) {
    out.push_back(std::max(1, static_cast<int>(std::lround(kBase[d] * z.width_multiplier))));
  }
  return out;
}

}  // namespace viewmatch::fieldmodels
