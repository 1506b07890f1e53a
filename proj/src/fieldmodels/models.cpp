// Copyright 2026 The viewmatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "viewmatch/fieldmodels/models.hpp"

#include <cmath>
#include <stdexcept>

#include "viewmatch/common/rng.hpp"

namespace viewmatch::fieldmodels {

namespace d = diffcore;

namespace {

using diffcore::Shape;

Tensor<float> normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor<float> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>(stddev * standard_normal(rng));
  return t;
}

void add_linear(ParameterSet<float>& ps, const std::string& name, int in, int out, double gain, Rng& rng) {
  ps.add(name + ".w", normal_tensor({in, out}, std::sqrt(gain / in), rng));
  ps.add(name + ".b", Tensor<float>({out}));
}

void add_conv(ParameterSet<float>& ps, const std::string& name, int in, int out, Rng& rng) {
  ps.add(name + ".w", normal_tensor({out, in, 3, 3}, std::sqrt(2.0 / (9.0 * in)), rng));
  ps.add(name + ".b", Tensor<float>({out}));
}

void add_conv_transpose(ParameterSet<float>& ps, const std::string& name, int in, int out, Rng& rng) {
  // Each output pixel of a stride-2 transposed conv receives on average
  // 9/4 taps per input channel.
  ps.add(name + ".w", normal_tensor({in, out, 3, 3}, std::sqrt(2.0 / (2.25 * in)), rng));
  ps.add(name + ".b", Tensor<float>({out}));
}

std::vector<std::pair<int, int>> field_layer_dims(const FieldConfig& f) {
  std::vector<std::pair<int, int>> dims;
  dims.emplace_back(6, f.hidden);
  for (int l = 0; l < f.layers - 2; ++l) dims.emplace_back(f.hidden, f.hidden);
  dims.emplace_back(f.hidden, f.out_channels);
  return dims;
}

int encoder_flat(const ModelConfig& cfg) {
  const int s = cfg.encoder.image_size >> cfg.encoder.channels.size();
  return cfg.encoder.channels.back() * s * s;
}

int code_dim(const ModelConfig& cfg) {
  return cfg.encoder.latent_dim + (cfg.kind == ModelKind::AePlain ? 0 : cfg.pose.dim);
}

template <typename T>
Var<T> linear(const Binding<T>& p, const std::string& name, Var<T> x) {
  return d::add(d::matmul(x, p[name + ".w"]), p[name + ".b"]);
}

template <typename T>
void check_images(const ModelConfig& cfg, Var<T> images) {
  const auto& s = images.shape();
  if (s.size() != 4 || s[1] != cfg.encoder.image_channels || s[2] != cfg.encoder.image_size ||
      s[3] != cfg.encoder.image_size) {
    throw d::ShapeError("image batch " + d::shape_string(s) + " does not match configured resolution " +
                        std::to_string(cfg.encoder.image_channels) + "x" + std::to_string(cfg.encoder.image_size) +
                        "x" + std::to_string(cfg.encoder.image_size));
  }
}

}  // namespace

double hypernet_output_gain(const ModelConfig& cfg) { return 1.0 / cfg.hypernet.hidden; }

ParameterSet<float> init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(seed, {0x1417}));
  ParameterSet<float> ps;
  if (cfg.kind == ModelKind::Zoo) {
    const auto ch = zoo_channels(cfg.zoo);
    int in = cfg.encoder.image_channels;
    for (std::size_t i = 0; i < ch.size(); ++i) {
      add_conv(ps, "zoo.conv" + std::to_string(i), in, ch[i], rng);
      in = ch[i];
    }
    const int s = cfg.encoder.image_size >> cfg.zoo.depth;
    add_linear(ps, "zoo.fc", in * s * s, cfg.zoo.hidden, 2.0, rng);
    add_linear(ps, "zoo.out", cfg.zoo.hidden, cfg.zoo.classes, 1.0, rng);
    return ps;
  }

  int in = cfg.encoder.image_channels;
  for (std::size_t i = 0; i < cfg.encoder.channels.size(); ++i) {
    add_conv(ps, "enc.conv" + std::to_string(i), in, cfg.encoder.channels[i], rng);
    in = cfg.encoder.channels[i];
  }
  add_linear(ps, "enc.head", encoder_flat(cfg), cfg.encoder.latent_dim, 1.0, rng);

  switch (cfg.kind) {
    case ModelKind::Lfn: {
      const auto dims = field_layer_dims(cfg.field);
      for (std::size_t l = 0; l < dims.size(); ++l) {
        const auto [fin, fout] = dims[l];
        const std::string name = "hyp." + std::to_string(l);
        const int outputs = fin * fout + fout;
        add_linear(ps, name + ".l1", cfg.encoder.latent_dim, cfg.hypernet.hidden, 2.0, rng);
        // The bias of the output layer holds a He-initialised base field
        // layer; the latent-dependent part starts as a smaller perturbation.
        const double field_std = std::sqrt((l + 1 == dims.size() ? 1.0 : 2.0) / fin);
        ps.add(name + ".l2.w", normal_tensor({cfg.hypernet.hidden, outputs},
                                             cfg.hypernet.output_scale * field_std / std::sqrt(cfg.hypernet.hidden) /
                                                 hypernet_output_gain(cfg),
                                             rng));
        Tensor<float> base({outputs});
        auto bd = base.data();
        for (int k = 0; k < fin * fout; ++k) bd[static_cast<std::size_t>(k)] = static_cast<float>(field_std * standard_normal(rng));
        ps.add(name + ".l2.b", std::move(base));
      }
      break;
    }
    case ModelKind::AePlain:
    case ModelKind::AeViewConditioned:
    case ModelKind::AeMultiView: {
      if (cfg.kind != ModelKind::AePlain) {
        add_linear(ps, "pose", pose_encoding_length(cfg.pose), cfg.pose.dim, 1.0, rng);
      }
      const auto& ch = cfg.decoder.channels;
      const int s = cfg.encoder.image_size >> ch.size();
      add_linear(ps, "dec.in", code_dim(cfg), ch[0] * s * s, 2.0, rng);
      for (std::size_t i = 0; i < ch.size(); ++i) {
        const int out = i + 1 < ch.size() ? ch[i + 1] : cfg.encoder.image_channels;
        add_conv_transpose(ps, "dec.up" + std::to_string(i), ch[i], out, rng);
      }
      break;
    }
    case ModelKind::Contrastive:
      add_linear(ps, "proj", cfg.encoder.latent_dim, cfg.contrastive.embed_dim, 2.0, rng);
      break;
    case ModelKind::Zoo:
      break;
  }
  return ps;
}

template <typename T>
Var<T> encode(const ModelConfig& cfg, const Binding<T>& p, Var<T> images) {
  check_images(cfg, images);
  Var<T> x = images;
  for (std::size_t i = 0; i < cfg.encoder.channels.size(); ++i) {
    const std::string name = "enc.conv" + std::to_string(i);
    x = d::relu(d::conv2d(x, p[name + ".w"], p[name + ".b"], 2));
  }
  x = d::reshape(x, {x.shape()[0], encoder_flat(cfg)});
  return linear(p, "enc.head", x);
}

template <typename T>
FieldLayers<T> hypernet_map(const ModelConfig& cfg, const Binding<T>& p, Var<T> latents) {
  if (latents.shape().size() != 2 || latents.shape()[1] != cfg.encoder.latent_dim) {
    throw d::ShapeError("hypernet_map: latents " + d::shape_string(latents.shape()) + " do not match latent_dim " +
                        std::to_string(cfg.encoder.latent_dim));
  }
  const auto b = latents.shape()[0];
  FieldLayers<T> out;
  const auto dims = field_layer_dims(cfg.field);
  const double gain = hypernet_output_gain(cfg);
  // Unit-RMS latents: the encoder's output scale varies with its init, and
  // the latent-dependent part of the field must not scale with it.
  const Var<T> z = d::scale(d::normalize_rows(latents), std::sqrt(static_cast<double>(cfg.encoder.latent_dim)));
  for (std::size_t l = 0; l < dims.size(); ++l) {
    const auto [fin, fout] = dims[l];
    const std::string name = "hyp." + std::to_string(l);
    const Var<T> h = d::relu(linear(p, name + ".l1", z));
    const Var<T> o = d::add(d::scale(d::matmul(h, p[name + ".l2.w"]), gain), p[name + ".l2.b"]);
    out.flat.push_back(o);
    out.weights.push_back(d::reshape(d::slice_last(o, 0, fin * fout), {b, fin, fout}));
    out.biases.push_back(d::reshape(d::slice_last(o, fin * fout, fin * fout + fout), {b, 1, fout}));
  }
  return out;
}

template <typename T>
Var<T> flatten_field_weights(const FieldLayers<T>& layers) {
  return d::concat_last(layers.flat);
}

template <typename T>
Var<T> field_query(const FieldLayers<T>& layers, Var<T> rays) {
  if (rays.shape().size() != 3 || rays.shape()[2] != 6) {
    throw d::ShapeError("field_query: rays must be [B, R, 6], got " + d::shape_string(rays.shape()));
  }
  Var<T> x = rays;
  for (std::size_t l = 0; l < layers.weights.size(); ++l) {
    x = d::add(d::batched_matmul(x, layers.weights[l]), layers.biases[l]);
    x = l + 1 < layers.weights.size() ? d::relu(x) : d::sigmoid(x);
  }
  return x;
}

template <typename T>
Var<T> render_field(const FieldLayers<T>& layers, const std::vector<renderview::CameraPose>& poses,
                    const renderview::Intrinsics& intr) {
  if (layers.weights.empty()) throw std::invalid_argument("render_field: empty field");
  Tape<T>* tape = layers.weights[0].tape;
  return field_query(layers, tape->constant(plucker_grid<T>(poses, intr)));
}

template <typename T>
Var<T> pose_embed(const ModelConfig& cfg, const Binding<T>& p, Var<T> encodings) {
  if (encodings.shape().size() != 2 || encodings.shape()[1] != pose_encoding_length(cfg.pose)) {
    throw diffcore::ShapeError("pose_embed: expected [B, " + std::to_string(pose_encoding_length(cfg.pose)) + "] encodings");
  }
  return linear(p, "pose", encodings);
}

template <typename T>
Var<T> decode(const ModelConfig& cfg, const Binding<T>& p, Var<T> code) {
  const auto& ch = cfg.decoder.channels;
  const int s = cfg.encoder.image_size >> ch.size();
  Var<T> x = d::relu(linear(p, "dec.in", code));
  x = d::reshape(x, {x.shape()[0], ch[0], s, s});
  for (std::size_t i = 0; i < ch.size(); ++i) {
    const std::string name = "dec.up" + std::to_string(i);
    x = d::conv_transpose2d(x, p[name + ".w"], p[name + ".b"]);
    x = i + 1 < ch.size() ? d::relu(x) : d::sigmoid(x);
  }
  return x;
}

template <typename T>
AutoencoderOutput<T> autoencoder_forward(const ModelConfig& cfg, const Binding<T>& p, Var<T> images,
                                         std::optional<Var<T>> pose_encodings) {
  if (!is_autoencoder(cfg.kind)) throw std::invalid_argument("autoencoder_forward: model is not an autoencoder");
  const bool conditioned = cfg.kind != ModelKind::AePlain;
  if (conditioned && !pose_encodings) {
    throw std::invalid_argument(to_string(cfg.kind) + " autoencoder requires a pose");
  }
  if (!conditioned && pose_encodings) throw std::invalid_argument("plain autoencoder takes no pose");
  AutoencoderOutput<T> out;
  out.latents = encode(cfg, p, images);
  Var<T> code = out.latents;
  if (conditioned) code = d::concat_last<T>({out.latents, pose_embed(cfg, p, *pose_encodings)});
  out.reconstruction = decode(cfg, p, code);
  return out;
}

template <typename T>
Var<T> contrastive_embed(const ModelConfig& cfg, const Binding<T>& p, Var<T> latents) {
  (void)cfg;
  return d::normalize_rows(linear(p, "proj", d::relu(latents)));
}

template <typename T>
Var<T> contrastive_loss(Var<T> queries, Var<T> keys, double temperature) {
  if (queries.shape().size() != 2 || queries.shape() != keys.shape()) {
    throw d::ShapeError("contrastive_loss: query and key batches must be [B, D] of equal shape");
  }
  const auto b = queries.shape()[0];
  if (b < 2) throw std::invalid_argument("contrastive_loss: batch size must be at least 2");
  if (!(temperature > 0.0)) throw std::invalid_argument("contrastive_loss: temperature must be positive");
  const Var<T> logits =
      d::scale(d::matmul_transposed(d::normalize_rows(queries), d::normalize_rows(keys)), 1.0 / temperature);
  std::vector<int> labels(static_cast<std::size_t>(b));
  for (std::int64_t i = 0; i < b; ++i) labels[static_cast<std::size_t>(i)] = static_cast<int>(i);
  return d::softmax_cross_entropy(logits, labels);
}

template <typename T>
ZooOutput<T> zoo_forward(const ModelConfig& cfg, const Binding<T>& p, Var<T> images) {
  check_images(cfg, images);
  Var<T> x = images;
  const auto ch = zoo_channels(cfg.zoo);
  for (std::size_t i = 0; i < ch.size(); ++i) {
    const std::string name = "zoo.conv" + std::to_string(i);
    x = d::relu(d::conv2d(x, p[name + ".w"], p[name + ".b"], 2));
  }
  const int s = cfg.encoder.image_size >> cfg.zoo.depth;
  x = d::reshape(x, {x.shape()[0], ch.back() * s * s});
  ZooOutput<T> out;
  out.penultimate = d::relu(linear(p, "zoo.fc", x));
  out.logits = linear(p, "zoo.out", out.penultimate);
  return out;
}

void momentum_update(ParameterSet<float>& key, const ParameterSet<float>& query, double momentum) {
  for (auto& [name, t] : key) {
    if (!query.contains(name)) continue;
    const auto& q = query.at(name);
    if (q.shape() != t.shape()) throw d::ShapeError("momentum_update: shape mismatch for '" + name + "'");
    auto kd = t.data();
    auto qd = q.data();
    for (std::size_t i = 0; i < kd.size(); ++i) {
      kd[i] = static_cast<float>(momentum * kd[i] + (1.0 - momentum) * qd[i]);
    }
  }
}

#define VIEWMATCH_INSTANTIATE(T)                                                                                  \
  template Var<T> encode<T>(const ModelConfig&, const Binding<T>&, Var<T>);                                        \
  template FieldLayers<T> hypernet_map<T>(const ModelConfig&, const Binding<T>&, Var<T>);                          \
  template Var<T> flatten_field_weights<T>(const FieldLayers<T>&);                                                 \
  template Var<T> field_query<T>(const FieldLayers<T>&, Var<T>);                                                   \
  template Var<T> render_field<T>(const FieldLayers<T>&, const std::vector<renderview::CameraPose>&,               \
                                  const renderview::Intrinsics&);                                                  \
  template Var<T> pose_embed<T>(const ModelConfig&, const Binding<T>&, Var<T>);                                    \
  template Var<T> decode<T>(const ModelConfig&, const Binding<T>&, Var<T>);                                        \
  template AutoencoderOutput<T> autoencoder_forward<T>(const ModelConfig&, const Binding<T>&, Var<T>,              \
                                                       std::optional<Var<T>>);                                     \
  template Var<T> contrastive_embed<T>(const ModelConfig&, const Binding<T>&, Var<T>);                             \
  template Var<T> contrastive_loss<T>(Var<T>, Var<T>, double);                                                     \
  template ZooOutput<T> zoo_forward<T>(const ModelConfig&, const Binding<T>&, Var<T>);

VIEWMATCH_INSTANTIATE(float)
VIEWMATCH_INSTANTIATE(double)

}  // namespace viewmatch::fieldmodels
