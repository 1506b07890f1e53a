// Copyright 2026 The viewmatch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "viewmatch/diffcore/ops.hpp"
#include "viewmatch/fieldmodels/config.hpp"
#include "viewmatch/fieldmodels/geometry.hpp"

// Model graphs. Every forward function records onto the tape of its inputs
// and reads parameters through a Binding, so the same code serves training
// (float), gradient checks (double) and inference.
namespace viewmatch::fieldmodels {

using diffcore::Binding;
using diffcore::ParameterSet;
using diffcore::Tape;
using diffcore::Tensor;
using diffcore::Var;

// Fresh parameters for the configured model, deterministic per seed.
ParameterSet<float> init_model(const ModelConfig& cfg, std::uint64_t seed);

// Image batch [B, C, S, S] -> latents [B, latent_dim]. Takes no pose.
template <typename T>
Var<T> encode(const ModelConfig& cfg, const Binding<T>& p, Var<T> images);

template <typename T>
struct FieldLayers {
  std::vector<Var<T>> weights;  // [B, in, out]
  std::vector<Var<T>> biases;   // [B, 1, out]
  // Per-layer raw hypernetwork outputs [B, in*out + out]; weights first.
  std::vector<Var<T>> flat;
};

// One two-layer MLP per field layer, each emitting that layer's weights and
// biases from the latents: out = l2.b + gain * relu(l1(z)) . l2.w, where
// z = sqrt(latent_dim) * latents / |latents|.
template <typename T>
FieldLayers<T> hypernet_map(const ModelConfig& cfg, const Binding<T>& p, Var<T> latents);

// Constant multiplier on the hypernetwork output projection, 1 / hidden.
// Without it an optimizer step on l2.w moves every field weight by roughly
// lr times the summed hidden activations, and the deep field saturates its
// sigmoid within a few steps. l2.w is initialised 1 / gain larger, so the
// initial field is unchanged.
double hypernet_output_gain(const ModelConfig& cfg);

// [B, field_parameter_count] in layer order.
template <typename T>
Var<T> flatten_field_weights(const FieldLayers<T>& layers);

// Plucker inputs [B, R, 6] -> values [B, R, C] in (0, 1). ReLU hidden layers,
// sigmoid output.
template <typename T>
Var<T> field_query(const FieldLayers<T>& layers, Var<T> rays);

// Query the field for every pixel of each pose: [B, H*W, C].
template <typename T>
Var<T> render_field(const FieldLayers<T>& layers, const std::vector<renderview::CameraPose>& poses,
                    const renderview::Intrinsics& intr);

// Pose encodings [B, 32 L] -> [B, pose.dim].
template <typename T>
Var<T> pose_embed(const ModelConfig& cfg, const Binding<T>& p, Var<T> encodings);

// Code [B, code_dim] -> image [B, C, S, S] in (0, 1).
template <typename T>
Var<T> decode(const ModelConfig& cfg, const Binding<T>& p, Var<T> code);

template <typename T>
struct AutoencoderOutput {
  Var<T> latents;
  Var<T> reconstruction;
};

// plain: decode(latents). view-conditioned: decode([latents, embed(pose of
// the input view)]). multi-view: decode([latents, embed(target pose)]).
// `pose_encodings` is required for the conditioned variants and must be
// absent for plain.
template <typename T>
AutoencoderOutput<T> autoencoder_forward(const ModelConfig& cfg, const Binding<T>& p, Var<T> images,
                                         std::optional<Var<T>> pose_encodings);

// Unit-norm projection [B, embed_dim] of the latents.
template <typename T>
Var<T> contrastive_embed(const ModelConfig& cfg, const Binding<T>& p, Var<T> latents);

// InfoNCE with cosine similarity: row i of `keys` is the positive for row i
// of `queries`, all other rows are negatives. Mean over rows.
template <typename T>
Var<T> contrastive_loss(Var<T> queries, Var<T> keys, double temperature);

template <typename T>
struct ZooOutput {
  Var<T> penultimate;
  Var<T> logits;
};

template <typename T>
ZooOutput<T> zoo_forward(const ModelConfig& cfg, const Binding<T>& p, Var<T> images);

// key <- m * key + (1 - m) * query, for every parameter present in both.
void momentum_update(ParameterSet<float>& key, const ParameterSet<float>& query, double momentum);

}  // namespace viewmatch::fieldmodels
