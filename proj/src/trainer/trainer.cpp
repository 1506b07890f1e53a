// Copyright 2026 The viewmatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "viewmatch/trainer/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>

#include "viewmatch/common/parallel.hpp"
#include "viewmatch/common/rng.hpp"
#include "viewmatch/diffcore/checkpoint.hpp"
#include "viewmatch/diffcore/engine.hpp"

namespace viewmatch::trainer {

using diffcore::Binding;
using diffcore::ParameterSet;
using diffcore::PassResult;
using diffcore::Tape;
using diffcore::Tensor;
using diffcore::Var;
using fieldmodels::ConfigError;
using fieldmodels::ModelConfig;
using fieldmodels::ModelKind;
using nlohmann::json;

namespace {

void require(bool ok, const std::string& path, const std::string& what) {
  if (!ok) throw ConfigError(path + ": " + what);
}

template <typename V>
void read(const json& j, const char* key, V& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const json::exception&) {
    throw ConfigError(std::string(key) + ": wrong type");
  }
}

std::string hex_digest(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void check_resolution(const ModelConfig& model, const TrainingData& data) {
  if (data.objects.empty()) throw TrainingError("training data is empty");
  const int s = model.encoder.image_size;
  if (data.intrinsics.width != s || data.intrinsics.height != s) {
    throw TrainingError("model expects " + std::to_string(s) + "x" + std::to_string(s) + " images, dataset has " +
                        std::to_string(data.intrinsics.height) + "x" + std::to_string(data.intrinsics.width));
  }
}

void require_views(const TrainingData& data, std::size_t n, const char* what) {
  for (const auto& o : data.objects) {
    if (o.images.size() < n) {
      throw TrainingError(std::string(what) + ": object " + o.object_id + " has " + std::to_string(o.images.size()) +
                          " view(s), needs at least " + std::to_string(n));
    }
  }
}

// A view index different from `i`.
int other_view(Rng& rng, int i, int views) {
  const int j = static_cast<int>(uniform_int(rng, 0, views - 2));
  return j >= i ? j + 1 : j;
}

struct Item {
  int object = 0;
  int input = 0;
  int target = 0;
  std::vector<int> pixels;
};

using BatchFn = std::function<PassResult<float>(const ParameterSet<float>&, const std::vector<int>&, std::uint64_t)>;
using PostStep = std::function<void(const ParameterSet<float>&)>;

// Shared epoch loop: seeded object order, Adam, logging, divergence checks.
TrainResult run_loop(const TrainConfig& cfg, const TrainingData& data, ModelConfig model, const char* label,
                     const BatchFn& batch_fn, int min_batch = 1, const PostStep& post = {}) {
  cfg.validate();
  model.validate();
  check_resolution(model, data);
  const int n = static_cast<int>(data.objects.size());
  const int batch = std::min(cfg.batch_size, n);
  if (batch < min_batch) {
    throw TrainingError(std::string(label) + ": needs batches of at least " + std::to_string(min_batch) + " objects");
  }
  TrainResult out;
  out.model = model;
  out.params = fieldmodels::init_model(model, derive_seed(cfg.seed, {0x1417}));
  diffcore::Adam adam(cfg.adam);
  const auto t0 = std::chrono::steady_clock::now();
  std::int64_t step = 0;
  const int steps_per_epoch = n / batch;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    Rng order_rng(derive_seed(cfg.seed, {0x0e9c, static_cast<std::uint64_t>(epoch)}));
    shuffle_range(order.begin(), order.end(), order_rng);
    double epoch_sum = 0.0;
    int epoch_steps = 0;
    for (int b = 0; b < steps_per_epoch; ++b) {
      if (cfg.max_steps > 0 && step >= cfg.max_steps) break;
      const std::vector<int> objs(order.begin() + b * batch, order.begin() + (b + 1) * batch);
      const auto step_seed = derive_seed(cfg.seed, {0x57e9, static_cast<std::uint64_t>(step)});
      const auto where = std::string(label) + " diverged at step " + std::to_string(step) + " (epoch " +
                         std::to_string(epoch) + "): ";
      PassResult<float> res;
      try {
        res = batch_fn(out.params, objs, step_seed);
        if (!std::isfinite(res.loss)) throw TrainingError("loss is " + std::to_string(res.loss));
        adam.step(out.params, res.grads);
      } catch (const diffcore::NonFiniteError& e) {
        throw DivergenceError(where + e.what());
      } catch (const DivergenceError&) {
        throw;
      } catch (const TrainingError& e) {
        throw DivergenceError(where + e.what());
      }
      if (post) post(out.params);
      ++step;
      const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      out.record.log.push_back({step, epoch, static_cast<double>(res.loss), wall});
      epoch_sum += res.loss;
      ++epoch_steps;
    }
    if (epoch_steps > 0) out.record.epoch_loss.push_back(epoch_sum / epoch_steps);
    if (cfg.max_steps > 0 && step >= cfg.max_steps) break;
  }
  out.record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

// Runs `shard_fn(tape, binding, items, weight)` over cfg.shards contiguous
// slices of the batch; `weight` is the slice's share of the batch so the
// summed loss is the batch mean.
template <typename ShardFn>
PassResult<float> sharded(const TrainConfig& cfg, const ParameterSet<float>& params, const std::vector<Item>& items,
                          ShardFn&& shard_fn) {
  const std::size_t n = items.size();
  const std::size_t shards = std::min<std::size_t>(static_cast<std::size_t>(cfg.shards), n);
  return diffcore::forward_backward_sharded(
      params, shards, static_cast<std::size_t>(resolve_workers(cfg.workers)),
      [&](std::size_t s, Tape<float>& tape, const Binding<float>& bind) {
        const std::vector<Item> part(items.begin() + static_cast<std::ptrdiff_t>(s * n / shards),
                                     items.begin() + static_cast<std::ptrdiff_t>((s + 1) * n / shards));
        return shard_fn(tape, bind, part, static_cast<double>(part.size()) / static_cast<double>(n));
      });
}

std::vector<std::pair<int, int>> input_refs(const std::vector<Item>& items) {
  std::vector<std::pair<int, int>> refs;
  for (const auto& it : items) refs.emplace_back(it.object, it.input);
  return refs;
}

std::vector<std::pair<int, int>> target_refs(const std::vector<Item>& items) {
  std::vector<std::pair<int, int>> refs;
  for (const auto& it : items) refs.emplace_back(it.object, it.target);
  return refs;
}

std::vector<renderview::CameraPose> target_poses(const TrainingData& data, const std::vector<Item>& items) {
  std::vector<renderview::CameraPose> poses;
  for (const auto& it : items) poses.push_back(data.objects[static_cast<std::size_t>(it.object)].poses[static_cast<std::size_t>(it.target)]);
  return poses;
}

void assert_distinct(const std::vector<Item>& items, const char* label) {
  for (const auto& it : items) {
    if (it.input == it.target) throw std::logic_error(std::string(label) + ": target view equals input view");
  }
}

}  // namespace

void TrainConfig::validate() const {
  model.validate();
  require(epochs >= 1, "epochs", "must be at least 1");
  require(batch_size >= 1, "batch_size", "must be at least 1");
  require(adam.learning_rate > 0.0, "adam.learning_rate", "must be positive");
  require(adam.beta1 >= 0.0 && adam.beta1 < 1.0, "adam.beta1", "must lie in [0, 1)");
  require(adam.beta2 >= 0.0 && adam.beta2 < 1.0, "adam.beta2", "must lie in [0, 1)");
  require(adam.epsilon > 0.0, "adam.epsilon", "must be positive");
  require(rays_per_view >= 0, "rays_per_view", "must be non-negative");
  require(max_steps >= 0, "max_steps", "must be non-negative");
  require(shards >= 1, "shards", "must be at least 1");
  require(workers >= 0, "workers", "must be non-negative (0 = all cores)");
  for (int f : holdout_families) require(f >= 0, "holdout_families", "entries must be non-negative");
}

json to_json(const TrainConfig& c) {
  return json{{"model", fieldmodels::to_json(c.model)},
              {"manifest", c.manifest},
              {"holdout_families", c.holdout_families},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"adam",
               {{"learning_rate", c.adam.learning_rate},
                {"beta1", c.adam.beta1},
                {"beta2", c.adam.beta2},
                {"epsilon", c.adam.epsilon}}},
              {"seed", c.seed},
              {"rays_per_view", c.rays_per_view},
              {"same_view", c.same_view},
              {"max_steps", c.max_steps},
              {"shards", c.shards},
              {"workers", c.workers}};
}

TrainConfig train_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("<root>: train config must be a JSON object");
  TrainConfig c;
  if (j.contains("model")) {
    try {
      c.model = fieldmodels::model_config_from_json(j.at("model"));
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("model.") + e.what());
    }
  }
  read(j, "manifest", c.manifest);
  read(j, "holdout_families", c.holdout_families);
  read(j, "epochs", c.epochs);
  read(j, "batch_size", c.batch_size);
  if (j.contains("adam")) {
    const auto& a = j.at("adam");
    if (!a.is_object()) throw ConfigError("adam: must be an object");
    try {
      if (a.contains("learning_rate")) c.adam.learning_rate = a.at("learning_rate").get<double>();
      if (a.contains("beta1")) c.adam.beta1 = a.at("beta1").get<double>();
      if (a.contains("beta2")) c.adam.beta2 = a.at("beta2").get<double>();
      if (a.contains("epsilon")) c.adam.epsilon = a.at("epsilon").get<double>();
    } catch (const json::exception&) {
      throw ConfigError("adam: wrong type");
    }
  }
  read(j, "seed", c.seed);
  read(j, "rays_per_view", c.rays_per_view);
  read(j, "same_view", c.same_view);
  read(j, "max_steps", c.max_steps);
  read(j, "shards", c.shards);
  read(j, "workers", c.workers);
  c.validate();
  return c;
}

TrainingData load_training_data(const renderview::DatasetManifest& m, shapegen::Split split, int workers) {
  TrainingData data;
  std::vector<std::vector<std::size_t>> groups;
  for (auto& g : m.by_object()) {
    if (m.records[g.front()].split == split) groups.push_back(std::move(g));
  }
  if (groups.empty()) return data;
  data.intrinsics = m.records[groups.front().front()].intrinsics;
  data.objects.resize(groups.size());
  parallel_for(groups.size(), workers, [&](std::size_t k) {
    auto& obj = data.objects[k];
    for (std::size_t idx : groups[k]) {
      const auto& r = m.records[idx];
      if (r.intrinsics.width != data.intrinsics.width || r.intrinsics.height != data.intrinsics.height ||
          r.intrinsics.fov_deg != data.intrinsics.fov_deg) {
        throw TrainingError("view " + r.path + " has different intrinsics from the rest of the split");
      }
      obj.object_id = r.object_id;
      obj.family = r.family;
      obj.view_indices.push_back(r.view_index);
      obj.poses.push_back(r.pose);
      const auto img = m.load_image(r);
      std::vector<std::uint8_t> px(img.pixels.size());
      for (std::size_t i = 0; i < px.size(); ++i) {
        px[i] = static_cast<std::uint8_t>(std::lround(std::clamp(img.pixels[i], 0.0f, 1.0f) * 255.0f));
      }
      obj.images.push_back(std::move(px));
    }
  });
  for (const auto& o : data.objects) data.num_families = std::max(data.num_families, o.family + 1);
  return data;
}

std::pair<renderview::DatasetManifest, renderview::DatasetManifest> holdout_split(
    const renderview::DatasetManifest& m, const std::vector<int>& families) {
  std::set<int> present;
  for (const auto& r : m.records) present.insert(r.family);
  const std::set<int> held(families.begin(), families.end());
  for (int f : held) {
    if (!present.count(f)) throw TrainingError("holdout family " + std::to_string(f) + " does not occur in the manifest");
  }
  auto keep = m, out = m;
  keep.records.clear();
  out.records.clear();
  for (const auto& r : m.records) (held.count(r.family) ? out : keep).records.push_back(r);
  return {keep, out};
}

TrainingData prepare_training_data(const TrainConfig& cfg) {
  const auto manifest = renderview::read_manifest(cfg.manifest);
  const auto [train, held] = holdout_split(manifest, cfg.holdout_families);
  return load_training_data(train, shapegen::Split::Train, cfg.workers);
}

Tensor<float> image_batch(const TrainingData& data, const std::vector<std::pair<int, int>>& refs, int channels) {
  const auto h = static_cast<std::int64_t>(data.intrinsics.height);
  const auto w = static_cast<std::int64_t>(data.intrinsics.width);
  Tensor<float> out({static_cast<std::int64_t>(refs.size()), channels, h, w});
  auto dst = out.data();
  const auto plane = static_cast<std::size_t>(h * w);
  for (std::size_t b = 0; b < refs.size(); ++b) {
    const auto& src = data.objects.at(static_cast<std::size_t>(refs[b].first)).images.at(static_cast<std::size_t>(refs[b].second));
    for (int c = 0; c < channels; ++c) {
      float* row = dst.data() + (b * static_cast<std::size_t>(channels) + static_cast<std::size_t>(c)) * plane;
      for (std::size_t i = 0; i < plane; ++i) row[i] = static_cast<float>(src[i]) / 255.0f;
    }
  }
  return out;
}

TrainResult train_lfn(const TrainConfig& cfg, const TrainingData& data) {
  if (cfg.model.kind != ModelKind::Lfn) throw TrainingError("train_lfn: model kind is " + to_string(cfg.model.kind));
  require_views(data, cfg.same_view ? 1 : 2, "train_lfn");
  const int hw = data.intrinsics.width * data.intrinsics.height;
  const int rays = cfg.rays_per_view == 0 ? hw : std::min(cfg.rays_per_view, hw);
  const int out_c = cfg.model.field.out_channels;
  auto batch_fn = [&](const ParameterSet<float>& params, const std::vector<int>& objs, std::uint64_t seed) {
    std::vector<Item> items;
    for (std::size_t k = 0; k < objs.size(); ++k) {
      Rng rng(derive_seed(seed, {k}));
      const auto& o = data.objects[static_cast<std::size_t>(objs[k])];
      const int views = static_cast<int>(o.images.size());
      Item it;
      it.object = objs[k];
      it.input = static_cast<int>(uniform_int(rng, 0, views - 1));
      it.target = cfg.same_view ? it.input : other_view(rng, it.input, views);
      std::vector<int> all(static_cast<std::size_t>(hw));
      for (int p = 0; p < hw; ++p) all[static_cast<std::size_t>(p)] = p;
      if (rays < hw) {
        // Partial Fisher-Yates: the first `rays` entries are a uniform draw.
        for (int p = 0; p < rays; ++p) std::swap(all[static_cast<std::size_t>(p)], all[static_cast<std::size_t>(uniform_int(rng, p, hw - 1))]);
        all.resize(static_cast<std::size_t>(rays));
      }
      it.pixels = std::move(all);
      items.push_back(std::move(it));
    }
    if (!cfg.same_view) assert_distinct(items, "train_lfn");
    return sharded(cfg, params, items, [&](Tape<float>& tape, const Binding<float>& bind, const std::vector<Item>& part, double weight) {
      const auto images = tape.constant(image_batch(data, input_refs(part), cfg.model.encoder.image_channels));
      std::vector<std::vector<int>> pixels;
      Tensor<float> target({static_cast<std::int64_t>(part.size()), rays, out_c});
      auto t = target.data();
      for (std::size_t b = 0; b < part.size(); ++b) {
        pixels.push_back(part[b].pixels);
        const auto& img = data.objects[static_cast<std::size_t>(part[b].object)].images[static_cast<std::size_t>(part[b].target)];
        for (int r = 0; r < rays; ++r) {
          const float v = static_cast<float>(img[static_cast<std::size_t>(part[b].pixels[static_cast<std::size_t>(r)])]) / 255.0f;
          for (int c = 0; c < out_c; ++c) t[(b * static_cast<std::size_t>(rays) + static_cast<std::size_t>(r)) * static_cast<std::size_t>(out_c) + static_cast<std::size_t>(c)] = v;
        }
      }
      const auto layers = fieldmodels::hypernet_map(cfg.model, bind, fieldmodels::encode(cfg.model, bind, images));
      const auto rays_in = tape.constant(fieldmodels::plucker_pixels<float>(target_poses(data, part), data.intrinsics, pixels));
      const auto pred = fieldmodels::field_query(layers, rays_in);
      return diffcore::scale(diffcore::mse(pred, tape.constant(std::move(target))), weight);
    });
  };
  return run_loop(cfg, data, cfg.model, "lfn", batch_fn);
}

TrainResult train_autoencoder(const TrainConfig& cfg, const TrainingData& data) {
  const auto kind = cfg.model.kind;
  if (!fieldmodels::is_autoencoder(kind)) throw TrainingError("train_autoencoder: model kind is " + to_string(kind));
  const bool multi = kind == ModelKind::AeMultiView;
  require_views(data, multi && !cfg.same_view ? 2 : 1, "train_autoencoder");
  const int channels = cfg.model.encoder.image_channels;
  auto batch_fn = [&](const ParameterSet<float>& params, const std::vector<int>& objs, std::uint64_t seed) {
    std::vector<Item> items;
    for (std::size_t k = 0; k < objs.size(); ++k) {
      Rng rng(derive_seed(seed, {k}));
      const int views = static_cast<int>(data.objects[static_cast<std::size_t>(objs[k])].images.size());
      Item it;
      it.object = objs[k];
      it.input = static_cast<int>(uniform_int(rng, 0, views - 1));
      it.target = multi && !cfg.same_view ? other_view(rng, it.input, views) : it.input;
      items.push_back(it);
    }
    if (multi && !cfg.same_view) assert_distinct(items, "train_autoencoder");
    return sharded(cfg, params, items, [&](Tape<float>& tape, const Binding<float>& bind, const std::vector<Item>& part, double weight) {
      const auto images = tape.constant(image_batch(data, input_refs(part), channels));
      const auto target = tape.constant(image_batch(data, target_refs(part), channels));
      std::optional<Var<float>> pose;
      if (kind != ModelKind::AePlain) {
        // The view-conditioned variant embeds the input pose, which equals the target pose.
        pose = tape.constant(fieldmodels::pose_encoding_batch<float>(target_poses(data, part), cfg.model.pose.frequencies));
      }
      const auto out = fieldmodels::autoencoder_forward(cfg.model, bind, images, pose);
      return diffcore::scale(diffcore::mse(out.reconstruction, target), weight);
    });
  };
  return run_loop(cfg, data, cfg.model, to_string(kind).c_str(), batch_fn);
}

TrainResult train_contrastive(const TrainConfig& cfg, const TrainingData& data) {
  if (cfg.model.kind != ModelKind::Contrastive) {
    throw TrainingError("train_contrastive: model kind is " + to_string(cfg.model.kind));
  }
  require_views(data, 2, "train_contrastive");
  const auto& m = cfg.model;
  const int channels = m.encoder.image_channels;
  ParameterSet<float> key;
  bool key_ready = false;
  auto batch_fn = [&](const ParameterSet<float>& params, const std::vector<int>& objs, std::uint64_t seed) {
    if (!key_ready) {
      key = params;
      key_ready = true;
    }
    std::vector<Item> items;
    for (std::size_t k = 0; k < objs.size(); ++k) {
      Rng rng(derive_seed(seed, {k}));
      const int views = static_cast<int>(data.objects[static_cast<std::size_t>(objs[k])].images.size());
      Item it;
      it.object = objs[k];
      it.input = static_cast<int>(uniform_int(rng, 0, views - 1));
      it.target = other_view(rng, it.input, views);
      items.push_back(it);
    }
    assert_distinct(items, "train_contrastive");
    Tensor<float> keys;
    {
      Tape<float> ktape;
      Binding<float> kbind(ktape, key, false);
      const auto kimg = ktape.constant(image_batch(data, target_refs(items), channels));
      keys = fieldmodels::contrastive_embed(m, kbind, fieldmodels::encode(m, kbind, kimg)).value();
    }
    // The loss couples every row of the batch, so it is never sharded.
    return diffcore::forward_backward(params, [&](Tape<float>& tape, const Binding<float>& bind) {
      const auto q = fieldmodels::contrastive_embed(
          m, bind, fieldmodels::encode(m, bind, tape.constant(image_batch(data, input_refs(items), channels))));
      return fieldmodels::contrastive_loss(q, tape.constant(keys), m.contrastive.temperature);
    });
  };
  auto post = [&](const ParameterSet<float>& params) { fieldmodels::momentum_update(key, params, m.contrastive.momentum); };
  return run_loop(cfg, data, m, "contrastive", batch_fn, 2, post);
}

TrainResult train_zoo_member(const TrainConfig& cfg, const TrainingData& data) {
  if (cfg.model.kind != ModelKind::Zoo) throw TrainingError("train_zoo: model kind is " + to_string(cfg.model.kind));
  if (data.num_families < 2) throw TrainingError("train_zoo: needs at least two families, found " + std::to_string(data.num_families));
  ModelConfig model = cfg.model;
  model.zoo.classes = data.num_families;
  const int channels = model.encoder.image_channels;
  auto batch_fn = [&](const ParameterSet<float>& params, const std::vector<int>& objs, std::uint64_t seed) {
    std::vector<Item> items;
    for (std::size_t k = 0; k < objs.size(); ++k) {
      Rng rng(derive_seed(seed, {k}));
      const int views = static_cast<int>(data.objects[static_cast<std::size_t>(objs[k])].images.size());
      Item it;
      it.object = objs[k];
      it.input = it.target = static_cast<int>(uniform_int(rng, 0, views - 1));
      items.push_back(it);
    }
    return sharded(cfg, params, items, [&](Tape<float>& tape, const Binding<float>& bind, const std::vector<Item>& part, double weight) {
      std::vector<int> labels;
      for (const auto& it : part) labels.push_back(data.objects[static_cast<std::size_t>(it.object)].family);
      const auto out = fieldmodels::zoo_forward(model, bind, tape.constant(image_batch(data, input_refs(part), channels)));
      return diffcore::scale(diffcore::softmax_cross_entropy(out.logits, labels), weight);
    });
  };
  return run_loop(cfg, data, model, "zoo", batch_fn);
}

TrainConfig zoo_member_config(const TrainConfig& base, int k) {
  static constexpr double kWidths[3] = {0.5, 1.0, 2.0};
  static constexpr int kDepths[3] = {3, 4, 5};
  TrainConfig c = base;
  c.model.kind = ModelKind::Zoo;
  c.model.zoo.width_multiplier = kWidths[k % 3];
  c.model.zoo.depth = kDepths[(k + k / 3) % 3];
  c.seed = derive_seed(base.seed, {0x200, static_cast<std::uint64_t>(k)});
  return c;
}

std::vector<TrainResult> train_zoo(const TrainConfig& cfg, const TrainingData& data, int n_models) {
  if (n_models < 1) throw TrainingError("train_zoo: n_models must be positive");
  std::vector<TrainResult> out;
  for (int k = 0; k < n_models; ++k) out.push_back(train_zoo_member(zoo_member_config(cfg, k), data));
  return out;
}

TrainResult train(const TrainConfig& cfg, const TrainingData& data) {
  switch (cfg.model.kind) {
    case ModelKind::Lfn: return train_lfn(cfg, data);
    case ModelKind::AePlain:
    case ModelKind::AeViewConditioned:
    case ModelKind::AeMultiView: return train_autoencoder(cfg, data);
    case ModelKind::Contrastive: return train_contrastive(cfg, data);
    case ModelKind::Zoo: return train_zoo_member(cfg, data);
  }
  throw TrainingError("unknown model kind");
}

double zoo_accuracy(const ModelConfig& model, const ParameterSet<float>& params, const TrainingData& data) {
  std::vector<std::pair<int, int>> refs;
  for (std::size_t o = 0; o < data.objects.size(); ++o) {
    for (std::size_t v = 0; v < data.objects[o].images.size(); ++v) refs.emplace_back(static_cast<int>(o), static_cast<int>(v));
  }
  if (refs.empty()) throw TrainingError("zoo_accuracy: no views");
  std::size_t correct = 0;
  constexpr std::size_t kChunk = 64;
  for (std::size_t s = 0; s < refs.size(); s += kChunk) {
    const std::vector<std::pair<int, int>> part(refs.begin() + static_cast<std::ptrdiff_t>(s),
                                                refs.begin() + static_cast<std::ptrdiff_t>(std::min(refs.size(), s + kChunk)));
    Tape<float> tape;
    Binding<float> bind(tape, params, false);
    const auto logits = fieldmodels::zoo_forward(model, bind, tape.constant(image_batch(data, part, model.encoder.image_channels))).logits.value();
    const auto k = static_cast<std::size_t>(logits.dim(1));
    for (std::size_t b = 0; b < part.size(); ++b) {
      const float* row = logits.data().data() + b * k;
      const auto best = static_cast<int>(std::max_element(row, row + k) - row);
      if (best == data.objects[static_cast<std::size_t>(part[b].first)].family) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(refs.size());
}

std::string save_trained(const std::filesystem::path& path, const TrainConfig& cfg, const TrainResult& result) {
  diffcore::Checkpoint ck;
  ck.params = result.params;
  ck.step = result.record.log.empty() ? 0 : static_cast<std::uint64_t>(result.record.log.back().step);
  ck.config_json = json{{"model", fieldmodels::to_json(result.model)}, {"train", to_json(cfg)}}.dump();
  const auto bytes = diffcore::encode_checkpoint(ck);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw TrainingError("cannot write checkpoint " + path.string());
  return hex_digest(bytes);
}

LoadedModel load_trained(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw TrainingError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  auto ck = diffcore::decode_checkpoint(bytes);
  json echo;
  try {
    echo = json::parse(ck.config_json);
  } catch (const json::exception& e) {
    throw TrainingError("checkpoint " + path.string() + " has an unreadable config echo: " + e.what());
  }
  if (!echo.contains("model")) throw TrainingError("checkpoint " + path.string() + " has no model config");
  LoadedModel out;
  out.model = fieldmodels::model_config_from_json(echo.at("model"));
  out.train = echo.value("train", json::object());
  out.params = std::move(ck.params);
  out.checkpoint_id = hex_digest(bytes);
  return out;
}

void write_log_csv(const std::filesystem::path& path, const TrainRecord& record) {
  std::ofstream f(path);
  if (!f) throw TrainingError("cannot write " + path.string());
  f << "step,epoch,loss,wall_seconds\n";
  char buf[128];
  for (const auto& e : record.log) {
    std::snprintf(buf, sizeof(buf), "%lld,%d,%.9g,%.3f\n", static_cast<long long>(e.step), e.epoch, e.loss, e.wall_seconds);
    f << buf;
  }
}

}  // namespace viewmatch::trainer
