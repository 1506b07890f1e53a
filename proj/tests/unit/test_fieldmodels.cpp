// Copyright 2026 The viewmatch Authors
// SPDX-License-Identifier: Apache-2.0

#include <Eigen/Dense>
#include <cmath>
#include <cstring>

#include "doctest.h"
#include "viewmatch/common/rng.hpp"
#include "viewmatch/diffcore/engine.hpp"
#include "viewmatch/diffcore/gradcheck.hpp"
#include "viewmatch/fieldmodels/models.hpp"

using namespace viewmatch;
using namespace viewmatch::fieldmodels;
using diffcore::Shape;

namespace {

Tensor<float> random_images(std::int64_t b, int size, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<float> t({b, 1, size, size});
  for (auto& v : t.data()) v = static_cast<float>(uniform01(rng));
  return t;
}

// Smallest config that still runs every stage: 4x4 input, one conv block.
ModelConfig micro_lfn() {
  ModelConfig c = preset_config("tiny", ModelKind::Lfn);
  c.encoder = {4, 1, {2}, 3};
  c.field = {3, 4, 1};
  c.hypernet.hidden = 3;
  c.hypernet.output_scale = 1.0;
  return c;
}

std::vector<float> values(Var<float> v) {
  const auto d = v.value().data();
  return {d.begin(), d.end()};
}

}  // namespace

TEST_CASE("field parameter count") {
  // (6 -> 256), 6 x (256 -> 256), (256 -> 1).
  CHECK(field_parameter_count({8, 256, 1}) == (6 * 256 + 256) + 6 * (256 * 256 + 256) + (256 + 1));
  CHECK(field_parameter_count({8, 256, 3}) == (6 * 256 + 256) + 6 * (256 * 256 + 256) + (256 * 3 + 3));

  for (const char* preset : {"tiny", "desk"}) {
    const auto cfg = preset_config(preset, ModelKind::Lfn);
    const auto params = init_model(cfg, 1);
    Tape<float> tape;
    Binding<float> bind(tape, params, false);
    const auto lat = tape.constant(Tensor<float>({2, cfg.encoder.latent_dim}, 0.3f));
    const auto w = flatten_field_weights(hypernet_map(cfg, bind, lat));
    CHECK(w.shape() == Shape{2, static_cast<std::int64_t>(field_parameter_count(cfg.field))});
  }
}

TEST_CASE("plucker coordinates") {
  auto p = to_plucker({{0, 0, 0}, {0, 0, 1}});
  CHECK(p.m == std::array<double, 3>{0, 0, 0});
  p = to_plucker({{1, 0, 0}, {0, 0, 1}});
  CHECK(p.m[0] == 0.0);
  CHECK(p.m[1] == -1.0);
  CHECK(p.m[2] == 0.0);
  const auto shifted = to_plucker({{1, 0, 7}, {0, 0, 1}});
  CHECK(shifted.d == p.d);
  CHECK(shifted.m == p.m);
  CHECK_THROWS_AS(to_plucker({{1, 2, 3}, {0, 0, 0}}), std::invalid_argument);

  Rng rng(5);
  for (int k = 0; k < 2000; ++k) {
    renderview::Vec3 o(uniform(rng, -3, 3), uniform(rng, -3, 3), uniform(rng, -3, 3));
    renderview::Vec3 dir(standard_normal(rng), standard_normal(rng), standard_normal(rng));
    dir.normalize();
    const auto a = to_plucker({o, dir});
    double dm = 0.0;
    for (int c = 0; c < 3; ++c) dm += a.d[static_cast<std::size_t>(c)] * a.m[static_cast<std::size_t>(c)];
    CHECK(std::abs(dm) < 1e-9);
    const auto b = to_plucker({o + uniform(rng, -5, 5) * dir, dir});
    const auto fa = field_input(a), fb = field_input(b);
    CHECK(std::memcmp(fa.data(), fb.data(), sizeof(fa)) == 0);
  }
}

TEST_CASE("pose encoding") {
  const auto z = pose_encoding(renderview::Mat4::Zero(), 6);
  REQUIRE(z.size() == 16 * 2 * 6);
  for (std::size_t e = 0; e < 16; ++e) {
    for (std::size_t k = 0; k < 6; ++k) {
      CHECK(z[e * 12 + k] == 0.0);
      CHECK(z[e * 12 + 6 + k] == 1.0);
    }
  }
  CHECK(pose_encoding(renderview::Mat4::Identity(), 4).size() == 128);
  const auto pose = renderview::sample_pose_ring(3, 2.0);
  CHECK(pose_encoding(pose.cam_to_world, 6) == pose_encoding(pose.cam_to_world, 6));
  // Element (0,0) = x: first block is sin(pi x), sin(2 pi x), ...
  const double x = pose.cam_to_world(0, 0);
  const auto enc = pose_encoding(pose.cam_to_world, 3);
  CHECK(enc[1] == doctest::Approx(std::sin(2.0 * M_PI * x)));
  CHECK(enc[5] == doctest::Approx(std::cos(4.0 * M_PI * x)));
}

TEST_CASE("encoder") {
  const auto cfg = preset_config("tiny", ModelKind::Lfn);
  const auto params = init_model(cfg, 2);
  Tape<float> tape;
  Binding<float> bind(tape, params, false);
  auto imgs = random_images(1, 32, 1);
  Tensor<float> two({2, 1, 32, 32});
  std::copy(imgs.data().begin(), imgs.data().end(), two.data().begin());
  std::copy(imgs.data().begin(), imgs.data().end(), two.data().begin() + 32 * 32);
  const auto lat = encode(cfg, bind, tape.constant(two));
  CHECK(lat.shape() == Shape{2, 32});
  CHECK(lat.value().all_finite());
  const auto v = values(lat);
  CHECK(std::equal(v.begin(), v.begin() + 32, v.begin() + 32));
  CHECK_THROWS_AS(encode(cfg, bind, tape.constant(random_images(1, 16, 1))), diffcore::ShapeError);
}

TEST_CASE("zero field weights give 0.5 everywhere") {
  const auto cfg = preset_config("tiny", ModelKind::Lfn);
  Tape<float> tape;
  FieldLayers<float> layers;
  const int h = cfg.field.hidden;
  std::vector<std::pair<int, int>> dims{{6, h}};
  for (int l = 0; l < cfg.field.layers - 2; ++l) dims.emplace_back(h, h);
  dims.emplace_back(h, 1);
  for (auto [in, out] : dims) {
    layers.weights.push_back(tape.constant(Tensor<float>({1, in, out})));
    layers.biases.push_back(tape.constant(Tensor<float>({1, 1, out})));
  }
  const auto img = render_field(layers, {renderview::sample_pose_sphere(1, 2.0)}, renderview::Intrinsics{8, 8, 45});
  CHECK(img.shape() == Shape{1, 64, 1});
  for (float v : img.value().data()) CHECK(v == 0.5f);

  const auto one = render_field(layers, {renderview::sample_pose_sphere(1, 2.0)}, renderview::Intrinsics{1, 1, 45});
  CHECK(one.shape() == Shape{1, 1, 1});
}

TEST_CASE("hypernetwork is deterministic and Lipschitz in the latents") {
  const auto cfg = preset_config("tiny", ModelKind::Lfn);
  const auto params = init_model(cfg, 3);
  Rng rng(11);
  auto run = [&](const Tensor<float>& lat) {
    Tape<float> tape;
    Binding<float> bind(tape, params, false);
    const auto layers = hypernet_map(cfg, bind, tape.constant(lat));
    std::vector<std::vector<float>> out;
    for (const auto& f : layers.flat) out.push_back(values(f));
    return out;
  };
  Tensor<float> lat({1, cfg.encoder.latent_dim});
  for (auto& v : lat.data()) v = static_cast<float>(standard_normal(rng));
  const auto base = run(lat);
  CHECK(base == run(lat));

  auto spectral = [&](const std::string& name) {
    const auto& t = params.at(name);
    Eigen::MatrixXd m(t.dim(0), t.dim(1));
    for (std::int64_t i = 0; i < t.dim(0); ++i) {
      for (std::int64_t j = 0; j < t.dim(1); ++j) m(i, j) = t.data()[static_cast<std::size_t>(i * t.dim(1) + j)];
    }
    return Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues()(0);
  };
  for (int trial = 0; trial < 20; ++trial) {
    Tensor<float> moved = lat;
    double norm2 = 0.0;
    const double eps = std::pow(10.0, -uniform(rng, 0.0, 3.0));
    for (auto& v : moved.data()) {
      const double dv = eps * standard_normal(rng);
      v = static_cast<float>(v + dv);
      norm2 += dv * dv;
    }
    // Actual perturbation after float rounding.
    norm2 = 0.0;
    for (std::size_t k = 0; k < moved.data().size(); ++k) {
      const double dv = static_cast<double>(moved.data()[k]) - lat.data()[k];
      norm2 += dv * dv;
    }
    // The hypernetwork reads sqrt(d) * latents / |latents|, whose Lipschitz
    // constant is sqrt(d) / min(|a|, |b|) between a and b.
    double na = 0.0, nb = 0.0;
    for (std::size_t k = 0; k < moved.data().size(); ++k) {
      na += static_cast<double>(lat.data()[k]) * lat.data()[k];
      nb += static_cast<double>(moved.data()[k]) * moved.data()[k];
    }
    const double normalize_lip = std::sqrt(static_cast<double>(cfg.encoder.latent_dim)) / std::sqrt(std::min(na, nb));
    const auto out = run(moved);
    for (std::size_t l = 0; l < out.size(); ++l) {
      double diff2 = 0.0;
      for (std::size_t k = 0; k < out[l].size(); ++k) {
        const double dv = static_cast<double>(out[l][k]) - base[l][k];
        diff2 += dv * dv;
      }
      const std::string name = "hyp." + std::to_string(l);
      const double bound = normalize_lip * spectral(name + ".l1.w") * hypernet_output_gain(cfg) * spectral(name + ".l2.w") * std::sqrt(norm2);
      CHECK(std::sqrt(diff2) <= bound * (1.0 + 1e-3) + 1e-5);
    }
  }
}

TEST_CASE("autoencoder variants") {
  for (auto kind : {ModelKind::AePlain, ModelKind::AeViewConditioned, ModelKind::AeMultiView}) {
    const auto cfg = preset_config("tiny", kind);
    const auto params = init_model(cfg, 4);
    Tape<float> tape;
    Binding<float> bind(tape, params, false);
    const auto imgs = tape.constant(random_images(2, 32, 2));
    if (kind == ModelKind::AePlain) {
      const auto out = autoencoder_forward<float>(cfg, bind, imgs, std::nullopt);
      CHECK(out.reconstruction.shape() == imgs.shape());
      CHECK_THROWS(autoencoder_forward<float>(cfg, bind, imgs, tape.constant(Tensor<float>({2, 192}))));
      CHECK(!params.contains("pose.w"));
    } else {
      CHECK_THROWS_AS(autoencoder_forward<float>(cfg, bind, imgs, std::nullopt), std::invalid_argument);
      const std::vector<renderview::CameraPose> p1{renderview::sample_pose_ring(1, 2.0), renderview::sample_pose_ring(1, 2.0)};
      const std::vector<renderview::CameraPose> p2{renderview::sample_pose_ring(2, 2.0), renderview::sample_pose_ring(2, 2.0)};
      const auto e1 = pose_embed(cfg, bind, tape.constant(pose_encoding_batch<float>(p1, cfg.pose.frequencies)));
      const auto e2 = pose_embed(cfg, bind, tape.constant(pose_encoding_batch<float>(p2, cfg.pose.frequencies)));
      CHECK(values(e1) != values(e2));
      const auto o1 = autoencoder_forward<float>(cfg, bind, imgs, tape.constant(pose_encoding_batch<float>(p1, 6)));
      const auto o2 = autoencoder_forward<float>(cfg, bind, imgs, tape.constant(pose_encoding_batch<float>(p2, 6)));
      CHECK(values(o1.latents) == values(o2.latents));
      CHECK(values(o1.reconstruction) != values(o2.reconstruction));
      CHECK(o1.reconstruction.shape() == imgs.shape());
    }
  }
  CHECK(init_model(preset_config("tiny", ModelKind::AePlain), 1).total_elements() !=
        init_model(preset_config("tiny", ModelKind::AeViewConditioned), 1).total_elements());
}

TEST_CASE("contrastive loss") {
  Tape<double> tape;
  const auto q = tape.constant(Tensor<double>({2, 2}, std::vector<double>{1, 0, 0, 1}));
  const auto k = tape.constant(Tensor<double>({2, 2}, std::vector<double>{1, 0, 0, 1}));
  // Each row: -log(e / (e + 1)).
  CHECK(contrastive_loss(q, k, 1.0).value().item() == doctest::Approx(-std::log(std::exp(1.0) / (std::exp(1.0) + 1.0))));
  CHECK(contrastive_loss(q, k, 1.0).value().item() == doctest::Approx(0.3133).epsilon(1e-4));

  const auto same = tape.constant(Tensor<double>({5, 3}, 0.7));
  CHECK(contrastive_loss(same, same, 0.1).value().item() == doctest::Approx(std::log(5.0)));
  const auto single = tape.constant(Tensor<double>({1, 3}, 0.7));
  CHECK_THROWS_AS(contrastive_loss(single, single, 0.1), std::invalid_argument);

  const auto cfg = preset_config("tiny", ModelKind::Contrastive);
  const auto params = init_model(cfg, 5);
  Tape<float> ft;
  Binding<float> bind(ft, params, false);
  const auto emb = contrastive_embed(cfg, bind, encode(cfg, bind, ft.constant(random_images(3, 32, 3))));
  CHECK(emb.shape() == Shape{3, cfg.contrastive.embed_dim});
  const auto ev = values(emb);
  for (int r = 0; r < 3; ++r) {
    double n = 0.0;
    for (int c = 0; c < cfg.contrastive.embed_dim; ++c) n += ev[static_cast<std::size_t>(r * cfg.contrastive.embed_dim + c)] * ev[static_cast<std::size_t>(r * cfg.contrastive.embed_dim + c)];
    CHECK(std::abs(std::sqrt(n) - 1.0) < 1e-6);
  }

  auto key = params;
  auto query = init_model(cfg, 6);
  momentum_update(key, query, 1.0);
  CHECK(key == params);
  momentum_update(key, query, 0.0);
  CHECK(key == query);
}

TEST_CASE("zoo members") {
  auto cfg = preset_config("tiny", ModelKind::Zoo);
  const auto a = init_model(cfg, 1);
  const auto b = init_model(cfg, 2);
  const auto imgs = random_images(2, 32, 9);
  auto pen = [&](const ParameterSet<float>& p) {
    Tape<float> tape;
    Binding<float> bind(tape, p, false);
    const auto out = zoo_forward(cfg, bind, tape.constant(imgs));
    CHECK(out.logits.shape() == Shape{2, cfg.zoo.classes});
    return values(out.penultimate);
  };
  CHECK(pen(a) != pen(b));
  cfg.zoo.classes = 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.zoo.classes = 3;
  cfg.zoo.width_multiplier = 0.5;
  cfg.zoo.depth = 3;
  CHECK(zoo_channels(cfg.zoo) == std::vector<int>{4, 8, 16});
  CHECK_NOTHROW(init_model(cfg, 1));
}

TEST_CASE("model config json") {
  const auto cfg = preset_config("tiny", ModelKind::AeMultiView);
  const auto back = model_config_from_json(to_json(cfg));
  CHECK(to_json(back) == to_json(cfg));
  try {
    model_config_from_json(nlohmann::json{{"kind", "lfn"}, {"field", {{"hidden", -3}}}});
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).rfind("field.hidden:", 0) == 0);
  }
  CHECK_THROWS_AS(model_config_from_json(nlohmann::json{{"kind", "nope"}}), ConfigError);
  CHECK_THROWS_AS(model_config_from_json(nlohmann::json{{"encoder", {{"latent_dim", "x"}}}}), ConfigError);
}

TEST_CASE("end-to-end gradient check at 4x4") {
  const auto cfg = micro_lfn();
  const auto params = init_model(cfg, 7).cast<double>();
  const renderview::Intrinsics intr{4, 4, 50.0};
  const std::vector<renderview::CameraPose> poses{renderview::sample_pose_ring(1, 2.0), renderview::sample_pose_ring(2, 2.0)};
  Rng rng(3);
  Tensor<double> images({2, 1, 4, 4});
  for (auto& v : images.data()) v = uniform01(rng);
  Tensor<double> target({2, 16, 1});
  for (auto& v : target.data()) v = uniform01(rng);

  diffcore::GradCheckOptions opt;
  opt.coords_per_param = 12;
  const auto report = diffcore::grad_check(
      params,
      [&](Tape<double>& tape, const Binding<double>& bind) {
        const auto lat = encode(cfg, bind, tape.constant(images));
        const auto layers = hypernet_map(cfg, bind, lat);
        return diffcore::mse(render_field(layers, poses, intr), tape.constant(target));
      },
      opt);
  for (const auto& n : report.notes) MESSAGE(n);
  CHECK(report.passed);
  CHECK(report.max_rel_error < 1e-3);
  std::size_t checked = 0;
  for (const auto& p : report.params) checked += p.checked;
  CHECK(checked > 50);
}
