// Copyright 2026 The viewmatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "viewmatch/cli/pipeline.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <map>
#include <set>

namespace viewmatch::cli {

using nlohmann::json;
namespace fs = std::filesystem;

std::string tool_version() { return VIEWMATCH_VERSION; }

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string file_digest(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CliError("cannot read " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return fnv1a_hex(bytes);
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string RunManifest::config_hash() const {
  json j{{"command", command}, {"options", options}, {"seed", seed}};
  json in = json::array();
  for (const auto& [p, d] : inputs) in.push_back(d);
  j["inputs"] = in;
  return fnv1a_hex(j.dump());
}

json to_json(const RunManifest& m) {
  json inputs = json::array();
  for (const auto& [p, d] : m.inputs) inputs.push_back({{"path", p}, {"digest", d}});
  return json{{"command", m.command}, {"argv", m.argv},       {"options", m.options},     {"config_hash", m.config_hash()},
              {"inputs", inputs},     {"outputs", m.outputs}, {"seed", m.seed},           {"started", m.started},
              {"finished", m.finished}, {"tool_version", m.version}};
}

RunManifest run_manifest_from_json(const json& j) {
  RunManifest m;
  try {
    m.command = j.at("command").get<std::string>();
    m.argv = j.at("argv").get<std::vector<std::string>>();
    m.options = j.at("options");
    for (const auto& i : j.at("inputs")) m.inputs.emplace_back(i.at("path").get<std::string>(), i.at("digest").get<std::string>());
    m.outputs = j.at("outputs").get<std::vector<std::string>>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.started = j.at("started").get<std::string>();
    m.finished = j.at("finished").get<std::string>();
    m.version = j.at("tool_version").get<std::string>();
  } catch (const json::exception& e) {
    throw CliError(std::string("malformed run manifest: ") + e.what());
  }
  return m;
}

void write_run_manifest(const fs::path& dir, const RunManifest& m) {
  fs::create_directories(dir);
  std::ofstream f(dir / "run.json");
  if (!f) throw CliError("cannot write " + (dir / "run.json").string());
  f << to_json(m).dump(2) << "\n";
}

RunManifest read_run_manifest(const fs::path& dir) {
  std::ifstream f(dir / "run.json");
  if (!f) throw CliError("no run manifest in " + dir.string());
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw CliError("cannot parse " + (dir / "run.json").string() + ": " + e.what());
  }
  return run_manifest_from_json(j);
}

void write_features(const fs::path& dir, const evalign::FeatureMatrix& f, const json& meta) {
  static_assert(std::endian::native == std::endian::little, "feature files are little-endian");
  fs::create_directories(dir);
  json rows = json::array();
  for (const auto& k : f.rows) rows.push_back(json::array({k.object_id, k.view_index}));
  json head = meta;
  head["tap"] = evalign::to_string(f.tap);
  head["rows"] = rows;
  head["dims"] = f.values.cols();
  head["data"] = "features.f64";
  std::ofstream h(dir / "features.json");
  h << head.dump(1) << "\n";
  std::ofstream d(dir / "features.f64", std::ios::binary);
  for (Eigen::Index r = 0; r < f.values.rows(); ++r) {
    for (Eigen::Index c = 0; c < f.values.cols(); ++c) {
      const double v = f.values(r, c);
      d.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
  }
  if (!h || !d) throw CliError("cannot write features to " + dir.string());
}

evalign::FeatureMatrix read_features(const fs::path& dir) {
  std::ifstream h(dir / "features.json");
  if (!h) throw CliError("no features.json in " + dir.string());
  json head;
  try {
    h >> head;
    std::vector<evalign::ViewKey> keys;
    for (const auto& r : head.at("rows")) keys.push_back({r.at(0).get<std::string>(), r.at(1).get<int>()});
    const auto dims = head.at("dims").get<Eigen::Index>();
    const auto n = static_cast<Eigen::Index>(keys.size());
    std::ifstream d(dir / head.at("data").get<std::string>(), std::ios::binary);
    if (!d) throw CliError("missing feature data in " + dir.string());
    Eigen::MatrixXd values(n, dims);
    for (Eigen::Index r = 0; r < n; ++r) {
      for (Eigen::Index c = 0; c < dims; ++c) {
        double v = 0.0;
        d.read(reinterpret_cast<char*>(&v), sizeof(v));
        values(r, c) = v;
      }
    }
    if (!d) throw CliError("truncated feature data in " + dir.string());
    return evalign::make_feature_matrix(evalign::tap_from_string(head.at("tap").get<std::string>()), keys, values);
  } catch (const json::exception& e) {
    throw CliError("malformed features.json in " + dir.string() + ": " + e.what());
  }
}

json to_json(const evalign::ModelOutcomes& m) {
  json out = json::array();
  for (double v : m.outcomes) out.push_back(static_cast<int>(v));
  return json{{"model", m.name}, {"tap", m.tap}, {"ties", m.ties}, {"trial_ids", m.trial_ids}, {"outcomes", out}};
}

evalign::ModelOutcomes model_outcomes_from_json(const json& j) {
  evalign::ModelOutcomes m;
  try {
    m.name = j.at("model").get<std::string>();
    m.tap = j.at("tap").get<std::string>();
    m.ties = j.at("ties").get<int>();
    m.trial_ids = j.at("trial_ids").get<std::vector<int>>();
    for (const auto& v : j.at("outcomes")) m.outcomes.push_back(v.get<int>() ? 1.0 : 0.0);
  } catch (const json::exception& e) {
    throw CliError(std::string("malformed outcomes: ") + e.what());
  }
  if (m.outcomes.size() != m.trial_ids.size()) throw CliError("outcomes: one outcome per trial id required");
  return m;
}

void write_outcomes(const fs::path& path, const evalign::ModelOutcomes& m) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw CliError("cannot write " + path.string());
  f << to_json(m).dump() << "\n";
}

evalign::ModelOutcomes read_outcomes(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw CliError("cannot open " + path.string());
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw CliError("cannot parse " + path.string() + ": " + e.what());
  }
  return model_outcomes_from_json(j);
}

renderview::DatasetManifest test_split(const renderview::DatasetManifest& m, const std::vector<int>& families) {
  auto out = m;
  out.records.clear();
  for (const auto& r : m.records) {
    if (r.split != shapegen::Split::Test) continue;
    if (!families.empty() && std::find(families.begin(), families.end(), r.family) == families.end()) continue;
    out.records.push_back(r);
  }
  return out;
}

namespace {

// Keeps only the listed views (objects without any are dropped).
trainer::TrainingData keep_views(const trainer::TrainingData& data, const std::set<evalign::ViewKey>& keep) {
  trainer::TrainingData out;
  out.intrinsics = data.intrinsics;
  out.num_families = data.num_families;
  for (const auto& o : data.objects) {
    trainer::ObjectViews v;
    v.object_id = o.object_id;
    v.family = o.family;
    for (std::size_t k = 0; k < o.view_indices.size(); ++k) {
      if (!keep.count({o.object_id, o.view_indices[k]})) continue;
      v.view_indices.push_back(o.view_indices[k]);
      v.poses.push_back(o.poses[k]);
      v.images.push_back(o.images[k]);
    }
    if (!v.view_indices.empty()) out.objects.push_back(std::move(v));
  }
  return out;
}

}  // namespace

FeatureResult compute_features(const FeatureRequest& req) {
  const auto loaded = trainer::load_trained(req.checkpoint);
  if (!evalign::tap_valid(loaded.model.kind, req.tap)) {
    throw CliError("tap " + evalign::to_string(req.tap) + " is not available for a " +
                   fieldmodels::to_string(loaded.model.kind) + " model");
  }
  const auto manifest = renderview::read_manifest(req.manifest);
  FeatureResult out;
  out.model_name = req.checkpoint.stem().string();
  out.checkpoint_id = loaded.checkpoint_id;

  auto test = trainer::load_training_data(manifest, shapegen::Split::Test, req.workers);
  if (req.trials) {
    std::set<evalign::ViewKey> keep;
    for (const auto* list : {&req.trials->trials, &req.trials->practice}) {
      for (const auto& t : *list) {
        keep.insert(t.sample.key());
        keep.insert(t.target.key());
        keep.insert(t.lure.key());
      }
    }
    test = keep_views(test, keep);
  }
  auto features = evalign::extract_features(loaded.model, loaded.params, test, req.tap, req.workers);

  int k = req.pca < 0 ? (req.tap == evalign::Tap::FieldWeights ? 150 : 0) : req.pca;
  if (k > 0) {
    std::vector<int> held;
    if (loaded.train.contains("holdout_families")) held = loaded.train.at("holdout_families").get<std::vector<int>>();
    auto [kept, dropped] = trainer::holdout_split(manifest, held);
    (void)dropped;
    auto fit_data = evalign::limit_views(trainer::load_training_data(kept, shapegen::Split::Train, req.workers), req.fit_views);
    if (fit_data.objects.empty()) throw CliError("PCA needs training-split views in " + req.manifest.string());
    const auto fit = evalign::extract_features(loaded.model, loaded.params, fit_data, req.tap, req.workers);
    const int limit = static_cast<int>(std::min(fit.values.rows(), fit.values.cols()));
    if (k > limit) {
      out.notes.push_back("pca: " + std::to_string(k) + " components requested, fit set supports " +
                          std::to_string(limit) + "; using " + std::to_string(limit));
      k = limit;
    }
    features = evalign::pca_reduce(fit, features, k);
    out.pca_components = k;
  }
  out.features = std::move(features);
  return out;
}

}  // namespace viewmatch::cli
