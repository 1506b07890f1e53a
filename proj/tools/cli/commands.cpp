// Copyright 2026 The viewmatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "viewmatch/cli/commands.hpp"

#include <atomic>
#include <cmath>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

#include "CLI11.hpp"
#include "viewmatch/cli/pipeline.hpp"
#include "viewmatch/cli/server.hpp"

namespace viewmatch::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Collects provenance while a subcommand runs and writes run.json at the end.
class Run {
 public:
  Run(const CLI::App& sub, const std::vector<std::string>& argv, std::uint64_t seed) {
    m_.command = sub.get_name();
    m_.argv = argv;
    m_.seed = seed;
    m_.version = tool_version();
    m_.started = utc_now();
    for (const auto* opt : sub.get_options()) {
      const auto name = opt->get_name(false, true);
      if (name == "--help" || name == "-h" || name == "--workers" || name == "--out") continue;
      const auto key = opt->get_single_name();
      if (opt->count() > 0) {
        const auto& r = opt->results();
        m_.options[key] = r.size() == 1 ? json(r.front()) : json(r);
      } else if (!opt->get_default_str().empty()) {
        m_.options[key] = opt->get_default_str();
      }
    }
  }

  void input(const fs::path& p) { m_.inputs.emplace_back(p.string(), file_digest(p)); }
  void output(const std::string& rel) { m_.outputs.push_back(rel); }

  void finish(const fs::path& dir) {
    m_.finished = utc_now();
    write_run_manifest(dir, m_);
  }

 private:
  RunManifest m_;
};

json read_json(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw CliError("cannot open " + p.string());
  try {
    json j;
    f >> j;
    return j;
  } catch (const json::exception& e) {
    throw CliError("cannot parse " + p.string() + ": " + e.what());
  }
}

void write_json(const fs::path& p, const json& j) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p);
  if (!f) throw CliError("cannot write " + p.string());
  f << j.dump(1) << "\n";
}

std::string fmt(double v, int prec = 3) {
  if (std::isnan(v)) return "nan";
  std::ostringstream s;
  s << std::fixed << std::setprecision(prec) << v;
  return s.str();
}

evalign::PairMode pair_mode(const std::string& s) {
  if (s == "within_family" || s == "within-family") return evalign::PairMode::WithinFamily;
  if (s == "any") return evalign::PairMode::Any;
  throw CliError("--mode: expected within_family or any, got '" + s + "'");
}

struct Shared {
  std::vector<std::string> argv;
  std::ostream* out;
  std::ostream* err;
};

// ---------------------------------------------------------------- gen-shapes

void add_gen_shapes(CLI::App& app, Shared& sh, std::function<void()>& action) {
  auto* sub = app.add_subcommand("gen-shapes", "Generate a procedural object catalog (train/test split by family)");
  struct O {
    int families = 3, per_family = 10, test_per_family = -1, workers = 1;
    double train_fraction = 0.8;
    std::vector<int> holdout;
    std::uint64_t seed = 0;
    bool meshes = false;
    std::string out;
  };
  auto o = std::make_shared<O>();
  sub->add_option("--families", o->families, "Number of shape families")->capture_default_str()->check(CLI::PositiveNumber);
  sub->add_option("--per-family", o->per_family, "Objects per family")->capture_default_str()->check(CLI::PositiveNumber);
  sub->add_option("--test-per-family", o->test_per_family, "Test objects per family (overrides --train-fraction)");
  sub->add_option("--train-fraction", o->train_fraction, "Fraction of each family in the train split")->capture_default_str();
  sub->add_option("--holdout", o->holdout, "Families placed entirely in the test split");
  sub->add_option("--seed", o->seed, "Catalog seed")->capture_default_str();
  sub->add_flag("--meshes", o->meshes, "Also write one OBJ file per object");
  sub->add_option("--workers", o->workers, "Threads for mesh generation")->capture_default_str();
  sub->add_option("--out", o->out, "Output directory")->required();
  sub->callback([sub, o, &sh, &action] {
    action = [sub, o, &sh] {
      auto fams = shapegen::default_families();
      if (o->families > static_cast<int>(fams.size())) {
        throw CliError("--families: at most " + std::to_string(fams.size()) + " families are defined");
      }
      fams.resize(static_cast<std::size_t>(o->families));
      shapegen::StimulusOptions so;
      so.objects_per_family = o->per_family;
      so.train_fraction = o->train_fraction;
      if (o->test_per_family >= 0) so.test_per_family = o->test_per_family;
      so.holdout_families = o->holdout;
      so.seed = o->seed;
      Run run(*sub, sh.argv, o->seed);
      const auto cat = shapegen::build_stimulus_set(fams, so);
      const fs::path dir = o->out;
      fs::create_directories(dir);
      if (o->meshes) {
        write_meshes(dir, cat, o->workers);
      } else {
        shapegen::write_catalog(dir / "catalog.json", cat);
      }
      run.output("catalog.json");
      run.finish(dir);
      *sh.out << "wrote " << cat.objects.size() << " objects to " << (dir / "catalog.json").string() << "\n";
    };
  });
}

// -------------------------------------------------------------------- render

void add_render(CLI::App& app, Shared& sh, std::function<void()>& action) {
  auto* sub = app.add_subcommand("render", "Render every catalog object from sampled viewpoints");
  struct O {
    std::string catalog, out, sampler = "ring";
    int views = 20, size = 64, workers = 1;
    double fov = 45.0, radius = 2.0, elevation = 45.0;
    std::uint64_t seed = 0;
    bool raw = false;
  };
  auto o = std::make_shared<O>();
  sub->add_option("--catalog", o->catalog, "catalog.json from gen-shapes")->required()->check(CLI::ExistingFile);
  sub->add_option("--views", o->views, "Views per object")->capture_default_str()->check(CLI::PositiveNumber);
  sub->add_option("--size", o->size, "Image width and height in pixels")->capture_default_str()->check(CLI::PositiveNumber);
  sub->add_option("--fov", o->fov, "Vertical field of view in degrees")->capture_default_str();
  sub->add_option("--sampler", o->sampler, "Viewpoint sampler: ring or sphere")->capture_default_str();
  sub->add_option("--radius", o->radius, "Camera distance from the origin")->capture_default_str();
  sub->add_option("--elevation", o->elevation, "Ring sampler elevation in degrees")->capture_default_str();
  sub->add_option("--seed", o->seed, "Viewpoint seed")->capture_default_str();
  sub->add_flag("--raw", o->raw, "Also write float32 images");
  sub->add_option("--workers", o->workers, "Render threads")->capture_default_str();
  sub->add_option("--out", o->out, "Output directory")->required();
  sub->callback([sub, o, &sh, &action] {
    action = [sub, o, &sh] {
      Run run(*sub, sh.argv, o->seed);
      run.input(o->catalog);
      const auto cat = shapegen::read_catalog(o->catalog);
      renderview::DatasetOptions opt;
      opt.views_per_object = o->views;
      opt.sampler = renderview::sampler_from_string(o->sampler);
      opt.radius = o->radius;
      opt.elevation_deg = o->elevation;
      opt.intrinsics = {o->size, o->size, o->fov};
      opt.seed = o->seed;
      opt.write_raw = o->raw;
      opt.workers = o->workers;
      const auto m = renderview::write_dataset(cat, opt, o->out);
      run.output("manifest.json");
      run.output("images/");
      run.finish(o->out);
      *sh.out << "rendered " << m.records.size() << " views to " << o->out << "\n";
    };
  });
}

// --------------------------------------------------------------------- train

void add_train(CLI::App& app, Shared& sh, std::function<void()>& action) {
  auto* sub = app.add_subcommand("train", "Train one model (or a zoo of classifiers) from a config file");
  struct O {
    std::string config, manifest, out, name;
    std::optional<std::uint64_t> seed;
    std::optional<int> epochs;
    std::optional<std::int64_t> max_steps;
    std::optional<std::vector<int>> holdout;
    int zoo_members = 0, workers = 1;
  };
  auto o = std::make_shared<O>();
  sub->add_option("--config", o->config, "Training config JSON")->required()->check(CLI::ExistingFile);
  sub->add_option("--manifest", o->manifest, "Dataset manifest (overrides the config)");
  sub->add_option("--seed", o->seed, "Training seed (overrides the config)");
  sub->add_option("--epochs", o->epochs, "Epochs (overrides the config)");
  sub->add_option("--max-steps", o->max_steps, "Stop after this many optimizer steps");
  sub->add_option("--holdout", o->holdout, "Families left out of training (overrides the config)");
  sub->add_option("--zoo-members", o->zoo_members, "Zoo configs: number of members to train")->capture_default_str();
  sub->add_option("--name", o->name, "Checkpoint file stem (default: model kind)");
  sub->add_option("--workers", o->workers, "Threads per batch (does not change results)")->capture_default_str();
  sub->add_option("--out", o->out, "Output directory")->required();
  sub->callback([sub, o, &sh, &action] {
    action = [sub, o, &sh] {
      auto cfg = trainer::train_config_from_json(read_json(o->config));
      if (!o->manifest.empty()) cfg.manifest = o->manifest;
      if (o->seed) cfg.seed = *o->seed;
      if (o->epochs) cfg.epochs = *o->epochs;
      if (o->max_steps) cfg.max_steps = *o->max_steps;
      if (o->holdout) cfg.holdout_families = *o->holdout;
      cfg.workers = o->workers;
      cfg.validate();
      Run run(*sub, sh.argv, cfg.seed);
      run.input(o->config);
      run.input(cfg.manifest);
      const fs::path dir = o->out;
      fs::create_directories(dir);
      write_json(dir / "train_config.json", trainer::to_json(cfg));
      run.output("train_config.json");
      const auto data = trainer::prepare_training_data(cfg);
      const auto stem = o->name.empty() ? fieldmodels::to_string(cfg.model.kind) : o->name;
      if (cfg.model.kind == fieldmodels::ModelKind::Zoo && o->zoo_members > 0) {
        const auto members = trainer::train_zoo(cfg, data, o->zoo_members);
        for (std::size_t k = 0; k < members.size(); ++k) {
          char buf[16];
          std::snprintf(buf, sizeof(buf), "_%02zu", k);
          const auto name = stem + buf;
          trainer::save_trained(dir / (name + ".ckpt"), trainer::zoo_member_config(cfg, static_cast<int>(k)), members[k]);
          trainer::write_log_csv(dir / (name + "_log.csv"), members[k].record);
          run.output(name + ".ckpt");
          run.output(name + "_log.csv");
          *sh.out << name << ": final epoch loss " << fmt(members[k].record.epoch_loss.back(), 5) << "\n";
        }
      } else {
        if (o->zoo_members > 0) throw CliError("--zoo-members needs a zoo model config");
        const auto result = trainer::train(cfg, data);
        const auto id = trainer::save_trained(dir / (stem + ".ckpt"), cfg, result);
        trainer::write_log_csv(dir / (stem + "_log.csv"), result.record);
        run.output(stem + ".ckpt");
        run.output(stem + "_log.csv");
        *sh.out << stem << ": " << result.record.log.size() << " steps, final epoch loss "
                << fmt(result.record.epoch_loss.back(), 5) << ", checkpoint " << id << "\n";
      }
      run.finish(dir);
    };
  });
}

// ----------------------------------------------------- extract / score shared

struct FeatureFlags {
  std::string manifest, tap = "latents";
  int pca = -1, fit_views = 1;
};

void add_feature_flags(CLI::App* sub, FeatureFlags& f) {
  sub->add_option("--manifest", f.manifest, "Dataset manifest (test split is scored, train split fits PCA)");
  sub->add_option("--tap", f.tap, "latents, field_weights, penultimate or embedding")->capture_default_str();
  sub->add_option("--pca", f.pca, "PCA components (-1: 150 for field_weights, none otherwise; 0: none)")->capture_default_str();
  sub->add_option("--fit-views", f.fit_views, "Training views per object in the PCA fit set (0: all)")->capture_default_str();
}

FeatureRequest feature_request(const FeatureFlags& f, const fs::path& checkpoint, int workers) {
  if (f.manifest.empty()) throw CliError("--manifest is required with --checkpoint");
  FeatureRequest req;
  req.checkpoint = checkpoint;
  req.manifest = f.manifest;
  req.tap = evalign::tap_from_string(f.tap);
  req.pca = f.pca;
  req.fit_views = f.fit_views;
  req.workers = workers;
  return req;
}

void add_extract(CLI::App& app, Shared& sh, std::function<void()>& action) {
  auto* sub = app.add_subcommand("extract", "Extract per-view features from a checkpoint");
  struct O {
    std::string checkpoint, trials, out;
    FeatureFlags f;
    int workers = 1;
  };
  auto o = std::make_shared<O>();
  sub->add_option("--checkpoint", o->checkpoint, "Trained model checkpoint")->required()->check(CLI::ExistingFile);
  add_feature_flags(sub, o->f);
  sub->add_option("--trials", o->trials, "Only extract views used by these trials");
  sub->add_option("--workers", o->workers, "Threads")->capture_default_str();
  sub->add_option("--out", o->out, "Output directory")->required();
  sub->callback([sub, o, &sh, &action] {
    action = [sub, o, &sh] {
      Run run(*sub, sh.argv, 0);
      run.input(o->checkpoint);
      auto req = feature_request(o->f, o->checkpoint, o->workers);
      run.input(req.manifest);
      if (!o->trials.empty()) {
        run.input(o->trials);
        req.trials = evalign::read_trials(o->trials);
      }
      const auto r = compute_features(req);
      for (const auto& n : r.notes) *sh.err << "note: " << n << "\n";
      write_features(o->out, r.features,
                     json{{"model", r.model_name}, {"checkpoint_id", r.checkpoint_id}, {"pca_components", r.pca_components}});
      run.output("features.json");
      run.output("features.f64");
      run.finish(o->out);
      *sh.out << "extracted " << r.features.values.rows() << " x " << r.features.values.cols() << " "
              << evalign::to_string(r.features.tap) << " features\n";
    };
  });
}

// --------------------------------------------------------------- build-trials

void add_build_trials(CLI::App& app, Shared& sh, std::function<void()>& action) {
  auto* sub = app.add_subcommand("build-trials", "Build candidate match-to-sample trials from test objects");
  struct O {
    std::string manifest, mode = "within_family", out;
    int pairs = 0;
    std::vector<int> families;
    std::uint64_t seed = 0;
  };
  auto o = std::make_shared<O>();
  sub->add_option("--manifest", o->manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  sub->add_option("--mode", o->mode, "Pairing: within_family or any")->capture_default_str();
  sub->add_option("--pairs", o->pairs, "Object pairs to keep (0: all)")->capture_default_str();
  sub->add_option("--families", o->families, "Restrict to these families");
  sub->add_option("--seed", o->seed, "Pairing and view seed")->capture_default_str();
  sub->add_option("--out", o->out, "Output directory")->required();
  sub->callback([sub, o, &sh, &action] {
    action = [sub, o, &sh] {
      Run run(*sub, sh.argv, o->seed);
      run.input(o->manifest);
      const auto test = test_split(renderview::read_manifest(o->manifest), o->families);
      const auto set = evalign::build_trials(test, pair_mode(o->mode), o->pairs, o->seed);
      evalign::write_trials(fs::path(o->out) / "candidates.json", set);
      run.output("candidates.json");
      run.finish(o->out);
      *sh.out << "built " << set.trials.size() << " trials from " << set.trials.size() / 2 << " pairs\n";
    };
  });
}

// ---------------------------------------------------------------------- score

void add_score(CLI::App& app, Shared& sh, std::function<void()>& action) {
  auto* sub = app.add_subcommand("score", "Score trials with model features (cosine match-to-sample)");
  struct O {
    std::string trials, features, name, out;
    std::vector<std::string> checkpoints;
    FeatureFlags f;
    int workers = 1;
  };
  auto o = std::make_shared<O>();
  sub->add_option("--trials", o->trials, "Trial set JSON")->required()->check(CLI::ExistingFile);
  auto* feat = sub->add_option("--features", o->features, "Directory written by extract");
  auto* ck = sub->add_option("--checkpoint", o->checkpoints, "Checkpoints to extract and score (repeatable)");
  feat->excludes(ck);
  add_feature_flags(sub, o->f);
  sub->add_option("--name", o->name, "Model name for --features (default: directory name)");
  sub->add_option("--workers", o->workers, "Threads")->capture_default_str();
  sub->add_option("--out", o->out, "Output directory")->required();
  sub->callback([sub, o, &sh, &action] {
    action = [sub, o, &sh] {
      if (o->features.empty() && o->checkpoints.empty()) throw CliError("score: give --features or --checkpoint");
      Run run(*sub, sh.argv, 0);
      run.input(o->trials);
      const auto set = evalign::read_trials(o->trials);
      auto emit = [&](const std::string& name, const evalign::FeatureMatrix& f) {
        const auto scored = evalign::score_trials(f, set.trials, o->workers);
        const auto m = evalign::model_outcomes(name, evalign::to_string(f.tap), set.trials, scored);
        const auto file = name + "." + m.tap + ".outcomes.json";
        write_outcomes(fs::path(o->out) / file, m);
        run.output(file);
        *sh.out << name << " (" << m.tap << "): accuracy " << fmt(evalign::mean_std(m.outcomes).mean) << " over "
                << m.outcomes.size() << " trials, " << m.ties << " ties\n";
      };
      if (!o->features.empty()) {
        run.input(fs::path(o->features) / "features.json");
        run.input(fs::path(o->features) / "features.f64");
        const auto name = o->name.empty() ? fs::path(o->features).filename().string() : o->name;
        emit(name, read_features(o->features));
      }
      for (const auto& c : o->checkpoints) {
        run.input(c);
        auto req = feature_request(o->f, c, o->workers);
        req.trials = set;
        const auto r = compute_features(req);
        for (const auto& n : r.notes) *sh.err << "note: " << n << "\n";
        emit(r.model_name, r.features);
      }
      if (!o->checkpoints.empty()) run.input(o->f.manifest);
      run.finish(o->out);
    };
  });
}

// ------------------------------------------------------- select-adversarial

void add_select(CLI::App& app, Shared& sh, std::function<void()>& action) {
  auto* sub = app.add_subcommand("select-adversarial", "Select trials by zoo difficulty into conditions");
  struct O {
    std::string candidates, mode = "binned", out;
    std::vector<std::string> zoo;
    evalign::SelectOptions s;
  };
  auto o = std::make_shared<O>();
  sub->add_option("--candidates", o->candidates, "candidates.json from build-trials")->required()->check(CLI::ExistingFile);
  sub->add_option("--zoo-outcomes", o->zoo, "Outcome files of the zoo members (from score)")->required()->check(CLI::ExistingFile);
  sub->add_option("--mode", o->mode, "binned or hardest")->capture_default_str();
  sub->add_option("--bins", o->s.n_bins, "Difficulty conditions")->capture_default_str();
  sub->add_option("--pairs-per-bin", o->s.pairs_per_bin, "Pairs drawn per condition")->capture_default_str();
  sub->add_option("--hardest-pairs", o->s.hardest_pairs, "Pairs kept in hardest mode")->capture_default_str();
  sub->add_option("--practice", o->s.practice_trials, "Practice trials")->capture_default_str();
  sub->add_option("--seed", o->s.seed, "Selection seed")->capture_default_str();
  sub->add_option("--out", o->out, "Output directory")->required();
  sub->callback([sub, o, &sh, &action] {
    action = [sub, o, &sh] {
      if (o->mode == "binned") {
        o->s.mode = evalign::SelectMode::Binned;
      } else if (o->mode == "hardest") {
        o->s.mode = evalign::SelectMode::HardestOnly;
      } else {
        throw CliError("--mode: expected binned or hardest, got '" + o->mode + "'");
      }
      Run run(*sub, sh.argv, o->s.seed);
      run.input(o->candidates);
      const auto cand = evalign::read_trials(o->candidates);
      std::vector<std::vector<double>> zoo;
      for (const auto& z : o->zoo) {
        run.input(z);
        const auto m = read_outcomes(z);
        if (m.trial_ids != cand.trial_ids()) throw CliError(z + " was not scored on " + o->candidates);
        zoo.push_back(m.outcomes);
      }
      const auto sel = evalign::adversarial_select(cand, zoo, o->s);
      for (const auto& w : sel.warnings) *sh.err << "warning: " << w << "\n";
      evalign::write_trials(fs::path(o->out) / "trials.json", sel.trials);
      json bins = json::array();
      for (const auto& b : sel.bins) {
        bins.push_back({{"condition", b.condition},
                        {"lo", b.lo},
                        {"hi", b.hi},
                        {"available", b.available},
                        {"selected", b.selected},
                        {"mean_zoo_accuracy", std::isnan(b.mean_zoo_accuracy) ? json(nullptr) : json(b.mean_zoo_accuracy)}});
        *sh.out << "condition " << b.condition << ": " << b.selected << " of " << b.available
                << " pairs, mean zoo accuracy " << fmt(b.mean_zoo_accuracy) << "\n";
      }
      json diff = json::object();
      for (const auto& [pid, d] : sel.difficulty) diff[std::to_string(pid)] = d;
      write_json(fs::path(o->out) / "selection.json", json{{"bins", bins}, {"warnings", sel.warnings}, {"difficulty", diff}});
      run.output("trials.json");
      run.output("selection.json");
      run.finish(o->out);
    };
  });
}

// ------------------------------------------------------------ simulate-humans

void add_simulate(CLI::App& app, Shared& sh, std::function<void()>& action) {
  auto* sub = app.add_subcommand("simulate-humans", "Simulate Bernoulli responders answering every trial");
  struct O {
    std::string trials, out;
    std::vector<std::string> from;
    int n = 200;
    double accuracy = 0.89, floor = 0.5;
    std::uint64_t seed = 0;
  };
  auto o = std::make_shared<O>();
  sub->add_option("--trials", o->trials, "Trial set JSON")->required()->check(CLI::ExistingFile);
  sub->add_option("--n", o->n, "Responders")->capture_default_str()->check(CLI::PositiveNumber);
  sub->add_option("--accuracy", o->accuracy, "Per-trial probability correct when --from-outcomes is absent")->capture_default_str();
  sub->add_option("--from-outcomes", o->from, "Outcome files; p = floor + (1 - floor) * mean outcome per trial")->check(CLI::ExistingFile);
  sub->add_option("--floor", o->floor, "Probability correct on trials every model fails")->capture_default_str();
  sub->add_option("--seed", o->seed, "Simulation seed")->capture_default_str();
  sub->add_option("--out", o->out, "Output directory")->required();
  sub->callback([sub, o, &sh, &action] {
    action = [sub, o, &sh] {
      Run run(*sub, sh.argv, o->seed);
      run.input(o->trials);
      const auto set = evalign::read_trials(o->trials);
      std::vector<double> p(set.trials.size(), o->accuracy);
      if (!o->from.empty()) {
        std::vector<double> mean(set.trials.size(), 0.0);
        for (const auto& f : o->from) {
          run.input(f);
          const auto m = read_outcomes(f);
          if (m.trial_ids != set.trial_ids()) throw CliError(f + " was not scored on " + o->trials);
          for (std::size_t t = 0; t < mean.size(); ++t) mean[t] += m.outcomes[t] / static_cast<double>(o->from.size());
        }
        for (std::size_t t = 0; t < p.size(); ++t) p[t] = o->floor + (1.0 - o->floor) * mean[t];
      }
      const auto m = evalign::simulate_responders(set.trials, p, o->n, o->seed);
      const auto path = fs::path(o->out) / "responses.jsonl";
      fs::create_directories(o->out);
      fs::remove(path);
      evalign::append_responses(path, evalign::to_records(m));
      run.output("responses.jsonl");
      run.finish(o->out);
      *sh.out << "simulated " << o->n << " responders on " << set.trials.size() << " trials\n";
    };
  });
}

// ---------------------------------------------------------------------- align

void add_align(CLI::App& app, Shared& sh, std::function<void()>& action) {
  auto* sub = app.add_subcommand("align", "Compare model outcomes with reference responses");
  struct O {
    std::string trials, responses, out;
    std::vector<std::string> outcomes;
  };
  auto o = std::make_shared<O>();
  sub->add_option("--trials", o->trials, "Trial set JSON")->required()->check(CLI::ExistingFile);
  sub->add_option("--responses", o->responses, "Response JSON lines")->required()->check(CLI::ExistingFile);
  sub->add_option("--outcomes", o->outcomes, "Model outcome files (from score)")->check(CLI::ExistingFile);
  sub->add_option("--out", o->out, "Output directory")->required();
  sub->callback([sub, o, &sh, &action] {
    action = [sub, o, &sh] {
      Run run(*sub, sh.argv, 0);
      run.input(o->trials);
      run.input(o->responses);
      const auto set = evalign::read_trials(o->trials);
      const auto ref = evalign::response_matrix(set.trials, evalign::read_responses(o->responses));
      std::vector<evalign::ModelOutcomes> models;
      for (const auto& f : o->outcomes) {
        run.input(f);
        models.push_back(read_outcomes(f));
      }
      const auto rep = evalign::build_report(set, ref, models);
      evalign::emit_report(fs::path(o->out) / "report", rep);
      run.output("report.csv");
      run.output("report.json");
      run.finish(o->out);
      for (const auto& r : rep.rows) {
        if (r.condition != "all") continue;
        *sh.out << r.model << " (" << r.tap << "): M " << fmt(r.accuracy) << ", similarity " << fmt(r.similarity)
                << ", STD to accuracy " << fmt(r.std_to_human_accuracy, 2) << ", STD to ceiling "
                << fmt(r.std_to_human_noise_ceiling, 2) << "\n";
      }
    };
  });
}

// --------------------------------------------------------------------- report

void add_report(CLI::App& app, Shared& sh, std::function<void()>& action) {
  auto* sub = app.add_subcommand("report", "Print an alignment report as a table");
  struct O {
    std::string input, condition, out;
  };
  auto o = std::make_shared<O>();
  sub->add_option("--input", o->input, "report.json from align")->required()->check(CLI::ExistingFile);
  sub->add_option("--condition", o->condition, "Only rows of this condition (all, 1..5, ...)");
  sub->add_option("--out", o->out, "Also write report.md into this directory");
  sub->callback([sub, o, &sh, &action] {
    action = [sub, o, &sh] {
      const auto rep = evalign::read_report(o->input);
      std::ostringstream md;
      md << "| model | tap | condition | trials | M | similarity | STD to accuracy | STD to ceiling | human M | human STD | "
            "ceiling M | ceiling STD |\n";
      md << "|---|---|---|---|---|---|---|---|---|---|---|---|\n";
      for (const auto& r : rep.rows) {
        if (!o->condition.empty() && r.condition != o->condition) continue;
        md << "| " << r.model << " | " << r.tap << " | " << r.condition << " | " << r.n_trials << " | " << fmt(r.accuracy)
           << " | " << fmt(r.similarity) << " | " << fmt(r.std_to_human_accuracy, 2) << " | "
           << fmt(r.std_to_human_noise_ceiling, 2) << " | " << fmt(r.human_accuracy_mean) << " | "
           << fmt(r.human_accuracy_std) << " | " << fmt(r.noise_ceiling_mean) << " | " << fmt(r.noise_ceiling_std) << " |\n";
      }
      *sh.out << md.str();
      if (!o->out.empty()) {
        Run run(*sub, sh.argv, 0);
        run.input(o->input);
        fs::create_directories(o->out);
        std::ofstream(fs::path(o->out) / "report.md") << md.str();
        run.output("report.md");
        run.finish(o->out);
      }
    };
  });
}

// ----------------------------------------------------------------- serve-task

std::atomic<TaskServer*> g_server{nullptr};

extern "C" void handle_stop(int) {
  if (auto* s = g_server.load()) s->stop();
}

void add_serve(CLI::App& app, Shared& sh, std::function<void()>& action) {
  auto* sub = app.add_subcommand("serve-task", "Serve the human match-to-sample task over HTTP");
  struct O {
    std::string trials, responses, host = "127.0.0.1", static_dir, images;
    int port = 8080;
    ServeOptions s;
  };
  auto o = std::make_shared<O>();
  sub->add_option("--trials", o->trials, "Trial set JSON with practice trials")->required()->check(CLI::ExistingFile);
  sub->add_option("--responses", o->responses, "Append-only response file (JSON lines)")->required();
  sub->add_option("--host", o->host, "Bind address")->capture_default_str();
  sub->add_option("--port", o->port, "Port (0: any free port)")->capture_default_str();
  sub->add_option("--static", o->static_dir, "Task UI bundle served at /")->check(CLI::ExistingDirectory);
  sub->add_option("--images", o->images, "Dataset root served at /images/")->check(CLI::ExistingDirectory);
  sub->add_option("--main-trials", o->s.main_trials, "Main trials per session")->capture_default_str();
  sub->add_option("--practice", o->s.practice_trials, "Practice trials per session")->capture_default_str();
  sub->callback([sub, o, &sh, &action] {
    action = [sub, o, &sh] {
      Run run(*sub, sh.argv, 0);
      run.input(o->trials);
      o->s.static_dir = o->static_dir;
      o->s.images_dir = o->images;
      o->s.log = sh.err;
      TaskService service(evalign::read_trials(o->trials), o->responses, o->s);
      TaskServer server(service);
      const int port = server.bind(o->host, o->port);
      const auto dir = fs::path(o->responses).has_parent_path() ? fs::path(o->responses).parent_path() : fs::path(".");
      run.output(fs::path(o->responses).filename().string());
      run.finish(dir);
      *sh.out << "serving on http://" << o->host << ":" << port << "\n" << std::flush;
      g_server = &server;
      std::signal(SIGINT, handle_stop);
      std::signal(SIGTERM, handle_stop);
      server.listen();
      g_server = nullptr;
    };
  });
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"viewmatch: shape stimuli, 3D representation learning and human alignment scoring", "viewmatch"};
  app.set_version_flag("--version", tool_version());
  app.require_subcommand(1);
  Shared sh{args, &out, &err};
  std::function<void()> action;
  add_gen_shapes(app, sh, action);
  add_render(app, sh, action);
  add_train(app, sh, action);
  add_extract(app, sh, action);
  add_build_trials(app, sh, action);
  add_select(app, sh, action);
  add_score(app, sh, action);
  add_align(app, sh, action);
  add_simulate(app, sh, action);
  add_report(app, sh, action);
  add_serve(app, sh, action);

  std::vector<std::string> rev(args.rbegin(), args.rend());
  if (!rev.empty()) rev.pop_back();  // program name
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }
  try {
    if (action) action();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace viewmatch::cli
