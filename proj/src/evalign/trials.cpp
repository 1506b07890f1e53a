// Copyright 2026 The viewmatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "viewmatch/evalign/trials.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "viewmatch/common/parallel.hpp"
#include "viewmatch/common/rng.hpp"

namespace viewmatch::evalign {

using nlohmann::json;

std::string to_string(PairMode m) { return m == PairMode::WithinFamily ? "within_family" : "any"; }

PairMode pair_mode_from_string(const std::string& s) {
  if (s == "within_family") return PairMode::WithinFamily;
  if (s == "any") return PairMode::Any;
  throw EvalError("unknown pairing mode '" + s + "' (expected within_family or any)");
}

TrialSet TrialSet::subset(const std::vector<int>& ids) const {
  const std::set<int> keep(ids.begin(), ids.end());
  TrialSet out = *this;
  out.trials.clear();
  for (const auto& t : trials) {
    if (keep.count(t.trial_id)) out.trials.push_back(t);
  }
  return out;
}

std::vector<int> TrialSet::trial_ids() const {
  std::vector<int> ids;
  for (const auto& t : trials) ids.push_back(t.trial_id);
  return ids;
}

namespace {

struct TestObject {
  std::string id;
  int family = 0;
  std::vector<ViewRef> views;
};

}  // namespace

TrialSet build_trials(const renderview::DatasetManifest& test, PairMode mode, int n_pairs, std::uint64_t seed) {
  if (n_pairs < 0) throw EvalError("build_trials: n_pairs must be non-negative");
  std::vector<TestObject> objects;
  for (const auto& group : test.by_object()) {
    TestObject o;
    o.id = test.records[group.front()].object_id;
    o.family = test.records[group.front()].family;
    for (auto idx : group) o.views.push_back({o.id, test.records[idx].view_index, test.records[idx].path});
    std::sort(o.views.begin(), o.views.end(), [](const ViewRef& a, const ViewRef& b) { return a.view_index < b.view_index; });
    if (o.views.size() < 3) {
      throw EvalError("build_trials: object " + o.id + " has " + std::to_string(o.views.size()) +
                      " view(s); each pair needs 3 distinct views per object");
    }
    objects.push_back(std::move(o));
  }
  // Candidate pairs (i < j) in a canonical order, then a seeded shuffle.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < objects.size(); ++i) {
    for (std::size_t j = i + 1; j < objects.size(); ++j) {
      if (mode == PairMode::Any || objects[i].family == objects[j].family) pairs.emplace_back(i, j);
    }
  }
  if (pairs.empty()) {
    throw EvalError(std::string("build_trials: not enough test objects to form a pair") +
                    (mode == PairMode::WithinFamily ? " within any family" : ""));
  }
  Rng rng(derive_seed(seed, {0x9a17}));
  shuffle_range(pairs.begin(), pairs.end(), rng);
  if (n_pairs > 0) {
    if (static_cast<std::size_t>(n_pairs) > pairs.size()) {
      throw EvalError("build_trials: requested " + std::to_string(n_pairs) + " pairs but only " +
                      std::to_string(pairs.size()) + " are possible");
    }
    pairs.resize(static_cast<std::size_t>(n_pairs));
  }
  TrialSet set;
  set.mode = mode;
  set.seed = seed;
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto& a = objects[pairs[p].first];
    const auto& b = objects[pairs[p].second];
    Rng prng(derive_seed(seed, {0x7a1, p}));
    // Three distinct views per object: two for its own trial, one as a lure.
    auto draw3 = [&](const TestObject& o) {
      std::vector<std::size_t> idx(o.views.size());
      for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
      for (std::size_t k = 0; k < 3; ++k) {
        std::swap(idx[k], idx[static_cast<std::size_t>(uniform_int(prng, static_cast<std::int64_t>(k), static_cast<std::int64_t>(idx.size() - 1)))]);
      }
      return std::array<ViewRef, 3>{o.views[idx[0]], o.views[idx[1]], o.views[idx[2]]};
    };
    const auto va = draw3(a);
    const auto vb = draw3(b);
    const int pid = static_cast<int>(p);
    set.trials.push_back({2 * pid, pid, va[0], va[1], vb[2], a.family, 0, 'A'});
    set.trials.push_back({2 * pid + 1, pid, vb[0], vb[1], va[2], b.family, 0, 'B'});
  }
  return set;
}

namespace {

double cosine_rows(const Eigen::MatrixXd& m, Eigen::Index a, Eigen::Index b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (Eigen::Index k = 0; k < m.cols(); ++k) {
    const double x = m(a, k), y = m(b, k);
    ab += x * y;
    aa += x * x;
    bb += y * y;
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

}  // namespace

TrialOutcome score_trial(const FeatureMatrix& features, const Trial& trial) {
  const auto s = static_cast<Eigen::Index>(features.row_of(trial.sample.key()));
  const auto t = static_cast<Eigen::Index>(features.row_of(trial.target.key()));
  const auto l = static_cast<Eigen::Index>(features.row_of(trial.lure.key()));
  TrialOutcome out;
  out.sim_target = cosine_rows(features.values, s, t);
  out.sim_lure = cosine_rows(features.values, s, l);
  out.tie = out.sim_target == out.sim_lure;
  out.correct = out.sim_target > out.sim_lure;
  return out;
}

std::vector<TrialOutcome> score_trials(const FeatureMatrix& features, const std::vector<Trial>& trials, int workers) {
  std::vector<TrialOutcome> out(trials.size());
  parallel_for(trials.size(), workers, [&](std::size_t i) { out[i] = score_trial(features, trials[i]); });
  return out;
}

std::vector<double> outcome_vector(const std::vector<TrialOutcome>& outcomes) {
  std::vector<double> v;
  for (const auto& o : outcomes) v.push_back(o.correct ? 1.0 : 0.0);
  return v;
}

Selection adversarial_select(const TrialSet& candidates, const std::vector<std::vector<double>>& zoo_outcomes,
                             const SelectOptions& opt) {
  if (zoo_outcomes.empty()) throw EvalError("adversarial_select: no zoo outcomes");
  if (opt.n_bins < 1) throw EvalError("adversarial_select: n_bins must be positive");
  for (const auto& m : zoo_outcomes) {
    if (m.size() != candidates.trials.size()) throw EvalError("adversarial_select: zoo outcome length differs from the trial count");
  }
  // Difficulty = mean outcome over both trials of the pair and all members.
  std::map<int, double> sum;
  std::map<int, int> count;
  for (std::size_t t = 0; t < candidates.trials.size(); ++t) {
    const int pid = candidates.trials[t].pair_id;
    for (const auto& m : zoo_outcomes) sum[pid] += m[t];
    count[pid] += static_cast<int>(zoo_outcomes.size());
  }
  Selection sel;
  for (const auto& [pid, n] : count) {
    if (n != 2 * static_cast<int>(zoo_outcomes.size())) {
      throw EvalError("adversarial_select: pair " + std::to_string(pid) + " does not have exactly two trials");
    }
    sel.difficulty[pid] = sum[pid] / n;
  }
  std::map<int, int> condition_of;  // selected pair -> condition
  if (opt.mode == SelectMode::HardestOnly) {
    std::vector<std::pair<double, int>> order;
    for (const auto& [pid, d] : sel.difficulty) order.emplace_back(d, pid);
    std::sort(order.begin(), order.end());
    if (static_cast<std::size_t>(opt.hardest_pairs) > order.size()) {
      sel.warnings.push_back("requested " + std::to_string(opt.hardest_pairs) + " pairs, only " +
                             std::to_string(order.size()) + " candidates");
    }
    const auto n = std::min(order.size(), static_cast<std::size_t>(std::max(0, opt.hardest_pairs)));
    BinSummary b{0, 0.0, 1.0, static_cast<int>(order.size()), static_cast<int>(n), 0.0};
    for (std::size_t i = 0; i < n; ++i) {
      condition_of[order[i].second] = 0;
      b.mean_zoo_accuracy += order[i].first;
    }
    b.mean_zoo_accuracy = n ? b.mean_zoo_accuracy / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
    sel.bins.push_back(b);
  } else {
    std::vector<std::vector<int>> bins(static_cast<std::size_t>(opt.n_bins));
    for (const auto& [pid, d] : sel.difficulty) {
      const int b = std::min(opt.n_bins - 1, static_cast<int>(std::floor(d * opt.n_bins)));
      bins[static_cast<std::size_t>(b)].push_back(pid);
    }
    for (int b = 0; b < opt.n_bins; ++b) {
      auto& members = bins[static_cast<std::size_t>(b)];
      Rng rng(derive_seed(opt.seed, {0xb1, static_cast<std::uint64_t>(b)}));
      shuffle_range(members.begin(), members.end(), rng);
      BinSummary s{b + 1, static_cast<double>(b) / opt.n_bins, static_cast<double>(b + 1) / opt.n_bins,
                   static_cast<int>(members.size()), 0, 0.0};
      const auto take = std::min(members.size(), static_cast<std::size_t>(std::max(0, opt.pairs_per_bin)));
      if (take < static_cast<std::size_t>(opt.pairs_per_bin)) {
        sel.warnings.push_back("condition " + std::to_string(b + 1) + ": " + std::to_string(members.size()) +
                               " pairs available, " + std::to_string(opt.pairs_per_bin) + " requested");
      }
      for (std::size_t i = 0; i < take; ++i) {
        condition_of[members[i]] = b + 1;
        s.mean_zoo_accuracy += sel.difficulty[members[i]];
      }
      s.selected = static_cast<int>(take);
      s.mean_zoo_accuracy = take ? s.mean_zoo_accuracy / static_cast<double>(take) : std::numeric_limits<double>::quiet_NaN();
      sel.bins.push_back(s);
    }
  }
  sel.trials.mode = candidates.mode;
  sel.trials.seed = candidates.seed;
  for (const auto& t : candidates.trials) {
    const auto it = condition_of.find(t.pair_id);
    if (it == condition_of.end()) continue;
    Trial copy = t;
    copy.condition = it->second;
    sel.trials.trials.push_back(copy);
  }
  // Practice: easiest unselected pairs, one trial per pair, alternating roles.
  std::vector<std::pair<double, int>> spare;
  for (const auto& [pid, d] : sel.difficulty) {
    if (!condition_of.count(pid)) spare.emplace_back(-d, pid);
  }
  std::sort(spare.begin(), spare.end());
  for (std::size_t i = 0; i < spare.size() && static_cast<int>(sel.trials.practice.size()) < opt.practice_trials; ++i) {
    const int pid = spare[i].second;
    for (const auto& t : candidates.trials) {
      if (t.pair_id == pid && t.trial_id % 2 == static_cast<int>(i % 2)) {
        sel.trials.practice.push_back(t);
        break;
      }
    }
  }
  if (static_cast<int>(sel.trials.practice.size()) < opt.practice_trials) {
    sel.warnings.push_back("only " + std::to_string(sel.trials.practice.size()) + " practice trials available");
  }
  return sel;
}

json to_json(const Trial& t) {
  auto ref = [](const ViewRef& v) { return json{{"object_id", v.object_id}, {"view_index", v.view_index}, {"path", v.path}}; };
  return json{{"trial_id", t.trial_id}, {"pair_id", t.pair_id},          {"condition", t.condition},
              {"batch", std::string(1, t.batch)}, {"family", t.family}, {"sample", ref(t.sample)},
              {"target", ref(t.target)},           {"lure", ref(t.lure)}};
}

Trial trial_from_json(const json& j) {
  try {
    auto ref = [](const json& v) {
      return ViewRef{v.at("object_id").get<std::string>(), v.at("view_index").get<int>(), v.value("path", std::string())};
    };
    Trial t;
    t.trial_id = j.at("trial_id").get<int>();
    t.pair_id = j.at("pair_id").get<int>();
    t.condition = j.value("condition", 0);
    const auto batch = j.at("batch").get<std::string>();
    if (batch != "A" && batch != "B") throw EvalError("trial " + std::to_string(t.trial_id) + ": batch must be A or B");
    t.batch = batch[0];
    t.family = j.value("family", 0);
    t.sample = ref(j.at("sample"));
    t.target = ref(j.at("target"));
    t.lure = ref(j.at("lure"));
    return t;
  } catch (const json::exception& e) {
    throw EvalError(std::string("malformed trial: ") + e.what());
  }
}

json to_json(const TrialSet& s) {
  json trials = json::array(), practice = json::array();
  for (const auto& t : s.trials) trials.push_back(to_json(t));
  for (const auto& t : s.practice) practice.push_back(to_json(t));
  return json{{"mode", to_string(s.mode)}, {"seed", s.seed}, {"trials", trials}, {"practice", practice}};
}

TrialSet trial_set_from_json(const json& j) {
  TrialSet s;
  try {
    s.mode = pair_mode_from_string(j.value("mode", std::string("within_family")));
    s.seed = j.value("seed", std::uint64_t{0});
    for (const auto& t : j.at("trials")) s.trials.push_back(trial_from_json(t));
    if (j.contains("practice")) {
      for (const auto& t : j.at("practice")) s.practice.push_back(trial_from_json(t));
    }
  } catch (const json::exception& e) {
    throw EvalError(std::string("malformed trial manifest: ") + e.what());
  }
  std::set<int> seen;
  for (const auto& t : s.trials) {
    if (!seen.insert(t.trial_id).second) throw EvalError("duplicate trial id " + std::to_string(t.trial_id));
  }
  return s;
}

void write_trials(const std::filesystem::path& path, const TrialSet& s) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw EvalError("cannot write " + path.string());
  f << to_json(s).dump(1) << "\n";
}

TrialSet read_trials(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw EvalError("cannot open " + path.string());
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw EvalError("cannot parse " + path.string() + ": " + e.what());
  }
  return trial_set_from_json(j);
}

}  // namespace viewmatch::evalign
