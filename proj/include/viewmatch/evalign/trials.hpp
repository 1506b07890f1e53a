// Copyright 2026 The viewmatch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "viewmatch/evalign/features.hpp"

namespace viewmatch::evalign {

enum class PairMode { WithinFamily, Any };
std::string to_string(PairMode m);
PairMode pair_mode_from_string(const std::string& s);

struct ViewRef {
  std::string object_id;
  int view_index = 0;
  std::string path;  // image path relative to the dataset root

  ViewKey key() const { return {object_id, view_index}; }
};

struct Trial {
  int trial_id = 0;
  int pair_id = 0;
  ViewRef sample, target, lure;
  int family = 0;      // family of the sample object
  int condition = 0;   // 1..5, 0 for none
  char batch = 'A';    // 'A' or 'B'
};

struct TrialSet {
  PairMode mode = PairMode::WithinFamily;
  std::uint64_t seed = 0;
  std::vector<Trial> trials;
  // Practice trials shown with feedback before the main block.
  std::vector<Trial> practice;

  // Trials whose ids appear in `ids`, in this set's order.
  TrialSet subset(const std::vector<int>& ids) const;
  std::vector<int> trial_ids() const;
};

// Pairs test objects (within a family, or across the whole set) and makes two
// trials per pair: A as sample/target with B as lure (batch A) and the
// reverse (batch B). Each object's three views in a pair are distinct.
// n_pairs = 0 keeps every possible pair. Trial ids are 2 * pair_id + {0, 1}.
TrialSet build_trials(const renderview::DatasetManifest& test, PairMode mode, int n_pairs, std::uint64_t seed);

struct TrialOutcome {
  bool correct = false;
  bool tie = false;
  double sim_target = 0.0;
  double sim_lure = 0.0;
};

// Correct iff cos(sample, target) > cos(sample, lure); exact ties score 0 and
// set the tie flag.
TrialOutcome score_trial(const FeatureMatrix& features, const Trial& trial);
std::vector<TrialOutcome> score_trials(const FeatureMatrix& features, const std::vector<Trial>& trials, int workers = 1);
std::vector<double> outcome_vector(const std::vector<TrialOutcome>& outcomes);

enum class SelectMode { Binned, HardestOnly };

struct SelectOptions {
  SelectMode mode = SelectMode::Binned;
  int n_bins = 5;
  int pairs_per_bin = 75;
  int hardest_pairs = 150;  // HardestOnly
  int practice_trials = 6;
  std::uint64_t seed = 0;
};

struct BinSummary {
  int condition = 0;
  double lo = 0.0, hi = 0.0;
  int available = 0;
  int selected = 0;
  double mean_zoo_accuracy = 0.0;  // over selected pairs; NaN when empty
};

struct Selection {
  TrialSet trials;
  std::vector<BinSummary> bins;
  std::vector<std::string> warnings;
  // Mean zoo outcome per pair id over both trials and all members.
  std::map<int, double> difficulty;
};

// `zoo_outcomes[m][t]` is member m's outcome on candidates.trials[t].
// Binned: pairs fall into equal-width bins of [0, 1] by difficulty and
// up to pairs_per_bin are drawn per bin; condition 1 is the lowest-accuracy
// bin. HardestOnly: the `hardest_pairs` lowest difficulties, ties broken by
// pair id, condition 0. Practice trials come from unselected pairs with the
// highest difficulty (easiest for the zoo).
Selection adversarial_select(const TrialSet& candidates, const std::vector<std::vector<double>>& zoo_outcomes,
                             const SelectOptions& opt);

nlohmann::json to_json(const Trial& t);
Trial trial_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrialSet& s);
TrialSet trial_set_from_json(const nlohmann::json& j);
void write_trials(const std::filesystem::path& path, const TrialSet& s);
TrialSet read_trials(const std::filesystem::path& path);

}  // namespace viewmatch::evalign
