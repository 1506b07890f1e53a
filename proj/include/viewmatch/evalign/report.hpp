// Copyright 2026 The viewmatch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "viewmatch/evalign/metrics.hpp"

namespace viewmatch::evalign {

// One model/tap's binary outcomes over a trial list.
struct ModelOutcomes {
  std::string name;
  std::string tap;
  std::vector<int> trial_ids;
  std::vector<double> outcomes;
  int ties = 0;
};

ModelOutcomes model_outcomes(const std::string& name, const std::string& tap, const std::vector<Trial>& trials,
                             const std::vector<TrialOutcome>& scored);

// NaN marks a statistic that is undefined (e.g. a zero reference STD).
struct ReportRow {
  std::string model;
  std::string tap;
  std::string condition;  // "all" or the condition number
  int n_trials = 0;
  int ties = 0;
  double accuracy = 0.0;
  double similarity = 0.0;
  double std_to_human_accuracy = 0.0;
  double std_to_human_noise_ceiling = 0.0;
  double human_accuracy_mean = 0.0;
  double human_accuracy_std = 0.0;
  double noise_ceiling_mean = 0.0;
  double noise_ceiling_std = 0.0;
};

struct AlignmentReport {
  std::vector<ReportRow> rows;

  const ReportRow& find(const std::string& model, const std::string& tap, const std::string& condition) const;
};

// Per condition (and "all"): reference accuracy and noise ceiling, then each
// model's accuracy, similarity and STD distances. Accuracy distances use the
// reference accuracy STD, similarity distances the noise-ceiling STD. Only
// trials the reference answered enter the statistics. Every row repeats the
// reference statistics of its condition; no models means no rows.
AlignmentReport build_report(const TrialSet& trials, const ResponseMatrix& reference,
                             const std::vector<ModelOutcomes>& models);

std::vector<std::string> report_columns();
nlohmann::json to_json(const AlignmentReport& r);
AlignmentReport report_from_json(const nlohmann::json& j);
// Writes <stem>.csv and <stem>.json.
void emit_report(const std::filesystem::path& stem, const AlignmentReport& r);
AlignmentReport read_report(const std::filesystem::path& json_path);

}  // namespace viewmatch::evalign
