// Copyright 2026 The viewmatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "viewmatch/evalign/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>

namespace viewmatch::evalign {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double safe_distance(double value, double mean, double sd) {
  if (std::isnan(value) || std::isnan(mean) || !(sd > 0.0)) return kNaN;
  return std_distance(value, mean, sd);
}

json num(double v) { return std::isnan(v) ? json(nullptr) : json(v); }
double from_num(const json& j) { return j.is_null() ? kNaN : j.get<double>(); }

}  // namespace

ModelOutcomes model_outcomes(const std::string& name, const std::string& tap, const std::vector<Trial>& trials,
                             const std::vector<TrialOutcome>& scored) {
  if (trials.size() != scored.size()) throw EvalError("model_outcomes: one outcome per trial required");
  ModelOutcomes m{name, tap, {}, outcome_vector(scored), 0};
  for (std::size_t i = 0; i < trials.size(); ++i) {
    m.trial_ids.push_back(trials[i].trial_id);
    m.ties += scored[i].tie ? 1 : 0;
  }
  return m;
}

const ReportRow& AlignmentReport::find(const std::string& model, const std::string& tap,
                                       const std::string& condition) const {
  for (const auto& r : rows) {
    if (r.model == model && r.tap == tap && r.condition == condition) return r;
  }
  throw EvalError("report has no row for " + model + "/" + tap + " condition " + condition);
}

AlignmentReport build_report(const TrialSet& trials, const ResponseMatrix& reference,
                             const std::vector<ModelOutcomes>& models) {
  reference.validate();
  const auto& all_ids = reference.trial_ids;
  if (trials.trials.size() != all_ids.size()) throw EvalError("build_report: reference does not cover the trial set");
  for (std::size_t i = 0; i < all_ids.size(); ++i) {
    if (trials.trials[i].trial_id != all_ids[i]) throw EvalError("build_report: reference trial order differs from the trial set");
  }
  for (const auto& m : models) {
    if (m.trial_ids != all_ids) throw EvalError("build_report: outcomes of " + m.name + "/" + m.tap + " use a different trial order");
  }
  const auto answered = reference.mean_accuracy();
  std::set<int> conditions;
  for (const auto& t : trials.trials) conditions.insert(t.condition);
  std::vector<std::pair<std::string, std::vector<int>>> groups;
  {
    std::vector<int> ids;
    for (std::size_t c = 0; c < all_ids.size(); ++c) {
      if (!std::isnan(answered[c])) ids.push_back(all_ids[c]);
    }
    groups.emplace_back("all", ids);
  }
  if (conditions.size() > 1 || (conditions.size() == 1 && *conditions.begin() != 0)) {
    for (int cond : conditions) {
      std::vector<int> ids;
      for (std::size_t c = 0; c < all_ids.size(); ++c) {
        if (trials.trials[c].condition == cond && !std::isnan(answered[c])) ids.push_back(all_ids[c]);
      }
      groups.emplace_back(std::to_string(cond), ids);
    }
  }
  AlignmentReport report;
  for (const auto& [label, ids] : groups) {
    if (ids.empty()) continue;
    const auto ref = reference.restrict(ids);
    const auto acc = mean_std(ref.responder_accuracy());
    MeanStd ceiling{kNaN, kNaN, 0};
    try {
      ceiling = noise_ceiling(ref).ceiling;
    } catch (const EvalError&) {
      // Fewer than two responders: ceiling undefined.
    }
    ReportRow base;
    base.condition = label;
    base.n_trials = static_cast<int>(ids.size());
    base.human_accuracy_mean = acc.mean;
    base.human_accuracy_std = acc.std;
    base.noise_ceiling_mean = ceiling.mean;
    base.noise_ceiling_std = ceiling.std;

    const std::set<int> keep(ids.begin(), ids.end());
    for (const auto& m : models) {
      std::vector<double> sub;
      for (std::size_t c = 0; c < all_ids.size(); ++c) {
        if (keep.count(all_ids[c])) sub.push_back(m.outcomes[c]);
      }
      ReportRow row = base;
      row.model = m.name;
      row.tap = m.tap;
      row.ties = label == "all" ? m.ties : 0;
      row.accuracy = mean_std(sub).mean;
      row.similarity = model_similarity(ref, sub);
      row.std_to_human_accuracy = safe_distance(row.accuracy, acc.mean, acc.std);
      row.std_to_human_noise_ceiling = safe_distance(row.similarity, ceiling.mean, ceiling.std);
      report.rows.push_back(row);
    }
  }
  return report;
}

std::vector<std::string> report_columns() {
  return {"model", "tap", "condition", "n_trials", "ties", "M", "similarity", "std_to_human_accuracy",
          "std_to_human_noise_ceiling", "human_M", "human_STD", "noise_ceiling_M", "noise_ceiling_STD"};
}

json to_json(const AlignmentReport& r) {
  json rows = json::array();
  for (const auto& x : r.rows) {
    rows.push_back({{"model", x.model},
                    {"tap", x.tap},
                    {"condition", x.condition},
                    {"n_trials", x.n_trials},
                    {"ties", x.ties},
                    {"M", num(x.accuracy)},
                    {"similarity", num(x.similarity)},
                    {"std_to_human_accuracy", num(x.std_to_human_accuracy)},
                    {"std_to_human_noise_ceiling", num(x.std_to_human_noise_ceiling)},
                    {"human_M", num(x.human_accuracy_mean)},
                    {"human_STD", num(x.human_accuracy_std)},
                    {"noise_ceiling_M", num(x.noise_ceiling_mean)},
                    {"noise_ceiling_STD", num(x.noise_ceiling_std)}});
  }
  return json{{"columns", report_columns()}, {"rows", rows}};
}

AlignmentReport report_from_json(const json& j) {
  AlignmentReport r;
  try {
    for (const auto& x : j.at("rows")) {
      ReportRow row;
      row.model = x.at("model").get<std::string>();
      row.tap = x.at("tap").get<std::string>();
      row.condition = x.at("condition").get<std::string>();
      row.n_trials = x.at("n_trials").get<int>();
      row.ties = x.at("ties").get<int>();
      row.accuracy = from_num(x.at("M"));
      row.similarity = from_num(x.at("similarity"));
      row.std_to_human_accuracy = from_num(x.at("std_to_human_accuracy"));
      row.std_to_human_noise_ceiling = from_num(x.at("std_to_human_noise_ceiling"));
      row.human_accuracy_mean = from_num(x.at("human_M"));
      row.human_accuracy_std = from_num(x.at("human_STD"));
      row.noise_ceiling_mean = from_num(x.at("noise_ceiling_M"));
      row.noise_ceiling_std = from_num(x.at("noise_ceiling_STD"));
      r.rows.push_back(row);
    }
  } catch (const json::exception& e) {
    throw EvalError(std::string("malformed report: ") + e.what());
  }
  return r;
}

void emit_report(const std::filesystem::path& stem, const AlignmentReport& r) {
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  auto csv_path = stem;
  csv_path += ".csv";
  auto json_path = stem;
  json_path += ".json";
  std::ofstream csv(csv_path);
  if (!csv) throw EvalError("cannot write " + csv_path.string());
  const auto cols = report_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) csv << (i ? "," : "") << cols[i];
  csv << "\n";
  auto f = [](double v) {
    if (std::isnan(v)) return std::string();
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  for (const auto& x : r.rows) {
    csv << x.model << "," << x.tap << "," << x.condition << "," << x.n_trials << "," << x.ties << "," << f(x.accuracy)
        << "," << f(x.similarity) << "," << f(x.std_to_human_accuracy) << "," << f(x.std_to_human_noise_ceiling) << ","
        << f(x.human_accuracy_mean) << "," << f(x.human_accuracy_std) << "," << f(x.noise_ceiling_mean) << ","
        << f(x.noise_ceiling_std) << "\n";
  }
  std::ofstream js(json_path);
  if (!js) throw EvalError("cannot write " + json_path.string());
  js << to_json(r).dump(1) << "\n";
}

AlignmentReport read_report(const std::filesystem::path& json_path) {
  std::ifstream f(json_path);
  if (!f) throw EvalError("cannot open " + json_path.string());
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw EvalError("cannot parse " + json_path.string() + ": " + e.what());
  }
  return report_from_json(j);
}

}  // namespace viewmatch::evalign
