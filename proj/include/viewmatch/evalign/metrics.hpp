// Copyright 2026 The viewmatch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "viewmatch/evalign/trials.hpp"

namespace viewmatch::evalign {

// a.b / (|a| |b|). Terms are summed in a canonical order (sorted pairs), so
// the result is bit-identical under any joint permutation of a and b.
double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

// cosine_similarity(model outcomes, reference accuracies) after checking
// both vectors describe the same trial ids in the same order.
double alignment_similarity(const std::vector<int>& model_trials, const std::vector<double>& model_outcomes,
                            const std::vector<int>& reference_trials, const std::vector<double>& reference_accuracy);

// (value - mean) / std.
double std_distance(double value, double reference_mean, double reference_std);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population
  std::size_t n = 0;
};
MeanStd mean_std(const std::vector<double>& v);

enum class ResponderKind { Human, Simulated, Model };
std::string to_string(ResponderKind k);
ResponderKind responder_kind_from_string(const std::string& s);

struct Responder {
  std::string id;
  ResponderKind kind = ResponderKind::Human;
};

// Responders x trials; -1 marks a trial the responder did not answer.
struct ResponseMatrix {
  std::vector<int> trial_ids;
  std::vector<char> trial_batch;  // 'A' / 'B' per trial column
  std::vector<Responder> responders;
  std::vector<std::vector<std::int8_t>> outcomes;

  static ResponseMatrix for_trials(const std::vector<Trial>& trials);
  std::size_t add_responder(const Responder& r);
  std::size_t column_of(int trial_id) const;
  // Columns restricted to `ids` (in this matrix's order); responders with no
  // answers left are dropped.
  ResponseMatrix restrict(const std::vector<int>& ids) const;
  // Per-trial mean over responders who answered it (NaN when nobody did).
  std::vector<double> mean_accuracy() const;
  // Per-responder accuracy over the trials they answered.
  std::vector<double> responder_accuracy() const;
  void validate() const;
};

// Leave-one-responder-out similarity, computed per batch over the trials of
// that batch and the responders who answered them, then pooled over all
// (responder, batch) values.
struct NoiseCeiling {
  MeanStd ceiling;
  std::vector<double> per_responder;
};
NoiseCeiling noise_ceiling(const ResponseMatrix& responses);

// Similarity of a responder answering every trial (a model) to the reference
// means, computed per batch then averaged over batches.
double model_similarity(const ResponseMatrix& reference, const std::vector<double>& outcomes);

// Bernoulli(p_t) outcomes for every trial; batch labels alternate A, B, ...
// and are recorded in the responder id.
ResponseMatrix simulate_responders(const std::vector<Trial>& trials, const std::vector<double>& p_correct, int n,
                                   std::uint64_t seed);

// Response file: one JSON object per line,
// {trial_id, responder_id, responder_kind, choice: target|lure, correct, rt_ms?}.
struct ResponseRecord {
  int trial_id = 0;
  std::string responder_id;
  ResponderKind kind = ResponderKind::Human;
  bool chose_target = false;
  std::optional<double> rt_ms;
};
nlohmann::json to_json(const ResponseRecord& r);
// Validates field types, choice values and the correct/choice agreement.
ResponseRecord response_from_json(const nlohmann::json& j);
std::vector<ResponseRecord> read_responses(const std::filesystem::path& path);
void append_responses(const std::filesystem::path& path, const std::vector<ResponseRecord>& records);
// Builds the matrix over `trials`; unknown trial ids and duplicate
// (responder, trial) records are errors.
ResponseMatrix response_matrix(const std::vector<Trial>& trials, const std::vector<ResponseRecord>& records);
std::vector<ResponseRecord> to_records(const ResponseMatrix& m);

}  // namespace viewmatch::evalign
