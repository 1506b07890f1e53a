// Copyright 2026 The viewmatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "viewmatch/evalign/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>

#include "viewmatch/common/rng.hpp"

namespace viewmatch::evalign {

using nlohmann::json;

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw EvalError("cosine_similarity: length mismatch");
  if (a.empty()) throw EvalError("cosine_similarity: empty vectors");
  std::vector<std::pair<double, double>> terms(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) terms[i] = {a[i], b[i]};
  std::sort(terms.begin(), terms.end());
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (const auto& [x, y] : terms) {
    ab += x * y;
    aa += x * x;
    bb += y * y;
  }
  if (aa == 0.0 || bb == 0.0) throw EvalError("cosine_similarity: zero vector");
  // One square root of the product: sqrt(fl(x * x)) == |x|, so identical
  // vectors give exactly 1.
  return ab / std::sqrt(aa * bb);
}

double alignment_similarity(const std::vector<int>& model_trials, const std::vector<double>& model_outcomes,
                            const std::vector<int>& reference_trials, const std::vector<double>& reference_accuracy) {
  if (model_trials != reference_trials) throw EvalError("alignment_similarity: trial ordering mismatch");
  if (model_outcomes.size() != model_trials.size() || reference_accuracy.size() != reference_trials.size()) {
    throw EvalError("alignment_similarity: vector length does not match trial ids");
  }
  // All-incorrect model: zero numerator by definition.
  if (std::all_of(model_outcomes.begin(), model_outcomes.end(), [](double v) { return v == 0.0; })) return 0.0;
  return cosine_similarity(model_outcomes, reference_accuracy);
}

double std_distance(double value, double reference_mean, double reference_std) {
  if (!(reference_std > 0.0)) throw EvalError("std_distance: reference STD must be positive");
  return (value - reference_mean) / reference_std;
}

MeanStd mean_std(const std::vector<double>& v) {
  if (v.empty()) throw EvalError("mean_std: empty input");
  std::vector<double> s = v;
  std::sort(s.begin(), s.end());
  double sum = 0.0;
  for (double x : s) sum += x;
  const double mean = sum / static_cast<double>(s.size());
  double ss = 0.0;
  for (double x : s) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(s.size())), s.size()};
}

std::string to_string(ResponderKind k) {
  switch (k) {
    case ResponderKind::Human: return "human";
    case ResponderKind::Simulated: return "simulated";
    case ResponderKind::Model: return "model";
  }
  return "unknown";
}

ResponderKind responder_kind_from_string(const std::string& s) {
  if (s == "human") return ResponderKind::Human;
  if (s == "simulated") return ResponderKind::Simulated;
  if (s == "model") return ResponderKind::Model;
  throw EvalError("unknown responder kind '" + s + "'");
}

ResponseMatrix ResponseMatrix::for_trials(const std::vector<Trial>& trials) {
  ResponseMatrix m;
  std::set<int> seen;
  for (const auto& t : trials) {
    if (!seen.insert(t.trial_id).second) throw EvalError("duplicate trial id " + std::to_string(t.trial_id));
    m.trial_ids.push_back(t.trial_id);
    m.trial_batch.push_back(t.batch);
  }
  return m;
}

std::size_t ResponseMatrix::add_responder(const Responder& r) {
  for (const auto& e : responders) {
    if (e.id == r.id) throw EvalError("duplicate responder " + r.id);
  }
  responders.push_back(r);
  outcomes.emplace_back(trial_ids.size(), std::int8_t{-1});
  return responders.size() - 1;
}

std::size_t ResponseMatrix::column_of(int trial_id) const {
  const auto it = std::find(trial_ids.begin(), trial_ids.end(), trial_id);
  if (it == trial_ids.end()) throw EvalError("unknown trial id " + std::to_string(trial_id));
  return static_cast<std::size_t>(it - trial_ids.begin());
}

ResponseMatrix ResponseMatrix::restrict(const std::vector<int>& ids) const {
  const std::set<int> keep(ids.begin(), ids.end());
  ResponseMatrix out;
  std::vector<std::size_t> cols;
  for (std::size_t c = 0; c < trial_ids.size(); ++c) {
    if (keep.count(trial_ids[c])) {
      cols.push_back(c);
      out.trial_ids.push_back(trial_ids[c]);
      out.trial_batch.push_back(trial_batch[c]);
    }
  }
  for (std::size_t r = 0; r < responders.size(); ++r) {
    std::vector<std::int8_t> row;
    bool any = false;
    for (auto c : cols) {
      row.push_back(outcomes[r][c]);
      any = any || outcomes[r][c] >= 0;
    }
    if (any) {
      out.responders.push_back(responders[r]);
      out.outcomes.push_back(std::move(row));
    }
  }
  return out;
}

std::vector<double> ResponseMatrix::mean_accuracy() const {
  std::vector<double> out(trial_ids.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t c = 0; c < trial_ids.size(); ++c) {
    int n = 0, k = 0;
    for (const auto& row : outcomes) {
      if (row[c] >= 0) {
        ++n;
        k += row[c];
      }
    }
    if (n) out[c] = static_cast<double>(k) / n;
  }
  return out;
}

std::vector<double> ResponseMatrix::responder_accuracy() const {
  std::vector<double> out;
  for (const auto& row : outcomes) {
    int n = 0, k = 0;
    for (auto v : row) {
      if (v >= 0) {
        ++n;
        k += v;
      }
    }
    out.push_back(n ? static_cast<double>(k) / n : std::numeric_limits<double>::quiet_NaN());
  }
  return out;
}

void ResponseMatrix::validate() const {
  if (trial_batch.size() != trial_ids.size()) throw EvalError("response matrix: batch labels do not match trials");
  if (outcomes.size() != responders.size()) throw EvalError("response matrix: responder rows mismatch");
  for (const auto& row : outcomes) {
    if (row.size() != trial_ids.size()) throw EvalError("response matrix: ragged row");
    for (auto v : row) {
      if (v != -1 && v != 0 && v != 1) throw EvalError("response matrix: entries must be 0, 1 or missing");
    }
  }
}

namespace {

// Columns of one batch and the responders who answered every one of them.
// Responders who answered some but not all are an error (the ceiling needs
// identical trial sets).
struct BatchView {
  std::vector<std::size_t> cols;
  std::vector<std::size_t> rows;
};

BatchView batch_view(const ResponseMatrix& m, char batch) {
  BatchView v;
  for (std::size_t c = 0; c < m.trial_ids.size(); ++c) {
    if (m.trial_batch[c] == batch) v.cols.push_back(c);
  }
  for (std::size_t r = 0; r < m.responders.size(); ++r) {
    std::size_t answered = 0;
    for (auto c : v.cols) answered += m.outcomes[r][c] >= 0;
    if (answered == 0) continue;
    if (answered != v.cols.size()) {
      throw EvalError("responder " + m.responders[r].id + " answered " + std::to_string(answered) + " of " +
                      std::to_string(v.cols.size()) + " batch " + std::string(1, batch) + " trials");
    }
    v.rows.push_back(r);
  }
  return v;
}

}  // namespace

NoiseCeiling noise_ceiling(const ResponseMatrix& m) {
  m.validate();
  NoiseCeiling out;
  for (char batch : {'A', 'B'}) {
    const auto v = batch_view(m, batch);
    if (v.cols.empty() || v.rows.empty()) continue;
    if (v.rows.size() < 2) throw EvalError(std::string("noise_ceiling: batch ") + batch + " has fewer than 2 responders");
    std::vector<int> totals(v.cols.size(), 0);
    for (auto r : v.rows) {
      for (std::size_t k = 0; k < v.cols.size(); ++k) totals[k] += m.outcomes[r][v.cols[k]];
    }
    const double others = static_cast<double>(v.rows.size() - 1);
    for (auto r : v.rows) {
      std::vector<double> mine(v.cols.size()), rest(v.cols.size());
      for (std::size_t k = 0; k < v.cols.size(); ++k) {
        mine[k] = m.outcomes[r][v.cols[k]];
        rest[k] = static_cast<double>(totals[k] - m.outcomes[r][v.cols[k]]) / others;
      }
      double s = 0.0;
      // A responder with no correct answers, or others with none, has zero similarity.
      bool zero = std::all_of(mine.begin(), mine.end(), [](double x) { return x == 0.0; }) ||
                  std::all_of(rest.begin(), rest.end(), [](double x) { return x == 0.0; });
      if (!zero) s = cosine_similarity(mine, rest);
      out.per_responder.push_back(s);
    }
  }
  if (out.per_responder.empty()) throw EvalError("noise_ceiling: needs at least 2 responders");
  out.ceiling = mean_std(out.per_responder);
  return out;
}

double model_similarity(const ResponseMatrix& reference, const std::vector<double>& outcomes) {
  if (outcomes.size() != reference.trial_ids.size()) throw EvalError("model_similarity: outcome length mismatch");
  const auto means = reference.mean_accuracy();
  double total = 0.0;
  int batches = 0;
  for (char batch : {'A', 'B'}) {
    std::vector<double> a, b;
    for (std::size_t c = 0; c < reference.trial_ids.size(); ++c) {
      if (reference.trial_batch[c] != batch) continue;
      if (std::isnan(means[c])) throw EvalError("model_similarity: trial " + std::to_string(reference.trial_ids[c]) + " has no reference answers");
      a.push_back(outcomes[c]);
      b.push_back(means[c]);
    }
    if (a.empty()) continue;
    const bool zero = std::all_of(a.begin(), a.end(), [](double x) { return x == 0.0; }) ||
                      std::all_of(b.begin(), b.end(), [](double x) { return x == 0.0; });
    total += zero ? 0.0 : cosine_similarity(a, b);
    ++batches;
  }
  if (!batches) throw EvalError("model_similarity: no trials");
  return total / batches;
}

ResponseMatrix simulate_responders(const std::vector<Trial>& trials, const std::vector<double>& p_correct, int n,
                                   std::uint64_t seed) {
  if (p_correct.size() != trials.size()) throw EvalError("simulate_responders: one probability per trial required");
  for (double p : p_correct) {
    if (!(p >= 0.0 && p <= 1.0)) throw EvalError("simulate_responders: probabilities must lie in [0, 1]");
  }
  auto m = ResponseMatrix::for_trials(trials);
  for (int r = 0; r < n; ++r) {
    const char batch = r % 2 == 0 ? 'A' : 'B';
    const auto row = m.add_responder({"sim" + std::to_string(r) + "_" + batch, ResponderKind::Simulated});
    Rng rng(derive_seed(seed, {0x5173, static_cast<std::uint64_t>(r)}));
    for (std::size_t t = 0; t < trials.size(); ++t) m.outcomes[row][t] = uniform01(rng) < p_correct[t] ? 1 : 0;
  }
  return m;
}

json to_json(const ResponseRecord& r) {
  json j{{"trial_id", r.trial_id},
         {"responder_id", r.responder_id},
         {"responder_kind", to_string(r.kind)},
         {"choice", r.chose_target ? "target" : "lure"},
         {"correct", r.chose_target}};
  if (r.rt_ms) j["rt_ms"] = *r.rt_ms;
  return j;
}

ResponseRecord response_from_json(const json& j) {
  if (!j.is_object()) throw EvalError("response must be a JSON object");
  auto need = [&](const char* key) -> const json& {
    if (!j.contains(key)) throw EvalError(std::string("response missing '") + key + "'");
    return j.at(key);
  };
  ResponseRecord r;
  const auto& tid = need("trial_id");
  if (!tid.is_number_integer()) throw EvalError("response trial_id must be an integer");
  r.trial_id = tid.get<int>();
  const auto& rid = need("responder_id");
  if (!rid.is_string() || rid.get<std::string>().empty()) throw EvalError("response responder_id must be a non-empty string");
  r.responder_id = rid.get<std::string>();
  const auto& kind = need("responder_kind");
  if (!kind.is_string()) throw EvalError("response responder_kind must be a string");
  r.kind = responder_kind_from_string(kind.get<std::string>());
  const auto& choice = need("choice");
  if (!choice.is_string() || (choice != "target" && choice != "lure")) throw EvalError("response choice must be 'target' or 'lure'");
  r.chose_target = choice == "target";
  const auto& correct = need("correct");
  if (!correct.is_boolean()) throw EvalError("response correct must be a boolean");
  if (correct.get<bool>() != r.chose_target) throw EvalError("response correct disagrees with choice");
  if (j.contains("rt_ms") && !j.at("rt_ms").is_null()) {
    if (!j.at("rt_ms").is_number() || j.at("rt_ms").get<double>() < 0) throw EvalError("response rt_ms must be a non-negative number");
    r.rt_ms = j.at("rt_ms").get<double>();
  }
  return r;
}

std::vector<ResponseRecord> read_responses(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw EvalError("cannot open " + path.string());
  std::vector<ResponseRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(response_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw EvalError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void append_responses(const std::filesystem::path& path, const std::vector<ResponseRecord>& records) {
  std::ofstream f(path, std::ios::app);
  if (!f) throw EvalError("cannot append to " + path.string());
  for (const auto& r : records) f << to_json(r).dump() << "\n";
  f.flush();
  if (!f) throw EvalError("write failed on " + path.string());
}

ResponseMatrix response_matrix(const std::vector<Trial>& trials, const std::vector<ResponseRecord>& records) {
  auto m = ResponseMatrix::for_trials(trials);
  std::map<int, std::size_t> col;
  for (std::size_t c = 0; c < m.trial_ids.size(); ++c) col[m.trial_ids[c]] = c;
  std::map<std::string, std::size_t> row;
  for (const auto& r : records) {
    const auto c = col.find(r.trial_id);
    if (c == col.end()) throw EvalError("response for unknown trial id " + std::to_string(r.trial_id));
    auto it = row.find(r.responder_id);
    if (it == row.end()) it = row.emplace(r.responder_id, m.add_responder({r.responder_id, r.kind})).first;
    auto& cell = m.outcomes[it->second][c->second];
    if (cell >= 0) {
      throw EvalError("duplicate response from " + r.responder_id + " for trial " + std::to_string(r.trial_id));
    }
    cell = r.chose_target ? 1 : 0;
  }
  return m;
}

std::vector<ResponseRecord> to_records(const ResponseMatrix& m) {
  std::vector<ResponseRecord> out;
  for (std::size_t r = 0; r < m.responders.size(); ++r) {
    for (std::size_t c = 0; c < m.trial_ids.size(); ++c) {
      if (m.outcomes[r][c] < 0) continue;
      out.push_back({m.trial_ids[c], m.responders[r].id, m.responders[r].kind, m.outcomes[r][c] == 1, std::nullopt});
    }
  }
  return out;
}

}  // namespace viewmatch::evalign
