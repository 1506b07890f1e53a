// Copyright 2026 The viewmatch Authors
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <fstream>
#include <thread>

#include "doctest.h"
#include "viewmatch/cli/pipeline.hpp"
#include "viewmatch/cli/server.hpp"
// After the project headers: httplib pulls in system macros that clash with Eigen.
#include "httplib.h"

using namespace viewmatch;
using namespace viewmatch::cli;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("viewmatch_test_serve_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

evalign::Trial trial(int id, char batch) {
  evalign::Trial t;
  t.trial_id = id;
  t.pair_id = id / 2;
  t.batch = batch;
  t.sample = {"o" + std::to_string(id), 0, "s" + std::to_string(id) + ".png"};
  t.target = {"o" + std::to_string(id), 1, "t" + std::to_string(id) + ".png"};
  t.lure = {"x" + std::to_string(id), 2, "l" + std::to_string(id) + ".png"};
  t.condition = 1 + (id / 2) % 5;
  return t;
}

// 200 trials per batch plus 8 practice trials.
evalign::TrialSet trial_set() {
  evalign::TrialSet s;
  for (int i = 0; i < 400; ++i) s.trials.push_back(trial(i, i % 2 == 0 ? 'A' : 'B'));
  for (int i = 0; i < 8; ++i) s.practice.push_back(trial(1000 + i, i % 2 == 0 ? 'A' : 'B'));
  return s;
}

json response(int trial_id, const std::string& who, bool target) {
  return json{{"trial_id", trial_id}, {"responder_id", who}, {"responder_kind", "human"},
              {"choice", target ? "target" : "lure"}, {"correct", target}, {"rt_ms", 900}};
}

std::size_t line_count(const fs::path& p) {
  std::ifstream f(p);
  std::string line;
  std::size_t n = 0;
  while (std::getline(f, line)) n += !line.empty();
  return n;
}

}  // namespace

TEST_CASE("sessions alternate batches and carry the practice answer key only") {
  const auto dir = scratch("session");
  TaskService svc(trial_set(), dir / "r.jsonl", {});
  const auto a = svc.session("p1");
  const auto b = svc.session("p2");
  const auto c = svc.session("p3");
  REQUIRE(a.status == 200);
  CHECK(a.body["batch"] == "A");
  CHECK(b.body["batch"] == "B");
  CHECK(c.body["batch"] == "A");
  CHECK(svc.session("p2").body["batch"] == "B");  // a repeat request keeps the batch
  CHECK(a.body["practice"].size() == 6);
  CHECK(a.body["trials"].size() == 150);
  CHECK_FALSE(a.body["instructions"].get<std::string>().empty());
  for (const auto& t : a.body["practice"]) CHECK(t.at("answer") == "target");
  for (const auto& t : a.body["trials"]) {
    CHECK_FALSE(t.contains("answer"));
    CHECK(t.at("trial_id").get<int>() % 2 == 0);
  }
  // Main trials are the first 150 of the batch in manifest order, for everyone.
  CHECK(a.body["trials"][0]["trial_id"] == 0);
  CHECK(a.body["trials"][149]["trial_id"] == 298);
  CHECK(c.body["trials"] == a.body["trials"]);
  CHECK(svc.session("").status == 400);
  CHECK(svc.session("bad id!").status == 400);
}

TEST_CASE("response validation, duplicates and append-only storage") {
  const auto dir = scratch("responses");
  const auto path = dir / "r.jsonl";
  TaskService svc(trial_set(), path, {});
  svc.session("p1");  // batch A
  CHECK(svc.submit("{not json").status == 400);
  CHECK(svc.submit(json{{"trial_id", 0}}.dump()).status == 400);
  auto wrong = response(0, "p1", true);
  wrong["correct"] = false;
  CHECK(svc.submit(wrong.dump()).status == 400);
  CHECK(svc.submit(response(0, "nobody", true).dump()).status == 400);  // no session
  CHECK(svc.submit(response(1, "p1", true).dump()).status == 400);      // batch B trial
  CHECK(svc.submit(response(1000, "p1", true).dump()).status == 400);   // practice trial
  CHECK(svc.submit(response(398, "p1", true).dump()).status == 400);    // beyond the 150 served
  CHECK(line_count(path) == 0);
  CHECK(svc.submit(response(0, "p1", true).dump()).status == 200);
  const auto first = [&] {
    std::ifstream f(path);
    std::string s;
    std::getline(f, s);
    return s;
  }();
  CHECK(svc.submit(response(0, "p1", false).dump()).status == 409);
  CHECK(svc.submit(response(2, "p1", false).dump()).status == 200);
  CHECK(line_count(path) == 2);
  std::ifstream f(path);
  std::string again;
  std::getline(f, again);
  CHECK(again == first);
}

TEST_CASE("a restarted service keeps batches and duplicate checks") {
  const auto dir = scratch("restart");
  const auto path = dir / "r.jsonl";
  {
    TaskService svc(trial_set(), path, {});
    svc.session("p1");
    svc.session("p2");
    CHECK(svc.submit(response(3, "p2", true).dump()).status == 200);
    CHECK(svc.submit(response(0, "p1", true).dump()).status == 200);
  }
  TaskService svc(trial_set(), path, {});
  CHECK(svc.session("p2").body["batch"] == "B");
  CHECK(svc.submit(response(3, "p2", false).dump()).status == 409);
  CHECK(svc.session("p3").body["batch"] == "A");
  // A response file from another manifest is refused at startup.
  evalign::TrialSet other = trial_set();
  other.trials.erase(other.trials.begin(), other.trials.begin() + 4);
  CHECK_THROWS_AS(TaskService(other, path, {}), CliError);
}

TEST_CASE("service construction checks the manifest") {
  const auto dir = scratch("ctor");
  auto s = trial_set();
  s.practice.resize(3);
  CHECK_THROWS_AS(TaskService(s, dir / "r.jsonl", {}), CliError);
  ServeOptions opt;
  opt.practice_trials = 3;
  CHECK_NOTHROW(TaskService(s, dir / "r.jsonl", opt));
  auto only_a = trial_set();
  std::erase_if(only_a.trials, [](const evalign::Trial& t) { return t.batch == 'B'; });
  CHECK_THROWS_AS(TaskService(only_a, dir / "r.jsonl", {}), CliError);
}

TEST_CASE("http api: headless sessions round trip into the response matrix") {
  const auto dir = scratch("http");
  const auto set = trial_set();
  const auto manifest_path = dir / "trials.json";
  evalign::write_trials(manifest_path, set);
  const auto manifest_digest = file_digest(manifest_path);
  const auto path = dir / "responses.jsonl";
  ServeOptions opt;
  fs::create_directories(dir / "img");
  std::ofstream(dir / "img" / "s0.png") << "png-bytes";
  opt.images_dir = dir / "img";
  TaskService svc(evalign::read_trials(manifest_path), path, opt);
  TaskServer server(svc);
  const int port = server.bind("127.0.0.1", 0);
  std::thread th([&] { server.listen(); });
  httplib::Client client("127.0.0.1", port);
  client.set_connection_timeout(5);

  auto health = client.Get("/healthz");
  REQUIRE(health);
  CHECK(health->status == 200);
  CHECK(json::parse(health->body)["status"] == "ok");
  auto img = client.Get("/images/s0.png");
  REQUIRE(img);
  CHECK(img->body == "png-bytes");
  CHECK(client.Get("/api/session")->status == 400);

  // Four responders answer in parallel with a fixed rule.
  auto chooses_target = [](const std::string& who, int trial_id) { return (trial_id / 2 + static_cast<int>(who.back())) % 3 != 0; };
  std::vector<std::string> who{"h0", "h1", "h2", "h3"};
  std::vector<std::thread> clients;
  std::vector<int> failures(who.size(), 0);
  for (std::size_t r = 0; r < who.size(); ++r) {
    clients.emplace_back([&, r] {
      httplib::Client c("127.0.0.1", port);
      auto s = c.Get("/api/session?responder=" + who[r]);
      if (!s || s->status != 200) {
        ++failures[r];
        return;
      }
      const auto body = json::parse(s->body);
      for (const auto& t : body["trials"]) {
        const int id = t["trial_id"].get<int>();
        auto res = c.Post("/api/response", response(id, who[r], chooses_target(who[r], id)).dump(), "application/json");
        if (!res || res->status != 200) ++failures[r];
      }
      // A resubmitted answer is reported as a conflict.
      const int first = body["trials"][0]["trial_id"].get<int>();
      auto dup = c.Post("/api/response", response(first, who[r], true).dump(), "application/json");
      if (!dup || dup->status != 409) ++failures[r];
    });
  }
  for (auto& t : clients) t.join();
  for (int f : failures) CHECK(f == 0);
  auto bad = client.Post("/api/response", "{\"trial_id\": 0}", "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);
  server.stop();
  th.join();

  CHECK(file_digest(manifest_path) == manifest_digest);
  CHECK(line_count(path) == 4 * 150);
  const auto records = evalign::read_responses(path);
  const auto m = evalign::response_matrix(set.trials, records);
  // Direct construction from the same choices.
  auto direct = evalign::ResponseMatrix::for_trials(set.trials);
  for (const auto& w : who) {
    const auto row = direct.add_responder({w, evalign::ResponderKind::Human});
    const auto mr = std::find_if(m.responders.begin(), m.responders.end(), [&](const auto& x) { return x.id == w; });
    REQUIRE(mr != m.responders.end());
    const auto served = static_cast<std::size_t>(mr - m.responders.begin());
    int shown = 0;
    for (std::size_t c = 0; c < set.trials.size(); ++c) {
      if (m.outcomes[served][c] < 0) continue;
      ++shown;
      direct.outcomes[row][c] = chooses_target(w, set.trials[c].trial_id) ? 1 : 0;
    }
    CHECK(shown == 150);
  }
  // Rows may arrive in any order; compare per responder.
  for (const auto& w : who) {
    const auto a = std::find_if(m.responders.begin(), m.responders.end(), [&](const auto& x) { return x.id == w; }) - m.responders.begin();
    const auto b = std::find_if(direct.responders.begin(), direct.responders.end(), [&](const auto& x) { return x.id == w; }) - direct.responders.begin();
    CHECK(m.outcomes[static_cast<std::size_t>(a)] == direct.outcomes[static_cast<std::size_t>(b)]);
  }
  // Two responders per batch; the report over the answered trials is the
  // same from the served file and from the direct matrix.
  evalign::ModelOutcomes model{"m", "latents", set.trial_ids(), std::vector<double>(set.trials.size(), 1.0), 0};
  const auto from_file = evalign::build_report(set, m, {model});
  const auto from_direct = evalign::build_report(set, direct, {model});
  CHECK(from_file.rows.size() == from_direct.rows.size());
  for (std::size_t i = 0; i < from_file.rows.size(); ++i) {
    CHECK(from_file.rows[i].n_trials == from_direct.rows[i].n_trials);
    CHECK(from_file.rows[i].similarity == from_direct.rows[i].similarity);
    CHECK(from_file.rows[i].noise_ceiling_mean == from_direct.rows[i].noise_ceiling_mean);
  }
  CHECK(from_file.find("m", "latents", "all").n_trials == 300);
}
