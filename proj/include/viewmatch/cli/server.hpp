// Copyright 2026 The viewmatch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <ostream>
#include <set>
#include <string>

#include "json.hpp"
#include "viewmatch/evalign/metrics.hpp"

namespace httplib {
class Server;
}

namespace viewmatch::cli {

struct ServeOptions {
  int main_trials = 150;
  int practice_trials = 6;
  std::string instructions =
      "Each trial shows one object on top and two objects below. Choose the bottom object that is the same "
      "object as the top one, seen from a different viewpoint. Take as long as you need. The practice trials "
      "show whether you were right; the main trials do not.";
  // Served at / when set (the task UI bundle).
  std::filesystem::path static_dir;
  // Served at /images/ when set; trial image paths are relative to it.
  std::filesystem::path images_dir;
  std::ostream* log = nullptr;
};

// Session and response logic of the human task, independent of HTTP.
// Sessions alternate between batches A and B. Responses are validated,
// checked against the responder's session, and appended to a JSON-lines
// file by one writer; an existing file is read back on construction so a
// restarted server keeps its sessions and duplicate checks.
class TaskService {
 public:
  struct Reply {
    int status = 200;
    nlohmann::json body;
  };

  TaskService(evalign::TrialSet trials, std::filesystem::path responses, ServeOptions opt);

  Reply session(const std::string& responder_id);
  Reply submit(const std::string& body);
  nlohmann::json health() const;

  const ServeOptions& options() const { return opt_; }

 private:
  nlohmann::json trial_payload(const evalign::Trial& t, bool with_answer) const;
  void log(const std::string& line);

  evalign::TrialSet trials_;
  std::filesystem::path responses_;
  ServeOptions opt_;
  std::map<char, std::vector<const evalign::Trial*>> main_;  // per batch
  std::map<int, char> main_batch_;                             // trial id -> batch
  std::mutex mu_;
  std::mutex log_mu_;
  std::map<std::string, char> batch_of_;
  std::map<char, int> sessions_;
  std::set<std::pair<std::string, int>> answered_;
  std::size_t recorded_ = 0;
};

// HTTP front end:
//   GET  /api/session?responder=ID
//   POST /api/response
//   GET  /healthz
class TaskServer {
 public:
  explicit TaskServer(TaskService& service);
  ~TaskServer();
  TaskServer(const TaskServer&) = delete;
  TaskServer& operator=(const TaskServer&) = delete;

  // Returns the bound port; port 0 picks a free one.
  int bind(const std::string& host, int port);
  void listen();  // blocks until stop()
  void stop();

 private:
  TaskService& service_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace viewmatch::cli
