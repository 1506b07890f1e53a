// Copyright 2026 The viewmatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "viewmatch/cli/server.hpp"

#include <algorithm>
#include <cctype>

#include "httplib.h"
#include "viewmatch/cli/pipeline.hpp"

namespace viewmatch::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

bool valid_responder_id(const std::string& id) {
  if (id.empty() || id.size() > 128) return false;
  return std::all_of(id.begin(), id.end(), [](unsigned char c) { return std::isalnum(c) || c == '_' || c == '-' || c == '.' || c == '@'; });
}

json error_body(const std::string& msg) { return json{{"error", msg}}; }

}  // namespace

TaskService::TaskService(evalign::TrialSet trials, fs::path responses, ServeOptions opt)
    : trials_(std::move(trials)), responses_(std::move(responses)), opt_(std::move(opt)) {
  if (opt_.main_trials < 1) throw CliError("serve-task: main trial count must be positive");
  if (opt_.practice_trials < 0) throw CliError("serve-task: practice trial count must be non-negative");
  if (static_cast<int>(trials_.practice.size()) < opt_.practice_trials) {
    throw CliError("serve-task: the trial manifest has " + std::to_string(trials_.practice.size()) +
                   " practice trials, " + std::to_string(opt_.practice_trials) + " required");
  }
  for (const auto& t : trials_.trials) {
    auto& list = main_[t.batch];
    if (static_cast<int>(list.size()) < opt_.main_trials) {
      list.push_back(&t);
      main_batch_[t.trial_id] = t.batch;
    }
  }
  for (char b : {'A', 'B'}) {
    const auto n = main_.count(b) ? main_[b].size() : 0;
    if (n == 0) throw CliError(std::string("serve-task: the trial manifest has no batch ") + b + " trials");
    if (static_cast<int>(n) < opt_.main_trials) {
      log(std::string("batch ") + b + " has " + std::to_string(n) + " trials; sessions get all of them");
    }
    sessions_[b] = 0;
  }
  if (fs::exists(responses_)) {
    for (const auto& r : evalign::read_responses(responses_)) {
      const auto it = main_batch_.find(r.trial_id);
      if (it == main_batch_.end()) {
        throw CliError("serve-task: " + responses_.string() + " holds a response for trial " +
                       std::to_string(r.trial_id) + ", which is not a served trial");
      }
      const auto [b, fresh] = batch_of_.emplace(r.responder_id, it->second);
      if (b->second != it->second) throw CliError("serve-task: responder " + r.responder_id + " answered both batches");
      if (fresh) ++sessions_[it->second];
      if (!answered_.insert({r.responder_id, r.trial_id}).second) {
        throw CliError("serve-task: duplicate response in " + responses_.string());
      }
      ++recorded_;
    }
  } else if (responses_.has_parent_path()) {
    fs::create_directories(responses_.parent_path());
  }
}

void TaskService::log(const std::string& line) {
  if (!opt_.log) return;
  std::lock_guard<std::mutex> lock(log_mu_);
  *opt_.log << "[serve-task] " << line << std::endl;
}

json TaskService::trial_payload(const evalign::Trial& t, bool with_answer) const {
  auto image = [&](const evalign::ViewRef& v) {
    return json{{"image", opt_.images_dir.empty() ? v.path : "/images/" + v.path}};
  };
  json j{{"trial_id", t.trial_id}, {"sample", image(t.sample)}, {"target", image(t.target)}, {"lure", image(t.lure)}};
  if (with_answer) j["answer"] = "target";
  return j;
}

TaskService::Reply TaskService::session(const std::string& responder_id) {
  if (!valid_responder_id(responder_id)) {
    log("rejected session: bad responder id");
    return {400, error_body("responder must be 1-128 characters of [A-Za-z0-9_.@-]")};
  }
  char batch;
  {
    std::lock_guard<std::mutex> lock(mu_);
    const auto it = batch_of_.find(responder_id);
    if (it != batch_of_.end()) {
      batch = it->second;
    } else {
      batch = sessions_['A'] <= sessions_['B'] ? 'A' : 'B';
      ++sessions_[batch];
      batch_of_[responder_id] = batch;
    }
  }
  json practice = json::array(), main = json::array();
  for (int i = 0; i < opt_.practice_trials; ++i) practice.push_back(trial_payload(trials_.practice[static_cast<std::size_t>(i)], true));
  for (const auto* t : main_.at(batch)) main.push_back(trial_payload(*t, false));
  return {200, json{{"responder_id", responder_id},
                    {"batch", std::string(1, batch)},
                    {"instructions", opt_.instructions},
                    {"practice", practice},
                    {"trials", main}}};
}

TaskService::Reply TaskService::submit(const std::string& body) {
  evalign::ResponseRecord rec;
  try {
    rec = evalign::response_from_json(json::parse(body));
  } catch (const std::exception& e) {
    log(std::string("rejected response: ") + e.what());
    return {400, error_body(std::string("invalid response: ") + e.what())};
  }
  std::lock_guard<std::mutex> lock(mu_);
  const auto s = batch_of_.find(rec.responder_id);
  if (s == batch_of_.end()) {
    log("rejected response: no session for " + rec.responder_id);
    return {400, error_body("no session for responder " + rec.responder_id)};
  }
  const auto t = main_batch_.find(rec.trial_id);
  if (t == main_batch_.end() || t->second != s->second) {
    log("rejected response: trial " + std::to_string(rec.trial_id) + " is not in the session of " + rec.responder_id);
    return {400, error_body("trial " + std::to_string(rec.trial_id) + " is not a main trial of this session")};
  }
  if (answered_.count({rec.responder_id, rec.trial_id})) {
    return {409, error_body("trial " + std::to_string(rec.trial_id) + " already answered by " + rec.responder_id)};
  }
  try {
    evalign::append_responses(responses_, {rec});
  } catch (const std::exception& e) {
    log(std::string("write failed: ") + e.what());
    return {500, error_body("could not store the response")};
  }
  answered_.insert({rec.responder_id, rec.trial_id});
  ++recorded_;
  return {200, json{{"status", "recorded"}, {"trial_id", rec.trial_id}}};
}

json TaskService::health() const { return json{{"status", "ok"}}; }

TaskServer::TaskServer(TaskService& service) : service_(service), server_(std::make_unique<httplib::Server>()) {
  auto send = [](httplib::Response& res, const TaskService::Reply& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  server_->Get("/api/session", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, service_.session(req.has_param("responder") ? req.get_param_value("responder") : std::string()));
  });
  server_->Post("/api/response", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, service_.submit(req.body));
  });
  server_->Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
    res.set_content(service_.health().dump(), "application/json");
  });
  const auto& opt = service_.options();
  if (!opt.images_dir.empty() && !server_->set_mount_point("/images", opt.images_dir.string())) {
    throw CliError("serve-task: cannot serve images from " + opt.images_dir.string());
  }
  if (!opt.static_dir.empty() && !server_->set_mount_point("/", opt.static_dir.string())) {
    throw CliError("serve-task: cannot serve the UI bundle from " + opt.static_dir.string());
  }
  server_->set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr) {
    res.status = 500;
    res.set_content(error_body("internal error").dump(), "application/json");
  });
}

TaskServer::~TaskServer() { stop(); }

int TaskServer::bind(const std::string& host, int port) {
  const int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (bound <= 0) throw CliError("serve-task: cannot bind " + host + ":" + std::to_string(port));
  return bound;
}

void TaskServer::listen() {
  if (!server_->listen_after_bind()) throw CliError("serve-task: server stopped with an error");
}

void TaskServer::stop() {
  if (server_) server_->stop();
}

}  // namespace viewmatch::cli
