#include "rlar/service.hpp"

#include <httplib.h>

#include <chrono>

#include "rlar/error.hpp"

namespace rlar {

AuditLog::AuditLog(const std::filesystem::path& path, std::size_t capacity)
    : capacity_(capacity == 0 ? 1 : capacity) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  out_.open(path, std::ios::app);
  if (!out_) fail(ErrorCode::kPersistenceFailure, "cannot open audit log " + path.string());
  writer_ = std::thread([this] { drain(); });
}

AuditLog::~AuditLog() { close(); }

void AuditLog::append(Json entry) {
  std::unique_lock lock(mu_);
  not_full_.wait(lock, [&] { return closed_ || queue_.size() < capacity_; });
  if (closed_) return;
  queue_.push_back(std::move(entry));
  not_empty_.notify_one();
}

void AuditLog::flush() {
  std::unique_lock lock(mu_);
  idle_.wait(lock, [&] { return queue_.empty() && !writing_; });
}

void AuditLog::close() {
  {
    std::lock_guard lock(mu_);
    if (closed_) return;
    closed_ = true;
  }
  not_empty_.notify_all();
  not_full_.notify_all();
  if (writer_.joinable()) writer_.join();
}

void AuditLog::drain() {
  std::unique_lock lock(mu_);
  while (true) {
    not_empty_.wait(lock, [&] { return closed_ || !queue_.empty(); });
    if (queue_.empty()) break;  // closed and drained
    std::deque<Json> batch;
    batch.swap(queue_);
    writing_ = true;
    not_full_.notify_all();
    lock.unlock();
    for (const auto& entry : batch) out_ << entry.dump() << '\n';
    out_.flush();
    lock.lock();
    writing_ = false;
    if (queue_.empty()) idle_.notify_all();
  }
  idle_.notify_all();
}

std::vector<Json> read_audit_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kPersistenceFailure, "cannot read audit log " + path.string());
  std::vector<Json> entries;
  for (std::string line; std::getline(in, line);) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    entries.push_back(parse_json(line, "audit entry"));
  }
  return entries;
}

HandlerReply error_reply(ErrorCode code, const std::string& message) {
  int status = 500;
  switch (code) {
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kReferenceUnparseable:
    case ErrorCode::kGroupTooSmall:
    case ErrorCode::kUnverifiedTool:
      status = 400;
      break;
    case ErrorCode::kBackendUnavailable:
    case ErrorCode::kSandboxUnavailable:
    case ErrorCode::kEmptyLibrary:
      status = 503;
      break;
    case ErrorCode::kTimeout:
      status = 504;
      break;
    case ErrorCode::kScriptError:
      status = 502;
      break;
    default:
      break;
  }
  return HandlerReply{status, Json{{"error", {{"code", to_string(code)}, {"message", message}}}}};
}

namespace {

constexpr std::size_t kRouteCacheCapacity = 65536;

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

Json parse_body(std::string_view body) {
  Json j = parse_json(body, "request body");
  if (!j.is_object()) fail(ErrorCode::kInvalidArgument, "request body must be a JSON object");
  return j;
}

ContextTriplet triplet_from(const Json& j) {
  try {
    auto t = j.get<ContextTriplet>();
    t.validate();
    return t;
  } catch (const Json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("bad triplet: ") + e.what());
  }
}

Json score_body(const RouteResult& r) {
  return Json{{"score", r.score.value},
              {"scale", to_string(r.score.scale)},
              {"raw", r.score.raw ? Json(*r.score.raw) : Json(nullptr)},
              {"tool_used", r.tool_used},
              {"route_action", to_string(r.decision.action)},
              {"rationale", r.decision.rationale},
              {"library_version", r.library->version}};
}

template <typename Fn>
HandlerReply guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    return error_reply(e.code(), e.what());
  } catch (const Json::exception& e) {
    return error_reply(ErrorCode::kInvalidArgument, e.what());
  } catch (const std::exception& e) {
    return HandlerReply{500, Json{{"error", {{"code", "internal"}, {"message", e.what()}}}}};
  }
}

}  // namespace

ScoringService::ScoringService(ServiceConfig config, LibraryStore& store, ServiceDeps deps)
    : config_(std::move(config)),
      store_(store),
      agent_(deps.agent),
      invoker_(deps.invoker),
      audit_(deps.audit) {
  if (deps.synthesizer != nullptr) {
    synthesizer_ = std::make_unique<RateLimitedSynthesizer>(*deps.synthesizer);
  }
}

std::optional<RouteDecision> ScoringService::cached(const std::string& source_id,
                                                    std::uint64_t version) const {
  if (source_id.empty()) return std::nullopt;
  std::lock_guard lock(cache_mu_);
  const auto it = route_cache_.find({source_id, version});
  if (it == route_cache_.end()) return std::nullopt;
  return it->second;
}

void ScoringService::remember(const std::string& source_id, std::uint64_t version,
                              const RouteDecision& d) {
  if (source_id.empty() || d.action != RouteAction::kSelect) return;
  std::lock_guard lock(cache_mu_);
  if (route_cache_.size() >= kRouteCacheCapacity) route_cache_.clear();
  route_cache_.emplace(std::make_pair(source_id, version), d);
}

std::size_t ScoringService::cached_routes() const {
  std::lock_guard lock(cache_mu_);
  return route_cache_.size();
}

HandlerReply ScoringService::handle_score(std::string_view body) {
  const auto start = Clock::now();
  Json audit_entry{{"timestamp", format_rfc3339(now_seconds())}, {"endpoint", "/score"}};
  HandlerReply reply = guarded([&] {
    const Json req = parse_body(body);
    const ContextTriplet t = triplet_from(req);
    audit_entry["triplet"] = t;
    std::optional<std::string> tool_override;
    if (auto it = req.find("tool"); it != req.end() && !it->is_null()) {
      tool_override = it->get<std::string>();
      audit_entry["tool_override"] = *tool_override;
    }

    auto lib = store_.snapshot();
    audit_entry["library_version"] = lib->version;
    RouteDecision decision;
    if (tool_override) {
      // Overrides report the tool's own failure rather than falling back.
      const RouteResult result =
          score_with_tool(t, store_, *tool_override, invoker_, RouteDecision::select(*tool_override, "tool override"));
      audit_entry["library_version"] = result.library->version;
      audit_entry["tool_used"] = result.tool_used;
      audit_entry["score"] = result.score;
      audit_entry["route_action"] = "select";
      return HandlerReply{200, score_body(result)};
    } else if (auto hit = cached(t.source_id, lib->version)) {
      decision = std::move(*hit);
    } else {
      decision = assess(t, *lib, agent_);
      remember(t.source_id, lib->version, decision);
    }
    const RouteResult result =
        execute_route(t, store_, std::move(lib), std::move(decision), synthesizer_.get(), invoker_);

    Json out = score_body(result);
    audit_entry["library_version"] = result.library->version;
    audit_entry["tool_used"] = result.tool_used;
    audit_entry["score"] = result.score;
    audit_entry["route_action"] = to_string(result.decision.action);
    return HandlerReply{200, std::move(out)};
  });
  const double latency = elapsed_ms(start);
  if (reply.status == 200) reply.body["latency_ms"] = latency;
  if (audit_ != nullptr) {
    audit_entry["status"] = reply.status;
    audit_entry["latency_ms"] = latency;
    if (reply.status != 200) audit_entry["error"] = reply.body["error"];
    if (!audit_entry.contains("library_version")) {
      audit_entry["library_version"] = store_.snapshot()->version;
    }
    audit_->append(std::move(audit_entry));
  }
  return reply;
}

HandlerReply ScoringService::handle_route(std::string_view body) {
  return guarded([&] {
    const ContextTriplet t = triplet_from(parse_body(body));
    auto lib = store_.snapshot();
    bool from_cache = false;
    RouteDecision decision;
    if (auto hit = cached(t.source_id, lib->version)) {
      decision = std::move(*hit);
      from_cache = true;
    } else {
      decision = assess(t, *lib, agent_);
      remember(t.source_id, lib->version, decision);
    }
    return HandlerReply{200, Json{{"decision", decision},
                                  {"library_version", lib->version},
                                  {"cached", from_cache}}};
  });
}

HandlerReply ScoringService::handle_advantages(std::string_view body) {
  return guarded([&] {
    const Json req = parse_body(body);
    std::vector<RewardGroup> groups;
    if (req.contains("groups")) {
      groups = req.at("groups").get<std::vector<RewardGroup>>();
    } else if (req.contains("rewards")) {
      // A flat batch of rewards split into consecutive groups of G.
      const auto rewards = req.at("rewards").get<std::vector<double>>();
      const int g = req.value("group_size", config_.default_group_size);
      if (g < 2) fail(ErrorCode::kGroupTooSmall, "group_size must be >= 2");
      if (rewards.size() % static_cast<std::size_t>(g) != 0) {
        fail(ErrorCode::kInvalidArgument, "reward count " + std::to_string(rewards.size()) +
                                              " is not a multiple of group_size " + std::to_string(g));
      }
      const std::string prefix = req.value("prompt_id", std::string("batch"));
      for (std::size_t i = 0; i < rewards.size(); i += static_cast<std::size_t>(g)) {
        RewardGroup group;
        group.prompt_id = prefix + "-" + std::to_string(i / static_cast<std::size_t>(g));
        group.rewards.assign(rewards.begin() + static_cast<std::ptrdiff_t>(i),
                             rewards.begin() + static_cast<std::ptrdiff_t>(i) + g);
        groups.push_back(std::move(group));
      }
    } else {
      fail(ErrorCode::kInvalidArgument, "body needs \"groups\" or \"rewards\"");
    }
    ClipAccumulator acc(req.value("threshold", config_.clip_threshold));
    Json out_groups = Json::array();
    for (const auto& g : groups) {
      const auto adv = compute_advantages(g);
      acc.add(adv, g.step.value_or(0));
      out_groups.push_back(adv);
    }
    return HandlerReply{200, Json{{"groups", out_groups}, {"clip_stats", acc.stats()}}};
  });
}

HandlerReply ScoringService::handle_library() const {
  return HandlerReply{200, manifest_json(*store_.snapshot())};
}

HandlerReply ScoringService::handle_health() const {
  const auto lib = store_.snapshot();
  return HandlerReply{200, Json{{"status", "ok"},
                                {"library_version", lib->version},
                                {"tools", lib->tools.size()},
                                {"verified", lib->verified_count()}}};
}

HttpService::HttpService(ScoringService& service)
    : service_(service), server_(std::make_unique<httplib::Server>()) {
  auto respond = [](httplib::Response& res, const HandlerReply& reply) {
    res.status = reply.status;
    res.set_content(reply.body.dump(), "application/json");
  };
  server_->Post("/score", [this, respond](const httplib::Request& req, httplib::Response& res) {
    respond(res, service_.handle_score(req.body));
  });
  server_->Post("/route", [this, respond](const httplib::Request& req, httplib::Response& res) {
    respond(res, service_.handle_route(req.body));
  });
  server_->Post("/advantages", [this, respond](const httplib::Request& req, httplib::Response& res) {
    respond(res, service_.handle_advantages(req.body));
  });
  server_->Get("/library", [this, respond](const httplib::Request&, httplib::Response& res) {
    respond(res, service_.handle_library());
  });
  server_->Get("/health", [this, respond](const httplib::Request&, httplib::Response& res) {
    respond(res, service_.handle_health());
  });
  server_->set_exception_handler(
      [respond](const httplib::Request&, httplib::Response& res, std::exception_ptr) {
        respond(res, HandlerReply{500, Json{{"error", {{"code", "internal"}, {"message", "unhandled exception"}}}}});
      });
  server_->set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (!res.body.empty()) return;
    res.set_content(Json{{"error", {{"code", "not_found"}, {"message", "no route for " + req.method + " " + req.path}}}}.dump(),
                    "application/json");
  });
}

HttpService::~HttpService() { stop(); }

int HttpService::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = server_->bind_to_any_port(host);
    if (bound < 0) fail(ErrorCode::kInvalidArgument, "cannot bind " + host);
    return bound;
  }
  if (!server_->bind_to_port(host, port)) {
    fail(ErrorCode::kInvalidArgument, "cannot bind " + host + ":" + std::to_string(port));
  }
  return port;
}

void HttpService::listen() { server_->listen_after_bind(); }

void HttpService::stop() {
  if (server_) server_->stop();
}

}  // namespace rlar
