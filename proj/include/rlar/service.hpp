#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <utility>

#include "rlar/advantage.hpp"
#include "rlar/config.hpp"
#include "rlar/error.hpp"
#include "rlar/invoke.hpp"
#include "rlar/registry.hpp"
#include "rlar/router.hpp"
#include "rlar/synthesis.hpp"

namespace httplib {
class Server;
}

namespace rlar {

/// Append-only JSON-lines log. append() hands the entry to a single writer
/// thread through a bounded queue and blocks while the queue is full.
class AuditLog {
 public:
  AuditLog(const std::filesystem::path& path, std::size_t capacity);
  ~AuditLog();
  AuditLog(const AuditLog&) = delete;
  AuditLog& operator=(const AuditLog&) = delete;

  void append(Json entry);
  /// Waits until every queued entry is on disk.
  void flush();
  void close();

 private:
  void drain();

  std::ofstream out_;
  std::size_t capacity_;
  std::mutex mu_;
  std::condition_variable not_empty_;
  std::condition_variable not_full_;
  std::condition_variable idle_;
  std::deque<Json> queue_;
  bool writing_ = false;
  bool closed_ = false;
  std::thread writer_;
};

/// Reads an audit log back; blank lines are skipped.
std::vector<Json> read_audit_log(const std::filesystem::path& path);

struct ServiceDeps {
  AgentClient& agent;
  const ToolInvoker& invoker;
  Synthesizer* synthesizer = nullptr;  // wrapped in a one-at-a-time limiter
  AuditLog* audit = nullptr;
};

struct HandlerReply {
  int status = 200;
  Json body;
};

/// HTTP status and structured error body for a failure.
HandlerReply error_reply(ErrorCode code, const std::string& message);

/// Request handling without the socket layer, so it can be exercised
/// directly. All handle_* members are thread-safe.
class ScoringService {
 public:
  ScoringService(ServiceConfig config, LibraryStore& store, ServiceDeps deps);

  HandlerReply handle_score(std::string_view body);
  HandlerReply handle_route(std::string_view body);
  HandlerReply handle_advantages(std::string_view body);
  HandlerReply handle_library() const;
  HandlerReply handle_health() const;

  std::size_t cached_routes() const;

 private:
  std::optional<RouteDecision> cached(const std::string& source_id, std::uint64_t version) const;
  void remember(const std::string& source_id, std::uint64_t version, const RouteDecision& d);

  ServiceConfig config_;
  LibraryStore& store_;
  AgentClient& agent_;
  const ToolInvoker& invoker_;
  std::unique_ptr<RateLimitedSynthesizer> synthesizer_;
  AuditLog* audit_;
  mutable std::mutex cache_mu_;
  std::map<std::pair<std::string, std::uint64_t>, RouteDecision> route_cache_;
};

/// Binds the handlers to an HTTP server.
class HttpService {
 public:
  explicit HttpService(ScoringService& service);
  ~HttpService();

  /// Binds to host:port (port 0 picks a free one) and returns the port.
  /// Throws kInvalidArgument when the address cannot be bound.
  int bind(const std::string& host, int port);
  /// Blocks serving until stop(); in-flight requests finish before return.
  void listen();
  void stop();

 private:
  ScoringService& service_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace rlar
