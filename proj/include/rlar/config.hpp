#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>

#include "rlar/serialization.hpp"

namespace rlar {

struct ServiceConfig {
  std::string listen_address = "127.0.0.1:8080";
  std::filesystem::path manifest_path = "library/manifest.json";
  // Empty endpoints mean "not configured".
  std::string agent_endpoint;
  std::string search_endpoint;
  std::string hub_endpoint;
  std::string sandbox_command = "python3 -I -B";
  int default_group_size = 8;
  double clip_threshold = 1.0;
  bool strict_format = true;
  std::chrono::milliseconds request_timeout{30000};
  std::filesystem::path audit_log = "audit.jsonl";
  std::size_t audit_queue_capacity = 1024;

  /// Throws kInvalidArgument naming the offending field.
  void validate() const;
};

/// Overlays keys present in `j` (same names as the struct fields, with
/// request_timeout given as request_timeout_ms) onto `base`.
ServiceConfig config_from_json(const Json& j, ServiceConfig base = {});
Json config_to_json(const ServiceConfig& config);

using EnvLookup = std::function<const char*(const char*)>;

/// RLAR_<FIELD> environment variables, e.g. RLAR_CLIP_THRESHOLD.
void apply_env_overrides(ServiceConfig& config, const EnvLookup& getenv);

struct HttpLocator {
  std::string scheme;  // "http" or "https"
  std::string host;
  int port = 80;
  std::string path;  // starts with '/', no trailing slash unless root

  std::string origin() const;  // scheme://host:port
};

/// Throws kInvalidArgument.
HttpLocator parse_http_locator(std::string_view text);
bool is_valid_http_locator(std::string_view text);

/// "host:port"; throws kInvalidArgument.
std::pair<std::string, int> parse_listen_address(std::string_view text);

}  // namespace rlar
