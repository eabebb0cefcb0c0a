#include "rlar/config.hpp"

#include <charconv>
#include <cmath>
#include <regex>

#include "rlar/error.hpp"
#include "rlar/sandbox.hpp"

namespace rlar {

namespace {

int parse_port(std::string_view text, std::string_view what) {
  int port = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), port);
  if (ec != std::errc() || ptr != text.data() + text.size() || port < 0 || port > 65535) {
    fail(ErrorCode::kInvalidArgument, std::string(what) + ": bad port '" + std::string(text) + "'");
  }
  return port;
}

}  // namespace

std::string HttpLocator::origin() const {
  return scheme + "://" + host + ":" + std::to_string(port);
}

HttpLocator parse_http_locator(std::string_view text) {
  static const std::regex kLocator(R"(^(https?)://([A-Za-z0-9.\-]+|\[[0-9A-Fa-f:]+\])(?::(\d{1,5}))?(/[^\s?#]*)?$)");
  const std::string s(text);
  std::smatch m;
  if (!std::regex_match(s, m, kLocator)) {
    fail(ErrorCode::kInvalidArgument, "not an http(s) locator: '" + s + "'");
  }
  HttpLocator loc;
  loc.scheme = m.str(1);
  loc.host = m.str(2);
  loc.port = m[3].matched ? parse_port(m.str(3), "locator") : (loc.scheme == "https" ? 443 : 80);
  loc.path = m[4].matched ? m.str(4) : "/";
  while (loc.path.size() > 1 && loc.path.back() == '/') loc.path.pop_back();
  return loc;
}

bool is_valid_http_locator(std::string_view text) {
  try {
    parse_http_locator(text);
    return true;
  } catch (const Error&) {
    return false;
  }
}

std::pair<std::string, int> parse_listen_address(std::string_view text) {
  const auto colon = text.rfind(':');
  if (colon == std::string_view::npos || colon == 0) {
    fail(ErrorCode::kInvalidArgument, "listen_address must be host:port, got '" + std::string(text) + "'");
  }
  return {std::string(text.substr(0, colon)), parse_port(text.substr(colon + 1), "listen_address")};
}

void ServiceConfig::validate() const {
  parse_listen_address(listen_address);
  if (manifest_path.empty()) fail(ErrorCode::kInvalidArgument, "manifest_path is empty");
  for (const auto& [field, value] : {std::pair<std::string_view, const std::string&>{"agent_endpoint", agent_endpoint},
                                     {"search_endpoint", search_endpoint},
                                     {"hub_endpoint", hub_endpoint}}) {
    if (!value.empty() && !is_valid_http_locator(value)) {
      fail(ErrorCode::kInvalidArgument, std::string(field) + " is not a valid http(s) locator: '" + value + "'");
    }
  }
  if (split_command(sandbox_command).empty()) {
    fail(ErrorCode::kInvalidArgument, "sandbox_command is empty");
  }
  if (default_group_size < 2) fail(ErrorCode::kInvalidArgument, "default_group_size must be >= 2");
  if (!(clip_threshold > 0.0) || !std::isfinite(clip_threshold)) {
    fail(ErrorCode::kInvalidArgument, "clip_threshold must be a positive number");
  }
  if (request_timeout.count() <= 0) fail(ErrorCode::kInvalidArgument, "request_timeout must be positive");
  if (audit_queue_capacity == 0) fail(ErrorCode::kInvalidArgument, "audit_queue_capacity must be positive");
}

ServiceConfig config_from_json(const Json& j, ServiceConfig base) {
  if (!j.is_object()) fail(ErrorCode::kInvalidArgument, "config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "listen_address") base.listen_address = value.get<std::string>();
      else if (key == "manifest_path") base.manifest_path = value.get<std::string>();
      else if (key == "agent_endpoint") base.agent_endpoint = value.get<std::string>();
      else if (key == "search_endpoint") base.search_endpoint = value.get<std::string>();
      else if (key == "hub_endpoint") base.hub_endpoint = value.get<std::string>();
      else if (key == "sandbox_command") base.sandbox_command = value.get<std::string>();
      else if (key == "default_group_size") base.default_group_size = value.get<int>();
      else if (key == "clip_threshold") base.clip_threshold = value.get<double>();
      else if (key == "strict_format") base.strict_format = value.get<bool>();
      else if (key == "request_timeout_ms") base.request_timeout = std::chrono::milliseconds(value.get<long>());
      else if (key == "audit_log") base.audit_log = value.get<std::string>();
      else if (key == "audit_queue_capacity") base.audit_queue_capacity = value.get<std::size_t>();
      else fail(ErrorCode::kInvalidArgument, "unknown config key '" + key + "'");
    }
  } catch (const Json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("config: ") + e.what());
  }
  return base;
}

Json config_to_json(const ServiceConfig& c) {
  return Json{{"listen_address", c.listen_address},
              {"manifest_path", c.manifest_path.string()},
              {"agent_endpoint", c.agent_endpoint},
              {"search_endpoint", c.search_endpoint},
              {"hub_endpoint", c.hub_endpoint},
              {"sandbox_command", c.sandbox_command},
              {"default_group_size", c.default_group_size},
              {"clip_threshold", c.clip_threshold},
              {"strict_format", c.strict_format},
              {"request_timeout_ms", c.request_timeout.count()},
              {"audit_log", c.audit_log.string()},
              {"audit_queue_capacity", c.audit_queue_capacity}};
}

namespace {

template <typename T>
T parse_number(std::string_view name, const std::string& text) {
  T value{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    fail(ErrorCode::kInvalidArgument, std::string(name) + ": not a number: '" + text + "'");
  }
  return value;
}

bool parse_bool(std::string_view name, const std::string& text) {
  if (text == "1" || text == "true" || text == "yes" || text == "on") return true;
  if (text == "0" || text == "false" || text == "no" || text == "off") return false;
  fail(ErrorCode::kInvalidArgument, std::string(name) + ": not a boolean: '" + text + "'");
}

}  // namespace

void apply_env_overrides(ServiceConfig& c, const EnvLookup& getenv) {
  auto get = [&](const char* name) -> std::optional<std::string> {
    const char* v = getenv(name);
    if (v == nullptr) return std::nullopt;
    return std::string(v);
  };
  if (auto v = get("RLAR_LISTEN_ADDRESS")) c.listen_address = *v;
  if (auto v = get("RLAR_MANIFEST_PATH")) c.manifest_path = *v;
  if (auto v = get("RLAR_AGENT_ENDPOINT")) c.agent_endpoint = *v;
  if (auto v = get("RLAR_SEARCH_ENDPOINT")) c.search_endpoint = *v;
  if (auto v = get("RLAR_HUB_ENDPOINT")) c.hub_endpoint = *v;
  if (auto v = get("RLAR_SANDBOX_COMMAND")) c.sandbox_command = *v;
  if (auto v = get("RLAR_DEFAULT_GROUP_SIZE")) c.default_group_size = parse_number<int>("RLAR_DEFAULT_GROUP_SIZE", *v);
  if (auto v = get("RLAR_CLIP_THRESHOLD")) c.clip_threshold = parse_number<double>("RLAR_CLIP_THRESHOLD", *v);
  if (auto v = get("RLAR_STRICT_FORMAT")) c.strict_format = parse_bool("RLAR_STRICT_FORMAT", *v);
  if (auto v = get("RLAR_REQUEST_TIMEOUT_MS")) {
    c.request_timeout = std::chrono::milliseconds(parse_number<long>("RLAR_REQUEST_TIMEOUT_MS", *v));
  }
  if (auto v = get("RLAR_AUDIT_LOG")) c.audit_log = *v;
  if (auto v = get("RLAR_AUDIT_QUEUE_CAPACITY")) {
    c.audit_queue_capacity = parse_number<std::size_t>("RLAR_AUDIT_QUEUE_CAPACITY", *v);
  }
}

}  // namespace rlar
