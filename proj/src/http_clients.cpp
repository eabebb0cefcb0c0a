#include "rlar/http_clients.hpp"

#include <httplib.h>

#include <cmath>

#include "rlar/error.hpp"

namespace rlar {

namespace {

std::string join_path(const std::string& base, std::string_view suffix) {
  if (base == "/" || base.empty()) return std::string(suffix);
  return base + std::string(suffix);
}

httplib::Client make_client(const HttpLocator& loc, std::chrono::milliseconds timeout) {
  if (loc.scheme != "http") {
    fail(ErrorCode::kBackendUnavailable, "https endpoints are not supported in this build: " + loc.origin());
  }
  httplib::Client client(loc.host, loc.port);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());
  return client;
}

Json post_json(const HttpLocator& loc, std::string_view path_suffix, const Json& body,
               std::chrono::milliseconds timeout, std::string_view what) {
  auto client = make_client(loc, timeout);
  const std::string path = join_path(loc.path, path_suffix);
  auto res = client.Post(path, body.dump(), "application/json");
  if (!res) {
    const auto err = res.error();
    const ErrorCode code = (err == httplib::Error::Read || err == httplib::Error::Write ||
                            err == httplib::Error::ConnectionTimeout)
                               ? ErrorCode::kTimeout
                               : ErrorCode::kBackendUnavailable;
    fail(code, std::string(what) + " at " + loc.origin() + path + ": " + httplib::to_string(err));
  }
  if (res->status != 200) {
    fail(ErrorCode::kBackendUnavailable, std::string(what) + " returned HTTP " +
                                             std::to_string(res->status) + ": " +
                                             truncate_text(res->body, 200));
  }
  try {
    return Json::parse(res->body);
  } catch (const Json::exception& e) {
    fail(ErrorCode::kBackendUnavailable, std::string(what) + " returned invalid JSON: " + e.what());
  }
}

}  // namespace

HttpAgentClient::HttpAgentClient(std::string endpoint, std::chrono::milliseconds timeout)
    : locator_(parse_http_locator(endpoint)), timeout_(timeout) {}

std::string HttpAgentClient::complete(const std::string& prompt) {
  const Json reply = post_json(locator_, "", Json{{"prompt", prompt}}, timeout_, "agent");
  if (!reply.contains("text") || !reply["text"].is_string()) {
    fail(ErrorCode::kBackendUnavailable, "agent reply has no \"text\" string");
  }
  return reply["text"].get<std::string>();
}

HttpSearchClient::HttpSearchClient(std::string endpoint, std::chrono::milliseconds timeout)
    : locator_(parse_http_locator(endpoint)), timeout_(timeout) {}

std::vector<SearchResult> HttpSearchClient::search(const std::string& query, int page) {
  const Json reply =
      post_json(locator_, "", Json{{"query", query}, {"page", page}}, timeout_, "search");
  try {
    return reply.at("results").get<std::vector<SearchResult>>();
  } catch (const Json::exception& e) {
    fail(ErrorCode::kBackendUnavailable, std::string("search reply malformed: ") + e.what());
  }
}

HttpHubClient::HttpHubClient(std::string endpoint, std::chrono::milliseconds timeout)
    : locator_(parse_http_locator(endpoint)), timeout_(timeout) {}

CandidateRepo HttpHubClient::inspect(const std::string& repo_id) {
  const Json reply = post_json(locator_, "/inspect", Json{{"repo_id", repo_id}}, timeout_, "hub inspect");
  try {
    return reply.get<CandidateRepo>();
  } catch (const Json::exception& e) {
    fail(ErrorCode::kBackendUnavailable, std::string("hub inspect reply malformed: ") + e.what());
  }
}

std::string HttpHubClient::deploy(const std::string& repo_id) {
  Json reply;
  try {
    reply = post_json(locator_, "/deploy", Json{{"repo_id", repo_id}}, timeout_, "hub deploy");
  } catch (const Error& e) {
    fail(ErrorCode::kHubDeployFailed, e.what());
  }
  if (!reply.contains("endpoint") || !reply["endpoint"].is_string()) {
    fail(ErrorCode::kHubDeployFailed, "hub deploy reply has no endpoint");
  }
  return reply["endpoint"].get<std::string>();
}

Json sidecar_score_request(const ContextTriplet& t) {
  return Json{{"prompt", t.query},
              {"response", t.response},
              {"reference", t.reference ? Json(*t.reference) : Json(nullptr)}};
}

double parse_sidecar_score(std::string_view body) {
  Json j;
  try {
    j = Json::parse(body);
  } catch (const Json::exception& e) {
    fail(ErrorCode::kBackendUnavailable, std::string("sidecar /score returned invalid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("score") || !j["score"].is_number()) {
    fail(ErrorCode::kBackendUnavailable, "sidecar /score reply has no numeric \"score\"");
  }
  const double value = j["score"].get<double>();
  if (!std::isfinite(value)) fail(ErrorCode::kBackendUnavailable, "sidecar score is not finite");
  return value;
}

EndpointHealth parse_sidecar_health(int status, std::string_view body) {
  EndpointHealth health;
  if (status != 200) return health;
  try {
    const Json j = Json::parse(body);
    health.reachable = true;
    health.loaded = j.value("loaded", false);
    health.model = j.value("model", std::string());
  } catch (const Json::exception&) {
    health.reachable = true;
  }
  return health;
}

HttpEndpointClient::HttpEndpointClient(std::chrono::milliseconds timeout) : timeout_(timeout) {}

EndpointHealth HttpEndpointClient::health(const std::string& base_url) {
  try {
    const auto loc = parse_http_locator(base_url);
    auto client = make_client(loc, timeout_);
    auto res = client.Get(join_path(loc.path, "/health"));
    if (!res) return {};
    return parse_sidecar_health(res->status, res->body);
  } catch (const Error&) {
    return {};
  }
}

double HttpEndpointClient::score(const std::string& base_url, const ContextTriplet& t) {
  HttpLocator loc;
  try {
    loc = parse_http_locator(base_url);
  } catch (const Error& e) {
    fail(ErrorCode::kBackendUnavailable, e.what());
  }
  auto client = make_client(loc, timeout_);
  const std::string path = join_path(loc.path, "/score");
  auto res = client.Post(path, sidecar_score_request(t).dump(), "application/json");
  if (!res) {
    const auto err = res.error();
    fail(err == httplib::Error::Read ? ErrorCode::kTimeout : ErrorCode::kBackendUnavailable,
         "sidecar " + loc.origin() + path + ": " + httplib::to_string(err));
  }
  if (res->status != 200) {
    fail(ErrorCode::kBackendUnavailable,
         "sidecar returned HTTP " + std::to_string(res->status) + ": " + truncate_text(res->body, 200));
  }
  return parse_sidecar_score(res->body);
}

}  // namespace rlar
