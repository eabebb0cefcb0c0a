#pragma once

#include <chrono>
#include <string>

#include "rlar/agent.hpp"
#include "rlar/config.hpp"
#include "rlar/invoke.hpp"
#include "rlar/synthesis.hpp"

// Plain-HTTP implementations of the external-service interfaces. Each call
// opens its own connection, so instances are safe to share across threads.
// https locators are rejected at call time (built without TLS).

namespace rlar {

/// POST <endpoint> {"prompt"} -> {"text"}
class HttpAgentClient final : public AgentClient {
 public:
  HttpAgentClient(std::string endpoint, std::chrono::milliseconds timeout);
  std::string complete(const std::string& prompt) override;

 private:
  HttpLocator locator_;
  std::chrono::milliseconds timeout_;
};

/// POST <endpoint> {"query", "page"} -> {"results": [SearchResult]}
class HttpSearchClient final : public SearchClient {
 public:
  HttpSearchClient(std::string endpoint, std::chrono::milliseconds timeout);
  std::vector<SearchResult> search(const std::string& query, int page) override;

 private:
  HttpLocator locator_;
  std::chrono::milliseconds timeout_;
};

/// POST <base>/inspect {"repo_id"} -> CandidateRepo
/// POST <base>/deploy {"repo_id"} -> {"endpoint"}
class HttpHubClient final : public ModelHubClient {
 public:
  HttpHubClient(std::string endpoint, std::chrono::milliseconds timeout);
  CandidateRepo inspect(const std::string& repo_id) override;
  std::string deploy(const std::string& repo_id) override;

 private:
  HttpLocator locator_;
  std::chrono::milliseconds timeout_;
};

/// The reward-model sidecar contract (see EndpointClient).
class HttpEndpointClient final : public EndpointClient {
 public:
  explicit HttpEndpointClient(std::chrono::milliseconds timeout);
  EndpointHealth health(const std::string& base_url) override;
  double score(const std::string& base_url, const ContextTriplet& t) override;

 private:
  std::chrono::milliseconds timeout_;
};

/// Sidecar /score request body for a triplet.
Json sidecar_score_request(const ContextTriplet& t);

/// Parses a sidecar /score response body. Throws kBackendUnavailable.
double parse_sidecar_score(std::string_view body);

/// Parses a sidecar /health response body.
EndpointHealth parse_sidecar_health(int status, std::string_view body);

}  // namespace rlar
