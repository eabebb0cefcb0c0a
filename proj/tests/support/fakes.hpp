#pragma once

#include <unistd.h>

#include <atomic>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <random>
#include <string>
#include <vector>

#include "rlar/agent.hpp"
#include "rlar/error.hpp"
#include "rlar/invoke.hpp"
#include "rlar/synthesis.hpp"

namespace rlar::testing {

// Replies in order; once the queue is empty the fallback function answers.
class ScriptedAgent final : public AgentClient {
 public:
  ScriptedAgent() = default;
  explicit ScriptedAgent(std::vector<std::string> replies) {
    for (auto& r : replies) replies_.push_back(std::move(r));
  }
  explicit ScriptedAgent(std::function<std::string(const std::string&)> fn)
      : fallback_(std::move(fn)) {}

  std::string complete(const std::string& prompt) override {
    std::lock_guard lock(mu_);
    prompts.push_back(prompt);
    if (!replies_.empty()) {
      auto reply = std::move(replies_.front());
      replies_.pop_front();
      return reply;
    }
    if (fallback_) return fallback_(prompt);
    fail(ErrorCode::kBackendUnavailable, "scripted agent has no reply left");
  }

  void push(std::string reply) {
    std::lock_guard lock(mu_);
    replies_.push_back(std::move(reply));
  }

  std::vector<std::string> prompts;

 private:
  std::mutex mu_;
  std::deque<std::string> replies_;
  std::function<std::string(const std::string&)> fallback_;
};

// Emits random printable junk, sometimes near-miss route syntax.
class GarbageAgent final : public AgentClient {
 public:
  explicit GarbageAgent(std::uint64_t seed) : rng_(seed) {}

  std::string complete(const std::string&) override {
    std::lock_guard lock(mu_);
    ++calls;
    static const std::vector<std::string> near_misses = {
        "SELECT", "SELECT nonexistent-tool", "SELECT nem-math extra", "SYNTHESIZE",
        "SYNTHESIZE fancy_strategy math", "SYNTHESIZE wrap_llm", "select", "{}",
        "", "\n\n", "SELECTnem-math", "SYNTHESIZE code_verify"};
    std::uniform_int_distribution<int> mode(0, 3);
    if (mode(rng_) == 0) {
      return near_misses[std::uniform_int_distribution<std::size_t>(0, near_misses.size() - 1)(rng_)];
    }
    if (mode(rng_) == 1) fail(ErrorCode::kBackendUnavailable, "garbage agent transport failure");
    std::string out;
    const auto len = std::uniform_int_distribution<int>(0, 80)(rng_);
    for (int i = 0; i < len; ++i) {
      out.push_back(static_cast<char>(std::uniform_int_distribution<int>(1, 126)(rng_)));
    }
    return out;
  }

  std::atomic<int> calls{0};

 private:
  std::mutex mu_;
  std::mt19937_64 rng_;
};

// In-process stand-in for the reward-model sidecar.
class StubEndpoint final : public EndpointClient {
 public:
  EndpointHealth health(const std::string& url) override {
    std::lock_guard lock(mu_);
    health_calls.push_back(url);
    if (!up) return {};
    return EndpointHealth{true, loaded, "stub-rm"};
  }

  double score(const std::string& url, const ContextTriplet& t) override {
    std::lock_guard lock(mu_);
    score_calls.push_back(url);
    if (!up) fail(ErrorCode::kBackendUnavailable, "stub endpoint down");
    if (scorer) return scorer(t);
    return fixed_score;
  }

  bool up = true;
  bool loaded = true;
  double fixed_score = 0.0;
  std::function<double(const ContextTriplet&)> scorer;
  std::vector<std::string> health_calls;
  std::vector<std::string> score_calls;

 private:
  std::mutex mu_;
};

class FixtureSearch final : public SearchClient {
 public:
  std::vector<SearchResult> search(const std::string& query, int page) override {
    queries.push_back(query);
    pages_requested.push_back(page);
    if (page < 0 || static_cast<std::size_t>(page) >= pages.size()) return {};
    return pages[static_cast<std::size_t>(page)];
  }

  std::vector<std::vector<SearchResult>> pages;
  std::vector<std::string> queries;
  std::vector<int> pages_requested;
};

class FixtureHub final : public ModelHubClient {
 public:
  CandidateRepo inspect(const std::string& repo_id) override {
    inspected.push_back(repo_id);
    const auto it = repos.find(repo_id);
    if (it == repos.end()) fail(ErrorCode::kBackendUnavailable, "no such repo " + repo_id);
    return it->second;
  }

  std::string deploy(const std::string& repo_id) override {
    deployed.push_back(repo_id);
    if (fail_deploy) fail(ErrorCode::kHubDeployFailed, "deployment refused");
    return "http://127.0.0.1:9/" + repo_id;
  }

  std::map<std::string, CandidateRepo> repos;
  bool fail_deploy = false;
  std::vector<std::string> inspected;
  std::vector<std::string> deployed;
};

// Synthesizer that hands back a prepared candidate.
class CannedSynthesizer final : public Synthesizer {
 public:
  std::optional<SynthesisCandidate> synthesize(const SynthesisSpec& spec,
                                               const ToolLibrary&) override {
    ++calls;
    last_spec = spec;
    if (throw_error) fail(ErrorCode::kScriptGenerationFailed, "canned failure");
    return candidate;
  }

  std::optional<SynthesisCandidate> candidate;
  bool throw_error = false;
  int calls = 0;
  std::optional<SynthesisSpec> last_spec;
};

// Fresh temporary directory removed on destruction.
class ScratchDir {
 public:
  ScratchDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("rlar-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

inline ContextTriplet triplet(std::string query, std::string response,
                              std::optional<std::string> reference, TagSet tags = {},
                              std::string source_id = "t") {
  return ContextTriplet{std::move(query), std::move(response), std::move(reference),
                        std::move(tags), std::move(source_id)};
}

}  // namespace rlar::testing
