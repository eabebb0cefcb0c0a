#pragma once

#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rlar/agent.hpp"
#include "rlar/invoke.hpp"
#include "rlar/registry.hpp"
#include "rlar/router.hpp"
#include "rlar/sandbox.hpp"
#include "rlar/verification.hpp"

namespace rlar {

struct SearchResult {
  int position = 0;
  std::string title;
  std::string url;
  std::string snippet;
};

void to_json(Json& j, const SearchResult& r);
void from_json(const Json& j, SearchResult& r);

class SearchClient {
 public:
  virtual ~SearchClient() = default;
  /// One result page (0-based page index). Throws kBackendUnavailable.
  virtual std::vector<SearchResult> search(const std::string& query, int page) = 0;
};

class ModelHubClient {
 public:
  virtual ~ModelHubClient() = default;
  /// README, file list and, when known, the parameter count.
  virtual CandidateRepo inspect(const std::string& repo_id) = 0;
  /// Deploys the repository behind a sidecar and returns its base URL.
  /// Throws kHubDeployFailed.
  virtual std::string deploy(const std::string& repo_id) = 0;
};

/// Keeps reward-model repositories hosted as model repos with scalar
/// output; returns their positions in input order.
std::vector<int> filter_results(const std::vector<SearchResult>& results);

/// Agent-ordered permutation of the positions; identity on a bad reply.
std::vector<int> rerank(const std::vector<SearchResult>& results, const SynthesisSpec& spec,
                        AgentClient& agent);

/// "org/name" from a hub URL, falling back to the title.
std::string repo_id_from(const SearchResult& result);

struct WrapOptions {
  int max_rounds = 3;
  std::size_t page_size = 10;
  double max_params_billions = 10.0;
};

struct WrapResult {
  RewardTool tool;  // unverified wrapped_model tool
  CandidateRepo repo;
  std::string search_query;
  // 1-based rank of the chosen repository across result pages
  // (page index * page size + rank within the page).
  int retrieved_position = 0;
};

/// Query generation, paged retrieval, filter + rerank, deployment through
/// the hub, and agent-drafted name/description.
/// Throws kNoCandidateFound or kHubDeployFailed.
WrapResult wrapllm_pipeline(const SynthesisSpec& spec, SearchClient& search, ModelHubClient& hub,
                            AgentClient& agent, const WrapOptions& options = {});

double mean_retrieved_position(const std::vector<WrapResult>& runs);

enum class SchemeCategory { kRuleBased, kMetricBased, kModelBased };

std::string_view to_string(SchemeCategory category);

struct PlanScheme {
  int index = 0;
  SchemeCategory category = SchemeCategory::kRuleBased;
  std::string name;
  std::string description;
};

inline constexpr std::size_t kMaxPlanSchemes = 5;
inline constexpr int kMaxScriptAttempts = 2;

/// Parses "#### <Category>/<Name>: <description>" lines, at most five.
std::vector<PlanScheme> parse_plan(std::string_view reply);

/// First rule- or metric-based scheme; model-based proposals are skipped.
std::optional<PlanScheme> choose_scheme(const std::vector<PlanScheme>& plan);

/// Extracts the python block, optional requirements block and the first
/// compute_ function from a code-writing reply.
std::optional<SynthesizedScript> parse_script_reply(std::string_view reply);

enum class ScriptTemplate { kMathAnswer, kCodeTests, kTextMetric };

std::string_view to_string(ScriptTemplate kind);
std::optional<ScriptTemplate> parse_script_template(std::string_view text);
ScriptTemplate template_for(std::string_view task_label);
SynthesizedScript instantiate_template(ScriptTemplate kind);
TaskFamily family_of(ScriptTemplate kind);

struct CodeVerifyOptions {
  bool template_mode = false;
  // Template mode only; defaults to the template for the label's family.
  std::optional<ScriptTemplate> template_kind;
  std::chrono::milliseconds smoke_timeout = kScriptTimeout;
};

struct CodeVerifyResult {
  RewardTool tool;  // unverified synthesized_script tool
  SynthesizedScript script;
  std::vector<PlanScheme> plan;
  std::optional<PlanScheme> chosen;
  TaskFamily family = TaskFamily::kText;  // smoke triplets the script was run on
};

/// Plan, choose, write (two attempts) and smoke-run a verifier script. The
/// tool's backend points at scripts/<file> relative to wherever the script
/// is staged. Throws kNoViableScheme, kScriptGenerationFailed,
/// kSandboxUnavailable.
CodeVerifyResult codeverify_pipeline(const SynthesisSpec& spec, AgentClient& agent,
                                     SandboxClient& sandbox, const CodeVerifyOptions& options = {});

/// "scripts/<tool name>-<content hash>.py"
std::filesystem::path script_relative_path(std::string_view tool_name, std::string_view source);

/// Writes the script under `base_dir`; returns true when the file is new.
bool stage_script(const std::filesystem::path& base_dir, const RewardTool& tool,
                  const SynthesizedScript& script);

struct SynthesisEngineOptions {
  WrapOptions wrap;
  CodeVerifyOptions code;
};

/// Pipelines plus the verification gate, writing scripts next to the
/// library manifest. Search and hub clients are optional; without them
/// wrap_llm requests fail with kBackendUnavailable.
class SynthesisEngine final : public Synthesizer {
 public:
  SynthesisEngine(AgentClient& agent, SandboxClient& sandbox, EndpointClient& endpoints,
                  SearchClient* search, ModelHubClient* hub, SynthesisEngineOptions options = {});

  std::optional<SynthesisCandidate> synthesize(const SynthesisSpec& spec,
                                               const ToolLibrary& lib) override;

 private:
  AgentClient& agent_;
  SandboxClient& sandbox_;
  EndpointClient& endpoints_;
  SearchClient* search_;
  ModelHubClient* hub_;
  SynthesisEngineOptions options_;
};

/// Allows one synthesis at a time; concurrent requests get nullopt.
class RateLimitedSynthesizer final : public Synthesizer {
 public:
  explicit RateLimitedSynthesizer(Synthesizer& inner) : inner_(inner) {}

  std::optional<SynthesisCandidate> synthesize(const SynthesisSpec& spec,
                                               const ToolLibrary& lib) override;

 private:
  Synthesizer& inner_;
  std::mutex in_flight_;
};

}  // namespace rlar
