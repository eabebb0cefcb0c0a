#pragma once

#include <array>
#include <chrono>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rlar/agent.hpp"
#include "rlar/invoke.hpp"
#include "rlar/sandbox.hpp"
#include "rlar/serialization.hpp"
#include "rlar/types.hpp"

namespace rlar {

struct VerificationCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Outcome of the verification gate. verdict is true iff every check passed.
struct VerificationReport {
  std::string tool_name;
  std::vector<VerificationCheck> checks;
  bool verdict = false;

  void add(std::string name, bool passed, std::string detail);
  const VerificationCheck* find(std::string_view name) const;
};

void to_json(Json& j, const VerificationCheck& c);
void to_json(Json& j, const VerificationReport& r);
void from_json(const Json& j, VerificationReport& r);

inline constexpr std::array<std::string_view, 3> kWrappedChecks = {
    "endpoint_health", "probe_score", "doc_consistency"};
inline constexpr std::array<std::string_view, 4> kScriptChecks = {
    "static_contract", "smoke_execution", "determinism", "monotonicity"};

/// A model repository located by the wrapping pipeline.
struct CandidateRepo {
  std::string repo_id;
  std::string readme;
  std::vector<std::string> file_list;
  bool passes_filter = false;
  std::optional<double> params_billions;
};

void to_json(Json& j, const CandidateRepo& repo);
void from_json(const Json& j, CandidateRepo& repo);

/// Health probe, one finite probe score, and an agent CONSISTENT /
/// INCONSISTENT judgment of the description against the README.
VerificationReport verify_wrapped(const RewardTool& tool, const CandidateRepo& repo,
                                  AgentClient& agent, EndpointClient& endpoints);

enum class TaskFamily { kMath, kCode, kText };

std::string_view to_string(TaskFamily family);
TaskFamily task_family_for(std::string_view task_label);
TaskFamily task_family_for(const TagSet& tags);

/// Three fixed probe triplets per family: a perfect answer, a partially
/// right one and an unrelated one.
struct SmokeTriplets {
  ContextTriplet perfect;
  ContextTriplet partial;
  ContextTriplet garbage;
};

const SmokeTriplets& smoke_triplets(TaskFamily family);

/// Static contract, execution on the smoke triplets, determinism on a
/// repeated run, and perfect > garbage. Throws kSandboxUnavailable.
VerificationReport verify_script(const RewardTool& tool, const SynthesizedScript& script,
                                 SandboxClient& sandbox, TaskFamily family,
                                 std::chrono::milliseconds timeout = kScriptTimeout);
VerificationReport verify_script(const RewardTool& tool, const SynthesizedScript& script,
                                 SandboxClient& sandbox);

/// Checks the entry name against the compute_ rule and that the function
/// takes (prompt, candidate, reference) positionally. Empty on success,
/// otherwise the reason.
std::string check_script_contract(const SynthesizedScript& script);

}  // namespace rlar
