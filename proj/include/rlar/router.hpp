#pragma once

#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "rlar/agent.hpp"
#include "rlar/invoke.hpp"
#include "rlar/registry.hpp"
#include "rlar/sandbox.hpp"
#include "rlar/verification.hpp"

namespace rlar {

enum class RouteAction { kSelect, kSynthesize };
enum class SynthesisStrategy { kWrapLlm, kCodeVerify };

std::string_view to_string(RouteAction action);
std::string_view to_string(SynthesisStrategy strategy);
std::optional<SynthesisStrategy> parse_strategy(std::string_view text);

struct SynthesisSpec {
  SynthesisStrategy strategy = SynthesisStrategy::kCodeVerify;
  std::string task_label;
  std::string requirements;

  friend bool operator==(const SynthesisSpec&, const SynthesisSpec&) = default;
};

struct RouteDecision {
  RouteAction action = RouteAction::kSelect;
  std::optional<std::string> selected;
  std::optional<SynthesisSpec> synthesis_spec;
  std::string rationale;

  static RouteDecision select(std::string tool, std::string rationale);
  static RouteDecision synthesize(SynthesisSpec spec, std::string rationale);

  /// Exactly one of selected / synthesis_spec is set, matching action.
  bool well_formed() const;

  friend bool operator==(const RouteDecision&, const RouteDecision&) = default;
};

void to_json(Json& j, const SynthesisSpec& spec);
void to_json(Json& j, const RouteDecision& decision);

struct RouterOptions {
  // Long responses are cut to this many characters in the routing prompt.
  std::size_t response_prefix_chars = 4000;
  // One retry after the first unparseable reply, then deterministic fallback.
  int max_agent_attempts = 2;
};

/// Parses "SELECT <name>" or "SYNTHESIZE <wrap_llm|code_verify> <task label>".
/// SELECT must name a verified tool in `lib`.
std::optional<RouteDecision> parse_route_reply(std::string_view reply, const ToolLibrary& lib);

/// Tag-overlap argmax over verified tools, ties broken by kind
/// (synthesized_script, then wrapped_model, then builtin) and then name.
/// With zero overlap everywhere the general-purpose builtin wins.
/// Throws kEmptyLibrary when no tool is verified.
std::string deterministic_select(const ContextTriplet& t, const ToolLibrary& lib);

std::string routing_prompt(const ContextTriplet& t, const ToolLibrary& lib,
                           const RouterOptions& options);

/// Select-or-synthesize decision. Never fails on agent misbehaviour; falls
/// back to deterministic_select after the allowed attempts.
RouteDecision assess(const ContextTriplet& t, const ToolLibrary& lib, AgentClient& agent,
                     const RouterOptions& options = {});

/// A synthesized tool together with its gate report. The tool is
/// unverified; only route_and_score flips the flag, and only on a passing
/// verdict.
struct SynthesisCandidate {
  RewardTool tool;
  VerificationReport report;
};

class Synthesizer {
 public:
  virtual ~Synthesizer() = default;

  /// Runs a pipeline plus verification. nullopt means no candidate (for
  /// example the synthesizer is busy); pipeline failures throw rlar::Error.
  virtual std::optional<SynthesisCandidate> synthesize(const SynthesisSpec& spec,
                                                       const ToolLibrary& lib) = 0;
};

struct RouteResult {
  Score score;
  RouteDecision decision;
  std::shared_ptr<const ToolLibrary> library;
  std::string tool_used;
};

/// Routes, synthesizes (commit only on a passing verdict) and invokes. Only
/// errors raised by the final invoke propagate.
RouteResult route_and_score(const ContextTriplet& t, LibraryStore& store, AgentClient& agent,
                            Synthesizer* synthesizer, const ToolInvoker& invoker,
                            const RouterOptions& options = {});

/// Second half of route_and_score: carries out `decision`, which was made
/// against `lib`.
RouteResult execute_route(const ContextTriplet& t, LibraryStore& store,
                          std::shared_ptr<const ToolLibrary> lib, RouteDecision decision,
                          Synthesizer* synthesizer, const ToolInvoker& invoker);

/// Scores with a route decision that has already been made (Select only).
RouteResult score_with_tool(const ContextTriplet& t, const LibraryStore& store,
                            std::string_view tool_name, const ToolInvoker& invoker,
                            RouteDecision decision);

}  // namespace rlar
