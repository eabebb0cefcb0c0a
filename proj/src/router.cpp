#include "rlar/router.hpp"

#include <cctype>
#include <sstream>

#include "rlar/error.hpp"

namespace rlar {

std::string_view to_string(RouteAction action) {
  return action == RouteAction::kSelect ? "select" : "synthesize";
}

std::string_view to_string(SynthesisStrategy strategy) {
  return strategy == SynthesisStrategy::kWrapLlm ? "wrap_llm" : "code_verify";
}

std::optional<SynthesisStrategy> parse_strategy(std::string_view text) {
  if (text == "wrap_llm") return SynthesisStrategy::kWrapLlm;
  if (text == "code_verify") return SynthesisStrategy::kCodeVerify;
  return std::nullopt;
}

RouteDecision RouteDecision::select(std::string tool, std::string rationale) {
  return RouteDecision{RouteAction::kSelect, std::move(tool), std::nullopt, std::move(rationale)};
}

RouteDecision RouteDecision::synthesize(SynthesisSpec spec, std::string rationale) {
  return RouteDecision{RouteAction::kSynthesize, std::nullopt, std::move(spec),
                       std::move(rationale)};
}

bool RouteDecision::well_formed() const {
  if (action == RouteAction::kSelect) return selected.has_value() && !synthesis_spec;
  return !selected && synthesis_spec && !synthesis_spec->task_label.empty();
}

void to_json(Json& j, const SynthesisSpec& spec) {
  j = Json{{"strategy", to_string(spec.strategy)},
           {"task_label", spec.task_label},
           {"requirements", spec.requirements}};
}

void to_json(Json& j, const RouteDecision& decision) {
  j = Json{{"action", to_string(decision.action)},
           {"selected", decision.selected ? Json(*decision.selected) : Json(nullptr)},
           {"synthesis_spec",
            decision.synthesis_spec ? Json(*decision.synthesis_spec) : Json(nullptr)},
           {"rationale", decision.rationale}};
}

namespace {

std::string upper(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

int kind_rank(ToolKind kind) {
  switch (kind) {
    case ToolKind::kSynthesizedScript: return 0;
    case ToolKind::kWrappedModel: return 1;
    case ToolKind::kBuiltin: return 2;
  }
  return 3;
}

// True when a should be preferred over b at equal overlap.
bool prefer(const RewardTool& a, const RewardTool& b) {
  const int ra = kind_rank(a.kind);
  const int rb = kind_rank(b.kind);
  if (ra != rb) return ra < rb;
  return a.name < b.name;
}

std::size_t tag_overlap(const TagSet& a, const TagSet& b) {
  std::size_t n = 0;
  for (const auto& tag : a) n += b.count(tag);
  return n;
}

}  // namespace

std::optional<RouteDecision> parse_route_reply(std::string_view reply, const ToolLibrary& lib) {
  const std::string line = first_line(reply);
  std::istringstream in(line);
  std::string keyword;
  in >> keyword;
  keyword = upper(keyword);
  if (keyword == "SELECT") {
    std::string name, extra;
    if (!(in >> name) || (in >> extra)) return std::nullopt;
    const auto* tool = lib.find(name);
    if (tool == nullptr || !tool->verified) return std::nullopt;
    return RouteDecision::select(name, "agent: " + line);
  }
  if (keyword == "SYNTHESIZE") {
    std::string strategy_text;
    if (!(in >> strategy_text)) return std::nullopt;
    const auto strategy = parse_strategy(strategy_text);
    if (!strategy) return std::nullopt;
    std::string label;
    std::getline(in, label);
    const auto first = label.find_first_not_of(" \t");
    if (first == std::string::npos) return std::nullopt;
    label = label.substr(first);
    while (!label.empty() && std::isspace(static_cast<unsigned char>(label.back()))) label.pop_back();
    return RouteDecision::synthesize(SynthesisSpec{*strategy, label, ""}, "agent: " + line);
  }
  return std::nullopt;
}

std::string deterministic_select(const ContextTriplet& t, const ToolLibrary& lib) {
  const RewardTool* best = nullptr;
  std::size_t best_overlap = 0;
  const RewardTool* general = nullptr;
  for (const auto& tool : lib.tools) {
    if (!tool.verified) continue;
    const std::size_t overlap = tag_overlap(t.task_tags, tool.task_tags);
    if (best == nullptr || overlap > best_overlap ||
        (overlap == best_overlap && prefer(tool, *best))) {
      best = &tool;
      best_overlap = overlap;
    }
    if (is_general_purpose(tool) && (general == nullptr || tool.name < general->name)) {
      general = &tool;
    }
  }
  if (best == nullptr) fail(ErrorCode::kEmptyLibrary, "library has no verified tools");
  if (best_overlap == 0 && general != nullptr) return general->name;
  return best->name;
}

std::string routing_prompt(const ContextTriplet& t, const ToolLibrary& lib,
                           const RouterOptions& options) {
  std::string tags;
  for (const auto& tag : t.task_tags) tags += (tags.empty() ? "" : ", ") + tag;
  std::string tools;
  for (const auto& tool : lib.tools) {
    if (!tool.verified) continue;
    std::string tool_tags;
    for (const auto& tag : tool.task_tags) tool_tags += (tool_tags.empty() ? "" : ",") + tag;
    tools += "- " + tool.name + " | " + std::string(to_string(tool.kind)) + " | " +
             (tool_tags.empty() ? "-" : tool_tags) + " | " + tool.description + "\n";
  }
  return render_prompt(
      "route_assess",
      {{"tags", tags.empty() ? "(none)" : tags},
       {"query", truncate_text(t.query, options.response_prefix_chars)},
       {"response", truncate_text(t.response, options.response_prefix_chars)},
       {"reference", t.reference ? truncate_text(*t.reference, options.response_prefix_chars)
                                 : std::string("(none)")},
       {"tools", tools}});
}

RouteDecision assess(const ContextTriplet& t, const ToolLibrary& lib, AgentClient& agent,
                     const RouterOptions& options) {
  if (lib.verified_count() == 0) fail(ErrorCode::kEmptyLibrary, "library has no verified tools");
  const std::string prompt = routing_prompt(t, lib, options);
  std::string notes;
  for (int attempt = 1; attempt <= options.max_agent_attempts; ++attempt) {
    std::string reply;
    try {
      reply = agent.complete(prompt);
    } catch (const Error& e) {
      notes += "attempt " + std::to_string(attempt) + ": agent transport failure (" + e.what() +
               "); ";
      continue;
    }
    if (auto decision = parse_route_reply(reply, lib)) return *decision;
    notes += "attempt " + std::to_string(attempt) + ": unparseable reply; ";
  }
  const std::string fallback = deterministic_select(t, lib);
  return RouteDecision::select(fallback, notes + "deterministic fallback");
}

namespace {

RouteResult invoke_selected(const ContextTriplet& t, std::shared_ptr<const ToolLibrary> lib,
                            const std::string& name, const ToolInvoker& invoker,
                            RouteDecision decision) {
  const RewardTool* tool = lib->find(name);
  if (tool == nullptr) fail(ErrorCode::kInvalidArgument, "unknown tool '" + name + "'");
  Score score = invoker.invoke(*tool, t);
  return RouteResult{score, std::move(decision), std::move(lib), name};
}

// Routed calls keep totality: if the chosen tool fails, the general-purpose
// builtin scores instead.
RouteResult invoke_routed(const ContextTriplet& t, std::shared_ptr<const ToolLibrary> lib,
                          const std::string& name, const ToolInvoker& invoker,
                          RouteDecision decision) {
  try {
    return invoke_selected(t, lib, name, invoker, decision);
  } catch (const Error& e) {
    const RewardTool* general = nullptr;
    for (const auto& tool : lib->tools) {
      if (tool.verified && is_general_purpose(tool) && (general == nullptr || tool.name < general->name)) {
        general = &tool;
      }
    }
    if (general == nullptr || general->name == name) throw;
    decision.rationale += "; '" + name + "' failed (" + std::string(to_string(e.code())) +
                          "); general fallback";
    return invoke_selected(t, std::move(lib), general->name, invoker, std::move(decision));
  }
}

}  // namespace

RouteResult route_and_score(const ContextTriplet& t, LibraryStore& store, AgentClient& agent,
                            Synthesizer* synthesizer, const ToolInvoker& invoker,
                            const RouterOptions& options) {
  t.validate();
  auto lib = store.snapshot();
  RouteDecision decision = assess(t, *lib, agent, options);
  return execute_route(t, store, std::move(lib), std::move(decision), synthesizer, invoker);
}

RouteResult execute_route(const ContextTriplet& t, LibraryStore& store,
                          std::shared_ptr<const ToolLibrary> lib, RouteDecision decision,
                          Synthesizer* synthesizer, const ToolInvoker& invoker) {
  if (decision.action == RouteAction::kSelect) {
    const std::string name = *decision.selected;
    return invoke_routed(t, std::move(lib), name, invoker, std::move(decision));
  }

  std::string why;
  if (synthesizer == nullptr) {
    why = "no synthesizer available";
  } else {
    std::optional<SynthesisCandidate> candidate;
    try {
      candidate = synthesizer->synthesize(*decision.synthesis_spec, *lib);
    } catch (const std::exception& e) {
      why = std::string("synthesis failed: ") + e.what();
    }
    if (candidate && candidate->report.verdict) {
      RewardTool tool = candidate->tool;
      tool.verified = true;
      std::shared_ptr<const ToolLibrary> committed;
      try {
        committed = store.commit(tool);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kDuplicateName) {
          why = std::string("commit failed: ") + e.what();
        } else {
          // A concurrent route committed the same name first; use theirs.
          committed = store.snapshot();
        }
      }
      if (committed) {
        decision.rationale += "; committed '" + tool.name + "' at version " +
                              std::to_string(committed->version);
        return invoke_routed(t, std::move(committed), tool.name, invoker, std::move(decision));
      }
    } else if (candidate) {
      why = "candidate '" + candidate->tool.name + "' rejected by verification";
    } else if (why.empty()) {
      why = "synthesizer busy";
    }
  }
  const std::string fallback = deterministic_select(t, *lib);
  RouteDecision effective =
      RouteDecision::select(fallback, decision.rationale + "; " + why + "; deterministic fallback");
  return invoke_routed(t, std::move(lib), fallback, invoker, std::move(effective));
}

RouteResult score_with_tool(const ContextTriplet& t, const LibraryStore& store,
                            std::string_view tool_name, const ToolInvoker& invoker,
                            RouteDecision decision) {
  t.validate();
  return invoke_selected(t, store.snapshot(), std::string(tool_name), invoker, std::move(decision));
}

}  // namespace rlar
