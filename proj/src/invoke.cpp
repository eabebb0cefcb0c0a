#include "rlar/invoke.hpp"

#include <fstream>
#include <sstream>

#include "rlar/error.hpp"

namespace rlar {

double OfflineEndpointClient::score(const std::string& base_url, const ContextTriplet&) {
  fail(ErrorCode::kBackendUnavailable, "no reward-model endpoint client configured for " + base_url);
}

ScriptLocator parse_script_locator(std::string_view value) {
  const auto hash = value.rfind('#');
  if (hash == std::string_view::npos || hash == 0 || hash + 1 == value.size()) {
    fail(ErrorCode::kInvalidArgument, "script locator must be '<path>#<entry>': " +
                                          std::string(value));
  }
  return ScriptLocator{std::filesystem::path(std::string(value.substr(0, hash))),
                       std::string(value.substr(hash + 1))};
}

std::string format_script_locator(const ScriptLocator& locator) {
  return locator.path.generic_string() + "#" + locator.entry_function;
}

namespace {

Score nem(const ContextTriplet& t, ExpectedMarker marker, MarkerMode mode) {
  return reward_math(t, marker, mode);
}

}  // namespace

bool is_known_builtin(std::string_view key) {
  for (std::string_view k : {"lexical_overlap", "nem_hash4", "nem_boxed", "nem_any", "bleu2",
                             "think_nem_hash4", "think_nem_boxed"}) {
    if (k == key) return true;
  }
  return false;
}

Score invoke_builtin(std::string_view key, const ContextTriplet& t, MarkerMode mode) {
  if (key == "lexical_overlap") {
    return Score::unit(lexical_overlap_f1(t.response, t.reference ? *t.reference : t.query));
  }
  if (key == "nem_hash4") return nem(t, ExpectedMarker::kHash4, mode);
  if (key == "nem_boxed") return nem(t, ExpectedMarker::kBoxed, mode);
  if (key == "nem_any") return nem(t, ExpectedMarker::kAny, mode);
  if (key == "bleu2") return bleu2(t.response, t.reference.value_or(""));
  if (key == "think_nem_hash4") {
    return think_format_gate(t.response, nem(t, ExpectedMarker::kHash4, mode));
  }
  if (key == "think_nem_boxed") {
    return think_format_gate(t.response, nem(t, ExpectedMarker::kBoxed, mode));
  }
  fail(ErrorCode::kBackendUnavailable, "unknown builtin scorer '" + std::string(key) + "'");
}

ToolInvoker::ToolInvoker(EndpointClient& endpoints, SandboxClient& sandbox, Options options)
    : endpoints_(endpoints), sandbox_(sandbox), options_(std::move(options)) {}

SynthesizedScript ToolInvoker::load_script(const RewardTool& tool) const {
  const auto locator = parse_script_locator(tool.backend.value);
  auto path = locator.path;
  if (path.is_relative() && !options_.base_dir.empty()) path = options_.base_dir / path;
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kBackendUnavailable, "script not found: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return SynthesizedScript{locator.entry_function, buf.str(), {}};
}

Score ToolInvoker::invoke(const RewardTool& tool, const ContextTriplet& t) const {
  if (!tool.verified) {
    fail(ErrorCode::kUnverifiedTool, "tool '" + tool.name + "' is not verified");
  }
  t.validate();
  switch (tool.kind) {
    case ToolKind::kBuiltin:
      return invoke_builtin(tool.backend.value, t, options_.marker_mode);
    case ToolKind::kSynthesizedScript:
      return run_sandbox(load_script(tool), t, options_.script_timeout, sandbox_);
    case ToolKind::kWrappedModel:
      return Score::logit(endpoints_.score(tool.backend.value, t));
  }
  fail(ErrorCode::kInvalidArgument, "unsupported tool kind");
}

}  // namespace rlar
