#include "rlar/types.hpp"

#include <cmath>
#include <cstdio>
#include <ctime>

#include "rlar/error.hpp"

namespace rlar {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kDuplicateName: return "DuplicateName";
    case ErrorCode::kUnverifiedTool: return "UnverifiedTool";
    case ErrorCode::kEmptySeedSet: return "EmptySeedSet";
    case ErrorCode::kPersistenceFailure: return "PersistenceFailure";
    case ErrorCode::kManifestCorrupt: return "ManifestCorrupt";
    case ErrorCode::kBackendUnavailable: return "BackendUnavailable";
    case ErrorCode::kScriptError: return "ScriptError";
    case ErrorCode::kTimeout: return "Timeout";
    case ErrorCode::kEmptyLibrary: return "EmptyLibrary";
    case ErrorCode::kNoCandidateFound: return "NoCandidateFound";
    case ErrorCode::kHubDeployFailed: return "HubDeployFailed";
    case ErrorCode::kNoViableScheme: return "NoViableScheme";
    case ErrorCode::kScriptGenerationFailed: return "ScriptGenerationFailed";
    case ErrorCode::kSandboxUnavailable: return "SandboxUnavailable";
    case ErrorCode::kReferenceUnparseable: return "ReferenceUnparseable";
    case ErrorCode::kGroupTooSmall: return "GroupTooSmall";
    case ErrorCode::kMissingRecord: return "MissingRecord";
    case ErrorCode::kInsufficientModels: return "InsufficientModels";
  }
  return "Unknown";
}

void ContextTriplet::validate() const {
  if (query.empty()) fail(ErrorCode::kInvalidArgument, "triplet query is empty");
  if (response.empty()) fail(ErrorCode::kInvalidArgument, "triplet response is empty");
}

std::string_view to_string(ScoreScale scale) {
  switch (scale) {
    case ScoreScale::kUnitInterval: return "unit_interval";
    case ScoreScale::kZeroTen: return "zero_ten";
    case ScoreScale::kUnboundedLogit: return "unbounded_logit";
  }
  return "unit_interval";
}

ScoreScale parse_score_scale(std::string_view text) {
  if (text == "unit_interval") return ScoreScale::kUnitInterval;
  if (text == "zero_ten") return ScoreScale::kZeroTen;
  if (text == "unbounded_logit") return ScoreScale::kUnboundedLogit;
  fail(ErrorCode::kInvalidArgument, "unknown score scale: " + std::string(text));
}

double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Score Score::unit(double value, std::optional<double> raw) {
  if (!(value >= 0.0 && value <= 1.0)) {
    fail(ErrorCode::kInvalidArgument, "unit_interval score out of range");
  }
  return Score{value, raw, ScoreScale::kUnitInterval};
}

Score Score::zero_ten(double value) {
  if (!(value >= 0.0 && value <= 10.0)) {
    fail(ErrorCode::kInvalidArgument, "zero_ten score out of range");
  }
  return Score{value, value, ScoreScale::kZeroTen};
}

Score Score::logit(double raw) {
  if (!std::isfinite(raw)) fail(ErrorCode::kInvalidArgument, "non-finite logit");
  return Score{raw, raw, ScoreScale::kUnboundedLogit};
}

double Score::normalized_0_100() const {
  switch (scale) {
    case ScoreScale::kUnitInterval: return value * 100.0;
    case ScoreScale::kZeroTen: return value * 10.0;
    case ScoreScale::kUnboundedLogit: return logistic(value) * 100.0;
  }
  return value;
}

std::string_view to_string(ToolKind kind) {
  switch (kind) {
    case ToolKind::kWrappedModel: return "wrapped_model";
    case ToolKind::kSynthesizedScript: return "synthesized_script";
    case ToolKind::kBuiltin: return "builtin";
  }
  return "builtin";
}

ToolKind parse_tool_kind(std::string_view text) {
  if (text == "wrapped_model") return ToolKind::kWrappedModel;
  if (text == "synthesized_script") return ToolKind::kSynthesizedScript;
  if (text == "builtin") return ToolKind::kBuiltin;
  fail(ErrorCode::kInvalidArgument, "unknown tool kind: " + std::string(text));
}

std::string_view to_string(BackendType type) {
  switch (type) {
    case BackendType::kEndpoint: return "endpoint";
    case BackendType::kScript: return "script";
    case BackendType::kBuiltin: return "builtin";
  }
  return "builtin";
}

BackendType parse_backend_type(std::string_view text) {
  if (text == "endpoint") return BackendType::kEndpoint;
  if (text == "script") return BackendType::kScript;
  if (text == "builtin") return BackendType::kBuiltin;
  fail(ErrorCode::kInvalidArgument, "unknown backend type: " + std::string(text));
}

BackendType backend_type_for(ToolKind kind) {
  switch (kind) {
    case ToolKind::kWrappedModel: return BackendType::kEndpoint;
    case ToolKind::kSynthesizedScript: return BackendType::kScript;
    case ToolKind::kBuiltin: return BackendType::kBuiltin;
  }
  return BackendType::kBuiltin;
}

bool is_valid_tool_name(std::string_view name) {
  if (name.empty() || name.size() > 64) return false;
  if (name.front() == '-' || name.back() == '-') return false;
  char prev = 0;
  for (char c : name) {
    const bool alnum = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9');
    if (!alnum && c != '-') return false;
    if (c == '-' && prev == '-') return false;
    prev = c;
  }
  return true;
}

std::string to_tool_name(std::string_view text) {
  std::string out;
  for (char c : text) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    const bool alnum = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9');
    if (alnum) {
      out.push_back(c);
    } else if (!out.empty() && out.back() != '-') {
      out.push_back('-');
    }
  }
  if (out.size() > 64) out.resize(64);
  while (!out.empty() && out.back() == '-') out.pop_back();
  return out;
}

void validate_tool(const RewardTool& tool) {
  if (!is_valid_tool_name(tool.name)) {
    fail(ErrorCode::kInvalidArgument, "invalid tool name '" + tool.name + "'");
  }
  if (tool.backend.type != backend_type_for(tool.kind)) {
    fail(ErrorCode::kInvalidArgument,
         "backend " + std::string(to_string(tool.backend.type)) +
             " inconsistent with kind " + std::string(to_string(tool.kind)));
  }
  if (tool.backend.value.empty()) {
    fail(ErrorCode::kInvalidArgument, "tool '" + tool.name + "' has an empty backend");
  }
}

std::string format_rfc3339(Timestamp ts) {
  const std::time_t t = std::chrono::system_clock::to_time_t(ts);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

Timestamp parse_rfc3339(std::string_view text) {
  std::tm tm{};
  int consumed = 0;
  const std::string s(text);
  if (std::sscanf(s.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d%n", &tm.tm_year, &tm.tm_mon,
                  &tm.tm_mday, &tm.tm_hour, &tm.tm_min, &tm.tm_sec, &consumed) != 6) {
    fail(ErrorCode::kInvalidArgument, "malformed RFC3339 timestamp: " + s);
  }
  std::string_view rest = std::string_view(s).substr(static_cast<size_t>(consumed));
  if (!rest.empty() && rest.front() == '.') {
    size_t i = 1;
    while (i < rest.size() && rest[i] >= '0' && rest[i] <= '9') ++i;
    rest.remove_prefix(i);
  }
  long offset = 0;
  if (rest == "Z" || rest == "z") {
    offset = 0;
  } else if (rest.size() == 6 && (rest[0] == '+' || rest[0] == '-') && rest[3] == ':') {
    const int hh = std::stoi(std::string(rest.substr(1, 2)));
    const int mm = std::stoi(std::string(rest.substr(4, 2)));
    offset = (hh * 3600L + mm * 60L) * (rest[0] == '+' ? 1 : -1);
  } else {
    fail(ErrorCode::kInvalidArgument, "malformed RFC3339 offset: " + s);
  }
  tm.tm_year -= 1900;
  tm.tm_mon -= 1;
  const std::time_t t = timegm(&tm) - offset;
  return std::chrono::time_point_cast<std::chrono::seconds>(
      std::chrono::system_clock::from_time_t(t));
}

Timestamp now_seconds() {
  return std::chrono::time_point_cast<std::chrono::seconds>(std::chrono::system_clock::now());
}

}  // namespace rlar
