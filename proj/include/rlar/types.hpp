#pragma once

#include <chrono>
#include <optional>
#include <set>
#include <string>
#include <string_view>

namespace rlar {

using TagSet = std::set<std::string>;
using Timestamp = std::chrono::sys_seconds;

/// The (query, response, reference) unit every reward tool scores.
struct ContextTriplet {
  std::string query;
  std::string response;
  std::optional<std::string> reference;
  TagSet task_tags;
  std::string source_id;

  /// Throws kInvalidArgument when query or response is empty.
  void validate() const;

  friend bool operator==(const ContextTriplet&, const ContextTriplet&) = default;
};

enum class ScoreScale { kUnitInterval, kZeroTen, kUnboundedLogit };

std::string_view to_string(ScoreScale scale);
ScoreScale parse_score_scale(std::string_view text);

struct Score {
  double value = 0.0;
  std::optional<double> raw;
  ScoreScale scale = ScoreScale::kUnitInterval;

  static Score unit(double value, std::optional<double> raw = std::nullopt);
  static Score zero_ten(double value);
  static Score logit(double raw);

  /// Maps the score onto the 0-100 reporting scale. zero_ten scores are
  /// multiplied by 10, unit-interval scores by 100, logits go through the
  /// logistic map first.
  double normalized_0_100() const;

  friend bool operator==(const Score&, const Score&) = default;
};

double logistic(double x);

enum class ToolKind { kWrappedModel, kSynthesizedScript, kBuiltin };

std::string_view to_string(ToolKind kind);
ToolKind parse_tool_kind(std::string_view text);

enum class BackendType { kEndpoint, kScript, kBuiltin };

std::string_view to_string(BackendType type);
BackendType parse_backend_type(std::string_view text);

struct Backend {
  BackendType type = BackendType::kBuiltin;
  // Endpoint base URL, "<script path>#<entry function>", or builtin key.
  std::string value;

  friend bool operator==(const Backend&, const Backend&) = default;
};

BackendType backend_type_for(ToolKind kind);

struct RewardTool {
  std::string name;
  ToolKind kind = ToolKind::kBuiltin;
  std::string description;
  TagSet task_tags;
  Backend backend;
  bool verified = false;
  Timestamp created_at{};
  std::string provenance;

  friend bool operator==(const RewardTool&, const RewardTool&) = default;
};

/// Lowercase kebab-case, 1..64 characters.
bool is_valid_tool_name(std::string_view name);

/// Best-effort conversion of arbitrary text into a valid tool name; returns
/// an empty string when nothing usable remains.
std::string to_tool_name(std::string_view text);

/// Throws kInvalidArgument on a bad name or a backend inconsistent with kind.
void validate_tool(const RewardTool& tool);

std::string format_rfc3339(Timestamp ts);
Timestamp parse_rfc3339(std::string_view text);
Timestamp now_seconds();

}  // namespace rlar
