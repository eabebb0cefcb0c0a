#pragma once

#include <map>
#include <string>
#include <string_view>

namespace rlar {

/// A text-completion agent. Replies are untrusted and always parsed
/// defensively by callers. Transport failures throw rlar::Error with
/// kBackendUnavailable or kTimeout.
class AgentClient {
 public:
  virtual ~AgentClient() = default;
  virtual std::string complete(const std::string& prompt) = 0;
};

/// Stands in when no agent endpoint is configured; every call fails with
/// kBackendUnavailable, which routes everything down the deterministic paths.
class NullAgent final : public AgentClient {
 public:
  std::string complete(const std::string& prompt) override;
};

inline constexpr std::string_view kPromptVersion = "1";

/// Raw prompt template by asset name (file stem under assets/prompts).
std::string_view prompt_template(std::string_view name);

/// Substitutes {key} placeholders; unknown placeholders are left in place.
std::string render_prompt(std::string_view name, const std::map<std::string, std::string>& vars);

/// First non-blank line of an agent reply, trimmed.
std::string first_line(std::string_view reply);

std::string truncate_text(std::string_view text, std::size_t max_chars);

}  // namespace rlar
