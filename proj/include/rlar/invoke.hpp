#pragma once

#include <chrono>
#include <filesystem>
#include <optional>
#include <string>

#include "rlar/sandbox.hpp"
#include "rlar/types.hpp"
#include "rlar/verifiers.hpp"

namespace rlar {

struct EndpointHealth {
  bool reachable = false;
  bool loaded = false;
  std::string model;
};

/// Client side of the reward-model sidecar contract:
///   GET  <base>/health -> {"status", "model", "loaded": bool}
///   POST <base>/score  {"prompt", "response", "reference"} -> {"score", "model"}
class EndpointClient {
 public:
  virtual ~EndpointClient() = default;

  /// Never throws for transport failures; reports reachable = false.
  virtual EndpointHealth health(const std::string& base_url) = 0;

  /// Returns the raw score. Throws kBackendUnavailable or kTimeout.
  virtual double score(const std::string& base_url, const ContextTriplet& t) = 0;
};

/// Backend used when no sidecar is configured: every call is unavailable.
class OfflineEndpointClient final : public EndpointClient {
 public:
  EndpointHealth health(const std::string&) override { return {}; }
  double score(const std::string& base_url, const ContextTriplet&) override;
};

struct ScriptLocator {
  std::filesystem::path path;
  std::string entry_function;
};

/// Parses "<path>#<entry>".
ScriptLocator parse_script_locator(std::string_view value);
std::string format_script_locator(const ScriptLocator& locator);

/// Evaluates builtin scorers by key. Known keys: lexical_overlap, nem_hash4,
/// nem_boxed, nem_any, bleu2, think_nem_hash4, think_nem_boxed.
Score invoke_builtin(std::string_view key, const ContextTriplet& t, MarkerMode mode);
bool is_known_builtin(std::string_view key);

/// Dispatches a tool call to its backend. Scripts resolve relative paths
/// against `base_dir` (normally the manifest's directory).
class ToolInvoker {
 public:
  struct Options {
    std::filesystem::path base_dir;
    std::chrono::milliseconds script_timeout = kScriptTimeout;
    MarkerMode marker_mode = MarkerMode::kStrict;
  };

  ToolInvoker(EndpointClient& endpoints, SandboxClient& sandbox, Options options);

  /// Throws kUnverifiedTool, kBackendUnavailable, kScriptError, kTimeout.
  Score invoke(const RewardTool& tool, const ContextTriplet& t) const;

  SynthesizedScript load_script(const RewardTool& tool) const;

  const Options& options() const { return options_; }
  EndpointClient& endpoints() const { return endpoints_; }
  SandboxClient& sandbox() const { return sandbox_; }

 private:
  EndpointClient& endpoints_;
  SandboxClient& sandbox_;
  Options options_;
};

}  // namespace rlar
