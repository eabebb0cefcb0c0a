#pragma once

#include <chrono>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "rlar/types.hpp"

namespace rlar {

struct SandboxFile {
  std::string name;
  std::string content;
};

struct SandboxRequest {
  std::vector<SandboxFile> files;
  // Appended to the sandbox interpreter command.
  std::vector<std::string> args;
  std::string stdin_data;
  std::chrono::milliseconds timeout{10'000};
};

struct SandboxResult {
  int exit_code = -1;
  bool timed_out = false;
  bool output_truncated = false;
  std::string stdout_data;
  std::string stderr_data;
  std::chrono::milliseconds elapsed{0};
};

class SandboxClient {
 public:
  virtual ~SandboxClient() = default;

  /// Runs the interpreter on the request inside a fresh working directory.
  /// Throws kSandboxUnavailable when the interpreter cannot be launched.
  virtual SandboxResult run(const SandboxRequest& request) = 0;
};

/// Runs each request as a child process in its own process group and
/// temporary directory, with an address-space cap. On timeout the whole
/// process group is killed.
class ProcessSandbox final : public SandboxClient {
 public:
  struct Options {
    std::vector<std::string> interpreter{"python3", "-I", "-B"};
    std::size_t memory_limit_bytes = std::size_t{2} << 30;
    std::size_t max_output_bytes = std::size_t{1} << 20;
  };

  ProcessSandbox();
  explicit ProcessSandbox(Options options);

  SandboxResult run(const SandboxRequest& request) override;

  /// True when the interpreter starts and exits cleanly on an empty program.
  bool available();

  const Options& options() const { return options_; }

 private:
  Options options_;
};

std::vector<std::string> split_command(std::string_view command);

/// A generated verifier: Python source defining `entry_function(prompt,
/// candidate, reference) -> float`.
struct SynthesizedScript {
  std::string entry_function;
  std::string source;
  std::vector<std::string> requirements;

  friend bool operator==(const SynthesizedScript&, const SynthesizedScript&) = default;
};

inline constexpr std::chrono::milliseconds kScriptTimeout{10'000};

/// Wire request sent to a script child: one line of JSON,
/// {"prompt": str, "response": str, "reference": str|null}.
std::string sandbox_request_line(const ContextTriplet& t);

/// Executes a synthesized script on one triplet through the fixed driver.
/// Throws kScriptError (nonzero exit, malformed or non-finite output) or
/// kTimeout.
Score run_sandbox(const SynthesizedScript& script, const ContextTriplet& t,
                  std::chrono::milliseconds timeout, SandboxClient& sandbox);

struct TestCase {
  std::string input;
  std::string expected;
};

struct UnitTestSuite {
  // Appended after the candidate program, e.g. a driver calling a function.
  std::string program_text;
  std::vector<TestCase> cases;
  std::chrono::milliseconds timeout{5'000};
};

struct CodeGrade {
  Score score;
  bool timed_out = false;
  std::size_t cases_passed = 0;
  std::string detail;
};

/// pass@1 grading: 1.0 iff the last fenced code block in the response runs
/// and every case's stdout matches after trailing-whitespace normalization.
CodeGrade reward_code(const ContextTriplet& t, const UnitTestSuite& suite,
                      SandboxClient& sandbox);

/// Strips trailing whitespace from each line and trailing blank lines.
std::string normalize_program_output(std::string_view text);

}  // namespace rlar
