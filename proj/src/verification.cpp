#include "rlar/verification.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <regex>
#include <sstream>

#include "rlar/error.hpp"

namespace rlar {

void VerificationReport::add(std::string name, bool passed, std::string detail) {
  checks.push_back(VerificationCheck{std::move(name), passed, std::move(detail)});
  verdict = std::all_of(checks.begin(), checks.end(),
                        [](const VerificationCheck& c) { return c.passed; });
}

const VerificationCheck* VerificationReport::find(std::string_view name) const {
  for (const auto& c : checks) {
    if (c.name == name) return &c;
  }
  return nullptr;
}

void to_json(Json& j, const VerificationCheck& c) {
  j = Json{{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}};
}

void to_json(Json& j, const VerificationReport& r) {
  j = Json{{"tool_name", r.tool_name}, {"checks", r.checks}, {"verdict", r.verdict}};
}

void from_json(const Json& j, VerificationReport& r) {
  r.tool_name = j.at("tool_name").get<std::string>();
  r.checks.clear();
  for (const auto& c : j.at("checks")) {
    r.checks.push_back(VerificationCheck{c.at("name").get<std::string>(),
                                         c.at("passed").get<bool>(),
                                         c.value("detail", std::string())});
  }
  r.verdict = !r.checks.empty() && std::all_of(r.checks.begin(), r.checks.end(),
                                               [](const auto& c) { return c.passed; });
}

void to_json(Json& j, const CandidateRepo& repo) {
  j = Json{{"repo_id", repo.repo_id},
           {"readme", repo.readme},
           {"file_list", repo.file_list},
           {"passes_filter", repo.passes_filter},
           {"params_billions",
            repo.params_billions ? Json(*repo.params_billions) : Json(nullptr)}};
}

void from_json(const Json& j, CandidateRepo& repo) {
  repo.repo_id = j.at("repo_id").get<std::string>();
  repo.readme = j.value("readme", std::string());
  repo.file_list = j.value("file_list", std::vector<std::string>{});
  repo.passes_filter = j.value("passes_filter", false);
  repo.params_billions.reset();
  if (auto it = j.find("params_billions"); it != j.end() && it->is_number()) {
    repo.params_billions = it->get<double>();
  }
}

namespace {

const ContextTriplet kProbeTriplet{"What is 2 + 2?", "2 + 2 = 4.", std::string("4"), {}, "probe"};

std::string upper(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

VerificationReport verify_wrapped(const RewardTool& tool, const CandidateRepo& repo,
                                  AgentClient& agent, EndpointClient& endpoints) {
  if (tool.kind != ToolKind::kWrappedModel) {
    fail(ErrorCode::kInvalidArgument, "verify_wrapped needs a wrapped_model tool");
  }
  VerificationReport report;
  report.tool_name = tool.name;
  const std::string& url = tool.backend.value;

  const auto health = endpoints.health(url);
  report.add("endpoint_health", health.reachable && health.loaded,
             !health.reachable ? "endpoint unreachable"
             : !health.loaded  ? "model not loaded"
                               : "healthy, model " + health.model);

  try {
    const double value = endpoints.score(url, kProbeTriplet);
    const bool finite = std::isfinite(value);
    std::ostringstream detail;
    detail << "probe score " << value;
    report.add("probe_score", finite, detail.str());
  } catch (const Error& e) {
    report.add("probe_score", false, e.what());
  }

  try {
    const std::string reply = agent.complete(render_prompt(
        "doc_consistency", {{"description", tool.description},
                            {"repo_id", repo.repo_id},
                            {"readme", truncate_text(repo.readme, 6000)}}));
    const std::string verdict_line = upper(first_line(reply));
    // INCONSISTENT contains CONSISTENT, so test it first.
    if (verdict_line.rfind("INCONSISTENT", 0) == 0) {
      report.add("doc_consistency", false, reply);
    } else if (verdict_line.rfind("CONSISTENT", 0) == 0) {
      report.add("doc_consistency", true, reply);
    } else {
      report.add("doc_consistency", false, "unparseable judgment: " + first_line(reply));
    }
  } catch (const Error& e) {
    report.add("doc_consistency", false, std::string("agent unavailable: ") + e.what());
  }
  return report;
}

std::string_view to_string(TaskFamily family) {
  switch (family) {
    case TaskFamily::kMath: return "math";
    case TaskFamily::kCode: return "code";
    case TaskFamily::kText: return "text";
  }
  return "text";
}

TaskFamily task_family_for(std::string_view task_label) {
  std::string label;
  for (char c : task_label) label.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  for (std::string_view key : {"math", "arithmetic", "gsm8k", "numeric"}) {
    if (label.find(key) != std::string::npos) return TaskFamily::kMath;
  }
  for (std::string_view key : {"code", "program", "unit-test", "unit test"}) {
    if (label.find(key) != std::string::npos) return TaskFamily::kCode;
  }
  return TaskFamily::kText;
}

TaskFamily task_family_for(const TagSet& tags) {
  bool code = false;
  for (const auto& tag : tags) {
    const auto family = task_family_for(tag);
    if (family == TaskFamily::kMath) return family;
    code = code || family == TaskFamily::kCode;
  }
  return code ? TaskFamily::kCode : TaskFamily::kText;
}

const SmokeTriplets& smoke_triplets(TaskFamily family) {
  static const SmokeTriplets kMath{
      {"Tom has 3 apples and buys 4 more. How many apples does he have?",
       "He starts with 3 and buys 4, so 3 + 4 = 7. #### 7", std::string("7"), {"math"}, "smoke"},
      {"Tom has 3 apples and buys 4 more. How many apples does he have?",
       "He has 3 + 4 = 8 apples. #### 8", std::string("7"), {"math"}, "smoke"},
      {"Tom has 3 apples and buys 4 more. How many apples does he have?",
       "I enjoy long walks on the beach.", std::string("7"), {"math"}, "smoke"}};
  static const std::string kSumCases =
      R"([{"input": "2 3\n", "output": "5\n"}, {"input": "10 -4\n", "output": "6\n"}])";
  static const SmokeTriplets kCode{
      {"Read two integers from standard input and print their sum.",
       "```python\na, b = map(int, input().split())\nprint(a + b)\n```", kSumCases, {"code"},
       "smoke"},
      {"Read two integers from standard input and print their sum.",
       "```python\na, b = map(int, input().split())\nprint(a - b)\n```", kSumCases, {"code"},
       "smoke"},
      {"Read two integers from standard input and print their sum.",
       "I would rather not write any code today.", kSumCases, {"code"}, "smoke"}};
  static const SmokeTriplets kText{
      {"Translate to English: Le chat est assis sur le tapis.", "The cat is sitting on the mat.",
       std::string("The cat is sitting on the mat."), {"translation"}, "smoke"},
      {"Translate to English: Le chat est assis sur le tapis.", "A cat sits on the rug.",
       std::string("The cat is sitting on the mat."), {"translation"}, "smoke"},
      {"Translate to English: Le chat est assis sur le tapis.",
       "Quarterly revenue exceeded projections.", std::string("The cat is sitting on the mat."),
       {"translation"}, "smoke"}};
  switch (family) {
    case TaskFamily::kMath: return kMath;
    case TaskFamily::kCode: return kCode;
    case TaskFamily::kText: return kText;
  }
  return kText;
}

std::string check_script_contract(const SynthesizedScript& script) {
  static const std::regex kEntryName(R"(^compute_[A-Za-z0-9_]+$)");
  if (!std::regex_match(script.entry_function, kEntryName)) {
    return "entry function '" + script.entry_function + "' does not match compute_<name>";
  }
  const std::regex def_re("(^|\\n)def[ \\t]+" + script.entry_function + "[ \\t]*\\(([^)]*)\\)");
  std::smatch m;
  if (!std::regex_search(script.source, m, def_re)) {
    return "no top-level definition of " + script.entry_function;
  }
  int positional = 0;
  int required = 0;
  std::stringstream params(m.str(2));
  for (std::string param; std::getline(params, param, ',');) {
    const auto first = param.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) continue;
    if (param[first] == '*' || param[first] == '/') continue;
    ++positional;
    if (param.find('=') == std::string::npos) ++required;
  }
  if (positional < 3 || required > 3) {
    return "entry function must accept (prompt, candidate, reference); found " +
           std::to_string(positional) + " positional parameters";
  }
  return {};
}

VerificationReport verify_script(const RewardTool& tool, const SynthesizedScript& script,
                                 SandboxClient& sandbox, TaskFamily family,
                                 std::chrono::milliseconds timeout) {
  if (tool.kind != ToolKind::kSynthesizedScript) {
    fail(ErrorCode::kInvalidArgument, "verify_script needs a synthesized_script tool");
  }
  VerificationReport report;
  report.tool_name = tool.name;

  const std::string contract = check_script_contract(script);
  report.add("static_contract", contract.empty(), contract.empty() ? "ok" : contract);

  const auto& smoke = smoke_triplets(family);
  const std::array<const ContextTriplet*, 3> probes = {&smoke.perfect, &smoke.partial,
                                                       &smoke.garbage};
  std::array<double, 3> scores{};
  std::string failure;
  for (std::size_t i = 0; i < probes.size() && failure.empty(); ++i) {
    try {
      scores[i] = run_sandbox(script, *probes[i], timeout, sandbox).value;
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kSandboxUnavailable) throw;
      failure = "smoke triplet " + std::to_string(i) + ": " + e.what();
    }
  }
  const bool executed = failure.empty();
  std::ostringstream scores_text;
  scores_text << "scores perfect=" << scores[0] << " partial=" << scores[1]
              << " garbage=" << scores[2];
  report.add("smoke_execution", executed, executed ? scores_text.str() : failure);

  if (!executed) {
    report.add("determinism", false, "not evaluated: execution failed");
    report.add("monotonicity", false, "not evaluated: execution failed");
    return report;
  }

  try {
    const double again = run_sandbox(script, smoke.perfect, timeout, sandbox).value;
    const bool same = again == scores[0];
    report.add("determinism", same, same ? "repeat run identical" : "repeat run differs");
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kSandboxUnavailable) throw;
    report.add("determinism", false, std::string("repeat run failed: ") + e.what());
  }

  // Strict: a constant scorer cannot separate the perfect and garbage probes.
  const bool ordered = scores[0] > scores[2];
  report.add("monotonicity", ordered,
             ordered ? "perfect > garbage" : "perfect does not outscore garbage");
  return report;
}

VerificationReport verify_script(const RewardTool& tool, const SynthesizedScript& script,
                                 SandboxClient& sandbox) {
  return verify_script(tool, script, sandbox, task_family_for(tool.task_tags));
}

}  // namespace rlar
