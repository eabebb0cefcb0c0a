#include "rlar/synthesis.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <regex>
#include <set>
#include <sstream>

#include "rlar/error.hpp"

namespace rlar {

namespace fs = std::filesystem;

void to_json(Json& j, const SearchResult& r) {
  j = Json{{"position", r.position}, {"title", r.title}, {"url", r.url}, {"snippet", r.snippet}};
}

void from_json(const Json& j, SearchResult& r) {
  r.position = j.at("position").get<int>();
  r.title = j.value("title", std::string());
  r.url = j.value("url", std::string());
  r.snippet = j.value("snippet", std::string());
}

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string trim_copy(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

// Lowercases and maps separators to '-', padded so that keyword checks can
// match whole dash-delimited segments.
std::string dash_normalized(std::string_view s) {
  std::string out = "-";
  for (char c : lower(s)) {
    out.push_back((c == '_' || c == ' ' || c == '.' || c == '/' || c == ':') ? '-' : c);
  }
  out.push_back('-');
  return out;
}

bool has_segment(const std::string& normalized, std::string_view keyword) {
  return normalized.find("-" + std::string(keyword) + "-") != std::string::npos;
}

struct UrlParts {
  std::string host;
  std::string path;
};

UrlParts split_url(std::string_view url) {
  UrlParts parts;
  std::string_view rest = url;
  if (const auto scheme = rest.find("://"); scheme != std::string_view::npos) {
    rest.remove_prefix(scheme + 3);
  }
  const auto slash = rest.find('/');
  parts.host = lower(rest.substr(0, slash));
  parts.path = slash == std::string_view::npos ? "/" : lower(rest.substr(slash));
  return parts;
}

bool is_model_repository(const SearchResult& r) {
  const std::string title = lower(r.title);
  for (std::string_view prefix : {"datasets/", "spaces/", "papers/", "blog/", "docs/"}) {
    if (title.rfind(prefix, 0) == 0) return false;
  }
  if (r.url.empty()) return true;
  const auto url = split_url(r.url);
  if (url.host != "huggingface.co" && url.host != "www.huggingface.co" && url.host != "hf.co") {
    return false;
  }
  for (std::string_view prefix : {"/datasets/", "/spaces/", "/papers/", "/blog/", "/docs/"}) {
    if (url.path.rfind(prefix, 0) == 0) return false;
  }
  // A model page is /<org>/<name>.
  return std::count(url.path.begin(), url.path.end(), '/') >= 2;
}

bool declares_generative_output(const SearchResult& r) {
  const std::string text = lower(r.snippet + " " + r.title);
  for (std::string_view tag : {"text-generation", "text2text-generation", "image-text-to-text",
                               "image-to-text", "vision-language"}) {
    if (text.find(tag) != std::string::npos) return true;
  }
  return false;
}

bool is_reward_model(const SearchResult& r) {
  const std::string name = dash_normalized(r.title + " " + split_url(r.url).path);
  const bool reward_hint = has_segment(name, "reward") || has_segment(name, "rm");
  // Base/instruct/chat checkpoints are only discarded when nothing marks
  // them as reward models (e.g. "...-Base-RM-..." is kept).
  return reward_hint;
}

}  // namespace

std::vector<int> filter_results(const std::vector<SearchResult>& results) {
  std::vector<int> kept;
  for (const auto& r : results) {
    if (is_reward_model(r) && is_model_repository(r) && !declares_generative_output(r)) {
      kept.push_back(r.position);
    }
  }
  return kept;
}

std::vector<int> rerank(const std::vector<SearchResult>& results, const SynthesisSpec& spec,
                        AgentClient& agent) {
  std::vector<int> identity;
  for (const auto& r : results) identity.push_back(r.position);
  if (identity.size() <= 1) return identity;

  std::string listing;
  for (const auto& r : results) {
    listing += std::to_string(r.position) + ": " + r.title + " | " + r.url + " | " +
               truncate_text(r.snippet, 300) + "\n";
  }
  std::string reply;
  try {
    reply = agent.complete(render_prompt(
        "rerank", {{"task", spec.task_label + (spec.requirements.empty() ? "" : " (" + spec.requirements + ")")},
                   {"results", listing}}));
  } catch (const Error&) {
    return identity;
  }
  const auto open = reply.find('[');
  const auto close = reply.find(']', open == std::string::npos ? 0 : open);
  if (open == std::string::npos || close == std::string::npos) return identity;
  std::vector<int> order;
  static const std::regex kInt(R"(-?\d+)");
  const std::string inside = reply.substr(open + 1, close - open - 1);
  for (auto it = std::sregex_iterator(inside.begin(), inside.end(), kInt);
       it != std::sregex_iterator(); ++it) {
    try {
      order.push_back(std::stoi(it->str()));
    } catch (const std::exception&) {
      return identity;
    }
  }
  std::vector<int> a = order;
  std::vector<int> b = identity;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  if (a != b) return identity;
  return order;
}

std::string repo_id_from(const SearchResult& result) {
  if (!result.url.empty()) {
    std::string_view rest = result.url;
    if (const auto scheme = rest.find("://"); scheme != std::string_view::npos) {
      rest.remove_prefix(scheme + 3);
    }
    const auto slash = rest.find('/');
    if (slash != std::string_view::npos) {
      std::string_view path = rest.substr(slash + 1);
      path = path.substr(0, path.find_first_of("?#"));
      const auto first = path.find('/');
      if (first != std::string_view::npos) {
        const auto second = path.find('/', first + 1);
        const auto id = path.substr(0, second);
        if (first > 0 && id.size() > first + 1) return std::string(id);
      }
    }
  }
  return trim_copy(result.title);
}

namespace {

std::string generate_search_query(const SynthesisSpec& spec, AgentClient& agent) {
  const std::string fallback = spec.task_label + " reward model";
  try {
    std::string line = first_line(agent.complete(render_prompt(
        "search_query", {{"task", spec.task_label},
                         {"requirements", spec.requirements.empty() ? "(none)" : spec.requirements}})));
    line.erase(std::remove(line.begin(), line.end(), '"'), line.end());
    line = trim_copy(line);
    return line.empty() ? fallback : line;
  } catch (const Error&) {
    return fallback;
  }
}

struct DraftedIdentity {
  std::string name;
  std::string description;
};

DraftedIdentity draft_identity(const SynthesisSpec& spec, const CandidateRepo& repo,
                               AgentClient& agent) {
  const auto slash = repo.repo_id.rfind('/');
  DraftedIdentity identity{
      to_tool_name(slash == std::string::npos ? repo.repo_id : repo.repo_id.substr(slash + 1)),
      "Reward model " + repo.repo_id + " wrapped as a scorer for " + spec.task_label + "."};
  std::string reply;
  try {
    reply = agent.complete(render_prompt("wrap_describe", {{"task", spec.task_label},
                                                           {"repo_id", repo.repo_id},
                                                           {"readme", truncate_text(repo.readme, 4000)}}));
  } catch (const Error&) {
    return identity;
  }
  std::istringstream in(reply);
  for (std::string line; std::getline(in, line);) {
    const std::string t = trim_copy(line);
    const std::string head = lower(t.substr(0, 12));
    if (head.rfind("name:", 0) == 0) {
      const std::string name = to_tool_name(t.substr(5));
      if (is_valid_tool_name(name)) identity.name = name;
    } else if (head.rfind("description:", 0) == 0) {
      const std::string desc = trim_copy(t.substr(12));
      if (!desc.empty()) identity.description = desc;
    }
  }
  if (!is_valid_tool_name(identity.name)) identity.name = to_tool_name(spec.task_label + "-rm");
  return identity;
}

}  // namespace

WrapResult wrapllm_pipeline(const SynthesisSpec& spec, SearchClient& search, ModelHubClient& hub,
                            AgentClient& agent, const WrapOptions& options) {
  if (spec.strategy != SynthesisStrategy::kWrapLlm) {
    fail(ErrorCode::kInvalidArgument, "wrapllm_pipeline needs a wrap_llm spec");
  }
  if (spec.task_label.empty()) fail(ErrorCode::kInvalidArgument, "task label is empty");

  const std::string query = generate_search_query(spec, agent);
  std::vector<std::string> notes;

  for (int round = 0; round < options.max_rounds; ++round) {
    auto page = search.search(query, round);
    if (page.size() > options.page_size) page.resize(options.page_size);
    const auto kept_positions = filter_results(page);
    if (kept_positions.empty()) continue;

    std::vector<SearchResult> kept;
    for (int pos : kept_positions) {
      for (const auto& r : page) {
        if (r.position == pos) {
          kept.push_back(r);
          break;
        }
      }
    }
    for (int pos : rerank(kept, spec, agent)) {
      const auto it = std::find_if(page.begin(), page.end(),
                                   [&](const SearchResult& r) { return r.position == pos; });
      const std::string repo_id = repo_id_from(*it);
      CandidateRepo repo;
      try {
        repo = hub.inspect(repo_id);
      } catch (const Error& e) {
        notes.push_back("skipped " + repo_id + ": " + e.what());
        continue;
      }
      repo.repo_id = repo_id;
      repo.passes_filter = true;
      std::string size_note;
      if (repo.params_billions) {
        if (*repo.params_billions > options.max_params_billions) {
          notes.push_back("skipped " + repo_id + ": " + std::to_string(*repo.params_billions) +
                          "B parameters exceeds size gate");
          continue;
        }
      } else {
        size_note = "warning: parameter count unknown, size gate not enforced";
      }

      std::string endpoint;
      try {
        endpoint = hub.deploy(repo_id);
      } catch (const Error& e) {
        fail(ErrorCode::kHubDeployFailed, "deploying " + repo_id + " failed: " + e.what());
      }
      if (endpoint.empty()) fail(ErrorCode::kHubDeployFailed, "hub returned no endpoint for " + repo_id);

      const auto identity = draft_identity(spec, repo, agent);
      const auto index_in_page = static_cast<int>(std::distance(page.begin(), it));
      WrapResult result;
      result.repo = repo;
      result.search_query = query;
      result.retrieved_position =
          round * static_cast<int>(options.page_size) + index_in_page + 1;

      RewardTool& tool = result.tool;
      tool.name = identity.name;
      tool.kind = ToolKind::kWrappedModel;
      tool.description = identity.description;
      if (const auto tag = to_tool_name(spec.task_label); !tag.empty()) tool.task_tags.insert(tag);
      tool.backend = Backend{BackendType::kEndpoint, endpoint};
      tool.verified = false;
      tool.created_at = now_seconds();
      std::string provenance = "wrap_llm: query=\"" + query + "\"; repo=" + repo_id +
                               "; position=" + std::to_string(result.retrieved_position);
      if (!size_note.empty()) provenance += "; " + size_note;
      for (const auto& note : notes) provenance += "; " + note;
      tool.provenance = provenance;
      return result;
    }
  }
  fail(ErrorCode::kNoCandidateFound, "no reward model repository found for '" + spec.task_label +
                                         "' after " + std::to_string(options.max_rounds) +
                                         " rounds");
}

double mean_retrieved_position(const std::vector<WrapResult>& runs) {
  if (runs.empty()) return 0.0;
  double total = 0.0;
  for (const auto& r : runs) total += r.retrieved_position;
  return total / static_cast<double>(runs.size());
}

std::string_view to_string(SchemeCategory category) {
  switch (category) {
    case SchemeCategory::kRuleBased: return "rule_based";
    case SchemeCategory::kMetricBased: return "metric_based";
    case SchemeCategory::kModelBased: return "model_based";
  }
  return "rule_based";
}

std::vector<PlanScheme> parse_plan(std::string_view reply) {
  std::vector<PlanScheme> plan;
  std::istringstream in{std::string(reply)};
  for (std::string line; std::getline(in, line) && plan.size() < kMaxPlanSchemes;) {
    const auto marker = line.find("####");
    if (marker == std::string::npos) continue;
    const std::string body = trim_copy(line.substr(marker + 4));
    const auto slash = body.find('/');
    if (slash == std::string::npos) continue;
    const auto colon = body.find(':', slash);
    std::string category_text;
    for (char c : lower(body.substr(0, slash))) {
      if (std::isalpha(static_cast<unsigned char>(c))) category_text.push_back(c);
    }
    std::optional<SchemeCategory> category;
    if (category_text == "rulebased" || category_text == "rule") {
      category = SchemeCategory::kRuleBased;
    } else if (category_text == "metricbased" || category_text == "metric") {
      category = SchemeCategory::kMetricBased;
    } else if (category_text.find("model") != std::string::npos ||
               category_text.find("learned") != std::string::npos) {
      category = SchemeCategory::kModelBased;
    }
    if (!category) continue;
    PlanScheme scheme;
    scheme.index = static_cast<int>(plan.size()) + 1;
    scheme.category = *category;
    scheme.name = trim_copy(body.substr(slash + 1, colon == std::string::npos
                                                        ? std::string::npos
                                                        : colon - slash - 1));
    scheme.description = colon == std::string::npos ? "" : trim_copy(body.substr(colon + 1));
    if (scheme.name.empty()) continue;
    plan.push_back(std::move(scheme));
  }
  return plan;
}

std::optional<PlanScheme> choose_scheme(const std::vector<PlanScheme>& plan) {
  for (const auto& scheme : plan) {
    if (scheme.category != SchemeCategory::kModelBased) return scheme;
  }
  return std::nullopt;
}

std::optional<SynthesizedScript> parse_script_reply(std::string_view reply) {
  // Collect fenced blocks as (tag, body).
  std::vector<std::pair<std::string, std::string>> blocks;
  std::size_t pos = 0;
  while (true) {
    const auto open = reply.find("```", pos);
    if (open == std::string_view::npos) break;
    const auto close = reply.find("```", open + 3);
    if (close == std::string_view::npos) break;
    std::string_view body = reply.substr(open + 3, close - open - 3);
    std::string tag;
    if (const auto nl = body.find('\n'); nl != std::string_view::npos) {
      const std::string first = trim_copy(body.substr(0, nl));
      if (first.find(' ') == std::string::npos && first.size() <= 20) {
        tag = lower(first);
        body.remove_prefix(nl + 1);
      }
    }
    blocks.emplace_back(tag, std::string(body));
    pos = close + 3;
  }
  static const std::regex kEntry(R"((^|\n)def[ \t]+(compute_[A-Za-z0-9_]+)[ \t]*\()");
  std::optional<SynthesizedScript> script;
  for (const auto& [tag, body] : blocks) {
    std::smatch m;
    if (!script && (tag == "python" || tag == "py" || tag.empty()) &&
        std::regex_search(body, m, kEntry)) {
      script = SynthesizedScript{m.str(2), body, {}};
    }
  }
  if (!script) return std::nullopt;
  for (const auto& [tag, body] : blocks) {
    if (body == script->source) continue;
    if (tag == "python" || tag == "py") continue;
    std::istringstream in(body);
    for (std::string line; std::getline(in, line);) {
      const std::string req = trim_copy(line);
      if (!req.empty() && req.front() != '#') script->requirements.push_back(req);
    }
  }
  return script;
}

namespace {

// Runs every smoke triplet; returns an error description or empty.
std::string smoke_run(const SynthesizedScript& script, TaskFamily family,
                      std::chrono::milliseconds timeout, SandboxClient& sandbox) {
  const auto& smoke = smoke_triplets(family);
  for (const ContextTriplet* t : {&smoke.perfect, &smoke.partial, &smoke.garbage}) {
    try {
      run_sandbox(script, *t, timeout, sandbox);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kSandboxUnavailable) throw;
      return e.what();
    }
  }
  return {};
}

std::string fnv1a_hex8(std::string_view data) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[9];
  std::snprintf(buf, sizeof(buf), "%08x", static_cast<unsigned>(h >> 32));
  return buf;
}

}  // namespace

fs::path script_relative_path(std::string_view tool_name, std::string_view source) {
  return fs::path("scripts") / (std::string(tool_name) + "-" + fnv1a_hex8(source) + ".py");
}

CodeVerifyResult codeverify_pipeline(const SynthesisSpec& spec, AgentClient& agent,
                                     SandboxClient& sandbox, const CodeVerifyOptions& options) {
  if (spec.strategy != SynthesisStrategy::kCodeVerify) {
    fail(ErrorCode::kInvalidArgument, "codeverify_pipeline needs a code_verify spec");
  }
  if (spec.task_label.empty()) fail(ErrorCode::kInvalidArgument, "task label is empty");
  TaskFamily family = task_family_for(spec.task_label);
  const std::string label_name = to_tool_name(spec.task_label);

  CodeVerifyResult result;
  std::string provenance;
  if (options.template_mode) {
    const auto kind = options.template_kind.value_or(template_for(spec.task_label));
    family = family_of(kind);
    result.script = instantiate_template(kind);
    if (const auto error = smoke_run(result.script, family, options.smoke_timeout, sandbox);
        !error.empty()) {
      fail(ErrorCode::kScriptGenerationFailed, "template smoke run failed: " + error);
    }
    const std::string suffix = kind == ScriptTemplate::kMathAnswer  ? "numeric-match"
                               : kind == ScriptTemplate::kCodeTests ? "unit-tests"
                                                                    : "bleu2";
    result.tool.name = to_tool_name((label_name.empty() ? "task" : label_name) + "-" + suffix);
    result.tool.description =
        kind == ScriptTemplate::kMathAnswer
            ? "Numeric exact match on the final '####' or \\boxed{} answer of a math response."
        : kind == ScriptTemplate::kCodeTests
            ? "Runs the last fenced code block against JSON stdin/stdout cases in the reference."
            : "Sentence BLEU-2 between response and reference.";
    provenance = "code_verify template=" + std::string(to_string(kind));
  } else {
    const std::string plan_reply = agent.complete(render_prompt(
        "plan_schemes", {{"task", spec.task_label},
                         {"requirements", spec.requirements.empty() ? "(none)" : spec.requirements}}));
    result.plan = parse_plan(plan_reply);
    result.chosen = choose_scheme(result.plan);
    if (!result.chosen) {
      fail(ErrorCode::kNoViableScheme, "plan for '" + spec.task_label +
                                           "' has no rule- or metric-based scheme");
    }
    std::string feedback;
    std::optional<SynthesizedScript> script;
    for (int attempt = 1; attempt <= kMaxScriptAttempts && !script; ++attempt) {
      std::string reply;
      try {
        reply = agent.complete(render_prompt(
            "write_code", {{"scheme", result.chosen->name + ": " + result.chosen->description},
                           {"task", spec.task_label},
                           {"feedback", feedback}}));
      } catch (const Error& e) {
        feedback = std::string("\nThe previous attempt failed: ") + e.what();
        continue;
      }
      auto parsed = parse_script_reply(reply);
      if (!parsed) {
        feedback = "\nThe previous attempt did not contain a python block defining compute_<name>.";
        continue;
      }
      if (const auto error = smoke_run(*parsed, family, options.smoke_timeout, sandbox);
          !error.empty()) {
        feedback = "\nThe previous attempt failed when executed: " + error;
        continue;
      }
      script = std::move(parsed);
    }
    if (!script) {
      fail(ErrorCode::kScriptGenerationFailed,
           "no runnable script after " + std::to_string(kMaxScriptAttempts) + " attempts");
    }
    result.script = std::move(*script);
    std::string scheme_name = to_tool_name(result.chosen->name);
    if (scheme_name.empty()) scheme_name = "verifier";
    result.tool.name = to_tool_name((label_name.empty() ? "task" : label_name) + "-" + scheme_name);
    result.tool.description = result.chosen->description.empty()
                                  ? result.chosen->name
                                  : result.chosen->name + ": " + result.chosen->description;
    provenance = "code_verify scheme=" + std::to_string(result.chosen->index) + "/" +
                 std::string(to_string(result.chosen->category)) + " '" + result.chosen->name +
                 "' of " + std::to_string(result.plan.size());
    if (!result.script.requirements.empty()) {
      provenance += "; requirements:";
      for (const auto& r : result.script.requirements) provenance += " " + r;
    }
  }

  result.family = family;
  RewardTool& tool = result.tool;
  tool.kind = ToolKind::kSynthesizedScript;
  if (!label_name.empty()) tool.task_tags.insert(label_name);
  tool.task_tags.insert(std::string(to_string(family)));
  tool.backend = Backend{
      BackendType::kScript,
      format_script_locator({script_relative_path(tool.name, result.script.source),
                             result.script.entry_function})};
  tool.verified = false;
  tool.created_at = now_seconds();
  tool.provenance = provenance;
  return result;
}

bool stage_script(const fs::path& base_dir, const RewardTool& tool,
                  const SynthesizedScript& script) {
  const auto locator = parse_script_locator(tool.backend.value);
  const fs::path path = locator.path.is_absolute() ? locator.path : base_dir / locator.path;
  std::error_code ec;
  fs::create_directories(path.parent_path(), ec);
  if (fs::exists(path)) return false;
  write_file_atomic(path, script.source);
  return true;
}

SynthesisEngine::SynthesisEngine(AgentClient& agent, SandboxClient& sandbox,
                                 EndpointClient& endpoints, SearchClient* search,
                                 ModelHubClient* hub, SynthesisEngineOptions options)
    : agent_(agent),
      sandbox_(sandbox),
      endpoints_(endpoints),
      search_(search),
      hub_(hub),
      options_(options) {}

std::optional<SynthesisCandidate> SynthesisEngine::synthesize(const SynthesisSpec& spec,
                                                              const ToolLibrary& lib) {
  if (spec.strategy == SynthesisStrategy::kWrapLlm) {
    if (search_ == nullptr || hub_ == nullptr) {
      fail(ErrorCode::kBackendUnavailable, "wrap_llm needs search and model hub clients");
    }
    auto wrapped = wrapllm_pipeline(spec, *search_, *hub_, agent_, options_.wrap);
    auto report = verify_wrapped(wrapped.tool, wrapped.repo, agent_, endpoints_);
    return SynthesisCandidate{std::move(wrapped.tool), std::move(report)};
  }

  auto result = codeverify_pipeline(spec, agent_, sandbox_, options_.code);
  const fs::path base = lib.base_dir();
  const bool created = stage_script(base, result.tool, result.script);
  auto report = verify_script(result.tool, result.script, sandbox_, result.family,
                              options_.code.smoke_timeout);
  if (!report.verdict && created) {
    std::error_code ec;
    fs::remove(base / parse_script_locator(result.tool.backend.value).path, ec);
  }
  return SynthesisCandidate{std::move(result.tool), std::move(report)};
}

std::optional<SynthesisCandidate> RateLimitedSynthesizer::synthesize(const SynthesisSpec& spec,
                                                                     const ToolLibrary& lib) {
  std::unique_lock lock(in_flight_, std::try_to_lock);
  if (!lock.owns_lock()) return std::nullopt;
  return inner_.synthesize(spec, lib);
}

}  // namespace rlar
