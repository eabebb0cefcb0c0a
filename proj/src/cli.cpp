#include "rlar/cli.hpp"

#include <pthread.h>
#include <signal.h>

#include <CLI11.hpp>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include "rlar/advantage.hpp"
#include "rlar/config.hpp"
#include "rlar/error.hpp"
#include "rlar/http_clients.hpp"
#include "rlar/registry.hpp"
#include "rlar/router.hpp"
#include "rlar/routing_eval.hpp"
#include "rlar/service.hpp"
#include "rlar/synthesis.hpp"

namespace rlar::cli {

namespace fs = std::filesystem;

namespace {

struct ConfigFlags {
  std::string config_file;
  std::optional<std::string> listen_address;
  std::optional<std::string> manifest_path;
  std::optional<std::string> agent_endpoint;
  std::optional<std::string> search_endpoint;
  std::optional<std::string> hub_endpoint;
  std::optional<std::string> sandbox_command;
  std::optional<int> group_size;
  std::optional<double> clip_threshold;
  bool lenient = false;
  std::optional<long> request_timeout_ms;
  std::optional<std::string> audit_log;
};

void add_config_flags(CLI::App& app, ConfigFlags& f) {
  app.add_option("--config", f.config_file, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--listen", f.listen_address, "host:port for serve");
  app.add_option("--manifest", f.manifest_path, "library manifest path");
  app.add_option("--agent-endpoint", f.agent_endpoint, "agent completion URL");
  app.add_option("--search-endpoint", f.search_endpoint, "web search URL");
  app.add_option("--hub-endpoint", f.hub_endpoint, "model hub URL");
  app.add_option("--sandbox-command", f.sandbox_command, "interpreter command for scripts");
  app.add_option("--group-size", f.group_size, "default GRPO group size");
  app.add_option("--clip-threshold", f.clip_threshold, "advantage clip threshold");
  app.add_flag("--lenient", f.lenient, "accept either answer marker in math rewards");
  app.add_option("--request-timeout-ms", f.request_timeout_ms, "outbound request timeout");
  app.add_option("--audit-log", f.audit_log, "audit log path for serve");
}

// Defaults, then the config file, then RLAR_* variables, then flags.
ServiceConfig resolve_config(const ConfigFlags& f) {
  ServiceConfig c;
  if (!f.config_file.empty()) {
    std::ifstream in(f.config_file);
    std::stringstream buf;
    buf << in.rdbuf();
    c = config_from_json(parse_json(buf.str(), "config file"), c);
  }
  apply_env_overrides(c, [](const char* name) { return std::getenv(name); });
  if (f.listen_address) c.listen_address = *f.listen_address;
  if (f.manifest_path) c.manifest_path = *f.manifest_path;
  if (f.agent_endpoint) c.agent_endpoint = *f.agent_endpoint;
  if (f.search_endpoint) c.search_endpoint = *f.search_endpoint;
  if (f.hub_endpoint) c.hub_endpoint = *f.hub_endpoint;
  if (f.sandbox_command) c.sandbox_command = *f.sandbox_command;
  if (f.group_size) c.default_group_size = *f.group_size;
  if (f.clip_threshold) c.clip_threshold = *f.clip_threshold;
  if (f.lenient) c.strict_format = false;
  if (f.request_timeout_ms) c.request_timeout = std::chrono::milliseconds(*f.request_timeout_ms);
  if (f.audit_log) c.audit_log = *f.audit_log;
  c.validate();
  return c;
}

// Clients assembled from a resolved config.
struct Runtime {
  explicit Runtime(const ServiceConfig& c)
      : config(c),
        sandbox(ProcessSandbox::Options{split_command(c.sandbox_command)}),
        endpoints(c.request_timeout) {
    if (c.agent_endpoint.empty()) {
      agent = std::make_unique<NullAgent>();
    } else {
      agent = std::make_unique<HttpAgentClient>(c.agent_endpoint, c.request_timeout);
    }
    if (!c.search_endpoint.empty()) {
      search = std::make_unique<HttpSearchClient>(c.search_endpoint, c.request_timeout);
    }
    if (!c.hub_endpoint.empty()) {
      hub = std::make_unique<HttpHubClient>(c.hub_endpoint, c.request_timeout);
    }
  }

  ToolInvoker invoker(const ToolLibrary& lib) {
    ToolInvoker::Options options;
    options.base_dir = lib.base_dir();
    options.marker_mode = config.strict_format ? MarkerMode::kStrict : MarkerMode::kLenient;
    return ToolInvoker(endpoints, sandbox, options);
  }

  // Live synthesis needs an agent; without one every route is a Select.
  std::unique_ptr<SynthesisEngine> engine() {
    if (config.agent_endpoint.empty()) return nullptr;
    return std::make_unique<SynthesisEngine>(*agent, sandbox, endpoints, search.get(), hub.get());
  }

  ServiceConfig config;
  ProcessSandbox sandbox;
  HttpEndpointClient endpoints;
  std::unique_ptr<AgentClient> agent;
  std::unique_ptr<SearchClient> search;
  std::unique_ptr<ModelHubClient> hub;
};

std::string read_text(const std::string& path, std::istream& in) {
  std::stringstream buf;
  if (path == "-") {
    buf << in.rdbuf();
  } else {
    std::ifstream file(path);
    if (!file) fail(ErrorCode::kInvalidArgument, "cannot read " + path);
    buf << file.rdbuf();
  }
  return buf.str();
}

ContextTriplet read_triplet(const std::string& path, std::istream& in) {
  try {
    auto t = parse_json(read_text(path, in), "triplet").get<ContextTriplet>();
    t.validate();
    return t;
  } catch (const Json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("bad triplet: ") + e.what());
  }
}

void write_json_file(const fs::path& path, const Json& j) {
  write_file_atomic(path, j.dump(2) + "\n");
}

Json score_json(const RouteResult& r) {
  return Json{{"score", r.score.value},
              {"scale", to_string(r.score.scale)},
              {"raw", r.score.raw ? Json(*r.score.raw) : Json(nullptr)},
              {"tool_used", r.tool_used},
              {"route_action", to_string(r.decision.action)},
              {"rationale", r.decision.rationale},
              {"library_version", r.library->version}};
}

int cmd_score(const ServiceConfig& config, const std::string& triplet_path,
              const std::optional<std::string>& tool, std::istream& in, std::ostream& out) {
  const ContextTriplet t = read_triplet(triplet_path, in);
  LibraryStore store(load_library(config.manifest_path));
  Runtime rt(config);
  const auto invoker = rt.invoker(*store.snapshot());
  RouteResult result;
  if (tool) {
    result = score_with_tool(t, store, *tool, invoker, RouteDecision::select(*tool, "tool override"));
  } else {
    auto engine = rt.engine();
    result = route_and_score(t, store, *rt.agent, engine.get(), invoker);
  }
  out << score_json(result).dump() << '\n';
  return kExitOk;
}

int cmd_route(const ServiceConfig& config, const std::string& triplet_path, std::istream& in,
              std::ostream& out) {
  const ContextTriplet t = read_triplet(triplet_path, in);
  const ToolLibrary lib = load_library(config.manifest_path);
  Runtime rt(config);
  const RouteDecision decision = assess(t, lib, *rt.agent);
  out << Json{{"decision", decision}, {"library_version", lib.version}}.dump() << '\n';
  return kExitOk;
}

struct SynthesizeArgs {
  std::string strategy = "code_verify";
  std::string label;
  std::string requirements;
  std::optional<ScriptTemplate> template_kind;
  std::string out_dir;
};

int cmd_synthesize(const ServiceConfig& config, const SynthesizeArgs& a, std::ostream& out) {
  const auto strategy = parse_strategy(a.strategy);
  if (!strategy) fail(ErrorCode::kInvalidArgument, "unknown strategy '" + a.strategy + "'");
  const SynthesisSpec spec{*strategy, a.label, a.requirements};
  Runtime rt(config);
  const fs::path dir(a.out_dir);
  fs::create_directories(dir);

  RewardTool tool;
  if (*strategy == SynthesisStrategy::kCodeVerify) {
    CodeVerifyOptions options;
    options.template_mode = a.template_kind.has_value();
    options.template_kind = a.template_kind;
    const auto result = codeverify_pipeline(spec, *rt.agent, rt.sandbox, options);
    stage_script(dir, result.tool, result.script);
    write_json_file(dir / "script.json", Json{{"entry_function", result.script.entry_function},
                                              {"requirements", result.script.requirements}});
    tool = result.tool;
  } else {
    if (!rt.search || !rt.hub) {
      fail(ErrorCode::kBackendUnavailable, "wrap_llm needs --search-endpoint and --hub-endpoint");
    }
    const auto result = wrapllm_pipeline(spec, *rt.search, *rt.hub, *rt.agent);
    write_json_file(dir / "repo.json", result.repo);
    tool = result.tool;
  }
  write_json_file(dir / "tool.json", tool);
  out << Json{{"staged", dir.string()}, {"tool", tool}}.dump() << '\n';
  return kExitOk;
}

int cmd_verify(const ServiceConfig& config, const std::string& staged, bool commit,
               std::ostream& out) {
  const fs::path dir(staged);
  RewardTool tool;
  try {
    tool = parse_json(read_text((dir / "tool.json").string(), std::cin), "staged tool").get<RewardTool>();
  } catch (const Json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("staged tool.json: ") + e.what());
  }
  Runtime rt(config);
  VerificationReport report;
  SynthesizedScript script;
  if (tool.kind == ToolKind::kSynthesizedScript) {
    const auto locator = parse_script_locator(tool.backend.value);
    script.entry_function = locator.entry_function;
    script.source = read_text((dir / locator.path).string(), std::cin);
    report = verify_script(tool, script, rt.sandbox);
  } else if (tool.kind == ToolKind::kWrappedModel) {
    CandidateRepo repo;
    try {
      repo = parse_json(read_text((dir / "repo.json").string(), std::cin), "staged repo").get<CandidateRepo>();
    } catch (const Json::exception& e) {
      fail(ErrorCode::kInvalidArgument, std::string("staged repo.json: ") + e.what());
    }
    report = verify_wrapped(tool, repo, *rt.agent, rt.endpoints);
  } else {
    fail(ErrorCode::kInvalidArgument, "builtin tools are not staged for verification");
  }

  Json result{{"report", report}};
  if (commit && report.verdict) {
    ToolLibrary lib = load_library(config.manifest_path);
    if (tool.kind == ToolKind::kSynthesizedScript) {
      stage_script(lib.base_dir(), tool, script);
    }
    tool.verified = true;
    lib = commit_tool(lib, tool);
    result["committed"] = tool.name;
    result["library_version"] = lib.version;
  }
  out << result.dump() << '\n';
  return report.verdict ? kExitOk : kExitDomainError;
}

int cmd_library_list(const ServiceConfig& config, std::ostream& out) {
  const ToolLibrary lib = load_library(config.manifest_path);
  out << "version " << lib.version << ", " << lib.tools.size() << " tools\n";
  for (const auto& tool : lib.tools) {
    std::string tags;
    for (const auto& tag : tool.task_tags) tags += (tags.empty() ? "" : ",") + tag;
    out << std::left << std::setw(28) << tool.name << ' ' << std::setw(18) << to_string(tool.kind)
        << ' ' << (tool.verified ? "verified  " : "unverified") << ' '
        << (tags.empty() ? "-" : tags) << '\n';
  }
  return kExitOk;
}

int cmd_library_show(const ServiceConfig& config, const std::string& name, std::ostream& out) {
  const ToolLibrary lib = load_library(config.manifest_path);
  if (name.empty()) {
    out << manifest_json(lib).dump(2) << '\n';
    return kExitOk;
  }
  const auto tool = lookup(lib, name);
  if (!tool) fail(ErrorCode::kInvalidArgument, "no tool named '" + name + "'");
  out << Json(*tool).dump(2) << '\n';
  return kExitOk;
}

int cmd_library_init(const ServiceConfig& config, bool force, std::ostream& out) {
  if (fs::exists(config.manifest_path) && !force) {
    fail(ErrorCode::kInvalidArgument,
         config.manifest_path.string() + " already exists (use --force to overwrite)");
  }
  const auto seeds = default_seed_tools();
  const ToolLibrary lib = init_library(seeds, config.manifest_path);
  out << "initialized " << config.manifest_path.string() << " at version " << lib.version << " with "
      << lib.tools.size() << " tools\n";
  return kExitOk;
}

struct AdvantagesArgs {
  std::string input = "-";
  std::string output;
  std::optional<double> threshold;
  std::string report;
  std::string csv;
};

int cmd_advantages(const ServiceConfig& config, const AdvantagesArgs& a, std::istream& in,
                   std::ostream& out, std::ostream& err) {
  std::istringstream text(read_text(a.input, in));
  const auto groups = read_reward_groups(text);
  ClipAccumulator acc(a.threshold.value_or(config.clip_threshold));
  std::vector<AdvantageGroup> results;
  results.reserve(groups.size());
  for (const auto& g : groups) {
    results.push_back(compute_advantages(g));
    acc.add(results.back(), g.step.value_or(0));
  }
  const ClipStats stats = acc.stats();
  if (a.output.empty()) {
    write_advantage_groups(out, results);
  } else {
    std::ostringstream buf;
    write_advantage_groups(buf, results);
    write_file_atomic(a.output, buf.str());
  }
  if (a.report.empty()) {
    err << Json(stats).dump() << '\n';
  } else {
    write_file_atomic(a.report, Json(stats).dump(2) + "\n");
  }
  if (!a.csv.empty()) {
    std::ostringstream buf;
    write_clip_series_csv(buf, stats);
    write_file_atomic(a.csv, buf.str());
  }
  return kExitOk;
}

struct EvalArgs {
  std::string instances;
  std::string records;
  std::string models;
  std::string strategy = "all";
  std::string model = "top";
  std::vector<int> ks{2};
  std::uint64_t seed = 0;
  std::string out_csv;
  std::string out_json;
  std::size_t response_prefix_chars = 1500;
};

int cmd_eval_routing(const ServiceConfig& config, const EvalArgs& a, std::istream& in,
                     std::ostream& out, std::ostream& err) {
  std::istringstream inst_text(read_text(a.instances, in));
  const auto instances = read_instances(inst_text);
  std::istringstream rec_text(read_text(a.records, in));
  const auto records = read_score_records(rec_text);
  const RecordIndex index(records);
  index.require_complete(instances);
  std::vector<ModelInfo> models;
  if (!a.models.empty()) {
    std::istringstream model_text(read_text(a.models, in));
    models = read_model_info(model_text);
  }

  const bool all = a.strategy == "all";
  std::vector<StrategyResult> results;
  auto want = [&](std::string_view s) { return all || a.strategy == s; };
  if (!all && a.strategy != "single" && a.strategy != "mean" && a.strategy != "random" &&
      a.strategy != "oracle" && a.strategy != "agentic") {
    fail(ErrorCode::kInvalidArgument, "unknown strategy '" + a.strategy + "'");
  }
  if (want("single")) {
    const std::string model = a.model == "top" ? rank_models(index, instances).at(0) : a.model;
    results.push_back(eval_single_model(index, model, instances));
  }
  if (want("random")) results.push_back(eval_random(index, instances, a.seed));
  if (want("agentic") && (!all || !config.agent_endpoint.empty())) {
    Runtime rt(config);
    AgenticOptions options;
    options.response_prefix_chars = a.response_prefix_chars;
    results.push_back(eval_agentic(index, instances, models, *rt.agent, options));
    if (results.back().fallbacks > 0) {
      err << "agentic: " << results.back().fallbacks << " replies fell back to the top model\n";
    }
  }
  if (want("mean")) {
    for (int k : a.ks) results.push_back(eval_mean_at_k(index, instances, k));
  }
  if (want("oracle")) results.push_back(eval_oracle_best(index, instances));

  std::ostringstream csv;
  write_results_csv(csv, results, category_order(instances));
  if (a.out_csv.empty()) {
    out << csv.str();
  } else {
    write_file_atomic(a.out_csv, csv.str());
  }
  if (!a.out_json.empty()) write_file_atomic(a.out_json, Json(results).dump(2) + "\n");
  return kExitOk;
}

int cmd_serve(const ServiceConfig& config, std::ostream& out) {
  LibraryStore store(load_library(config.manifest_path));
  Runtime rt(config);
  if (!rt.sandbox.available()) {
    fail(ErrorCode::kSandboxUnavailable, "sandbox command '" + config.sandbox_command + "' does not run");
  }
  const auto invoker = rt.invoker(*store.snapshot());
  auto engine = rt.engine();
  AuditLog audit(config.audit_log, config.audit_queue_capacity);
  ScoringService service(config, store, ServiceDeps{*rt.agent, invoker, engine.get(), &audit});
  HttpService http(service);
  const auto [host, port] = parse_listen_address(config.listen_address);

  // Signals are taken by a dedicated thread so shutdown runs outside a
  // signal handler.
  sigset_t stop_signals;
  sigemptyset(&stop_signals);
  sigaddset(&stop_signals, SIGINT);
  sigaddset(&stop_signals, SIGTERM);
  sigset_t previous;
  pthread_sigmask(SIG_BLOCK, &stop_signals, &previous);
  const int bound = http.bind(host, port);
  out << "listening on " << host << ":" << bound << " (library version "
      << store.snapshot()->version << ")" << std::endl;
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&stop_signals, &sig);
    http.stop();
  });
  http.listen();
  waiter.join();
  audit.close();
  pthread_sigmask(SIG_SETMASK, &previous, nullptr);
  out << "stopped" << std::endl;
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out,
        std::ostream& err) {
  CLI::App app{"Reward tool orchestration: routing, synthesis, verification and scoring"};
  app.name("rlar");
  app.require_subcommand(1);
  app.fallthrough();
  ConfigFlags flags;
  add_config_flags(app, flags);

  std::function<int(const ServiceConfig&)> action;

  auto* score = app.add_subcommand("score", "Score a triplet (routes unless --tool is given)");
  std::string triplet_path = "-";
  std::optional<std::string> tool_name;
  score->add_option("--triplet", triplet_path, "triplet JSON file, - for stdin");
  score->add_option("--tool", tool_name, "score with this tool instead of routing");
  score->callback([&] {
    action = [&](const ServiceConfig& c) { return cmd_score(c, triplet_path, tool_name, in, out); };
  });

  auto* route = app.add_subcommand("route", "Print the routing decision for a triplet");
  route->add_option("--triplet", triplet_path, "triplet JSON file, - for stdin");
  route->callback([&] {
    action = [&](const ServiceConfig& c) { return cmd_route(c, triplet_path, in, out); };
  });

  auto* synth = app.add_subcommand("synthesize", "Run a synthesis pipeline and stage the tool");
  SynthesizeArgs synth_args;
  synth->add_option("--strategy", synth_args.strategy, "code_verify or wrap_llm")
      ->check(CLI::IsMember({"code_verify", "wrap_llm"}));
  synth->add_option("--label", synth_args.label, "task label (defaults to the template kind)");
  synth->add_option("--requirements", synth_args.requirements, "free-text requirements");
  synth->add_option("--out", synth_args.out_dir, "staging directory")->required();
  std::string template_kind;
  synth->add_option("--template", template_kind, "agent-free template: math, code or metric")
      ->check(CLI::IsMember({"math", "code", "metric"}));
  synth->callback([&] {
    if (synth_args.label.empty()) {
      if (template_kind.empty()) throw CLI::RequiredError("--label");
      synth_args.label = template_kind;
    }
    action = [&](const ServiceConfig& c) {
      if (!template_kind.empty()) {
        if (synth_args.strategy != "code_verify") {
          fail(ErrorCode::kInvalidArgument, "--template applies to code_verify only");
        }
        synth_args.template_kind = parse_script_template(template_kind);
      }
      return cmd_synthesize(c, synth_args, out);
    };
  });

  auto* verify = app.add_subcommand("verify", "Run the verification gate on a staged tool");
  std::string staged;
  bool commit = false;
  verify->add_option("--staged", staged, "directory written by synthesize")
      ->required()
      ->check(CLI::ExistingDirectory);
  verify->add_flag("--commit", commit, "commit to the library when every check passes");
  verify->callback([&] {
    action = [&](const ServiceConfig& c) { return cmd_verify(c, staged, commit, out); };
  });

  auto* library = app.add_subcommand("library", "Inspect or initialize the tool library");
  library->require_subcommand(1);
  auto* list = library->add_subcommand("list", "List tools");
  list->callback([&] { action = [&](const ServiceConfig& c) { return cmd_library_list(c, out); }; });
  auto* show = library->add_subcommand("show", "Show one tool, or the manifest");
  std::string show_name;
  show->add_option("name", show_name, "tool name");
  show->callback([&] {
    action = [&](const ServiceConfig& c) { return cmd_library_show(c, show_name, out); };
  });
  auto* init = library->add_subcommand("init", "Write a seeded manifest");
  bool force = false;
  init->add_flag("--force", force, "overwrite an existing manifest");
  init->callback([&] {
    action = [&](const ServiceConfig& c) { return cmd_library_init(c, force, out); };
  });

  auto* adv = app.add_subcommand("advantages", "Group-normalized advantages and clip statistics");
  AdvantagesArgs adv_args;
  adv->add_option("--input", adv_args.input, "RewardGroup JSONL, - for stdin");
  adv->add_option("--output", adv_args.output, "AdvantageGroup JSONL (default stdout)");
  adv->add_option("--threshold", adv_args.threshold, "clip threshold (default from config)");
  adv->add_option("--report", adv_args.report, "clip statistics JSON (default stderr)");
  adv->add_option("--csv", adv_args.csv, "per-step extremes CSV");
  adv->callback([&] {
    action = [&](const ServiceConfig& c) { return cmd_advantages(c, adv_args, in, out, err); };
  });

  auto* eval = app.add_subcommand("eval-routing", "Compare reward selection strategies");
  EvalArgs eval_args;
  eval->add_option("--instances", eval_args.instances, "instances JSONL")->required();
  eval->add_option("--records", eval_args.records, "score records JSONL")->required();
  eval->add_option("--models", eval_args.models, "model metadata (JSON array or JSONL)");
  eval->add_option("--strategy", eval_args.strategy, "all, single, mean, random, oracle, agentic")
      ->check(CLI::IsMember({"all", "single", "mean", "random", "oracle", "agentic"}));
  eval->add_option("--model", eval_args.model, "model for --strategy single ('top' = best)");
  eval->add_option("--k", eval_args.ks, "k values for mean@k")->expected(1, -1);
  eval->add_option("--seed", eval_args.seed, "seed for the random strategy");
  eval->add_option("--out", eval_args.out_csv, "CSV output (default stdout)");
  eval->add_option("--json", eval_args.out_json, "StrategyResult JSON output");
  eval->add_option("--response-prefix", eval_args.response_prefix_chars,
                   "characters of each response shown to the agent");
  eval->callback([&] {
    action = [&](const ServiceConfig& c) { return cmd_eval_routing(c, eval_args, in, out, err); };
  });

  auto* serve = app.add_subcommand("serve", "Run the HTTP scoring service");
  serve->callback([&] { action = [&](const ServiceConfig& c) { return cmd_serve(c, out); }; });

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    const ServiceConfig config = resolve_config(flags);
    return action(config);
  } catch (const Error& e) {
    err << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
    return kExitDomainError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitDomainError;
  }
}

}  // namespace rlar::cli
