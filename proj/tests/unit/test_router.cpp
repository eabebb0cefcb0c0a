#include <doctest.h>

#include <algorithm>
#include <random>

#include "rlar/router.hpp"
#include "support/fakes.hpp"

using namespace rlar;
using namespace rlar::testing;

namespace {

RewardTool make_tool(std::string name, ToolKind kind, TagSet tags, bool verified = true) {
  RewardTool t;
  t.name = std::move(name);
  t.kind = kind;
  t.description = "tool " + t.name;
  t.task_tags = std::move(tags);
  t.verified = verified;
  t.provenance = "test";
  switch (kind) {
    case ToolKind::kBuiltin: t.backend = {BackendType::kBuiltin, "lexical_overlap"}; break;
    case ToolKind::kWrappedModel: t.backend = {BackendType::kEndpoint, "http://127.0.0.1:9/" + t.name}; break;
    case ToolKind::kSynthesizedScript: t.backend = {BackendType::kScript, "scripts/x.py#compute_x"}; break;
  }
  return t;
}

ToolLibrary seeded() {
  const auto seeds = default_seed_tools();
  return init_library(seeds, "");
}

ProcessSandbox& sandbox() {
  static ProcessSandbox s;
  return s;
}

SynthesisCandidate candidate_for(std::string name, bool verdict) {
  SynthesisCandidate c;
  c.tool = make_tool(std::move(name), ToolKind::kBuiltin, {"haiku-scoring"}, false);
  c.tool.backend = {BackendType::kBuiltin, "bleu2"};
  c.report.tool_name = c.tool.name;
  c.report.add("endpoint_health", verdict, "");
  return c;
}

}  // namespace

TEST_SUITE("router") {
  TEST_CASE("reply parsing") {
    const auto lib = seeded();
    auto sel = parse_route_reply("SELECT nem-math\nbecause math", lib);
    REQUIRE(sel);
    CHECK(sel->action == RouteAction::kSelect);
    CHECK(*sel->selected == "nem-math");
    CHECK(sel->well_formed());

    auto syn = parse_route_reply("  synthesize wrap_llm haiku scoring  ", lib);
    REQUIRE(syn);
    CHECK(syn->synthesis_spec->strategy == SynthesisStrategy::kWrapLlm);
    CHECK(syn->synthesis_spec->task_label == "haiku scoring");

    CHECK_FALSE(parse_route_reply("SELECT missing-tool", lib));
    CHECK_FALSE(parse_route_reply("SELECT nem-math bleu2", lib));
    CHECK_FALSE(parse_route_reply("SYNTHESIZE quantum haiku", lib));
    CHECK_FALSE(parse_route_reply("SYNTHESIZE code_verify", lib));
    CHECK_FALSE(parse_route_reply("", lib));
  }

  TEST_CASE("SELECT cannot reach an unverified tool") {
    auto lib = seeded();
    lib.tools.push_back(make_tool("hidden", ToolKind::kBuiltin, {"math"}, false));
    CHECK_FALSE(parse_route_reply("SELECT hidden", lib));
  }

  TEST_CASE("assess follows a well-formed agent reply") {
    const auto lib = seeded();
    ScriptedAgent agent({"SELECT nem-math"});
    const auto d = assess(triplet("2+2?", "#### 4", "4", {"math"}), lib, agent);
    CHECK(d == RouteDecision::select("nem-math", d.rationale));

    ScriptedAgent synth({"SYNTHESIZE wrap_llm haiku-scoring"});
    const auto s = assess(triplet("write a haiku", "old pond", std::nullopt, {"haiku-scoring"}), lib, synth);
    CHECK(s.action == RouteAction::kSynthesize);
    CHECK(s.synthesis_spec->strategy == SynthesisStrategy::kWrapLlm);
    CHECK(s.synthesis_spec->task_label == "haiku-scoring");
  }

  TEST_CASE("assess falls back after two bad replies") {
    const auto lib = seeded();
    ScriptedAgent agent({"garbage", "more garbage", "SELECT bleu2"});
    const auto t = triplet("2+2?", "#### 4", "4", {"math"});
    const auto d = assess(t, lib, agent);
    CHECK(d.action == RouteAction::kSelect);
    CHECK(*d.selected == deterministic_select(t, lib));
    CHECK(agent.prompts.size() == 2);
    NullAgent null_agent;
    CHECK(*assess(t, lib, null_agent).selected == "nem-math");
  }

  TEST_CASE("the routing prompt truncates long responses") {
    const auto lib = seeded();
    RouterOptions opts;
    opts.response_prefix_chars = 50;
    const std::string long_response(5000, 'z');
    const auto prompt = routing_prompt(triplet("q", long_response, std::nullopt), lib, opts);
    CHECK(prompt.find(std::string(51, 'z')) == std::string::npos);
    CHECK(prompt.find("nem-math") != std::string::npos);
  }

  TEST_CASE("deterministic_select examples") {
    const auto lib = seeded();
    CHECK(deterministic_select(triplet("q", "r", std::nullopt, {"math"}), lib) == "nem-math");
    CHECK(deterministic_select(triplet("q", "r", std::nullopt, {}), lib) == "generic-rm");
    CHECK(deterministic_select(triplet("q", "r", std::nullopt, {"poetry"}), lib) == "generic-rm");

    std::vector<RewardTool> code_tools{make_tool("generic-rm", ToolKind::kBuiltin, {}),
                                       make_tool("code-rm", ToolKind::kWrappedModel, {"code"}),
                                       make_tool("unit-grader", ToolKind::kSynthesizedScript, {"code"})};
    const auto code_lib = init_library(code_tools, "");
    CHECK(deterministic_select(triplet("q", "r", std::nullopt, {"code"}), code_lib) == "unit-grader");

    ToolLibrary empty;
    empty.tools.push_back(make_tool("u", ToolKind::kBuiltin, {}, false));
    try {
      deterministic_select(triplet("q", "r", std::nullopt), empty);
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kEmptyLibrary);
    }
  }

  TEST_CASE("property: deterministic_select is order-independent and ignores unverified tools") {
    std::mt19937 rng(41);
    const std::vector<std::string> vocab = {"math", "code", "translation", "safety", "poetry"};
    const std::vector<ToolKind> kinds = {ToolKind::kBuiltin, ToolKind::kWrappedModel, ToolKind::kSynthesizedScript};
    for (int trial = 0; trial < 300; ++trial) {
      ToolLibrary lib;
      lib.tools.push_back(make_tool("generic", ToolKind::kBuiltin, {}));
      const int n = std::uniform_int_distribution<int>(1, 7)(rng);
      for (int i = 0; i < n; ++i) {
        TagSet tags;
        for (const auto& v : vocab) {
          if (std::uniform_int_distribution<int>(0, 2)(rng) == 0) tags.insert(v);
        }
        const auto kind = kinds[std::uniform_int_distribution<std::size_t>(0, 2)(rng)];
        const bool verified = std::uniform_int_distribution<int>(0, 4)(rng) != 0;
        lib.tools.push_back(make_tool("t" + std::to_string(i), kind, tags, verified));
      }
      TagSet query_tags;
      for (const auto& v : vocab) {
        if (std::uniform_int_distribution<int>(0, 1)(rng) == 0) query_tags.insert(v);
      }
      const auto t = triplet("q", "r", std::nullopt, query_tags);
      const auto choice = deterministic_select(t, lib);
      CHECK(lib.find(choice)->verified);
      CHECK(deterministic_select(t, lib) == choice);
      for (int p = 0; p < 5; ++p) {
        auto shuffled = lib;
        std::shuffle(shuffled.tools.begin(), shuffled.tools.end(), rng);
        CHECK(deterministic_select(t, shuffled) == choice);
      }
    }
  }

  TEST_CASE("property: scaling tag overlap leaves the argmax unchanged") {
    // Overlap scales by c when every tag is replaced by c distinct copies
    // on both sides; the winner must not move.
    std::mt19937 rng(43);
    const std::vector<std::string> vocab = {"a", "b", "c", "d"};
    for (int trial = 0; trial < 200; ++trial) {
      const int copies = std::uniform_int_distribution<int>(2, 4)(rng);
      auto expand = [&](const TagSet& tags) {
        TagSet out;
        for (const auto& tag : tags) {
          for (int k = 0; k < copies; ++k) out.insert(tag + "#" + std::to_string(k));
        }
        return out;
      };
      ToolLibrary lib, scaled;
      lib.tools.push_back(make_tool("generic", ToolKind::kBuiltin, {}));
      scaled.tools.push_back(lib.tools.back());
      for (int i = 0; i < 5; ++i) {
        TagSet tags;
        for (const auto& v : vocab) {
          if (std::uniform_int_distribution<int>(0, 1)(rng) == 0) tags.insert(v);
        }
        const auto kind = i % 2 ? ToolKind::kSynthesizedScript : ToolKind::kWrappedModel;
        lib.tools.push_back(make_tool("t" + std::to_string(i), kind, tags));
        scaled.tools.push_back(make_tool("t" + std::to_string(i), kind, expand(tags)));
      }
      TagSet q;
      for (const auto& v : vocab) {
        if (std::uniform_int_distribution<int>(0, 1)(rng) == 0) q.insert(v);
      }
      CHECK(deterministic_select(triplet("q", "r", std::nullopt, q), lib) ==
            deterministic_select(triplet("q", "r", std::nullopt, expand(q)), scaled));
    }
  }

  TEST_CASE("route_and_score: Select keeps the library version") {
    LibraryStore store(seeded());
    StubEndpoint endpoint;
    ToolInvoker invoker(endpoint, sandbox(), {});
    ScriptedAgent agent({"SELECT nem-math"});
    const auto r = route_and_score(triplet("2+2?", "#### 4", "4", {"math"}), store, agent, nullptr, invoker);
    CHECK(r.score.value == 1.0);
    CHECK(r.tool_used == "nem-math");
    CHECK(r.library->version == 0);
    CHECK(store.snapshot()->version == 0);
  }

  TEST_CASE("route_and_score: accepted synthesis commits and scores with the new tool") {
    LibraryStore store(seeded());
    StubEndpoint endpoint;
    ToolInvoker invoker(endpoint, sandbox(), {});
    ScriptedAgent agent({"SYNTHESIZE code_verify haiku-scoring"});
    CannedSynthesizer synth;
    synth.candidate = candidate_for("haiku-bleu", true);
    const auto t = triplet("haiku", "old pond frog", "old pond frog", {"haiku-scoring"});
    const auto r = route_and_score(t, store, agent, &synth, invoker);
    CHECK(synth.calls == 1);
    CHECK(synth.last_spec->task_label == "haiku-scoring");
    CHECK(r.tool_used == "haiku-bleu");
    CHECK(r.score.value == 1.0);
    CHECK(r.library->version == 1);
    CHECK(store.snapshot()->find("haiku-bleu")->verified);
  }

  TEST_CASE("route_and_score: rejected or failed synthesis falls back without a commit") {
    StubEndpoint endpoint;
    ToolInvoker invoker(endpoint, sandbox(), {});
    const auto t = triplet("haiku", "old pond frog", "old pond frog", {"haiku-scoring"});
    SUBCASE("rejected") {
      LibraryStore store(seeded());
      ScriptedAgent agent({"SYNTHESIZE code_verify haiku-scoring"});
      CannedSynthesizer synth;
      synth.candidate = candidate_for("haiku-bleu", false);
      const auto r = route_and_score(t, store, agent, &synth, invoker);
      CHECK(r.tool_used == "generic-rm");
      CHECK(r.decision.action == RouteAction::kSelect);
      CHECK(store.snapshot()->version == 0);
      CHECK_FALSE(store.snapshot()->contains("haiku-bleu"));
    }
    SUBCASE("throws") {
      LibraryStore store(seeded());
      ScriptedAgent agent({"SYNTHESIZE code_verify haiku-scoring"});
      CannedSynthesizer synth;
      synth.throw_error = true;
      const auto r = route_and_score(t, store, agent, &synth, invoker);
      CHECK(r.tool_used == "generic-rm");
      CHECK(store.snapshot()->version == 0);
    }
    SUBCASE("busy") {
      LibraryStore store(seeded());
      ScriptedAgent agent({"SYNTHESIZE code_verify haiku-scoring"});
      CannedSynthesizer synth;
      const auto r = route_and_score(t, store, agent, &synth, invoker);
      CHECK(r.tool_used == "generic-rm");
      CHECK(r.decision.rationale.find("busy") != std::string::npos);
    }
    SUBCASE("no synthesizer") {
      LibraryStore store(seeded());
      ScriptedAgent agent({"SYNTHESIZE code_verify haiku-scoring"});
      const auto r = route_and_score(t, store, agent, nullptr, invoker);
      CHECK(r.tool_used == "generic-rm");
    }
  }

  TEST_CASE("route_and_score: a duplicate commit reuses the existing tool") {
    LibraryStore store(seeded());
    store.commit([] {
      auto tool = candidate_for("haiku-bleu", true).tool;
      tool.verified = true;
      return tool;
    }());
    StubEndpoint endpoint;
    ToolInvoker invoker(endpoint, sandbox(), {});
    ScriptedAgent agent({"SYNTHESIZE code_verify haiku-scoring"});
    CannedSynthesizer synth;
    synth.candidate = candidate_for("haiku-bleu", true);
    const auto r = route_and_score(triplet("h", "a b", "a b", {"haiku-scoring"}), store, agent, &synth, invoker);
    CHECK(r.tool_used == "haiku-bleu");
    CHECK(store.snapshot()->version == 1);
  }

  TEST_CASE("property: gate soundness over random accept/reject sequences") {
    std::mt19937 rng(47);
    StubEndpoint endpoint;
    ToolInvoker invoker(endpoint, sandbox(), {});
    LibraryStore store(seeded());
    std::uint64_t expected_version = 0;
    for (int i = 0; i < 100; ++i) {
      const bool accept = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
      ScriptedAgent agent({"SYNTHESIZE code_verify novel-" + std::to_string(i)});
      CannedSynthesizer synth;
      synth.candidate = candidate_for("novel-" + std::to_string(i), accept);
      const auto r = route_and_score(triplet("q", "a b", "a b", {"novel"}), store, agent, &synth, invoker);
      if (accept) ++expected_version;
      CHECK(store.snapshot()->version == expected_version);
      CHECK(store.snapshot()->contains("novel-" + std::to_string(i)) == accept);
      CHECK(r.tool_used == (accept ? "novel-" + std::to_string(i) : "generic-rm"));
    }
  }

  TEST_CASE("property: routing with garbage agents is total and never mutates") {
    LibraryStore store(seeded());
    StubEndpoint endpoint;
    ToolInvoker invoker(endpoint, sandbox(), {});
    GarbageAgent agent(53);
    std::mt19937 rng(59);
    const std::vector<std::string> tags = {"math", "translation", "code", "poetry"};
    for (int i = 0; i < 300; ++i) {
      TagSet ts;
      if (std::uniform_int_distribution<int>(0, 1)(rng)) ts.insert(tags[std::uniform_int_distribution<std::size_t>(0, 3)(rng)]);
      const auto t = triplet("question " + std::to_string(i), "#### " + std::to_string(i % 7),
                             std::to_string(i % 5), ts, "s" + std::to_string(i));
      const auto r = route_and_score(t, store, agent, nullptr, invoker);
      CHECK(r.score.value >= 0.0);
      CHECK(r.score.value <= 1.0);
      CHECK(store.snapshot()->contains(r.tool_used));
    }
    CHECK(store.snapshot()->version == 0);
  }

  TEST_CASE("a failing selected tool falls back to the general builtin") {
    LibraryStore store(seeded());
    StubEndpoint endpoint;
    ToolInvoker invoker(endpoint, sandbox(), {});
    ScriptedAgent agent({"SELECT nem-math"});
    const auto t = triplet("q", "#### 4", std::string("forty-two"), {"math"});
    const auto r = route_and_score(t, store, agent, nullptr, invoker);
    CHECK(r.tool_used == "generic-rm");
    CHECK(r.decision.rationale.find("'nem-math' failed") != std::string::npos);
    try {
      score_with_tool(t, store, "nem-math", invoker, RouteDecision::select("nem-math", "override"));
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kReferenceUnparseable);
    }
  }

  TEST_CASE("execute_route honours a precomputed Select decision") {
    LibraryStore store(seeded());
    StubEndpoint endpoint;
    ToolInvoker invoker(endpoint, sandbox(), {});
    const auto r = execute_route(triplet("q", "same text", "same text"), store, store.snapshot(),
                                 RouteDecision::select("bleu2", "cached"), nullptr, invoker);
    CHECK(r.tool_used == "bleu2");
    CHECK(r.score.value == 1.0);
    CHECK(r.decision.rationale == "cached");
  }

  TEST_CASE("decisions serialize with nulls for the absent side") {
    const Json j = RouteDecision::select("nem-math", "why");
    CHECK(j["action"] == "select");
    CHECK(j["synthesis_spec"].is_null());
    const Json s = RouteDecision::synthesize({SynthesisStrategy::kCodeVerify, "x", ""}, "why");
    CHECK(s["selected"].is_null());
    CHECK(s["synthesis_spec"]["strategy"] == "code_verify");
  }
}
