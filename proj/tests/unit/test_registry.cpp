#include <doctest.h>

#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include "rlar/registry.hpp"
#include "rlar/serialization.hpp"
#include "support/fakes.hpp"

using namespace rlar;
using rlar::testing::ScratchDir;

namespace {

RewardTool builtin_tool(std::string name, TagSet tags = {}, std::string key = "bleu2") {
  RewardTool t;
  t.name = std::move(name);
  t.kind = ToolKind::kBuiltin;
  t.description = "test tool";
  t.task_tags = std::move(tags);
  t.backend = Backend{BackendType::kBuiltin, std::move(key)};
  t.verified = true;
  t.created_at = parse_rfc3339("2026-01-02T03:04:05Z");
  t.provenance = "test";
  return t;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

TEST_SUITE("types") {
  TEST_CASE("tool names are lowercase kebab-case up to 64 characters") {
    CHECK(is_valid_tool_name("nem-math"));
    CHECK(is_valid_tool_name("bleu2"));
    CHECK_FALSE(is_valid_tool_name(""));
    CHECK_FALSE(is_valid_tool_name("Nem-Math"));
    CHECK_FALSE(is_valid_tool_name("-lead"));
    CHECK_FALSE(is_valid_tool_name("trail-"));
    CHECK_FALSE(is_valid_tool_name("double--dash"));
    CHECK_FALSE(is_valid_tool_name("under_score"));
    CHECK(is_valid_tool_name(std::string(64, 'a')));
    CHECK_FALSE(is_valid_tool_name(std::string(65, 'a')));
  }

  TEST_CASE("to_tool_name produces valid names from free text") {
    CHECK(to_tool_name("Translation Quality (FR)") == "translation-quality-fr");
    CHECK(to_tool_name("  Seed-X-RM-7B ") == "seed-x-rm-7b");
    std::mt19937 rng(7);
    for (int i = 0; i < 500; ++i) {
      std::string s;
      const int len = std::uniform_int_distribution<int>(1, 100)(rng);
      for (int j = 0; j < len; ++j) s.push_back(static_cast<char>(std::uniform_int_distribution<int>(32, 126)(rng)));
      const auto name = to_tool_name(s);
      if (!name.empty()) CHECK(is_valid_tool_name(name));
    }
  }

  TEST_CASE("rfc3339 round trip and offsets") {
    const auto ts = parse_rfc3339("2026-10-18T12:34:56Z");
    CHECK(format_rfc3339(ts) == "2026-10-18T12:34:56Z");
    CHECK(parse_rfc3339("2026-10-18T14:34:56+02:00") == ts);
    CHECK(parse_rfc3339("2026-10-18T12:34:56.789Z") == ts);
    CHECK_THROWS_AS(parse_rfc3339("yesterday"), Error);
  }

  TEST_CASE("score scales") {
    CHECK(Score::unit(0.5).normalized_0_100() == doctest::Approx(50.0));
    CHECK(Score::zero_ten(7).normalized_0_100() == doctest::Approx(70.0));
    CHECK(Score::logit(0.0).normalized_0_100() == doctest::Approx(50.0));
    CHECK(logistic(0.0) == 0.5);
    CHECK_THROWS_AS(Score::unit(1.5), Error);
    CHECK_THROWS_AS(Score::unit(-0.1), Error);
  }

  TEST_CASE("triplet validation and JSON round trip") {
    ContextTriplet t{"q", "r", std::nullopt, {"math"}, "s1"};
    CHECK_NOTHROW(t.validate());
    const Json j = t;
    CHECK(j["reference"].is_null());
    CHECK(j.get<ContextTriplet>() == t);
    t.response.clear();
    CHECK_THROWS_AS(t.validate(), Error);
  }

  TEST_CASE("tool JSON round trip preserves every field") {
    const auto tool = builtin_tool("x-tool", {"a", "b"});
    CHECK(Json(tool).get<RewardTool>() == tool);
  }

  TEST_CASE("backend type must match tool kind") {
    auto tool = builtin_tool("bad");
    tool.backend.type = BackendType::kEndpoint;
    CHECK_THROWS_AS(validate_tool(tool), Error);
  }
}

TEST_SUITE("registry") {
  TEST_CASE("init_library rejects empty, unverified and duplicate seeds") {
    std::vector<RewardTool> none;
    CHECK_THROWS_WITH_AS(init_library(none, ""), doctest::Contains("empty"), Error);
    try {
      init_library(none, "");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kEmptySeedSet);
    }
    auto unverified = builtin_tool("u");
    unverified.verified = false;
    std::vector<RewardTool> seeds{unverified};
    try {
      init_library(seeds, "");
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kUnverifiedTool);
    }
    std::vector<RewardTool> dup{builtin_tool("a"), builtin_tool("a")};
    try {
      init_library(dup, "");
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kDuplicateName);
    }
  }

  TEST_CASE("commit appends at version + 1") {
    std::vector<RewardTool> seeds{builtin_tool("a"), builtin_tool("b"), builtin_tool("c")};
    ToolLibrary lib = init_library(seeds, "");
    lib.version = 3;
    const auto next = commit_tool(lib, builtin_tool("bleu2-fr", {"translation"}));
    CHECK(next.version == 4);
    CHECK(next.contains("bleu2-fr"));
    CHECK(lib.version == 3);
    CHECK_FALSE(lib.contains("bleu2-fr"));
  }

  TEST_CASE("commit rejects unverified tools and duplicate names") {
    std::vector<RewardTool> seeds{builtin_tool("a")};
    const ToolLibrary lib = init_library(seeds, "");
    auto tool = builtin_tool("new");
    tool.verified = false;
    try {
      commit_tool(lib, tool);
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kUnverifiedTool);
    }
    try {
      commit_tool(lib, builtin_tool("a"));
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kDuplicateName);
    }
  }

  TEST_CASE("three commits keep prior manifest entries byte-identical") {
    ScratchDir dir;
    const auto manifest = dir / "manifest.json";
    std::vector<RewardTool> seeds{builtin_tool("seed")};
    ToolLibrary lib = init_library(seeds, manifest);
    const Json v0 = parse_json(slurp(manifest), "manifest");
    for (int i = 1; i <= 3; ++i) lib = commit_tool(lib, builtin_tool("t" + std::to_string(i)));
    CHECK(lib.version == 3);
    CHECK(lib.tools.size() == 4);
    const Json v3 = parse_json(slurp(manifest), "manifest");
    CHECK(v3["tools"][0].dump() == v0["tools"][0].dump());
    CHECK(load_library(manifest) == lib);
  }

  TEST_CASE("lookup finds tools from earlier commits") {
    std::vector<RewardTool> seeds = default_seed_tools();
    ToolLibrary lib = init_library(seeds, "");
    lib = commit_tool(lib, builtin_tool("first"));
    lib = commit_tool(lib, builtin_tool("second"));
    REQUIRE(lookup(lib, "first"));
    CHECK(lookup(lib, "first")->name == "first");
    CHECK(lookup(lib, "nem-math")->name == "nem-math");
    CHECK_FALSE(lookup(lib, "missing"));
  }

  TEST_CASE("default seeds include a general-purpose builtin") {
    const auto seeds = default_seed_tools();
    CHECK(std::any_of(seeds.begin(), seeds.end(), is_general_purpose));
    for (const auto& s : seeds) CHECK(s.verified);
  }

  TEST_CASE("corrupt manifests are reported") {
    ScratchDir dir;
    const auto path = dir / "manifest.json";
    {
      std::ofstream(path) << "{not json";
    }
    try {
      load_library(path);
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kManifestCorrupt);
    }
    {
      std::ofstream(path) << R"({"version": 0, "tools": [{"name": "x"}]})";
    }
    try {
      load_library(path);
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kManifestCorrupt);
    }
    try {
      load_library(dir / "absent.json");
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kPersistenceFailure);
    }
  }

  TEST_CASE("property: append-only growth and manifest round trip") {
    std::mt19937 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
      ScratchDir dir;
      std::vector<RewardTool> seeds = default_seed_tools();
      ToolLibrary lib = init_library(seeds, dir / "m.json");
      std::vector<ToolLibrary> history{lib};
      const int commits = std::uniform_int_distribution<int>(0, 8)(rng);
      for (int i = 0; i < commits; ++i) {
        lib = commit_tool(lib, builtin_tool("tool-" + std::to_string(trial) + "-" + std::to_string(i),
                                            {"tag" + std::to_string(i % 3)}));
        history.push_back(lib);
      }
      for (std::size_t n = 0; n < history.size(); ++n) {
        for (std::size_t m = 0; m <= n; ++m) {
          for (const auto& tool : history[m].tools) {
            const auto* later = history[n].find(tool.name);
            REQUIRE(later != nullptr);
            CHECK(*later == tool);
          }
        }
      }
      CHECK(load_library(dir / "m.json") == lib);
    }
  }

  TEST_CASE("store readers see whole versions during concurrent commits") {
    std::vector<RewardTool> seeds = default_seed_tools();
    LibraryStore store(init_library(seeds, ""));
    std::atomic<bool> done{false};
    std::atomic<int> bad{0};
    std::thread reader([&] {
      while (!done) {
        const auto snap = store.snapshot();
        if (snap->tools.size() != 3 + snap->version) ++bad;
      }
    });
    std::vector<std::thread> writers;
    for (int w = 0; w < 4; ++w) {
      writers.emplace_back([&, w] {
        for (int i = 0; i < 25; ++i) store.commit(builtin_tool("w" + std::to_string(w) + "-" + std::to_string(i)));
      });
    }
    for (auto& t : writers) t.join();
    done = true;
    reader.join();
    CHECK(bad == 0);
    CHECK(store.snapshot()->version == 100);
  }
}
