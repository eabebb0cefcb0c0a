#include <doctest.h>

#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <thread>

#include "rlar/invoke.hpp"
#include "rlar/synthesis.hpp"
#include "rlar/verifiers.hpp"
#include "support/fakes.hpp"

using namespace rlar;
using rlar::testing::StubEndpoint;
using rlar::testing::triplet;

namespace {

// Straight-line BLEU-2 over pre-split tokens, written from the textbook
// definition: clipped n-gram precision, geometric mean, brevity penalty.
double bleu2_oracle(const std::vector<std::string>& cand, const std::vector<std::string>& ref) {
  if (cand.empty()) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= 2; ++n) {
    std::map<std::vector<std::string>, int> cand_counts, ref_counts;
    for (std::size_t i = 0; i + n <= cand.size(); ++i) ++cand_counts[{cand.begin() + i, cand.begin() + i + n}];
    for (std::size_t i = 0; i + n <= ref.size(); ++i) ++ref_counts[{ref.begin() + i, ref.begin() + i + n}];
    const double total = cand.size() >= n ? static_cast<double>(cand.size() - n + 1) : 0.0;
    double matches = 0;
    for (const auto& [gram, c] : cand_counts) matches += std::min(c, ref_counts[gram]);
    double p;
    if (total == 0) {
      p = ref.size() >= n ? kBleuSmoothingEpsilon : 1.0;
    } else {
      p = (matches > 0 ? matches : kBleuSmoothingEpsilon) / total;
    }
    log_sum += std::log(p);
  }
  const double bp = std::min(1.0, std::exp(1.0 - static_cast<double>(ref.size()) / cand.size()));
  return bp * std::exp(log_sum / 2.0);
}

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

std::vector<std::string> random_words(std::mt19937& rng, std::size_t n, int vocab) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back("w" + std::to_string(std::uniform_int_distribution<int>(0, vocab - 1)(rng)));
  }
  return out;
}

ProcessSandbox& shared_sandbox() {
  static ProcessSandbox sandbox;
  return sandbox;
}

}  // namespace

TEST_SUITE("verifiers") {
  TEST_CASE("extract_answer markers") {
    auto a = extract_answer("...so #### 42", ExpectedMarker::kHash4);
    CHECK(a.source_marker == AnswerMarker::kHash4);
    REQUIRE(a.numeric_value);
    CHECK(*a.numeric_value == 42.0);

    auto b = extract_answer("answer is \\boxed{\\frac{1}{2}}", ExpectedMarker::kBoxed);
    CHECK(b.source_marker == AnswerMarker::kBoxed);
    REQUIRE(b.numeric_value);
    CHECK(*b.numeric_value == doctest::Approx(1.0 / 2.0));

    auto c = extract_answer("\\boxed{7}", ExpectedMarker::kHash4);
    CHECK(c.source_marker == AnswerMarker::kNone);
    CHECK_FALSE(c.numeric_value);

    auto d = extract_answer("\\boxed{7}", ExpectedMarker::kAny);
    CHECK(d.source_marker == AnswerMarker::kBoxed);
    CHECK(*d.numeric_value == 7.0);

    auto e = extract_answer("#### 1,234.5", ExpectedMarker::kHash4);
    CHECK(*e.numeric_value == doctest::Approx(1234.5));
  }

  TEST_CASE("parse_numeric against an a/b oracle") {
    std::mt19937 rng(3);
    for (int i = 0; i < 200; ++i) {
      const int a = std::uniform_int_distribution<int>(-500, 500)(rng);
      const int b = std::uniform_int_distribution<int>(1, 97)(rng);
      const double expect = static_cast<double>(a) / b;
      const auto slash = parse_numeric(std::to_string(a) + "/" + std::to_string(b));
      const auto frac = parse_numeric("\\frac{" + std::to_string(a) + "}{" + std::to_string(b) + "}");
      REQUIRE(slash);
      REQUIRE(frac);
      CHECK(*slash == doctest::Approx(expect));
      CHECK(*frac == doctest::Approx(expect));
    }
    CHECK_FALSE(parse_numeric("seven"));
    CHECK_FALSE(parse_numeric("1/0"));
  }

  TEST_CASE("numeric tolerance switches to relative above one") {
    CHECK(numeric_match(0.5 + 5e-7, 0.5));
    CHECK_FALSE(numeric_match(0.5 + 2e-6, 0.5));
    CHECK(numeric_match(1e6 + 0.5, 1e6));
    CHECK_FALSE(numeric_match(1e6 + 2.0, 1e6));
  }

  TEST_CASE("reward_math examples") {
    CHECK(reward_math(triplet("q", "#### 42", "42"), ExpectedMarker::kHash4).value == 1.0);
    CHECK(reward_math(triplet("q", "\\boxed{42}", "42"), ExpectedMarker::kHash4).value == 0.0);
    CHECK(reward_math(triplet("q", "#### 41", "42"), ExpectedMarker::kHash4).value == 0.0);
    CHECK(reward_math(triplet("q", "\\boxed{42}", "42"), ExpectedMarker::kHash4, MarkerMode::kLenient).value == 1.0);
    try {
      reward_math(triplet("q", "#### 1", "forty-two"), ExpectedMarker::kHash4);
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kReferenceUnparseable);
    }
    try {
      reward_math(triplet("q", "#### 1", std::nullopt), ExpectedMarker::kHash4);
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kReferenceUnparseable);
    }
  }

  TEST_CASE("property: boxed-only answers never pass the strict hash4 check") {
    std::mt19937 rng(5);
    for (int i = 0; i < 300; ++i) {
      const int v = std::uniform_int_distribution<int>(-10000, 10000)(rng);
      const std::string value = std::to_string(v);
      const std::string prose = "Working it out step " + std::to_string(i) + ". ";
      CHECK(reward_math(triplet("q", prose + "\\boxed{" + value + "}", value), ExpectedMarker::kHash4).value == 0.0);
      CHECK(reward_math(triplet("q", prose + "#### " + value, value), ExpectedMarker::kHash4).value == 1.0);
    }
  }

  TEST_CASE("property: reward_math is binary") {
    std::mt19937 rng(9);
    const std::vector<std::string> shapes = {"#### ", "\\boxed{", "answer ", ""};
    for (int i = 0; i < 200; ++i) {
      const auto& shape = shapes[std::uniform_int_distribution<std::size_t>(0, shapes.size() - 1)(rng)];
      const int got = std::uniform_int_distribution<int>(0, 5)(rng);
      std::string resp = shape + std::to_string(got) + (shape == "\\boxed{" ? "}" : "");
      const double s = reward_math(triplet("q", resp, "3"), ExpectedMarker::kAny).value;
      CHECK((s == 0.0 || s == 1.0));
    }
  }

  TEST_CASE("bleu2 examples") {
    CHECK(bleu2("the cat sat", "the cat sat").value == 1.0);
    const double expected = std::exp(-1.5);
    CHECK(bleu2("the cat", "the cat sat on mat").value == doctest::Approx(expected).epsilon(1e-12));
    CHECK(bleu2("the cat", "the cat sat on mat").value == doctest::Approx(0.22313).epsilon(1e-4));
    CHECK(bleu2("alpha beta gamma", "delta epsilon zeta").value < 1e-8);
    CHECK(bleu2("", "anything").value == 0.0);
  }

  TEST_CASE("property: bleu2 matches the textbook oracle") {
    std::mt19937 rng(13);
    for (int i = 0; i < 400; ++i) {
      const auto cand = random_words(rng, std::uniform_int_distribution<std::size_t>(1, 12)(rng), 6);
      const auto ref = random_words(rng, std::uniform_int_distribution<std::size_t>(1, 12)(rng), 6);
      CHECK(bleu2(join(cand), join(ref)).value == doctest::Approx(bleu2_oracle(cand, ref)).epsilon(1e-12));
    }
  }

  TEST_CASE("property: bleu2(x, x) = 1 and replacement never helps") {
    std::mt19937 rng(17);
    for (int i = 0; i < 200; ++i) {
      auto words = random_words(rng, std::uniform_int_distribution<std::size_t>(1, 15)(rng), 8);
      const auto ref = join(words);
      CHECK(bleu2(ref, ref).value == doctest::Approx(1.0).epsilon(1e-12));
      double prev = bleu2(ref, ref).value;
      std::vector<std::size_t> order(words.size());
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t k = 0; k < order.size(); ++k) {
        words[order[k]] = "oov" + std::to_string(k);
        const double now = bleu2(join(words), ref).value;
        CHECK(now <= prev + 1e-15);
        prev = now;
      }
    }
  }

  TEST_CASE("property: bleu2 stays in [0, 1]") {
    std::mt19937 rng(19);
    for (int i = 0; i < 300; ++i) {
      const auto c = random_words(rng, std::uniform_int_distribution<std::size_t>(0, 10)(rng), 4);
      const auto r = random_words(rng, std::uniform_int_distribution<std::size_t>(0, 10)(rng), 4);
      const double s = bleu2(join(c), join(r)).value;
      CHECK(s >= 0.0);
      CHECK(s <= 1.0);
    }
  }

  TEST_CASE("hybrid combination examples") {
    CHECK(combine_hybrid(1.0, 1.0, 0.5, 0.5) == 1.0);
    CHECK(combine_hybrid(0.6, normalize_rm_score(Score::logit(0.0)), 0.5, 0.5) == 0.55);
    CHECK(combine_hybrid(0.37, 0.9, 1.0, 0.0) == 0.37);
    CHECK_THROWS_AS(combine_hybrid(0.5, 0.5, 0.7, 0.7), Error);
    CHECK_THROWS_AS(combine_hybrid(0.5, 0.5, -0.5, 1.5), Error);
  }

  TEST_CASE("normalize_rm_score per scale") {
    CHECK(normalize_rm_score(Score::logit(0.0)) == 0.5);
    CHECK(normalize_rm_score(Score::zero_ten(7.0)) == doctest::Approx(0.7));
    CHECK(normalize_rm_score(Score::unit(0.25)) == 0.25);
  }

  TEST_CASE("property: hybrid is affine in BLEU with slope w1") {
    std::mt19937 rng(23);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 500; ++i) {
      const double w1 = u(rng);
      const double w2 = 1.0 - w1;
      const double bleu = u(rng) * 0.5;
      const double delta = u(rng) * 0.5;
      const double rm = u(rng);
      CHECK(combine_hybrid(bleu + delta, rm, w1, w2) - combine_hybrid(bleu, rm, w1, w2) ==
            doctest::Approx(w1 * delta).epsilon(1e-12));
    }
  }

  TEST_CASE("hybrid_translation through an endpoint tool") {
    StubEndpoint endpoint;
    endpoint.fixed_score = 0.0;
    ProcessSandbox& sandbox = shared_sandbox();
    ToolInvoker invoker(endpoint, sandbox, {});
    RewardTool rm{"seed-x-rm", ToolKind::kWrappedModel, "rm", {"translation"},
                  Backend{BackendType::kEndpoint, "http://127.0.0.1:9/rm"}, true, {}, "test"};
    // "the cat" against itself plus a 5-token reference: BLEU = e^-1.5.
    const auto t = triplet("translate", "the cat", "the cat sat on mat");
    const double bleu = std::exp(-1.5);
    CHECK(hybrid_translation(t, rm, 0.5, 0.5, invoker).value == doctest::Approx(0.5 * bleu + 0.25));
    CHECK(hybrid_translation(t, rm, 1.0, 0.0, invoker).value == bleu2("the cat", "the cat sat on mat").value);
    endpoint.up = false;
    CHECK_THROWS_AS(hybrid_translation(t, rm, 0.5, 0.5, invoker), Error);
  }

  TEST_CASE("think_format_gate examples") {
    CHECK(think_format_gate("<think>x</think> #### 3", Score::unit(1.0)).value == 1.0);
    CHECK(think_format_gate("no tags #### 3", Score::unit(1.0)).value == 0.0);
    CHECK(think_format_gate("<think>unclosed #### 3", Score::unit(0.7)).value == 0.0);
    CHECK(think_format_gate("</think>x<think> #### 3", Score::unit(1.0)).value == 0.0);
    CHECK(think_format_gate("<think>a</think><think>b</think> ok", Score::unit(1.0)).value == 0.0);
    CHECK(think_format_gate("<think>a</think>   ", Score::unit(1.0)).value == 0.0);
  }

  TEST_CASE("property: the think gate is absorbing at zero") {
    std::mt19937 rng(29);
    const std::vector<std::string> parts = {"<think>", "</think>", "x", " ", "#### 3", "\n"};
    for (int i = 0; i < 500; ++i) {
      std::string r;
      const int n = std::uniform_int_distribution<int>(0, 8)(rng);
      for (int k = 0; k < n; ++k) r += parts[std::uniform_int_distribution<std::size_t>(0, parts.size() - 1)(rng)];
      CHECK(think_format_gate(r, Score::unit(0.0)).value == 0.0);
      const double gated = think_format_gate(r, Score::unit(0.6)).value;
      CHECK((gated == 0.0 || gated == 0.6));
    }
  }

  TEST_CASE("extract_last_code_block takes the final block") {
    const auto code = extract_last_code_block("```python\nprint(1)\n```\ntext\n```py\nprint(2)\n```");
    REQUIRE(code);
    CHECK(*code == "print(2)\n");
    CHECK_FALSE(extract_last_code_block("no code"));
  }

  TEST_CASE("length tracking") {
    const auto stats = track_lengths({{"a", "w w w w w w w w w w"},
                                      {"b", "w w w w w w w w w w w w w w w w w w w w"}});
    CHECK(stats.count == 2);
    CHECK(stats.mean_length == 15.0);
    CHECK(stats.per_source.at("a").mean_length == 10.0);
    const auto empty = track_lengths({});
    CHECK(empty.count == 0);
    CHECK(empty.mean_length == 0.0);

    LengthStats current, baseline;
    current.mean_length = 26;
    baseline.mean_length = 20;
    const auto v = check_verbosity(current, baseline);
    REQUIRE(v);
    CHECK(v->ratio == doctest::Approx(1.3));
    CHECK(v->flagged);
    current.mean_length = 25;
    CHECK_FALSE(check_verbosity(current, baseline)->flagged);
    baseline.mean_length = 0;
    CHECK_FALSE(check_verbosity(current, baseline));
  }

  TEST_CASE("LengthTracker accumulates concurrently") {
    LengthTracker tracker;
    std::vector<std::thread> threads;
    for (int t = 0; t < 4; ++t) {
      threads.emplace_back([&tracker, t] {
        for (int i = 0; i < 250; ++i) tracker.add("s" + std::to_string(t), "a b c d");
      });
    }
    for (auto& th : threads) th.join();
    const auto stats = tracker.stats();
    CHECK(stats.count == 1000);
    CHECK(stats.mean_length == 4.0);
    CHECK(stats.per_source.size() == 4);
  }

  TEST_CASE("builtin invocation is deterministic") {
    StubEndpoint endpoint;
    ToolInvoker invoker(endpoint, shared_sandbox(), {});
    for (const auto& tool : default_seed_tools()) {
      const auto t = triplet("what is six times seven", "#### 42 is the answer", "42");
      const auto a = invoker.invoke(tool, t);
      const auto b = invoker.invoke(tool, t);
      CHECK(a == b);
    }
    const auto nem = default_seed_tools()[1];
    CHECK(invoker.invoke(nem, triplet("q", "#### 42", "42")).value == 1.0);
    const auto bleu = default_seed_tools()[2];
    CHECK(invoker.invoke(bleu, triplet("q", "same words here", "same words here")).value == 1.0);
  }

  TEST_CASE("wrapped tool with the sidecar offline is unavailable") {
    OfflineEndpointClient offline;
    ToolInvoker invoker(offline, shared_sandbox(), {});
    RewardTool rm{"rm", ToolKind::kWrappedModel, "rm", {}, Backend{BackendType::kEndpoint, "http://127.0.0.1:9"},
                  true, {}, "test"};
    try {
      invoker.invoke(rm, triplet("q", "r", std::nullopt));
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kBackendUnavailable);
    }
    rm.verified = false;
    try {
      invoker.invoke(rm, triplet("q", "r", std::nullopt));
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kUnverifiedTool);
    }
  }
}

TEST_SUITE("sandbox") {
  TEST_CASE("request line is one JSON object") {
    const auto line = sandbox_request_line(triplet("p\n", "r", std::nullopt));
    CHECK(line.find('\n') == line.size() - 1);
    const auto j = Json::parse(line);
    CHECK(j["prompt"] == "p\n");
    CHECK(j["reference"].is_null());
  }

  TEST_CASE("math template scores the smoke pair") {
    const auto script = instantiate_template(ScriptTemplate::kMathAnswer);
    const auto s = run_sandbox(script, triplet("q", "#### 7", "7"), kScriptTimeout, shared_sandbox());
    CHECK(s.value == 1.0);
    CHECK(s.scale == ScoreScale::kUnitInterval);
  }

  TEST_CASE("non-finite output is a script error") {
    SynthesizedScript script{"compute_nan", "def compute_nan(p, c, r):\n    return float('nan')\n", {}};
    try {
      run_sandbox(script, triplet("q", "r", "x"), kScriptTimeout, shared_sandbox());
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kScriptError);
    }
    SynthesizedScript text{"compute_text", "def compute_text(p, c, r):\n    return 'nan'\n", {}};
    try {
      run_sandbox(text, triplet("q", "r", "x"), kScriptTimeout, shared_sandbox());
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kScriptError);
    }
  }

  TEST_CASE("a hung script times out") {
    SynthesizedScript script{"compute_sleep",
                             "import time\ndef compute_sleep(p, c, r):\n    while True:\n        time.sleep(1)\n", {}};
    const auto start = std::chrono::steady_clock::now();
    try {
      run_sandbox(script, triplet("q", "r", "x"), std::chrono::milliseconds(1000), shared_sandbox());
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kTimeout);
    }
    CHECK(std::chrono::steady_clock::now() - start < std::chrono::milliseconds(2000));
  }

  TEST_CASE("run_sandbox is deterministic and reports scale") {
    const auto script = instantiate_template(ScriptTemplate::kTextMetric);
    const auto t = triplet("q", "the cat sat", "the cat sat on the mat");
    const auto a = run_sandbox(script, t, kScriptTimeout, shared_sandbox());
    const auto b = run_sandbox(script, t, kScriptTimeout, shared_sandbox());
    CHECK(a == b);
    SynthesizedScript logit{"compute_logit", "def compute_logit(p, c, r):\n    return -2.5\n", {}};
    const auto s = run_sandbox(logit, t, kScriptTimeout, shared_sandbox());
    CHECK(s.scale == ScoreScale::kUnboundedLogit);
    CHECK(s.raw == -2.5);
  }

  TEST_CASE("dual route: C++ and Python BLEU-2 agree") {
    const auto script = instantiate_template(ScriptTemplate::kTextMetric);
    std::mt19937 rng(31);
    std::vector<std::pair<std::string, std::string>> cases = {
        {"the cat", "the cat sat on mat"},
        {"Hello, world!", "hello world"},
        {"a b c d", "a b c d"},
        {"x", "y"},
    };
    for (int i = 0; i < 6; ++i) {
      cases.emplace_back(join(random_words(rng, 1 + i, 5)), join(random_words(rng, 3 + i, 5)));
    }
    for (const auto& [c, r] : cases) {
      const double native = bleu2(c, r).value;
      const double scripted = run_sandbox(script, triplet("q", c, r), kScriptTimeout, shared_sandbox()).value;
      CHECK(scripted == doctest::Approx(native).epsilon(1e-12));
    }
  }

  TEST_CASE("dual route: C++ and Python numeric match agree") {
    const auto script = instantiate_template(ScriptTemplate::kMathAnswer);
    const std::vector<std::pair<std::string, std::string>> cases = {
        {"#### 42", "42"}, {"#### 41", "42"}, {"\\boxed{\\frac{1}{2}}", "0.5"},
        {"#### 1,000", "1000"}, {"#### $12", "12"}, {"no answer", "3"}};
    for (const auto& [resp, ref] : cases) {
      const double native = reward_math(triplet("q", resp, ref), ExpectedMarker::kAny, MarkerMode::kLenient).value;
      const double scripted = run_sandbox(script, triplet("q", resp, ref), kScriptTimeout, shared_sandbox()).value;
      CHECK_MESSAGE(scripted == native, resp);
    }
  }

  TEST_CASE("reward_code grading") {
    UnitTestSuite suite;
    suite.program_text = "import sys\nprint(double(int(sys.stdin.read())))";
    suite.cases = {{"1", "2"}, {"5", "10"}, {"-3", "-6"}};
    suite.timeout = std::chrono::milliseconds(2000);
    auto grade = [&](std::string body) {
      return reward_code(triplet("write double", "```python\n" + body + "\n```", std::nullopt), suite, shared_sandbox());
    };
    const auto ok = grade("def double(x):\n    return 2 * x");
    CHECK(ok.score.value == 1.0);
    CHECK(ok.cases_passed == 3);
    const auto partial = grade("def double(x):\n    return 2 * x if x > 0 else x");
    CHECK(partial.score.value == 0.0);
    CHECK(partial.cases_passed == 2);
    const auto loop = grade("def double(x):\n    while True:\n        pass");
    CHECK(loop.score.value == 0.0);
    CHECK(loop.timed_out);
    const auto none = reward_code(triplet("q", "no code here", std::nullopt), suite, shared_sandbox());
    CHECK(none.score.value == 0.0);
    UnitTestSuite empty;
    CHECK_THROWS_AS(reward_code(triplet("q", "x", std::nullopt), empty, shared_sandbox()), Error);
  }

  TEST_CASE("output normalization") {
    CHECK(normalize_program_output("a  \nb\t\n\n\n") == "a\nb");
    CHECK(normalize_program_output("") == "");
  }

  TEST_CASE("missing interpreter is reported as unavailable") {
    ProcessSandbox::Options opts;
    opts.interpreter = {"/nonexistent/python-binary"};
    ProcessSandbox broken(opts);
    CHECK_FALSE(broken.available());
    SynthesizedScript script{"compute_x", "def compute_x(p, c, r):\n    return 1.0\n", {}};
    try {
      run_sandbox(script, triplet("q", "r", "x"), kScriptTimeout, broken);
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kSandboxUnavailable);
    }
  }
}
