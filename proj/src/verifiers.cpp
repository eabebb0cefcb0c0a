#include "rlar/verifiers.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <regex>

#include "rlar/error.hpp"
#include "rlar/invoke.hpp"

namespace rlar {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

bool starts_with(std::string_view s, std::string_view prefix) {
  return s.substr(0, prefix.size()) == prefix;
}

// Returns the content of the brace group opening at s[open] == '{' and the
// index one past its closing brace.
std::optional<std::pair<std::string_view, std::size_t>> brace_group(std::string_view s,
                                                                    std::size_t open) {
  if (open >= s.size() || s[open] != '{') return std::nullopt;
  int depth = 0;
  for (std::size_t i = open; i < s.size(); ++i) {
    if (s[i] == '{') {
      ++depth;
    } else if (s[i] == '}') {
      if (--depth == 0) return std::make_pair(s.substr(open + 1, i - open - 1), i + 1);
    }
  }
  return std::nullopt;
}

std::optional<double> parse_plain_number(std::string_view s) {
  static const std::regex kNumber(R"(^[-+]?(\d+(\.\d*)?|\.\d+)([eE][-+]?\d+)?$)");
  const std::string str(s);
  if (!std::regex_match(str, kNumber)) return std::nullopt;
  const double v = std::strtod(str.c_str(), nullptr);
  if (!std::isfinite(v)) return std::nullopt;
  return v;
}

std::optional<double> parse_fraction_command(std::string_view s) {
  for (std::string_view cmd : {"\\dfrac", "\\tfrac", "\\frac"}) {
    if (!starts_with(s, cmd)) continue;
    auto num = brace_group(s, cmd.size());
    if (!num) return std::nullopt;
    auto den = brace_group(s, num->second);
    if (!den || den->second != s.size()) return std::nullopt;
    auto a = parse_numeric(num->first);
    auto b = parse_numeric(den->first);
    if (!a || !b || *b == 0.0) return std::nullopt;
    return *a / *b;
  }
  return std::nullopt;
}

}  // namespace

std::string_view to_string(AnswerMarker marker) {
  switch (marker) {
    case AnswerMarker::kHash4: return "hash4";
    case AnswerMarker::kBoxed: return "boxed";
    case AnswerMarker::kNone: return "none";
  }
  return "none";
}

std::string_view to_string(ExpectedMarker marker) {
  switch (marker) {
    case ExpectedMarker::kHash4: return "hash4";
    case ExpectedMarker::kBoxed: return "boxed";
    case ExpectedMarker::kAny: return "any";
  }
  return "any";
}

ExpectedMarker parse_expected_marker(std::string_view text) {
  if (text == "hash4") return ExpectedMarker::kHash4;
  if (text == "boxed") return ExpectedMarker::kBoxed;
  if (text == "any") return ExpectedMarker::kAny;
  fail(ErrorCode::kInvalidArgument, "unknown answer marker: " + std::string(text));
}

std::optional<double> parse_numeric(std::string_view text) {
  std::string s;
  s.reserve(text.size());
  const std::string_view trimmed = trim(text);
  for (std::size_t i = 0; i < trimmed.size(); ++i) {
    const char c = trimmed[i];
    if (is_space(c) || c == ',' || c == '$') continue;
    if (c == '\\' && i + 1 < trimmed.size() && (trimmed[i + 1] == '!' || trimmed[i + 1] == ',')) {
      ++i;
      continue;
    }
    s.push_back(c);
  }
  while (!s.empty() && s.back() == '.') s.pop_back();
  if (s.empty()) return std::nullopt;

  bool negative = false;
  std::string_view body = s;
  if (body.front() == '-' && body.size() > 1 && body[1] == '\\') {
    negative = true;
    body.remove_prefix(1);
  }
  if (body.front() == '\\') {
    auto v = parse_fraction_command(body);
    if (v && negative) return -*v;
    return v;
  }
  if (const auto slash = body.find('/'); slash != std::string_view::npos) {
    auto a = parse_plain_number(body.substr(0, slash));
    auto b = parse_plain_number(body.substr(slash + 1));
    if (!a || !b || *b == 0.0) return std::nullopt;
    return *a / *b;
  }
  return parse_plain_number(body);
}

namespace {

ExtractedAnswer extract_hash4(std::string_view response) {
  const auto pos = response.rfind("####");
  if (pos == std::string_view::npos) return {};
  std::string_view rest = response.substr(pos + 4);
  rest = rest.substr(0, rest.find('\n'));
  std::string line;
  for (char c : rest) {
    if (c != '$') line.push_back(c);
  }
  static const std::regex kToken(R"([-+]?(\d[\d,]*(\.\d+)?(\s*/\s*\d+)?|\.\d+))");
  std::smatch m;
  if (!std::regex_search(line, m, kToken)) return {};
  auto value = parse_numeric(m.str(0));
  if (!value) return {};
  return ExtractedAnswer{value, AnswerMarker::kHash4, std::string(trim(rest))};
}

ExtractedAnswer extract_boxed(std::string_view response) {
  constexpr std::string_view kBoxed = "\\boxed{";
  const auto pos = response.rfind(kBoxed);
  if (pos == std::string_view::npos) return {};
  auto group = brace_group(response, pos + kBoxed.size() - 1);
  if (!group) return {};
  auto value = parse_numeric(group->first);
  if (!value) return {};
  return ExtractedAnswer{value, AnswerMarker::kBoxed, std::string(group->first)};
}

}  // namespace

ExtractedAnswer extract_answer(std::string_view response, ExpectedMarker expected) {
  switch (expected) {
    case ExpectedMarker::kHash4: return extract_hash4(response);
    case ExpectedMarker::kBoxed: return extract_boxed(response);
    case ExpectedMarker::kAny: {
      auto hash4 = extract_hash4(response);
      if (hash4.source_marker != AnswerMarker::kNone) return hash4;
      return extract_boxed(response);
    }
  }
  return {};
}

bool numeric_match(double got, double ref) {
  constexpr double kTolerance = 1e-6;
  const double diff = std::fabs(got - ref);
  if (std::fabs(ref) > 1.0) return diff <= kTolerance * std::fabs(ref);
  return diff <= kTolerance;
}

Score reward_math(const ContextTriplet& t, ExpectedMarker expected, MarkerMode mode) {
  if (!t.reference) fail(ErrorCode::kReferenceUnparseable, "math reward needs a reference");
  auto ref = parse_numeric(*t.reference);
  if (!ref) ref = extract_answer(*t.reference, ExpectedMarker::kAny).numeric_value;
  if (!ref) {
    fail(ErrorCode::kReferenceUnparseable, "reference is not numeric: " + *t.reference);
  }
  const ExpectedMarker marker = mode == MarkerMode::kStrict ? expected : ExpectedMarker::kAny;
  const auto answer = extract_answer(t.response, marker);
  if (!answer.numeric_value) return Score::unit(0.0);
  return Score::unit(numeric_match(*answer.numeric_value, *ref) ? 1.0 : 0.0);
}

std::vector<std::string> metric_tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) tokens.push_back(std::move(current));
    current.clear();
  };
  for (char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isspace(u)) {
      flush();
    } else if (u < 0x80 && std::ispunct(u)) {
      flush();
      tokens.emplace_back(1, c);
    } else {
      current.push_back(u < 0x80 ? static_cast<char>(std::tolower(u)) : c);
    }
  }
  flush();
  return tokens;
}

namespace {

std::map<std::string, int> ngram_counts(const std::vector<std::string>& tokens, std::size_t n) {
  std::map<std::string, int> counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string key = tokens[i];
    for (std::size_t k = 1; k < n; ++k) {
      key.push_back('\x1f');
      key += tokens[i + k];
    }
    ++counts[key];
  }
  return counts;
}

std::size_t clipped_matches(const std::map<std::string, int>& cand,
                            const std::map<std::string, int>& ref) {
  std::size_t matches = 0;
  for (const auto& [gram, count] : cand) {
    if (auto it = ref.find(gram); it != ref.end()) {
      matches += static_cast<std::size_t>(std::min(count, it->second));
    }
  }
  return matches;
}

}  // namespace

Score bleu2(std::string_view candidate, std::string_view reference) {
  const auto cand = metric_tokenize(candidate);
  const auto ref = metric_tokenize(reference);
  if (cand.empty()) return Score::unit(0.0);

  double log_precision = 0.0;
  for (std::size_t n = 1; n <= 2; ++n) {
    const std::size_t total = cand.size() >= n ? cand.size() - n + 1 : 0;
    const std::size_t ref_total = ref.size() >= n ? ref.size() - n + 1 : 0;
    double p;
    if (total == 0) {
      // No candidate n-grams: vacuously precise when the reference has none either.
      p = ref_total == 0 ? 1.0 : kBleuSmoothingEpsilon;
    } else {
      const auto m = clipped_matches(ngram_counts(cand, n), ngram_counts(ref, n));
      p = (m == 0 ? kBleuSmoothingEpsilon : static_cast<double>(m)) / static_cast<double>(total);
    }
    log_precision += std::log(p);
  }
  const double ratio = static_cast<double>(ref.size()) / static_cast<double>(cand.size());
  const double bp = std::min(1.0, std::exp(1.0 - ratio));
  const double value = std::clamp(bp * std::exp(log_precision / 2.0), 0.0, 1.0);
  return Score::unit(value);
}

double lexical_overlap_f1(std::string_view candidate, std::string_view reference) {
  const auto cand = metric_tokenize(candidate);
  const auto ref = metric_tokenize(reference);
  if (cand.empty() || ref.empty()) return 0.0;
  const auto m = static_cast<double>(clipped_matches(ngram_counts(cand, 1), ngram_counts(ref, 1)));
  if (m == 0.0) return 0.0;
  const double precision = m / static_cast<double>(cand.size());
  const double recall = m / static_cast<double>(ref.size());
  return 2.0 * precision * recall / (precision + recall);
}

double normalize_rm_score(const Score& s) {
  switch (s.scale) {
    case ScoreScale::kUnitInterval: return s.value;
    case ScoreScale::kZeroTen: return s.value / 10.0;
    case ScoreScale::kUnboundedLogit: return logistic(s.raw.value_or(s.value));
  }
  return s.value;
}

double combine_hybrid(double bleu, double rm_normalized, double w1, double w2) {
  if (!(w1 >= 0.0 && w2 >= 0.0) || std::fabs(w1 + w2 - 1.0) > 1e-9) {
    fail(ErrorCode::kInvalidArgument, "hybrid weights must be non-negative and sum to 1");
  }
  return w1 * bleu + w2 * rm_normalized;
}

Score hybrid_translation(const ContextTriplet& t, const RewardTool& rm_tool, double w1,
                         double w2, const ToolInvoker& invoker) {
  // Validate weights before paying for a model call.
  combine_hybrid(0.0, 0.0, w1, w2);
  const double bleu = bleu2(t.response, t.reference.value_or("")).value;
  const double rm = w2 == 0.0 ? 0.0 : normalize_rm_score(invoker.invoke(rm_tool, t));
  return Score::unit(std::clamp(combine_hybrid(bleu, rm, w1, w2), 0.0, 1.0));
}

Score think_format_gate(std::string_view response, const Score& inner) {
  constexpr std::string_view kOpen = "<think>";
  constexpr std::string_view kClose = "</think>";
  auto count = [&](std::string_view needle) {
    std::size_t n = 0;
    for (auto pos = response.find(needle); pos != std::string_view::npos;
         pos = response.find(needle, pos + needle.size())) {
      ++n;
    }
    return n;
  };
  Score zero{0.0, inner.raw, inner.scale};
  if (count(kOpen) != 1 || count(kClose) != 1) return zero;
  const auto open = response.find(kOpen);
  const auto close = response.find(kClose);
  if (close < open) return zero;
  if (trim(response.substr(close + kClose.size())).empty()) return zero;
  return inner;
}

std::optional<std::string> extract_last_code_block(std::string_view response) {
  constexpr std::string_view kFence = "```";
  std::vector<std::size_t> fences;
  for (auto pos = response.find(kFence); pos != std::string_view::npos;
       pos = response.find(kFence, pos + kFence.size())) {
    fences.push_back(pos);
  }
  if (fences.size() < 2) return std::nullopt;
  const std::size_t pair = fences.size() / 2 - 1;
  const std::size_t begin = fences[2 * pair] + kFence.size();
  const std::size_t end = fences[2 * pair + 1];
  std::string_view body = response.substr(begin, end - begin);
  if (const auto nl = body.find('\n'); nl != std::string_view::npos) {
    const std::string_view tag = body.substr(0, nl);
    const bool is_tag = std::none_of(tag.begin(), tag.end(), is_space) && tag.size() <= 20;
    if (is_tag) body.remove_prefix(nl + 1);
  }
  return std::string(body);
}

std::size_t whitespace_token_count(std::string_view text) {
  std::size_t n = 0;
  bool in_token = false;
  for (char c : text) {
    if (is_space(c)) {
      in_token = false;
    } else if (!in_token) {
      in_token = true;
      ++n;
    }
  }
  return n;
}

void LengthTracker::add(std::string_view source_id, std::string_view text) {
  const auto len = static_cast<std::uint64_t>(whitespace_token_count(text));
  std::lock_guard lock(mutex_);
  overall_.count += 1;
  overall_.length += len;
  auto it = per_source_.find(source_id);
  if (it == per_source_.end()) it = per_source_.emplace(std::string(source_id), Totals{}).first;
  it->second.count += 1;
  it->second.length += len;
}

LengthStats LengthTracker::stats() const {
  std::lock_guard lock(mutex_);
  auto mean = [](const Totals& t) {
    return t.count == 0 ? 0.0 : static_cast<double>(t.length) / static_cast<double>(t.count);
  };
  LengthStats out;
  out.count = overall_.count;
  out.mean_length = mean(overall_);
  for (const auto& [source, totals] : per_source_) {
    out.per_source[source] = SourceLengthStats{totals.count, mean(totals)};
  }
  return out;
}

std::optional<VerbosityCheck> check_verbosity(const LengthStats& current,
                                              const LengthStats& baseline, double threshold) {
  if (baseline.mean_length <= 0.0) return std::nullopt;
  const double ratio = current.mean_length / baseline.mean_length;
  return VerbosityCheck{ratio, ratio >= threshold};
}

LengthStats track_lengths(const std::vector<std::pair<std::string, std::string>>& responses) {
  LengthTracker tracker;
  for (const auto& [source, text] : responses) tracker.add(source, text);
  return tracker.stats();
}

}  // namespace rlar
