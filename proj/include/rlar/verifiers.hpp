#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rlar/types.hpp"

namespace rlar {

class ToolInvoker;

// ---------------------------------------------------------------------------
// Numeric exact match

enum class AnswerMarker { kHash4, kBoxed, kNone };
enum class ExpectedMarker { kHash4, kBoxed, kAny };
enum class MarkerMode { kStrict, kLenient };

std::string_view to_string(AnswerMarker marker);
std::string_view to_string(ExpectedMarker marker);
ExpectedMarker parse_expected_marker(std::string_view text);

struct ExtractedAnswer {
  std::optional<double> numeric_value;
  AnswerMarker source_marker = AnswerMarker::kNone;
  std::string raw_span;
};

/// Evaluates a bare numeric expression: integers, decimals, scientific
/// notation, thousands separators, "$" wrapping, a/b and \frac{a}{b}.
std::optional<double> parse_numeric(std::string_view text);

ExtractedAnswer extract_answer(std::string_view response, ExpectedMarker expected);

/// |got - ref| <= 1e-6, measured relative to |ref| once |ref| > 1.
bool numeric_match(double got, double ref);

/// Binary numeric-exact-match reward. In strict mode the answer must carry
/// the expected marker; lenient mode accepts either marker.
/// Throws kReferenceUnparseable when the reference is missing or not numeric.
Score reward_math(const ContextTriplet& t, ExpectedMarker expected,
                  MarkerMode mode = MarkerMode::kStrict);

// ---------------------------------------------------------------------------
// Text metrics

/// Lowercased whitespace tokens with every ASCII punctuation character split
/// into its own token.
std::vector<std::string> metric_tokenize(std::string_view text);

inline constexpr double kBleuSmoothingEpsilon = 1e-9;

/// Sentence BLEU-2: geometric mean of clipped unigram and bigram precision,
/// zero match counts replaced by kBleuSmoothingEpsilon, times the brevity
/// penalty min(1, exp(1 - ref_len / cand_len)).
Score bleu2(std::string_view candidate, std::string_view reference);

/// Clipped token-overlap F1; 0 when either side has no tokens.
double lexical_overlap_f1(std::string_view candidate, std::string_view reference);

/// Maps a reward-model score into [0, 1]: logits through the logistic map,
/// zero_ten divided by ten, unit-interval unchanged.
double normalize_rm_score(const Score& s);

/// w1 * bleu + w2 * rm_normalized. Weights must be non-negative and sum to 1.
double combine_hybrid(double bleu, double rm_normalized, double w1, double w2);

/// w1 * BLEU-2(response, reference) + w2 * normalized RM score.
Score hybrid_translation(const ContextTriplet& t, const RewardTool& rm_tool, double w1,
                         double w2, const ToolInvoker& invoker);

// ---------------------------------------------------------------------------
// Format and length checks

/// Passes `inner` through when the response holds exactly one well-nested
/// <think>...</think> block followed by a non-empty answer; otherwise 0.
Score think_format_gate(std::string_view response, const Score& inner);

/// Last complete ``` fenced block, without its language tag line.
std::optional<std::string> extract_last_code_block(std::string_view response);

struct SourceLengthStats {
  std::uint64_t count = 0;
  double mean_length = 0.0;
};

struct LengthStats {
  std::uint64_t count = 0;
  double mean_length = 0.0;
  std::string unit = "whitespace_tokens";
  std::map<std::string, SourceLengthStats> per_source;
};

inline constexpr double kVerbosityRatioThreshold = 1.3;

struct VerbosityCheck {
  double ratio = 0.0;
  bool flagged = false;
};

/// current.mean / baseline.mean, flagged at or above `threshold`. Absent when
/// the baseline mean is zero.
std::optional<VerbosityCheck> check_verbosity(const LengthStats& current,
                                              const LengthStats& baseline,
                                              double threshold = kVerbosityRatioThreshold);

std::size_t whitespace_token_count(std::string_view text);

class LengthTracker {
 public:
  void add(std::string_view source_id, std::string_view text);
  LengthStats stats() const;

 private:
  struct Totals {
    std::uint64_t count = 0;
    std::uint64_t length = 0;
  };
  mutable std::mutex mutex_;
  Totals overall_;
  std::map<std::string, Totals, std::less<>> per_source_;
};

LengthStats track_lengths(const std::vector<std::pair<std::string, std::string>>& responses);

}  // namespace rlar
