#pragma once

#include <cstdint>
#include <istream>
#include <mutex>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "rlar/serialization.hpp"

namespace rlar {

struct RewardGroup {
  std::string prompt_id;
  std::vector<double> rewards;
  std::string tool_name;
  // Training step the group belongs to; groups without one count as step 0.
  std::optional<std::int64_t> step;
};

struct AdvantageGroup {
  std::string prompt_id;
  std::vector<double> advantages;
  bool degenerate = false;  // zero spread, all advantages 0
};

void to_json(Json& j, const RewardGroup& g);
void from_json(const Json& j, RewardGroup& g);
void to_json(Json& j, const AdvantageGroup& g);

/// (r_i - mean) / population std. Throws kGroupTooSmall for fewer than two
/// rewards and kInvalidArgument for non-finite ones.
AdvantageGroup compute_advantages(const RewardGroup& group);

struct StepExtremes {
  std::int64_t step = 0;
  double max_adv = 0.0;
  double min_adv = 0.0;
};

struct ClipStats {
  double threshold = 1.0;
  double upper_rate = 0.0;
  double lower_rate = 0.0;
  double max_adv = 0.0;
  double min_adv = 0.0;
  std::int64_t steps = 0;
  std::uint64_t count = 0;
  std::vector<StepExtremes> series;  // ascending by step
};

void to_json(Json& j, const ClipStats& s);

/// Folds advantage groups into clip-rate statistics. add() is thread-safe
/// and order-independent.
class ClipAccumulator {
 public:
  explicit ClipAccumulator(double threshold);

  void add(const AdvantageGroup& group, std::int64_t step = 0);
  ClipStats stats() const;

 private:
  double threshold_;
  mutable std::mutex mu_;
  std::uint64_t count_ = 0;
  std::uint64_t upper_ = 0;
  std::uint64_t lower_ = 0;
  std::vector<StepExtremes> series_;
};

ClipStats clip_stats(std::span<const AdvantageGroup> groups, double threshold);

/// One RewardGroup per non-blank line; errors name the offending line.
std::vector<RewardGroup> read_reward_groups(std::istream& in);
void write_advantage_groups(std::ostream& out, std::span<const AdvantageGroup> groups);

/// step,max_adv,min_adv
void write_clip_series_csv(std::ostream& out, const ClipStats& stats);

}  // namespace rlar
