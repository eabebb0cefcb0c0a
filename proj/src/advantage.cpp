#include "rlar/advantage.hpp"

#include <algorithm>
#include <cmath>

#include "rlar/error.hpp"

namespace rlar {

void to_json(Json& j, const RewardGroup& g) {
  j = Json{{"prompt_id", g.prompt_id}, {"rewards", g.rewards}, {"tool_name", g.tool_name}};
  if (g.step) j["step"] = *g.step;
}

void from_json(const Json& j, RewardGroup& g) {
  g.prompt_id = j.at("prompt_id").get<std::string>();
  g.rewards = j.at("rewards").get<std::vector<double>>();
  g.tool_name = j.value("tool_name", std::string());
  g.step.reset();
  if (auto it = j.find("step"); it != j.end() && !it->is_null()) g.step = it->get<std::int64_t>();
}

void to_json(Json& j, const AdvantageGroup& g) {
  j = Json{{"prompt_id", g.prompt_id}, {"advantages", g.advantages}, {"degenerate", g.degenerate}};
}

AdvantageGroup compute_advantages(const RewardGroup& group) {
  const auto& r = group.rewards;
  if (r.size() < 2) {
    fail(ErrorCode::kGroupTooSmall, "group '" + group.prompt_id + "' has " +
                                        std::to_string(r.size()) + " rewards, need at least 2");
  }
  for (double v : r) {
    if (!std::isfinite(v)) {
      fail(ErrorCode::kInvalidArgument, "group '" + group.prompt_id + "' has a non-finite reward");
    }
  }
  const double n = static_cast<double>(r.size());
  double mean = 0.0;
  for (double v : r) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : r) var += (v - mean) * (v - mean);
  var /= n;
  const double sd = std::sqrt(var);

  AdvantageGroup out;
  out.prompt_id = group.prompt_id;
  out.advantages.assign(r.size(), 0.0);
  // Rounding can leave a tiny spread on equal rewards; treat it as zero.
  const double scale = std::max(std::abs(mean), 1.0);
  if (!(sd > 1e-12 * scale)) {
    out.degenerate = true;
    return out;
  }
  for (std::size_t i = 0; i < r.size(); ++i) out.advantages[i] = (r[i] - mean) / sd;
  return out;
}

void to_json(Json& j, const ClipStats& s) {
  Json series = Json::array();
  for (const auto& e : s.series) {
    series.push_back(Json{{"step", e.step}, {"max_adv", e.max_adv}, {"min_adv", e.min_adv}});
  }
  j = Json{{"threshold", s.threshold}, {"upper_rate", s.upper_rate}, {"lower_rate", s.lower_rate},
           {"max_adv", s.max_adv},     {"min_adv", s.min_adv},       {"steps", s.steps},
           {"count", s.count},         {"series", series}};
}

ClipAccumulator::ClipAccumulator(double threshold) : threshold_(threshold) {
  if (!(threshold > 0.0)) fail(ErrorCode::kInvalidArgument, "clip threshold must be positive");
}

void ClipAccumulator::add(const AdvantageGroup& group, std::int64_t step) {
  std::uint64_t upper = 0;
  std::uint64_t lower = 0;
  double hi = 0.0;
  double lo = 0.0;
  bool first = true;
  for (double a : group.advantages) {
    upper += a > threshold_;
    lower += a < -threshold_;
    hi = first ? a : std::max(hi, a);
    lo = first ? a : std::min(lo, a);
    first = false;
  }
  std::lock_guard lock(mu_);
  count_ += group.advantages.size();
  upper_ += upper;
  lower_ += lower;
  if (first) return;
  auto it = std::lower_bound(series_.begin(), series_.end(), step,
                             [](const StepExtremes& e, std::int64_t s) { return e.step < s; });
  if (it == series_.end() || it->step != step) {
    series_.insert(it, StepExtremes{step, hi, lo});
  } else {
    it->max_adv = std::max(it->max_adv, hi);
    it->min_adv = std::min(it->min_adv, lo);
  }
}

ClipStats ClipAccumulator::stats() const {
  std::lock_guard lock(mu_);
  ClipStats s;
  s.threshold = threshold_;
  s.count = count_;
  if (count_ > 0) {
    s.upper_rate = static_cast<double>(upper_) / static_cast<double>(count_);
    s.lower_rate = static_cast<double>(lower_) / static_cast<double>(count_);
  }
  s.series = series_;
  s.steps = static_cast<std::int64_t>(series_.size());
  for (std::size_t i = 0; i < series_.size(); ++i) {
    s.max_adv = i == 0 ? series_[i].max_adv : std::max(s.max_adv, series_[i].max_adv);
    s.min_adv = i == 0 ? series_[i].min_adv : std::min(s.min_adv, series_[i].min_adv);
  }
  return s;
}

ClipStats clip_stats(std::span<const AdvantageGroup> groups, double threshold) {
  ClipAccumulator acc(threshold);
  for (const auto& g : groups) acc.add(g);
  return acc.stats();
}

std::vector<RewardGroup> read_reward_groups(std::istream& in) {
  std::vector<RewardGroup> groups;
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      groups.push_back(parse_json(line, "reward group").get<RewardGroup>());
    } catch (const Json::exception& e) {
      fail(ErrorCode::kInvalidArgument, "line " + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      fail(e.code(), "line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return groups;
}

void write_advantage_groups(std::ostream& out, std::span<const AdvantageGroup> groups) {
  for (const auto& g : groups) out << Json(g).dump() << '\n';
}

void write_clip_series_csv(std::ostream& out, const ClipStats& stats) {
  out << "step,max_adv,min_adv\n";
  for (const auto& e : stats.series) out << e.step << ',' << e.max_adv << ',' << e.min_adv << '\n';
}

}  // namespace rlar
