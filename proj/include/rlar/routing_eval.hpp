#pragma once

#include <array>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "rlar/agent.hpp"
#include "rlar/serialization.hpp"

namespace rlar {

// Preference instance: one chosen and three rejected responses.
struct EvalInstance {
  std::string instance_id;
  std::string category;
  std::string prompt;
  std::vector<std::string> responses;
  int chosen_index = 0;

  /// Throws kInvalidArgument unless there are exactly four responses, the
  /// chosen index is in range and the category is not "Tie".
  void validate() const;
};

struct ScoreRecord {
  std::string model_id;
  std::string instance_id;
  std::array<double, 4> scores{};
};

struct ModelInfo {
  std::string model_id;
  std::string description;
};

void from_json(const Json& j, EvalInstance& inst);
void to_json(Json& j, const EvalInstance& inst);
void from_json(const Json& j, ScoreRecord& rec);
void to_json(Json& j, const ScoreRecord& rec);
void from_json(const Json& j, ModelInfo& info);

inline constexpr double kSoftmaxTemperature = 1.0;

double chosen_probability(const std::array<double, 4>& scores, int chosen_index);

/// Softmax probability of the chosen response strictly above 0.5.
bool passes(const std::array<double, 4>& scores, int chosen_index);

struct CategoryTally {
  int passed = 0;
  int total = 0;
};

struct StrategyResult {
  std::string strategy_name;
  double overall_accuracy = 0.0;
  std::map<std::string, double> per_category;
  std::map<std::string, CategoryTally> tallies;
  std::vector<bool> passed;  // per instance, input order
  int fallbacks = 0;         // agentic only: replies that were not a model id
};

void to_json(Json& j, const StrategyResult& r);

/// Per-model, per-instance score lookup. Throws kInvalidArgument on
/// duplicate (model, instance) pairs or non-finite scores.
class RecordIndex {
 public:
  explicit RecordIndex(std::span<const ScoreRecord> records);

  const std::vector<std::string>& model_ids() const { return models_; }  // sorted
  bool has_model(const std::string& model_id) const;
  /// Throws kMissingRecord.
  const std::array<double, 4>& scores(const std::string& model_id,
                                      const std::string& instance_id) const;
  /// Throws kMissingRecord naming the first gap.
  void require_complete(std::span<const EvalInstance> instances) const;

 private:
  std::vector<std::string> models_;
  std::map<std::string, std::map<std::string, std::array<double, 4>>> by_model_;
};

StrategyResult eval_single_model(const RecordIndex& records, const std::string& model_id,
                                 std::span<const EvalInstance> instances);

/// Models by single-model accuracy, best first; ties by model id.
std::vector<std::string> rank_models(const RecordIndex& records,
                                     std::span<const EvalInstance> instances);

/// Throws kInsufficientModels when fewer than k models (or k < 1).
StrategyResult eval_mean_at_k(const RecordIndex& records, std::span<const EvalInstance> instances,
                              int k);

StrategyResult eval_oracle_best(const RecordIndex& records,
                                std::span<const EvalInstance> instances);

StrategyResult eval_random(const RecordIndex& records, std::span<const EvalInstance> instances,
                           std::uint64_t seed);

/// Exact expectation of eval_random's overall accuracy over seeds.
double expected_random_accuracy(const RecordIndex& records,
                                std::span<const EvalInstance> instances);

struct AgenticOptions {
  std::size_t response_prefix_chars = 1500;
};

/// Asks the agent to pick one model per instance. Replies that do not name
/// a known model fall back to the top single model.
StrategyResult eval_agentic(const RecordIndex& records, std::span<const EvalInstance> instances,
                            std::span<const ModelInfo> models, AgentClient& agent,
                            const AgenticOptions& options = {});

std::vector<EvalInstance> read_instances(std::istream& in);
std::vector<ScoreRecord> read_score_records(std::istream& in);
/// Either a JSON array or JSON lines.
std::vector<ModelInfo> read_model_info(std::istream& in);

/// Category columns in first-appearance order across the instances.
std::vector<std::string> category_order(std::span<const EvalInstance> instances);

/// "method,Avg,<categories...>" with percentages to two decimals.
void write_results_csv(std::ostream& out, std::span<const StrategyResult> results,
                       const std::vector<std::string>& categories);

/// Instance-weighted overall accuracy from per-category accuracies.
double aggregate_overall(const std::map<std::string, double>& per_category,
                         const std::map<std::string, int>& counts);

}  // namespace rlar
