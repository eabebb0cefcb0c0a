#include "rlar/routing_eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <optional>
#include <set>
#include <sstream>

#include "rlar/error.hpp"

namespace rlar {

void EvalInstance::validate() const {
  if (responses.size() != 4) {
    fail(ErrorCode::kInvalidArgument, "instance '" + instance_id + "' has " +
                                          std::to_string(responses.size()) +
                                          " responses, expected 4");
  }
  if (chosen_index < 0 || chosen_index > 3) {
    fail(ErrorCode::kInvalidArgument, "instance '" + instance_id + "' chosen_index out of range");
  }
  if (category == "Tie") {
    fail(ErrorCode::kInvalidArgument, "instance '" + instance_id + "' is in the excluded Tie category");
  }
}

void from_json(const Json& j, EvalInstance& inst) {
  inst.instance_id = j.at("instance_id").get<std::string>();
  inst.category = j.at("category").get<std::string>();
  inst.prompt = j.value("prompt", std::string());
  inst.responses = j.at("responses").get<std::vector<std::string>>();
  inst.chosen_index = j.at("chosen_index").get<int>();
}

void to_json(Json& j, const EvalInstance& inst) {
  j = Json{{"instance_id", inst.instance_id}, {"category", inst.category},
           {"prompt", inst.prompt},           {"responses", inst.responses},
           {"chosen_index", inst.chosen_index}};
}

void from_json(const Json& j, ScoreRecord& rec) {
  rec.model_id = j.at("model_id").get<std::string>();
  rec.instance_id = j.at("instance_id").get<std::string>();
  const auto scores = j.at("scores").get<std::vector<double>>();
  if (scores.size() != 4) {
    fail(ErrorCode::kInvalidArgument, "record for " + rec.model_id + "/" + rec.instance_id +
                                          " does not have 4 scores");
  }
  std::copy(scores.begin(), scores.end(), rec.scores.begin());
}

void to_json(Json& j, const ScoreRecord& rec) {
  j = Json{{"model_id", rec.model_id}, {"instance_id", rec.instance_id}, {"scores", rec.scores}};
}

void from_json(const Json& j, ModelInfo& info) {
  info.model_id = j.at("model_id").get<std::string>();
  info.description = j.value("description", std::string());
}

double chosen_probability(const std::array<double, 4>& scores, int chosen_index) {
  const double top = *std::max_element(scores.begin(), scores.end());
  double total = 0.0;
  for (double s : scores) total += std::exp((s - top) / kSoftmaxTemperature);
  return std::exp((scores.at(static_cast<std::size_t>(chosen_index)) - top) / kSoftmaxTemperature) /
         total;
}

bool passes(const std::array<double, 4>& scores, int chosen_index) {
  return chosen_probability(scores, chosen_index) > 0.5;
}

void to_json(Json& j, const StrategyResult& r) {
  Json tallies = Json::object();
  for (const auto& [cat, t] : r.tallies) tallies[cat] = Json{{"passed", t.passed}, {"total", t.total}};
  j = Json{{"strategy_name", r.strategy_name},
           {"overall_accuracy", r.overall_accuracy},
           {"per_category", r.per_category},
           {"tallies", tallies},
           {"softmax_temperature", kSoftmaxTemperature}};
  if (r.fallbacks > 0) j["fallbacks"] = r.fallbacks;
}

RecordIndex::RecordIndex(std::span<const ScoreRecord> records) {
  for (const auto& rec : records) {
    for (double s : rec.scores) {
      if (!std::isfinite(s)) {
        fail(ErrorCode::kInvalidArgument,
             "non-finite score in record " + rec.model_id + "/" + rec.instance_id);
      }
    }
    auto& per_instance = by_model_[rec.model_id];
    if (!per_instance.emplace(rec.instance_id, rec.scores).second) {
      fail(ErrorCode::kInvalidArgument,
           "duplicate record for " + rec.model_id + "/" + rec.instance_id);
    }
  }
  for (const auto& [model, _] : by_model_) models_.push_back(model);
}

bool RecordIndex::has_model(const std::string& model_id) const {
  return by_model_.count(model_id) != 0;
}

const std::array<double, 4>& RecordIndex::scores(const std::string& model_id,
                                                 const std::string& instance_id) const {
  const auto m = by_model_.find(model_id);
  if (m == by_model_.end()) fail(ErrorCode::kMissingRecord, "no records for model " + model_id);
  const auto r = m->second.find(instance_id);
  if (r == m->second.end()) {
    fail(ErrorCode::kMissingRecord, "no record for " + model_id + "/" + instance_id);
  }
  return r->second;
}

void RecordIndex::require_complete(std::span<const EvalInstance> instances) const {
  for (const auto& model : models_) {
    for (const auto& inst : instances) scores(model, inst.instance_id);
  }
}

namespace {

template <typename PassFn>
StrategyResult tally(std::string name, std::span<const EvalInstance> instances, PassFn&& pass_fn) {
  StrategyResult result;
  result.strategy_name = std::move(name);
  int passed_total = 0;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& inst = instances[i];
    inst.validate();
    const bool ok = pass_fn(inst, i);
    result.passed.push_back(ok);
    auto& t = result.tallies[inst.category];
    ++t.total;
    t.passed += ok;
    passed_total += ok;
  }
  for (const auto& [cat, t] : result.tallies) {
    result.per_category[cat] = static_cast<double>(t.passed) / t.total;
  }
  result.overall_accuracy =
      instances.empty() ? 0.0 : static_cast<double>(passed_total) / instances.size();
  return result;
}

void require_models(const RecordIndex& records, std::size_t k) {
  if (records.model_ids().size() < k || k == 0) {
    fail(ErrorCode::kInsufficientModels, "need " + std::to_string(k) + " models, have " +
                                             std::to_string(records.model_ids().size()));
  }
}

}  // namespace

StrategyResult eval_single_model(const RecordIndex& records, const std::string& model_id,
                                 std::span<const EvalInstance> instances) {
  return tally(model_id, instances, [&](const EvalInstance& inst, std::size_t) {
    return passes(records.scores(model_id, inst.instance_id), inst.chosen_index);
  });
}

std::vector<std::string> rank_models(const RecordIndex& records,
                                     std::span<const EvalInstance> instances) {
  std::vector<std::pair<double, std::string>> ranked;
  for (const auto& model : records.model_ids()) {
    ranked.emplace_back(eval_single_model(records, model, instances).overall_accuracy, model);
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<std::string> out;
  for (auto& [_, model] : ranked) out.push_back(std::move(model));
  return out;
}

StrategyResult eval_mean_at_k(const RecordIndex& records, std::span<const EvalInstance> instances,
                              int k) {
  require_models(records, k < 1 ? 0 : static_cast<std::size_t>(k));
  records.require_complete(instances);
  auto ranked = rank_models(records, instances);
  ranked.resize(static_cast<std::size_t>(k));
  return tally("mean@" + std::to_string(k), instances, [&](const EvalInstance& inst, std::size_t) {
    std::array<double, 4> merged{};
    for (const auto& model : ranked) {
      const auto& s = records.scores(model, inst.instance_id);
      for (std::size_t c = 0; c < 4; ++c) merged[c] += s[c];
    }
    for (auto& v : merged) v /= static_cast<double>(k);
    return passes(merged, inst.chosen_index);
  });
}

StrategyResult eval_oracle_best(const RecordIndex& records,
                                std::span<const EvalInstance> instances) {
  require_models(records, 1);
  records.require_complete(instances);
  return tally("oracle_best", instances, [&](const EvalInstance& inst, std::size_t) {
    return std::any_of(records.model_ids().begin(), records.model_ids().end(),
                       [&](const std::string& model) {
                         return passes(records.scores(model, inst.instance_id), inst.chosen_index);
                       });
  });
}

StrategyResult eval_random(const RecordIndex& records, std::span<const EvalInstance> instances,
                           std::uint64_t seed) {
  require_models(records, 1);
  records.require_complete(instances);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, records.model_ids().size() - 1);
  return tally("random", instances, [&](const EvalInstance& inst, std::size_t) {
    const auto& model = records.model_ids()[pick(rng)];
    return passes(records.scores(model, inst.instance_id), inst.chosen_index);
  });
}

double expected_random_accuracy(const RecordIndex& records,
                                std::span<const EvalInstance> instances) {
  require_models(records, 1);
  if (instances.empty()) return 0.0;
  double total = 0.0;
  for (const auto& model : records.model_ids()) {
    total += eval_single_model(records, model, instances).overall_accuracy;
  }
  return total / static_cast<double>(records.model_ids().size());
}

namespace {

// A known model id on the first reply line, as the whole line or as a
// whitespace/punctuation-delimited token.
std::optional<std::string> parse_model_choice(std::string_view reply,
                                              const std::vector<std::string>& known) {
  std::string line = first_line(reply);
  auto strip = [](std::string& s) {
    const auto junk = std::string_view(" \t`'\"*.,:;()[]");
    const auto b = s.find_first_not_of(junk);
    if (b == std::string::npos) {
      s.clear();
      return;
    }
    s = s.substr(b, s.find_last_not_of(junk) - b + 1);
  };
  strip(line);
  if (std::binary_search(known.begin(), known.end(), line)) return line;
  std::size_t pos = 0;
  while (pos < line.size()) {
    const auto end = line.find_first_of(" \t", pos);
    std::string token = line.substr(pos, end == std::string::npos ? std::string::npos : end - pos);
    strip(token);
    if (std::binary_search(known.begin(), known.end(), token)) return token;
    if (end == std::string::npos) break;
    pos = end + 1;
  }
  return std::nullopt;
}

}  // namespace

StrategyResult eval_agentic(const RecordIndex& records, std::span<const EvalInstance> instances,
                            std::span<const ModelInfo> models, AgentClient& agent,
                            const AgenticOptions& options) {
  require_models(records, 1);
  records.require_complete(instances);
  const std::string top = rank_models(records, instances).front();

  std::map<std::string, std::string> descriptions;
  for (const auto& m : models) descriptions[m.model_id] = m.description;
  std::string model_listing;
  for (const auto& id : records.model_ids()) {
    const auto it = descriptions.find(id);
    model_listing += "- " + id + " | " + (it == descriptions.end() ? "" : it->second) + "\n";
  }

  int fallbacks = 0;
  auto result = tally("agentic", instances, [&](const EvalInstance& inst, std::size_t) {
    std::string responses;
    for (std::size_t i = 0; i < inst.responses.size(); ++i) {
      responses += "[" + std::to_string(i) + "] " +
                   truncate_text(inst.responses[i], options.response_prefix_chars) + "\n";
    }
    std::optional<std::string> choice;
    try {
      choice = parse_model_choice(
          agent.complete(render_prompt("select_model", {{"prompt", inst.prompt},
                                                        {"responses", responses},
                                                        {"models", model_listing}})),
          records.model_ids());
    } catch (const Error&) {
    }
    if (!choice) {
      ++fallbacks;
      choice = top;
    }
    return passes(records.scores(*choice, inst.instance_id), inst.chosen_index);
  });
  result.fallbacks = fallbacks;
  return result;
}

namespace {

template <typename T>
std::vector<T> read_jsonl(std::istream& in, std::string_view what) {
  std::vector<T> out;
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse_json(line, what).get<T>());
    } catch (const Json::exception& e) {
      fail(ErrorCode::kInvalidArgument,
           std::string(what) + " line " + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      fail(e.code(), std::string(what) + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace

std::vector<EvalInstance> read_instances(std::istream& in) {
  auto instances = read_jsonl<EvalInstance>(in, "instance");
  std::set<std::string> seen;
  for (const auto& inst : instances) {
    inst.validate();
    if (!seen.insert(inst.instance_id).second) {
      fail(ErrorCode::kInvalidArgument, "duplicate instance id '" + inst.instance_id + "'");
    }
  }
  return instances;
}

std::vector<ScoreRecord> read_score_records(std::istream& in) {
  return read_jsonl<ScoreRecord>(in, "score record");
}

std::vector<ModelInfo> read_model_info(std::istream& in) {
  const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '[') {
    return parse_json(text, "model metadata").get<std::vector<ModelInfo>>();
  }
  std::istringstream lines(text);
  return read_jsonl<ModelInfo>(lines, "model metadata");
}

std::vector<std::string> category_order(std::span<const EvalInstance> instances) {
  std::vector<std::string> order;
  for (const auto& inst : instances) {
    if (std::find(order.begin(), order.end(), inst.category) == order.end()) {
      order.push_back(inst.category);
    }
  }
  return order;
}

namespace {

std::string percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", fraction * 100.0);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

void write_results_csv(std::ostream& out, std::span<const StrategyResult> results,
                       const std::vector<std::string>& categories) {
  out << "method,Avg";
  for (const auto& c : categories) out << ',' << csv_field(c);
  out << '\n';
  for (const auto& r : results) {
    out << csv_field(r.strategy_name) << ',' << percent(r.overall_accuracy);
    for (const auto& c : categories) {
      const auto it = r.per_category.find(c);
      out << ',' << (it == r.per_category.end() ? std::string() : percent(it->second));
    }
    out << '\n';
  }
}

double aggregate_overall(const std::map<std::string, double>& per_category,
                         const std::map<std::string, int>& counts) {
  double weighted = 0.0;
  long total = 0;
  for (const auto& [cat, n] : counts) {
    const auto it = per_category.find(cat);
    if (it == per_category.end()) {
      fail(ErrorCode::kMissingRecord, "no accuracy for category '" + cat + "'");
    }
    weighted += it->second * n;
    total += n;
  }
  return total == 0 ? 0.0 : weighted / static_cast<double>(total);
}

}  // namespace rlar
