#include "rlar/serialization.hpp"

#include "rlar/error.hpp"

namespace rlar {

void to_json(Json& j, const ContextTriplet& t) {
  j = Json{{"query", t.query},
           {"response", t.response},
           {"reference", t.reference ? Json(*t.reference) : Json(nullptr)},
           {"task_tags", t.task_tags},
           {"source_id", t.source_id}};
}

void from_json(const Json& j, ContextTriplet& t) {
  if (!j.is_object()) fail(ErrorCode::kInvalidArgument, "triplet must be a JSON object");
  t.query = j.value("query", std::string());
  t.response = j.value("response", std::string());
  t.reference.reset();
  if (auto it = j.find("reference"); it != j.end() && !it->is_null()) {
    t.reference = it->get<std::string>();
  }
  t.task_tags.clear();
  if (auto it = j.find("task_tags"); it != j.end() && !it->is_null()) {
    for (const auto& tag : *it) t.task_tags.insert(tag.get<std::string>());
  }
  t.source_id = j.value("source_id", std::string());
}

void to_json(Json& j, const Score& s) {
  j = Json{{"value", s.value},
           {"raw", s.raw ? Json(*s.raw) : Json(nullptr)},
           {"scale", to_string(s.scale)}};
}

void from_json(const Json& j, Score& s) {
  s.value = j.at("value").get<double>();
  s.raw.reset();
  if (auto it = j.find("raw"); it != j.end() && !it->is_null()) s.raw = it->get<double>();
  s.scale = parse_score_scale(j.value("scale", std::string("unit_interval")));
}

void to_json(Json& j, const Backend& b) {
  j = Json{{"type", to_string(b.type)}, {"value", b.value}};
}

void from_json(const Json& j, Backend& b) {
  b.type = parse_backend_type(j.at("type").get<std::string>());
  b.value = j.at("value").get<std::string>();
}

void to_json(Json& j, const RewardTool& tool) {
  j = Json{{"name", tool.name},
           {"kind", to_string(tool.kind)},
           {"description", tool.description},
           {"task_tags", tool.task_tags},
           {"backend", tool.backend},
           {"verified", tool.verified},
           {"created_at", format_rfc3339(tool.created_at)},
           {"provenance", tool.provenance}};
}

void from_json(const Json& j, RewardTool& tool) {
  tool.name = j.at("name").get<std::string>();
  tool.kind = parse_tool_kind(j.at("kind").get<std::string>());
  tool.description = j.value("description", std::string());
  tool.task_tags.clear();
  for (const auto& tag : j.value("task_tags", Json::array())) {
    tool.task_tags.insert(tag.get<std::string>());
  }
  tool.backend = j.at("backend").get<Backend>();
  tool.verified = j.value("verified", false);
  tool.created_at = parse_rfc3339(j.at("created_at").get<std::string>());
  tool.provenance = j.value("provenance", std::string());
}

Json parse_json(std::string_view text, std::string_view what) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    fail(ErrorCode::kInvalidArgument, "malformed JSON in " + std::string(what) + ": " + e.what());
  }
}

}  // namespace rlar
