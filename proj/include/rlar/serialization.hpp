#pragma once

#include "json.hpp"
#include "rlar/types.hpp"

namespace rlar {

using Json = nlohmann::json;

// Triplet wire form: {"query", "response", "reference": str|null,
// "task_tags": [..], "source_id"}. Missing optional keys default.
void to_json(Json& j, const ContextTriplet& t);
void from_json(const Json& j, ContextTriplet& t);

void to_json(Json& j, const Score& s);
void from_json(const Json& j, Score& s);

void to_json(Json& j, const Backend& b);
void from_json(const Json& j, Backend& b);

void to_json(Json& j, const RewardTool& tool);
void from_json(const Json& j, RewardTool& tool);

/// Parses a JSON document, converting parse failures into rlar::Error with
/// kInvalidArgument.
Json parse_json(std::string_view text, std::string_view what);

}  // namespace rlar
