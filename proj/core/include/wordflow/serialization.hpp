#pragma once

// JSON mappings for the library's value types. Enumerations are written as
// their string names; doubles round-trip exactly.

#include "wordflow/analytics.hpp"
#include "wordflow/layout.hpp"
#include "wordflow/measures.hpp"
#include "wordflow/phrase.hpp"

#include <nlohmann/json.hpp>

namespace wordflow {

void to_json(nlohmann::json& j, const ClassPair& v);
void from_json(const nlohmann::json& j, ClassPair& v);
void to_json(nlohmann::json& j, Polarity v);
void from_json(const nlohmann::json& j, Polarity& v);
void to_json(nlohmann::json& j, Category v);
void from_json(const nlohmann::json& j, Category& v);

void to_json(nlohmann::json& j, const SigmaSearch& v);
void from_json(const nlohmann::json& j, SigmaSearch& v);
void to_json(nlohmann::json& j, const MeasureConfig& v);
void from_json(const nlohmann::json& j, MeasureConfig& v);
void to_json(nlohmann::json& j, const LayoutConfig& v);
void from_json(const nlohmann::json& j, LayoutConfig& v);
void to_json(nlohmann::json& j, const TsneConfig& v);
void from_json(const nlohmann::json& j, TsneConfig& v);

void to_json(nlohmann::json& j, const WordMeasure& v);
void from_json(const nlohmann::json& j, WordMeasure& v);
void to_json(nlohmann::json& j, const EdgeMI& v);
void from_json(const nlohmann::json& j, EdgeMI& v);
void to_json(nlohmann::json& j, const SampleMeasures& v);
void from_json(const nlohmann::json& j, SampleMeasures& v);

void to_json(nlohmann::json& j, const Span& v);
void from_json(const nlohmann::json& j, Span& v);
void to_json(nlohmann::json& j, const PhrasePartition& v);
void from_json(const nlohmann::json& j, PhrasePartition& v);
void to_json(nlohmann::json& j, const LineEvent& v);
void from_json(const nlohmann::json& j, LineEvent& v);
void to_json(nlohmann::json& j, const WidthJump& v);
void from_json(const nlohmann::json& j, WidthJump& v);
void to_json(nlohmann::json& j, const Curve& v);
void from_json(const nlohmann::json& j, Curve& v);
void to_json(nlohmann::json& j, const CurveSet& v);
void from_json(const nlohmann::json& j, CurveSet& v);
void to_json(nlohmann::json& j, const StorylineLayout& v);
void from_json(const nlohmann::json& j, StorylineLayout& v);

void to_json(nlohmann::json& j, const ConfusionMatrix& v);
void from_json(const nlohmann::json& j, ConfusionMatrix& v);
void to_json(nlohmann::json& j, const HexCoord& v);
void from_json(const nlohmann::json& j, HexCoord& v);
void to_json(nlohmann::json& j, const HexBin& v);
void from_json(const nlohmann::json& j, HexBin& v);
void to_json(nlohmann::json& j, const Stripe& v);
void from_json(const nlohmann::json& j, Stripe& v);
void to_json(nlohmann::json& j, const WordStats& v);
void from_json(const nlohmann::json& j, WordStats& v);
void to_json(nlohmann::json& j, const WordScore& v);
void to_json(nlohmann::json& j, const TrendingWord& v);
void from_json(const nlohmann::json& j, TrendingWord& v);
void to_json(nlohmann::json& j, const Trending& v);
void from_json(const nlohmann::json& j, Trending& v);
void to_json(nlohmann::json& j, const ContextPhrase& v);
void from_json(const nlohmann::json& j, ContextPhrase& v);
void to_json(nlohmann::json& j, const ContextCluster& v);
void from_json(const nlohmann::json& j, ContextCluster& v);
void to_json(nlohmann::json& j, const ContextEdge& v);
void from_json(const nlohmann::json& j, ContextEdge& v);
void to_json(nlohmann::json& j, const ContextClusterTree& v);
void from_json(const nlohmann::json& j, ContextClusterTree& v);
void to_json(nlohmann::json& j, const PlacedWord& v);
void to_json(nlohmann::json& j, const DagLayout& v);

}  // namespace wordflow
