#include "wordflow/serialization.hpp"

#include "wordflow/error.hpp"

namespace wordflow {

using nlohmann::json;

namespace {

template <typename T>
void optional_field(const json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

}  // namespace

void to_json(json& j, const ClassPair& v) { j = json{{"p", v.p}, {"q", v.q}}; }
void from_json(const json& j, ClassPair& v) {
  j.at("p").get_to(v.p);
  j.at("q").get_to(v.q);
}

void to_json(json& j, Polarity v) { j = std::string(to_string(v)); }
void from_json(const json& j, Polarity& v) { v = polarity_from_string(j.get<std::string>()); }
void to_json(json& j, Category v) { j = std::string(to_string(v)); }
void from_json(const json& j, Category& v) { v = category_from_string(j.get<std::string>()); }

void to_json(json& j, const SigmaSearch& v) {
  j = json{{"lambda", v.lambda},
           {"tolerance", v.tolerance},
           {"min_factor", v.min_factor},
           {"max_factor", v.max_factor}};
  j["sigma_min"] = v.sigma_min ? json(*v.sigma_min) : json(nullptr);
  j["sigma_max"] = v.sigma_max ? json(*v.sigma_max) : json(nullptr);
}
void from_json(const json& j, SigmaSearch& v) {
  v = SigmaSearch{};
  optional_field(j, "lambda", v.lambda);
  optional_field(j, "tolerance", v.tolerance);
  optional_field(j, "min_factor", v.min_factor);
  optional_field(j, "max_factor", v.max_factor);
  if (j.contains("sigma_min") && !j.at("sigma_min").is_null()) v.sigma_min = j.at("sigma_min").get<double>();
  if (j.contains("sigma_max") && !j.at("sigma_max").is_null()) v.sigma_max = j.at("sigma_max").get<double>();
}

void to_json(json& j, const MeasureConfig& v) {
  j = json{{"xi", v.xi},
           {"mc_samples", v.mc_samples},
           {"sigma_search", v.sigma_search},
           {"master_seed", v.master_seed}};
}
void from_json(const json& j, MeasureConfig& v) {
  v = MeasureConfig{};
  optional_field(j, "xi", v.xi);
  optional_field(j, "mc_samples", v.mc_samples);
  optional_field(j, "sigma_search", v.sigma_search);
  optional_field(j, "master_seed", v.master_seed);
}

void to_json(json& j, const LayoutConfig& v) {
  j = json{{"alpha", v.alpha},           {"beta", v.beta},   {"grid_size", v.grid_size},
           {"max_sweeps", v.max_sweeps}, {"tolerance", v.tolerance}, {"fill", v.fill}};
}
void from_json(const json& j, LayoutConfig& v) {
  v = LayoutConfig{};
  optional_field(j, "alpha", v.alpha);
  optional_field(j, "beta", v.beta);
  optional_field(j, "grid_size", v.grid_size);
  optional_field(j, "max_sweeps", v.max_sweeps);
  optional_field(j, "tolerance", v.tolerance);
  optional_field(j, "fill", v.fill);
}

void to_json(json& j, const TsneConfig& v) {
  j = json{{"perplexity", v.perplexity},
           {"iterations", v.iterations},
           {"learning_rate", v.learning_rate},
           {"exaggeration_iterations", v.exaggeration_iterations},
           {"exaggeration", v.exaggeration},
           {"seed", v.seed}};
}
void from_json(const json& j, TsneConfig& v) {
  v = TsneConfig{};
  optional_field(j, "perplexity", v.perplexity);
  optional_field(j, "iterations", v.iterations);
  optional_field(j, "learning_rate", v.learning_rate);
  optional_field(j, "exaggeration_iterations", v.exaggeration_iterations);
  optional_field(j, "exaggeration", v.exaggeration);
  optional_field(j, "seed", v.seed);
}

void to_json(json& j, const WordMeasure& v) {
  j = json{{"delta_s", v.delta_s},
           {"se", v.standard_error},
           {"sigma", v.sigma_star},
           {"contribution", v.contribution},
           {"polarity", v.polarity}};
}
void from_json(const json& j, WordMeasure& v) {
  j.at("delta_s").get_to(v.delta_s);
  j.at("se").get_to(v.standard_error);
  j.at("sigma").get_to(v.sigma_star);
  j.at("contribution").get_to(v.contribution);
  j.at("polarity").get_to(v.polarity);
}

void to_json(json& j, const EdgeMI& v) {
  j = json{{"source", v.source}, {"target", v.target}, {"layer", v.layer}, {"weight", v.weight}};
}
void from_json(const json& j, EdgeMI& v) {
  j.at("source").get_to(v.source);
  j.at("target").get_to(v.target);
  j.at("layer").get_to(v.layer);
  j.at("weight").get_to(v.weight);
}

void to_json(json& j, const SampleMeasures& v) {
  j = json{{"sample_id", v.sample_id}, {"tokens", v.tokens},     {"special", v.special_flags},
           {"class_scores", v.class_scores}, {"score", v.score}, {"embedding", v.embedding},
           {"words", v.words},         {"contexts", v.contexts}, {"edges", v.edges},
           {"inter_word", v.inter_word}};
}
void from_json(const json& j, SampleMeasures& v) {
  j.at("sample_id").get_to(v.sample_id);
  j.at("tokens").get_to(v.tokens);
  j.at("special").get_to(v.special_flags);
  j.at("class_scores").get_to(v.class_scores);
  j.at("score").get_to(v.score);
  j.at("embedding").get_to(v.embedding);
  j.at("words").get_to(v.words);
  j.at("contexts").get_to(v.contexts);
  j.at("edges").get_to(v.edges);
  j.at("inter_word").get_to(v.inter_word);
}

void to_json(json& j, const Span& v) { j = json::array({v.start, v.end}); }
void from_json(const json& j, Span& v) {
  v.start = j.at(0).get<std::size_t>();
  v.end = j.at(1).get<std::size_t>();
}

void to_json(json& j, const PhrasePartition& v) { j = json{{"layer", v.layer}, {"spans", v.spans}}; }
void from_json(const json& j, PhrasePartition& v) {
  j.at("layer").get_to(v.layer);
  j.at("spans").get_to(v.spans);
}

void to_json(json& j, const LineEvent& v) {
  j = json{{"word", v.word}, {"layer", v.layer}};
  if (v.kind == LineEventKind::LineEnd) {
    j["kind"] = "LineEnd";
  } else {
    j["kind"] = "PolaritySwitch";
    j["from"] = v.from;
    j["to"] = v.to;
  }
}
void from_json(const json& j, LineEvent& v) {
  j.at("word").get_to(v.word);
  j.at("layer").get_to(v.layer);
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "LineEnd") {
    v.kind = LineEventKind::LineEnd;
  } else if (kind == "PolaritySwitch") {
    v.kind = LineEventKind::PolaritySwitch;
    j.at("from").get_to(v.from);
    j.at("to").get_to(v.to);
  } else {
    throw FormatError("unknown line event kind '" + kind + "'");
  }
}

void to_json(json& j, const WidthJump& v) { j = json{{"word", v.word}, {"layer", v.layer}}; }
void from_json(const json& j, WidthJump& v) {
  j.at("word").get_to(v.word);
  j.at("layer").get_to(v.layer);
}

void to_json(json& j, const Curve& v) {
  j = v.edge;
  j["tag"] = v.tag == CurveTag::TopWeight ? "TopWeight" : "Explanatory";
}
void from_json(const json& j, Curve& v) {
  j.get_to(v.edge);
  const auto tag = j.at("tag").get<std::string>();
  if (tag == "TopWeight") v.tag = CurveTag::TopWeight;
  else if (tag == "Explanatory") v.tag = CurveTag::Explanatory;
  else throw FormatError("unknown curve tag '" + tag + "'");
}

void to_json(json& j, const CurveSet& v) { j = v.curves; }
void from_json(const json& j, CurveSet& v) { j.get_to(v.curves); }

void to_json(json& j, const StorylineLayout& v) {
  j = json{{"y", v.y},
           {"grid_size", v.grid_size},
           {"cost", v.cost},
           {"cost_trace", v.cost_trace},
           {"sweeps", v.sweeps}};
}
void from_json(const json& j, StorylineLayout& v) {
  j.at("y").get_to(v.y);
  j.at("grid_size").get_to(v.grid_size);
  j.at("cost").get_to(v.cost);
  j.at("cost_trace").get_to(v.cost_trace);
  j.at("sweeps").get_to(v.sweeps);
}

void to_json(json& j, const ConfusionMatrix& v) {
  j = json{{"class_count", v.class_count}, {"counts", v.counts}};
}
void from_json(const json& j, ConfusionMatrix& v) {
  j.at("class_count").get_to(v.class_count);
  j.at("counts").get_to(v.counts);
}

void to_json(json& j, const HexCoord& v) { j = json::array({v.q, v.r}); }
void from_json(const json& j, HexCoord& v) {
  v.q = j.at(0).get<int>();
  v.r = j.at(1).get<int>();
}

void to_json(json& j, const HexBin& v) {
  j = json{{"cell", v.cell},     {"cx", v.cx},           {"cy", v.cy},
           {"counts", v.counts}, {"dominant", v.dominant}, {"darkness", v.darkness}};
}
void from_json(const json& j, HexBin& v) {
  j.at("cell").get_to(v.cell);
  j.at("cx").get_to(v.cx);
  j.at("cy").get_to(v.cy);
  j.at("counts").get_to(v.counts);
  j.at("dominant").get_to(v.dominant);
  j.at("darkness").get_to(v.darkness);
}

void to_json(json& j, const Stripe& v) {
  j = json{{"index", v.index}, {"lo", v.lo}, {"hi", v.hi}, {"count", v.count}, {"class_counts", v.class_counts}};
}
void from_json(const json& j, Stripe& v) {
  j.at("index").get_to(v.index);
  j.at("lo").get_to(v.lo);
  j.at("hi").get_to(v.hi);
  j.at("count").get_to(v.count);
  j.at("class_counts").get_to(v.class_counts);
}

void to_json(json& j, const WordStats& v) {
  j = json{{"word", v.word},
           {"tf", v.tf},
           {"contribution", v.contribution},
           {"importance", v.importance},
           {"polarity_histogram",
            json{{"P", v.polarity_histogram[0]}, {"Q", v.polarity_histogram[1]}, {"I", v.polarity_histogram[2]}}},
           {"polarity", v.dominant}};
}
void from_json(const json& j, WordStats& v) {
  j.at("word").get_to(v.word);
  j.at("tf").get_to(v.tf);
  j.at("contribution").get_to(v.contribution);
  j.at("importance").get_to(v.importance);
  const auto& h = j.at("polarity_histogram");
  v.polarity_histogram = {h.at("P").get<std::size_t>(), h.at("Q").get<std::size_t>(), h.at("I").get<std::size_t>()};
  j.at("polarity").get_to(v.dominant);
}

void to_json(json& j, const WordScore& v) { j = json{{"word", v.word}, {"value", v.value}}; }

void to_json(json& j, const TrendingWord& v) { j = json{{"word", v.word}, {"change", v.change}}; }
void from_json(const json& j, TrendingWord& v) {
  j.at("word").get_to(v.word);
  j.at("change").get_to(v.change);
}

void to_json(json& j, const Trending& v) {
  j = json{{"increasing", v.increasing}, {"decreasing", v.decreasing}};
}
void from_json(const json& j, Trending& v) {
  j.at("increasing").get_to(v.increasing);
  j.at("decreasing").get_to(v.decreasing);
}

void to_json(json& j, const ContextPhrase& v) {
  j = json{{"text", v.text}, {"frequency", v.frequency}, {"mean_contribution", v.mean_contribution}, {"score", v.score}};
}
void from_json(const json& j, ContextPhrase& v) {
  j.at("text").get_to(v.text);
  j.at("frequency").get_to(v.frequency);
  j.at("mean_contribution").get_to(v.mean_contribution);
  j.at("score").get_to(v.score);
}

void to_json(json& j, const ContextCluster& v) {
  j = json{{"layer", v.layer},
           {"members", v.members},
           {"polarity_counts",
            json{{"P", v.polarity_counts[0]}, {"Q", v.polarity_counts[1]}, {"I", v.polarity_counts[2]}}},
           {"majority", v.majority},
           {"phrases", v.phrases}};
}
void from_json(const json& j, ContextCluster& v) {
  j.at("layer").get_to(v.layer);
  j.at("members").get_to(v.members);
  const auto& h = j.at("polarity_counts");
  v.polarity_counts = {h.at("P").get<std::size_t>(), h.at("Q").get<std::size_t>(), h.at("I").get<std::size_t>()};
  j.at("majority").get_to(v.majority);
  j.at("phrases").get_to(v.phrases);
}

void to_json(json& j, const ContextEdge& v) {
  j = json{{"from", v.from}, {"to", v.to}, {"shared", v.shared}, {"proportion", v.proportion}};
}
void from_json(const json& j, ContextEdge& v) {
  j.at("from").get_to(v.from);
  j.at("to").get_to(v.to);
  j.at("shared").get_to(v.shared);
  j.at("proportion").get_to(v.proportion);
}

void to_json(json& j, const ContextClusterTree& v) {
  j = json{{"word", v.word}, {"layers", v.layers}, {"clusters", v.clusters}, {"edges", v.edges}, {"labels", v.labels},
           {"sample_ids", v.sample_ids}, {"positions", v.positions}};
}
void from_json(const json& j, ContextClusterTree& v) {
  j.at("word").get_to(v.word);
  j.at("layers").get_to(v.layers);
  j.at("clusters").get_to(v.clusters);
  j.at("edges").get_to(v.edges);
  j.at("labels").get_to(v.labels);
  j.at("sample_ids").get_to(v.sample_ids);
  j.at("positions").get_to(v.positions);
}

void to_json(json& j, const PlacedWord& v) {
  j = json{{"word", v.word}, {"x", v.x},   {"y", v.y},
           {"width", v.width}, {"height", v.height}, {"pie", v.pie}};
}

void to_json(json& j, const DagLayout& v) {
  json nodes = json::array();
  for (const auto& n : v.nodes) {
    nodes.push_back({{"cluster", n.cluster}, {"column", n.column}, {"order", n.order},
                     {"x", n.x}, {"y", n.y}, {"height", n.height}});
  }
  json edges = json::array();
  for (const auto& e : v.edges) edges.push_back({{"from", e.from}, {"to", e.to}, {"width", e.width}});
  j = json{{"nodes", nodes}, {"edges", edges}, {"crossings", v.crossings}};
}

}  // namespace wordflow
