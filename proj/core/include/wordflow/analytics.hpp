#pragma once

#include "wordflow/measures.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace wordflow {

// ---------------------------------------------------------------- class view

struct ConfusionMatrix {
  std::size_t class_count = 0;
  std::vector<std::vector<std::size_t>> counts;  ///< [actual][predicted]

  std::size_t total() const;
  double accuracy() const;
  /// Row-normalized percentages; empty rows are all zero.
  std::vector<std::vector<double>> percentages() const;

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

ConfusionMatrix confusion_matrix(std::span<const std::size_t> labels,
                                 std::span<const std::size_t> predictions, std::size_t class_count);

// --------------------------------------------------------- distribution view

/// Outcome with C_p as the positive class. A sample is predicted C_p only
/// when s > 0.5.
enum class Category : std::uint8_t { TP = 0, TN = 1, FP = 2, FN = 3 };
inline constexpr std::size_t kCategoryCount = 4;

std::string_view to_string(Category category);
Category category_from_string(std::string_view name);
Category categorize(std::size_t label, double s, ClassPair pair);
inline bool is_correct(Category c) { return c == Category::TP || c == Category::TN; }

struct TsneConfig {
  double perplexity = 30.0;
  std::size_t iterations = 1000;
  /// 0 picks n / (4 * exaggeration). Fixed rates near 200 overshoot badly on
  /// small inputs in one dimension and scatter the clusters.
  double learning_rate = 0.0;
  std::size_t exaggeration_iterations = 250;
  double exaggeration = 12.0;
  std::uint64_t seed = 0;
};

/// Exact 1-D t-SNE, min-max normalized to [0, 1].
std::vector<double> project_1d(const std::vector<std::vector<double>>& embeddings,
                               const TsneConfig& cfg);

/// Same, after sorting the inputs by id so the result does not depend on
/// input order. Output follows the input order.
std::vector<double> project_1d(std::span<const std::string> ids,
                               const std::vector<std::vector<double>>& embeddings,
                               const TsneConfig& cfg);

struct ProjectedSample {
  std::string sample_id;
  double x = 0.0;
  double s = 0.0;
  Category category = Category::TP;
};

struct HexCoord {
  int q = 0;
  int r = 0;

  friend auto operator<=>(const HexCoord&, const HexCoord&) = default;
};

inline constexpr double kDefaultHexRadius = 1.0 / 24.0;

/// Pointy-top axial cell containing (x, y).
HexCoord hex_cell(double x, double y, double radius);
std::array<double, 2> hex_center(HexCoord cell, double radius);

struct HexBin {
  HexCoord cell;
  double cx = 0.0;
  double cy = 0.0;
  std::array<std::size_t, kCategoryCount> counts{};
  Category dominant = Category::TP;
  /// count / largest count of that category over all bins.
  std::array<double, kCategoryCount> darkness{};

  std::size_t total() const;
};

/// Bins in ascending (q, r). Dominant ties go TP, TN, FP, FN.
std::vector<HexBin> hex_bin(std::span<const ProjectedSample> points,
                            double radius = kDefaultHexRadius);

inline constexpr std::size_t kDefaultStripeCount = 16;

/// Index of the left-closed interval holding s in [lo, hi] split into `count`
/// stripes; the last interval is closed.
std::size_t stripe_index(double s, std::size_t count = kDefaultStripeCount, double lo = 0.0,
                         double hi = 1.0);

struct Stripe {
  std::size_t index = 0;
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
  std::vector<std::size_t> class_counts;  ///< by true label

  friend bool operator==(const Stripe&, const Stripe&) = default;
};

/// Stripes over [lo, hi]; samples outside the range are ignored.
std::vector<Stripe> stripe_histogram(std::span<const double> scores,
                                     std::span<const std::size_t> labels, std::size_t class_count,
                                     std::size_t count = kDefaultStripeCount, double lo = 0.0,
                                     double hi = 1.0);

// ------------------------------------------------------------------ keywords

/// log(tf + 1) * contribution
double word_importance(double tf, double contribution);

struct WordStats {
  std::string word;
  std::size_t tf = 0;             ///< occurrences in the selection
  double contribution = 0.0;      ///< mean contribution over those occurrences
  double importance = 0.0;
  std::array<std::size_t, 3> polarity_histogram{};  ///< indexed by Polarity
  Polarity dominant = Polarity::Irrelevant;

  friend bool operator==(const WordStats&, const WordStats&) = default;
};

/// Majority polarity; ties resolve to Irrelevant.
Polarity majority_polarity(const std::array<std::size_t, 3>& histogram);

/// Statistics for every non-special word of the selection at one layer,
/// ranked by importance (descending, then word).
std::vector<WordStats> word_stats(std::span<const SampleMeasures* const> selection,
                                  std::size_t layer);

/// First `top_k` of word_stats. Empty selection throws EmptySelection.
std::vector<WordStats> select_keywords(std::span<const SampleMeasures* const> selection,
                                       std::size_t layer, std::size_t top_k);

// -------------------------------------------------------- word contribution

struct WordScore {
  std::string word;
  double value = 0.0;

  friend bool operator==(const WordScore&, const WordScore&) = default;
};

inline constexpr std::size_t kDefaultGroupCount = 10;

/// Sorted descending by value (ties by word) and cut into `groups` runs whose
/// sizes differ by at most one, larger runs first.
std::vector<std::vector<WordScore>> percentile_groups(std::vector<WordScore> words,
                                                      std::size_t groups = kDefaultGroupCount);

struct WordSeries {
  std::string word;
  std::vector<double> values;  ///< one per layer
};

struct TrendingWord {
  std::string word;
  double change = 0.0;  ///< last - first

  friend bool operator==(const TrendingWord&, const TrendingWord&) = default;
};

struct Trending {
  std::vector<TrendingWord> increasing;
  std::vector<TrendingWord> decreasing;

  friend bool operator==(const Trending&, const Trending&) = default;
};

/// Monotone series with at least one strict step, ranked by |last - first|.
Trending detect_trending(std::span<const WordSeries> series, std::size_t k = 2);

/// Replaces each layer's values by their percentile rank in [0, 1] among all
/// series at that layer (ties share the mean rank).
std::vector<WordSeries> rank_series(std::span<const WordSeries> series);

// -------------------------------------------------------------- word context

/// One occurrence of a word with everything its context clustering needs.
struct ContextOccurrence {
  std::string sample_id;
  std::size_t position = 0;
  std::vector<std::string> tokens;
  std::vector<ContextVector> contexts;  ///< [layer-1], each over positions
  std::vector<double> contributions;    ///< [layer-1]
  std::vector<Polarity> polarities;     ///< [layer-1]
};

struct ContextPhrase {
  std::string text;
  std::size_t frequency = 0;
  double mean_contribution = 0.0;
  double score = 0.0;  ///< frequency * mean_contribution

  friend bool operator==(const ContextPhrase&, const ContextPhrase&) = default;
};

inline constexpr double kDefaultRelevanceCutoff = 0.1;

/// Maximal window around the occurrence whose neighbors all carry context
/// mass above the cutoff, as a space-joined string.
std::string context_phrase(const ContextOccurrence& occ, std::size_t layer,
                           double cutoff = kDefaultRelevanceCutoff);

/// Phrases of the given occurrences aggregated and ranked by score (then text).
std::vector<ContextPhrase> extract_context_phrases(std::span<const ContextOccurrence> occurrences,
                                                   std::span<const std::size_t> members,
                                                   std::size_t layer,
                                                   double cutoff = kDefaultRelevanceCutoff);

/// Cluster label per item; labels are 0..k-1 in order of first appearance.
using Labels = std::vector<std::size_t>;

double adjusted_rand_index(const Labels& a, const Labels& b);

inline constexpr double kDefaultSimilarityThreshold = 0.8;

/// Layer 1 always; layer l when its ARI against the last selected layer is
/// below the threshold. Returns 1-based layers.
std::vector<std::size_t> representative_layers(const std::vector<Labels>& per_layer,
                                               double similarity_threshold = kDefaultSimilarityThreshold);

/// Unconstrained average-linkage cosine clustering, optionally seeded with an
/// initial labelling (clusters whose mean internal distance exceeds the
/// threshold are split into singletons first).
Labels agglomerate(const std::vector<std::vector<double>>& vectors, double threshold,
                   const Labels* init = nullptr);

/// Context vector of an occurrence mapped onto `vocabulary` (summing mass of
/// equal tokens), leaving out the occurrence's own position.
std::vector<double> vocabulary_context(const ContextOccurrence& occ, std::size_t layer,
                                       const std::vector<std::string>& vocabulary);

struct ContextCluster {
  std::size_t layer = 0;  ///< 1-based
  std::vector<std::size_t> members;  ///< occurrence indices, ascending
  std::array<std::size_t, 3> polarity_counts{};
  Polarity majority = Polarity::Irrelevant;
  std::vector<ContextPhrase> phrases;
};

struct ContextEdge {
  std::size_t from = 0;  ///< index into ContextClusterTree::clusters
  std::size_t to = 0;
  std::size_t shared = 0;
  double proportion = 0.0;  ///< shared / |from|
};

struct ContextClusterConfig {
  double merge_threshold = 0.35;
  double similarity_threshold = kDefaultSimilarityThreshold;
  double relevance_cutoff = kDefaultRelevanceCutoff;
  std::size_t max_phrases = 5;
};

struct ContextClusterTree {
  std::string word;
  std::vector<std::size_t> layers;  ///< representative layers, ascending
  std::vector<ContextCluster> clusters;
  std::vector<ContextEdge> edges;   ///< between consecutive representative layers
  std::vector<Labels> labels;       ///< every layer, [layer-1][occurrence]
  std::vector<std::string> sample_ids;  ///< per occurrence
  std::vector<std::size_t> positions;   ///< per occurrence
};

ContextClusterTree cluster_word_contexts(const std::string& word,
                                         std::span<const ContextOccurrence> occurrences,
                                         const ContextClusterConfig& cfg = {});

}  // namespace wordflow
