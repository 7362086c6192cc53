#pragma once

#include "wordflow/measures.hpp"

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace wordflow {

/// Closed word-index interval [start, end].
struct Span {
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - start + 1; }
  friend bool operator==(const Span&, const Span&) = default;
};

struct PhrasePartition {
  std::size_t layer = 0;
  std::vector<Span> spans;

  /// Throws InvalidInput unless the spans are an ordered contiguous cover of
  /// [0, word_count - 1].
  void validate(std::size_t word_count) const;
  std::size_t span_of(std::size_t word) const;

  friend bool operator==(const PhrasePartition&, const PhrasePartition&) = default;
};

inline constexpr double kDefaultMergeThreshold = 0.35;

/// 1 - cos(a, b). Two zero vectors are at distance 0, a zero and a non-zero
/// vector at distance 1.
double cosine_distance(std::span<const double> a, std::span<const double> b);

/// Adjacent-only average-linkage agglomerative clustering. With `prev`, the
/// clustering starts from its spans after splitting into singletons every span
/// whose mean internal pairwise distance exceeds the threshold. Merging always
/// picks the closest adjacent pair (leftmost on ties) and stops once the
/// closest pair is farther than the threshold.
PhrasePartition cluster_adjacent(std::span<const ContextVector> vectors,
                                 const PhrasePartition* prev,
                                 double merge_threshold = kDefaultMergeThreshold,
                                 std::size_t layer = 0);

/// One partition per layer, each initialized from the one below.
std::vector<PhrasePartition> cluster_layers(const std::vector<std::vector<ContextVector>>& contexts,
                                            double merge_threshold = kDefaultMergeThreshold);

enum class LineEventKind : std::uint8_t { LineEnd, PolaritySwitch };

struct LineEvent {
  std::size_t word = 0;
  std::size_t layer = 0;  ///< 1-based
  LineEventKind kind = LineEventKind::LineEnd;
  Polarity from = Polarity::Irrelevant;  ///< PolaritySwitch only
  Polarity to = Polarity::Irrelevant;

  friend bool operator==(const LineEvent&, const LineEvent&) = default;
};

/// 10th percentile (linear interpolation) of every contribution in the
/// sample, floored at 1e-3.
double default_end_epsilon(const std::vector<std::vector<WordMeasure>>& measures);

/// `measures` is [layer-1][word]. Events are ordered by (layer, word, kind).
std::vector<LineEvent> detect_line_events(const std::vector<std::vector<WordMeasure>>& measures,
                                          double end_epsilon);

struct WidthJump {
  std::size_t word = 0;
  std::size_t layer = 0;  ///< the later of the two layers, 1-based

  friend bool operator==(const WidthJump&, const WidthJump&) = default;
};

/// Contribution changes by a factor of at least `ratio` between consecutive
/// layers. Both values are floored at `floor` before taking the ratio.
std::vector<WidthJump> detect_width_jumps(const std::vector<std::vector<WordMeasure>>& measures,
                                          double floor, double ratio = 2.0);

enum class CurveTag : std::uint8_t { TopWeight, Explanatory };

struct Curve {
  EdgeMI edge;
  CurveTag tag = CurveTag::TopWeight;

  friend bool operator==(const Curve&, const Curve&) = default;
};

struct CurveSet {
  std::vector<Curve> curves;  ///< ordered by (source, target)

  std::size_t count(CurveTag tag) const;
  friend bool operator==(const CurveSet&, const CurveSet&) = default;
};

/// A line at layer+1 whose color or width changes, and the polarity it ends
/// up with.
struct CurveEvent {
  std::size_t target = 0;
  Polarity target_polarity = Polarity::Irrelevant;
};

inline constexpr double kDefaultTopFraction = 0.05;

/// Number of TopWeight curves kept out of `edge_count`.
std::size_t top_curve_count(std::size_t edge_count, double top_fraction);

/// Keeps the top_curve_count heaviest edges (ties: lower (source, target)
/// first) and, per event, the heaviest positive-weight edge into the event's
/// target whose source polarity equals the event's target polarity.
/// `source_polarity[i]` is the polarity of word i at the edges' layer.
CurveSet filter_curves(std::span<const EdgeMI> edges, std::span<const CurveEvent> events,
                       std::span<const Polarity> source_polarity,
                       double top_fraction = kDefaultTopFraction);

/// Events at `layer + 1` from polarity switches and width jumps, one per word.
std::vector<CurveEvent> curve_events(std::size_t layer, std::span<const LineEvent> line_events,
                                     std::span<const WidthJump> width_jumps,
                                     std::span<const WordMeasure> next_layer);

}  // namespace wordflow
