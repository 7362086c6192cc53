#pragma once

#include "wordflow/analytics.hpp"

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace wordflow {

struct LayoutConfig {
  double alpha = 0.4;
  double beta = 5.0;
  std::size_t grid_size = 64;
  std::size_t max_sweeps = 20;
  /// A sweep that improves the total cost by less than this ends the descent.
  double tolerance = 1e-9;
  /// Per-layer sum of the rescaled target distances, as a fraction of G.
  double fill = 0.8;

  void validate(std::size_t word_count) const;
};

/// y[layer-1][word], integer grid rows.
using GridLayout = std::vector<std::vector<int>>;

/// D[layer-1][word]; D[l][0] is unused (no word before the first).
using DistanceProfile = std::vector<std::vector<double>>;

/// Raw D from context vectors: D[l][i] = ||c_i - c_(i-1)||.
DistanceProfile distance_profile(const std::vector<std::vector<ContextVector>>& contexts);

/// Each layer scaled so its distances sum to fill * G (all-zero layers stay zero).
DistanceProfile rescale_profile(const DistanceProfile& raw, std::size_t grid_size, double fill);

/// Sum over layers and words of
///   alpha * [(y_l - y_(l-1))^2 + beta * [y_l != y_(l-1)]]       (l > 1)
///   + (1 - alpha) * (|y_i - y_(i-1)| - D_i)^2                    (i > 0).
/// Throws ConstraintViolation when a layer is not non-decreasing.
double storyline_cost(const GridLayout& y, const DistanceProfile& d, double alpha, double beta);

/// The terms of storyline_cost that involve layer `layer` (1-based).
double layer_cost(const GridLayout& y, const DistanceProfile& d, std::size_t layer, double alpha,
                  double beta);

/// Exact minimizer over non-decreasing assignments in [0, G) of the stability
/// terms against the fixed neighbors plus this layer's readability terms.
/// O(M * G^2). Among equal costs the smallest rows win.
std::vector<int> optimize_layer_dp(const std::optional<std::vector<int>>& prev,
                                   const std::optional<std::vector<int>>& next,
                                   std::span<const double> distances, double alpha, double beta,
                                   std::size_t grid_size);

struct StorylineLayout {
  GridLayout y;
  std::size_t grid_size = 0;
  double cost = 0.0;
  std::vector<double> cost_trace;  ///< initial cost, then after every sweep
  std::size_t sweeps = 0;
};

/// `d` must already be on the grid scale (see rescale_profile).
StorylineLayout storyline_layout(const DistanceProfile& d, const LayoutConfig& cfg);

/// Number of (word, layer > 1) positions whose row differs from the layer before.
std::size_t wiggle_count(const GridLayout& y);

// ---------------------------------------------------------------- sweepline

struct Canvas {
  double width = 0.0;
  double height = 0.0;
  double step = 1.0;  ///< candidate grid spacing
};

struct PlacementRequest {
  std::string word;
  double x = 0.0;  ///< desired center
  double y = 0.0;
  double width = 0.0;
  double height = 0.0;
  double importance = 0.0;
};

struct PlacedWord {
  std::string word;
  double x = 0.0;  ///< center
  double y = 0.0;
  double width = 0.0;
  double height = 0.0;
  bool pie = false;
  std::size_t rank = 0;  ///< placement order

  bool overlaps(const PlacedWord& other) const;
};

inline constexpr std::size_t kDefaultPieCount = 5;

/// Greedy placement in descending importance (ties by word, then input order).
/// Each word goes to the first free candidate centre (desired + step * (dx, dy))
/// in increasing L-infinity ring distance, ties to smaller dy then smaller dx.
/// The first `pie_count` words get the pie flag. Output follows input order.
std::vector<PlacedWord> sweepline_place(std::span<const PlacementRequest> words,
                                        const Canvas& canvas,
                                        std::size_t pie_count = kDefaultPieCount);

// ---------------------------------------------------------------------- DAG

struct DagNode {
  std::size_t cluster = 0;  ///< index into ContextClusterTree::clusters
  std::size_t column = 0;   ///< representative-layer index
  std::size_t order = 0;    ///< position within the column
  double x = 0.0;
  double y = 0.0;           ///< centre, in [0, 1]
  double height = 0.0;
};

struct DagEdge {
  std::size_t from = 0;
  std::size_t to = 0;
  double width = 0.0;  ///< sample-flow proportion
};

struct DagLayout {
  std::vector<DagNode> nodes;  ///< same indexing as the tree's clusters
  std::vector<DagEdge> edges;
  std::size_t crossings = 0;
};

/// Crossings between consecutive columns given an order per node.
std::size_t count_crossings(const ContextClusterTree& tree, std::span<const std::size_t> column,
                            std::span<const std::size_t> order);

DagLayout dag_layout(const ContextClusterTree& tree);

}  // namespace wordflow
