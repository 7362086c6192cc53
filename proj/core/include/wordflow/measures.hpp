#pragma once

#include "wordflow/adapter.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace wordflow {

/// The two classes a pairwise analysis restricts the prediction to.
struct ClassPair {
  std::size_t p = 0;
  std::size_t q = 1;

  void validate(std::size_t class_count) const;
  friend bool operator==(const ClassPair&, const ClassPair&) = default;
};

/// s = s_p / (s_p + s_q). Throws DegenerateScores when both are zero.
double normalized_score(double s_p, double s_q);
double normalized_score(std::span<const double> class_scores, ClassPair pair);

struct CorpusNormalization {
  static constexpr double kFloor = 1e-3;

  double sigma_s = 1.0;
  std::size_t sample_count = 0;

  /// Population standard deviation of the normalized scores, floored.
  static CorpusNormalization from_scores(std::span<const double> scores);
};

struct SigmaSearch {
  double lambda = 1.0;
  /// Golden-section stopping width, in natural-log units of sigma.
  double tolerance = 1e-2;
  /// Bounds are these factors times ||h|| / sqrt(dim) unless overridden.
  double min_factor = 1e-4;
  double max_factor = 10.0;
  std::optional<double> sigma_min;
  std::optional<double> sigma_max;
};

struct MeasureConfig {
  double xi = 0.02;
  std::size_t mc_samples = 128;
  SigmaSearch sigma_search;
  std::uint64_t master_seed = 0;

  void validate() const;
};

enum class Polarity : std::uint8_t { PRelevant = 0, QRelevant = 1, Irrelevant = 2 };

std::string_view to_string(Polarity polarity);
Polarity polarity_from_string(std::string_view name);

struct WordMeasure {
  double delta_s = 0.0;
  /// Monte-Carlo standard error of delta_s (diagnostic).
  double standard_error = 0.0;
  double sigma_star = 0.0;
  double contribution = 0.0;  ///< |delta_s|
  Polarity polarity = Polarity::Irrelevant;

  friend bool operator==(const WordMeasure&, const WordMeasure&) = default;
};

/// Distribution over input words (sums to 1).
using ContextVector = std::vector<double>;

struct EdgeMI {
  std::size_t source = 0;
  std::size_t target = 0;
  std::size_t layer = 0;  ///< source layer; target lives at layer + 1
  double weight = 0.0;

  friend bool operator==(const EdgeMI&, const EdgeMI&) = default;
};

/// Maps a (perturbed) word vector to the normalized score s.
using Scorer = std::function<double(const Vector&)>;

struct SigmaBounds {
  double lo = 0.0;
  double hi = 0.0;
};

SigmaBounds sigma_bounds(const Vector& h, const SigmaSearch& search);

/// argmax over sigma in [lo, hi] of
///   J(sigma) = log(sigma) - lambda * E[(phi(h + eps) - phi(h))^2] / sigma_s^2,
/// eps ~ N(0, sigma^2 I), with the expectation taken over one fixed set of
/// antithetic, moment-matched normal draws (common random numbers across
/// candidates), located by golden-section search on log(sigma).
double estimate_sigma_star(const Scorer& phi, const Vector& h, const CorpusNormalization& norm,
                           const MeasureConfig& cfg, std::uint64_t seed);

struct DeltaEstimate {
  double estimate = 0.0;
  double standard_error = 0.0;
};

/// Monte-Carlo mean of (phi(h + eps) - phi(h)) / sigma_s over antithetic
/// pairs (eps, -eps). Pair sums that fall below the rounding floor of their
/// operands count as exactly zero, so a linear phi yields 0.
DeltaEstimate estimate_delta_s(const Scorer& phi, const Vector& h, double sigma,
                               const CorpusNormalization& norm, std::size_t n_samples,
                               std::uint64_t seed);

/// delta_s > xi: Q-relevant; delta_s < -xi: P-relevant; otherwise irrelevant.
Polarity classify_polarity(double delta_s, double xi);

/// Scorer that writes the word vector of `word` into the layer states and
/// returns the normalized score predicted from there.
Scorer make_word_scorer(const ModelAdapter& adapter, const ActivationRecord& rec,
                        std::size_t layer, std::size_t word, ClassPair pair);

/// Stable, order-independent seed for one (sample, layer, word) job.
std::uint64_t derive_seed(std::uint64_t master, std::string_view sample_id, std::uint64_t layer,
                          std::uint64_t word);

/// Standard normal draws as a dim x (n/2) matrix; the caller uses each column
/// and its negation. Each row is rescaled so its mean square is exactly 1.
Eigen::MatrixXd antithetic_draws(Eigen::Index dim, std::size_t n_samples, std::uint64_t seed);

/// Context vectors for every layer and word: c[layer-1][i][j] is the
/// normalized expected relative change of h^(layer)(w_i) when the layer-1
/// representation of w_j is perturbed with N(0, sigma_j^2 I). `input_sigma`
/// holds sigma_j for each word (normally its layer-1 sigma*). Draws are shared
/// across j.
std::vector<std::vector<ContextVector>> context_vectors(const ModelAdapter& adapter,
                                                        const ActivationRecord& rec,
                                                        std::span<const double> input_sigma,
                                                        const MeasureConfig& cfg,
                                                        std::uint64_t seed);

ContextVector context_vector(const ModelAdapter& adapter, const ActivationRecord& rec,
                             std::size_t layer, std::size_t word,
                             std::span<const double> input_sigma, const MeasureConfig& cfg,
                             std::uint64_t seed);

/// weights(i, j): share of the expected relative change of h^(layer+1)(w_j)
/// caused by perturbing h^(layer)(w_i) with N(0, sigma_i^2 I), normalized over
/// sources i. Columns with no response are all zero.
Eigen::MatrixXd edge_weights(const ModelAdapter& adapter, const ActivationRecord& rec,
                             std::size_t layer, std::span<const double> layer_sigma,
                             const MeasureConfig& cfg, std::uint64_t seed);

/// Single non-adjacent edge; |i - j| <= 1 or layer >= L throws InvalidInput.
EdgeMI edge_mi(const ModelAdapter& adapter, const ActivationRecord& rec, std::size_t layer,
               std::size_t i, std::size_t j, std::span<const double> layer_sigma,
               const MeasureConfig& cfg, std::uint64_t seed);

std::vector<EdgeMI> non_adjacent_edges(const Eigen::MatrixXd& weights, std::size_t layer);

/// Everything measured for one sample.
struct SampleMeasures {
  std::string sample_id;
  std::vector<std::string> tokens;
  std::vector<bool> special_flags;
  std::vector<double> class_scores;
  double score = 0.0;                                 ///< normalized s
  std::vector<double> embedding;                      ///< mean of last-layer states
  std::vector<std::vector<WordMeasure>> words;        ///< [layer-1][word]
  std::vector<std::vector<ContextVector>> contexts;   ///< [layer-1][word]
  std::vector<std::vector<EdgeMI>> edges;             ///< [layer-1], layers 1..L-1
  /// False when the adapter cannot propagate; contexts are then one-hot and
  /// there are no edges.
  bool inter_word = true;

  std::size_t layer_count() const { return words.size(); }
  std::size_t token_count() const { return tokens.size(); }

  friend bool operator==(const SampleMeasures&, const SampleMeasures&) = default;
};

SampleMeasures compute_sample_measures(const ModelAdapter& adapter, const TokenSequence& seq,
                                       ClassPair pair, const CorpusNormalization& norm,
                                       const MeasureConfig& cfg);

SampleMeasures compute_sample_measures(const ModelAdapter& adapter, const ActivationRecord& rec,
                                       ClassPair pair, const CorpusNormalization& norm,
                                       const MeasureConfig& cfg);

}  // namespace wordflow
