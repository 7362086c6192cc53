#include "wordflow/measures.hpp"

#include "wordflow/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace wordflow {

namespace {

constexpr double kDenominatorEps = 1e-8;
constexpr std::uint64_t kContextStream = 0xC0;
constexpr std::uint64_t kEdgeStream = 0xED;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

double checked(double v) {
  if (!std::isfinite(v)) throw NumericalError("scorer returned a non-finite value");
  return v;
}

LayerStates perturbable_copy(const LayerStates& states) { return states; }

Vector gather(const LayerStates& states, std::span<const std::size_t> positions) {
  Eigen::Index total = 0;
  for (auto p : positions) total += states[p].size();
  Vector out(total);
  Eigen::Index offset = 0;
  for (auto p : positions) {
    out.segment(offset, states[p].size()) = states[p];
    offset += states[p].size();
  }
  return out;
}

}  // namespace

void ClassPair::validate(std::size_t class_count) const {
  if (p == q) throw InvalidInput("class pair needs two distinct classes");
  if (p >= class_count || q >= class_count) {
    throw InvalidInput("class pair (" + std::to_string(p) + "," + std::to_string(q) +
                       ") out of range for " + std::to_string(class_count) + " classes");
  }
}

double normalized_score(double s_p, double s_q) {
  if (!(s_p >= 0.0) || !(s_q >= 0.0)) throw InvalidInput("class scores must be non-negative");
  const double total = s_p + s_q;
  if (total <= 0.0) throw DegenerateScores("s_p + s_q is zero");
  return s_p / total;
}

double normalized_score(std::span<const double> class_scores, ClassPair pair) {
  pair.validate(class_scores.size());
  return normalized_score(class_scores[pair.p], class_scores[pair.q]);
}

CorpusNormalization CorpusNormalization::from_scores(std::span<const double> scores) {
  CorpusNormalization norm;
  norm.sample_count = scores.size();
  if (scores.empty()) {
    norm.sigma_s = kFloor;
    return norm;
  }
  const double mean = std::accumulate(scores.begin(), scores.end(), 0.0) / scores.size();
  double ss = 0.0;
  for (double s : scores) ss += (s - mean) * (s - mean);
  norm.sigma_s = std::max(std::sqrt(ss / scores.size()), kFloor);
  return norm;
}

void MeasureConfig::validate() const {
  if (!(xi >= 0.0)) throw InvalidInput("xi must be >= 0");
  if (mc_samples < 2) throw InvalidInput("mc_samples must be >= 2");
  const auto& s = sigma_search;
  if (!(s.lambda > 0.0) || !(s.tolerance > 0.0)) throw InvalidInput("invalid sigma search");
  if (!(s.min_factor > 0.0) || !(s.min_factor < s.max_factor)) {
    throw InvalidInput("sigma search factors must satisfy 0 < min < max");
  }
  if (s.sigma_min && !(*s.sigma_min > 0.0)) throw InvalidInput("sigma_min must be > 0");
  if (s.sigma_min && s.sigma_max && !(*s.sigma_min < *s.sigma_max)) {
    throw InvalidInput("sigma_min must be < sigma_max");
  }
}

std::string_view to_string(Polarity polarity) {
  switch (polarity) {
    case Polarity::PRelevant: return "P";
    case Polarity::QRelevant: return "Q";
    case Polarity::Irrelevant: return "I";
  }
  return "I";
}

Polarity polarity_from_string(std::string_view name) {
  if (name == "P") return Polarity::PRelevant;
  if (name == "Q") return Polarity::QRelevant;
  if (name == "I") return Polarity::Irrelevant;
  throw InvalidInput("unknown polarity '" + std::string(name) + "'");
}

Polarity classify_polarity(double delta_s, double xi) {
  if (delta_s > xi) return Polarity::QRelevant;
  if (delta_s < -xi) return Polarity::PRelevant;
  return Polarity::Irrelevant;
}

std::uint64_t derive_seed(std::uint64_t master, std::string_view sample_id, std::uint64_t layer,
                          std::uint64_t word) {
  std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
  for (unsigned char c : sample_id) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  std::uint64_t x = splitmix64(master);
  x = splitmix64(x ^ h);
  x = splitmix64(x ^ layer);
  return splitmix64(x ^ (word * 0x9E3779B97F4A7C15ULL));
}

Eigen::MatrixXd antithetic_draws(Eigen::Index dim, std::size_t n_samples, std::uint64_t seed) {
  const auto half = static_cast<Eigen::Index>(std::max<std::size_t>(1, n_samples / 2));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd z(dim, half);
  for (Eigen::Index k = 0; k < half; ++k)
    for (Eigen::Index d = 0; d < dim; ++d) z(d, k) = normal(rng);
  for (Eigen::Index d = 0; d < dim; ++d) {
    const double ms = z.row(d).squaredNorm() / static_cast<double>(half);
    if (ms > 0.0) z.row(d) /= std::sqrt(ms);
  }
  return z;
}

SigmaBounds sigma_bounds(const Vector& h, const SigmaSearch& search) {
  double scale = h.size() > 0 ? h.norm() / std::sqrt(static_cast<double>(h.size())) : 0.0;
  if (!(scale > 1e-12)) scale = 1.0;
  SigmaBounds b{search.min_factor * scale, search.max_factor * scale};
  if (search.sigma_min) b.lo = *search.sigma_min;
  if (search.sigma_max) b.hi = *search.sigma_max;
  if (!(b.lo > 0.0) || !(b.lo <= b.hi)) throw InvalidInput("empty sigma search interval");
  return b;
}

double estimate_sigma_star(const Scorer& phi, const Vector& h, const CorpusNormalization& norm,
                           const MeasureConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (!h.allFinite()) throw NumericalError("hidden state is not finite");
  const SigmaBounds bounds = sigma_bounds(h, cfg.sigma_search);
  const Eigen::MatrixXd z = antithetic_draws(h.size(), cfg.mc_samples, seed);
  const double base = checked(phi(h));
  const double inv_var = 1.0 / (norm.sigma_s * norm.sigma_s);
  const double lambda = cfg.sigma_search.lambda;
  Vector work(h.size());

  auto objective = [&](double sigma) {
    double sum = 0.0;
    for (Eigen::Index k = 0; k < z.cols(); ++k) {
      work = h + sigma * z.col(k);
      const double up = checked(phi(work)) - base;
      work = h - sigma * z.col(k);
      const double down = checked(phi(work)) - base;
      sum += up * up + down * down;
    }
    const double penalty = sum / (2.0 * static_cast<double>(z.cols())) * inv_var;
    return std::log(sigma) - lambda * penalty;
  };

  if (bounds.lo == bounds.hi) return bounds.lo;

  const double inv_golden = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = std::log(bounds.lo);
  double b = std::log(bounds.hi);
  double c = b - inv_golden * (b - a);
  double d = a + inv_golden * (b - a);
  double fc = objective(std::exp(c));
  double fd = objective(std::exp(d));
  while (b - a > cfg.sigma_search.tolerance) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_golden * (b - a);
      fc = objective(std::exp(c));
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_golden * (b - a);
      fd = objective(std::exp(d));
    }
  }
  // The interior optimum competes with both ends so monotone objectives return
  // the exact bound; ties go to the larger sigma.
  const double interior = std::exp(0.5 * (a + b));
  double best = bounds.hi;
  double best_value = objective(bounds.hi);
  for (double candidate : {interior, bounds.lo}) {
    const double value = objective(candidate);
    if (value > best_value) {
      best = candidate;
      best_value = value;
    }
  }
  return best;
}

DeltaEstimate estimate_delta_s(const Scorer& phi, const Vector& h, double sigma,
                               const CorpusNormalization& norm, std::size_t n_samples,
                               std::uint64_t seed) {
  if (!(sigma > 0.0)) throw InvalidInput("sigma must be > 0");
  if (n_samples < 2) throw InvalidInput("n_samples must be >= 2");
  if (!h.allFinite()) throw NumericalError("hidden state is not finite");
  const Eigen::MatrixXd z = antithetic_draws(h.size(), n_samples, seed);
  const double base = checked(phi(h));
  const auto pairs = static_cast<std::size_t>(z.cols());
  constexpr double kRoundingFloor = 256.0 * std::numeric_limits<double>::epsilon();
  Vector work(h.size());
  std::vector<double> values(pairs);
  for (std::size_t k = 0; k < pairs; ++k) {
    const auto col = static_cast<Eigen::Index>(k);
    work = h + sigma * z.col(col);
    const double up_score = checked(phi(work));
    work = h - sigma * z.col(col);
    const double down_score = checked(phi(work));
    const double up = up_score - base;
    const double down = down_score - base;
    double sum = up + down;
    const double scale = std::abs(up_score) + std::abs(down_score) + 2.0 * std::abs(base) +
                         std::abs(up) + std::abs(down);
    if (std::abs(sum) <= kRoundingFloor * scale) sum = 0.0;
    values[k] = 0.5 * sum / norm.sigma_s;
  }
  DeltaEstimate out;
  out.estimate = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(pairs);
  if (pairs > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.estimate) * (v - out.estimate);
    out.standard_error = std::sqrt(ss / static_cast<double>(pairs - 1) / static_cast<double>(pairs));
  }
  return out;
}

Scorer make_word_scorer(const ModelAdapter& adapter, const ActivationRecord& rec,
                        std::size_t layer, std::size_t word, ClassPair pair) {
  const auto& states = rec.layer(layer);
  auto positions = adapter.affected_positions(layer, word, states.size());
  return [&adapter, layer, pair, positions = std::move(positions),
          work = perturbable_copy(states)](const Vector& h) mutable {
    scatter_word_vector(work, positions, h);
    const auto scores = adapter.predict_from_layer(layer, work);
    return normalized_score(scores, pair);
  };
}

std::vector<std::vector<ContextVector>> context_vectors(const ModelAdapter& adapter,
                                                        const ActivationRecord& rec,
                                                        std::span<const double> input_sigma,
                                                        const MeasureConfig& cfg,
                                                        std::uint64_t seed) {
  const std::size_t layers = rec.layer_count();
  const std::size_t m = rec.token_count();
  if (input_sigma.size() != m) throw InvalidInput("one input sigma per word required");
  // raw[l][i][j]
  std::vector<Eigen::MatrixXd> raw(layers, Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m),
                                                                   static_cast<Eigen::Index>(m)));
  std::vector<std::vector<std::vector<std::size_t>>> positions(layers);
  std::vector<std::vector<Vector>> original(layers);
  for (std::size_t l = 1; l <= layers; ++l) {
    for (std::size_t i = 0; i < m; ++i) {
      positions[l - 1].push_back(adapter.affected_positions(l, i, m));
      original[l - 1].push_back(gather(rec.hidden[l - 1], positions[l - 1].back()));
      if (!original[l - 1].back().allFinite()) throw NumericalError("hidden state is not finite");
    }
  }
  const Eigen::Index input_dim = original[0].empty() ? 0 : original[0][0].size();
  const Eigen::MatrixXd z = antithetic_draws(input_dim, cfg.mc_samples, seed);
  const double draws = 2.0 * static_cast<double>(z.cols());

  for (std::size_t j = 0; j < m; ++j) {
    const auto& pj = positions[0][j];
    const Vector& hj = original[0][j];
    for (Eigen::Index k = 0; k < z.cols(); ++k) {
      for (double sign : {1.0, -1.0}) {
        LayerStates states = rec.hidden[0];
        if (z.rows() != hj.size()) throw InvalidInput("ragged input layer");
        scatter_word_vector(states, pj, Vector(hj + sign * input_sigma[j] * z.col(k)));
        for (std::size_t l = 1; l <= layers; ++l) {
          if (l > 1) states = adapter.propagate(l - 1, states);
          for (std::size_t i = 0; i < m; ++i) {
            const Vector now = gather(states, positions[l - 1][i]);
            if (!now.allFinite()) throw NumericalError("propagated state is not finite");
            raw[l - 1](static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) +=
                (now - original[l - 1][i]).norm();
          }
        }
      }
    }
  }

  std::vector<std::vector<ContextVector>> out(layers, std::vector<ContextVector>(m));
  for (std::size_t l = 0; l < layers; ++l) {
    for (std::size_t i = 0; i < m; ++i) {
      const double denom = original[l][i].norm() + kDenominatorEps;
      ContextVector c(m);
      double total = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        c[j] = raw[l](static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) / draws / denom;
        total += c[j];
      }
      if (total > 0.0) {
        for (double& v : c) v /= total;
      } else {
        std::fill(c.begin(), c.end(), 1.0 / static_cast<double>(m));
      }
      out[l][i] = std::move(c);
    }
  }
  return out;
}

ContextVector context_vector(const ModelAdapter& adapter, const ActivationRecord& rec,
                             std::size_t layer, std::size_t word,
                             std::span<const double> input_sigma, const MeasureConfig& cfg,
                             std::uint64_t seed) {
  if (layer < 1 || layer > rec.layer_count() || word >= rec.token_count()) {
    throw InvalidInput("context vector index out of range");
  }
  return context_vectors(adapter, rec, input_sigma, cfg, seed)[layer - 1][word];
}

Eigen::MatrixXd edge_weights(const ModelAdapter& adapter, const ActivationRecord& rec,
                             std::size_t layer, std::span<const double> layer_sigma,
                             const MeasureConfig& cfg, std::uint64_t seed) {
  if (layer < 1 || layer >= rec.layer_count()) {
    throw InvalidInput("edge layer must be in [1, L-1]");
  }
  const std::size_t m = rec.token_count();
  if (layer_sigma.size() != m) throw InvalidInput("one sigma per word required");
  const auto& states = rec.hidden[layer - 1];
  const auto& next_states = rec.hidden[layer];
  std::vector<std::vector<std::size_t>> src_pos, dst_pos;
  std::vector<Vector> src, dst;
  for (std::size_t i = 0; i < m; ++i) {
    src_pos.push_back(adapter.affected_positions(layer, i, m));
    dst_pos.push_back(adapter.affected_positions(layer + 1, i, m));
    src.push_back(gather(states, src_pos.back()));
    dst.push_back(gather(next_states, dst_pos.back()));
  }
  const auto mi = static_cast<Eigen::Index>(m);
  Eigen::MatrixXd raw = Eigen::MatrixXd::Zero(mi, mi);
  const Eigen::MatrixXd z = antithetic_draws(src[0].size(), cfg.mc_samples, seed);
  for (std::size_t i = 0; i < m; ++i) {
    if (src[i].size() != z.rows()) throw InvalidInput("ragged source layer");
    for (Eigen::Index k = 0; k < z.cols(); ++k) {
      for (double sign : {1.0, -1.0}) {
        LayerStates work = states;
        scatter_word_vector(work, src_pos[i], Vector(src[i] + sign * layer_sigma[i] * z.col(k)));
        const LayerStates next = adapter.propagate(layer, work);
        for (std::size_t j = 0; j < m; ++j) {
          const Vector now = gather(next, dst_pos[j]);
          if (!now.allFinite()) throw NumericalError("propagated state is not finite");
          raw(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) += (now - dst[j]).norm();
        }
      }
    }
  }
  for (Eigen::Index j = 0; j < mi; ++j) {
    raw.col(j) /= (dst[static_cast<std::size_t>(j)].norm() + kDenominatorEps);
    const double total = raw.col(j).sum();
    if (total > 0.0) raw.col(j) /= total;
  }
  return raw;
}

EdgeMI edge_mi(const ModelAdapter& adapter, const ActivationRecord& rec, std::size_t layer,
               std::size_t i, std::size_t j, std::span<const double> layer_sigma,
               const MeasureConfig& cfg, std::uint64_t seed) {
  const std::size_t gap = i > j ? i - j : j - i;
  if (gap <= 1) throw InvalidInput("edge MI is defined for non-adjacent words only");
  if (i >= rec.token_count() || j >= rec.token_count()) throw InvalidInput("word index out of range");
  const Eigen::MatrixXd w = edge_weights(adapter, rec, layer, layer_sigma, cfg, seed);
  return EdgeMI{i, j, layer, w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))};
}

std::vector<EdgeMI> non_adjacent_edges(const Eigen::MatrixXd& weights, std::size_t layer) {
  std::vector<EdgeMI> out;
  for (Eigen::Index i = 0; i < weights.rows(); ++i) {
    for (Eigen::Index j = 0; j < weights.cols(); ++j) {
      if (std::abs(i - j) > 1) {
        out.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(j), layer, weights(i, j)});
      }
    }
  }
  return out;
}

SampleMeasures compute_sample_measures(const ModelAdapter& adapter, const TokenSequence& seq,
                                       ClassPair pair, const CorpusNormalization& norm,
                                       const MeasureConfig& cfg) {
  ActivationRecord rec = adapter.forward_full(seq);
  if (rec.tokens.empty()) {
    rec.tokens = seq.tokens;
    rec.special_flags = seq.special_flags;
  }
  return compute_sample_measures(adapter, rec, pair, norm, cfg);
}

SampleMeasures compute_sample_measures(const ModelAdapter& adapter, const ActivationRecord& rec,
                                       ClassPair pair, const CorpusNormalization& norm,
                                       const MeasureConfig& cfg) {
  cfg.validate();
  rec.validate();
  const std::size_t layers = rec.layer_count();
  const std::size_t m = rec.token_count();
  SampleMeasures out;
  out.sample_id = rec.sample_id;
  out.tokens = rec.tokens;
  out.special_flags = rec.special_flags;
  if (out.tokens.size() != m) {
    out.tokens.assign(m, std::string{});
    out.special_flags.assign(m, false);
  }
  out.class_scores = rec.class_scores;
  out.score = normalized_score(rec.class_scores, pair);
  {
    const auto& last = rec.hidden.back();
    Vector mean = Vector::Zero(last.front().size());
    for (const auto& v : last) mean += v;
    mean /= static_cast<double>(m);
    out.embedding.assign(mean.data(), mean.data() + mean.size());
  }

  auto with_context = [&](auto&& fn, std::size_t layer, std::size_t word) {
    try {
      return fn();
    } catch (const Error& e) {
      raise(e.code(), "sample '" + rec.sample_id + "' layer " + std::to_string(layer) +
                          " word " + std::to_string(word) + ": " + e.what());
    }
  };

  out.words.assign(layers, std::vector<WordMeasure>(m));
  for (std::size_t l = 1; l <= layers; ++l) {
    for (std::size_t i = 0; i < m; ++i) {
      out.words[l - 1][i] = with_context(
          [&] {
            const std::uint64_t seed = derive_seed(cfg.master_seed, rec.sample_id, l, i);
            const Vector h = hidden_for_word(rec, adapter, l, i);
            const Scorer phi = make_word_scorer(adapter, rec, l, i, pair);
            WordMeasure wm;
            wm.sigma_star = estimate_sigma_star(phi, h, norm, cfg, seed);
            const DeltaEstimate d = estimate_delta_s(phi, h, wm.sigma_star, norm, cfg.mc_samples, seed);
            wm.delta_s = d.estimate;
            wm.standard_error = d.standard_error;
            wm.contribution = std::abs(d.estimate);
            wm.polarity = classify_polarity(d.estimate, cfg.xi);
            return wm;
          },
          l, i);
    }
  }

  auto sigmas = [&](std::size_t l) {
    std::vector<double> s(m);
    for (std::size_t i = 0; i < m; ++i) s[i] = out.words[l - 1][i].sigma_star;
    return s;
  };

  out.inter_word = adapter.info().supports_propagation;
  if (out.inter_word) {
    const auto input_sigma = sigmas(1);
    out.contexts = with_context(
        [&] {
          return context_vectors(adapter, rec, input_sigma,
                                 cfg, derive_seed(cfg.master_seed, rec.sample_id, 0, kContextStream));
        },
        1, 0);
    for (std::size_t l = 1; l < layers; ++l) {
      const auto layer_sigma = sigmas(l);
      out.edges.push_back(with_context(
          [&] {
            const auto w = edge_weights(adapter, rec, l, layer_sigma, cfg,
                                        derive_seed(cfg.master_seed, rec.sample_id, l, kEdgeStream));
            return non_adjacent_edges(w, l);
          },
          l, 0));
    }
  } else {
    out.contexts.assign(layers, std::vector<ContextVector>(m, ContextVector(m, 0.0)));
    for (auto& layer : out.contexts)
      for (std::size_t i = 0; i < m; ++i) layer[i][i] = 1.0;
    out.edges.assign(layers > 0 ? layers - 1 : 0, {});
  }
  return out;
}

}  // namespace wordflow
