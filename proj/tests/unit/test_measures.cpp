#include "support.hpp"

#include "wordflow/error.hpp"
#include "wordflow/measures.hpp"
#include "wordflow/toy_models.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace wordflow;

TEST(GaussHermiteOracle, IntegratesPolynomialMoments) {
  // E[x^2] = mu^2 + sigma^2, E[x^4] = mu^4 + 6 mu^2 s^2 + 3 s^4.
  const double mu = 0.3, s = 1.7;
  EXPECT_NEAR(wftest::gaussian_expectation([](double x) { return x * x; }, mu, s), mu * mu + s * s, 1e-10);
  EXPECT_NEAR(wftest::gaussian_expectation([](double x) { return x * x * x * x; }, mu, s),
              std::pow(mu, 4) + 6 * mu * mu * s * s + 3 * std::pow(s, 4), 1e-8);
}

TEST(NormalizedScore, RestrictsToPair) {
  const std::vector<double> scores{0.2, 0.5, 0.3};
  EXPECT_DOUBLE_EQ(normalized_score(scores, {0, 1}), 0.2 / 0.7);
  EXPECT_DOUBLE_EQ(normalized_score(scores, {2, 0}), 0.3 / 0.5);
  EXPECT_THROW(normalized_score(0.0, 0.0), DegenerateScores);
  EXPECT_THROW(normalized_score(scores, {1, 1}), InvalidInput);
  EXPECT_THROW(normalized_score(scores, {0, 3}), InvalidInput);
}

TEST(CorpusNormalization, PopulationStdWithFloor) {
  const std::vector<double> s{0.1, 0.3, 0.5, 0.9};
  const double mean = 0.45;
  double ss = 0;
  for (double v : s) ss += (v - mean) * (v - mean);
  EXPECT_NEAR(CorpusNormalization::from_scores(s).sigma_s, std::sqrt(ss / 4), 1e-15);
  const std::vector<double> one{0.7};
  EXPECT_EQ(CorpusNormalization::from_scores(one).sigma_s, CorpusNormalization::kFloor);
}

TEST(DeltaS, LinearScorerIsExactlyZero) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0, 1);
  CorpusNormalization norm;
  norm.sigma_s = 0.2;
  for (int trial = 0; trial < 20; ++trial) {
    Vector a(5), h(5);
    for (int k = 0; k < 5; ++k) a(k) = n(rng), h(k) = n(rng) * 3;
    const double b = n(rng);
    const Scorer phi = [&](const Vector& x) { return a.dot(x) + b; };
    const auto d = estimate_delta_s(phi, h, 0.1 + std::abs(n(rng)), norm, 256, rng());
    EXPECT_EQ(d.estimate, 0.0);
  }
}

TEST(DeltaS, SigmoidMatchesQuadratureOracle) {
  const double a = 1.3, h0 = 0.4, sigma = 0.8, sigma_s = 0.25;
  const Scorer phi = [&](const Vector& x) { return wftest::sigmoid(a * x(0)); };
  CorpusNormalization norm;
  norm.sigma_s = sigma_s;
  const double oracle =
      (wftest::gaussian_expectation([&](double x) { return wftest::sigmoid(a * x); }, h0, sigma) -
       wftest::sigmoid(a * h0)) /
      sigma_s;
  const auto d = estimate_delta_s(phi, Vector::Constant(1, h0), sigma, norm, 10000, 42);
  EXPECT_NEAR(d.estimate, oracle, 0.02 * std::abs(oracle));
  EXPECT_GT(d.standard_error, 0.0);
  EXPECT_LT(std::abs(d.estimate - oracle), 5 * d.standard_error + 1e-12);
}

TEST(DeltaS, StandardErrorShrinksLikeInverseRootN) {
  const Scorer phi = [](const Vector& x) { return wftest::sigmoid(2.0 * x(0) + x(1)); };
  CorpusNormalization norm;
  const Vector h = Eigen::Vector2d(0.3, -0.2);
  const double se_small = estimate_delta_s(phi, h, 1.0, norm, 1000, 1).standard_error;
  const double se_large = estimate_delta_s(phi, h, 1.0, norm, 16000, 1).standard_error;
  EXPECT_NEAR(se_small / se_large, 4.0, 0.8);
}

TEST(DeltaS, DeterministicPerSeed) {
  const Scorer phi = [](const Vector& x) { return std::tanh(x.sum()); };
  CorpusNormalization norm;
  const Vector h = Eigen::Vector3d(0.1, 0.2, 0.3);
  EXPECT_EQ(estimate_delta_s(phi, h, 0.5, norm, 64, 9).estimate,
            estimate_delta_s(phi, h, 0.5, norm, 64, 9).estimate);
  EXPECT_THROW(estimate_delta_s(phi, h, 0.0, norm, 64, 9), InvalidInput);
  EXPECT_THROW(estimate_delta_s(phi, h, 0.5, norm, 1, 9), InvalidInput);
}

TEST(SigmaStar, LinearClosedForm) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 20; ++trial) {
    const double a = 0.2 + 3 * u(rng), lambda = 0.3 + 2 * u(rng), sigma_s = 0.05 + 0.4 * u(rng);
    MeasureConfig cfg;
    cfg.sigma_search.lambda = lambda;
    cfg.sigma_search.sigma_min = 1e-4;
    cfg.sigma_search.sigma_max = 1e2;
    CorpusNormalization norm;
    norm.sigma_s = sigma_s;
    const Scorer phi = [&](const Vector& x) { return a * x(0); };
    const double got = estimate_sigma_star(phi, Vector::Constant(1, 0.7), norm, cfg, rng());
    const double want = std::clamp(sigma_s / (a * std::sqrt(2 * lambda)), 1e-4, 1e2);
    EXPECT_LE(std::abs(std::log(got) - std::log(want)), 2 * cfg.sigma_search.tolerance);
  }
}

TEST(SigmaStar, QuadraticMatchesGridScan) {
  // phi = x^2 at h; the expected penalty over fixed draws is computed by a
  // brute-force scan of the same objective on a fine log grid.
  const double h0 = 0.5;
  MeasureConfig cfg;
  cfg.mc_samples = 64;
  cfg.sigma_search.sigma_min = 1e-3;
  cfg.sigma_search.sigma_max = 10.0;
  CorpusNormalization norm;
  norm.sigma_s = 0.3;
  const Scorer phi = [](const Vector& x) { return x(0) * x(0); };
  const std::uint64_t seed = 5;
  const double got = estimate_sigma_star(phi, Vector::Constant(1, h0), norm, cfg, seed);
  const Eigen::MatrixXd z = antithetic_draws(1, 64, seed);
  auto J = [&](double s) {
    double sum = 0;
    for (Eigen::Index k = 0; k < z.cols(); ++k) {
      const double e = s * z(0, k);
      const double up = (h0 + e) * (h0 + e) - h0 * h0;
      const double dn = (h0 - e) * (h0 - e) - h0 * h0;
      sum += up * up + dn * dn;
    }
    return std::log(s) - sum / (2.0 * z.cols()) / (norm.sigma_s * norm.sigma_s);
  };
  double best = 0, best_j = -1e300;
  for (double ls = std::log(1e-3); ls <= std::log(10.0); ls += 1e-4) {
    if (J(std::exp(ls)) > best_j) best_j = J(std::exp(ls)), best = std::exp(ls);
  }
  EXPECT_LE(std::abs(std::log(got) - std::log(best)), 2 * cfg.sigma_search.tolerance);
}

TEST(SigmaStar, ConstantScorerReturnsUpperBound) {
  MeasureConfig cfg;
  CorpusNormalization norm;
  const Vector h = Eigen::Vector2d(3.0, 4.0);
  const auto bounds = sigma_bounds(h, cfg.sigma_search);
  EXPECT_DOUBLE_EQ(bounds.hi, 10.0 * 5.0 / std::sqrt(2.0));
  const double got = estimate_sigma_star([](const Vector&) { return 0.4; }, h, norm, cfg, 1);
  EXPECT_EQ(got, bounds.hi);
}

TEST(AntitheticDraws, RowsHaveUnitMeanSquare) {
  const auto z = antithetic_draws(3, 100, 8);
  ASSERT_EQ(z.cols(), 50);
  for (Eigen::Index r = 0; r < 3; ++r) EXPECT_NEAR(z.row(r).squaredNorm() / 50, 1.0, 1e-12);
}

TEST(Polarity, MarginBoundaries) {
  const double xi = 0.02, eps = 1e-9;
  EXPECT_EQ(classify_polarity(-xi - eps, xi), Polarity::PRelevant);
  EXPECT_EQ(classify_polarity(-xi, xi), Polarity::Irrelevant);
  EXPECT_EQ(classify_polarity(0.0, xi), Polarity::Irrelevant);
  EXPECT_EQ(classify_polarity(xi, xi), Polarity::Irrelevant);
  EXPECT_EQ(classify_polarity(xi + eps, xi), Polarity::QRelevant);
  EXPECT_EQ(polarity_from_string(to_string(Polarity::QRelevant)), Polarity::QRelevant);
  EXPECT_THROW(polarity_from_string("X"), InvalidInput);
}

TEST(DeriveSeed, DependsOnEveryComponent) {
  const auto base = derive_seed(1, "a", 1, 0);
  EXPECT_EQ(base, derive_seed(1, "a", 1, 0));
  EXPECT_NE(base, derive_seed(2, "a", 1, 0));
  EXPECT_NE(base, derive_seed(1, "b", 1, 0));
  EXPECT_NE(base, derive_seed(1, "a", 2, 0));
  EXPECT_NE(base, derive_seed(1, "a", 1, 1));
}

namespace {

SampleMeasures measure_toy(ToyVariant v, const std::string& text, std::uint64_t seed = 2) {
  ToyModel model(ToyModelSpec::random(v, {"a", "b", "c", "d"}, 4, 2, 3, seed));
  MeasureConfig cfg;
  cfg.mc_samples = 32;
  CorpusNormalization norm;
  norm.sigma_s = 0.2;
  return compute_sample_measures(model, model.tokenize("s", text), {0, 1}, norm, cfg);
}

}  // namespace

TEST(Context, FirstLayerIsOneHot) {
  const auto m = measure_toy(ToyVariant::Attention, "a b c d");
  const std::size_t n = m.token_count();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) EXPECT_NEAR(m.contexts[0][i][j], i == j ? 1.0 : 0.0, 1e-12);
}

TEST(Context, TokenwiseModelStaysOneHotAtEveryLayer) {
  const auto m = measure_toy(ToyVariant::BagOfEmbeddings, "a b c");
  for (const auto& layer : m.contexts)
    for (std::size_t i = 0; i < layer.size(); ++i)
      for (std::size_t j = 0; j < layer.size(); ++j) EXPECT_NEAR(layer[i][j], i == j ? 1.0 : 0.0, 1e-12);
  for (const auto& layer : m.edges)
    for (const auto& e : layer) EXPECT_EQ(e.weight, 0.0);
}

TEST(Context, UniformAttentionSpreadsMassEvenly) {
  // Zero query/key weights make attention exactly uniform: every word at
  // layer 2 mixes all inputs with equal weight.
  auto spec = ToyModelSpec::random(ToyVariant::Attention, {"a", "b", "c"}, 4, 2, 2, 3);
  spec.query[0].setZero();
  spec.residual = 0.0;
  ToyModel model(spec);
  TokenSequence seq{"s", {"a", "b", "c"}, {false, false, false}};
  const auto rec = model.forward_full(seq);
  MeasureConfig cfg;
  cfg.mc_samples = 64;
  const std::vector<double> sig{0.3, 0.3, 0.3};
  const auto ctx = context_vectors(model, rec, sig, cfg, 1);
  // Every layer-2 output is the same vector, so each receives the same
  // perturbation from input j: the rows are identical distributions.
  for (std::size_t i = 1; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(ctx[1][i][j], ctx[1][0][j], 1e-12);
  double total = 0;
  for (double v : ctx[1][0]) total += v;
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(Edges, NonAdjacentOnlyAndColumnsNormalized) {
  auto spec = ToyModelSpec::random(ToyVariant::Attention, {"a", "b", "c", "d", "e"}, 4, 2, 2, 4);
  ToyModel model(spec);
  TokenSequence seq{"s", {"a", "b", "c", "d", "e"}, std::vector<bool>(5, false)};
  const auto rec = model.forward_full(seq);
  MeasureConfig cfg;
  cfg.mc_samples = 16;
  const std::vector<double> sig(5, 0.2);
  const auto w = edge_weights(model, rec, 1, sig, cfg, 3);
  for (Eigen::Index j = 0; j < 5; ++j) EXPECT_NEAR(w.col(j).sum(), 1.0, 1e-12);
  const auto edges = non_adjacent_edges(w, 1);
  EXPECT_EQ(edges.size(), 12u);  // 25 - 5 diagonal - 8 adjacent
  for (const auto& e : edges) EXPECT_GT(e.source > e.target ? e.source - e.target : e.target - e.source, 1u);
  EXPECT_EQ(edge_mi(model, rec, 1, 0, 3, sig, cfg, 3).weight, w(0, 3));
  EXPECT_THROW(edge_mi(model, rec, 1, 1, 2, sig, cfg, 3), InvalidInput);
}

TEST(SampleMeasures, ShapeAndDeterminism) {
  const auto a = measure_toy(ToyVariant::Attention, "a b c");
  const auto b = measure_toy(ToyVariant::Attention, "a b c");
  EXPECT_TRUE(a == b);
  EXPECT_EQ(a.layer_count(), 3u);
  EXPECT_EQ(a.token_count(), 4u);  // [CLS] + 3
  EXPECT_TRUE(a.special_flags[0]);
  EXPECT_EQ(a.edges.size(), 2u);
  for (const auto& layer : a.words)
    for (const auto& w : layer) {
      EXPECT_EQ(w.contribution, std::abs(w.delta_s));
      EXPECT_EQ(w.polarity, classify_polarity(w.delta_s, 0.02));
      EXPECT_GT(w.sigma_star, 0.0);
    }
}

TEST(MeasureConfig, RejectsInvalidValues) {
  MeasureConfig cfg;
  cfg.xi = -1;
  EXPECT_THROW(cfg.validate(), InvalidInput);
  cfg = {};
  cfg.mc_samples = 1;
  EXPECT_THROW(cfg.validate(), InvalidInput);
  cfg = {};
  cfg.sigma_search.sigma_min = 2.0;
  cfg.sigma_search.sigma_max = 1.0;
  EXPECT_THROW(cfg.validate(), InvalidInput);
}
