#pragma once

// Shared fixtures for the unit and acceptance suites: temporary directories,
// independent numerical oracles and synthetic corpora.

#include "wordflow/store.hpp"
#include "wordflow/toy_models.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>
#include <vector>

namespace wftest {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (fs::temp_directory_path() / "wordflow-XXXXXX").string();
    if (::mkdtemp(tmpl.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

/// Nodes and weights of the n-point Gauss-Hermite rule (weight exp(-x^2)),
/// from the eigen-decomposition of the Jacobi matrix (Golub-Welsch).
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> gauss_hermite(int n) {
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) J(k, k - 1) = J(k - 1, k) = std::sqrt(k / 2.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  const Eigen::VectorXd nodes = es.eigenvalues();
  Eigen::VectorXd weights(n);
  for (int k = 0; k < n; ++k) {
    const double v0 = es.eigenvectors()(0, k);
    weights(k) = std::sqrt(M_PI) * v0 * v0;
  }
  return {nodes, weights};
}

/// E[f(mu + eps)], eps ~ N(0, sigma^2), by n-point Gauss-Hermite quadrature.
template <typename F>
double gaussian_expectation(F&& f, double mu, double sigma, int n = 64) {
  const auto [x, w] = gauss_hermite(n);
  double sum = 0.0;
  for (int k = 0; k < n; ++k) sum += w(k) * f(mu + std::sqrt(2.0) * sigma * x(k));
  return sum / std::sqrt(M_PI);
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

struct PlantedCorpus {
  std::vector<wordflow::DatasetRecord> records;
  std::string token;
  std::vector<std::string> p_words;
  std::vector<std::string> q_words;
  std::vector<std::string> fillers;
};

/// Two-class corpus (labels 0 = p, 1 = q). `token` occurs in a `rate` share of
/// class-q samples and in `leak` of class-p samples; every sample also has one
/// class word and a few fillers from a wide vocabulary.
inline PlantedCorpus planted_corpus(std::size_t n, std::uint64_t seed, const std::string& token = "dvd",
                                    double rate = 0.95, double leak = 0.02, std::size_t fillers_per_sample = 4) {
  PlantedCorpus c;
  c.token = token;
  c.p_words = {"great", "lovely", "superb", "charming", "moving", "brilliant"};
  c.q_words = {"dull", "awful", "boring", "clumsy", "tedious", "bland"};
  for (int k = 0; k < 120; ++k) c.fillers.push_back("w" + std::to_string(k));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto pick = [&](const std::vector<std::string>& v) { return v[rng() % v.size()]; };
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % 2;
    std::vector<std::string> words;
    for (std::size_t f = 0; f < fillers_per_sample; ++f) words.push_back(pick(c.fillers));
    words.push_back(pick(label == 0 ? c.p_words : c.q_words));
    if (u(rng) < (label == 1 ? rate : leak)) words.push_back(token);
    std::shuffle(words.begin(), words.end(), rng);
    std::string text;
    for (const auto& w : words) text += (text.empty() ? "" : " ") + w;
    char id[24];
    std::snprintf(id, sizeof id, "s%05zu", i);
    c.records.push_back({id, text, label});
  }
  return c;
}

/// Attention toy that has learned the planted shortcut: the token's embedding
/// and the class words point along the head's q direction.
inline wordflow::ToyModelSpec shortcut_model(const PlantedCorpus& c, std::uint64_t seed = 7, std::size_t dim = 8,
                                             std::size_t layers = 4) {
  std::vector<std::string> vocab = c.p_words;
  vocab.insert(vocab.end(), c.q_words.begin(), c.q_words.end());
  vocab.insert(vocab.end(), c.fillers.begin(), c.fillers.end());
  vocab.push_back(c.token);
  auto spec = wordflow::ToyModelSpec::random(wordflow::ToyVariant::Attention, vocab, dim, 2, layers, seed);
  spec.residual = 0.5;
  Eigen::VectorXd u = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
  u(0) = 1.0;
  for (Eigen::Index r = 0; r < spec.embeddings.rows(); ++r) spec.embeddings(r, 0) = 0.0;
  auto row = [&](const std::string& w) {
    for (std::size_t k = 0; k < spec.vocabulary.size(); ++k)
      if (spec.vocabulary[k] == w) return static_cast<Eigen::Index>(k);
    throw std::runtime_error("missing word " + w);
  };
  spec.embeddings(row(c.token), 0) = 6.0;
  for (const auto& w : c.q_words) spec.embeddings(row(w), 0) = 3.0;
  for (const auto& w : c.p_words) spec.embeddings(row(w), 0) = -3.0;
  spec.head.setZero();
  spec.head(1, 0) = 1.5;
  spec.head(0, 0) = -1.5;
  spec.head_bias.setZero();
  spec.head_bias(0) = 1.0;
  return spec;
}

}  // namespace wftest

namespace wftest {

/// Pipeline settings small enough for unit tests.
inline wordflow::PipelineConfig fast_config() {
  wordflow::PipelineConfig cfg;
  cfg.measures.mc_samples = 16;
  cfg.layout.grid_size = 24;
  cfg.analytics.tsne.iterations = 250;
  cfg.workers = 1;
  return cfg;
}

/// Precomputes a small planted store into `dir` and returns the dataset.
inline std::vector<wordflow::DatasetRecord> build_small_store(const fs::path& dir, std::size_t n = 16,
                                                               std::size_t workers = 1,
                                                               std::uint64_t seed = 3) {
  const auto corpus = planted_corpus(n, seed, "dvd", 0.95, 0.02, 2);
  wordflow::ToyModel model(shortcut_model(corpus, 7, 6, 3));
  auto cfg = fast_config();
  cfg.workers = workers;
  wordflow::precompute_corpus(model, "toy-test", corpus.records, {0, 1}, cfg, dir);
  return corpus.records;
}

}  // namespace wftest
