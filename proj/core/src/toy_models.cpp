#include "wordflow/toy_models.hpp"

#include "wordflow/error.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <random>

namespace wordflow {

namespace {

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw FormatError("matrix must be an array of rows");
  if (j.empty()) return {};
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j.front().size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (j[r].size() != static_cast<std::size_t>(cols)) throw FormatError("ragged matrix");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

Eigen::MatrixXd gaussian(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double scale) {
  std::normal_distribution<double> normal(0.0, scale);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = normal(rng);
  return m;
}

}  // namespace

std::string_view to_string(ToyVariant variant) {
  return variant == ToyVariant::BagOfEmbeddings ? "bag-of-embeddings" : "attention";
}

ToyVariant toy_variant_from_string(std::string_view name) {
  if (name == "bag-of-embeddings" || name == "toy-bow") return ToyVariant::BagOfEmbeddings;
  if (name == "attention" || name == "toy-attn") return ToyVariant::Attention;
  throw InvalidInput("unknown toy variant '" + std::string(name) + "'");
}

std::size_t ToyModelSpec::layer_count() const {
  return 1 + (variant == ToyVariant::BagOfEmbeddings ? token_maps.size() : query.size());
}

void ToyModelSpec::validate() const {
  if (vocabulary.size() < 2 || vocabulary[0] != kUnknownToken || vocabulary[1] != kClassToken) {
    throw InvalidInput("toy vocabulary must start with [UNK], [CLS]");
  }
  if (static_cast<std::size_t>(embeddings.rows()) != vocabulary.size() || embeddings.cols() == 0) {
    throw InvalidInput("embedding table does not match vocabulary");
  }
  const auto d = embeddings.cols();
  if (head.cols() != d || head.rows() < 2 || head_bias.size() != head.rows()) {
    throw InvalidInput("head shape mismatch");
  }
  if (variant == ToyVariant::Attention) {
    if (query.size() != key.size()) throw InvalidInput("query/key layer count mismatch");
    for (std::size_t l = 0; l < query.size(); ++l) {
      if (query[l].rows() != d || query[l].cols() != d || key[l].rows() != d ||
          key[l].cols() != d) {
        throw InvalidInput("attention weight shape mismatch");
      }
    }
  } else {
    for (const auto& a : token_maps) {
      if (a.size() != 0 && (a.rows() != d || a.cols() != d)) {
        throw InvalidInput("token map shape mismatch");
      }
    }
  }
  auto finite = [](const Eigen::MatrixXd& m) { return m.allFinite(); };
  bool ok = finite(embeddings) && finite(head) && head_bias.allFinite();
  for (const auto& m : token_maps) ok = ok && finite(m);
  for (const auto& m : query) ok = ok && finite(m);
  for (const auto& m : key) ok = ok && finite(m);
  if (!ok || !std::isfinite(residual)) throw InvalidInput("toy weights must be finite");
}

ToyModelSpec ToyModelSpec::random(ToyVariant variant, const std::vector<std::string>& words,
                                  std::size_t dim, std::size_t classes, std::size_t layers,
                                  std::uint64_t seed) {
  if (dim == 0 || classes < 2 || layers == 0) throw InvalidInput("invalid toy dimensions");
  ToyModelSpec spec;
  spec.variant = variant;
  spec.seed = seed;
  spec.vocabulary = {std::string(kUnknownToken), std::string(kClassToken)};
  for (const auto& w : words) {
    if (w != kUnknownToken && w != kClassToken) spec.vocabulary.push_back(w);
  }
  std::mt19937_64 rng(seed);
  const auto d = static_cast<Eigen::Index>(dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  spec.embeddings = gaussian(rng, static_cast<Eigen::Index>(spec.vocabulary.size()), d, 1.0);
  for (std::size_t l = 1; l < layers; ++l) {
    if (variant == ToyVariant::BagOfEmbeddings) {
      spec.token_maps.push_back(gaussian(rng, d, d, scale));
    } else {
      spec.query.push_back(gaussian(rng, d, d, scale));
      spec.key.push_back(gaussian(rng, d, d, scale));
    }
  }
  spec.residual = variant == ToyVariant::Attention ? 0.5 : 0.0;
  spec.head = gaussian(rng, static_cast<Eigen::Index>(classes), d, 2.0 * scale);
  spec.head_bias = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(classes));
  return spec;
}

void to_json(nlohmann::json& j, const ToyModelSpec& spec) {
  j = nlohmann::json::object();
  j["variant"] = std::string(to_string(spec.variant));
  j["vocabulary"] = spec.vocabulary;
  j["embeddings"] = matrix_to_json(spec.embeddings);
  auto list = [](const std::vector<Eigen::MatrixXd>& ms) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& m : ms) out.push_back(matrix_to_json(m));
    return out;
  };
  j["token_maps"] = list(spec.token_maps);
  j["query"] = list(spec.query);
  j["key"] = list(spec.key);
  j["residual"] = spec.residual;
  j["head"] = matrix_to_json(spec.head);
  j["head_bias"] = std::vector<double>(spec.head_bias.data(),
                                       spec.head_bias.data() + spec.head_bias.size());
  j["seed"] = spec.seed;
}

void from_json(const nlohmann::json& j, ToyModelSpec& spec) {
  try {
    spec.variant = toy_variant_from_string(j.at("variant").get<std::string>());
    spec.vocabulary = j.at("vocabulary").get<std::vector<std::string>>();
    spec.embeddings = matrix_from_json(j.at("embeddings"));
    auto list = [&](const char* key) {
      std::vector<Eigen::MatrixXd> out;
      if (j.contains(key)) {
        for (const auto& m : j.at(key)) out.push_back(matrix_from_json(m));
      }
      return out;
    };
    spec.token_maps = list("token_maps");
    spec.query = list("query");
    spec.key = list("key");
    spec.residual = j.value("residual", 0.0);
    spec.head = matrix_from_json(j.at("head"));
    const auto bias = j.at("head_bias").get<std::vector<double>>();
    spec.head_bias = Eigen::Map<const Eigen::VectorXd>(bias.data(), static_cast<Eigen::Index>(bias.size()));
    spec.seed = j.value("seed", std::uint64_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("toy model spec: ") + e.what());
  }
}

ToyModelSpec load_toy_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open toy model spec '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("toy model spec '" + path + "': " + e.what());
  }
  auto spec = j.get<ToyModelSpec>();
  spec.validate();
  return spec;
}

void save_toy_spec(const ToyModelSpec& spec, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write '" + path + "'");
  out << nlohmann::json(spec).dump(1) << '\n';
}

ToyModel::ToyModel(ToyModelSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  for (std::size_t i = 0; i < spec_.vocabulary.size(); ++i) index_.emplace(spec_.vocabulary[i], i);
  for (std::size_t l = 0; l < spec_.query.size(); ++l) {
    query_key_.push_back(spec_.query[l].transpose() * spec_.key[l]);
  }
}

AdapterInfo ToyModel::info() const {
  AdapterInfo meta;
  meta.layer_count = spec_.layer_count();
  meta.class_count = spec_.class_count();
  meta.association = AssociationMode::OneToOne;
  meta.thread_safe = true;
  meta.supports_propagation = true;
  meta.exact_prediction = true;
  return meta;
}

TokenSequence ToyModel::tokenize(std::string_view sample_id, std::string_view text) const {
  TokenSequence seq = ModelAdapter::tokenize(sample_id, text);
  if (spec_.variant == ToyVariant::Attention) {
    seq.tokens.insert(seq.tokens.begin(), std::string(kClassToken));
    seq.special_flags.insert(seq.special_flags.begin(), true);
  }
  return seq;
}

std::size_t ToyModel::token_id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? 0 : it->second;
}

Eigen::MatrixXd ToyModel::to_matrix(std::size_t layer, std::span<const Vector> states) const {
  if (layer < 1 || layer > spec_.layer_count()) {
    throw InvalidInput("layer " + std::to_string(layer) + " out of range");
  }
  if (states.empty()) throw InvalidInput("no hidden states");
  const auto d = static_cast<Eigen::Index>(spec_.dim());
  Eigen::MatrixXd h(d, static_cast<Eigen::Index>(states.size()));
  for (std::size_t i = 0; i < states.size(); ++i) {
    if (states[i].size() != d) {
      throw InvalidInput("hidden state dimension " + std::to_string(states[i].size()) +
                         " does not match model dimension " + std::to_string(d));
    }
    h.col(static_cast<Eigen::Index>(i)) = states[i];
  }
  return h;
}

Eigen::MatrixXd ToyModel::step(std::size_t layer, const Eigen::MatrixXd& h) const {
  if (spec_.variant == ToyVariant::BagOfEmbeddings) {
    const auto& a = spec_.token_maps[layer - 1];
    if (a.size() == 0) return h;
    return a.lazyProduct(h).array().tanh().matrix();
  }
  // Desk-scale matrices are far below the size where blocked GEMM pays off.
  const double scale = 1.0 / std::sqrt(static_cast<double>(h.rows()));
  const Eigen::MatrixXd keyed = query_key_[layer - 1].lazyProduct(h);
  Eigen::MatrixXd scores = h.transpose().lazyProduct(keyed) * scale;  // M x M, row = query
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    const double peak = scores.row(r).maxCoeff();
    scores.row(r) = (scores.row(r).array() - peak).exp().matrix();
    scores.row(r) /= scores.row(r).sum();
  }
  Eigen::MatrixXd mixed = h.lazyProduct(scores.transpose());
  if (spec_.residual != 0.0) mixed = (1.0 - spec_.residual) * mixed + spec_.residual * h;
  return mixed;
}

std::vector<double> ToyModel::head(const Eigen::MatrixXd& h) const {
  const Eigen::VectorXd pooled = h.rowwise().mean();
  const Eigen::VectorXd logits = spec_.head.lazyProduct(pooled) + spec_.head_bias;
  return softmax(std::span<const double>(logits.data(), static_cast<std::size_t>(logits.size())));
}

ActivationRecord ToyModel::forward_full(const TokenSequence& seq) const {
  seq.validate();
  ActivationRecord rec;
  rec.sample_id = seq.sample_id;
  rec.tokens = seq.tokens;
  rec.special_flags = seq.special_flags;
  const auto d = static_cast<Eigen::Index>(spec_.dim());
  Eigen::MatrixXd h(d, static_cast<Eigen::Index>(seq.size()));
  for (std::size_t i = 0; i < seq.size(); ++i) {
    h.col(static_cast<Eigen::Index>(i)) = spec_.embeddings.row(static_cast<Eigen::Index>(token_id(seq.tokens[i]))).transpose();
  }
  const std::size_t layers = spec_.layer_count();
  for (std::size_t l = 1; l <= layers; ++l) {
    if (l > 1) h = step(l - 1, h);
    LayerStates states(seq.size());
    for (std::size_t i = 0; i < seq.size(); ++i) states[i] = h.col(static_cast<Eigen::Index>(i));
    rec.hidden.push_back(std::move(states));
  }
  rec.class_scores = head(h);
  return rec;
}

std::vector<double> ToyModel::predict_from_layer(std::size_t layer,
                                                 std::span<const Vector> states) const {
  Eigen::MatrixXd h = to_matrix(layer, states);
  for (std::size_t l = layer; l < spec_.layer_count(); ++l) h = step(l, h);
  return head(h);
}

LayerStates ToyModel::propagate(std::size_t layer, std::span<const Vector> states) const {
  if (layer >= spec_.layer_count()) throw InvalidInput("cannot propagate past the last layer");
  const Eigen::MatrixXd next = step(layer, to_matrix(layer, states));
  LayerStates out(states.size());
  for (std::size_t i = 0; i < states.size(); ++i) out[i] = next.col(static_cast<Eigen::Index>(i));
  return out;
}

std::unique_ptr<ToyModel> make_toy_model(ToyModelSpec spec) {
  return std::make_unique<ToyModel>(std::move(spec));
}

}  // namespace wordflow
