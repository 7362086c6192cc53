#pragma once

#include "wordflow/adapter.hpp"

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

namespace wordflow {

inline constexpr std::string_view kUnknownToken = "[UNK]";
inline constexpr std::string_view kClassToken = "[CLS]";

enum class ToyVariant { BagOfEmbeddings, Attention };

std::string_view to_string(ToyVariant variant);
ToyVariant toy_variant_from_string(std::string_view name);

/// Weights of a desk-scale classifier. Vocabulary slot 0 is always [UNK] and
/// slot 1 is [CLS].
///
/// Bag-of-embeddings: layer 1 is the token embedding, every further layer is a
/// per-token map (tanh(A h), or the identity when A is empty). Attention:
/// layer 1 is the embedding, every further layer is single-head dot-product
/// attention whose values are the previous states, optionally blended with a
/// residual. Both heads are softmax(W * mean_over_tokens(h_L) + b).
struct ToyModelSpec {
  ToyVariant variant = ToyVariant::BagOfEmbeddings;
  std::vector<std::string> vocabulary;
  Eigen::MatrixXd embeddings;                 ///< vocabulary x dim
  std::vector<Eigen::MatrixXd> token_maps;    ///< bag-of-embeddings, one per extra layer
  std::vector<Eigen::MatrixXd> query;         ///< attention, one per extra layer
  std::vector<Eigen::MatrixXd> key;           ///< attention, one per extra layer
  double residual = 0.0;
  Eigen::MatrixXd head;                       ///< classes x dim
  Eigen::VectorXd head_bias;                  ///< classes
  std::uint64_t seed = 0;

  std::size_t dim() const { return static_cast<std::size_t>(embeddings.cols()); }
  std::size_t class_count() const { return static_cast<std::size_t>(head.rows()); }
  std::size_t layer_count() const;
  void validate() const;

  /// Gaussian weights drawn from `seed`. `words` excludes the reserved tokens.
  static ToyModelSpec random(ToyVariant variant, const std::vector<std::string>& words,
                             std::size_t dim, std::size_t classes, std::size_t layers,
                             std::uint64_t seed);
};

void to_json(nlohmann::json& j, const ToyModelSpec& spec);
void from_json(const nlohmann::json& j, ToyModelSpec& spec);

ToyModelSpec load_toy_spec(const std::string& path);
void save_toy_spec(const ToyModelSpec& spec, const std::string& path);

class ToyModel : public ModelAdapter {
 public:
  explicit ToyModel(ToyModelSpec spec);

  AdapterInfo info() const override;
  TokenSequence tokenize(std::string_view sample_id, std::string_view text) const override;
  ActivationRecord forward_full(const TokenSequence& seq) const override;
  std::vector<double> predict_from_layer(std::size_t layer,
                                         std::span<const Vector> states) const override;
  LayerStates propagate(std::size_t layer, std::span<const Vector> states) const override;

  const ToyModelSpec& spec() const { return spec_; }
  std::size_t token_id(const std::string& token) const;

 private:
  Eigen::MatrixXd to_matrix(std::size_t layer, std::span<const Vector> states) const;
  /// Columns are token states; returns states at layer + 1.
  Eigen::MatrixXd step(std::size_t layer, const Eigen::MatrixXd& states) const;
  std::vector<double> head(const Eigen::MatrixXd& states) const;

  ToyModelSpec spec_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<Eigen::MatrixXd> query_key_;  ///< query^T * key per attention layer
};

std::unique_ptr<ToyModel> make_toy_model(ToyModelSpec spec);

}  // namespace wordflow
