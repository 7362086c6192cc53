#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace wordflow {

using Vector = Eigen::VectorXd;
/// Hidden states of one layer, one vector per token position.
using LayerStates = std::vector<Vector>;

struct TokenSequence {
  std::string sample_id;
  std::vector<std::string> tokens;
  std::vector<bool> special_flags;

  std::size_t size() const { return tokens.size(); }
  /// Throws InvalidInput when empty or when flags and tokens disagree in length.
  void validate() const;
};

struct ActivationRecord {
  std::string sample_id;
  /// Token strings as seen by the model; may be empty when the producer did
  /// not report them.
  std::vector<std::string> tokens;
  std::vector<bool> special_flags;
  /// hidden[layer - 1][position]
  std::vector<LayerStates> hidden;
  std::vector<double> class_scores;

  std::size_t layer_count() const { return hidden.size(); }
  std::size_t token_count() const { return hidden.empty() ? 0 : hidden.front().size(); }
  std::size_t dim(std::size_t layer) const;
  const LayerStates& layer(std::size_t layer) const;
  void validate() const;
};

bool operator==(const ActivationRecord& a, const ActivationRecord& b);

enum class AssociationMode { OneToOne, ReceptiveField };

std::string_view to_string(AssociationMode mode);
AssociationMode association_from_string(std::string_view name);

struct AdapterInfo {
  std::size_t layer_count = 0;
  std::size_t class_count = 0;
  AssociationMode association = AssociationMode::OneToOne;
  /// Convolution width when association is ReceptiveField.
  std::size_t receptive_width = 1;
  bool thread_safe = true;
  /// Whether propagate() is implemented (needed for inter-word measures).
  bool supports_propagation = true;
  /// False when predict_from_layer is a surrogate rather than the model.
  bool exact_prediction = true;
};

/// Uniform access to a layered classifier. Layers are numbered 1..L.
class ModelAdapter {
 public:
  virtual ~ModelAdapter() = default;

  virtual AdapterInfo info() const = 0;

  /// Default tokenization: lowercase, whitespace split, punctuation split.
  virtual TokenSequence tokenize(std::string_view sample_id, std::string_view text) const;

  virtual ActivationRecord forward_full(const TokenSequence& seq) const = 0;

  /// Class scores obtained by running the layers after `layer` on `states`.
  virtual std::vector<double> predict_from_layer(std::size_t layer,
                                                 std::span<const Vector> states) const = 0;

  /// States at layer + 1 given states at `layer`. Throws AdapterUnavailable
  /// unless info().supports_propagation.
  virtual LayerStates propagate(std::size_t layer, std::span<const Vector> states) const;

  /// Hidden positions at `layer` whose value depends on input word `word`,
  /// ascending.
  std::vector<std::size_t> affected_positions(std::size_t layer, std::size_t word,
                                              std::size_t token_count) const;
};

/// h^(layer)(w_word): the word's own vector in one-to-one mode, otherwise the
/// concatenation of every affected position in ascending order.
Vector hidden_for_word(const ActivationRecord& rec, const ModelAdapter& adapter,
                       std::size_t layer, std::size_t word);

/// Writes a concatenated word vector back into the affected positions.
void scatter_word_vector(LayerStates& states, std::span<const std::size_t> positions,
                         const Vector& word_vector);

/// Lowercase, split on whitespace, then split ASCII punctuation into
/// separate tokens.
std::vector<std::string> split_words(std::string_view text);

std::vector<double> softmax(std::span<const double> logits);

}  // namespace wordflow
