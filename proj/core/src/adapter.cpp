#include "wordflow/adapter.hpp"

#include "wordflow/error.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

namespace wordflow {

void TokenSequence::validate() const {
  if (tokens.empty()) throw InvalidInput("empty token sequence '" + sample_id + "'");
  if (special_flags.size() != tokens.size()) {
    throw InvalidInput("special_flags length does not match token count in '" + sample_id + "'");
  }
}

std::size_t ActivationRecord::dim(std::size_t layer) const {
  const auto& states = this->layer(layer);
  return states.empty() ? 0 : static_cast<std::size_t>(states.front().size());
}

const LayerStates& ActivationRecord::layer(std::size_t layer) const {
  if (layer < 1 || layer > hidden.size()) {
    throw InvalidInput("layer " + std::to_string(layer) + " out of range [1, " +
                       std::to_string(hidden.size()) + "]");
  }
  return hidden[layer - 1];
}

void ActivationRecord::validate() const {
  if (hidden.empty()) throw InvalidInput("activation record has no layers");
  const std::size_t m = token_count();
  if (m == 0) throw InvalidInput("activation record has no tokens");
  for (const auto& states : hidden) {
    if (states.size() != m) throw InvalidInput("layer token counts disagree");
    for (const auto& v : states) {
      if (v.size() != states.front().size()) throw InvalidInput("ragged layer dimension");
    }
  }
  if (class_scores.empty()) throw InvalidInput("no class scores");
  double total = 0.0;
  for (double s : class_scores) {
    if (!std::isfinite(s) || s < 0.0) throw InvalidInput("class score not finite/non-negative");
    total += s;
  }
  if (std::abs(total - 1.0) > 1e-6) throw InvalidInput("class scores do not sum to 1");
}

bool operator==(const ActivationRecord& a, const ActivationRecord& b) {
  if (a.sample_id != b.sample_id || a.tokens != b.tokens ||
      a.special_flags != b.special_flags || a.class_scores != b.class_scores ||
      a.hidden.size() != b.hidden.size()) {
    return false;
  }
  for (std::size_t l = 0; l < a.hidden.size(); ++l) {
    if (a.hidden[l].size() != b.hidden[l].size()) return false;
    for (std::size_t i = 0; i < a.hidden[l].size(); ++i) {
      if (a.hidden[l][i].size() != b.hidden[l][i].size()) return false;
      if (a.hidden[l][i] != b.hidden[l][i]) return false;
    }
  }
  return true;
}

std::string_view to_string(AssociationMode mode) {
  return mode == AssociationMode::OneToOne ? "one-to-one" : "receptive-field";
}

AssociationMode association_from_string(std::string_view name) {
  if (name == "one-to-one") return AssociationMode::OneToOne;
  if (name == "receptive-field") return AssociationMode::ReceptiveField;
  throw InvalidInput("unknown association mode '" + std::string(name) + "'");
}

TokenSequence ModelAdapter::tokenize(std::string_view sample_id, std::string_view text) const {
  TokenSequence seq;
  seq.sample_id = std::string(sample_id);
  seq.tokens = split_words(text);
  seq.special_flags.assign(seq.tokens.size(), false);
  return seq;
}

LayerStates ModelAdapter::propagate(std::size_t, std::span<const Vector>) const {
  throw AdapterUnavailable("adapter does not expose layer propagation");
}

std::vector<std::size_t> ModelAdapter::affected_positions(std::size_t /*layer*/, std::size_t word,
                                                          std::size_t token_count) const {
  if (word >= token_count) {
    throw InvalidInput("word index " + std::to_string(word) + " out of range");
  }
  const AdapterInfo meta = info();
  if (meta.association == AssociationMode::OneToOne || meta.receptive_width <= 1) {
    return {word};
  }
  const std::size_t radius = (meta.receptive_width - 1) / 2;
  const std::size_t first = word >= radius ? word - radius : 0;
  const std::size_t last = std::min(token_count - 1, word + radius);
  std::vector<std::size_t> out;
  for (std::size_t p = first; p <= last; ++p) out.push_back(p);
  return out;
}

Vector hidden_for_word(const ActivationRecord& rec, const ModelAdapter& adapter, std::size_t layer,
                       std::size_t word) {
  const auto& states = rec.layer(layer);
  const auto positions = adapter.affected_positions(layer, word, states.size());
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

void scatter_word_vector(LayerStates& states, std::span<const std::size_t> positions,
                         const Vector& word_vector) {
  Eigen::Index offset = 0;
  for (auto p : positions) {
    const Eigen::Index n = states[p].size();
    states[p] = word_vector.segment(offset, n);
    offset += n;
  }
  if (offset != word_vector.size()) throw InvalidInput("word vector width mismatch");
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) out.push_back(std::move(current));
    current.clear();
  };
  for (char raw : text) {
    const auto c = static_cast<unsigned char>(raw);
    if (std::isspace(c)) {
      flush();
    } else if (c < 0x80 && std::ispunct(c)) {
      flush();
      out.emplace_back(1, static_cast<char>(c));
    } else {
      current.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
    }
  }
  flush();
  return out;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  double peak = -std::numeric_limits<double>::infinity();
  for (double z : logits) peak = std::max(peak, z);
  if (!std::isfinite(peak)) {
    // All -inf or a +inf/NaN entry: fall back to a uniform or one-hot answer
    // rather than producing NaN.
    std::size_t hits = 0;
    for (double z : logits) hits += (z == peak) ? 1 : 0;
    for (std::size_t k = 0; k < logits.size(); ++k) {
      out[k] = (std::isnan(peak) || hits == 0) ? 1.0 / logits.size()
                                               : (logits[k] == peak ? 1.0 / hits : 0.0);
    }
    return out;
  }
  double total = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    out[k] = std::exp(logits[k] - peak);
    total += out[k];
  }
  for (double& v : out) v /= total;
  return out;
}

}  // namespace wordflow
