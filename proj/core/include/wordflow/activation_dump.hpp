#pragma once

#include "wordflow/adapter.hpp"

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace wordflow {

inline constexpr char kDumpMagic[4] = {'U', 'F', 'X', 'A'};
inline constexpr std::uint32_t kDumpVersion = 1;

/// Writes records as "UFXA" | u32 version | u32 count, then per record a
/// length-prefixed JSON metadata block followed by layer-major float32 hidden
/// states and K float32 class scores. Records must share L and K.
void save_activation_dump(std::span<const ActivationRecord> records, const std::string& path);
std::vector<std::uint8_t> encode_activation_dump(std::span<const ActivationRecord> records);

/// All-or-nothing: any malformed or truncated input throws FormatError.
std::vector<ActivationRecord> load_activation_dump(const std::string& path);
std::vector<ActivationRecord> decode_activation_dump(std::span<const std::uint8_t> bytes);

/// Adapter over a dump of an external model. forward_full is a lookup by
/// sample id. predict_from_layer is a per-layer softmax-linear probe on the
/// mean-pooled states, fit by ridge regression onto log class scores; it is a
/// surrogate for the model's own upper layers (info().exact_prediction is
/// false), and propagation is unavailable.
class DumpAdapter : public ModelAdapter {
 public:
  explicit DumpAdapter(std::vector<ActivationRecord> records, double ridge = 1e-3);

  AdapterInfo info() const override;
  TokenSequence tokenize(std::string_view sample_id, std::string_view text) const override;
  ActivationRecord forward_full(const TokenSequence& seq) const override;
  std::vector<double> predict_from_layer(std::size_t layer,
                                         std::span<const Vector> states) const override;

  const std::vector<ActivationRecord>& records() const { return records_; }

 private:
  struct Probe {
    Eigen::MatrixXd weights;  // K x d
    Eigen::VectorXd bias;     // K
  };

  std::vector<ActivationRecord> records_;
  std::unordered_map<std::string, std::size_t> by_id_;
  std::vector<Probe> probes_;
  std::size_t layers_ = 0;
  std::size_t classes_ = 0;
};

}  // namespace wordflow
