#include "wordflow/activation_dump.hpp"

#include "wordflow/binary_io.hpp"
#include "wordflow/error.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <iterator>

namespace wordflow {

namespace io {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::span<const std::uint8_t> data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw FormatError("short write to '" + path + "'");
}

}  // namespace io

std::vector<std::uint8_t> encode_activation_dump(std::span<const ActivationRecord> records) {
  io::Writer w;
  w.bytes(std::string_view(kDumpMagic, 4));
  w.u32(kDumpVersion);
  w.u32(static_cast<std::uint32_t>(records.size()));
  for (const auto& rec : records) {
    rec.validate();
    if (rec.layer_count() != records.front().layer_count() ||
        rec.class_scores.size() != records.front().class_scores.size()) {
      throw InvalidInput("dump records must share layer and class counts");
    }
    nlohmann::json meta;
    meta["sample_id"] = rec.sample_id;
    meta["M"] = rec.token_count();
    meta["L"] = rec.layer_count();
    std::vector<std::size_t> dims;
    for (std::size_t l = 1; l <= rec.layer_count(); ++l) dims.push_back(rec.dim(l));
    meta["dims"] = dims;
    meta["K"] = rec.class_scores.size();
    if (!rec.tokens.empty()) {
      meta["tokens"] = rec.tokens;
      meta["special_flags"] = rec.special_flags;
    }
    const std::string text = meta.dump();
    w.u32(static_cast<std::uint32_t>(text.size()));
    w.bytes(text);
    for (const auto& states : rec.hidden) {
      for (const auto& v : states) {
        for (Eigen::Index k = 0; k < v.size(); ++k) w.f32(static_cast<float>(v[k]));
      }
    }
    for (double s : rec.class_scores) w.f32(static_cast<float>(s));
  }
  return w.take();
}

void save_activation_dump(std::span<const ActivationRecord> records, const std::string& path) {
  const auto bytes = encode_activation_dump(records);
  io::write_file(path, bytes);
}

std::vector<ActivationRecord> decode_activation_dump(std::span<const std::uint8_t> bytes) {
  io::Reader<FormatError> r(bytes);
  if (r.bytes(4) != std::string_view(kDumpMagic, 4)) throw FormatError("bad dump magic");
  const auto version = r.u32();
  if (version != kDumpVersion) {
    throw FormatError("unsupported dump version " + std::to_string(version));
  }
  const auto count = r.u32();
  std::vector<ActivationRecord> out;
  for (std::uint32_t n = 0; n < count; ++n) {
    const auto meta_len = r.u32();
    nlohmann::json meta;
    try {
      meta = nlohmann::json::parse(r.bytes(meta_len));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("dump metadata: ") + e.what());
    }
    ActivationRecord rec;
    std::size_t m = 0, layers = 0, k = 0;
    std::vector<std::size_t> dims;
    try {
      rec.sample_id = meta.at("sample_id").get<std::string>();
      m = meta.at("M").get<std::size_t>();
      layers = meta.at("L").get<std::size_t>();
      dims = meta.at("dims").get<std::vector<std::size_t>>();
      k = meta.at("K").get<std::size_t>();
      if (meta.contains("tokens")) {
        rec.tokens = meta.at("tokens").get<std::vector<std::string>>();
        rec.special_flags = meta.at("special_flags").get<std::vector<bool>>();
      }
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("dump metadata: ") + e.what());
    }
    if (dims.size() != layers || m == 0 || layers == 0 || k == 0) {
      throw FormatError("inconsistent dump metadata for '" + rec.sample_id + "'");
    }
    const std::size_t budget = r.remaining() / sizeof(float);
    if (m > budget || k > budget) throw FormatError("truncated dump payload");
    std::size_t floats = k;
    for (auto d : dims) {
      if (d == 0 || d > budget || m * d > budget) throw FormatError("truncated dump payload");
      floats += m * d;
    }
    if (floats * sizeof(float) > r.remaining()) throw FormatError("truncated dump payload");
    std::vector<float> buf;
    for (std::size_t l = 0; l < layers; ++l) {
      LayerStates states(m);
      buf.resize(dims[l]);
      for (std::size_t i = 0; i < m; ++i) {
        r.f32s(buf);
        states[i] = Eigen::Map<const Eigen::VectorXf>(buf.data(), static_cast<Eigen::Index>(buf.size())).cast<double>();
      }
      rec.hidden.push_back(std::move(states));
    }
    for (std::size_t c = 0; c < k; ++c) rec.class_scores.push_back(static_cast<double>(r.f32()));
    out.push_back(std::move(rec));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after dump records");
  return out;
}

std::vector<ActivationRecord> load_activation_dump(const std::string& path) {
  const auto bytes = io::read_file(path);
  return decode_activation_dump(bytes);
}

namespace {

Eigen::VectorXd pooled(std::span<const Vector> states) {
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(states.front().size());
  for (const auto& v : states) sum += v;
  return sum / static_cast<double>(states.size());
}

}  // namespace

DumpAdapter::DumpAdapter(std::vector<ActivationRecord> records, double ridge)
    : records_(std::move(records)) {
  if (records_.empty()) throw InvalidInput("dump adapter needs at least one record");
  layers_ = records_.front().layer_count();
  classes_ = records_.front().class_scores.size();
  for (std::size_t n = 0; n < records_.size(); ++n) {
    if (!by_id_.emplace(records_[n].sample_id, n).second) {
      throw InvalidInput("duplicate sample id '" + records_[n].sample_id + "' in dump");
    }
  }
  const auto rows = static_cast<Eigen::Index>(records_.size());
  const auto k = static_cast<Eigen::Index>(classes_);
  Eigen::MatrixXd targets(rows, k);
  for (Eigen::Index n = 0; n < rows; ++n) {
    Eigen::VectorXd logp(k);
    for (Eigen::Index c = 0; c < k; ++c) logp[c] = std::log(std::max(records_[n].class_scores[c], 1e-12));
    targets.row(n) = (logp.array() - logp.mean()).matrix().transpose();
  }
  for (std::size_t l = 1; l <= layers_; ++l) {
    const auto d = static_cast<Eigen::Index>(records_.front().dim(l));
    Eigen::MatrixXd design(rows, d + 1);
    for (Eigen::Index n = 0; n < rows; ++n) {
      const auto& states = records_[n].layer(l);
      if (static_cast<Eigen::Index>(records_[n].dim(l)) != d) throw InvalidInput("dump layer widths vary across records");
      design.row(n).head(d) = pooled(states).transpose();
      design(n, d) = 1.0;
    }
    Eigen::MatrixXd gram = design.transpose() * design;
    gram.diagonal().head(d).array() += ridge * static_cast<double>(rows);
    const Eigen::MatrixXd solution = gram.ldlt().solve(design.transpose() * targets);  // (d+1) x K
    Probe probe;
    probe.weights = solution.topRows(d).transpose();
    probe.bias = solution.row(d).transpose();
    probes_.push_back(std::move(probe));
  }
}

AdapterInfo DumpAdapter::info() const {
  AdapterInfo meta;
  meta.layer_count = layers_;
  meta.class_count = classes_;
  meta.thread_safe = true;
  meta.supports_propagation = false;
  meta.exact_prediction = false;
  return meta;
}

TokenSequence DumpAdapter::tokenize(std::string_view sample_id, std::string_view text) const {
  auto it = by_id_.find(std::string(sample_id));
  if (it == by_id_.end() || records_[it->second].tokens.empty()) {
    return ModelAdapter::tokenize(sample_id, text);
  }
  TokenSequence seq;
  seq.sample_id = std::string(sample_id);
  seq.tokens = records_[it->second].tokens;
  seq.special_flags = records_[it->second].special_flags;
  return seq;
}

ActivationRecord DumpAdapter::forward_full(const TokenSequence& seq) const {
  seq.validate();
  auto it = by_id_.find(seq.sample_id);
  if (it == by_id_.end()) throw InvalidInput("sample '" + seq.sample_id + "' is not in the dump");
  return records_[it->second];
}

std::vector<double> DumpAdapter::predict_from_layer(std::size_t layer,
                                                    std::span<const Vector> states) const {
  if (layer < 1 || layer > layers_) throw InvalidInput("layer out of range");
  if (states.empty()) throw InvalidInput("no hidden states");
  const auto& probe = probes_[layer - 1];
  for (const auto& v : states) {
    if (v.size() != probe.weights.cols()) throw InvalidInput("hidden state dimension mismatch");
  }
  const Eigen::VectorXd logits = probe.weights * pooled(states) + probe.bias;
  return softmax(std::span<const double>(logits.data(), static_cast<std::size_t>(logits.size())));
}

}  // namespace wordflow
