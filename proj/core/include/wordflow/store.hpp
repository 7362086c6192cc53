#pragma once

#include "wordflow/adapter.hpp"
#include "wordflow/analytics.hpp"
#include "wordflow/layout.hpp"
#include "wordflow/measures.hpp"
#include "wordflow/phrase.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace wordflow {

// ------------------------------------------------------------------- dataset

struct DatasetRecord {
  std::string id;
  std::string text;
  std::size_t label = 0;

  friend bool operator==(const DatasetRecord&, const DatasetRecord&) = default;
};

/// JSON Lines, one {"id", "text", "label"} object per line; blank lines are
/// skipped. Duplicate ids or malformed lines throw FormatError.
std::vector<DatasetRecord> load_dataset(const std::filesystem::path& path);
std::vector<DatasetRecord> parse_dataset(std::string_view jsonl);
void save_dataset(const std::vector<DatasetRecord>& records, const std::filesystem::path& path);

/// SHA-256 (hex) of the records in id order.
std::string dataset_hash(const std::vector<DatasetRecord>& records);

std::string sha256_hex(std::string_view bytes);
std::uint32_t crc32c(std::string_view bytes);

// -------------------------------------------------------------------- config

struct AnalyticsConfig {
  double merge_threshold = kDefaultMergeThreshold;
  double top_fraction = kDefaultTopFraction;
  double width_jump_ratio = 2.0;
  std::optional<double> end_epsilon;  ///< per-sample default when unset
  std::size_t stripe_count = kDefaultStripeCount;
  std::size_t stripe_keywords = 8;
  std::size_t group_count = kDefaultGroupCount;
  std::size_t pie_count = kDefaultPieCount;
  std::size_t trending_k = 2;
  double hex_radius = kDefaultHexRadius;
  std::size_t keyword_layer = 0;  ///< 0 selects the last layer
  ContextClusterConfig context;
  std::size_t context_max_occurrences = 256;
  TsneConfig tsne;
};

struct PipelineConfig {
  MeasureConfig measures;
  LayoutConfig layout;
  AnalyticsConfig analytics;
  /// Worker threads for precompute; 0 uses the hardware concurrency. Not part
  /// of the stored snapshot because it cannot change the output.
  std::size_t workers = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const AnalyticsConfig& v);
void from_json(const nlohmann::json& j, AnalyticsConfig& v);
/// Writes everything except `workers`.
void to_json(nlohmann::json& j, const PipelineConfig& v);
void from_json(const nlohmann::json& j, PipelineConfig& v);

PipelineConfig load_pipeline_config(const std::filesystem::path& path);

// --------------------------------------------------------------------- store

inline constexpr std::uint32_t kStoreFormatVersion = 1;

/// Everything precomputed for one sample.
struct SampleBlock {
  std::string text;
  std::size_t label = 0;
  std::size_t predicted = 0;
  Category category = Category::TP;
  SampleMeasures measures;
  std::vector<PhrasePartition> phrases;  ///< per layer
  double end_epsilon = 0.0;
  std::vector<LineEvent> events;
  std::vector<WidthJump> width_jumps;
  std::vector<CurveSet> curves;  ///< per layer 1..L-1
  StorylineLayout layout;
};

void to_json(nlohmann::json& j, const SampleBlock& v);
void from_json(const nlohmann::json& j, SampleBlock& v);

/// Per-sample fields the online queries filter and aggregate on.
struct SampleSummary {
  std::string id;
  std::string text;
  std::size_t label = 0;
  std::size_t predicted = 0;
  double s = 0.0;
  double x = 0.0;
  Category category = Category::TP;
  std::size_t stripe = 0;
  HexCoord hex;
  /// Words only: tokens, flags and per-layer WordMeasures.
  SampleMeasures words;
};

struct CorpusBlock {
  double sigma_s = 0.0;
  ConfusionMatrix confusion;  ///< over every dataset sample
  std::vector<SampleSummary> samples;  ///< class-pair samples, id order
  std::vector<HexBin> hex;
  std::vector<Stripe> stripes;
  std::vector<std::vector<WordStats>> stripe_keywords;
  std::vector<std::vector<WordStats>> word_stats;  ///< per layer, whole corpus
  Trending trending;
  Trending trending_rank;
  std::map<std::string, ContextClusterTree> word_contexts;
};

void to_json(nlohmann::json& j, const SampleSummary& v);
void from_json(const nlohmann::json& j, SampleSummary& v);
void to_json(nlohmann::json& j, const CorpusBlock& v);
void from_json(const nlohmann::json& j, CorpusBlock& v);

struct BlockEntry {
  std::string id;
  std::string file;
  std::uint32_t crc = 0;
  std::uint64_t bytes = 0;
};

struct Manifest {
  std::uint32_t format_version = kStoreFormatVersion;
  std::string dataset_hash;
  std::string model_id;
  nlohmann::json config;  ///< PipelineConfig snapshot
  ClassPair pair;
  std::size_t class_count = 0;
  std::size_t layer_count = 0;
  std::size_t dataset_size = 0;
  bool complete = false;
  std::vector<std::string> failures;
  std::vector<BlockEntry> blocks;  ///< id order
  std::optional<BlockEntry> corpus;
  std::string content_hash;

  /// SHA-256 over everything above except content_hash itself.
  std::string compute_hash() const;
};

void to_json(nlohmann::json& j, const Manifest& v);
void from_json(const nlohmann::json& j, Manifest& v);

/// Block file: "UFXB" or "UFXC", u32 version, u32 CRC32C of the payload,
/// u64 payload length, CBOR payload.
std::string encode_block(std::string_view magic, const nlohmann::json& payload);
nlohmann::json decode_block(std::string_view magic, std::string_view bytes, const std::string& what);

struct PrecomputeOptions {
  /// Reuse valid blocks left by an earlier run with the same dataset, model
  /// and config.
  bool resume = false;
  std::function<void(std::size_t done, std::size_t total)> progress;
};

struct PrecomputeResult {
  Manifest manifest;
  std::size_t computed = 0;
  std::size_t reused = 0;
};

/// Runs the whole offline pipeline and writes the store to `dir`. Sample
/// failures are recorded in the manifest, which is then marked incomplete and
/// has no corpus block.
PrecomputeResult precompute_corpus(const ModelAdapter& adapter, const std::string& model_id,
                                   const std::vector<DatasetRecord>& dataset, ClassPair pair,
                                   const PipelineConfig& config, const std::filesystem::path& dir,
                                   const PrecomputeOptions& options = {});

/// Read-only view of a saved store. Sample blocks are loaded and verified on
/// first access; the view is safe for concurrent readers.
class MeasureStore {
 public:
  /// Missing directory or manifest and unsupported versions throw
  /// FormatError; a damaged corpus block throws CorruptStore.
  static std::shared_ptr<const MeasureStore> open(const std::filesystem::path& dir);

  const Manifest& manifest() const { return manifest_; }
  bool complete() const { return manifest_.complete && corpus_ != nullptr; }
  /// Null when the store is incomplete.
  const CorpusBlock* corpus() const { return corpus_.get(); }
  bool contains(const std::string& id) const;
  std::vector<std::string> sample_ids() const;
  /// Throws InvalidInput for unknown ids and CorruptStore for damaged blocks.
  std::shared_ptr<const SampleBlock> sample(const std::string& id) const;

 private:
  std::filesystem::path dir_;
  Manifest manifest_;
  std::unique_ptr<CorpusBlock> corpus_;
  std::map<std::string, std::size_t> index_;
  mutable std::mutex mutex_;
  mutable std::map<std::string, std::shared_ptr<const SampleBlock>> cache_;
};

}  // namespace wordflow
