#include "wordflow/store.hpp"

#include "wordflow/binary_io.hpp"
#include "wordflow/error.hpp"
#include "wordflow/serialization.hpp"

#include <boost/crc.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

namespace wordflow {

namespace fs = std::filesystem;
using nlohmann::json;

// ------------------------------------------------------------------- hashing

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw NumericalError("SHA-256 failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int k = 0; k < len; ++k) {
    out += hex[digest[k] >> 4];
    out += hex[digest[k] & 0xF];
  }
  return out;
}

std::uint32_t crc32c(std::string_view bytes) {
  boost::crc_optimal<32, 0x1EDC6F41, 0xFFFFFFFF, 0xFFFFFFFF, true, true> crc;
  crc.process_bytes(bytes.data(), bytes.size());
  return crc.checksum();
}

namespace {

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_bytes(const fs::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CorruptStore("cannot write '" + path.string() + "'");
}

}  // namespace

// ------------------------------------------------------------------- dataset

std::vector<DatasetRecord> parse_dataset(std::string_view jsonl) {
  std::vector<DatasetRecord> out;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= jsonl.size()) {
    const std::size_t end = std::min(jsonl.find('\n', pos), jsonl.size());
    std::string_view line = jsonl.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) {
      if (end == jsonl.size()) break;
      continue;
    }
    DatasetRecord rec;
    try {
      const json j = json::parse(line);
      rec.id = j.at("id").get<std::string>();
      rec.text = j.at("text").get<std::string>();
      const auto& label = j.at("label");
      if (!label.is_number_unsigned()) throw FormatError("label must be a non-negative integer");
      rec.label = label.get<std::size_t>();
    } catch (const json::exception& e) {
      throw FormatError("dataset line " + std::to_string(line_no) + ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError("dataset line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!seen.insert(rec.id).second) throw FormatError("duplicate sample id '" + rec.id + "'");
    out.push_back(std::move(rec));
    if (end == jsonl.size()) break;
  }
  return out;
}

std::vector<DatasetRecord> load_dataset(const fs::path& path) {
  if (!fs::exists(path)) throw FormatError("cannot open dataset '" + path.string() + "'");
  return parse_dataset(read_bytes(path));
}

void save_dataset(const std::vector<DatasetRecord>& records, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
  for (const auto& r : records) out << json{{"id", r.id}, {"text", r.text}, {"label", r.label}}.dump() << '\n';
}

std::string dataset_hash(const std::vector<DatasetRecord>& records) {
  std::vector<const DatasetRecord*> sorted;
  for (const auto& r : records) sorted.push_back(&r);
  std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->id < b->id; });
  std::string canon;
  for (const auto* r : sorted) canon += json{{"id", r->id}, {"text", r->text}, {"label", r->label}}.dump() + "\n";
  return sha256_hex(canon);
}

// -------------------------------------------------------------------- config

void PipelineConfig::validate() const {
  measures.validate();
  if (!(layout.alpha >= 0.0 && layout.alpha <= 1.0) || !(layout.beta >= 0.0) || layout.grid_size < 1) {
    throw InvalidInput("invalid layout config");
  }
  const auto& a = analytics;
  if (!(a.top_fraction > 0.0 && a.top_fraction <= 1.0)) throw InvalidInput("top_fraction must be in (0, 1]");
  if (a.stripe_count == 0 || a.group_count == 0) throw InvalidInput("stripe and group counts must be >= 1");
  if (!(a.hex_radius > 0.0)) throw InvalidInput("hex radius must be > 0");
  if (!(a.width_jump_ratio > 1.0)) throw InvalidInput("width jump ratio must be > 1");
  if (a.context_max_occurrences == 0) throw InvalidInput("context_max_occurrences must be >= 1");
}

namespace {

template <typename T>
void optional_field(const json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

}  // namespace

void to_json(json& j, const AnalyticsConfig& v) {
  j = json{{"merge_threshold", v.merge_threshold},
           {"top_fraction", v.top_fraction},
           {"width_jump_ratio", v.width_jump_ratio},
           {"end_epsilon", v.end_epsilon ? json(*v.end_epsilon) : json(nullptr)},
           {"stripe_count", v.stripe_count},
           {"stripe_keywords", v.stripe_keywords},
           {"group_count", v.group_count},
           {"pie_count", v.pie_count},
           {"trending_k", v.trending_k},
           {"hex_radius", v.hex_radius},
           {"keyword_layer", v.keyword_layer},
           {"context_merge_threshold", v.context.merge_threshold},
           {"similarity_threshold", v.context.similarity_threshold},
           {"relevance_cutoff", v.context.relevance_cutoff},
           {"context_phrases", v.context.max_phrases},
           {"context_max_occurrences", v.context_max_occurrences},
           {"tsne", v.tsne}};
}

void from_json(const json& j, AnalyticsConfig& v) {
  v = AnalyticsConfig{};
  optional_field(j, "merge_threshold", v.merge_threshold);
  optional_field(j, "top_fraction", v.top_fraction);
  optional_field(j, "width_jump_ratio", v.width_jump_ratio);
  if (j.contains("end_epsilon") && !j.at("end_epsilon").is_null()) v.end_epsilon = j.at("end_epsilon").get<double>();
  optional_field(j, "stripe_count", v.stripe_count);
  optional_field(j, "stripe_keywords", v.stripe_keywords);
  optional_field(j, "group_count", v.group_count);
  optional_field(j, "pie_count", v.pie_count);
  optional_field(j, "trending_k", v.trending_k);
  optional_field(j, "hex_radius", v.hex_radius);
  optional_field(j, "keyword_layer", v.keyword_layer);
  optional_field(j, "context_merge_threshold", v.context.merge_threshold);
  optional_field(j, "similarity_threshold", v.context.similarity_threshold);
  optional_field(j, "relevance_cutoff", v.context.relevance_cutoff);
  optional_field(j, "context_phrases", v.context.max_phrases);
  optional_field(j, "context_max_occurrences", v.context_max_occurrences);
  optional_field(j, "tsne", v.tsne);
}

void to_json(json& j, const PipelineConfig& v) {
  j = json{{"measures", v.measures}, {"layout", v.layout}, {"analytics", v.analytics}};
}

void from_json(const json& j, PipelineConfig& v) {
  v = PipelineConfig{};
  optional_field(j, "measures", v.measures);
  optional_field(j, "layout", v.layout);
  optional_field(j, "analytics", v.analytics);
  optional_field(j, "workers", v.workers);
}

PipelineConfig load_pipeline_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config '" + path.string() + "'");
  try {
    json j;
    in >> j;
    auto cfg = j.get<PipelineConfig>();
    cfg.validate();
    return cfg;
  } catch (const json::exception& e) {
    throw FormatError("config '" + path.string() + "': " + e.what());
  }
}

// ------------------------------------------------------------- store blocks

void to_json(json& j, const SampleBlock& v) {
  j = json{{"text", v.text},
           {"label", v.label},
           {"predicted", v.predicted},
           {"category", v.category},
           {"measures", v.measures},
           {"phrases", v.phrases},
           {"end_epsilon", v.end_epsilon},
           {"events", v.events},
           {"width_jumps", v.width_jumps},
           {"curves", v.curves},
           {"layout", v.layout}};
}

void from_json(const json& j, SampleBlock& v) {
  j.at("text").get_to(v.text);
  j.at("label").get_to(v.label);
  j.at("predicted").get_to(v.predicted);
  j.at("category").get_to(v.category);
  j.at("measures").get_to(v.measures);
  j.at("phrases").get_to(v.phrases);
  j.at("end_epsilon").get_to(v.end_epsilon);
  j.at("events").get_to(v.events);
  j.at("width_jumps").get_to(v.width_jumps);
  j.at("curves").get_to(v.curves);
  j.at("layout").get_to(v.layout);
}

void to_json(json& j, const SampleSummary& v) {
  j = json{{"id", v.id},   {"text", v.text},         {"label", v.label}, {"predicted", v.predicted},
           {"s", v.s},     {"x", v.x},               {"category", v.category},
           {"stripe", v.stripe}, {"hex", v.hex},
           {"tokens", v.words.tokens}, {"special", v.words.special_flags}, {"words", v.words.words}};
}

void from_json(const json& j, SampleSummary& v) {
  j.at("id").get_to(v.id);
  j.at("text").get_to(v.text);
  j.at("label").get_to(v.label);
  j.at("predicted").get_to(v.predicted);
  j.at("s").get_to(v.s);
  j.at("x").get_to(v.x);
  j.at("category").get_to(v.category);
  j.at("stripe").get_to(v.stripe);
  j.at("hex").get_to(v.hex);
  v.words = SampleMeasures{};
  v.words.sample_id = v.id;
  v.words.score = v.s;
  j.at("tokens").get_to(v.words.tokens);
  j.at("special").get_to(v.words.special_flags);
  j.at("words").get_to(v.words.words);
}

void to_json(json& j, const CorpusBlock& v) {
  j = json{{"sigma_s", v.sigma_s},
           {"confusion", v.confusion},
           {"samples", v.samples},
           {"hex", v.hex},
           {"stripes", v.stripes},
           {"stripe_keywords", v.stripe_keywords},
           {"word_stats", v.word_stats},
           {"trending", v.trending},
           {"trending_rank", v.trending_rank},
           {"word_contexts", v.word_contexts}};
}

void from_json(const json& j, CorpusBlock& v) {
  j.at("sigma_s").get_to(v.sigma_s);
  j.at("confusion").get_to(v.confusion);
  j.at("samples").get_to(v.samples);
  j.at("hex").get_to(v.hex);
  j.at("stripes").get_to(v.stripes);
  j.at("stripe_keywords").get_to(v.stripe_keywords);
  j.at("word_stats").get_to(v.word_stats);
  j.at("trending").get_to(v.trending);
  j.at("trending_rank").get_to(v.trending_rank);
  j.at("word_contexts").get_to(v.word_contexts);
}

namespace {

json entry_json(const BlockEntry& e) {
  return json{{"id", e.id}, {"file", e.file}, {"crc32c", e.crc}, {"bytes", e.bytes}};
}

BlockEntry entry_from(const json& j) {
  return {j.at("id").get<std::string>(), j.at("file").get<std::string>(), j.at("crc32c").get<std::uint32_t>(),
          j.at("bytes").get<std::uint64_t>()};
}

json manifest_body(const Manifest& v) {
  json blocks = json::array();
  for (const auto& b : v.blocks) blocks.push_back(entry_json(b));
  return json{{"format_version", v.format_version},
              {"dataset_hash", v.dataset_hash},
              {"model_id", v.model_id},
              {"config", v.config},
              {"class_pair", v.pair},
              {"class_count", v.class_count},
              {"layer_count", v.layer_count},
              {"dataset_size", v.dataset_size},
              {"complete", v.complete},
              {"failures", v.failures},
              {"blocks", blocks},
              {"corpus", v.corpus ? entry_json(*v.corpus) : json(nullptr)}};
}

}  // namespace

std::string Manifest::compute_hash() const { return sha256_hex(manifest_body(*this).dump()); }

void to_json(json& j, const Manifest& v) {
  j = manifest_body(v);
  j["content_hash"] = v.content_hash;
}

void from_json(const json& j, Manifest& v) {
  j.at("format_version").get_to(v.format_version);
  j.at("dataset_hash").get_to(v.dataset_hash);
  j.at("model_id").get_to(v.model_id);
  v.config = j.at("config");
  j.at("class_pair").get_to(v.pair);
  j.at("class_count").get_to(v.class_count);
  j.at("layer_count").get_to(v.layer_count);
  j.at("dataset_size").get_to(v.dataset_size);
  j.at("complete").get_to(v.complete);
  j.at("failures").get_to(v.failures);
  v.blocks.clear();
  for (const auto& b : j.at("blocks")) v.blocks.push_back(entry_from(b));
  v.corpus.reset();
  if (!j.at("corpus").is_null()) v.corpus = entry_from(j.at("corpus"));
  j.at("content_hash").get_to(v.content_hash);
}

namespace {

/// magic, version, CRC32C and the two halves of the payload length.
constexpr std::size_t kBlockHeaderBytes = 20;

}  // namespace

std::string encode_block(std::string_view magic, const json& payload) {
  const std::vector<std::uint8_t> cbor = json::to_cbor(payload);
  const std::string_view body(reinterpret_cast<const char*>(cbor.data()), cbor.size());
  io::Writer w;
  w.bytes(magic);
  w.u32(kStoreFormatVersion);
  w.u32(crc32c(body));
  w.u32(static_cast<std::uint32_t>(body.size() & 0xFFFFFFFFu));
  w.u32(static_cast<std::uint32_t>(static_cast<std::uint64_t>(body.size()) >> 32));
  w.bytes(body);
  const auto& out = w.data();
  return std::string(out.begin(), out.end());
}

json decode_block(std::string_view magic, std::string_view bytes, const std::string& what) {
  if (magic.size() != 4) throw InvalidInput("block magic must be four bytes");
  io::Reader<CorruptStore> r(
      std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
  if (r.bytes(4) != magic) throw CorruptStore(what + ": bad magic");
  const std::uint32_t version = r.u32();
  if (version != kStoreFormatVersion) throw FormatError(what + ": unsupported block version");
  const std::uint32_t crc = r.u32();
  const std::uint64_t lo = r.u32();
  const std::uint64_t hi = r.u32();
  const std::uint64_t len = lo | (hi << 32);
  if (len != r.remaining()) throw CorruptStore(what + ": payload length mismatch");
  const std::string_view body = bytes.substr(r.position());
  if (crc32c(body) != crc) throw CorruptStore(what + ": checksum mismatch");
  try {
    return json::from_cbor(body);
  } catch (const json::exception& e) {
    throw CorruptStore(what + ": " + e.what());
  }
}

// ---------------------------------------------------------------- precompute

namespace {

template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  std::atomic<std::size_t> next{0};
  auto run = [&] {
    for (std::size_t k = next++; k < n; k = next++) fn(k);
  };
  if (workers == 1) {
    run();
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run);
  for (auto& t : pool) t.join();
}

std::size_t argmax(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

void write_atomically(const fs::path& path, std::string_view bytes) {
  const fs::path tmp = path.string() + ".tmp";
  write_bytes(tmp, bytes);
  fs::rename(tmp, path);
}

SampleBlock build_block(const ModelAdapter& adapter, const ActivationRecord& rec,
                        const DatasetRecord& data, ClassPair pair, const CorpusNormalization& norm,
                        const PipelineConfig& cfg) {
  SampleBlock b;
  b.text = data.text;
  b.label = data.label;
  b.predicted = argmax(rec.class_scores);
  b.measures = compute_sample_measures(adapter, rec, pair, norm, cfg.measures);
  b.category = categorize(data.label, b.measures.score, pair);
  const auto& words = b.measures.words;
  const auto& a = cfg.analytics;
  b.phrases = cluster_layers(b.measures.contexts, a.merge_threshold);
  b.end_epsilon = a.end_epsilon ? *a.end_epsilon : default_end_epsilon(words);
  b.events = detect_line_events(words, b.end_epsilon);
  b.width_jumps = detect_width_jumps(words, b.end_epsilon, a.width_jump_ratio);
  for (std::size_t l = 1; l < words.size(); ++l) {
    const auto events = curve_events(l, b.events, b.width_jumps, words[l]);
    std::vector<Polarity> source(words[l - 1].size());
    for (std::size_t i = 0; i < source.size(); ++i) source[i] = words[l - 1][i].polarity;
    b.curves.push_back(filter_curves(b.measures.edges[l - 1], events, source, a.top_fraction));
  }
  LayoutConfig layout = cfg.layout;
  layout.grid_size = std::max(layout.grid_size, b.measures.token_count());
  const auto profile = rescale_profile(distance_profile(b.measures.contexts), layout.grid_size, layout.fill);
  b.layout = storyline_layout(profile, layout);
  return b;
}

CorpusBlock build_corpus(const std::vector<const DatasetRecord*>& pair_records,
                         const std::vector<SampleBlock>& blocks,
                         const std::vector<std::size_t>& all_labels,
                         const std::vector<std::size_t>& all_predictions, std::size_t class_count,
                         std::size_t layer_count, double sigma_s, ClassPair pair,
                         const PipelineConfig& cfg) {
  const auto& a = cfg.analytics;
  CorpusBlock c;
  c.sigma_s = sigma_s;
  c.confusion = confusion_matrix(all_labels, all_predictions, class_count);

  const std::size_t n = blocks.size();
  std::vector<std::string> ids(n);
  std::vector<std::vector<double>> embeddings(n);
  for (std::size_t k = 0; k < n; ++k) {
    ids[k] = pair_records[k]->id;
    embeddings[k] = blocks[k].measures.embedding;
  }
  std::vector<double> x(n, 0.5);
  if (n >= 2) x = project_1d(ids, embeddings, a.tsne);

  std::vector<ProjectedSample> points;
  std::vector<double> scores;
  std::vector<std::size_t> labels;
  for (std::size_t k = 0; k < n; ++k) {
    const auto& b = blocks[k];
    SampleSummary s;
    s.id = ids[k];
    s.text = b.text;
    s.label = b.label;
    s.predicted = b.predicted;
    s.s = b.measures.score;
    s.x = x[k];
    s.category = b.category;
    s.stripe = stripe_index(s.s, a.stripe_count);
    s.hex = hex_cell(s.x, s.s, a.hex_radius);
    s.words.sample_id = s.id;
    s.words.score = s.s;
    s.words.tokens = b.measures.tokens;
    s.words.special_flags = b.measures.special_flags;
    s.words.words = b.measures.words;
    points.push_back({s.id, s.x, s.s, s.category});
    scores.push_back(s.s);
    labels.push_back(s.label);
    c.samples.push_back(std::move(s));
  }
  c.hex = hex_bin(points, a.hex_radius);
  c.stripes = stripe_histogram(scores, labels, class_count, a.stripe_count);

  const std::size_t keyword_layer = a.keyword_layer == 0 ? layer_count : a.keyword_layer;
  if (keyword_layer > layer_count) throw InvalidInput("keyword layer exceeds the model's layers");
  c.stripe_keywords.resize(a.stripe_count);
  for (std::size_t st = 0; st < a.stripe_count; ++st) {
    std::vector<const SampleMeasures*> sel;
    for (const auto& s : c.samples)
      if (s.stripe == st) sel.push_back(&s.words);
    if (!sel.empty()) c.stripe_keywords[st] = select_keywords(sel, keyword_layer, a.stripe_keywords);
  }

  std::vector<const SampleMeasures*> all;
  for (const auto& s : c.samples) all.push_back(&s.words);
  std::map<std::string, WordSeries> series;
  for (std::size_t l = 1; l <= layer_count; ++l) {
    c.word_stats.push_back(word_stats(all, l));
    for (const auto& ws : c.word_stats.back()) {
      auto& sr = series[ws.word];
      sr.word = ws.word;
      sr.values.push_back(ws.contribution);
    }
  }
  std::vector<WordSeries> flat;
  for (auto& [w, sr] : series) flat.push_back(sr);
  c.trending = detect_trending(flat, a.trending_k);
  const auto ranked = rank_series(flat);
  c.trending_rank = detect_trending(ranked, a.trending_k);

  std::map<std::string, std::vector<ContextOccurrence>> occ;
  for (std::size_t k = 0; k < n; ++k) {
    const auto& m = blocks[k].measures;
    for (std::size_t i = 0; i < m.token_count(); ++i) {
      if (m.special_flags[i]) continue;
      auto& list = occ[m.tokens[i]];
      if (list.size() >= a.context_max_occurrences) continue;
      ContextOccurrence o;
      o.sample_id = m.sample_id;
      o.position = i;
      o.tokens = m.tokens;
      for (std::size_t l = 0; l < m.layer_count(); ++l) {
        o.contexts.push_back(m.contexts[l][i]);
        o.contributions.push_back(m.words[l][i].contribution);
        o.polarities.push_back(m.words[l][i].polarity);
      }
      list.push_back(std::move(o));
    }
  }
  for (const auto& [word, list] : occ) c.word_contexts[word] = cluster_word_contexts(word, list, a.context);
  (void)pair;
  return c;
}

}  // namespace

PrecomputeResult precompute_corpus(const ModelAdapter& adapter, const std::string& model_id,
                                   const std::vector<DatasetRecord>& dataset, ClassPair pair,
                                   const PipelineConfig& config, const fs::path& dir,
                                   const PrecomputeOptions& options) {
  if (dataset.empty()) throw EmptyDataset("dataset has no samples");
  config.validate();
  const AdapterInfo info = adapter.info();
  pair.validate(info.class_count);
  for (const auto& r : dataset) {
    if (r.label >= info.class_count) {
      throw InvalidInput("sample '" + r.id + "' has label " + std::to_string(r.label) +
                         " but the model has " + std::to_string(info.class_count) + " classes");
    }
  }
  std::vector<const DatasetRecord*> records;
  for (const auto& r : dataset) records.push_back(&r);
  std::sort(records.begin(), records.end(), [](auto* a, auto* b) { return a->id < b->id; });

  Manifest manifest;
  manifest.dataset_hash = dataset_hash(dataset);
  manifest.model_id = model_id;
  manifest.config = json(config);
  manifest.pair = pair;
  manifest.class_count = info.class_count;
  manifest.layer_count = info.layer_count;
  manifest.dataset_size = dataset.size();

  fs::create_directories(dir / "samples");
  const fs::path manifest_path = dir / "manifest.json";

  std::map<std::string, BlockEntry> reusable;
  if (options.resume && fs::exists(manifest_path)) {
    try {
      const auto old = json::parse(read_bytes(manifest_path)).get<Manifest>();
      if (old.dataset_hash == manifest.dataset_hash && old.model_id == model_id &&
          old.config == manifest.config && old.pair == pair) {
        for (const auto& b : old.blocks) reusable.emplace(b.id, b);
      }
    } catch (const std::exception&) {
      reusable.clear();
    }
  }
  if (!options.resume) {
    fs::remove(manifest_path);
    fs::remove(dir / "corpus.bin");
    for (const auto& entry : fs::directory_iterator(dir / "samples")) {
      if (entry.path().extension() == ".bin") fs::remove(entry.path());
    }
  }

  const std::size_t workers =
      info.thread_safe ? (config.workers ? config.workers : std::max(1u, std::thread::hardware_concurrency())) : 1;
  const std::size_t total = records.size();

  // Pass 1: forward every sample for the confusion matrix and sigma_s.
  std::vector<ActivationRecord> recs(total);
  std::vector<std::string> errors(total);
  parallel_for(total, workers, [&](std::size_t k) {
    try {
      recs[k] = adapter.forward_full(adapter.tokenize(records[k]->id, records[k]->text));
      recs[k].validate();
    } catch (const std::exception& e) {
      errors[k] = e.what();
    }
  });
  std::vector<std::size_t> all_labels, all_predictions;
  std::vector<std::size_t> pair_index;
  std::vector<double> pair_scores;
  for (std::size_t k = 0; k < total; ++k) {
    if (!errors[k].empty()) continue;
    all_labels.push_back(records[k]->label);
    all_predictions.push_back(argmax(recs[k].class_scores));
    if (records[k]->label == pair.p || records[k]->label == pair.q) {
      pair_index.push_back(k);
      pair_scores.push_back(normalized_score(recs[k].class_scores, pair));
    }
  }
  const CorpusNormalization norm = CorpusNormalization::from_scores(pair_scores);

  // Pass 2: per-sample measures, blocks written through one writer lock.
  const std::size_t n = pair_index.size();
  std::vector<SampleBlock> blocks(n);
  std::vector<BlockEntry> entries(n);
  std::vector<char> reused(n, 0);
  std::mutex writer;
  std::atomic<std::size_t> done{0};
  parallel_for(n, workers, [&](std::size_t k) {
    const std::size_t r = pair_index[k];
    const auto& data = *records[r];
    char name[32];
    std::snprintf(name, sizeof name, "samples/%06zu.bin", k);
    try {
      if (auto it = reusable.find(data.id); it != reusable.end() && it->second.file == name) {
        try {
          const std::string bytes = read_bytes(dir / name);
          if (crc32c(std::string_view(bytes).substr(std::min<std::size_t>(bytes.size(), kBlockHeaderBytes))) == it->second.crc) {
            blocks[k] = decode_block("UFXB", bytes, data.id).get<SampleBlock>();
            entries[k] = it->second;
            reused[k] = 1;
          }
        } catch (const std::exception&) {
          reused[k] = 0;
        }
      }
      if (!reused[k]) {
        blocks[k] = build_block(adapter, recs[r], data, pair, norm, config);
        const std::string bytes = encode_block("UFXB", json(blocks[k]));
        const std::lock_guard lock(writer);
        write_atomically(dir / name, bytes);
        entries[k] = {data.id, name, crc32c(std::string_view(bytes).substr(kBlockHeaderBytes)), bytes.size()};
      }
    } catch (const std::exception& e) {
      errors[r] = e.what();
    }
    const std::size_t finished = ++done;
    if (options.progress) {
      const std::lock_guard lock(writer);
      options.progress(finished, n);
    }
  });

  PrecomputeResult result;
  for (std::size_t k = 0; k < total; ++k) {
    if (!errors[k].empty()) manifest.failures.push_back(records[k]->id + ": " + errors[k]);
  }
  for (std::size_t k = 0; k < n; ++k) {
    if (!errors[pair_index[k]].empty()) continue;
    manifest.blocks.push_back(entries[k]);
    reused[k] ? ++result.reused : ++result.computed;
  }
  if (n == 0 && manifest.failures.empty()) throw EmptyDataset("no samples belong to the class pair");

  manifest.complete = manifest.failures.empty();
  if (manifest.complete) {
    std::vector<const DatasetRecord*> pair_records;
    for (auto k : pair_index) pair_records.push_back(records[k]);
    const CorpusBlock corpus = build_corpus(pair_records, blocks, all_labels, all_predictions,
                                            info.class_count, info.layer_count, norm.sigma_s, pair, config);
    const std::string bytes = encode_block("UFXC", json(corpus));
    write_atomically(dir / "corpus.bin", bytes);
    manifest.corpus = BlockEntry{"corpus", "corpus.bin", crc32c(std::string_view(bytes).substr(kBlockHeaderBytes)), bytes.size()};
  }
  manifest.content_hash = manifest.compute_hash();
  write_atomically(manifest_path, json(manifest).dump(2) + "\n");
  result.manifest = manifest;
  return result;
}

// ---------------------------------------------------------------- open store

std::shared_ptr<const MeasureStore> MeasureStore::open(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::is_directory(dir)) throw FormatError("store directory '" + dir.string() + "' does not exist");
  if (!fs::exists(manifest_path)) throw FormatError("store '" + dir.string() + "' has no manifest");
  auto store = std::shared_ptr<MeasureStore>(new MeasureStore());
  store->dir_ = dir;
  try {
    const json j = json::parse(read_bytes(manifest_path));
    const auto version = j.at("format_version").get<std::uint32_t>();
    if (version != kStoreFormatVersion) {
      throw FormatError("store format version " + std::to_string(version) + " is not supported");
    }
    store->manifest_ = j.get<Manifest>();
  } catch (const json::exception& e) {
    throw FormatError("manifest: " + std::string(e.what()));
  }
  if (store->manifest_.compute_hash() != store->manifest_.content_hash) {
    throw CorruptStore("manifest hash does not match its content");
  }
  for (std::size_t k = 0; k < store->manifest_.blocks.size(); ++k) {
    store->index_.emplace(store->manifest_.blocks[k].id, k);
  }
  if (store->manifest_.corpus) {
    const auto& entry = *store->manifest_.corpus;
    std::string bytes;
    try {
      bytes = read_bytes(dir / entry.file);
    } catch (const Error& e) {
      throw CorruptStore("corpus block unreadable: " + std::string(e.what()));
    }
    if (bytes.size() != entry.bytes) throw CorruptStore("corpus block has the wrong size");
    const json payload = decode_block("UFXC", bytes, "corpus block");
    try {
      store->corpus_ = std::make_unique<CorpusBlock>(payload.get<CorpusBlock>());
    } catch (const json::exception& e) {
      throw CorruptStore("corpus block: " + std::string(e.what()));
    }
  }
  return store;
}

bool MeasureStore::contains(const std::string& id) const { return index_.count(id) > 0; }

std::vector<std::string> MeasureStore::sample_ids() const {
  std::vector<std::string> out;
  for (const auto& b : manifest_.blocks) out.push_back(b.id);
  return out;
}

std::shared_ptr<const SampleBlock> MeasureStore::sample(const std::string& id) const {
  const auto it = index_.find(id);
  if (it == index_.end()) throw InvalidInput("unknown sample '" + id + "'");
  {
    const std::lock_guard lock(mutex_);
    if (auto c = cache_.find(id); c != cache_.end()) return c->second;
  }
  const auto& entry = manifest_.blocks[it->second];
  std::string bytes;
  try {
    bytes = read_bytes(dir_ / entry.file);
  } catch (const Error& e) {
    throw CorruptStore("block of '" + id + "' unreadable: " + e.what());
  }
  if (bytes.size() != entry.bytes) throw CorruptStore("block of '" + id + "' has the wrong size");
  const json payload = decode_block("UFXB", bytes, "block of '" + id + "'");
  if (crc32c(std::string_view(bytes).substr(kBlockHeaderBytes)) != entry.crc) {
    throw CorruptStore("block of '" + id + "' does not match the manifest");
  }
  std::shared_ptr<const SampleBlock> block;
  try {
    block = std::make_shared<const SampleBlock>(payload.get<SampleBlock>());
  } catch (const std::exception& e) {
    throw CorruptStore("block of '" + id + "': " + e.what());
  }
  if (block->measures.sample_id != id) throw CorruptStore("block of '" + id + "' holds another sample");
  const std::lock_guard lock(mutex_);
  return cache_.emplace(id, block).first->second;
}

}  // namespace wordflow
