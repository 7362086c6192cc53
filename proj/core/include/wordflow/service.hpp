#pragma once

#include "wordflow/store.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace wordflow {

enum class ApiErrorCode { NotFound, InvalidQuery, StoreIncomplete };

std::string_view to_string(ApiErrorCode code);
int http_status(ApiErrorCode code);

class ApiError : public std::runtime_error {
 public:
  ApiError(ApiErrorCode code, const std::string& message) : std::runtime_error(message), code_(code) {}
  ApiErrorCode code() const noexcept { return code_; }

 private:
  ApiErrorCode code_;
};

/// Axis-aligned region of the distribution view: x is the projection
/// coordinate, s the normalized score. Bounds are inclusive.
struct Brush {
  double x0 = 0.0;
  double x1 = 1.0;
  double s0 = 0.0;
  double s1 = 1.0;
};

/// Sample selection shared by the corpus-level queries. Every set field must
/// match; an unset filter selects the whole corpus.
struct SampleFilter {
  std::optional<std::size_t> stripe;
  std::optional<HexCoord> hex;
  std::optional<std::string> word;
  bool misclassified = false;
  std::optional<Category> category;
  std::optional<Brush> brush;
  std::optional<std::vector<std::string>> ids;

  bool empty() const;
};

struct DistributionQuery {
  std::optional<ClassPair> pair;
  SampleFilter filter;
  /// Re-bins one stripe into finer sub-stripes with longer keyword lists.
  std::optional<std::size_t> expand_stripe;
  std::optional<std::size_t> keywords;
};

enum class SortKey { Id, Score, Confidence, Label, Predicted, Category, X, Length };

SortKey sort_key_from_string(std::string_view name);

struct SampleQuery {
  SampleFilter filter;
  SortKey sort_by = SortKey::Id;
  bool descending = false;
  std::size_t offset = 0;
  std::size_t limit = 50;
};

struct ContributionQuery {
  SampleFilter filter;
  std::optional<std::size_t> layer_lo;
  std::optional<std::size_t> layer_hi;
  std::optional<std::string> hover;
  std::size_t words_per_layer = 40;
  bool rank_trending = false;
  std::optional<std::size_t> trending_k;
};

using QueryParams = std::map<std::string, std::string>;

struct ApiResponse {
  int status = 200;
  std::string body;
};

inline constexpr std::size_t kExpandSubStripes = 4;
inline constexpr std::size_t kMaxPageSize = 1000;

/// Stateless read-only queries over one store snapshot. Every payload carries
/// the manifest content hash under "manifest_hash".
class QueryEngine {
 public:
  explicit QueryEngine(std::shared_ptr<const MeasureStore> store);

  const MeasureStore& store() const { return *store_; }

  nlohmann::json manifest() const;
  nlohmann::json class_view() const;
  nlohmann::json distribution(const DistributionQuery& q) const;
  nlohmann::json samples(const SampleQuery& q) const;
  nlohmann::json sample_flow(const std::string& id) const;
  nlohmann::json word_contribution(const ContributionQuery& q) const;
  /// With `cluster`, also lists the member sample ids of that cluster.
  nlohmann::json word_context(const std::string& word, std::optional<std::size_t> cluster = {}) const;

  /// Routes a GET path below /api/v1 with its decoded query parameters.
  /// Errors become JSON bodies with the matching HTTP status.
  ApiResponse handle(std::string_view path, const QueryParams& params) const;

 private:
  const CorpusBlock& corpus() const;
  std::vector<const SampleSummary*> select(const SampleFilter& f) const;

  std::shared_ptr<const MeasureStore> store_;
  PipelineConfig config_;
  std::size_t keyword_layer_ = 1;
};

SampleFilter parse_filter(const QueryParams& params);
DistributionQuery parse_distribution_query(const QueryParams& params);
SampleQuery parse_sample_query(const QueryParams& params);
ContributionQuery parse_contribution_query(const QueryParams& params);

/// Standalone SVG drawing of a flow payload.
std::string render_flow_svg(const nlohmann::json& flow);

/// HTTP front end. One engine, any number of concurrent requests.
class HttpServer {
 public:
  explicit HttpServer(std::shared_ptr<const MeasureStore> store);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  /// Blocks until stop().
  void run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace wordflow
