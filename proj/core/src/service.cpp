#include "wordflow/service.hpp"

#include "wordflow/error.hpp"
#include "wordflow/serialization.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <set>

namespace wordflow {

using nlohmann::json;

std::string_view to_string(ApiErrorCode code) {
  switch (code) {
    case ApiErrorCode::NotFound: return "NotFound";
    case ApiErrorCode::InvalidQuery: return "InvalidQuery";
    case ApiErrorCode::StoreIncomplete: return "StoreIncomplete";
  }
  return "InvalidQuery";
}

int http_status(ApiErrorCode code) {
  switch (code) {
    case ApiErrorCode::NotFound: return 404;
    case ApiErrorCode::InvalidQuery: return 400;
    case ApiErrorCode::StoreIncomplete: return 409;
  }
  return 400;
}

namespace {

[[noreturn]] void bad_query(const std::string& message) {
  throw ApiError(ApiErrorCode::InvalidQuery, message);
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t next = s.find(sep, pos);
    out.emplace_back(s.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  return out;
}

std::size_t parse_index(const std::string& key, std::string_view v) {
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    bad_query("parameter '" + key + "' must be a non-negative integer");
  }
  return out;
}

int parse_int(const std::string& key, std::string_view v) {
  int out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    bad_query("parameter '" + key + "' must be an integer");
  }
  return out;
}

double parse_real(const std::string& key, std::string_view v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty() || !std::isfinite(out)) {
    bad_query("parameter '" + key + "' must be a finite number");
  }
  return out;
}

bool parse_bool(const std::string& key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_query("parameter '" + key + "' must be true or false");
}

const std::set<std::string>& filter_keys() {
  static const std::set<std::string> keys{"stripe", "hex", "word", "misclassified", "category", "brush", "ids"};
  return keys;
}

void check_keys(const QueryParams& params, std::initializer_list<const char*> extra, bool with_filter) {
  for (const auto& [key, value] : params) {
    if (with_filter && filter_keys().count(key)) continue;
    if (std::any_of(extra.begin(), extra.end(), [&](const char* k) { return key == k; })) continue;
    bad_query("unknown parameter '" + key + "'");
  }
}

std::optional<std::string> get(const QueryParams& params, const char* key) {
  const auto it = params.find(key);
  if (it == params.end()) return std::nullopt;
  return it->second;
}

json polarity_histogram(const std::array<std::size_t, 3>& h) {
  return json{{"P", h[0]}, {"Q", h[1]}, {"I", h[2]}};
}

int percent_digit(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

std::string percent_decode(std::string_view s) {
  std::string out;
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (s[k] == '%' && k + 2 < s.size()) {
      const int hi = percent_digit(s[k + 1]);
      const int lo = percent_digit(s[k + 2]);
      if (hi >= 0 && lo >= 0) {
        out += static_cast<char>(hi * 16 + lo);
        k += 2;
        continue;
      }
    }
    out += s[k];
  }
  return out;
}

}  // namespace

// ------------------------------------------------------------------ parsing

bool SampleFilter::empty() const {
  return !stripe && !hex && !word && !misclassified && !category && !brush && !ids;
}

SampleFilter parse_filter(const QueryParams& params) {
  SampleFilter f;
  if (auto v = get(params, "stripe")) f.stripe = parse_index("stripe", *v);
  if (auto v = get(params, "hex")) {
    const auto parts = split(*v, ',');
    if (parts.size() != 2) bad_query("hex must be 'q,r'");
    f.hex = HexCoord{parse_int("hex", parts[0]), parse_int("hex", parts[1])};
  }
  if (auto v = get(params, "word")) f.word = *v;
  if (auto v = get(params, "misclassified")) f.misclassified = parse_bool("misclassified", *v);
  if (auto v = get(params, "category")) {
    try {
      f.category = category_from_string(*v);
    } catch (const Error&) {
      bad_query("unknown category '" + *v + "'");
    }
  }
  if (auto v = get(params, "brush")) {
    const auto parts = split(*v, ',');
    if (parts.size() != 4) bad_query("brush must be 'x0,x1,s0,s1'");
    Brush b{parse_real("brush", parts[0]), parse_real("brush", parts[1]), parse_real("brush", parts[2]),
            parse_real("brush", parts[3])};
    if (b.x0 > b.x1 || b.s0 > b.s1) bad_query("brush bounds are reversed");
    f.brush = b;
  }
  if (auto v = get(params, "ids")) f.ids = v->empty() ? std::vector<std::string>{} : split(*v, ',');
  return f;
}

DistributionQuery parse_distribution_query(const QueryParams& params) {
  check_keys(params, {"pair", "expand", "keywords"}, true);
  DistributionQuery q;
  q.filter = parse_filter(params);
  if (auto v = get(params, "pair")) {
    const auto parts = split(*v, ',');
    if (parts.size() != 2) bad_query("pair must be 'p,q'");
    q.pair = ClassPair{parse_index("pair", parts[0]), parse_index("pair", parts[1])};
  }
  if (auto v = get(params, "expand")) q.expand_stripe = parse_index("expand", *v);
  if (auto v = get(params, "keywords")) q.keywords = parse_index("keywords", *v);
  return q;
}

SortKey sort_key_from_string(std::string_view name) {
  if (name == "id") return SortKey::Id;
  if (name == "score" || name == "s") return SortKey::Score;
  if (name == "confidence") return SortKey::Confidence;
  if (name == "label") return SortKey::Label;
  if (name == "predicted") return SortKey::Predicted;
  if (name == "category") return SortKey::Category;
  if (name == "x") return SortKey::X;
  if (name == "length") return SortKey::Length;
  bad_query("unknown sort key '" + std::string(name) + "'");
}

SampleQuery parse_sample_query(const QueryParams& params) {
  check_keys(params, {"sort_by", "order", "offset", "limit"}, true);
  SampleQuery q;
  q.filter = parse_filter(params);
  if (auto v = get(params, "sort_by")) q.sort_by = sort_key_from_string(*v);
  if (auto v = get(params, "order")) {
    if (*v == "asc") q.descending = false;
    else if (*v == "desc") q.descending = true;
    else bad_query("order must be asc or desc");
  }
  if (auto v = get(params, "offset")) q.offset = parse_index("offset", *v);
  if (auto v = get(params, "limit")) q.limit = parse_index("limit", *v);
  if (q.limit == 0 || q.limit > kMaxPageSize) {
    bad_query("limit must be in 1.." + std::to_string(kMaxPageSize));
  }
  return q;
}

ContributionQuery parse_contribution_query(const QueryParams& params) {
  check_keys(params, {"layers", "hover", "words", "trending", "k"}, true);
  ContributionQuery q;
  q.filter = parse_filter(params);
  if (auto v = get(params, "layers")) {
    const auto parts = split(*v, ',');
    if (parts.size() != 2) bad_query("layers must be 'lo,hi'");
    q.layer_lo = parse_index("layers", parts[0]);
    q.layer_hi = parse_index("layers", parts[1]);
  }
  if (auto v = get(params, "hover")) q.hover = *v;
  if (auto v = get(params, "words")) q.words_per_layer = parse_index("words", *v);
  if (auto v = get(params, "trending")) {
    if (*v == "raw") q.rank_trending = false;
    else if (*v == "rank") q.rank_trending = true;
    else bad_query("trending must be raw or rank");
  }
  if (auto v = get(params, "k")) q.trending_k = parse_index("k", *v);
  return q;
}

// ------------------------------------------------------------------- engine

QueryEngine::QueryEngine(std::shared_ptr<const MeasureStore> store) : store_(std::move(store)) {
  if (!store_) throw InvalidInput("query engine needs a store");
  try {
    config_ = store_->manifest().config.get<PipelineConfig>();
  } catch (const std::exception&) {
    config_ = PipelineConfig{};
  }
  const std::size_t layers = store_->manifest().layer_count;
  keyword_layer_ = config_.analytics.keyword_layer == 0 ? layers
                                                          : std::min(config_.analytics.keyword_layer, layers);
  keyword_layer_ = std::max<std::size_t>(keyword_layer_, 1);
}

const CorpusBlock& QueryEngine::corpus() const {
  const CorpusBlock* c = store_->corpus();
  if (!store_->complete() || c == nullptr) {
    throw ApiError(ApiErrorCode::StoreIncomplete, "the store is incomplete; rerun precompute");
  }
  return *c;
}

std::vector<const SampleSummary*> QueryEngine::select(const SampleFilter& f) const {
  const auto& c = corpus();
  std::set<std::string> ids;
  if (f.ids) ids.insert(f.ids->begin(), f.ids->end());
  std::vector<const SampleSummary*> out;
  for (const auto& s : c.samples) {
    if (f.stripe && s.stripe != *f.stripe) continue;
    if (f.hex && !(s.hex == *f.hex)) continue;
    if (f.misclassified && is_correct(s.category)) continue;
    if (f.category && s.category != *f.category) continue;
    if (f.brush && !(s.x >= f.brush->x0 && s.x <= f.brush->x1 && s.s >= f.brush->s0 && s.s <= f.brush->s1)) {
      continue;
    }
    if (f.ids && !ids.count(s.id)) continue;
    if (f.word) {
      bool found = false;
      for (std::size_t i = 0; i < s.words.tokens.size() && !found; ++i) {
        found = !s.words.special_flags[i] && s.words.tokens[i] == *f.word;
      }
      if (!found) continue;
    }
    out.push_back(&s);
  }
  return out;
}

json QueryEngine::manifest() const {
  const auto& m = store_->manifest();
  json j = m;
  j["manifest_hash"] = m.content_hash;
  j["sample_count"] = m.blocks.size();
  return j;
}

json QueryEngine::class_view() const {
  const auto& c = corpus();
  const auto& m = store_->manifest();
  return json{{"manifest_hash", m.content_hash},
              {"class_count", c.confusion.class_count},
              {"counts", c.confusion.counts},
              {"percentages", c.confusion.percentages()},
              {"total", c.confusion.total()},
              {"accuracy", c.confusion.accuracy()},
              {"pair", m.pair}};
}

namespace {

json stripe_json(const Stripe& st, const std::vector<WordStats>& keywords) {
  json j = st;
  j["keywords"] = keywords;
  return j;
}

std::vector<const SampleMeasures*> measures_of(const std::vector<const SampleSummary*>& sel) {
  std::vector<const SampleMeasures*> out;
  out.reserve(sel.size());
  for (const auto* s : sel) out.push_back(&s->words);
  return out;
}

bool in_range(double s, double lo, double hi) { return s >= lo && (s < hi || (s == hi && hi == 1.0)); }

}  // namespace

json QueryEngine::distribution(const DistributionQuery& q) const {
  const auto& c = corpus();
  const auto& m = store_->manifest();
  const auto& a = config_.analytics;
  if (q.pair && !(*q.pair == m.pair)) {
    bad_query("the store holds class pair (" + std::to_string(m.pair.p) + ", " + std::to_string(m.pair.q) + ")");
  }
  if (q.expand_stripe && *q.expand_stripe >= a.stripe_count) bad_query("stripe index out of range");
  if (q.filter.stripe && *q.filter.stripe >= a.stripe_count) bad_query("stripe index out of range");

  const auto sel = select(q.filter);
  const bool whole = q.filter.empty();
  json j{{"manifest_hash", m.content_hash},
         {"pair", m.pair},
         {"total", sel.size()},
         {"corpus_size", c.samples.size()},
         {"hex_radius", a.hex_radius},
         {"keyword_layer", keyword_layer_},
         {"expanded", q.expand_stripe ? json(*q.expand_stripe) : json(nullptr)}};

  json points = json::array();
  std::vector<ProjectedSample> projected;
  std::vector<double> scores;
  std::vector<std::size_t> labels;
  for (const auto* s : sel) {
    points.push_back({{"id", s->id}, {"x", s->x}, {"s", s->s}, {"category", s->category}});
    projected.push_back({s->id, s->x, s->s, s->category});
    scores.push_back(s->s);
    labels.push_back(s->label);
  }
  j["points"] = std::move(points);
  j["bins"] = whole ? json(c.hex) : json(hex_bin(projected, a.hex_radius));

  json stripes = json::array();
  if (!q.expand_stripe) {
    const std::size_t k = q.keywords.value_or(a.stripe_keywords);
    const auto hist = whole ? c.stripes : stripe_histogram(scores, labels, m.class_count, a.stripe_count);
    for (std::size_t st = 0; st < hist.size(); ++st) {
      std::vector<WordStats> kw;
      if (whole && k <= a.stripe_keywords && st < c.stripe_keywords.size()) {
        const auto& stored = c.stripe_keywords[st];
        kw.assign(stored.begin(), stored.begin() + static_cast<std::ptrdiff_t>(std::min(k, stored.size())));
      } else {
        std::vector<const SampleMeasures*> in;
        for (const auto* s : sel)
          if (s->stripe == st) in.push_back(&s->words);
        if (!in.empty() && k > 0) kw = select_keywords(in, keyword_layer_, k);
      }
      stripes.push_back(stripe_json(hist[st], kw));
    }
  } else {
    const std::size_t parent = *q.expand_stripe;
    const double width = 1.0 / static_cast<double>(a.stripe_count);
    const double lo = static_cast<double>(parent) * width;
    const double hi = parent + 1 == a.stripe_count ? 1.0 : static_cast<double>(parent + 1) * width;
    const std::size_t k = q.keywords.value_or(2 * a.stripe_keywords);
    std::vector<double> sub_scores;
    std::vector<std::size_t> sub_labels;
    std::vector<const SampleSummary*> members;
    for (const auto* s : sel) {
      if (s->stripe != parent || !in_range(s->s, lo, hi)) continue;
      members.push_back(s);
      sub_scores.push_back(s->s);
      sub_labels.push_back(s->label);
    }
    const auto hist = stripe_histogram(sub_scores, sub_labels, m.class_count, kExpandSubStripes, lo, hi);
    for (std::size_t st = 0; st < hist.size(); ++st) {
      std::vector<const SampleMeasures*> in;
      for (const auto* s : members)
        if (stripe_index(s->s, kExpandSubStripes, lo, hi) == st) in.push_back(&s->words);
      std::vector<WordStats> kw;
      if (!in.empty() && k > 0) kw = select_keywords(in, keyword_layer_, k);
      stripes.push_back(stripe_json(hist[st], kw));
    }
  }
  j["stripes"] = std::move(stripes);
  return j;
}

namespace {

json summary_json(const SampleSummary& s) {
  return json{{"id", s.id},         {"text", s.text},     {"label", s.label},   {"predicted", s.predicted},
              {"s", s.s},           {"x", s.x},           {"category", s.category},
              {"stripe", s.stripe}, {"hex", s.hex},       {"length", s.words.tokens.size()}};
}

}  // namespace

json QueryEngine::samples(const SampleQuery& q) const {
  auto sel = select(q.filter);
  auto key = [&](const SampleSummary* s) -> double {
    switch (q.sort_by) {
      case SortKey::Id: return 0.0;
      case SortKey::Score: return s->s;
      case SortKey::Confidence: return std::abs(s->s - 0.5);
      case SortKey::Label: return static_cast<double>(s->label);
      case SortKey::Predicted: return static_cast<double>(s->predicted);
      case SortKey::Category: return static_cast<double>(static_cast<int>(s->category));
      case SortKey::X: return s->x;
      case SortKey::Length: return static_cast<double>(s->words.tokens.size());
    }
    return 0.0;
  };
  std::stable_sort(sel.begin(), sel.end(), [&](const SampleSummary* a, const SampleSummary* b) {
    const double ka = key(a), kb = key(b);
    if (ka != kb) return q.descending ? ka > kb : ka < kb;
    return q.descending && q.sort_by == SortKey::Id ? a->id > b->id : a->id < b->id;
  });
  json items = json::array();
  for (std::size_t k = q.offset; k < sel.size() && k < q.offset + q.limit; ++k) items.push_back(summary_json(*sel[k]));
  static constexpr const char* names[] = {"id", "score", "confidence", "label", "predicted", "category", "x", "length"};
  return json{{"manifest_hash", store_->manifest().content_hash},
              {"total", sel.size()},
              {"offset", q.offset},
              {"limit", q.limit},
              {"sort_by", names[static_cast<int>(q.sort_by)]},
              {"order", q.descending ? "desc" : "asc"},
              {"items", std::move(items)}};
}

json QueryEngine::sample_flow(const std::string& id) const {
  if (!store_->contains(id)) throw ApiError(ApiErrorCode::NotFound, "unknown sample '" + id + "'");
  const auto block = store_->sample(id);
  const auto& m = block->measures;
  const auto& y = block->layout.y;
  const std::size_t L = m.layer_count();
  const std::size_t M = m.token_count();

  double cmax = 0.0;
  for (const auto& layer : m.words)
    for (const auto& w : layer) cmax = std::max(cmax, w.contribution);
  auto width_of = [&](double c) { return cmax > 0.0 ? 1.0 + 7.0 * c / cmax : 1.0; };

  std::vector<std::size_t> end_layer(M, 0);
  for (const auto& e : block->events)
    if (e.kind == LineEventKind::LineEnd && (end_layer[e.word] == 0 || e.layer < end_layer[e.word])) {
      end_layer[e.word] = e.layer;
    }

  json lines = json::array();
  for (std::size_t i = 0; i < M; ++i) {
    json pts = json::array();
    const std::size_t last = end_layer[i] ? end_layer[i] : L;
    for (std::size_t l = 1; l <= last; ++l) {
      const auto& w = m.words[l - 1][i];
      pts.push_back({{"layer", l},
                     {"y", y[l - 1][i]},
                     {"width", width_of(w.contribution)},
                     {"color", w.polarity},
                     {"delta_s", w.delta_s},
                     {"contribution", w.contribution},
                     {"sigma_star", w.sigma_star}});
    }
    lines.push_back({{"word", i},
                     {"token", m.tokens[i]},
                     {"special", static_cast<bool>(m.special_flags[i])},
                     {"end_layer", end_layer[i] ? json(end_layer[i]) : json(nullptr)},
                     {"points", std::move(pts)}});
  }

  json events = json::array();
  for (const auto& e : block->events) {
    json ev = e;
    ev["y"] = y[e.layer - 1][e.word];
    ev["glyph"] = e.kind == LineEventKind::LineEnd ? "end" : "switch";
    events.push_back(std::move(ev));
  }

  json bands = json::array();
  for (const auto& part : block->phrases) {
    const std::size_t l = part.layer;
    for (const auto& sp : part.spans) {
      std::array<double, 3> mass{};
      for (std::size_t i = sp.start; i <= sp.end; ++i) {
        const auto& w = m.words[l - 1][i];
        mass[static_cast<int>(w.polarity)] += w.contribution;
      }
      const auto best = static_cast<std::size_t>(std::max_element(mass.begin(), mass.end()) - mass.begin());
      bands.push_back({{"layer", l},
                       {"start", sp.start},
                       {"end", sp.end},
                       {"size", sp.size()},
                       {"y0", y[l - 1][sp.start]},
                       {"y1", y[l - 1][sp.end]},
                       {"color", static_cast<Polarity>(best)}});
    }
  }

  double wmax = 0.0;
  for (const auto& cs : block->curves)
    for (const auto& cv : cs.curves) wmax = std::max(wmax, cv.edge.weight);
  json curves = json::array();
  for (const auto& cs : block->curves) {
    for (const auto& cv : cs.curves) {
      const std::size_t l = cv.edge.layer;
      json cj = cv;
      cj["y0"] = y[l - 1][cv.edge.source];
      cj["y1"] = y[l][cv.edge.target];
      cj["width"] = wmax > 0.0 ? 1.0 + 3.0 * cv.edge.weight / wmax : 1.0;
      curves.push_back(std::move(cj));
    }
  }

  return json{{"manifest_hash", store_->manifest().content_hash},
              {"sample_id", id},
              {"text", block->text},
              {"label", block->label},
              {"predicted", block->predicted},
              {"s", m.score},
              {"category", block->category},
              {"layer_count", L},
              {"grid_size", block->layout.grid_size},
              {"layout_cost", block->layout.cost},
              {"inter_word", m.inter_word},
              {"end_epsilon", block->end_epsilon},
              {"lines", std::move(lines)},
              {"events", std::move(events)},
              {"bands", std::move(bands)},
              {"curves", std::move(curves)}};
}

namespace {

constexpr double kContributionCanvasWidth = 240.0;
constexpr double kContributionCanvasHeight = 400.0;
constexpr double kMinFont = 8.0;
constexpr double kFontRange = 12.0;

/// Mean relative position (0 = first word, 1 = last) of each word across the
/// selection.
std::map<std::string, double> mean_positions(const std::vector<const SampleSummary*>& sel) {
  std::map<std::string, std::pair<double, std::size_t>> acc;
  for (const auto* s : sel) {
    const auto& t = s->words.tokens;
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (s->words.special_flags[i]) continue;
      const double rel = t.size() > 1 ? static_cast<double>(i) / static_cast<double>(t.size() - 1) : 0.5;
      auto& [sum, n] = acc[t[i]];
      sum += rel;
      ++n;
    }
  }
  std::map<std::string, double> out;
  for (const auto& [w, p] : acc) out[w] = p.first / static_cast<double>(p.second);
  return out;
}

}  // namespace

json QueryEngine::word_contribution(const ContributionQuery& q) const {
  const auto& c = corpus();
  const auto& m = store_->manifest();
  const std::size_t L = m.layer_count;
  const std::size_t lo = q.layer_lo.value_or(1);
  const std::size_t hi = q.layer_hi.value_or(L);
  if (lo < 1 || hi > L || lo > hi) bad_query("layer range must lie within 1.." + std::to_string(L));
  const auto sel = select(q.filter);
  if (sel.empty()) bad_query("the selection is empty");
  const bool whole = q.filter.empty();
  const auto selection = measures_of(sel);
  const auto positions = mean_positions(sel);
  const auto& a = config_.analytics;

  std::vector<std::vector<WordStats>> stats;
  for (std::size_t l = lo; l <= hi; ++l) stats.push_back(whole ? c.word_stats[l - 1] : word_stats(selection, l));

  json layers = json::array();
  std::map<std::string, std::pair<std::size_t, std::size_t>> sides;  // placements left, right
  for (std::size_t li = 0; li < stats.size(); ++li) {
    const std::size_t layer = lo + li;
    const auto& ws = stats[li];
    std::map<std::string, const WordStats*> by_word;
    std::vector<WordScore> scores;
    for (const auto& w : ws) {
      by_word[w.word] = &w;
      scores.push_back({w.word, w.contribution});
    }
    const auto groups = percentile_groups(scores, a.group_count);
    std::map<std::string, std::size_t> group_of, rank_of;
    json gj = json::array();
    std::size_t rank = 0;
    for (std::size_t g = 0; g < groups.size(); ++g) {
      json words = json::array();
      for (const auto& w : groups[g]) {
        group_of[w.word] = g;
        rank_of[w.word] = rank++;
        words.push_back(w);
      }
      gj.push_back({{"index", g},
                    {"size", groups[g].size()},
                    {"max", groups[g].empty() ? 0.0 : groups[g].front().value},
                    {"min", groups[g].empty() ? 0.0 : groups[g].back().value},
                    {"words", std::move(words)}});
    }

    // Placement of the most important words at their desired positions.
    const std::size_t shown = std::min(q.words_per_layer, ws.size());
    const double max_imp = shown ? std::max(ws.front().importance, 1e-12) : 1.0;
    const double n = static_cast<double>(std::max<std::size_t>(ws.size(), 1));
    std::vector<PlacementRequest> req;
    for (std::size_t k = 0; k < shown; ++k) {
      const auto& w = ws[k];
      const double font = kMinFont + kFontRange * w.importance / max_imp;
      PlacementRequest r;
      r.word = w.word;
      r.height = font;
      r.width = std::min(0.6 * font * static_cast<double>(w.word.size()) + 4.0, kContributionCanvasWidth);
      // Keep the side (left or right half) the word held in most earlier
      // layers; ties go left.
      double base = positions.at(w.word) * kContributionCanvasWidth;
      const auto side = sides.find(w.word);
      if (side != sides.end() && side->second.first + side->second.second > 0) {
        const bool left = side->second.first >= side->second.second;
        if (left != (base < kContributionCanvasWidth / 2)) base = kContributionCanvasWidth - base;
      }
      r.x = std::clamp(base, r.width / 2, kContributionCanvasWidth - r.width / 2);
      const double pct = (static_cast<double>(rank_of[w.word]) + 0.5) / n;
      r.y = std::clamp(pct * kContributionCanvasHeight, r.height / 2, kContributionCanvasHeight - r.height / 2);
      r.importance = w.importance;
      req.push_back(std::move(r));
    }
    std::vector<PlacedWord> placed;
    while (!req.empty()) {
      try {
        placed = sweepline_place(req, Canvas{kContributionCanvasWidth, kContributionCanvasHeight, 2.0}, a.pie_count);
        break;
      } catch (const PlacementOverflow&) {
        req.pop_back();
      }
    }
    json pj = json::array();
    for (const auto& p : placed) {
      const auto& w = *by_word.at(p.word);
      json e = p;
      e["importance"] = w.importance;
      e["contribution"] = w.contribution;
      e["tf"] = w.tf;
      e["color"] = w.dominant;
      e["histogram"] = polarity_histogram(w.polarity_histogram);
      e["group"] = group_of.at(p.word);
      pj.push_back(std::move(e));
      auto& side = sides[p.word];
      (p.x < kContributionCanvasWidth / 2 ? side.first : side.second)++;
    }
    layers.push_back({{"layer", layer},
                      {"word_count", ws.size()},
                      {"groups", std::move(gj)},
                      {"placements", std::move(pj)}});
  }

  const std::size_t k = q.trending_k.value_or(a.trending_k);
  Trending trending;
  if (whole && lo == 1 && hi == L && k == a.trending_k) {
    trending = q.rank_trending ? c.trending_rank : c.trending;
  } else {
    std::map<std::string, WordSeries> series;
    for (const auto& ws : stats)
      for (const auto& w : ws) {
        auto& s = series[w.word];
        s.word = w.word;
        s.values.push_back(w.contribution);
      }
    std::vector<WordSeries> flat;
    for (auto& [w, s] : series) flat.push_back(std::move(s));
    trending = q.rank_trending ? detect_trending(rank_series(flat), k) : detect_trending(flat, k);
  }

  json hover = nullptr;
  if (q.hover) {
    json traj = json::array();
    for (std::size_t li = 0; li < stats.size(); ++li) {
      const auto& ws = stats[li];
      for (std::size_t r = 0; r < ws.size(); ++r) {
        if (ws[r].word != *q.hover) continue;
        traj.push_back({{"layer", lo + li},
                        {"contribution", ws[r].contribution},
                        {"importance", ws[r].importance},
                        {"tf", ws[r].tf},
                        {"color", ws[r].dominant},
                        {"histogram", polarity_histogram(ws[r].polarity_histogram)}});
      }
    }
    hover = json{{"word", *q.hover}, {"trajectory", std::move(traj)}};
  }

  return json{{"manifest_hash", m.content_hash},
              {"layer_range", {lo, hi}},
              {"selection_size", sel.size()},
              {"canvas", {{"width", kContributionCanvasWidth}, {"height", kContributionCanvasHeight}}},
              {"layers", std::move(layers)},
              {"trending", {{"mode", q.rank_trending ? "rank" : "raw"},
                            {"k", k},
                            {"increasing", trending.increasing},
                            {"decreasing", trending.decreasing}}},
              {"hover", std::move(hover)}};
}

json QueryEngine::word_context(const std::string& word, std::optional<std::size_t> cluster) const {
  const auto& c = corpus();
  const auto it = c.word_contexts.find(word);
  if (it == c.word_contexts.end()) throw ApiError(ApiErrorCode::NotFound, "word '" + word + "' is not in the corpus");
  const auto& tree = it->second;
  if (cluster && *cluster >= tree.clusters.size()) bad_query("cluster index out of range");

  json clusters = json::array();
  for (std::size_t k = 0; k < tree.clusters.size(); ++k) {
    json cj = tree.clusters[k];
    cj["index"] = k;
    cj["size"] = tree.clusters[k].members.size();
    clusters.push_back(std::move(cj));
  }
  json selected = nullptr;
  if (cluster) {
    std::set<std::string> ids;
    json occ = json::array();
    for (auto member : tree.clusters[*cluster].members) {
      ids.insert(tree.sample_ids[member]);
      occ.push_back({{"sample_id", tree.sample_ids[member]}, {"position", tree.positions[member]}});
    }
    selected = json{{"cluster", *cluster}, {"sample_ids", ids}, {"occurrences", std::move(occ)}};
  }
  return json{{"manifest_hash", store_->manifest().content_hash},
              {"word", word},
              {"occurrence_count", tree.sample_ids.size()},
              {"layers", tree.layers},
              {"clusters", std::move(clusters)},
              {"edges", tree.edges},
              {"dag", dag_layout(tree)},
              {"selected", std::move(selected)}};
}

ApiResponse QueryEngine::handle(std::string_view path, const QueryParams& params) const {
  auto error = [&](ApiErrorCode code, const std::string& message) {
    const json body{{"error", {{"code", to_string(code)}, {"message", message}}},
                    {"manifest_hash", store_->manifest().content_hash}};
    return ApiResponse{http_status(code), body.dump()};
  };
  try {
    constexpr std::string_view prefix = "/api/v1/";
    if (path.substr(0, prefix.size()) != prefix) throw ApiError(ApiErrorCode::NotFound, "unknown endpoint");
    std::vector<std::string> seg = split(path.substr(prefix.size()), '/');
    if (!seg.empty() && seg.back().empty()) seg.pop_back();
    for (auto& s : seg) s = percent_decode(s);

    json body;
    if (seg.size() == 1 && seg[0] == "manifest") {
      check_keys(params, {}, false);
      body = manifest();
    } else if (seg.size() == 1 && seg[0] == "class-view") {
      check_keys(params, {}, false);
      body = class_view();
    } else if (seg.size() == 1 && seg[0] == "distribution") {
      body = distribution(parse_distribution_query(params));
    } else if (seg.size() == 1 && seg[0] == "samples") {
      body = samples(parse_sample_query(params));
    } else if (seg.size() == 1 && seg[0] == "word-contribution") {
      body = word_contribution(parse_contribution_query(params));
    } else if (seg.size() == 3 && seg[0] == "sample" && seg[2] == "flow") {
      check_keys(params, {}, false);
      body = sample_flow(seg[1]);
    } else if (seg.size() == 3 && seg[0] == "word" && seg[2] == "context") {
      check_keys(params, {"cluster"}, false);
      std::optional<std::size_t> cluster;
      if (auto v = get(params, "cluster")) cluster = parse_index("cluster", *v);
      body = word_context(seg[1], cluster);
    } else {
      throw ApiError(ApiErrorCode::NotFound, "unknown endpoint '" + std::string(path) + "'");
    }
    return ApiResponse{200, body.dump()};
  } catch (const ApiError& e) {
    return error(e.code(), e.what());
  } catch (const EmptySelection& e) {
    return error(ApiErrorCode::InvalidQuery, e.what());
  }
}

// ---------------------------------------------------------------------- SVG

namespace {

std::string polarity_color(const json& p) {
  const auto s = p.get<std::string>();
  if (s == "P") return "#2b6cb0";
  if (s == "Q") return "#dd6b20";
  return "#a0a0a0";
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

std::string render_flow_svg(const json& flow) {
  constexpr double margin_left = 110.0, margin_top = 30.0, layer_gap = 140.0, row = 10.0;
  const std::size_t L = flow.at("layer_count").get<std::size_t>();
  const double grid = flow.at("grid_size").get<double>();
  const double width = margin_left + layer_gap * static_cast<double>(std::max<std::size_t>(L, 1)) + 40.0;
  const double height = margin_top * 2 + row * grid;
  auto X = [&](double layer) { return margin_left + layer_gap * (layer - 1.0) + 20.0; };
  auto Y = [&](double y) { return margin_top + row * y + row / 2; };

  std::string out;
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(width) + "\" height=\"" + num(height) +
         "\" viewBox=\"0 0 " + num(width) + " " + num(height) + "\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
  for (std::size_t l = 1; l <= L; ++l) {
    out += "<text x=\"" + num(X(static_cast<double>(l))) + "\" y=\"16\" font-size=\"11\" text-anchor=\"middle\">layer " +
           std::to_string(l) + "</text>\n";
  }
  for (const auto& b : flow.at("bands")) {
    if (b.at("size").get<std::size_t>() < 2) continue;
    const double l = b.at("layer").get<double>();
    const double y0 = Y(b.at("y0").get<double>()) - row / 2, y1 = Y(b.at("y1").get<double>()) + row / 2;
    out += "<rect x=\"" + num(X(l) - 30) + "\" y=\"" + num(y0) + "\" width=\"60\" height=\"" + num(y1 - y0) +
           "\" fill=\"" + polarity_color(b.at("color")) + "\" fill-opacity=\"0.15\"/>\n";
  }
  for (const auto& c : flow.at("curves")) {
    const double l = c.at("layer").get<double>();
    const double x0 = X(l), x1 = X(l + 1), y0 = Y(c.at("y0").get<double>()), y1 = Y(c.at("y1").get<double>());
    const double mx = (x0 + x1) / 2;
    out += "<path d=\"M" + num(x0) + "," + num(y0) + " C" + num(mx) + "," + num(y0) + " " + num(mx) + "," + num(y1) +
           " " + num(x1) + "," + num(y1) + "\" fill=\"none\" stroke=\"#555555\" stroke-opacity=\"0.6\" stroke-width=\"" +
           num(c.at("width").get<double>()) + "\"/>\n";
  }
  for (const auto& line : flow.at("lines")) {
    const auto& pts = line.at("points");
    if (pts.empty()) continue;
    out += "<text x=\"" + num(margin_left - 8) + "\" y=\"" + num(Y(pts[0].at("y").get<double>()) + 4) +
           "\" font-size=\"11\" text-anchor=\"end\">" + xml_escape(line.at("token").get<std::string>()) + "</text>\n";
    for (std::size_t k = 0; k < pts.size(); ++k) {
      const auto& p = pts[k];
      const double l = p.at("layer").get<double>();
      const double xa = k == 0 ? X(l) - 20 : X(l - 1);
      const double ya = k == 0 ? Y(p.at("y").get<double>()) : Y(pts[k - 1].at("y").get<double>());
      out += "<line x1=\"" + num(xa) + "\" y1=\"" + num(ya) + "\" x2=\"" + num(X(l)) + "\" y2=\"" +
             num(Y(p.at("y").get<double>())) + "\" stroke=\"" + polarity_color(p.at("color")) +
             "\" stroke-linecap=\"round\" stroke-width=\"" + num(p.at("width").get<double>()) + "\"/>\n";
    }
  }
  for (const auto& e : flow.at("events")) {
    const double x = X(e.at("layer").get<double>()), y = Y(e.at("y").get<double>());
    if (e.at("glyph") == "end") {
      out += "<circle cx=\"" + num(x) + "\" cy=\"" + num(y) + "\" r=\"3.5\" fill=\"#ffffff\" stroke=\"#333333\"/>\n";
    } else {
      out += "<path d=\"M" + num(x) + "," + num(y - 5) + " L" + num(x + 5) + "," + num(y) + " L" + num(x) + "," +
             num(y + 5) + " L" + num(x - 5) + "," + num(y) + " Z\" fill=\"" + polarity_color(e.at("to")) +
             "\" stroke=\"#333333\"/>\n";
    }
  }
  out += "</svg>\n";
  return out;
}

}  // namespace wordflow
