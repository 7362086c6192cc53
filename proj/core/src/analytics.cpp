#include "wordflow/analytics.hpp"

#include "wordflow/error.hpp"
#include "wordflow/phrase.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <limits>
#include <numeric>
#include <random>
#include <set>

namespace wordflow {

// ---------------------------------------------------------------- class view

std::size_t ConfusionMatrix::total() const {
  std::size_t t = 0;
  for (const auto& row : counts) t += std::accumulate(row.begin(), row.end(), std::size_t{0});
  return t;
}

double ConfusionMatrix::accuracy() const {
  const std::size_t t = total();
  if (t == 0) return 0.0;
  std::size_t trace = 0;
  for (std::size_t k = 0; k < class_count; ++k) trace += counts[k][k];
  return static_cast<double>(trace) / static_cast<double>(t);
}

std::vector<std::vector<double>> ConfusionMatrix::percentages() const {
  std::vector<std::vector<double>> out(class_count, std::vector<double>(class_count, 0.0));
  for (std::size_t r = 0; r < class_count; ++r) {
    const auto row = std::accumulate(counts[r].begin(), counts[r].end(), std::size_t{0});
    if (row == 0) continue;
    for (std::size_t c = 0; c < class_count; ++c) {
      out[r][c] = 100.0 * static_cast<double>(counts[r][c]) / static_cast<double>(row);
    }
  }
  return out;
}

ConfusionMatrix confusion_matrix(std::span<const std::size_t> labels,
                                 std::span<const std::size_t> predictions, std::size_t class_count) {
  if (labels.size() != predictions.size()) throw InvalidInput("labels and predictions differ in length");
  ConfusionMatrix cm;
  cm.class_count = class_count;
  cm.counts.assign(class_count, std::vector<std::size_t>(class_count, 0));
  for (std::size_t k = 0; k < labels.size(); ++k) {
    if (labels[k] >= class_count || predictions[k] >= class_count) {
      throw InvalidInput("class id out of range in confusion matrix");
    }
    ++cm.counts[labels[k]][predictions[k]];
  }
  return cm;
}

// --------------------------------------------------------- distribution view

std::string_view to_string(Category category) {
  switch (category) {
    case Category::TP: return "TP";
    case Category::TN: return "TN";
    case Category::FP: return "FP";
    case Category::FN: return "FN";
  }
  return "TP";
}

Category category_from_string(std::string_view name) {
  for (std::size_t c = 0; c < kCategoryCount; ++c) {
    if (to_string(static_cast<Category>(c)) == name) return static_cast<Category>(c);
  }
  throw InvalidInput("unknown category '" + std::string(name) + "'");
}

Category categorize(std::size_t label, double s, ClassPair pair) {
  const bool predicted_p = s > 0.5;
  if (label == pair.p) return predicted_p ? Category::TP : Category::FN;
  if (label == pair.q) return predicted_p ? Category::FP : Category::TN;
  throw InvalidInput("label " + std::to_string(label) + " is not in the class pair");
}

namespace {

/// Row-wise conditional probabilities at the requested perplexity, then
/// symmetrized and normalized.
std::vector<double> tsne_affinities(const std::vector<std::vector<double>>& x, double perplexity) {
  const std::size_t n = x.size();
  std::vector<double> d2(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < x[i].size(); ++k) s += (x[i][k] - x[j][k]) * (x[i][k] - x[j][k]);
      d2[i * n + j] = d2[j * n + i] = s;
    }
  }
  const double target = std::log(perplexity);
  std::vector<double> p(n * n, 0.0);
  std::vector<double> row(n);
  for (std::size_t i = 0; i < n; ++i) {
    double dmin = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) dmin = std::min(dmin, d2[i * n + j]);
    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    for (int it = 0; it < 100; ++it) {
      double sum = 0.0, weighted = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        row[j] = j == i ? 0.0 : std::exp(-(d2[i * n + j] - dmin) * beta);
        sum += row[j];
        weighted += (d2[i * n + j] - dmin) * row[j];
      }
      const double entropy = std::log(sum) + beta * weighted / sum;
      if (std::abs(entropy - target) < 1e-5) break;
      if (entropy > target) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = 0.5 * (beta + lo);
      }
    }
    const double sum = std::accumulate(row.begin(), row.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j) p[i * n + j] = row[j] / sum;
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = std::max((p[i * n + j] + p[j * n + i]) / (2.0 * static_cast<double>(n)), 1e-12);
      p[i * n + j] = p[j * n + i] = v;
    }
  }
  return p;
}

}  // namespace

std::vector<double> project_1d(const std::vector<std::vector<double>>& x, const TsneConfig& cfg) {
  const std::size_t n = x.size();
  if (n < 2) throw InvalidInput("projection needs at least two points");
  for (const auto& v : x) {
    if (v.size() != x[0].size()) throw InvalidInput("embeddings differ in dimension");
    for (double e : v)
      if (!std::isfinite(e)) throw InvalidInput("embedding is not finite");
  }
  const double perplexity =
      std::max(1.0, std::min(cfg.perplexity, static_cast<double>(n - 1) / 3.0));
  const std::vector<double> p = tsne_affinities(x, perplexity);
  if (cfg.learning_rate < 0.0 || !(cfg.exaggeration > 0.0)) throw InvalidInput("invalid t-SNE settings");
  const double rate = cfg.learning_rate > 0.0 ? cfg.learning_rate
                                              : static_cast<double>(n) / (4.0 * cfg.exaggeration);

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1e-4);
  std::vector<double> y(n), update(n, 0.0), gains(n, 1.0), grad(n), num(n * n);
  for (auto& v : y) v = normal(rng);

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const bool early = it < cfg.exaggeration_iterations;
    const double exaggeration = early ? cfg.exaggeration : 1.0;
    const double momentum = early ? 0.5 : 0.8;
    double qsum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      num[i * n + i] = 0.0;
      for (std::size_t j = i + 1; j < n; ++j) {
        const double d = y[i] - y[j];
        const double v = 1.0 / (1.0 + d * d);
        num[i * n + j] = num[j * n + i] = v;
        qsum += 2.0 * v;
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      double g = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        const double w = num[i * n + j];
        g += (exaggeration * p[i * n + j] - w / qsum) * w * (y[i] - y[j]);
      }
      grad[i] = 4.0 * g;
    }
    for (std::size_t i = 0; i < n; ++i) {
      const bool same_sign = (grad[i] > 0.0) == (update[i] > 0.0);
      gains[i] = std::max(same_sign ? gains[i] * 0.8 : gains[i] + 0.2, 0.01);
      update[i] = momentum * update[i] - rate * gains[i] * grad[i];
      y[i] += update[i];
    }
    const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
    for (auto& v : y) v -= mean;
  }
  const auto [mn, mx] = std::minmax_element(y.begin(), y.end());
  const double lo = *mn, range = *mx - *mn;
  for (auto& v : y) v = range > 0.0 ? (v - lo) / range : 0.5;
  return y;
}

std::vector<double> project_1d(std::span<const std::string> ids,
                               const std::vector<std::vector<double>>& embeddings,
                               const TsneConfig& cfg) {
  if (ids.size() != embeddings.size()) throw InvalidInput("one id per embedding required");
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
  std::vector<std::vector<double>> sorted;
  sorted.reserve(order.size());
  for (auto k : order) sorted.push_back(embeddings[k]);
  const auto coords = project_1d(sorted, cfg);
  std::vector<double> out(coords.size());
  for (std::size_t k = 0; k < order.size(); ++k) out[order[k]] = coords[k];
  return out;
}

HexCoord hex_cell(double x, double y, double radius) {
  if (!(radius > 0.0)) throw InvalidInput("hex radius must be > 0");
  const double qf = (std::sqrt(3.0) / 3.0 * x - y / 3.0) / radius;
  const double rf = (2.0 / 3.0 * y) / radius;
  const double sf = -qf - rf;
  double q = std::round(qf), r = std::round(rf), s = std::round(sf);
  const double dq = std::abs(q - qf), dr = std::abs(r - rf), ds = std::abs(s - sf);
  if (dq > dr && dq > ds) q = -r - s;
  else if (dr > ds) r = -q - s;
  return {static_cast<int>(q), static_cast<int>(r)};
}

std::array<double, 2> hex_center(HexCoord c, double radius) {
  return {radius * std::sqrt(3.0) * (c.q + 0.5 * c.r), radius * 1.5 * c.r};
}

std::size_t HexBin::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::size_t{0});
}

std::vector<HexBin> hex_bin(std::span<const ProjectedSample> points, double radius) {
  std::map<HexCoord, HexBin> cells;
  for (const auto& pt : points) {
    const HexCoord c = hex_cell(pt.x, pt.s, radius);
    auto [it, fresh] = cells.try_emplace(c);
    if (fresh) {
      it->second.cell = c;
      const auto center = hex_center(c, radius);
      it->second.cx = center[0];
      it->second.cy = center[1];
    }
    ++it->second.counts[static_cast<std::size_t>(pt.category)];
  }
  std::array<std::size_t, kCategoryCount> peak{};
  for (const auto& [c, bin] : cells)
    for (std::size_t k = 0; k < kCategoryCount; ++k) peak[k] = std::max(peak[k], bin.counts[k]);
  std::vector<HexBin> out;
  for (auto& [c, bin] : cells) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < kCategoryCount; ++k)
      if (bin.counts[k] > bin.counts[best]) best = k;
    bin.dominant = static_cast<Category>(best);
    for (std::size_t k = 0; k < kCategoryCount; ++k) {
      bin.darkness[k] = peak[k] ? static_cast<double>(bin.counts[k]) / static_cast<double>(peak[k]) : 0.0;
    }
    out.push_back(bin);
  }
  return out;
}

std::size_t stripe_index(double s, std::size_t count, double lo, double hi) {
  if (count == 0 || !(hi > lo)) throw InvalidInput("invalid stripe range");
  if (s >= hi) return count - 1;
  if (s <= lo) return 0;
  const auto k = static_cast<std::size_t>(std::floor((s - lo) / (hi - lo) * static_cast<double>(count)));
  return std::min(k, count - 1);
}

std::vector<Stripe> stripe_histogram(std::span<const double> scores,
                                     std::span<const std::size_t> labels, std::size_t class_count,
                                     std::size_t count, double lo, double hi) {
  if (scores.size() != labels.size()) throw InvalidInput("one label per score required");
  if (count == 0 || !(hi > lo)) throw InvalidInput("invalid stripe range");
  std::vector<Stripe> out(count);
  const double width = (hi - lo) / static_cast<double>(count);
  for (std::size_t k = 0; k < count; ++k) {
    out[k].index = k;
    out[k].lo = lo + width * static_cast<double>(k);
    out[k].hi = k + 1 == count ? hi : lo + width * static_cast<double>(k + 1);
    out[k].class_counts.assign(class_count, 0);
  }
  for (std::size_t n = 0; n < scores.size(); ++n) {
    const double s = scores[n];
    const bool inside = (s >= lo && s < hi) || (s == hi && hi == 1.0);
    if (!inside) continue;
    if (labels[n] >= class_count) throw InvalidInput("label out of range");
    auto& st = out[stripe_index(s, count, lo, hi)];
    ++st.count;
    ++st.class_counts[labels[n]];
  }
  return out;
}

// ------------------------------------------------------------------ keywords

double word_importance(double tf, double contribution) {
  if (tf < 0.0 || contribution < 0.0) throw InvalidInput("tf and contribution must be >= 0");
  return std::log(tf + 1.0) * contribution;
}

Polarity majority_polarity(const std::array<std::size_t, 3>& h) {
  const auto p = h[static_cast<std::size_t>(Polarity::PRelevant)];
  const auto q = h[static_cast<std::size_t>(Polarity::QRelevant)];
  const auto i = h[static_cast<std::size_t>(Polarity::Irrelevant)];
  if (p > q && p > i) return Polarity::PRelevant;
  if (q > p && q > i) return Polarity::QRelevant;
  return Polarity::Irrelevant;
}

std::vector<WordStats> word_stats(std::span<const SampleMeasures* const> selection,
                                  std::size_t layer) {
  struct Acc {
    std::size_t tf = 0;
    double sum = 0.0;
    std::array<std::size_t, 3> hist{};
  };
  std::map<std::string, Acc> acc;
  for (const auto* sm : selection) {
    if (layer < 1 || layer > sm->layer_count()) throw InvalidInput("layer out of range");
    const auto& words = sm->words[layer - 1];
    for (std::size_t i = 0; i < words.size(); ++i) {
      if (sm->special_flags[i]) continue;
      auto& a = acc[sm->tokens[i]];
      ++a.tf;
      a.sum += words[i].contribution;
      ++a.hist[static_cast<std::size_t>(words[i].polarity)];
    }
  }
  std::vector<WordStats> out;
  out.reserve(acc.size());
  for (const auto& [word, a] : acc) {
    WordStats ws;
    ws.word = word;
    ws.tf = a.tf;
    ws.contribution = a.sum / static_cast<double>(a.tf);
    ws.importance = word_importance(static_cast<double>(a.tf), ws.contribution);
    ws.polarity_histogram = a.hist;
    ws.dominant = majority_polarity(a.hist);
    out.push_back(std::move(ws));
  }
  std::stable_sort(out.begin(), out.end(), [](const WordStats& a, const WordStats& b) {
    return a.importance > b.importance;
  });
  return out;
}

std::vector<WordStats> select_keywords(std::span<const SampleMeasures* const> selection,
                                       std::size_t layer, std::size_t top_k) {
  if (selection.empty()) throw EmptySelection("keyword selection is empty");
  auto all = word_stats(selection, layer);
  if (all.size() > top_k) all.resize(top_k);
  return all;
}

// -------------------------------------------------------- word contribution

std::vector<std::vector<WordScore>> percentile_groups(std::vector<WordScore> words,
                                                      std::size_t groups) {
  if (groups == 0) throw InvalidInput("group count must be >= 1");
  std::sort(words.begin(), words.end(), [](const WordScore& a, const WordScore& b) {
    if (a.value != b.value) return a.value > b.value;
    return a.word < b.word;
  });
  std::vector<std::vector<WordScore>> out(groups);
  const std::size_t base = words.size() / groups, extra = words.size() % groups;
  std::size_t next = 0;
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t size = base + (g < extra ? 1 : 0);
    out[g].assign(words.begin() + static_cast<std::ptrdiff_t>(next),
                  words.begin() + static_cast<std::ptrdiff_t>(next + size));
    next += size;
  }
  return out;
}

Trending detect_trending(std::span<const WordSeries> series, std::size_t k) {
  Trending t;
  for (const auto& s : series) {
    if (s.values.size() < 2) continue;
    bool up = true, down = true, strict = false;
    for (std::size_t l = 1; l < s.values.size(); ++l) {
      if (s.values[l] < s.values[l - 1]) up = false;
      if (s.values[l] > s.values[l - 1]) down = false;
      if (s.values[l] != s.values[l - 1]) strict = true;
    }
    if (!strict) continue;
    const double change = s.values.back() - s.values.front();
    if (up) t.increasing.push_back({s.word, change});
    if (down) t.decreasing.push_back({s.word, change});
  }
  auto rank = [k](std::vector<TrendingWord>& v) {
    std::sort(v.begin(), v.end(), [](const TrendingWord& a, const TrendingWord& b) {
      if (std::abs(a.change) != std::abs(b.change)) return std::abs(a.change) > std::abs(b.change);
      return a.word < b.word;
    });
    if (v.size() > k) v.resize(k);
  };
  rank(t.increasing);
  rank(t.decreasing);
  return t;
}

std::vector<WordSeries> rank_series(std::span<const WordSeries> series) {
  std::vector<WordSeries> out(series.begin(), series.end());
  std::size_t layers = 0;
  for (const auto& s : series) layers = std::max(layers, s.values.size());
  for (std::size_t l = 0; l < layers; ++l) {
    std::vector<std::size_t> idx;
    for (std::size_t k = 0; k < series.size(); ++k)
      if (l < series[k].values.size()) idx.push_back(k);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return series[a].values[l] < series[b].values[l];
    });
    const double denom = idx.size() > 1 ? static_cast<double>(idx.size() - 1) : 1.0;
    for (std::size_t a = 0; a < idx.size();) {
      std::size_t b = a;
      while (b + 1 < idx.size() && series[idx[b + 1]].values[l] == series[idx[a]].values[l]) ++b;
      const double r = idx.size() > 1 ? 0.5 * static_cast<double>(a + b) / denom : 1.0;
      for (std::size_t c = a; c <= b; ++c) out[idx[c]].values[l] = r;
      a = b + 1;
    }
  }
  return out;
}

// -------------------------------------------------------------- word context

std::string context_phrase(const ContextOccurrence& occ, std::size_t layer, double cutoff) {
  if (layer < 1 || layer > occ.contexts.size()) throw InvalidInput("layer out of range");
  const auto& c = occ.contexts[layer - 1];
  const std::size_t m = occ.tokens.size();
  if (c.size() != m || occ.position >= m) throw InvalidInput("occurrence context does not match tokens");
  std::size_t start = occ.position, end = occ.position;
  while (start > 0 && c[start - 1] > cutoff) --start;
  while (end + 1 < m && c[end + 1] > cutoff) ++end;
  std::string text;
  for (std::size_t j = start; j <= end; ++j) {
    if (!text.empty()) text += ' ';
    text += occ.tokens[j];
  }
  return text;
}

std::vector<ContextPhrase> extract_context_phrases(std::span<const ContextOccurrence> occurrences,
                                                   std::span<const std::size_t> members,
                                                   std::size_t layer, double cutoff) {
  if (members.empty()) throw InvalidInput("cluster has no members");
  std::map<std::string, std::pair<std::size_t, double>> acc;
  for (auto m : members) {
    const auto& occ = occurrences[m];
    auto& a = acc[context_phrase(occ, layer, cutoff)];
    ++a.first;
    a.second += occ.contributions.at(layer - 1);
  }
  std::vector<ContextPhrase> out;
  for (const auto& [text, a] : acc) {
    const double mean = a.second / static_cast<double>(a.first);
    out.push_back({text, a.first, mean, static_cast<double>(a.first) * mean});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const ContextPhrase& a, const ContextPhrase& b) { return a.score > b.score; });
  return out;
}

namespace {

Labels canonical(const Labels& l) {
  std::map<std::size_t, std::size_t> remap;
  Labels out(l.size());
  for (std::size_t k = 0; k < l.size(); ++k) {
    auto it = remap.try_emplace(l[k], remap.size()).first;
    out[k] = it->second;
  }
  return out;
}

double choose2(double n) { return 0.5 * n * (n - 1.0); }

}  // namespace

double adjusted_rand_index(const Labels& a, const Labels& b) {
  if (a.size() != b.size()) throw InvalidInput("labellings differ in length");
  const Labels ca = canonical(a), cb = canonical(b);
  const std::size_t n = a.size();
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> table;
  std::map<std::size_t, std::size_t> ra, rb;
  for (std::size_t k = 0; k < n; ++k) {
    ++table[{ca[k], cb[k]}];
    ++ra[ca[k]];
    ++rb[cb[k]];
  }
  double index = 0.0, sa = 0.0, sb = 0.0;
  for (const auto& [key, c] : table) index += choose2(static_cast<double>(c));
  for (const auto& [key, c] : ra) sa += choose2(static_cast<double>(c));
  for (const auto& [key, c] : rb) sb += choose2(static_cast<double>(c));
  const double total = choose2(static_cast<double>(n));
  const double expected = total > 0.0 ? sa * sb / total : 0.0;
  const double max_index = 0.5 * (sa + sb);
  if (max_index - expected == 0.0) return ca == cb ? 1.0 : 0.0;
  return (index - expected) / (max_index - expected);
}

std::vector<std::size_t> representative_layers(const std::vector<Labels>& per_layer,
                                               double similarity_threshold) {
  std::vector<std::size_t> out;
  if (per_layer.empty()) return out;
  out.push_back(1);
  for (std::size_t l = 2; l <= per_layer.size(); ++l) {
    if (adjusted_rand_index(per_layer[l - 1], per_layer[out.back() - 1]) < similarity_threshold) {
      out.push_back(l);
    }
  }
  return out;
}

Labels agglomerate(const std::vector<std::vector<double>>& vectors, double threshold,
                   const Labels* init) {
  const std::size_t n = vectors.size();
  if (n == 0) return {};
  std::vector<double> d(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) d[i * n + j] = d[j * n + i] = cosine_distance(vectors[i], vectors[j]);

  std::vector<std::vector<std::size_t>> clusters;
  if (init != nullptr) {
    if (init->size() != n) throw InvalidInput("initial labelling has the wrong length");
    const Labels c = canonical(*init);
    std::vector<std::vector<std::size_t>> groups(*std::max_element(c.begin(), c.end()) + 1);
    for (std::size_t k = 0; k < n; ++k) groups[c[k]].push_back(k);
    for (auto& g : groups) {
      double sum = 0.0;
      for (std::size_t a = 0; a < g.size(); ++a)
        for (std::size_t b = a + 1; b < g.size(); ++b) sum += d[g[a] * n + g[b]];
      const double pairs = 0.5 * static_cast<double>(g.size()) * static_cast<double>(g.size() - 1);
      if (g.size() > 1 && sum / pairs > threshold) {
        for (auto k : g) clusters.push_back({k});
      } else {
        clusters.push_back(std::move(g));
      }
    }
    std::sort(clusters.begin(), clusters.end(),
              [](const auto& a, const auto& b) { return a.front() < b.front(); });
  } else {
    for (std::size_t k = 0; k < n; ++k) clusters.push_back({k});
  }

  const std::size_t c0 = clusters.size();
  std::vector<double> link(c0 * c0, 0.0);
  for (std::size_t a = 0; a < c0; ++a) {
    for (std::size_t b = a + 1; b < c0; ++b) {
      double sum = 0.0;
      for (auto i : clusters[a])
        for (auto j : clusters[b]) sum += d[i * n + j];
      link[a * c0 + b] = link[b * c0 + a] =
          sum / (static_cast<double>(clusters[a].size()) * static_cast<double>(clusters[b].size()));
    }
  }
  // Slots are retired rather than erased so link indices stay valid; the
  // alive slots remain ordered by their smallest member. Each row caches its
  // closest later slot (smallest index on ties), which reproduces a full scan
  // for the leftmost closest pair.
  std::vector<bool> alive(c0, true);
  std::vector<double> row_best(c0, std::numeric_limits<double>::infinity());
  std::vector<std::size_t> row_arg(c0, c0);
  auto refresh = [&](std::size_t a) {
    row_best[a] = std::numeric_limits<double>::infinity();
    row_arg[a] = c0;
    for (std::size_t b = a + 1; b < c0; ++b) {
      if (alive[b] && link[a * c0 + b] < row_best[a]) {
        row_best[a] = link[a * c0 + b];
        row_arg[a] = b;
      }
    }
  };
  for (std::size_t a = 0; a < c0; ++a) refresh(a);
  while (true) {
    std::size_t ba = c0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < c0; ++a) {
      if (alive[a] && row_arg[a] != c0 && row_best[a] < best) {
        best = row_best[a];
        ba = a;
      }
    }
    if (ba == c0 || best > threshold) break;
    const std::size_t bb = row_arg[ba];
    const double na = static_cast<double>(clusters[ba].size());
    const double nb = static_cast<double>(clusters[bb].size());
    for (std::size_t c = 0; c < c0; ++c) {
      if (!alive[c] || c == ba || c == bb) continue;
      const double v = (na * link[ba * c0 + c] + nb * link[bb * c0 + c]) / (na + nb);
      link[ba * c0 + c] = link[c * c0 + ba] = v;
    }
    clusters[ba].insert(clusters[ba].end(), clusters[bb].begin(), clusters[bb].end());
    std::sort(clusters[ba].begin(), clusters[ba].end());
    alive[bb] = false;
    refresh(ba);
    for (std::size_t c = 0; c < bb; ++c) {
      if (!alive[c] || c == ba) continue;
      if (row_arg[c] == ba || row_arg[c] == bb) {
        refresh(c);
      } else if (c < ba && (link[c * c0 + ba] < row_best[c] ||
                            (link[c * c0 + ba] == row_best[c] && ba < row_arg[c]))) {
        row_best[c] = link[c * c0 + ba];
        row_arg[c] = ba;
      }
    }
  }
  Labels out(n, 0);
  std::size_t next = 0;
  for (std::size_t a = 0; a < c0; ++a) {
    if (!alive[a]) continue;
    for (auto k : clusters[a]) out[k] = next;
    ++next;
  }
  return canonical(out);
}

std::vector<double> vocabulary_context(const ContextOccurrence& occ, std::size_t layer,
                                       const std::vector<std::string>& vocabulary) {
  if (layer < 1 || layer > occ.contexts.size()) throw InvalidInput("layer out of range");
  const auto& c = occ.contexts[layer - 1];
  if (c.size() != occ.tokens.size()) throw InvalidInput("context does not match tokens");
  std::vector<double> out(vocabulary.size(), 0.0);
  for (std::size_t j = 0; j < c.size(); ++j) {
    if (j == occ.position) continue;
    const auto it = std::lower_bound(vocabulary.begin(), vocabulary.end(), occ.tokens[j]);
    if (it == vocabulary.end() || *it != occ.tokens[j]) throw InvalidInput("token missing from vocabulary");
    out[static_cast<std::size_t>(it - vocabulary.begin())] += c[j];
  }
  return out;
}

ContextClusterTree cluster_word_contexts(const std::string& word,
                                         std::span<const ContextOccurrence> occurrences,
                                         const ContextClusterConfig& cfg) {
  if (occurrences.empty()) throw InvalidInput("word has no occurrences");
  const std::size_t layers = occurrences.front().contexts.size();
  std::set<std::string> vocab_set;
  for (const auto& occ : occurrences) {
    if (occ.contexts.size() != layers || occ.contributions.size() != layers ||
        occ.polarities.size() != layers) {
      throw InvalidInput("occurrences disagree on layer count");
    }
    vocab_set.insert(occ.tokens.begin(), occ.tokens.end());
  }
  const std::vector<std::string> vocabulary(vocab_set.begin(), vocab_set.end());

  ContextClusterTree tree;
  for (const auto& occ : occurrences) {
    tree.sample_ids.push_back(occ.sample_id);
    tree.positions.push_back(occ.position);
  }
  tree.word = word;
  for (std::size_t l = 1; l <= layers; ++l) {
    std::vector<std::vector<double>> vectors;
    vectors.reserve(occurrences.size());
    for (const auto& occ : occurrences) vectors.push_back(vocabulary_context(occ, l, vocabulary));
    tree.labels.push_back(agglomerate(vectors, cfg.merge_threshold, l == 1 ? nullptr : &tree.labels.back()));
  }
  tree.layers = representative_layers(tree.labels, cfg.similarity_threshold);

  std::vector<std::size_t> first_cluster;  // per representative layer
  for (std::size_t layer : tree.layers) {
    first_cluster.push_back(tree.clusters.size());
    const Labels& labels = tree.labels[layer - 1];
    const std::size_t k = *std::max_element(labels.begin(), labels.end()) + 1;
    std::vector<ContextCluster> cl(k);
    for (std::size_t o = 0; o < labels.size(); ++o) {
      cl[labels[o]].members.push_back(o);
      ++cl[labels[o]].polarity_counts[static_cast<std::size_t>(occurrences[o].polarities[layer - 1])];
    }
    for (auto& c : cl) {
      c.layer = layer;
      c.majority = majority_polarity(c.polarity_counts);
      c.phrases = extract_context_phrases(occurrences, c.members, layer, cfg.relevance_cutoff);
      if (c.phrases.size() > cfg.max_phrases) c.phrases.resize(cfg.max_phrases);
      tree.clusters.push_back(std::move(c));
    }
  }
  first_cluster.push_back(tree.clusters.size());
  for (std::size_t r = 0; r + 1 < tree.layers.size(); ++r) {
    for (std::size_t a = first_cluster[r]; a < first_cluster[r + 1]; ++a) {
      const auto& from = tree.clusters[a].members;
      for (std::size_t b = first_cluster[r + 1]; b < first_cluster[r + 2]; ++b) {
        const auto& to = tree.clusters[b].members;
        std::vector<std::size_t> shared;
        std::set_intersection(from.begin(), from.end(), to.begin(), to.end(), std::back_inserter(shared));
        if (shared.empty()) continue;
        tree.edges.push_back({a, b, shared.size(),
                              static_cast<double>(shared.size()) / static_cast<double>(from.size())});
      }
    }
  }
  return tree;
}

}  // namespace wordflow
