#include "wordflow/phrase.hpp"

#include "wordflow/error.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace wordflow {

void PhrasePartition::validate(std::size_t word_count) const {
  std::size_t next = 0;
  for (const auto& s : spans) {
    if (s.start != next || s.end < s.start) throw InvalidInput("partition is not a contiguous cover");
    next = s.end + 1;
  }
  if (next != word_count) throw InvalidInput("partition does not cover every word");
}

std::size_t PhrasePartition::span_of(std::size_t word) const {
  for (std::size_t k = 0; k < spans.size(); ++k) {
    if (word >= spans[k].start && word <= spans[k].end) return k;
  }
  throw InvalidInput("word " + std::to_string(word) + " outside partition");
}

double cosine_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidInput("cosine distance of vectors with different sizes");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    dot += a[k] * b[k];
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  if (na == 0.0 && nb == 0.0) return 0.0;
  if (na == 0.0 || nb == 0.0) return 1.0;
  const double cos = dot / (std::sqrt(na) * std::sqrt(nb));
  return std::clamp(1.0 - cos, 0.0, 2.0);
}

namespace {

class DistanceTable {
 public:
  explicit DistanceTable(std::span<const ContextVector> v) : n_(v.size()), d_(n_ * n_, 0.0) {
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = i + 1; j < n_; ++j) d_[i * n_ + j] = d_[j * n_ + i] = cosine_distance(v[i], v[j]);
  }
  double operator()(std::size_t i, std::size_t j) const { return d_[i * n_ + j]; }

  double mean_internal(const Span& s) const {
    if (s.size() < 2) return 0.0;
    double sum = 0.0;
    for (std::size_t i = s.start; i <= s.end; ++i)
      for (std::size_t j = i + 1; j <= s.end; ++j) sum += (*this)(i, j);
    return sum / (0.5 * static_cast<double>(s.size()) * static_cast<double>(s.size() - 1));
  }

  double linkage(const Span& a, const Span& b) const {
    double sum = 0.0;
    for (std::size_t i = a.start; i <= a.end; ++i)
      for (std::size_t j = b.start; j <= b.end; ++j) sum += (*this)(i, j);
    return sum / (static_cast<double>(a.size()) * static_cast<double>(b.size()));
  }

 private:
  std::size_t n_;
  std::vector<double> d_;
};

}  // namespace

PhrasePartition cluster_adjacent(std::span<const ContextVector> vectors,
                                 const PhrasePartition* prev, double merge_threshold,
                                 std::size_t layer) {
  const std::size_t m = vectors.size();
  PhrasePartition out;
  out.layer = layer;
  if (m == 0) return out;
  const DistanceTable dist(vectors);

  std::vector<Span> spans;
  if (prev != nullptr) {
    prev->validate(m);
    for (const auto& s : prev->spans) {
      if (dist.mean_internal(s) > merge_threshold) {
        for (std::size_t i = s.start; i <= s.end; ++i) spans.push_back({i, i});
      } else {
        spans.push_back(s);
      }
    }
  } else {
    for (std::size_t i = 0; i < m; ++i) spans.push_back({i, i});
  }

  while (spans.size() > 1) {
    std::size_t best = 0;
    double best_d = dist.linkage(spans[0], spans[1]);
    for (std::size_t k = 1; k + 1 < spans.size(); ++k) {
      const double d = dist.linkage(spans[k], spans[k + 1]);
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    if (best_d > merge_threshold) break;
    spans[best].end = spans[best + 1].end;
    spans.erase(spans.begin() + static_cast<std::ptrdiff_t>(best) + 1);
  }
  out.spans = std::move(spans);
  return out;
}

std::vector<PhrasePartition> cluster_layers(const std::vector<std::vector<ContextVector>>& contexts,
                                            double merge_threshold) {
  std::vector<PhrasePartition> out;
  for (std::size_t l = 0; l < contexts.size(); ++l) {
    out.push_back(cluster_adjacent(contexts[l], l == 0 ? nullptr : &out.back(), merge_threshold, l + 1));
  }
  return out;
}

double default_end_epsilon(const std::vector<std::vector<WordMeasure>>& measures) {
  std::vector<double> all;
  for (const auto& layer : measures)
    for (const auto& w : layer) all.push_back(w.contribution);
  if (all.empty()) return 1e-3;
  std::sort(all.begin(), all.end());
  const double pos = 0.1 * static_cast<double>(all.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, all.size() - 1);
  const double q = all[lo] + (pos - static_cast<double>(lo)) * (all[hi] - all[lo]);
  return std::max(q, 1e-3);
}

std::vector<LineEvent> detect_line_events(const std::vector<std::vector<WordMeasure>>& measures,
                                          double end_epsilon) {
  std::vector<LineEvent> events;
  if (measures.empty()) return events;
  const std::size_t layers = measures.size();
  const std::size_t m = measures.front().size();
  for (const auto& layer : measures) {
    if (layer.size() != m) throw InvalidInput("ragged measures");
  }
  std::vector<std::size_t> end_layer(m, 0);
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t first = layers + 1;
    for (std::size_t l = layers; l >= 1; --l) {
      if (measures[l - 1][i].contribution < end_epsilon) first = l;
      else break;
    }
    if (first <= layers) end_layer[i] = first;
  }
  for (std::size_t l = 1; l <= layers; ++l) {
    for (std::size_t i = 0; i < m; ++i) {
      if (l > 1 && measures[l - 1][i].polarity != measures[l - 2][i].polarity) {
        events.push_back({i, l, LineEventKind::PolaritySwitch, measures[l - 2][i].polarity,
                          measures[l - 1][i].polarity});
      }
      if (end_layer[i] == l) events.push_back({i, l, LineEventKind::LineEnd});
    }
  }
  return events;
}

std::vector<WidthJump> detect_width_jumps(const std::vector<std::vector<WordMeasure>>& measures,
                                          double floor, double ratio) {
  std::vector<WidthJump> out;
  for (std::size_t l = 2; l <= measures.size(); ++l) {
    for (std::size_t i = 0; i < measures[l - 1].size(); ++i) {
      const double a = std::max(measures[l - 2][i].contribution, floor);
      const double b = std::max(measures[l - 1][i].contribution, floor);
      if (a <= 0.0 || b <= 0.0) continue;
      if (std::max(a, b) >= ratio * std::min(a, b)) out.push_back({i, l});
    }
  }
  return out;
}

std::size_t CurveSet::count(CurveTag tag) const {
  return static_cast<std::size_t>(
      std::count_if(curves.begin(), curves.end(), [&](const Curve& c) { return c.tag == tag; }));
}

std::size_t top_curve_count(std::size_t edge_count, double top_fraction) {
  if (!(top_fraction > 0.0) || top_fraction > 1.0) throw InvalidInput("top_fraction must be in (0, 1]");
  const double raw = std::ceil(top_fraction * static_cast<double>(edge_count) - 1e-9);
  return std::min(edge_count, static_cast<std::size_t>(std::max(raw, 0.0)));
}

CurveSet filter_curves(std::span<const EdgeMI> edges, std::span<const CurveEvent> events,
                       std::span<const Polarity> source_polarity, double top_fraction) {
  const std::size_t keep = top_curve_count(edges.size(), top_fraction);
  std::vector<std::size_t> order(edges.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  auto heavier = [&](std::size_t a, std::size_t b) {
    const auto& x = edges[a];
    const auto& y = edges[b];
    if (x.weight != y.weight) return x.weight > y.weight;
    if (x.source != y.source) return x.source < y.source;
    return x.target < y.target;
  };
  std::sort(order.begin(), order.end(), heavier);

  std::map<std::pair<std::size_t, std::size_t>, Curve> kept;
  for (std::size_t k = 0; k < keep; ++k) {
    const auto& e = edges[order[k]];
    kept.emplace(std::make_pair(e.source, e.target), Curve{e, CurveTag::TopWeight});
  }
  for (const auto& ev : events) {
    for (std::size_t idx : order) {
      const auto& e = edges[idx];
      if (e.target != ev.target || !(e.weight > 0.0)) continue;
      if (e.source >= source_polarity.size()) throw InvalidInput("edge source has no polarity");
      if (source_polarity[e.source] != ev.target_polarity) continue;
      kept.emplace(std::make_pair(e.source, e.target), Curve{e, CurveTag::Explanatory});
      break;
    }
  }
  CurveSet out;
  for (auto& [key, curve] : kept) out.curves.push_back(curve);
  return out;
}

std::vector<CurveEvent> curve_events(std::size_t layer, std::span<const LineEvent> line_events,
                                     std::span<const WidthJump> width_jumps,
                                     std::span<const WordMeasure> next_layer) {
  std::vector<bool> flagged(next_layer.size(), false);
  for (const auto& e : line_events) {
    if (e.kind == LineEventKind::PolaritySwitch && e.layer == layer + 1 && e.word < flagged.size()) {
      flagged[e.word] = true;
    }
  }
  for (const auto& w : width_jumps) {
    if (w.layer == layer + 1 && w.word < flagged.size()) flagged[w.word] = true;
  }
  std::vector<CurveEvent> out;
  for (std::size_t j = 0; j < flagged.size(); ++j) {
    if (flagged[j]) out.push_back({j, next_layer[j].polarity});
  }
  return out;
}

}  // namespace wordflow
