#include "support.hpp"

#include "wordflow/error.hpp"
#include "wordflow/phrase.hpp"

#include <gtest/gtest.h>

#include <random>
#include <set>

using namespace wordflow;

namespace {

std::vector<ContextVector> random_vectors(std::mt19937_64& rng, std::size_t m) {
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<ContextVector> v(m, ContextVector(m));
  for (auto& row : v) {
    double total = 0;
    for (auto& x : row) total += (x = std::pow(u(rng), 3));
    for (auto& x : row) x /= total;
  }
  return v;
}

WordMeasure wm(double delta, double xi = 0.02) {
  return {delta, 0.0, 1.0, std::abs(delta), classify_polarity(delta, xi)};
}

}  // namespace

TEST(Cosine, Conventions) {
  const std::vector<double> zero{0, 0}, a{1, 0}, b{0, 2}, c{3, 0};
  EXPECT_EQ(cosine_distance(zero, zero), 0.0);
  EXPECT_EQ(cosine_distance(zero, a), 1.0);
  EXPECT_NEAR(cosine_distance(a, b), 1.0, 1e-15);
  EXPECT_NEAR(cosine_distance(a, c), 0.0, 1e-15);
}

TEST(ClusterAdjacent, MergesIdenticalNeighboursOnly) {
  // Words 0-1 share a context, 2 is alone, 3-4 share another.
  std::vector<ContextVector> v{{1, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {0, 0, 1}};
  const auto p = cluster_adjacent(v, nullptr, 0.35, 2);
  EXPECT_EQ(p.layer, 2u);
  EXPECT_EQ(p.spans, (std::vector<Span>{{0, 1}, {2, 2}, {3, 4}}));
  EXPECT_EQ(p.span_of(4), 2u);
}

TEST(ClusterAdjacent, NeverMergesAcrossAGap) {
  // Words 0 and 2 are identical but separated by an orthogonal word.
  std::vector<ContextVector> v{{1, 0}, {0, 1}, {1, 0}};
  EXPECT_EQ(cluster_adjacent(v, nullptr, 0.35).spans.size(), 3u);
}

TEST(ClusterAdjacent, AverageLinkageStopsAtThreshold) {
  // d(0,1) = 0.2, d(1,2) small; merged {1,2} is then 0.5 average from 0.
  const double t = 0.3;
  std::vector<ContextVector> v{{1, 0}, {1, 1}, {0.9, 1}};
  const auto p = cluster_adjacent(v, nullptr, t);
  p.validate(3);
  for (std::size_t k = 0; k + 1 < p.spans.size(); ++k) {
    double sum = 0;
    for (std::size_t i = p.spans[k].start; i <= p.spans[k].end; ++i)
      for (std::size_t j = p.spans[k + 1].start; j <= p.spans[k + 1].end; ++j) sum += cosine_distance(v[i], v[j]);
    EXPECT_GT(sum / (p.spans[k].size() * p.spans[k + 1].size()), t);
  }
}

TEST(ClusterAdjacent, RandomInputsGiveContiguousCovers) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = 1 + rng() % 12;
    std::vector<std::vector<ContextVector>> layers;
    for (int l = 0; l < 4; ++l) layers.push_back(random_vectors(rng, m));
    const auto parts = cluster_layers(layers, 0.1 + 0.5 * (rng() % 100) / 100.0);
    ASSERT_EQ(parts.size(), 4u);
    for (std::size_t l = 0; l < 4; ++l) {
      EXPECT_EQ(parts[l].layer, l + 1);
      EXPECT_NO_THROW(parts[l].validate(m));
    }
  }
}

TEST(ClusterAdjacent, UnchangedVectorsKeepThePartition) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = 2 + rng() % 10;
    const auto v = random_vectors(rng, m);
    const auto first = cluster_adjacent(v, nullptr, 0.3, 1);
    const auto again = cluster_adjacent(v, &first, 0.3, 2);
    EXPECT_EQ(first.spans, again.spans);
  }
}

TEST(ClusterAdjacent, IncoherentPreviousSpansSplit) {
  std::vector<ContextVector> v{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  PhrasePartition prev{1, {{0, 2}}};
  EXPECT_EQ(cluster_adjacent(v, &prev, 0.35).spans.size(), 3u);
  PhrasePartition bad{1, {{0, 0}, {2, 2}}};
  EXPECT_THROW(cluster_adjacent(v, &bad, 0.35), InvalidInput);
}

TEST(LineEvents, EndAndSwitchDetection) {
  // Word 0: P at layer 1, Q at 2 and 3. Word 1: fades below epsilon from 2 on.
  std::vector<std::vector<WordMeasure>> m{{wm(-0.3), wm(0.3)}, {wm(0.3), wm(0.001)}, {wm(0.2), wm(0.0005)}};
  const auto ev = detect_line_events(m, 0.01);
  ASSERT_EQ(ev.size(), 3u);
  EXPECT_EQ(ev[0], (LineEvent{0, 2, LineEventKind::PolaritySwitch, Polarity::PRelevant, Polarity::QRelevant}));
  EXPECT_EQ(ev[1], (LineEvent{1, 2, LineEventKind::PolaritySwitch, Polarity::QRelevant, Polarity::Irrelevant}));
  EXPECT_EQ(ev[2], (LineEvent{1, 2, LineEventKind::LineEnd}));
}

TEST(LineEvents, RecoveryCancelsAnEarlyEnd) {
  std::vector<std::vector<WordMeasure>> m{{wm(0.3)}, {wm(0.001)}, {wm(0.3)}};
  for (const auto& e : detect_line_events(m, 0.01)) EXPECT_NE(e.kind, LineEventKind::LineEnd);
}

TEST(LineEvents, DefaultEpsilonIsTenthPercentile) {
  std::vector<std::vector<WordMeasure>> m(1);
  for (int k = 0; k <= 10; ++k) m[0].push_back(wm(0.1 * k));
  EXPECT_NEAR(default_end_epsilon(m), 0.1, 1e-12);
  std::vector<std::vector<WordMeasure>> tiny{{wm(0.0), wm(0.0)}};
  EXPECT_EQ(default_end_epsilon(tiny), 1e-3);
}

TEST(WidthJumps, RatioThreshold) {
  std::vector<std::vector<WordMeasure>> m{{wm(0.1), wm(0.1)}, {wm(0.2), wm(0.19)}};
  const auto j = detect_width_jumps(m, 1e-3, 2.0);
  EXPECT_EQ(j, (std::vector<WidthJump>{{0, 2}}));
}

TEST(CurveFilter, KeepsCeilFivePercentPlusExplanatory) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = 3 + rng() % 12;
    std::vector<EdgeMI> edges;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j)
        if ((i > j ? i - j : j - i) > 1) edges.push_back({i, j, 1, u(rng) < 0.1 ? 0.0 : u(rng)});
    std::vector<Polarity> pol(m);
    for (auto& p : pol) p = static_cast<Polarity>(rng() % 3);
    std::vector<CurveEvent> events;
    for (std::size_t j = 0; j < m; ++j)
      if (u(rng) < 0.3) events.push_back({j, static_cast<Polarity>(rng() % 3)});
    const auto set = filter_curves(edges, events, pol, 0.05);
    const std::size_t want_top = (edges.size() * 5 + 99) / 100;  // ceil(5% of edges) in integers
    EXPECT_EQ(set.count(CurveTag::TopWeight), want_top);

    // Oracle: heaviest positive edge per event target with matching source polarity.
    std::set<std::pair<std::size_t, std::size_t>> top;
    auto sorted = edges;
    std::stable_sort(sorted.begin(), sorted.end(), [](const EdgeMI& a, const EdgeMI& b) {
      if (a.weight != b.weight) return a.weight > b.weight;
      return std::make_pair(a.source, a.target) < std::make_pair(b.source, b.target);
    });
    for (std::size_t k = 0; k < want_top; ++k) top.insert({sorted[k].source, sorted[k].target});
    std::set<std::pair<std::size_t, std::size_t>> expl;
    for (const auto& ev : events) {
      for (const auto& e : sorted) {
        if (e.target == ev.target && e.weight > 0 && pol[e.source] == ev.target_polarity) {
          if (!top.count({e.source, e.target})) expl.insert({e.source, e.target});
          break;
        }
      }
    }
    EXPECT_EQ(set.count(CurveTag::Explanatory), expl.size());
    EXPECT_EQ(set.curves.size(), top.size() + expl.size());
    for (const auto& c : set.curves) {
      const auto key = std::make_pair(c.edge.source, c.edge.target);
      EXPECT_TRUE(c.tag == CurveTag::TopWeight ? top.count(key) : expl.count(key));
    }
  }
}

TEST(CurveFilter, TopCountBoundaries) {
  EXPECT_EQ(top_curve_count(0, 0.05), 0u);
  EXPECT_EQ(top_curve_count(1, 0.05), 1u);
  EXPECT_EQ(top_curve_count(20, 0.05), 1u);
  EXPECT_EQ(top_curve_count(21, 0.05), 2u);
  EXPECT_EQ(top_curve_count(100, 0.05), 5u);
  EXPECT_THROW(top_curve_count(10, 0.0), InvalidInput);
}

TEST(CurveEvents, FromSwitchesAndJumps) {
  std::vector<LineEvent> line{{0, 2, LineEventKind::PolaritySwitch, Polarity::PRelevant, Polarity::QRelevant},
                              {1, 3, LineEventKind::PolaritySwitch, Polarity::PRelevant, Polarity::QRelevant},
                              {2, 2, LineEventKind::LineEnd}};
  std::vector<WidthJump> jumps{{3, 2}, {0, 2}};
  std::vector<WordMeasure> next{wm(0.5), wm(-0.5), wm(0.0), wm(-0.4)};
  const auto ev = curve_events(1, line, jumps, next);
  ASSERT_EQ(ev.size(), 2u);
  EXPECT_EQ(ev[0].target, 0u);
  EXPECT_EQ(ev[0].target_polarity, Polarity::QRelevant);
  EXPECT_EQ(ev[1].target, 3u);
  EXPECT_EQ(ev[1].target_polarity, Polarity::PRelevant);
}
