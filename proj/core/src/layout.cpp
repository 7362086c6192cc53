#include "wordflow/layout.hpp"

#include "wordflow/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace wordflow {

void LayoutConfig::validate(std::size_t word_count) const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidInput("alpha must be in [0, 1]");
  if (!(beta >= 0.0)) throw InvalidInput("beta must be >= 0");
  if (grid_size < 1) throw InvalidInput("grid size must be >= 1");
  if (grid_size < word_count) throw InvalidInput("grid size must be at least the word count");
  if (!(fill > 0.0)) throw InvalidInput("fill must be > 0");
}

DistanceProfile distance_profile(const std::vector<std::vector<ContextVector>>& contexts) {
  DistanceProfile d;
  for (const auto& layer : contexts) {
    std::vector<double> row(layer.size(), 0.0);
    for (std::size_t i = 1; i < layer.size(); ++i) {
      if (layer[i].size() != layer[i - 1].size()) throw InvalidInput("context vectors differ in length");
      double s = 0.0;
      for (std::size_t k = 0; k < layer[i].size(); ++k) {
        s += (layer[i][k] - layer[i - 1][k]) * (layer[i][k] - layer[i - 1][k]);
      }
      row[i] = std::sqrt(s);
    }
    d.push_back(std::move(row));
  }
  return d;
}

DistanceProfile rescale_profile(const DistanceProfile& raw, std::size_t grid_size, double fill) {
  DistanceProfile d = raw;
  const double target = fill * static_cast<double>(grid_size);
  for (auto& row : d) {
    double sum = 0.0;
    for (std::size_t i = 1; i < row.size(); ++i) sum += row[i];
    if (sum > 0.0) {
      for (std::size_t i = 1; i < row.size(); ++i) row[i] *= target / sum;
    }
    if (!row.empty()) row[0] = 0.0;
  }
  return d;
}

namespace {

void check_monotone(const std::vector<int>& row) {
  for (std::size_t i = 1; i < row.size(); ++i) {
    if (row[i] < row[i - 1]) throw ConstraintViolation("layout row is not non-decreasing");
  }
}

double stability(int a, int b, double beta) {
  const double diff = static_cast<double>(a - b);
  return diff * diff + (a != b ? beta : 0.0);
}

double readability(int lower, int upper, double target) {
  const double gap = std::abs(static_cast<double>(upper - lower)) - target;
  return gap * gap;
}

void check_shapes(const GridLayout& y, const DistanceProfile& d) {
  if (y.size() != d.size()) throw InvalidInput("layout and profile differ in layer count");
  for (std::size_t l = 0; l < y.size(); ++l) {
    if (y[l].size() != d[l].size() || y[l].size() != y[0].size()) {
      throw InvalidInput("layout and profile differ in word count");
    }
  }
}

}  // namespace

double storyline_cost(const GridLayout& y, const DistanceProfile& d, double alpha, double beta) {
  check_shapes(y, d);
  double total = 0.0;
  for (std::size_t l = 0; l < y.size(); ++l) {
    check_monotone(y[l]);
    for (std::size_t i = 0; i < y[l].size(); ++i) {
      if (l > 0) total += alpha * stability(y[l][i], y[l - 1][i], beta);
      if (i > 0) total += (1.0 - alpha) * readability(y[l][i - 1], y[l][i], d[l][i]);
    }
  }
  return total;
}

double layer_cost(const GridLayout& y, const DistanceProfile& d, std::size_t layer, double alpha,
                  double beta) {
  check_shapes(y, d);
  if (layer < 1 || layer > y.size()) throw InvalidInput("layer out of range");
  const std::size_t l = layer - 1;
  check_monotone(y[l]);
  double total = 0.0;
  for (std::size_t i = 0; i < y[l].size(); ++i) {
    if (l > 0) total += alpha * stability(y[l][i], y[l - 1][i], beta);
    if (l + 1 < y.size()) total += alpha * stability(y[l + 1][i], y[l][i], beta);
    if (i > 0) total += (1.0 - alpha) * readability(y[l][i - 1], y[l][i], d[l][i]);
  }
  return total;
}

std::vector<int> optimize_layer_dp(const std::optional<std::vector<int>>& prev,
                                   const std::optional<std::vector<int>>& next,
                                   std::span<const double> distances, double alpha, double beta,
                                   std::size_t grid_size) {
  if (grid_size < 1) throw InvalidInput("grid size must be >= 1");
  const std::size_t m = distances.size();
  if ((prev && prev->size() != m) || (next && next->size() != m)) {
    throw InvalidInput("neighbor layers differ in word count");
  }
  if (prev) check_monotone(*prev);
  if (next) check_monotone(*next);
  if (m == 0) return {};
  const auto g = static_cast<int>(grid_size);

  auto unary = [&](std::size_t i, int y) {
    double u = 0.0;
    if (prev) u += alpha * stability(y, (*prev)[i], beta);
    if (next) u += alpha * stability((*next)[i], y, beta);
    return u;
  };

  std::vector<double> f(grid_size), nf(grid_size);
  std::vector<std::vector<int>> from(m, std::vector<int>(grid_size, 0));
  for (int y = 0; y < g; ++y) f[y] = unary(0, y);
  for (std::size_t i = 1; i < m; ++i) {
    for (int y = 0; y < g; ++y) {
      double best = std::numeric_limits<double>::infinity();
      int arg = 0;
      for (int yp = 0; yp <= y; ++yp) {
        const double v = f[yp] + (1.0 - alpha) * readability(yp, y, distances[i]);
        if (v < best) {
          best = v;
          arg = yp;
        }
      }
      nf[y] = best + unary(i, y);
      from[i][y] = arg;
    }
    std::swap(f, nf);
  }
  int y = static_cast<int>(std::min_element(f.begin(), f.end()) - f.begin());
  std::vector<int> out(m);
  for (std::size_t i = m; i-- > 0;) {
    out[i] = y;
    y = from[i][y];
  }
  return out;
}

StorylineLayout storyline_layout(const DistanceProfile& d, const LayoutConfig& cfg) {
  StorylineLayout out;
  out.grid_size = cfg.grid_size;
  if (d.empty()) return out;
  const std::size_t m = d.front().size();
  cfg.validate(m);
  const int top = static_cast<int>(cfg.grid_size) - 1;
  for (const auto& row : d) {
    if (row.size() != m) throw InvalidInput("profile layers differ in word count");
    std::vector<int> y(m, 0);
    double cum = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      if (i > 0) cum += row[i];
      y[i] = std::clamp(static_cast<int>(std::lround(cum)), 0, top);
      if (i > 0) y[i] = std::max(y[i], y[i - 1]);
    }
    out.y.push_back(std::move(y));
  }
  out.cost = storyline_cost(out.y, d, cfg.alpha, cfg.beta);
  out.cost_trace.push_back(out.cost);

  const std::size_t layers = d.size();
  std::vector<std::size_t> schedule;
  for (std::size_t l = 1; l <= layers; ++l) schedule.push_back(l);
  for (std::size_t l = layers; l-- > 1;) schedule.push_back(l);

  for (std::size_t sweep = 0; sweep < cfg.max_sweeps; ++sweep) {
    for (std::size_t layer : schedule) {
      const std::size_t l = layer - 1;
      std::optional<std::vector<int>> prev, next;
      if (l > 0) prev = out.y[l - 1];
      if (l + 1 < layers) next = out.y[l + 1];
      const double before = layer_cost(out.y, d, layer, cfg.alpha, cfg.beta);
      std::vector<int> current = out.y[l];
      out.y[l] = optimize_layer_dp(prev, next, d[l], cfg.alpha, cfg.beta, cfg.grid_size);
      const double after = layer_cost(out.y, d, layer, cfg.alpha, cfg.beta);
      // Only strict improvements are kept so rounding cannot raise the cost.
      if (!(after < before - 1e-12 * (1.0 + std::abs(before)))) out.y[l] = std::move(current);
    }
    ++out.sweeps;
    const double cost = storyline_cost(out.y, d, cfg.alpha, cfg.beta);
    const double gain = out.cost - cost;
    out.cost = std::min(cost, out.cost);
    out.cost_trace.push_back(out.cost);
    if (gain < cfg.tolerance) break;
  }
  return out;
}

std::size_t wiggle_count(const GridLayout& y) {
  std::size_t n = 0;
  for (std::size_t l = 1; l < y.size(); ++l)
    for (std::size_t i = 0; i < y[l].size(); ++i) n += y[l][i] != y[l - 1][i] ? 1 : 0;
  return n;
}

// ---------------------------------------------------------------- sweepline

bool PlacedWord::overlaps(const PlacedWord& o) const {
  constexpr double eps = 1e-9;
  return std::abs(x - o.x) * 2.0 < width + o.width - eps &&
         std::abs(y - o.y) * 2.0 < height + o.height - eps;
}

std::vector<PlacedWord> sweepline_place(std::span<const PlacementRequest> words,
                                        const Canvas& canvas, std::size_t pie_count) {
  if (!(canvas.step > 0.0) || !(canvas.width > 0.0) || !(canvas.height > 0.0)) {
    throw InvalidInput("invalid canvas");
  }
  std::vector<std::size_t> order(words.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (words[a].importance != words[b].importance) return words[a].importance > words[b].importance;
    return words[a].word < words[b].word;
  });
  constexpr double eps = 1e-9;
  const int max_ring =
      static_cast<int>(std::ceil(std::max(canvas.width, canvas.height) / canvas.step)) + 1;

  std::vector<PlacedWord> out(words.size());
  std::vector<PlacedWord> placed;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const auto& req = words[order[rank]];
    if (req.width > canvas.width + eps || req.height > canvas.height + eps) {
      throw PlacementOverflow("box of '" + req.word + "' does not fit the canvas");
    }
    PlacedWord cand{req.word, 0.0, 0.0, req.width, req.height, rank < pie_count, rank};
    auto fits = [&](double cx, double cy) {
      if (cx - req.width / 2 < -eps || cx + req.width / 2 > canvas.width + eps) return false;
      if (cy - req.height / 2 < -eps || cy + req.height / 2 > canvas.height + eps) return false;
      cand.x = cx;
      cand.y = cy;
      return std::none_of(placed.begin(), placed.end(), [&](const PlacedWord& p) { return p.overlaps(cand); });
    };
    bool done = false;
    for (int r = 0; r <= max_ring && !done; ++r) {
      for (int dy = -r; dy <= r && !done; ++dy) {
        const bool edge_row = std::abs(dy) == r;
        for (int dx = -r; dx <= r; dx += edge_row ? 1 : 2 * std::max(r, 1)) {
          if (fits(req.x + dx * canvas.step, req.y + dy * canvas.step)) {
            done = true;
            break;
          }
        }
      }
    }
    if (!done) throw PlacementOverflow("no free position for '" + req.word + "'");
    placed.push_back(cand);
    out[order[rank]] = cand;
  }
  return out;
}

// ---------------------------------------------------------------------- DAG

std::size_t count_crossings(const ContextClusterTree& tree, std::span<const std::size_t> column,
                            std::span<const std::size_t> order) {
  std::size_t n = 0;
  for (std::size_t a = 0; a < tree.edges.size(); ++a) {
    for (std::size_t b = a + 1; b < tree.edges.size(); ++b) {
      const auto& e = tree.edges[a];
      const auto& f = tree.edges[b];
      if (column[e.from] != column[f.from]) continue;
      const long s1 = static_cast<long>(order[e.from]) - static_cast<long>(order[f.from]);
      const long s2 = static_cast<long>(order[e.to]) - static_cast<long>(order[f.to]);
      if ((s1 < 0 && s2 > 0) || (s1 > 0 && s2 < 0)) ++n;
    }
  }
  return n;
}

DagLayout dag_layout(const ContextClusterTree& tree) {
  DagLayout out;
  const std::size_t n = tree.clusters.size();
  std::vector<std::size_t> column(n);
  std::vector<std::vector<std::size_t>> columns(tree.layers.size());
  for (std::size_t c = 0; c < n; ++c) {
    const auto it = std::find(tree.layers.begin(), tree.layers.end(), tree.clusters[c].layer);
    if (it == tree.layers.end()) throw InvalidInput("cluster on a non-representative layer");
    column[c] = static_cast<std::size_t>(it - tree.layers.begin());
    columns[column[c]].push_back(c);
  }
  for (const auto& e : tree.edges) {
    if (column[e.to] != column[e.from] + 1) throw InvalidInput("edge skips a column");
  }
  std::vector<std::size_t> order(n);
  for (const auto& col : columns)
    for (std::size_t k = 0; k < col.size(); ++k) order[col[k]] = k;

  // Barycenter passes: down, up, down; the best ordering seen is kept.
  auto reorder = [&](std::size_t col, bool use_incoming) {
    std::vector<std::pair<double, std::size_t>> keyed;
    for (std::size_t c : columns[col]) {
      double sum = 0.0, weight = 0.0;
      for (const auto& e : tree.edges) {
        if (use_incoming && e.to == c) {
          sum += static_cast<double>(e.shared) * static_cast<double>(order[e.from]);
          weight += static_cast<double>(e.shared);
        } else if (!use_incoming && e.from == c) {
          sum += static_cast<double>(e.shared) * static_cast<double>(order[e.to]);
          weight += static_cast<double>(e.shared);
        }
      }
      keyed.emplace_back(weight > 0.0 ? sum / weight : static_cast<double>(order[c]), c);
    }
    std::stable_sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first < b.first;
      return a.second < b.second;
    });
    for (std::size_t k = 0; k < keyed.size(); ++k) order[keyed[k].second] = k;
  };
  std::vector<std::size_t> best = order;
  std::size_t best_cross = count_crossings(tree, column, order);
  for (int pass = 0; pass < 3 && best_cross > 0; ++pass) {
    if (pass % 2 == 0) {
      for (std::size_t col = 1; col < columns.size(); ++col) reorder(col, true);
    } else {
      for (std::size_t col = columns.size(); col-- > 1;) reorder(col - 1, false);
    }
    const std::size_t cross = count_crossings(tree, column, order);
    if (cross < best_cross) {
      best_cross = cross;
      best = order;
    }
  }
  order = best;
  out.crossings = best_cross;

  double tallest = 0.0;
  std::vector<double> column_height(columns.size(), 0.0);
  for (std::size_t col = 0; col < columns.size(); ++col) {
    for (std::size_t c : columns[col]) column_height[col] += static_cast<double>(tree.clusters[c].members.size());
    column_height[col] += static_cast<double>(columns[col].size() > 0 ? columns[col].size() - 1 : 0);
    tallest = std::max(tallest, column_height[col]);
  }
  out.nodes.resize(n);
  for (std::size_t col = 0; col < columns.size(); ++col) {
    std::vector<std::size_t> sorted = columns[col];
    std::sort(sorted.begin(), sorted.end(), [&](std::size_t a, std::size_t b) { return order[a] < order[b]; });
    double cursor = 0.0;
    for (std::size_t c : sorted) {
      const double h = static_cast<double>(tree.clusters[c].members.size());
      out.nodes[c] = {c, col, order[c], static_cast<double>(col),
                      tallest > 0.0 ? (cursor + h / 2) / tallest : 0.5, tallest > 0.0 ? h / tallest : 0.0};
      cursor += h + 1.0;
    }
  }
  for (const auto& e : tree.edges) out.edges.push_back({e.from, e.to, e.proportion});
  return out;
}

}  // namespace wordflow
