#pragma once

// Barnes-Hut t-SNE into two dimensions over cosine distances between
// topic mixtures. Several seeds are run and the lowest-KL result kept.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <future>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "corposcope/error.hpp"
#include "corposcope/rng.hpp"

namespace corposcope::tsne {

using Point = std::array<double, 2>;

struct EmbeddingConfig {
  std::size_t iterations = 1000;
  double learning_rate = 1000.0;
  // Stop once the projection has not moved by more than `tolerance`
  // (relative to its RMS radius) for `patience` consecutive iterations.
  std::size_t patience = 30;
  double tolerance = 1e-5;
  std::vector<std::uint64_t> seeds{0};
  double perplexity = 30.0;
  double theta = 0.5; // Barnes-Hut opening angle; <= 0.7
  double early_exaggeration = 12.0;
  std::size_t exaggeration_iterations = 250;
  std::size_t kl_log_stride = 50;
};

struct KlPoint {
  std::size_t iteration = 0;
  double kl = 0.0;
};

struct SeedRun {
  std::uint64_t seed = 0;
  std::vector<Point> coords;
  std::vector<KlPoint> kl_log; // first entry is iteration 0
  std::size_t iterations_run = 0;

  double initial_kl() const { return kl_log.front().kl; }
  double final_kl() const { return kl_log.back().kl; }
};

struct Embedding2D {
  std::vector<std::string> doc_ids;
  std::vector<Point> coords;
  double kl = 0.0;
  std::uint64_t seed = 0;
  double perplexity = 0.0;
  bool jittered = false;
  std::vector<SeedRun> runs; // coordinates of non-selected runs are dropped
};

// Sparse symmetric affinities in CSR form.
struct Affinities {
  std::vector<std::size_t> row;
  std::vector<std::size_t> col;
  std::vector<double> val;
  std::size_t n() const { return row.size() - 1; }
};

inline std::vector<std::vector<double>> cosine_distances(const std::vector<std::vector<double>>& x) {
  const std::size_t n = x.size();
  std::vector<std::vector<double>> unit(n);
  for (std::size_t i = 0; i < n; ++i) {
    double norm = 0.0;
    for (double v : x[i]) norm += v * v;
    norm = std::sqrt(norm);
    unit[i] = x[i];
    if (norm > 0.0)
      for (double& v : unit[i]) v /= norm;
  }
  std::vector<std::vector<double>> d(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < unit[i].size(); ++k) dot += unit[i][k] * unit[j][k];
      d[i][j] = d[j][i] = std::max(0.0, 1.0 - dot);
    }
  return d;
}

// Conditional Gaussian affinities over the 3 * perplexity nearest
// neighbours, calibrated by bisection on the precision, then symmetrized
// and normalized to sum to 1.
inline Affinities input_affinities(const std::vector<std::vector<double>>& dist, double perplexity) {
  const std::size_t n = dist.size();
  const std::size_t k = std::min(n - 1, static_cast<std::size_t>(std::floor(3.0 * perplexity)));
  const double target = std::log(perplexity);
  std::vector<std::vector<std::pair<std::size_t, double>>> cond(n);
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < n; ++i) {
    order.resize(n);
    std::iota(order.begin(), order.end(), 0);
    std::erase(order, i);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](auto a, auto b) { return dist[i][a] != dist[i][b] ? dist[i][a] < dist[i][b] : a < b; });
    std::vector<double> d(k), p(k);
    for (std::size_t j = 0; j < k; ++j) d[j] = dist[i][order[j]];
    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    for (int step = 0; step < 200; ++step) {
      const double dmin = d.front();
      double sum = 0.0, weighted = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        p[j] = std::exp(-beta * (d[j] - dmin));
        sum += p[j];
        weighted += p[j] * (d[j] - dmin);
      }
      const double entropy = std::log(sum) + beta * weighted / sum;
      for (auto& v : p) v /= sum;
      const double diff = entropy - target;
      if (std::abs(diff) < 1e-5) break;
      if (diff > 0) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : (beta + hi) / 2.0;
      } else {
        hi = beta;
        beta = (beta + lo) / 2.0;
      }
    }
    for (std::size_t j = 0; j < k; ++j) cond[i].emplace_back(order[j], p[j]);
  }

  std::vector<std::vector<std::pair<std::size_t, double>>> sym(n);
  for (std::size_t i = 0; i < n; ++i)
    for (const auto& [j, v] : cond[i]) {
      sym[i].emplace_back(j, v);
      sym[j].emplace_back(i, v);
    }
  Affinities P;
  P.row.push_back(0);
  for (std::size_t i = 0; i < n; ++i) {
    auto& r = sym[i];
    std::sort(r.begin(), r.end());
    for (std::size_t a = 0; a < r.size();) {
      std::size_t b = a;
      double v = 0.0;
      while (b < r.size() && r[b].first == r[a].first) v += r[b++].second;
      P.col.push_back(r[a].first);
      P.val.push_back(v / (2.0 * static_cast<double>(n)));
      a = b;
    }
    P.row.push_back(P.col.size());
  }
  return P;
}

// Exact KL(P || Q) with Student-t output similarities.
inline double kl_divergence(const Affinities& P, const std::vector<Point>& y) {
  const std::size_t n = y.size();
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dx = y[i][0] - y[j][0], dy = y[i][1] - y[j][1];
      z += 2.0 / (1.0 + dx * dx + dy * dy);
    }
  double kl = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t e = P.row[i]; e < P.row[i + 1]; ++e) {
      const std::size_t j = P.col[e];
      const double p = P.val[e];
      if (p <= 0.0) continue;
      const double dx = y[i][0] - y[j][0], dy = y[i][1] - y[j][1];
      const double q = std::max(1.0 / (1.0 + dx * dx + dy * dy) / z, std::numeric_limits<double>::min());
      kl += p * std::log(p / q);
    }
  return std::max(0.0, kl);
}

namespace detail {

class QuadTree {
public:
  explicit QuadTree(const std::vector<Point>& y) : y_(y) {
    double minx = y[0][0], maxx = y[0][0], miny = y[0][1], maxy = y[0][1];
    for (const auto& p : y) {
      minx = std::min(minx, p[0]); maxx = std::max(maxx, p[0]);
      miny = std::min(miny, p[1]); maxy = std::max(maxy, p[1]);
    }
    const double hw = std::max({maxx - minx, maxy - miny, 1e-12}) / 2.0 * (1.0 + 1e-9) + 1e-12;
    cells_.emplace_back((minx + maxx) / 2.0, (miny + maxy) / 2.0, hw);
    for (std::size_t i = 0; i < y.size(); ++i) insert(0, i, 0);
  }

  // Accumulates the unnormalized repulsive force on point i and its
  // contribution to the normalization Z.
  void repulsion(std::size_t i, double theta, double& fx, double& fy, double& z) const { visit(0, i, theta, fx, fy, z); }

private:
  static constexpr int kMaxDepth = 48;
  static constexpr std::size_t kLeafCapacity = 1;

  struct Cell {
    Cell(double x, double y, double h) : cx(x), cy(y), hw(h) {}
    double cx, cy, hw;
    double mx = 0.0, my = 0.0;
    std::size_t count = 0;
    std::array<std::int32_t, 4> child{-1, -1, -1, -1};
    std::vector<std::size_t> points; // leaves only
    bool leaf = true;
  };

  int quadrant(const Cell& c, const Point& p) const { return (p[0] >= c.cx ? 1 : 0) + (p[1] >= c.cy ? 2 : 0); }

  void insert(std::size_t cell, std::size_t i, int depth) {
    for (;;) {
      Cell& c = cells_[cell];
      c.mx += y_[i][0];
      c.my += y_[i][1];
      ++c.count;
      if (c.leaf) {
        if (c.points.size() < kLeafCapacity || depth >= kMaxDepth) {
          c.points.push_back(i);
          return;
        }
        split(cell);
      }
      const int q = quadrant(cells_[cell], y_[i]);
      cell = static_cast<std::size_t>(cells_[cell].child[q]);
      ++depth;
    }
  }

  void split(std::size_t cell) {
    const double hw = cells_[cell].hw / 2.0;
    for (int q = 0; q < 4; ++q) {
      const double cx = cells_[cell].cx + ((q & 1) ? hw : -hw);
      const double cy = cells_[cell].cy + ((q & 2) ? hw : -hw);
      cells_.emplace_back(cx, cy, hw);
      cells_[cell].child[q] = static_cast<std::int32_t>(cells_.size() - 1);
    }
    auto moved = std::move(cells_[cell].points);
    cells_[cell].points.clear();
    cells_[cell].leaf = false;
    for (auto p : moved) {
      Cell& child = cells_[static_cast<std::size_t>(cells_[cell].child[quadrant(cells_[cell], y_[p])])];
      child.mx += y_[p][0];
      child.my += y_[p][1];
      ++child.count;
      child.points.push_back(p);
    }
  }

  void visit(std::size_t cell, std::size_t i, double theta, double& fx, double& fy, double& z) const {
    const Cell& c = cells_[cell];
    if (c.count == 0) return;
    if (c.leaf) {
      for (auto j : c.points) {
        if (j == i) continue;
        const double dx = y_[i][0] - y_[j][0], dy = y_[i][1] - y_[j][1];
        const double q = 1.0 / (1.0 + dx * dx + dy * dy);
        z += q;
        fx += q * q * dx;
        fy += q * q * dy;
      }
      return;
    }
    const double n = static_cast<double>(c.count);
    const double dx = y_[i][0] - c.mx / n, dy = y_[i][1] - c.my / n;
    const double d2 = dx * dx + dy * dy;
    if (d2 > 0.0 && (2.0 * c.hw) / std::sqrt(d2) < theta) {
      const double q = 1.0 / (1.0 + d2);
      z += n * q;
      fx += n * q * q * dx;
      fy += n * q * q * dy;
      return;
    }
    for (auto ch : c.child)
      if (ch >= 0) visit(static_cast<std::size_t>(ch), i, theta, fx, fy, z);
  }

  const std::vector<Point>& y_;
  std::vector<Cell> cells_;
};

} // namespace detail

inline SeedRun run_tsne(const Affinities& P, std::uint64_t seed, const EmbeddingConfig& cfg) {
  const std::size_t n = P.n();
  SeedRun run;
  run.seed = seed;
  Rng rng(derive_seed(seed, 0x75e));
  std::vector<Point> y(n);
  for (auto& p : y) p = {rng.normal() * 1e-4, rng.normal() * 1e-4};
  std::vector<Point> update(n, {0.0, 0.0}), gains(n, {1.0, 1.0}), grad(n);

  run.kl_log.push_back({0, kl_divergence(P, y)});
  const double theta = std::min(cfg.theta, 0.7);
  std::size_t still = 0;
  std::size_t it = 0;
  for (it = 1; it <= cfg.iterations; ++it) {
    const bool exaggerating = it <= cfg.exaggeration_iterations;
    const double exaggeration = exaggerating ? cfg.early_exaggeration : 1.0;
    const double momentum = exaggerating ? 0.5 : 0.8;

    detail::QuadTree tree(y);
    double z = 0.0;
    std::vector<Point> rep(n, {0.0, 0.0});
    for (std::size_t i = 0; i < n; ++i) tree.repulsion(i, theta, rep[i][0], rep[i][1], z);
    for (std::size_t i = 0; i < n; ++i) {
      double ax = 0.0, ay = 0.0;
      for (std::size_t e = P.row[i]; e < P.row[i + 1]; ++e) {
        const std::size_t j = P.col[e];
        const double dx = y[i][0] - y[j][0], dy = y[i][1] - y[j][1];
        const double w = P.val[e] / (1.0 + dx * dx + dy * dy);
        ax += w * dx;
        ay += w * dy;
      }
      // The constant factor 4 of the KL gradient is folded into the
      // learning rate, so a rate of 1000 means what it does in sklearn.
      grad[i][0] = exaggeration * ax - rep[i][0] / z;
      grad[i][1] = exaggeration * ay - rep[i][1] / z;
    }

    double max_step = 0.0, radius = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (int d = 0; d < 2; ++d) {
        double& g = gains[i][d];
        g = (std::signbit(grad[i][d]) != std::signbit(update[i][d])) ? g + 0.2 : g * 0.8;
        g = std::max(g, 0.01);
        update[i][d] = momentum * update[i][d] - cfg.learning_rate * g * grad[i][d];
        y[i][d] += update[i][d];
        max_step = std::max(max_step, std::abs(update[i][d]));
      }
    Point mean{0.0, 0.0};
    for (const auto& p : y) { mean[0] += p[0]; mean[1] += p[1]; }
    mean[0] /= static_cast<double>(n);
    mean[1] /= static_cast<double>(n);
    for (auto& p : y) {
      p[0] -= mean[0];
      p[1] -= mean[1];
      radius += p[0] * p[0] + p[1] * p[1];
    }
    radius = std::sqrt(radius / static_cast<double>(n));

    if (it % cfg.kl_log_stride == 0 && it < cfg.iterations) run.kl_log.push_back({it, kl_divergence(P, y)});
    if (!exaggerating) {
      still = (max_step <= cfg.tolerance * std::max(radius, 1e-12)) ? still + 1 : 0;
      if (still >= cfg.patience) break;
    }
  }
  run.iterations_run = std::min(it, cfg.iterations);
  if (run.kl_log.back().iteration != run.iterations_run) run.kl_log.push_back({run.iterations_run, kl_divergence(P, y)});
  run.coords = std::move(y);
  return run;
}

// Runs every configured seed (concurrently) and keeps the embedding with the
// lowest final KL; ties go to the earlier seed. Perplexity is clamped to
// (N - 1) / 3. When all pairwise input distances coincide a deterministic
// jitter of 1e-9 is added so the calibration has something to separate.
inline Embedding2D embed_tsne(const std::vector<std::string>& doc_ids, const std::vector<std::vector<double>>& thetas,
                              const EmbeddingConfig& cfg) {
  const std::size_t n = thetas.size();
  if (doc_ids.size() != n) throw ValidationError("embed_tsne: doc ids and vectors differ in length");
  if (n < 4) throw ValidationError("embed_tsne: need at least 4 documents");
  if (cfg.seeds.empty()) throw ValidationError("embed_tsne: at least one seed is required");
  if (!(cfg.perplexity > 0.0)) throw ValidationError("embed_tsne: perplexity must be > 0");

  Embedding2D out;
  out.doc_ids = doc_ids;
  out.perplexity = std::min(cfg.perplexity, static_cast<double>(n - 1) / 3.0);

  auto dist = cosine_distances(thetas);
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      lo = std::min(lo, dist[i][j]);
      hi = std::max(hi, dist[i][j]);
    }
  if (hi - lo < 1e-12) {
    out.jittered = true;
    Rng rng(0x6a177e5ULL);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) dist[i][j] = dist[j][i] = dist[i][j] + 1e-9 * rng.uniform();
  }
  const Affinities P = input_affinities(dist, out.perplexity);

  std::vector<std::future<SeedRun>> futures;
  for (auto seed : cfg.seeds) futures.push_back(std::async(std::launch::async, [&P, seed, &cfg] { return run_tsne(P, seed, cfg); }));
  std::size_t best = 0;
  for (std::size_t s = 0; s < futures.size(); ++s) {
    out.runs.push_back(futures[s].get());
    if (out.runs[s].final_kl() < out.runs[best].final_kl()) best = s;
  }
  out.coords = out.runs[best].coords;
  out.kl = out.runs[best].final_kl();
  out.seed = out.runs[best].seed;
  for (auto& r : out.runs) r.coords.clear();
  return out;
}

} // namespace corposcope::tsne
