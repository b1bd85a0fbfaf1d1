#pragma once

// Lloyd's k-means in two dimensions with k-means++ seeding.

#include <algorithm>
#include <array>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "corposcope/error.hpp"
#include "corposcope/rng.hpp"

namespace corposcope::kmeans {

using Point = std::array<double, 2>;

struct KMeansResult {
  std::vector<std::size_t> labels;
  std::vector<Point> centroids;
  double sse = 0.0; // sum of squared distances to assigned centroids
};

inline double sq_dist(const Point& a, const Point& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1];
  return dx * dx + dy * dy;
}

namespace detail {

inline std::vector<Point> seed_plus_plus(std::span<const Point> pts, std::size_t k, Rng& rng) {
  std::vector<Point> centers{pts[rng.below(pts.size())]};
  std::vector<double> d2(pts.size());
  while (centers.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centers) best = std::min(best, sq_dist(pts[i], c));
      d2[i] = best;
      total += best;
    }
    std::size_t pick = 0;
    if (total <= 0.0) {
      pick = rng.below(pts.size());
    } else {
      double u = rng.uniform() * total;
      for (pick = 0; pick + 1 < pts.size(); ++pick) {
        u -= d2[pick];
        if (u < 0.0) break;
      }
    }
    centers.push_back(pts[pick]);
  }
  return centers;
}

inline KMeansResult lloyd(std::span<const Point> pts, std::vector<Point> centers, std::size_t max_iter) {
  const std::size_t k = centers.size();
  KMeansResult r;
  r.labels.assign(pts.size(), k);
  for (std::size_t iter = 0; iter < max_iter; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      std::size_t best = 0;
      double bd = sq_dist(pts[i], centers[0]);
      for (std::size_t c = 1; c < k; ++c) {
        const double d = sq_dist(pts[i], centers[c]);
        if (d < bd) { bd = d; best = c; }
      }
      if (r.labels[i] != best) { r.labels[i] = best; changed = true; }
    }
    if (!changed) break;
    std::vector<Point> sum(k, {0.0, 0.0});
    std::vector<std::size_t> count(k, 0);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      sum[r.labels[i]][0] += pts[i][0];
      sum[r.labels[i]][1] += pts[i][1];
      ++count[r.labels[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (count[c]) {
        centers[c] = {sum[c][0] / static_cast<double>(count[c]), sum[c][1] / static_cast<double>(count[c])};
        continue;
      }
      // Empty cluster: move it onto the point worst served by its centroid.
      std::size_t far = 0;
      double fd = -1.0;
      for (std::size_t i = 0; i < pts.size(); ++i) {
        const double d = sq_dist(pts[i], centers[r.labels[i]]);
        if (d > fd) { fd = d; far = i; }
      }
      centers[c] = pts[far];
    }
  }
  r.centroids = std::move(centers);
  for (std::size_t i = 0; i < pts.size(); ++i) r.sse += sq_dist(pts[i], r.centroids[r.labels[i]]);
  return r;
}

} // namespace detail

// Best of `n_init` k-means++ initializations, each refined by Lloyd
// iterations until assignments stop changing.
inline KMeansResult kmeans(std::span<const Point> pts, std::size_t k, Rng& rng, std::size_t n_init = 10,
                           std::size_t max_iter = 300) {
  if (k == 0 || k > pts.size()) throw ValidationError("kmeans: k must be in [1, N]");
  KMeansResult best;
  best.sse = std::numeric_limits<double>::infinity();
  for (std::size_t run = 0; run < std::max<std::size_t>(1, n_init); ++run) {
    auto r = detail::lloyd(pts, detail::seed_plus_plus(pts, k, rng), max_iter);
    if (r.sse < best.sse) best = std::move(r);
  }
  return best;
}

} // namespace corposcope::kmeans
