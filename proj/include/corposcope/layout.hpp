#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "corposcope/rng.hpp"

namespace corposcope::layout {

using Point = std::array<double, 2>;

struct WeightedEdge {
  std::size_t a = 0;
  std::size_t b = 0;
  double weight = 1.0;
};

// Edge-weighted Fruchterman-Reingold spring embedding. Attraction along an
// edge is scaled by its weight relative to the heaviest edge; all pairs
// repel. Temperature cools linearly. Output is rescaled into [0, 1]^2.
inline std::vector<Point> fruchterman_reingold(std::size_t n, const std::vector<WeightedEdge>& edges, std::uint64_t seed,
                                               std::size_t iterations = 500) {
  std::vector<Point> pos(n);
  if (n == 0) return pos;
  if (n == 1) {
    pos[0] = {0.5, 0.5};
    return pos;
  }
  Rng rng(derive_seed(seed, 0xF12));
  for (auto& p : pos) p = {rng.uniform(), rng.uniform()};

  double max_w = 0.0;
  for (const auto& e : edges) max_w = std::max(max_w, e.weight);
  const double k = std::sqrt(1.0 / static_cast<double>(n));
  const double t0 = 0.1;
  std::vector<Point> disp(n);
  for (std::size_t it = 0; it < iterations; ++it) {
    const double temp = t0 * (1.0 - static_cast<double>(it) / static_cast<double>(iterations));
    std::fill(disp.begin(), disp.end(), Point{0.0, 0.0});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        double dx = pos[i][0] - pos[j][0], dy = pos[i][1] - pos[j][1];
        double d = std::sqrt(dx * dx + dy * dy);
        if (d < 1e-9) {
          dx = 1e-3 * (rng.uniform() - 0.5);
          dy = 1e-3 * (rng.uniform() - 0.5);
          d = std::sqrt(dx * dx + dy * dy) + 1e-12;
        }
        const double f = k * k / d;
        disp[i][0] += dx / d * f; disp[i][1] += dy / d * f;
        disp[j][0] -= dx / d * f; disp[j][1] -= dy / d * f;
      }
    for (const auto& e : edges) {
      if (e.a == e.b) continue;
      const double w = max_w > 0.0 ? e.weight / max_w : 1.0;
      const double dx = pos[e.a][0] - pos[e.b][0], dy = pos[e.a][1] - pos[e.b][1];
      const double d = std::sqrt(dx * dx + dy * dy);
      if (d < 1e-12) continue;
      const double f = w * d * d / k;
      disp[e.a][0] -= dx / d * f; disp[e.a][1] -= dy / d * f;
      disp[e.b][0] += dx / d * f; disp[e.b][1] += dy / d * f;
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double len = std::sqrt(disp[i][0] * disp[i][0] + disp[i][1] * disp[i][1]);
      if (len > 0.0) {
        const double step = std::min(len, temp);
        pos[i][0] += disp[i][0] / len * step;
        pos[i][1] += disp[i][1] / len * step;
      }
    }
  }

  Point lo = pos[0], hi = pos[0];
  for (const auto& p : pos)
    for (int d = 0; d < 2; ++d) {
      lo[d] = std::min(lo[d], p[d]);
      hi[d] = std::max(hi[d], p[d]);
    }
  const double span = std::max({hi[0] - lo[0], hi[1] - lo[1], 1e-12});
  for (auto& p : pos)
    for (int d = 0; d < 2; ++d) p[d] = (p[d] - lo[d]) / span;
  return pos;
}

} // namespace corposcope::layout
