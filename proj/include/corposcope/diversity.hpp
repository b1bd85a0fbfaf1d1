#pragma once

// Diversity indices over class abundances (Shannon, Simpson, abundance-
// weighted pairwise distinctness), geo-proximal diversity over great-circle
// distances, and percentile bootstrap intervals.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "corposcope/annotate.hpp"
#include "corposcope/error.hpp"
#include "corposcope/rng.hpp"

namespace corposcope::diversity {

class AbundanceVector {
public:
  AbundanceVector() = default;

  explicit AbundanceVector(std::map<std::string, double> counts) : counts_(std::move(counts)) {
    for (const auto& [label, x] : counts_)
      if (!(x >= 0.0) || !std::isfinite(x)) throw ValidationError("abundance for '" + label + "' must be finite and >= 0");
  }

  template <typename Range>
  static AbundanceVector from_observations(const Range& labels) {
    AbundanceVector v;
    for (const auto& l : labels) v.add(l);
    return v;
  }

  void add(const std::string& label, double count = 1.0) {
    if (!(count >= 0.0)) throw ValidationError("abundance increments must be >= 0");
    counts_[label] += count;
  }

  double total() const {
    double n = 0.0;
    for (const auto& [_, x] : counts_) n += x;
    return n;
  }

  std::size_t richness() const {
    return static_cast<std::size_t>(std::count_if(counts_.begin(), counts_.end(), [](const auto& kv) { return kv.second > 0.0; }));
  }

  std::vector<double> proportions() const {
    const double n = total();
    std::vector<double> p;
    for (const auto& [_, x] : counts_) p.push_back(n > 0.0 ? x / n : 0.0);
    return p;
  }

  const std::map<std::string, double>& counts() const { return counts_; }

private:
  std::map<std::string, double> counts_;
};

// H' = -sum p_i ln p_i, with 0 ln 0 = 0.
inline double shannon(const AbundanceVector& v) {
  const double n = v.total();
  if (n <= 0.0) throw ValidationError("shannon: empty abundance vector");
  double h = 0.0;
  for (const auto& [_, x] : v.counts()) {
    if (x <= 0.0) continue;
    const double p = x / n;
    h -= p * std::log(p);
  }
  return h;
}

// D_s = 1 - sum p_i^2.
inline double simpson(const AbundanceVector& v) {
  const double n = v.total();
  if (n <= 0.0) throw ValidationError("simpson: empty abundance vector");
  double s = 0.0;
  for (const auto& [_, x] : v.counts()) {
    const double p = x / n;
    s += p * p;
  }
  return 1.0 - s;
}

// ---------------------------------------------------------------------------
// Geo-proximal diversity

struct GeoPointSet {
  std::vector<std::pair<annotate::LatLon, std::size_t>> points; // (position, multiplicity)

  void add(const annotate::LatLon& p, std::size_t multiplicity = 1) {
    if (!annotate::valid(p)) throw ValidationError("invalid coordinates in point set");
    if (multiplicity) points.emplace_back(p, multiplicity);
  }

  std::size_t expanded_size() const {
    std::size_t m = 0;
    for (const auto& [_, c] : points) m += c;
    return m;
  }
};

// How pairwise distances are brought into [0, 1] before taking their
// variance. Either way the variance is divided by 0.25, its upper bound
// for values in [0, 1], and clamped.
enum class GeoVarianceScale { half_circumference, max_observed };

inline std::string_view to_string(GeoVarianceScale s) {
  return s == GeoVarianceScale::half_circumference ? "half-circumference" : "max-observed";
}

inline GeoVarianceScale parse_geo_variance_scale(std::string_view s) {
  if (s == "half-circumference") return GeoVarianceScale::half_circumference;
  if (s == "max-observed") return GeoVarianceScale::max_observed;
  throw ValidationError("unknown geo variance scale '" + std::string(s) + "'");
}

// D_g over a multiset of pairwise distances given as (distance, multiplicity).
inline double geo_proximal_from_distances(std::span<const std::pair<double, double>> distances,
                                          GeoVarianceScale scale = GeoVarianceScale::half_circumference) {
  double count = 0.0, sum = 0.0, max_d = 0.0;
  for (const auto& [d, w] : distances) {
    count += w;
    sum += w * d;
    if (w > 0.0) max_d = std::max(max_d, d);
  }
  if (count <= 0.0) throw ValidationError("geo_proximal: no pairwise distances");
  const double mean = sum / count;
  if (count <= 1.0) return mean;

  const double unit = scale == GeoVarianceScale::half_circumference ? annotate::kHalfCircumferenceKm : max_d;
  if (unit <= 0.0) return mean;
  const double mean_n = mean / unit;
  double ss = 0.0;
  for (const auto& [d, w] : distances) {
    const double dev = d / unit - mean_n;
    ss += w * dev * dev;
  }
  const double variance = std::clamp((ss / count) / 0.25, 0.0, 1.0);
  return (1.0 - variance) * mean;
}

inline double geo_proximal_from_distances(std::span<const double> distances,
                                          GeoVarianceScale scale = GeoVarianceScale::half_circumference) {
  std::vector<std::pair<double, double>> weighted;
  weighted.reserve(distances.size());
  for (double d : distances) weighted.emplace_back(d, 1.0);
  return geo_proximal_from_distances(std::span<const std::pair<double, double>>(weighted), scale);
}

// Pairs are formed over the expanded multiset: coincident copies of a point
// contribute zero distances.
inline double geo_proximal(const GeoPointSet& points, GeoVarianceScale scale = GeoVarianceScale::half_circumference) {
  if (points.expanded_size() < 2) throw ValidationError("geo_proximal: need at least 2 points");
  std::vector<std::pair<double, double>> distances;
  const auto& p = points.points;
  for (std::size_t a = 0; a < p.size(); ++a) {
    const double ca = static_cast<double>(p[a].second);
    if (ca >= 2.0) distances.emplace_back(0.0, ca * (ca - 1.0) / 2.0);
    for (std::size_t b = a + 1; b < p.size(); ++b)
      distances.emplace_back(annotate::great_circle_distance(p[a].first, p[b].first),
                             ca * static_cast<double>(p[b].second));
  }
  return geo_proximal_from_distances(std::span<const std::pair<double, double>>(distances), scale);
}

// ---------------------------------------------------------------------------
// Weighted pairwise diversity

// Symmetric pair weights with a zero diagonal; absent pairs are missing.
class WeightedPairGraph {
public:
  WeightedPairGraph() = default;

  explicit WeightedPairGraph(std::vector<std::string> labels) : labels_(std::move(labels)) {
    for (std::size_t i = 0; i < labels_.size(); ++i)
      if (!index_.emplace(labels_[i], i).second) throw ValidationError("duplicate graph label '" + labels_[i] + "'");
    weights_.assign(labels_.size() * labels_.size(), std::numeric_limits<double>::quiet_NaN());
    for (std::size_t i = 0; i < labels_.size(); ++i) weights_[i * labels_.size() + i] = 0.0;
  }

  void set(std::string_view a, std::string_view b, double w) {
    if (!(w >= 0.0)) throw ValidationError("pair weights must be >= 0");
    const auto i = require(a), j = require(b);
    if (i == j) return;
    weights_[i * labels_.size() + j] = w;
    weights_[j * labels_.size() + i] = w;
  }

  std::optional<double> weight(std::string_view a, std::string_view b) const {
    const auto ia = index_.find(std::string(a)), ib = index_.find(std::string(b));
    if (ia == index_.end() || ib == index_.end()) return std::nullopt;
    const double w = weights_[ia->second * labels_.size() + ib->second];
    if (std::isnan(w)) return std::nullopt;
    return w;
  }

  const std::vector<std::string>& labels() const { return labels_; }

private:
  std::size_t require(std::string_view l) const {
    const auto it = index_.find(std::string(l));
    if (it == index_.end()) throw ValidationError("unknown graph label '" + std::string(l) + "'");
    return it->second;
  }

  std::vector<std::string> labels_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<double> weights_;
};

// Delta_T = sum_{i<j} w_ij x_i x_j / (n (n - 1) / 2), n = sum x_i.
inline double weighted_diversity(const AbundanceVector& v, const WeightedPairGraph& g) {
  const double n = v.total();
  if (n < 2.0) throw ValidationError("weighted_diversity: total abundance must be >= 2");
  std::vector<std::pair<const std::string*, double>> present;
  for (const auto& [label, x] : v.counts())
    if (x > 0.0) present.emplace_back(&label, x);
  double sum = 0.0;
  for (std::size_t i = 0; i < present.size(); ++i) {
    for (std::size_t j = i + 1; j < present.size(); ++j) {
      const auto w = g.weight(*present[i].first, *present[j].first);
      if (!w) throw ValidationError("weighted_diversity: no weight for pair ('" + *present[i].first + "', '" + *present[j].first + "')");
      sum += *w * present[i].second * present[j].second;
    }
  }
  return sum / (n * (n - 1.0) / 2.0);
}

// Unit-weight path lengths in the taxonomy with unranked nodes contracted.
// The root and the labels themselves are always kept.
inline WeightedPairGraph tree_path_weights(const annotate::TaxonomyTree& tree, const std::vector<std::string>& labels) {
  std::vector<std::vector<std::string>> paths;
  for (const auto& label : labels) {
    const auto lineage = tree.lineage(label);
    std::vector<std::string> path;
    for (std::size_t i = 0; i < lineage.size(); ++i)
      if (i == 0 || i + 1 == lineage.size() || annotate::is_ranked(lineage[i]->rank)) path.push_back(lineage[i]->taxon_id);
    paths.push_back(std::move(path));
  }
  WeightedPairGraph g(labels);
  for (std::size_t a = 0; a < labels.size(); ++a) {
    for (std::size_t b = a + 1; b < labels.size(); ++b) {
      const auto& pa = paths[a];
      const auto& pb = paths[b];
      std::size_t common = 0;
      while (common < pa.size() && common < pb.size() && pa[common] == pb[common]) ++common;
      g.set(labels[a], labels[b], static_cast<double>((pa.size() - common) + (pb.size() - common)));
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Bootstrap

struct BootstrapOptions {
  std::size_t iterations = 1000;
  double level = 0.95;
  std::uint64_t seed = 0;
};

struct DiversityEstimate {
  std::string metric;
  double value = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double level = 0.95;
  std::size_t iterations = 0;
  std::uint64_t seed = 0;

  bool operator==(const DiversityEstimate&) const = default;
};

// Linear interpolation between order statistics (Hyndman-Fan type 7).
inline double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw ValidationError("quantile of empty sample");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * std::clamp(q, 0.0, 1.0);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

// Percentile bootstrap. Each iteration draws |sample| observations with
// replacement from a stream seeded by (seed, iteration, attempt), so results
// do not depend on evaluation order. A resample on which the metric throws
// is redrawn; more than 10 * iterations redraws is an error. The interval is
// widened to contain the point value if the percentiles miss it.
template <typename T, typename Metric>
DiversityEstimate bootstrap_ci(std::span<const T> sample, Metric&& metric, const BootstrapOptions& opts,
                               std::string name = {}) {
  if (sample.empty()) throw ValidationError("bootstrap_ci: empty sample");
  if (opts.iterations == 0) throw ValidationError("bootstrap_ci: iterations must be >= 1");
  if (!(opts.level > 0.0 && opts.level < 1.0)) throw ValidationError("bootstrap_ci: level must be in (0, 1)");

  DiversityEstimate est;
  est.metric = std::move(name);
  est.level = opts.level;
  est.iterations = opts.iterations;
  est.seed = opts.seed;
  est.value = metric(sample);

  std::vector<double> stats;
  stats.reserve(opts.iterations);
  std::vector<T> resample(sample.size());
  std::size_t redraws = 0;
  for (std::size_t it = 0; it < opts.iterations; ++it) {
    for (std::uint64_t attempt = 0;; ++attempt) {
      Rng rng(derive_seed(opts.seed, it, attempt));
      for (auto& r : resample) r = sample[rng.below(sample.size())];
      try {
        stats.push_back(metric(std::span<const T>(resample)));
        break;
      } catch (const std::exception&) {
        if (++redraws > 10 * opts.iterations)
          throw Error("bootstrap_ci: metric failed on more than " + std::to_string(10 * opts.iterations) + " resamples");
      }
    }
  }
  const double tail = (1.0 - opts.level) / 2.0;
  est.ci_low = std::min(quantile(stats, tail), est.value);
  est.ci_high = std::max(quantile(stats, 1.0 - tail), est.value);
  return est;
}

template <typename T, typename Metric>
DiversityEstimate bootstrap_ci(const std::vector<T>& sample, Metric&& metric, const BootstrapOptions& opts,
                               std::string name = {}) {
  return bootstrap_ci(std::span<const T>(sample), std::forward<Metric>(metric), opts, std::move(name));
}

// Convenience metrics over a span of class labels.
inline double shannon_of(std::span<const std::string> labels) {
  return shannon(AbundanceVector::from_observations(labels));
}

inline double simpson_of(std::span<const std::string> labels) {
  return simpson(AbundanceVector::from_observations(labels));
}

} // namespace corposcope::diversity
