#pragma once

// Field model over a 2-D document embedding: choice of k, robust quorum
// clusters, fit statistics, keywords, the field graph, temporal bias and
// field diversity.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "corposcope/corpus.hpp"
#include "corposcope/diversity.hpp"
#include "corposcope/error.hpp"
#include "corposcope/kmeans.hpp"
#include "corposcope/layout.hpp"
#include "corposcope/rng.hpp"
#include "corposcope/tsne.hpp"

namespace corposcope::fields {

using Point = tsne::Point;

inline constexpr double kDistanceFloor = 1e-9;

namespace detail {

// Indices of `ids` ordered by id, so results do not depend on input order.
inline std::vector<std::size_t> canonical_order(const std::vector<std::string>& ids) {
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
  for (std::size_t i = 1; i < order.size(); ++i)
    if (ids[order[i]] == ids[order[i - 1]]) throw ValidationError("duplicate document id '" + ids[order[i]] + "'");
  return order;
}

inline std::vector<Point> gather(const std::vector<Point>& coords, const std::vector<std::size_t>& order) {
  std::vector<Point> out;
  out.reserve(order.size());
  for (auto i : order) out.push_back(coords[i]);
  return out;
}

struct UnionFind {
  std::vector<std::size_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

} // namespace detail

// ---------------------------------------------------------------------------
// Choice of k

struct KScore {
  std::size_t k = 0;
  double mean_rss = 0.0;
  double objective = 0.0;
};

struct KSelection {
  std::size_t k = 0;
  std::vector<KScore> scores;
};

struct ClusterOptions {
  std::size_t restarts = 5;
  std::size_t n_init = 10;
  std::size_t confirm_runs = 20;
  std::size_t quorum = 15;
  std::size_t min_size = 4;
};

// [2, ceil(N / 4)], the widest range in which fields of four can exist.
inline std::pair<std::size_t, std::size_t> default_k_range(std::size_t n_docs) {
  return {2, std::max<std::size_t>(2, (n_docs + 3) / 4)};
}

// k' = argmin ln(mean RSS_k) + 2 ln k, with RSS_k = (1/N) sum of squared
// distances to centroids, averaged over restarts. Values of k >= N are
// dropped; ties go to the smaller k.
inline KSelection select_k(const std::vector<std::string>& doc_ids, const std::vector<Point>& coords, std::size_t k_min,
                           std::size_t k_max, std::uint64_t seed, const ClusterOptions& opts = {}) {
  if (doc_ids.size() != coords.size()) throw ValidationError("select_k: ids and coordinates differ in length");
  const std::size_t n = coords.size();
  const auto pts = detail::gather(coords, detail::canonical_order(doc_ids));
  KSelection sel;
  k_min = std::max<std::size_t>(k_min, 1);
  for (std::size_t k = k_min; k <= k_max; ++k) {
    if (k >= n && !(k == 1 && n == 1)) continue;
    double total = 0.0;
    for (std::size_t r = 0; r < std::max<std::size_t>(1, opts.restarts); ++r) {
      Rng rng(derive_seed(seed, k, r));
      total += kmeans::kmeans(pts, k, rng, opts.n_init).sse / static_cast<double>(n);
    }
    const double rss = total / static_cast<double>(std::max<std::size_t>(1, opts.restarts));
    sel.scores.push_back({k, rss, std::log(rss) + 2.0 * std::log(static_cast<double>(k))});
  }
  if (sel.scores.empty()) throw ValidationError("select_k: empty k range");
  const KScore* best = &sel.scores.front();
  for (const auto& s : sel.scores)
    if (s.objective < best->objective) best = &s;
  sel.k = best->k;
  return sel;
}

inline KSelection select_k(const tsne::Embedding2D& emb, std::size_t k_min, std::size_t k_max, std::uint64_t seed,
                           const ClusterOptions& opts = {}) {
  return select_k(emb.doc_ids, emb.coords, k_min, k_max, seed, opts);
}

// ---------------------------------------------------------------------------
// Robust clusters

struct FieldModel {
  std::size_t k = 0;
  std::vector<std::string> doc_ids;
  std::vector<int> assignment; // field id per document, -1 when unassigned
  std::size_t field_count = 0;

  std::vector<std::vector<std::size_t>> members() const {
    std::vector<std::vector<std::size_t>> m(field_count);
    for (std::size_t i = 0; i < assignment.size(); ++i)
      if (assignment[i] >= 0) m[static_cast<std::size_t>(assignment[i])].push_back(i);
    return m;
  }
  std::size_t assigned_count() const {
    return static_cast<std::size_t>(std::count_if(assignment.begin(), assignment.end(), [](int f) { return f >= 0; }));
  }
};

// Co-clustering counts for n documents, stored as the upper triangle
// (i < j) in row-major order.
struct CoClusterCounts {
  std::size_t n = 0;
  std::vector<std::uint8_t> together;

  explicit CoClusterCounts(std::size_t size) : n(size), together(size < 2 ? 0 : size * (size - 1) / 2, 0) {}
  std::size_t index(std::size_t i, std::size_t j) const {
    if (i > j) std::swap(i, j);
    return i * (2 * n - i - 1) / 2 + (j - i - 1);
  }
  std::uint8_t& at(std::size_t i, std::size_t j) { return together[index(i, j)]; }
  std::uint8_t at(std::size_t i, std::size_t j) const { return together[index(i, j)]; }
};

// Two documents are linked when they share a cluster in at least `quorum`
// runs. Connected components with at least `min_size` members become fields,
// numbered by their smallest index; everything else is -1.
inline std::vector<int> quorum_fields(const CoClusterCounts& counts, const ClusterOptions& opts) {
  const std::size_t n = counts.n;
  detail::UnionFind uf(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (counts.at(i, j) >= opts.quorum) uf.unite(i, j);
  std::map<std::size_t, std::vector<std::size_t>> comps;
  for (std::size_t i = 0; i < n; ++i) comps[uf.find(i)].push_back(i);
  std::vector<std::vector<std::size_t>> kept;
  for (auto& [_, mem] : comps)
    if (mem.size() >= opts.min_size) kept.push_back(std::move(mem));
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.front() < b.front(); });
  std::vector<int> out(n, -1);
  for (std::size_t f = 0; f < kept.size(); ++f)
    for (auto i : kept[f]) out[i] = static_cast<int>(f);
  return out;
}

// Runs k-means `confirm_runs` times and keeps the quorum fields of the
// resulting co-clustering counts, computed in doc_id order.
inline FieldModel robust_cluster(const std::vector<std::string>& doc_ids, const std::vector<Point>& coords, std::size_t k,
                                 std::uint64_t seed, const ClusterOptions& opts = {}) {
  if (doc_ids.size() != coords.size()) throw ValidationError("robust_cluster: ids and coordinates differ in length");
  if (opts.quorum == 0 || opts.quorum > opts.confirm_runs)
    throw ValidationError("robust_cluster: quorum must be in [1, confirm_runs]");
  if (opts.confirm_runs > 255) throw ValidationError("robust_cluster: confirm_runs must be <= 255");
  const std::size_t n = coords.size();
  FieldModel model;
  model.k = k;
  model.doc_ids = doc_ids;
  model.assignment.assign(n, -1);
  if (n == 0) return model;
  k = std::clamp<std::size_t>(k, 1, n);

  const auto order = detail::canonical_order(doc_ids);
  const auto pts = detail::gather(coords, order);

  CoClusterCounts counts(n);
  for (std::size_t r = 0; r < opts.confirm_runs; ++r) {
    Rng rng(derive_seed(seed, 0xC0C1, r));
    const auto labels = kmeans::kmeans(pts, k, rng, opts.n_init).labels;
    std::vector<std::vector<std::size_t>> groups(k);
    for (std::size_t i = 0; i < n; ++i) groups[labels[i]].push_back(i);
    for (const auto& g : groups)
      for (std::size_t a = 0; a < g.size(); ++a)
        for (std::size_t b = a + 1; b < g.size(); ++b) ++counts.at(g[a], g[b]);
  }
  const auto fields = quorum_fields(counts, opts);
  int count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    model.assignment[order[i]] = fields[i];
    count = std::max(count, fields[i] + 1);
  }
  model.field_count = static_cast<std::size_t>(count);
  return model;
}

inline FieldModel robust_cluster(const tsne::Embedding2D& emb, std::size_t k, std::uint64_t seed,
                                 const ClusterOptions& opts = {}) {
  return robust_cluster(emb.doc_ids, emb.coords, k, seed, opts);
}

// ---------------------------------------------------------------------------
// Fit statistics

inline double cosine_distance(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na <= 0.0 || nb <= 0.0) return 1.0;
  return 1.0 - std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

namespace detail {

inline std::vector<double> mean_of(const std::vector<std::vector<double>>& x, const std::vector<std::size_t>& idx) {
  std::vector<double> m(x[idx.front()].size(), 0.0);
  for (auto i : idx)
    for (std::size_t d = 0; d < m.size(); ++d) m[d] += x[i][d];
  for (auto& v : m) v /= static_cast<double>(idx.size());
  return m;
}

} // namespace detail

// Mean topic mixture of each field.
inline std::vector<std::vector<double>> field_centroids(const FieldModel& model, const std::vector<std::vector<double>>& thetas) {
  std::vector<std::vector<double>> out;
  for (const auto& mem : model.members()) out.push_back(detail::mean_of(thetas, mem));
  return out;
}

// r^2 = 1 - RSS/TSS over squared cosine distances of assigned documents to
// their field mean (RSS) and to the mean of all assigned documents (TSS).
inline double field_r2(const FieldModel& model, const std::vector<std::vector<double>>& thetas) {
  if (thetas.size() != model.doc_ids.size()) throw ValidationError("field_r2: theta rows differ from documents");
  std::vector<std::size_t> assigned;
  for (std::size_t i = 0; i < model.assignment.size(); ++i)
    if (model.assignment[i] >= 0) assigned.push_back(i);
  if (assigned.empty()) throw ValidationError("field_r2: no assigned documents");
  const auto centroids = field_centroids(model, thetas);
  const auto global = detail::mean_of(thetas, assigned);
  double rss = 0.0, tss = 0.0;
  for (auto i : assigned) {
    const double r = cosine_distance(thetas[i], centroids[static_cast<std::size_t>(model.assignment[i])]);
    const double t = cosine_distance(thetas[i], global);
    rss += r * r;
    tss += t * t;
  }
  if (tss <= 0.0) return rss <= 0.0 ? 1.0 : -std::numeric_limits<double>::infinity();
  return 1.0 - rss / tss;
}

// Accuracy of predicting each assigned document's field as the majority
// field among documents sharing its dominant topic. Majority ties go to the
// lower field id; dominant-topic ties to the lower topic.
inline double prediction_baseline(const FieldModel& model, const std::vector<std::vector<double>>& thetas) {
  if (thetas.size() != model.doc_ids.size()) throw ValidationError("prediction_baseline: theta rows differ from documents");
  std::map<std::size_t, std::map<int, std::size_t>> votes;
  std::vector<std::size_t> dominant(thetas.size());
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < thetas.size(); ++i) {
    if (model.assignment[i] < 0) continue;
    dominant[i] = static_cast<std::size_t>(std::max_element(thetas[i].begin(), thetas[i].end()) - thetas[i].begin());
    ++votes[dominant[i]][model.assignment[i]];
    ++assigned;
  }
  if (assigned == 0) return 0.0;
  std::map<std::size_t, int> majority;
  for (const auto& [topic, counts] : votes) {
    int best = -1;
    std::size_t best_n = 0;
    for (const auto& [f, c] : counts)
      if (c > best_n) { best = f; best_n = c; }
    majority[topic] = best;
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < thetas.size(); ++i)
    if (model.assignment[i] >= 0 && majority[dominant[i]] == model.assignment[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(assigned);
}

// ---------------------------------------------------------------------------
// Keywords

// Pearson chi-square of a 2x2 table without continuity correction.
// a: in & present, b: in & absent, c: out & present, d: out & absent.
inline double chi_square_2x2(double a, double b, double c, double d) {
  const double n = a + b + c + d;
  const double den = (a + b) * (c + d) * (a + c) * (b + d);
  if (den <= 0.0) return 0.0;
  const double x = a * d - b * c;
  return n * x * x / den;
}

struct Keyword {
  std::string term;
  double chi2 = 0.0;
  std::size_t in_docs = 0;
  double in_fraction = 0.0;
  std::size_t out_docs = 0;
};

// Distinct terms per document, aligned with `doc_ids`.
inline std::vector<std::set<std::string>> doc_term_sets(const std::vector<std::string>& doc_ids,
                                                        const std::vector<corpus::TokenStream>& streams) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < doc_ids.size(); ++i) index.emplace(doc_ids[i], i);
  std::vector<std::set<std::string>> out(doc_ids.size());
  for (const auto& s : streams) {
    const auto it = index.find(s.doc_id);
    if (it == index.end()) continue;
    out[it->second].insert(s.tokens.begin(), s.tokens.end());
  }
  return out;
}

// Top `m` terms per field by chi-square, then in-field document fraction,
// then term. Candidates occur in >= 2 member documents and are more common
// inside the field than outside it. Unassigned documents count as outside.
inline std::vector<std::vector<Keyword>> field_keywords(const FieldModel& model, const std::vector<std::set<std::string>>& doc_terms,
                                                        std::size_t m = 18) {
  if (doc_terms.size() != model.doc_ids.size()) throw ValidationError("field_keywords: term sets differ from documents");
  std::map<std::string, std::size_t> total;
  for (const auto& terms : doc_terms)
    for (const auto& t : terms) ++total[t];
  const double n_docs = static_cast<double>(doc_terms.size());
  std::vector<std::vector<Keyword>> out;
  for (const auto& mem : model.members()) {
    std::map<std::string, std::size_t> inside;
    for (auto i : mem)
      for (const auto& t : doc_terms[i]) ++inside[t];
    const double n_in = static_cast<double>(mem.size());
    const double n_out = n_docs - n_in;
    std::vector<Keyword> ranked;
    for (const auto& [term, a_n] : inside) {
      if (a_n < 2) continue;
      const double a = static_cast<double>(a_n);
      const double c = static_cast<double>(total[term] - a_n);
      if (!(a / n_in > (n_out > 0.0 ? c / n_out : 0.0))) continue;
      ranked.push_back({term, chi_square_2x2(a, n_in - a, c, n_out - c), a_n, a / n_in, total[term] - a_n});
    }
    std::sort(ranked.begin(), ranked.end(), [](const Keyword& x, const Keyword& y) {
      if (x.chi2 != y.chi2) return x.chi2 > y.chi2;
      if (x.in_fraction != y.in_fraction) return x.in_fraction > y.in_fraction;
      return x.term < y.term;
    });
    if (ranked.size() > m) ranked.resize(m);
    out.push_back(std::move(ranked));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Field graph

struct FieldPair {
  std::size_t a = 0;
  std::size_t b = 0;
  double distance = 0.0; // minimum embedding distance between members, floored
};

struct FieldEdge {
  std::size_t a = 0;
  std::size_t b = 0;
  double distance = 0.0;
  double log_inverse_distance = 0.0; // ln(1/d)
  double weight = 0.0;               // 1 + ln(d_ref/d), always >= 1
};

struct FieldGraph {
  std::size_t field_count = 0;
  double percentile = 4.0;
  double cutoff = 0.0;
  double reference_distance = 0.0; // largest pairwise minimum
  std::uint64_t layout_seed = 0;
  std::vector<FieldPair> pairs;
  std::vector<FieldEdge> edges;
  std::vector<Point> layout;
};

// Nearest-rank percentile: the value at rank ceil(p/100 * M), at least 1.
inline double nearest_rank(std::vector<double> values, double percentile) {
  if (values.empty()) throw ValidationError("nearest_rank: empty sample");
  std::sort(values.begin(), values.end());
  const auto rank = static_cast<std::size_t>(std::ceil(percentile / 100.0 * static_cast<double>(values.size()) - 1e-12));
  return values[std::clamp<std::size_t>(rank, 1, values.size()) - 1];
}

// Edges join field pairs whose minimum member distance is at or below the
// percentile cutoff taken over all field pairs. The reported weight is
// ln(1/d) shifted by the constant 1 + ln(d_ref), which keeps it positive
// and independent of the embedding's scale.
inline FieldGraph build_field_graph(const FieldModel& model, const std::vector<Point>& coords, double percentile = 4.0,
                                    std::uint64_t layout_seed = 0) {
  if (coords.size() != model.doc_ids.size()) throw ValidationError("build_field_graph: coordinates differ from documents");
  if (model.field_count < 2) throw ValidationError("build_field_graph: need at least 2 fields");
  if (!(percentile > 0.0 && percentile <= 100.0)) throw ValidationError("build_field_graph: percentile must be in (0, 100]");
  FieldGraph g;
  g.field_count = model.field_count;
  g.percentile = percentile;
  g.layout_seed = layout_seed;
  const auto mem = model.members();
  std::vector<double> mins;
  for (std::size_t a = 0; a < mem.size(); ++a)
    for (std::size_t b = a + 1; b < mem.size(); ++b) {
      double best = std::numeric_limits<double>::infinity();
      for (auto i : mem[a])
        for (auto j : mem[b]) best = std::min(best, std::hypot(coords[i][0] - coords[j][0], coords[i][1] - coords[j][1]));
      best = std::max(best, kDistanceFloor);
      g.pairs.push_back({a, b, best});
      mins.push_back(best);
    }
  g.cutoff = nearest_rank(mins, percentile);
  g.reference_distance = *std::max_element(mins.begin(), mins.end());
  std::vector<layout::WeightedEdge> springs;
  for (const auto& p : g.pairs) {
    if (p.distance > g.cutoff) continue;
    const double w = 1.0 + std::log(g.reference_distance / p.distance);
    g.edges.push_back({p.a, p.b, p.distance, std::log(1.0 / p.distance), w});
    springs.push_back({p.a, p.b, w});
  }
  g.layout = layout::fruchterman_reingold(g.field_count, springs, layout_seed);
  return g;
}

inline FieldGraph build_field_graph(const FieldModel& model, const tsne::Embedding2D& emb, double percentile = 4.0,
                                    std::uint64_t layout_seed = 0) {
  std::unordered_map<std::string, std::size_t> at;
  for (std::size_t i = 0; i < emb.doc_ids.size(); ++i) at.emplace(emb.doc_ids[i], i);
  std::vector<Point> coords;
  for (const auto& id : model.doc_ids) {
    const auto it = at.find(id);
    if (it == at.end()) throw ValidationError("build_field_graph: document '" + id + "' not in embedding");
    coords.push_back(emb.coords[it->second]);
  }
  return build_field_graph(model, coords, percentile, layout_seed);
}

// All-pairs shortest paths with edge length 1/weight. Unreachable pairs get
// the largest finite distance plus one.
inline std::vector<std::vector<double>> field_path_lengths(const FieldGraph& g) {
  const std::size_t n = g.field_count;
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> d(n, std::vector<double>(n, inf));
  for (std::size_t i = 0; i < n; ++i) d[i][i] = 0.0;
  for (const auto& e : g.edges) {
    const double len = 1.0 / e.weight;
    d[e.a][e.b] = std::min(d[e.a][e.b], len);
    d[e.b][e.a] = d[e.a][e.b];
  }
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (d[i][k] + d[k][j] < d[i][j]) d[i][j] = d[i][k] + d[k][j];
  double diameter = 0.0;
  for (const auto& row : d)
    for (double v : row)
      if (std::isfinite(v)) diameter = std::max(diameter, v);
  for (auto& row : d)
    for (double& v : row)
      if (!std::isfinite(v)) v = diameter + 1.0;
  return d;
}

inline std::string field_label(std::size_t f) { return std::to_string(f); }

inline diversity::WeightedPairGraph field_pair_weights(const std::vector<std::vector<double>>& lengths) {
  std::vector<std::string> labels;
  for (std::size_t f = 0; f < lengths.size(); ++f) labels.push_back(field_label(f));
  diversity::WeightedPairGraph w(labels);
  for (std::size_t i = 0; i < lengths.size(); ++i)
    for (std::size_t j = i + 1; j < lengths.size(); ++j) w.set(labels[i], labels[j], lengths[i][j]);
  return w;
}

inline diversity::WeightedPairGraph field_pair_weights(const FieldGraph& g) {
  return field_pair_weights(field_path_lengths(g));
}

// Weighted diversity of the fields of one period's articles (one entry per
// article), with a bootstrap over articles. Fewer than two articles give no
// estimate.
inline std::optional<diversity::DiversityEstimate> field_diversity(const diversity::WeightedPairGraph& weights,
                                                                   const std::vector<std::size_t>& article_fields,
                                                                   const diversity::BootstrapOptions& opts) {
  if (article_fields.size() < 2) return std::nullopt;
  std::vector<std::string> labels;
  for (auto f : article_fields) labels.push_back(field_label(f));
  auto metric = [&weights](std::span<const std::string> s) {
    return diversity::weighted_diversity(diversity::AbundanceVector::from_observations(s), weights);
  };
  return diversity::bootstrap_ci(labels, metric, opts, "field_weighted");
}

// ---------------------------------------------------------------------------
// Temporal bias

struct FieldSeries {
  std::vector<std::size_t> counts; // N_{f,t} for t in [first_year, last_year]
  std::vector<double> density;     // N_{f,t} / N_t
  std::vector<double> delta;       // for t in [first_year, last_year + 1]
  double half_life = 0.0;
};

struct TemporalBias {
  int first_year = 0;
  int last_year = 0;
  std::vector<std::size_t> totals; // N_t over all fields
  std::vector<FieldSeries> fields;

  std::vector<int> delta_years() const {
    std::vector<int> y;
    for (int t = first_year; t <= last_year + 1; ++t) y.push_back(t);
    return y;
  }
};

// delta(t) = (mass on or after t - mass before t) / total mass, so the first
// value is 1 and the value one past the last year is -1.
inline std::vector<double> delta_series(std::span<const double> density) {
  std::vector<double> prefix(density.size() + 1, 0.0);
  for (std::size_t i = 0; i < density.size(); ++i) prefix[i + 1] = prefix[i] + density[i];
  const double mass = prefix.back();
  if (!(mass > 0.0)) throw ValidationError("delta_series: field has no dated documents");
  std::vector<double> delta(prefix.size());
  for (std::size_t i = 0; i < prefix.size(); ++i) delta[i] = ((mass - prefix[i]) - prefix[i]) / mass;
  return delta;
}

// First year at which delta reaches zero, interpolated linearly.
inline double half_life(std::span<const double> delta, int first_year) {
  for (std::size_t i = 0; i < delta.size(); ++i) {
    if (delta[i] > 0.0) continue;
    if (i == 0 || delta[i] == 0.0) return first_year + static_cast<double>(i);
    const double frac = delta[i - 1] / (delta[i - 1] - delta[i]);
    return first_year + static_cast<double>(i - 1) + frac;
  }
  return first_year + static_cast<double>(delta.size() - 1);
}

inline TemporalBias temporal_bias(const FieldModel& model, const std::vector<int>& years) {
  if (years.size() != model.doc_ids.size()) throw ValidationError("temporal_bias: years differ from documents");
  if (model.field_count == 0) throw ValidationError("temporal_bias: no fields");
  TemporalBias tb;
  bool any = false;
  for (std::size_t i = 0; i < years.size(); ++i) {
    if (model.assignment[i] < 0) continue;
    if (!any) tb.first_year = tb.last_year = years[i];
    tb.first_year = std::min(tb.first_year, years[i]);
    tb.last_year = std::max(tb.last_year, years[i]);
    any = true;
  }
  const auto span = static_cast<std::size_t>(tb.last_year - tb.first_year + 1);
  tb.totals.assign(span, 0);
  tb.fields.resize(model.field_count);
  for (auto& f : tb.fields) f.counts.assign(span, 0);
  for (std::size_t i = 0; i < years.size(); ++i) {
    if (model.assignment[i] < 0) continue;
    const auto t = static_cast<std::size_t>(years[i] - tb.first_year);
    ++tb.totals[t];
    ++tb.fields[static_cast<std::size_t>(model.assignment[i])].counts[t];
  }
  for (auto& f : tb.fields) {
    f.density.resize(span);
    for (std::size_t t = 0; t < span; ++t)
      f.density[t] = tb.totals[t] ? static_cast<double>(f.counts[t]) / static_cast<double>(tb.totals[t]) : 0.0;
    f.delta = delta_series(f.density);
    f.half_life = half_life(f.delta, tb.first_year);
  }
  return tb;
}

struct Envelope {
  double observed = 0.0;
  double low = 0.0;
  double high = 0.0;
  bool outside = false;
};

struct PermutationResult {
  std::size_t permutations = 0;
  std::uint64_t seed = 0;
  std::vector<Envelope> variance; // cross-field variance of delta, per delta year
  std::vector<Envelope> mean;     // cross-field mean of delta, per delta year
  Envelope half_life_variance;
};

namespace detail {

inline double population_variance(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size());
}

struct BiasSummary {
  std::vector<double> variance;
  std::vector<double> mean;
  double half_life_variance = 0.0;
};

inline BiasSummary summarize(const std::vector<std::vector<double>>& deltas, const std::vector<double>& half_lives) {
  BiasSummary s;
  const std::size_t len = deltas.front().size();
  std::vector<double> col(deltas.size());
  for (std::size_t t = 0; t < len; ++t) {
    for (std::size_t f = 0; f < deltas.size(); ++f) col[f] = deltas[f][t];
    s.variance.push_back(population_variance(col));
    s.mean.push_back(std::accumulate(col.begin(), col.end(), 0.0) / static_cast<double>(col.size()));
  }
  s.half_life_variance = population_variance(half_lives);
  return s;
}

inline Envelope envelope(double observed, const std::vector<double>& null) {
  Envelope e{observed, diversity::quantile(null, 0.025), diversity::quantile(null, 0.975), false};
  e.outside = observed < e.low || observed > e.high;
  return e;
}

} // namespace detail

// Null envelopes from shuffling each field's year-indexed density sequence
// independently. Permutation p of field f uses its own derived stream.
inline PermutationResult permutation_test(const TemporalBias& bias, std::size_t permutations = 1000, std::uint64_t seed = 0) {
  if (bias.fields.empty()) throw ValidationError("permutation_test: no fields");
  if (permutations == 0) throw ValidationError("permutation_test: permutations must be >= 1");
  std::vector<std::vector<double>> deltas;
  std::vector<double> halves;
  for (const auto& f : bias.fields) {
    deltas.push_back(f.delta);
    halves.push_back(f.half_life);
  }
  const auto observed = detail::summarize(deltas, halves);

  const std::size_t len = observed.variance.size();
  std::vector<std::vector<double>> null_var(len), null_mean(len);
  std::vector<double> null_half;
  for (std::size_t p = 0; p < permutations; ++p) {
    for (std::size_t f = 0; f < bias.fields.size(); ++f) {
      auto r = bias.fields[f].density;
      Rng rng(derive_seed(seed, p, f));
      rng.shuffle(std::span<double>(r));
      deltas[f] = delta_series(r);
      halves[f] = half_life(deltas[f], bias.first_year);
    }
    const auto s = detail::summarize(deltas, halves);
    for (std::size_t t = 0; t < len; ++t) {
      null_var[t].push_back(s.variance[t]);
      null_mean[t].push_back(s.mean[t]);
    }
    null_half.push_back(s.half_life_variance);
  }
  PermutationResult out;
  out.permutations = permutations;
  out.seed = seed;
  for (std::size_t t = 0; t < len; ++t) {
    out.variance.push_back(detail::envelope(observed.variance[t], null_var[t]));
    out.mean.push_back(detail::envelope(observed.mean[t], null_mean[t]));
  }
  out.half_life_variance = detail::envelope(observed.half_life_variance, null_half);
  return out;
}

} // namespace corposcope::fields
