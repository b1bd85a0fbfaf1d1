// Acceptance checks for corposcope. Prints one PASS/FAIL line per criterion
// and exits non-zero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "corposcope/corposcope.hpp"
#include "support/cli.hpp"
#include "support/fixtures.hpp"

using namespace corposcope;
namespace fs = std::filesystem;
using artifacts::json;

namespace {

constexpr std::uint64_t kSeed = 20240611;

struct Options {
  std::string cli;
  std::string python;
  fs::path source_dir;
  fs::path work_dir;
};

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;    // shown after the verdict
  std::vector<std::string> failures; // first few failed conditions

  // Records a condition; the criterion fails if any condition is false.
  void require(bool ok, const std::string& what) {
    if (ok) return;
    pass = false;
    if (failures.size() < 5) failures.push_back(what);
  }
  void note(const std::string& s) { notes.push_back(s); }
};

class Stopwatch {
public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(double v, int precision = 3) {
  std::ostringstream o;
  o.precision(precision);
  o << std::fixed << v;
  return o.str();
}

std::string sci(double v) {
  std::ostringstream o;
  o.precision(2);
  o << std::scientific << v;
  return o.str();
}

double relative_error(double a, double b) {
  if (a == b) return 0.0;
  return std::abs(a - b) / std::max(std::abs(a), std::abs(b));
}

// ---------------------------------------------------------------------------
// 1. Diversity indices against the brute-force oracle script

struct Instance {
  std::vector<std::size_t> counts;
  std::vector<annotate::LatLon> points;
  std::vector<std::vector<double>> weights;
};

std::vector<Instance> random_instances(std::size_t n) {
  Rng rng(derive_seed(kSeed, 1));
  std::vector<Instance> out;
  for (std::size_t i = 0; i < n; ++i) {
    Instance inst;
    const std::size_t r = 1 + rng.below(20);
    std::size_t total = 0;
    for (std::size_t c = 0; c < r; ++c) {
      // Every third instance has some absent classes.
      const std::size_t x = i % 3 == 0 ? rng.below(101) : 1 + rng.below(100);
      inst.counts.push_back(x);
      total += x;
    }
    if (total < 2) inst.counts[0] += 2;
    // Alternate global points with points packed into a small region.
    const bool local = i % 2 == 1;
    for (std::size_t c = 0; c < r; ++c) {
      const double lat = local ? 40.0 + 5.0 * (rng.uniform() - 0.5) : std::asin(2.0 * rng.uniform() - 1.0) * 180.0 / std::numbers::pi;
      const double lon = local ? -3.0 + 8.0 * (rng.uniform() - 0.5) : 360.0 * rng.uniform() - 180.0;
      inst.points.push_back({lat, lon});
    }
    inst.weights.assign(r, std::vector<double>(r, 0.0));
    const bool integer = i % 4 < 2;
    for (std::size_t a = 0; a < r; ++a)
      for (std::size_t b = a + 1; b < r; ++b)
        inst.weights[a][b] = inst.weights[b][a] = integer ? static_cast<double>(1 + rng.below(6)) : 0.1 + 5.0 * rng.uniform();
    out.push_back(std::move(inst));
  }
  return out;
}

std::string class_label(std::size_t c) { return "c" + std::to_string(c); }

Outcome oracle_equivalence(const Options& opt) {
  Outcome o;
  const Stopwatch clock;
  const auto instances = random_instances(1000);

  json input = json::array();
  for (const auto& inst : instances) {
    json pts = json::array();
    for (const auto& p : inst.points) pts.push_back({p.lat, p.lon});
    input.push_back({{"counts", inst.counts}, {"points", pts}, {"weights", inst.weights}});
  }
  const auto in_path = opt.work_dir / "oracle_instances.json";
  const auto out_path = opt.work_dir / "oracle_results.json";
  text::write_file(in_path, input.dump());
  const auto oracle = opt.source_dir / "tests" / "oracles" / "diversity_oracle.py";
  const auto r = support::run(opt.python, {oracle.string(), in_path.string(), out_path.string()});
  o.require(r.exit_code == 0, "oracle script failed: " + r.output);
  if (r.exit_code != 0) return o;
  const auto expected = artifacts::read_json(out_path);
  o.require(expected.size() == instances.size(), "oracle returned a different number of results");
  if (!o.pass) return o;

  double worst = 0.0;
  std::size_t compared = 0;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& inst = instances[i];
    const auto& e = expected[i];
    std::map<std::string, double> counts;
    std::vector<std::string> labels;
    diversity::GeoPointSet points;
    for (std::size_t c = 0; c < inst.counts.size(); ++c) {
      labels.push_back(class_label(c));
      counts[class_label(c)] = static_cast<double>(inst.counts[c]);
      points.add(inst.points[c], inst.counts[c]);
    }
    const diversity::AbundanceVector v(counts);
    diversity::WeightedPairGraph g(labels);
    for (std::size_t a = 0; a < labels.size(); ++a)
      for (std::size_t b = a + 1; b < labels.size(); ++b) g.set(labels[a], labels[b], inst.weights[a][b]);

    auto compare = [&](const char* name, double got, const json& want) {
      const double err = relative_error(got, want.get<double>());
      worst = std::max(worst, err);
      ++compared;
      o.require(err <= 1e-9, "instance " + std::to_string(i) + " " + name + ": relative error " + sci(err));
    };
    compare("shannon", diversity::shannon(v), e.at("shannon"));
    compare("simpson", diversity::simpson(v), e.at("simpson"));
    compare("delta_t", diversity::weighted_diversity(v, g), e.at("delta_t"));
    compare("geo_proximal", diversity::geo_proximal(points), e.at("geo_proximal"));
  }
  const double elapsed = clock.seconds();
  o.require(elapsed < 10.0, "runtime " + fmt(elapsed) + " s exceeds 10 s");
  o.note(std::to_string(instances.size()) + " instances, " + std::to_string(compared) + " values, max relative error " + sci(worst) +
         ", " + fmt(elapsed, 2) + " s");
  return o;
}

// ---------------------------------------------------------------------------
// 2. Closed forms

Outcome closed_forms(const Options&) {
  Outcome o;
  std::map<std::string, double> uniform;
  for (std::size_t c = 0; c < 10; ++c) uniform[class_label(c)] = 7.0;
  const diversity::AbundanceVector u(uniform);
  const double h = diversity::shannon(u), s = diversity::simpson(u);
  o.require(std::abs(h - std::log(10.0)) <= 1e-12, "uniform-10 Shannon " + fmt(h, 15));
  o.require(std::abs(s - 0.9) <= 1e-12, "uniform-10 Simpson " + fmt(s, 15));

  for (std::size_t r = 2; r <= 10; ++r) {
    std::string tsv = "1\t\tno rank\troot\tUnassigned\n";
    std::vector<std::string> leaves;
    std::map<std::string, double> counts;
    for (std::size_t i = 0; i < r; ++i) {
      const auto id = std::to_string(100 + i);
      tsv += id + "\t1\tspecies\tspecies " + id + "\tLeaves\n";
      leaves.push_back(id);
      counts[id] = 1.0;
    }
    const auto tree = annotate::parse_taxonomy(tsv);
    const double d = diversity::weighted_diversity(diversity::AbundanceVector(counts), diversity::tree_path_weights(tree, leaves));
    o.require(d == 2.0, "star with R = " + std::to_string(r) + " gives " + fmt(d, 17));
  }

  const double antipodal = annotate::great_circle_distance({0, 0}, {0, 180});
  const double poles = annotate::great_circle_distance({90, 0}, {-90, 0});
  const double oblique = annotate::great_circle_distance({37.5, 22.25}, {-37.5, -157.75});
  for (double d : {antipodal, poles, oblique}) o.require(std::abs(d - 20015.1) <= 0.1, "antipodal distance " + fmt(d, 4) + " km");
  o.note("H = " + fmt(h, 15) + ", D = " + fmt(s, 15) + ", star R = 2..10 all 2, antipode " + fmt(antipodal, 4) + " km");
  return o;
}

// ---------------------------------------------------------------------------
// 3. Bootstrap coverage of a known population

struct Coverage {
  std::size_t covered = 0;
  std::size_t trials = 0;
};

Coverage bootstrap_coverage(const std::vector<double>& probabilities, std::uint64_t stream) {
  double truth = 0.0;
  for (double p : probabilities) truth -= p * std::log(p);
  Coverage c;
  for (std::size_t t = 0; t < 100; ++t) {
    Rng rng(derive_seed(kSeed, stream, t));
    std::vector<std::string> sample;
    for (std::size_t i = 0; i < 200; ++i) {
      double x = rng.uniform();
      std::size_t k = 0;
      while (k + 1 < probabilities.size() && (x -= probabilities[k]) >= 0.0) ++k;
      sample.push_back(class_label(k));
    }
    const auto e = diversity::bootstrap_ci(sample, diversity::shannon_of, {1000, 0.95, derive_seed(kSeed, stream + 1, t)}, "shannon");
    c.covered += e.ci_low <= truth && truth <= e.ci_high;
    ++c.trials;
  }
  return c;
}

Outcome bootstrap_check(const Options&) {
  Outcome o;
  const Stopwatch clock;
  const auto main = bootstrap_coverage({0.3, 0.7}, 0x30);
  const double elapsed = clock.seconds();
  o.require(main.covered >= 93, "Bernoulli(0.3) coverage " + std::to_string(main.covered) + "/100");
  o.require(elapsed < 60.0, "runtime " + fmt(elapsed) + " s exceeds 60 s");
  o.note("Bernoulli(0.3): " + std::to_string(main.covered) + "/100 intervals cover H, " + fmt(elapsed, 2) + " s");
  const auto fair = bootstrap_coverage({0.5, 0.5}, 0x50);
  const auto three = bootstrap_coverage({0.5, 0.3, 0.2}, 0x70);
  o.note("info: Bernoulli(0.5) " + std::to_string(fair.covered) + "/100, (0.5, 0.3, 0.2) " + std::to_string(three.covered) +
         "/100 (not part of the verdict)");
  return o;
}

// ---------------------------------------------------------------------------
// 4. Planted LDA recovery

Outcome lda_recovery(const Options&) {
  Outcome o;
  const auto planted = fixtures::planted_lda(200, 200, 5, 100, derive_seed(kSeed, 4));
  const auto corpus = fixtures::lda_corpus(planted);
  lda::LdaConfig cfg;
  cfg.topics = 5;
  cfg.iterations = 2000;
  cfg.seed = derive_seed(kSeed, 0x4A);
  cfg.log_stride = 10;

  std::size_t logged = 0, conserved = 0;
  const Stopwatch clock;
  const auto a = lda::fit_lda(corpus, cfg, [&](const lda::TopicModelState& s, const lda::SweepLog&) {
    ++logged;
    conserved += s.counts_consistent();
  });
  const double elapsed = clock.seconds();
  const auto b = lda::fit_lda(corpus, cfg);

  const double cosine = fixtures::best_match_cosine(a, planted);
  o.require(cosine >= 0.8, "mean best-match cosine " + fmt(cosine, 4));
  o.require(logged > 0 && conserved == logged, std::to_string(logged - conserved) + " logged sweeps violate conservation");
  o.require(logged == a.log.size(), "observer saw " + std::to_string(logged) + " of " + std::to_string(a.log.size()) + " logged sweeps");
  o.require(!a.log.empty() && a.log.back().sweep == 2000, "last logged sweep is not 2000");
  const double reassigned = a.log.empty() ? 1.0 : a.log.back().reassigned_fraction;
  o.require(reassigned < 0.05, "reassignment fraction at sweep 2000 is " + fmt(reassigned, 4));
  o.require(a.z == b.z && a.topic_word == b.topic_word && a.page_topic == b.page_topic, "same-seed runs differ");
  o.require(elapsed < 60.0, "runtime " + fmt(elapsed) + " s exceeds 60 s");
  o.note("cosine " + fmt(cosine, 4) + ", " + std::to_string(logged) + " logged sweeps conserved, reassigned " + fmt(100 * reassigned, 2) +
         "% at sweep 2000, reruns identical, " + fmt(elapsed, 2) + " s per fit");
  return o;
}

// ---------------------------------------------------------------------------
// Shared end-to-end runs of the mini corpus

struct MiniRuns {
  fs::path config;
  fs::path a, b, partial;
  support::ProcessResult run_a, run_b, run_partial;
  double seconds_a = 0.0, seconds_b = 0.0;
};

const MiniRuns& mini_runs(const Options& opt) {
  static std::optional<MiniRuns> runs;
  if (runs) return *runs;
  MiniRuns m;
  m.config = support::copy_mini(opt.source_dir, opt.work_dir);
  m.a = opt.work_dir / "run_a";
  m.b = opt.work_dir / "run_b";
  m.partial = opt.work_dir / "run_partial";
  auto all = [&](const fs::path& out, double& seconds) {
    const Stopwatch clock;
    auto r = support::run(opt.cli, {"all", "-q", "--sequential", "--config", m.config.string()}, {{"CORPOSCOPE_OUTPUT_DIR", out.string()}});
    seconds = clock.seconds();
    return r;
  };
  m.run_a = all(m.a, m.seconds_a);
  m.run_b = all(m.b, m.seconds_b);
  m.run_partial = support::run(opt.cli, {"lda", "-q", "--sequential", "--config", m.config.string()},
                               {{"CORPOSCOPE_OUTPUT_DIR", m.partial.string()}});
  runs = std::move(m);
  return *runs;
}

// ---------------------------------------------------------------------------
// 5. Enrichment identity

Outcome enrichment_identity(const Options& opt) {
  Outcome o;
  const auto& m = mini_runs(opt);
  o.require(m.run_a.exit_code == 0, "mini corpus run failed: " + m.run_a.output);
  if (!o.pass) return o;

  std::size_t models = 0, topics = 0;
  double worst = 0.0;
  for (const auto& entry : fs::directory_iterator(m.a / "lda")) {
    if (!entry.is_directory()) continue;
    ++models;
    std::map<std::string, double> weight;
    double total = 0.0;
    for (const auto& r : artifacts::read_csv(entry.path() / "period_weights.csv").rows) {
      weight[r[0]] = artifacts::to_double(r[2]);
      total += weight[r[0]];
    }
    std::map<std::string, double> mean;
    for (const auto& r : artifacts::read_csv(entry.path() / "enrichment.csv").rows)
      mean[r[0]] += weight.at(r[1]) * artifacts::to_double(r[2]) / total;
    for (const auto& [topic, v] : mean) {
      ++topics;
      worst = std::max(worst, std::abs(v - 1.0));
      o.require(std::abs(v - 1.0) <= 1e-9, entry.path().filename().string() + " topic " + topic + ": weighted mean " + fmt(v, 12));
    }
  }
  o.require(models > 0 && topics > 0, "no topic models in the mini bundle");

  // One topic present only in the fourth of six equal periods.
  lda::Matrix theta;
  std::vector<int> years;
  for (int y = 1; y <= 6; ++y)
    for (int d = 0; d < 5; ++d) {
      theta.push_back(y == 4 ? std::vector<double>{0.35, 0.65} : std::vector<double>{0.0, 1.0});
      years.push_back(y);
    }
  const std::vector<lda::Period> six{{1, 1}, {2, 2}, {3, 3}, {4, 4}, {5, 5}, {6, 6}};
  const auto e = lda::topic_enrichment(theta, std::vector<double>(theta.size(), 40.0), years, six);
  o.require(std::abs(e[0][3] - 6.0) <= 1e-9, "single-period topic scores " + fmt(e[0][3], 12));
  for (std::size_t p = 0; p < 6; ++p)
    if (p != 3) o.require(e[0][p] == 0.0, "single-period topic is nonzero in period " + std::to_string(p));
  o.note(std::to_string(topics) + " topics in " + std::to_string(models) + " model(s), max |mean - 1| " + sci(worst) +
         ", planted single-period score " + fmt(e[0][3], 12));
  return o;
}

// ---------------------------------------------------------------------------
// 6. t-SNE

Outcome tsne_check(const Options&) {
  Outcome o;
  const auto mix = fixtures::planted_mixtures(150, 2, 10, derive_seed(kSeed, 6));
  tsne::EmbeddingConfig cfg;
  cfg.seeds = {1, 2, 3, 4, 5};
  const Stopwatch clock;
  const auto e = tsne::embed_tsne(mix.ids, mix.theta, cfg);
  const double elapsed = clock.seconds();
  o.require(e.runs.size() == 5, "expected 5 seed runs");
  std::size_t best = 0, improved = 0;
  for (std::size_t r = 0; r < e.runs.size(); ++r) {
    improved += e.runs[r].final_kl() < e.runs[r].initial_kl();
    if (e.runs[r].final_kl() < e.runs[best].final_kl()) best = r;
  }
  o.require(improved == e.runs.size(), std::to_string(e.runs.size() - improved) + " seeds did not lower KL");
  o.require(!e.runs.empty() && e.seed == e.runs[best].seed && e.kl == e.runs[best].final_kl(), "selected seed is not the min-KL seed");
  const double sil = fixtures::silhouette(e.coords, mix.labels);
  o.require(sil > 0.25, "silhouette " + fmt(sil, 4));
  o.require(elapsed < 120.0, "runtime " + fmt(elapsed) + " s exceeds 120 s");
  o.note("N = " + std::to_string(mix.ids.size()) + ", KL decreased on " + std::to_string(improved) + "/5 seeds, selected seed " +
         std::to_string(e.seed) + " (KL " + fmt(e.kl, 4) + "), silhouette " + fmt(sil, 3) + ", " + fmt(elapsed, 2) + " s");
  return o;
}

// ---------------------------------------------------------------------------
// 7. Field clustering

fields::CoClusterCounts counts_with(std::size_t n, const std::vector<std::pair<std::vector<std::size_t>, std::uint8_t>>& groups) {
  fields::CoClusterCounts c(n);
  for (const auto& [members, runs] : groups)
    for (std::size_t a = 0; a < members.size(); ++a)
      for (std::size_t b = a + 1; b < members.size(); ++b) c.at(members[a], members[b]) = runs;
  return c;
}

Outcome clustering_check(const Options&) {
  Outcome o;
  const std::vector<fields::Point> centers{{0, 0}, {20, 0}, {0, 20}, {20, 20}};
  std::size_t recovered = 0;
  double worst_ari = 1.0;
  for (std::uint64_t trial = 0; trial < 10; ++trial) {
    const auto b = fixtures::gaussian_blobs(centers, {25, 25, 25, 25}, 1.0, derive_seed(kSeed, 7, trial));
    const auto sel = fields::select_k(b.ids, b.points, 1, 12, derive_seed(kSeed, 0x7A, trial));
    recovered += sel.k == 4;
    const auto m = fields::robust_cluster(b.ids, b.points, sel.k, derive_seed(kSeed, 0x7B, trial));
    worst_ari = std::min(worst_ari, fixtures::adjusted_rand_index(m.assignment, b.labels));
  }
  o.require(recovered == 10, "select_k found k = 4 in " + std::to_string(recovered) + "/10 trials");
  o.require(worst_ari >= 0.95, "worst robust_cluster ARI " + fmt(worst_ari, 4));

  const fields::ClusterOptions rules; // 20 runs, quorum 15, minimum size 4
  using V = std::vector<int>;
  std::size_t fixtures_run = 0;
  auto expect = [&](const std::string& name, const V& got, const V& want) {
    ++fixtures_run;
    o.require(got == want, "quorum fixture '" + name + "' gave an unexpected assignment");
  };
  expect("15 of 20 links", fields::quorum_fields(counts_with(4, {{{0, 1, 2, 3}, 15}}), rules), V{0, 0, 0, 0});
  expect("14 of 20 does not link", fields::quorum_fields(counts_with(4, {{{0, 1, 2, 3}, 14}}), rules), V{-1, -1, -1, -1});
  expect("links are transitive", fields::quorum_fields(counts_with(5, {{{0, 1}, 20}, {{1, 2}, 15}, {{2, 3}, 16}, {{3, 4}, 14}}), rules),
         V{0, 0, 0, 0, -1});
  expect("size 4 kept, size 3 unassigned", fields::quorum_fields(counts_with(7, {{{0, 2, 4}, 20}, {{1, 3, 5, 6}, 20}}), rules),
         V{-1, 0, -1, 0, -1, 0, 0});
  expect("fields numbered by earliest member",
         fields::quorum_fields(counts_with(8, {{{4, 5, 6, 7}, 18}, {{0, 1, 2, 3}, 17}}), rules), V{0, 0, 0, 0, 1, 1, 1, 1});

  // A far 3-document blob is never a field; its neighbours are.
  const auto small = fixtures::gaussian_blobs({{0, 0}, {10, 0}, {100, 100}}, {12, 12, 3}, 0.5, derive_seed(kSeed, 0x7C));
  const auto m = fields::robust_cluster(small.ids, small.points, 3, derive_seed(kSeed, 0x7D));
  ++fixtures_run;
  bool small_ok = m.field_count == 2;
  for (std::size_t i = 0; i < small.ids.size(); ++i) small_ok = small_ok && (i >= 24 ? m.assignment[i] == -1 : m.assignment[i] >= 0);
  o.require(small_ok, "3-document blob fixture");

  auto over = rules;
  over.quorum = 21;
  bool rejected = false;
  try {
    fields::robust_cluster(small.ids, small.points, 3, 0, over);
  } catch (const ValidationError&) {
    rejected = true;
  }
  ++fixtures_run;
  o.require(rejected, "quorum above the run count was accepted");
  o.note("k = 4 in " + std::to_string(recovered) + "/10 trials, worst ARI " + fmt(worst_ari, 4) + ", " + std::to_string(fixtures_run) +
         " quorum/min-size fixtures");
  return o;
}

// ---------------------------------------------------------------------------
// 8. Field statistics

Outcome field_statistics(const Options&) {
  Outcome o;
  const auto equal = fixtures::model_of({0, 0, 1, 1, 1});
  const double r_one = fields::field_r2(equal, {{0.9, 0.1}, {0.9, 0.1}, {0.2, 0.8}, {0.2, 0.8}, {0.2, 0.8}});
  const double r_zero = fields::field_r2(fixtures::model_of({0, 0, 0, 0}), {{0.9, 0.1}, {0.5, 0.5}, {0.2, 0.8}, {0.1, 0.9}});
  o.require(std::abs(r_one - 1.0) <= 1e-9, "centroid-equal r2 " + fmt(r_one, 12));
  o.require(std::abs(r_zero) <= 1e-9, "single-field r2 " + fmt(r_zero, 12));

  std::size_t endpoint_checks = 0;
  for (bool directional : {false, true})
    for (std::uint64_t s = 0; s < 5; ++s) {
      const auto d = fixtures::dated_fields(directional, 5, 30, 300, derive_seed(kSeed, 8, s));
      for (const auto& f : fields::temporal_bias(d.model, d.years).fields) {
        ++endpoint_checks;
        o.require(f.delta.front() == 1.0 && f.delta.back() == -1.0, "delta endpoints are not exactly +1 and -1");
      }
    }

  std::vector<int> assignment, years;
  for (int y = 0; y < 25; ++y)
    for (int f = 0; f < 3; ++f) {
      assignment.push_back(f);
      years.push_back(1980 + y);
    }
  const auto uniform = fields::temporal_bias(fixtures::model_of(assignment), years);
  const double t0 = 1980.0, tmax = 2005.0; // one past the last year
  double worst = 0.0;
  for (const auto& f : uniform.fields)
    for (std::size_t i = 0; i < f.delta.size(); ++i) {
      const double t = t0 + static_cast<double>(i);
      worst = std::max(worst, std::abs(f.delta[i] - (-2.0 * (t - t0) / (tmax - t0) + 1.0)));
    }
  o.require(worst <= 1e-12, "uniform field deviates from the closed form by " + sci(worst));

  const Stopwatch clock;
  std::size_t inside = 0, outside = 0;
  for (std::uint64_t t = 0; t < 100; ++t) {
    const auto st = fixtures::dated_fields(false, 6, 36, 600, derive_seed(kSeed, 0x8A, t));
    inside += !fields::permutation_test(fields::temporal_bias(st.model, st.years), 1000, derive_seed(kSeed, 0x8B, t)).half_life_variance.outside;
    const auto dir = fixtures::dated_fields(true, 6, 36, 600, derive_seed(kSeed, 0x8C, t));
    outside += fields::permutation_test(fields::temporal_bias(dir.model, dir.years), 1000, derive_seed(kSeed, 0x8D, t)).half_life_variance.outside;
  }
  o.require(inside >= 90, "stationary inside envelope in " + std::to_string(inside) + "/100");
  o.require(outside >= 95, "directional outside envelope in " + std::to_string(outside) + "/100");
  o.note("r2 " + fmt(r_one, 12) + " / " + fmt(r_zero, 12) + ", " + std::to_string(endpoint_checks) + " endpoint pairs exact, closed form within " +
         sci(worst) + ", stationary inside " + std::to_string(inside) + "/100, directional outside " + std::to_string(outside) + "/100, " +
         fmt(clock.seconds(), 2) + " s for 200 permutation tests");
  return o;
}

// ---------------------------------------------------------------------------
// 9. Mentions

Outcome mention_check(const Options&) {
  Outcome o;
  const auto tree = annotate::parse_taxonomy(fixtures::kTaxonomyTsv);
  const auto lexicon = annotate::parse_lexicon(fixtures::kLexiconTsv);
  const auto planted = fixtures::planted_mention_pages(derive_seed(kSeed, 9), 30);

  std::vector<annotate::TaxonMention> found;
  for (const auto& p : planted.pages) {
    const auto m = annotate::match_taxa(p, lexicon);
    found.insert(found.end(), m.begin(), m.end());
  }
  const std::set<annotate::TaxonMention> got(found.begin(), found.end());
  std::size_t hits = 0;
  for (const auto& e : planted.expected) hits += got.count(e);
  o.require(hits == planted.expected.size(), "recall " + std::to_string(hits) + "/" + std::to_string(planted.expected.size()));
  o.require(found.size() == planted.expected.size(), "found " + std::to_string(found.size()) + " mentions, planted " +
                                                         std::to_string(planted.expected.size()));

  struct Case {
    std::string text;
    std::vector<std::pair<std::string, std::string>> want; // (surface, taxon)
  };
  const std::vector<Case> cases{
      {"A brown bear and a bear.", {{"brown bear", "9644"}, {"bear", "9639"}}},
      {"drosophila melanogaster, then Drosophila", {{"drosophila melanogaster", "7227"}, {"Drosophila", "7215"}}},
      {"the House  Mouse is a mouse", {{"House  Mouse", "10090"}, {"mouse", "10090"}}},
      {"Drosophila melano and an English oak", {{"Drosophila", "7215"}, {"English oak", "38942"}}},
  };
  for (const auto& c : cases) {
    const auto m = annotate::match_taxa({"d", 0, c.text}, lexicon);
    std::vector<std::pair<std::string, std::string>> seen;
    for (const auto& x : m) seen.emplace_back(x.surface, x.taxon_id);
    o.require(seen == c.want, "longest-match case '" + c.text + "'");
  }

  // Phylum counts against an independent walk up the parent links.
  std::map<std::string, std::size_t> oracle;
  for (const auto& mention : planted.expected) {
    std::optional<std::string> id = mention.taxon_id;
    while (id && tree.node(*id).rank != annotate::Rank::phylum) id = tree.node(*id).parent_id;
    if (id) ++oracle[*id];
  }
  const auto rolled = annotate::rollup(found, annotate::Rank::phylum, tree);
  o.require(rolled == oracle, "phylum roll-up differs from the summed species-level counts");
  o.note(std::to_string(hits) + "/" + std::to_string(planted.expected.size()) + " planted mentions with exact spans, " +
         std::to_string(cases.size()) + " precedence cases, " + std::to_string(rolled.size()) + " phyla rolled up");
  return o;
}

// ---------------------------------------------------------------------------
// 10. End to end

const std::vector<std::string> kArtifacts{
    "bundle.json",           "corpus/documents.json", "corpus/pages.jsonl",     "corpus/tokens.jsonl",   "corpus/vocabulary.tsv",
    "corpus/citations.csv",  "annotate/taxon_mentions.csv", "annotate/geo_tags.csv", "lda/k10/topics.json", "lda/k10/doc_theta.csv",
    "lda/k10/page_theta.csv", "lda/k10/enrichment.csv", "lda/k10/topic_graph.json", "fields/embedding.csv", "fields/fields.json",
    "fields/graph.json",     "fields/permutation.json", "diversity/diversity.csv", "report/geo.csv",       "report/taxa.csv",
    "report/topics.csv",     "report/fields.csv",     "report/diversity.csv",   "api/index.json"};

Outcome end_to_end(const Options& opt) {
  Outcome o;
  const auto& m = mini_runs(opt);
  o.require(m.run_a.exit_code == 0, "first run failed: " + m.run_a.output);
  o.require(m.run_b.exit_code == 0, "second run failed: " + m.run_b.output);
  if (!o.pass) return o;
  o.require(m.seconds_a < 120.0 && m.seconds_b < 120.0, "run time " + fmt(std::max(m.seconds_a, m.seconds_b)) + " s exceeds 120 s");

  for (const auto& rel : kArtifacts) o.require(fs::is_regular_file(m.a / rel), "missing artifact " + rel);
  const auto status = pipeline::check_bundle(m.a);
  o.require(status.complete, "bundle check: " + (status.problems.empty() ? std::string("incomplete") : status.problems.front()));
  const auto ha = support::tree_hashes(m.a), hb = support::tree_hashes(m.b);
  o.require(ha == hb, "the two runs differ");

  // Refusal of incomplete bundles.
  o.require(m.run_partial.exit_code == 0, "partial run failed: " + m.run_partial.output);
  bool refused = false;
  try {
    server::ApiBundle partial(m.partial);
  } catch (const ValidationError& e) {
    refused = std::string(e.what()).find("has not run") != std::string::npos;
  }
  o.require(refused, "server accepted a bundle with only the lda stage");
  const auto serve = support::run(opt.cli, {"serve", "--bundle", m.partial.string(), "--port", "1"});
  o.require(serve.exit_code == 2, "serve on a partial bundle exited " + std::to_string(serve.exit_code));

  // Every endpoint from the complete bundle.
  const server::ApiBundle api(m.a);
  std::size_t served = 0;
  auto get = [&](const std::string& path, std::map<std::string, std::string> query = {}) {
    const auto r = api.handle({path, std::move(query)});
    ++served;
    o.require(r.status == 200, path + " returned " + std::to_string(r.status));
    return r.status == 200 ? json::parse(r.body) : json::object();
  };
  const auto docs = artifacts::load_documents(m.a);
  get("/health");
  get("/documents");
  get("/fields");
  get("/graph/topics");
  get("/graph/fields");
  get("/taxa/1");
  const auto topics_csv = artifacts::read_csv(m.a / "report/topics.csv");
  std::set<std::size_t> topic_ids;
  for (const auto& r : topics_csv.rows) topic_ids.insert(artifacts::to_size(r[1]));
  for (const auto& d : docs) get("/documents/" + d.doc_id);
  std::set<std::string> authors;
  for (const auto& d : docs) authors.insert(d.authors.begin(), d.authors.end());
  for (const auto& a : authors) get("/authors/" + a);
  const auto field_count = get("/fields").at("fields").size();
  for (std::size_t f = 0; f < field_count; ++f) get("/fields/" + std::to_string(f));

  // Aggregates against the report CSVs.
  const auto geo_csv = artifacts::read_csv(m.a / "report/geo.csv");
  const auto geo = get("/geo").at("rows");
  bool geo_ok = geo.size() == geo_csv.rows.size();
  for (std::size_t i = 0; geo_ok && i < geo.size(); ++i) {
    const auto& r = geo_csv.rows[i];
    geo_ok = geo[i].at("period") == r[0] && geo[i].at("role") == r[1] && geo[i].at("country") == r[2] &&
             geo[i].at("articles").get<std::size_t>() == artifacts::to_size(r[3]);
  }
  o.require(geo_ok, "/geo differs from report/geo.csv");

  std::size_t topic_rows = 0;
  for (auto t : topic_ids) {
    const auto j = get("/topics/" + std::to_string(t));
    std::size_t seen = 0;
    for (const auto& r : topics_csv.rows) {
      if (artifacts::to_size(r[1]) != t || artifacts::to_size(r[0]) != j.at("model").get<std::size_t>()) continue;
      const auto& p = j.at("prevalence").at(seen++);
      ++topic_rows;
      o.require(p.at("period") == r[3] && std::abs(p.at("prevalence").get<double>() - artifacts::to_double(r[4])) <= 1e-12 &&
                    std::abs(p.at("enrichment").get<double>() - artifacts::to_double(r[5])) <= 1e-12,
                "/topics/" + std::to_string(t) + " differs from report/topics.csv in " + r[3]);
    }
  }

  const auto taxa_csv = artifacts::read_csv(m.a / "report/taxa.csv");
  std::map<std::pair<std::string, std::string>, std::size_t> taxa_cells;
  std::set<std::string> phyla;
  for (const auto& r : taxa_csv.rows) {
    taxa_cells[{r[1], r[0]}] = artifacts::to_size(r[3]);
    phyla.insert(r[1]);
  }
  std::size_t taxa_rows = 0;
  for (const auto& id : phyla) {
    const auto taxon = get("/taxa/" + id);
    for (const auto& p : taxon.at("documents_per_period")) {
      const auto it = taxa_cells.find({id, p.at("period").get<std::string>()});
      const std::size_t want = it == taxa_cells.end() ? 0 : it->second;
      taxa_rows += it != taxa_cells.end();
      o.require(p.at("articles").get<std::size_t>() == want, "/taxa/" + id + " differs from report/taxa.csv");
    }
  }
  o.require(taxa_rows == taxa_csv.rows.size(), "report/taxa.csv has rows the API does not serve");

  o.note("runs " + fmt(m.seconds_a, 2) + " s and " + fmt(m.seconds_b, 2) + " s, " + std::to_string(ha.size()) +
         " files byte-identical, partial bundle refused, " + std::to_string(served) + " endpoint calls, " + std::to_string(geo.size()) +
         " geo rows, " + std::to_string(topic_rows) + " topic-period rows, " + std::to_string(taxa_rows) + " taxon-period rows match");
  return o;
}

} // namespace

int main(int argc, char** argv) {
  Options opt;
  std::string source_dir, work_dir;
  CLI::App app{"corposcope acceptance checks"};
  app.add_option("--cli", opt.cli, "corposcope binary")->required();
  app.add_option("--python", opt.python, "Python interpreter for the oracle script")->required();
  app.add_option("--source-dir", source_dir, "Source tree")->required();
  app.add_option("--work-dir", work_dir, "Scratch directory (recreated)")->required();
  std::vector<int> only;
  app.add_option("--only", only, "Run only these criteria");
  CLI11_PARSE(app, argc, argv);
  opt.source_dir = source_dir;
  opt.work_dir = work_dir;
  fs::remove_all(opt.work_dir);
  fs::create_directories(opt.work_dir);

  const std::vector<std::pair<std::string, std::function<Outcome(const Options&)>>> criteria{
      {"diversity indices match the brute-force oracle", oracle_equivalence},
      {"closed-form diversity and distance values", closed_forms},
      {"bootstrap interval coverage", bootstrap_check},
      {"planted LDA recovery", lda_recovery},
      {"period enrichment identity", enrichment_identity},
      {"t-SNE embedding", tsne_check},
      {"k selection and robust clustering", clustering_check},
      {"field statistics", field_statistics},
      {"taxon mentions and roll-up", mention_check},
      {"end-to-end pipeline and server", end_to_end},
  };

  bool all_pass = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = static_cast<int>(i + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), number) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second(opt);
    } catch (const std::exception& e) {
      o.pass = false;
      o.failures.push_back(std::string("exception: ") + e.what());
    }
    all_pass = all_pass && o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << number << ". " << criteria[i].first;
    if (!o.notes.empty()) std::cout << ": " << o.notes.front();
    std::cout << "\n";
    for (std::size_t n = 1; n < o.notes.size(); ++n) std::cout << "        " << o.notes[n] << "\n";
    for (const auto& f : o.failures) std::cout << "        failed: " << f << "\n";
    std::cout.flush();
  }
  return all_pass ? 0 : 1;
}
