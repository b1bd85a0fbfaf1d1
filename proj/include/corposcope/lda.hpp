#pragma once

// Latent Dirichlet allocation fit by collapsed Gibbs sampling over pages,
// with document/page mixtures, top words, period enrichment and a topic
// co-occurrence graph.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include "corposcope/corpus.hpp"
#include "corposcope/error.hpp"
#include "corposcope/rng.hpp"

namespace corposcope::lda {

struct LdaConfig {
  std::size_t topics = 100;
  std::size_t iterations = 10000;
  std::optional<double> alpha; // symmetric; defaults to 50 / K
  double beta = 0.01;
  std::uint64_t seed = 0;
  std::size_t log_stride = 10;
  // 1 = exact sequential sampler. More threads partition pages and
  // reconcile topic-word counts after each sweep (approximate).
  std::size_t threads = 1;

  double alpha_value() const { return alpha.value_or(50.0 / static_cast<double>(topics)); }

  void validate() const {
    if (topics < 1) throw ValidationError("lda: K must be >= 1");
    if (iterations < 1) throw ValidationError("lda: iterations must be >= 1");
    if (!(alpha_value() > 0.0) || !(beta > 0.0)) throw ValidationError("lda: alpha and beta must be > 0");
    if (log_stride < 1) throw ValidationError("lda: log stride must be >= 1");
    if (threads < 1) throw ValidationError("lda: threads must be >= 1");
  }
};

// Pages as word-id sequences, grouped into documents.
struct LdaCorpus {
  std::vector<std::string> doc_ids;
  std::vector<std::size_t> page_doc;   // page -> index into doc_ids
  std::vector<std::size_t> page_index; // page index within its document
  std::vector<std::vector<std::uint32_t>> pages;
  std::size_t vocabulary_size = 0;

  std::size_t tokens() const {
    std::size_t n = 0;
    for (const auto& p : pages) n += p.size();
    return n;
  }
};

// Documents are numbered in order of first appearance. Tokens missing from
// the vocabulary are dropped.
inline LdaCorpus make_lda_corpus(const std::vector<corpus::TokenStream>& streams, const corpus::Vocabulary& vocab) {
  LdaCorpus c;
  c.vocabulary_size = vocab.size();
  std::unordered_map<std::string, std::size_t> doc_index;
  for (const auto& s : streams) {
    auto [it, fresh] = doc_index.emplace(s.doc_id, c.doc_ids.size());
    if (fresh) c.doc_ids.push_back(s.doc_id);
    std::vector<std::uint32_t> ids;
    ids.reserve(s.tokens.size());
    for (const auto& t : s.tokens)
      if (auto id = vocab.id(t)) ids.push_back(static_cast<std::uint32_t>(*id));
    c.page_doc.push_back(it->second);
    c.page_index.push_back(s.page_index);
    c.pages.push_back(std::move(ids));
  }
  return c;
}

struct SweepLog {
  std::size_t sweep = 0; // 1-based
  double reassigned_fraction = 0.0;
};

struct TopicModelState {
  LdaConfig config;
  double alpha = 0.0;
  double beta = 0.0;
  std::size_t topics = 0;
  std::size_t vocabulary_size = 0;

  std::vector<std::string> doc_ids;
  std::vector<std::size_t> page_doc;
  std::vector<std::size_t> page_index;
  std::vector<std::vector<std::uint32_t>> words; // per page
  std::vector<std::vector<std::uint32_t>> z;     // per page, parallel to words

  std::vector<std::int64_t> page_topic;  // pages x K
  std::vector<std::int64_t> topic_word;  // K x V
  std::vector<std::int64_t> topic_total; // K

  std::vector<SweepLog> log;
  std::vector<std::string> warnings;

  std::size_t pages() const { return words.size(); }
  std::int64_t n_dk(std::size_t page, std::size_t k) const { return page_topic[page * topics + k]; }
  std::int64_t n_kw(std::size_t k, std::size_t w) const { return topic_word[k * vocabulary_size + w]; }

  double phi(std::size_t k, std::size_t w) const {
    return (static_cast<double>(n_kw(k, w)) + beta) /
           (static_cast<double>(topic_total[k]) + static_cast<double>(vocabulary_size) * beta);
  }

  std::size_t tokens() const {
    std::size_t n = 0;
    for (const auto& p : words) n += p.size();
    return n;
  }

  // Exact integer conservation between assignments and every count table.
  bool counts_consistent() const {
    std::vector<std::int64_t> dk(page_topic.size(), 0), kw(topic_word.size(), 0), kt(topics, 0);
    for (std::size_t d = 0; d < words.size(); ++d) {
      if (z[d].size() != words[d].size()) return false;
      for (std::size_t i = 0; i < words[d].size(); ++i) {
        ++dk[d * topics + z[d][i]];
        ++kw[z[d][i] * vocabulary_size + words[d][i]];
        ++kt[z[d][i]];
      }
    }
    if (dk != page_topic || kw != topic_word || kt != topic_total) return false;
    for (auto v : page_topic)
      if (v < 0) return false;
    std::int64_t total = 0;
    for (auto v : topic_total) total += v;
    return total == static_cast<std::int64_t>(tokens());
  }
};

using SweepObserver = std::function<void(const TopicModelState&, const SweepLog&)>;

namespace detail {

// One sweep over pages [begin, end) against the given topic-word tables.
// Returns the number of tokens whose topic changed.
inline std::size_t sweep_pages(TopicModelState& s, std::size_t begin, std::size_t end, std::int64_t* topic_word,
                               std::int64_t* topic_total, Rng& rng, std::vector<double>& cumulative) {
  const std::size_t K = s.topics;
  const double alpha = s.alpha, beta = s.beta;
  const double vbeta = static_cast<double>(s.vocabulary_size) * beta;
  std::size_t changed = 0;
  for (std::size_t d = begin; d < end; ++d) {
    std::int64_t* dk = &s.page_topic[d * K];
    auto& zd = s.z[d];
    const auto& wd = s.words[d];
    for (std::size_t i = 0; i < wd.size(); ++i) {
      const std::uint32_t w = wd[i];
      const std::uint32_t old = zd[i];
      std::int64_t* kw = topic_word + w;
      --dk[old];
      --kw[old * s.vocabulary_size];
      --topic_total[old];
      double acc = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        acc += (static_cast<double>(dk[k]) + alpha) * (static_cast<double>(kw[k * s.vocabulary_size]) + beta) /
               (static_cast<double>(topic_total[k]) + vbeta);
        cumulative[k] = acc;
      }
      const double u = rng.uniform() * acc;
      std::uint32_t k = static_cast<std::uint32_t>(std::upper_bound(cumulative.begin(), cumulative.begin() + K, u) - cumulative.begin());
      if (k >= K) k = static_cast<std::uint32_t>(K - 1);
      zd[i] = k;
      ++dk[k];
      ++kw[k * s.vocabulary_size];
      ++topic_total[k];
      changed += (k != old);
    }
  }
  return changed;
}

} // namespace detail

// Collapsed Gibbs sampling. Assignments start uniformly at random; each
// sweep resamples every token from
//   p(k) ~ (n_dk + alpha) (n_kw + beta) / (n_k + V beta)
// with the token's own assignment removed. The final sweep's counts are the
// model. Sweep s draws from the stream derive_seed(seed, s, chunk), so a
// single-threaded fit is bit-reproducible.
inline TopicModelState fit_lda(const LdaCorpus& corpus, const LdaConfig& config, const SweepObserver& observer = {}) {
  config.validate();
  const std::size_t total_tokens = corpus.tokens();
  if (total_tokens == 0) throw ValidationError("lda: corpus has no tokens");
  if (corpus.vocabulary_size == 0) throw ValidationError("lda: empty vocabulary");

  TopicModelState s;
  s.config = config;
  s.alpha = config.alpha_value();
  s.beta = config.beta;
  s.topics = config.topics;
  s.vocabulary_size = corpus.vocabulary_size;
  s.doc_ids = corpus.doc_ids;
  s.page_doc = corpus.page_doc;
  s.page_index = corpus.page_index;
  s.words = corpus.pages;
  if (config.topics > total_tokens)
    s.warnings.push_back("K=" + std::to_string(config.topics) + " exceeds the corpus token count " + std::to_string(total_tokens));

  const std::size_t K = s.topics, V = s.vocabulary_size;
  s.page_topic.assign(s.pages() * K, 0);
  s.topic_word.assign(K * V, 0);
  s.topic_total.assign(K, 0);
  s.z.resize(s.pages());

  Rng init(derive_seed(config.seed, 0, 0));
  for (std::size_t d = 0; d < s.pages(); ++d) {
    s.z[d].resize(s.words[d].size());
    for (std::size_t i = 0; i < s.words[d].size(); ++i) {
      if (s.words[d][i] >= V) throw ValidationError("lda: word id out of range");
      const auto k = static_cast<std::uint32_t>(init.below(K));
      s.z[d][i] = k;
      ++s.page_topic[d * K + k];
      ++s.topic_word[k * V + s.words[d][i]];
      ++s.topic_total[k];
    }
  }

  const std::size_t chunks = std::min(config.threads, std::max<std::size_t>(1, s.pages()));
  std::vector<std::size_t> bounds(chunks + 1);
  for (std::size_t c = 0; c <= chunks; ++c) bounds[c] = s.pages() * c / chunks;

  for (std::size_t sweep = 1; sweep <= config.iterations; ++sweep) {
    std::size_t changed = 0;
    if (chunks == 1) {
      Rng rng(derive_seed(config.seed, sweep, 0));
      std::vector<double> cumulative(K);
      changed = detail::sweep_pages(s, 0, s.pages(), s.topic_word.data(), s.topic_total.data(), rng, cumulative);
    } else {
      // Each worker samples against a private copy of the topic-word
      // tables; deltas are summed back after all workers finish.
      std::vector<std::vector<std::int64_t>> kw(chunks, s.topic_word), kt(chunks, s.topic_total);
      std::vector<std::size_t> worker_changed(chunks, 0);
      std::vector<std::thread> workers;
      for (std::size_t c = 0; c < chunks; ++c) {
        workers.emplace_back([&, c] {
          Rng rng(derive_seed(config.seed, sweep, c));
          std::vector<double> cumulative(K);
          worker_changed[c] = detail::sweep_pages(s, bounds[c], bounds[c + 1], kw[c].data(), kt[c].data(), rng, cumulative);
        });
      }
      for (auto& w : workers) w.join();
      const auto base_kw = s.topic_word;
      const auto base_kt = s.topic_total;
      for (std::size_t c = 0; c < chunks; ++c) {
        for (std::size_t i = 0; i < base_kw.size(); ++i) s.topic_word[i] += kw[c][i] - base_kw[i];
        for (std::size_t i = 0; i < K; ++i) s.topic_total[i] += kt[c][i] - base_kt[i];
        changed += worker_changed[c];
      }
    }
    if (sweep == 1 || sweep % config.log_stride == 0 || sweep == config.iterations) {
      SweepLog entry{sweep, static_cast<double>(changed) / static_cast<double>(total_tokens)};
      s.log.push_back(entry);
      if (observer) observer(s, entry);
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Mixtures

using Matrix = std::vector<std::vector<double>>;

// (n_dk + alpha) / (N_d + K alpha) per page.
inline Matrix page_theta(const TopicModelState& s) {
  Matrix out(s.pages(), std::vector<double>(s.topics));
  const double ka = static_cast<double>(s.topics) * s.alpha;
  for (std::size_t d = 0; d < s.pages(); ++d) {
    const double n = static_cast<double>(s.words[d].size());
    for (std::size_t k = 0; k < s.topics; ++k)
      out[d][k] = (static_cast<double>(s.n_dk(d, k)) + s.alpha) / (n + ka);
  }
  return out;
}

// Raw token-topic counts summed over each document's pages.
inline std::vector<std::vector<std::int64_t>> doc_topic_counts(const TopicModelState& s) {
  std::vector<std::vector<std::int64_t>> out(s.doc_ids.size(), std::vector<std::int64_t>(s.topics, 0));
  for (std::size_t d = 0; d < s.pages(); ++d)
    for (std::size_t k = 0; k < s.topics; ++k) out[s.page_doc[d]][k] += s.n_dk(d, k);
  return out;
}

inline std::vector<std::size_t> doc_token_counts(const TopicModelState& s) {
  std::vector<std::size_t> out(s.doc_ids.size(), 0);
  for (std::size_t d = 0; d < s.pages(); ++d) out[s.page_doc[d]] += s.words[d].size();
  return out;
}

inline std::vector<double> smooth(const std::vector<std::int64_t>& counts, double alpha) {
  double n = 0.0;
  for (auto c : counts) n += static_cast<double>(c);
  std::vector<double> out(counts.size());
  const double denom = n + static_cast<double>(counts.size()) * alpha;
  for (std::size_t k = 0; k < counts.size(); ++k) out[k] = (static_cast<double>(counts[k]) + alpha) / denom;
  return out;
}

// Document mixtures pool the pages' token counts before smoothing; they are
// not averages of page mixtures.
inline Matrix doc_theta(const TopicModelState& s) {
  Matrix out;
  for (const auto& counts : doc_topic_counts(s)) out.push_back(smooth(counts, s.alpha));
  return out;
}

inline std::vector<double> doc_theta(const TopicModelState& s, std::string_view doc_id) {
  const auto it = std::find(s.doc_ids.begin(), s.doc_ids.end(), doc_id);
  if (it == s.doc_ids.end()) throw ValidationError("unknown document '" + std::string(doc_id) + "'");
  const auto idx = static_cast<std::size_t>(it - s.doc_ids.begin());
  std::vector<std::int64_t> counts(s.topics, 0);
  for (std::size_t d = 0; d < s.pages(); ++d)
    if (s.page_doc[d] == idx)
      for (std::size_t k = 0; k < s.topics; ++k) counts[k] += s.n_dk(d, k);
  return smooth(counts, s.alpha);
}

inline std::vector<double> phi_row(const TopicModelState& s, std::size_t k) {
  std::vector<double> row(s.vocabulary_size);
  for (std::size_t w = 0; w < s.vocabulary_size; ++w) row[w] = s.phi(k, w);
  return row;
}

struct WordWeight {
  std::string word;
  double probability = 0.0;
};

// The m most probable words; equal probabilities order lexicographically.
inline std::vector<WordWeight> topic_top_words(const TopicModelState& s, const std::vector<std::string>& terms,
                                               std::size_t topic, std::size_t m = 10) {
  if (topic >= s.topics) throw ValidationError("invalid topic " + std::to_string(topic));
  if (terms.size() != s.vocabulary_size) throw ValidationError("vocabulary does not match model");
  std::vector<std::size_t> ids(s.vocabulary_size);
  for (std::size_t w = 0; w < ids.size(); ++w) ids[w] = w;
  const std::size_t take = std::min(m, ids.size());
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(take), ids.end(), [&](auto a, auto b) {
    const auto ca = s.n_kw(topic, a), cb = s.n_kw(topic, b);
    return ca != cb ? ca > cb : terms[a] < terms[b];
  });
  std::vector<WordWeight> out;
  for (std::size_t i = 0; i < take; ++i) out.push_back({terms[ids[i]], s.phi(topic, ids[i])});
  return out;
}

// ---------------------------------------------------------------------------
// Enrichment

struct Period {
  int first = 0;
  int last = 0;

  bool contains(int year) const { return year >= first && year <= last; }
  std::string label() const { return std::to_string(first) + "-" + std::to_string(last); }
  bool operator==(const Period&) const = default;
};

inline std::optional<Period> parse_period(std::string_view label) {
  const auto dash = label.find('-');
  if (dash == std::string_view::npos) return std::nullopt;
  try {
    Period p{std::stoi(std::string(label.substr(0, dash))), std::stoi(std::string(label.substr(dash + 1)))};
    if (p.first > p.last) return std::nullopt;
    return p;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

// Index of the single period containing each year. Overlapping periods,
// uncovered years and periods without documents are errors.
inline std::vector<std::size_t> assign_periods(const std::vector<int>& years, const std::vector<Period>& periods) {
  if (periods.empty()) throw ValidationError("no periods given");
  for (std::size_t a = 0; a < periods.size(); ++a) {
    if (periods[a].first > periods[a].last) throw ValidationError("period " + periods[a].label() + " is reversed");
    for (std::size_t b = a + 1; b < periods.size(); ++b)
      if (periods[a].first <= periods[b].last && periods[b].first <= periods[a].last)
        throw ValidationError("periods " + periods[a].label() + " and " + periods[b].label() + " overlap");
  }
  std::vector<std::size_t> out;
  std::vector<std::size_t> sizes(periods.size(), 0);
  for (int y : years) {
    std::optional<std::size_t> found;
    for (std::size_t p = 0; p < periods.size(); ++p)
      if (periods[p].contains(y)) found = p;
    if (!found) throw ValidationError("year " + std::to_string(y) + " is not covered by any period");
    ++sizes[*found];
    out.push_back(*found);
  }
  for (std::size_t p = 0; p < periods.size(); ++p)
    if (!sizes[p]) throw ValidationError("period " + periods[p].label() + " has no documents");
  return out;
}

enum class EnrichmentMode {
  theta_mass, // token-weighted mean of doc theta
  presence,   // fraction of docs whose theta exceeds the presence cutoff
};

// enrichment(k, p) = mean_k within p / mean_k over all docs, where means
// are weighted by document token counts (theta_mass) or by document
// (presence). The weighted average of enrichment over periods is 1.
inline Matrix topic_enrichment(const Matrix& doc_theta, const std::vector<double>& doc_weight,
                               const std::vector<int>& doc_year, const std::vector<Period>& periods,
                               EnrichmentMode mode = EnrichmentMode::theta_mass, double presence_cutoff = 0.05) {
  if (doc_theta.empty()) throw ValidationError("enrichment: no documents");
  if (doc_weight.size() != doc_theta.size() || doc_year.size() != doc_theta.size())
    throw ValidationError("enrichment: document arrays differ in length");
  const auto period_of = assign_periods(doc_year, periods);
  const std::size_t K = doc_theta.front().size();
  Matrix mass(K, std::vector<double>(periods.size(), 0.0));
  std::vector<double> weight(periods.size(), 0.0);
  std::vector<double> total_mass(K, 0.0);
  double total_weight = 0.0;
  for (std::size_t d = 0; d < doc_theta.size(); ++d) {
    const double w = mode == EnrichmentMode::theta_mass ? doc_weight[d] : 1.0;
    weight[period_of[d]] += w;
    total_weight += w;
    for (std::size_t k = 0; k < K; ++k) {
      const double v = mode == EnrichmentMode::theta_mass ? doc_theta[d][k] : (doc_theta[d][k] > presence_cutoff ? 1.0 : 0.0);
      mass[k][period_of[d]] += w * v;
      total_mass[k] += w * v;
    }
  }
  for (std::size_t p = 0; p < periods.size(); ++p)
    if (!(weight[p] > 0.0)) throw ValidationError("period " + periods[p].label() + " has no weight");
  Matrix out(K, std::vector<double>(periods.size(), 0.0));
  for (std::size_t k = 0; k < K; ++k) {
    const double overall = total_mass[k] / total_weight;
    for (std::size_t p = 0; p < periods.size(); ++p)
      out[k][p] = overall > 0.0 ? (mass[k][p] / weight[p]) / overall : 0.0;
  }
  return out;
}

inline Matrix topic_enrichment(const TopicModelState& s, const std::map<std::string, int>& doc_years,
                               const std::vector<Period>& periods, EnrichmentMode mode = EnrichmentMode::theta_mass,
                               double presence_cutoff = 0.05) {
  const auto theta = doc_theta(s);
  const auto tokens = doc_token_counts(s);
  std::vector<double> weight;
  std::vector<int> years;
  for (std::size_t d = 0; d < s.doc_ids.size(); ++d) {
    const auto it = doc_years.find(s.doc_ids[d]);
    if (it == doc_years.end()) throw ValidationError("no year for document '" + s.doc_ids[d] + "'");
    years.push_back(it->second);
    weight.push_back(static_cast<double>(tokens[d]));
  }
  return topic_enrichment(theta, weight, years, periods, mode, presence_cutoff);
}

// ---------------------------------------------------------------------------
// Co-occurrence graph

struct TopicEdge {
  std::size_t a = 0;
  std::size_t b = 0;
  double pmi = 0.0;
  std::size_t cooccurrences = 0;
};

struct TopicGraph {
  std::vector<double> prevalence; // fraction of pages where each topic is present
  std::vector<TopicEdge> edges;
};

// presence[page][k]: whether topic k is present on the page. Edges join
// pairs with PMI = ln(p(j,k) / (p(j) p(k))) > threshold; pairs that never
// co-occur have no edge.
inline TopicGraph topic_pmi_graph(const std::vector<std::vector<bool>>& presence, double threshold) {
  TopicGraph g;
  if (presence.empty()) return g;
  const std::size_t K = presence.front().size();
  const double P = static_cast<double>(presence.size());
  std::vector<std::size_t> single(K, 0);
  std::vector<std::size_t> joint(K * K, 0);
  std::vector<std::size_t> on;
  for (const auto& page : presence) {
    on.clear();
    for (std::size_t k = 0; k < K; ++k)
      if (page[k]) on.push_back(k);
    for (std::size_t i = 0; i < on.size(); ++i) {
      ++single[on[i]];
      for (std::size_t j = i + 1; j < on.size(); ++j) ++joint[on[i] * K + on[j]];
    }
  }
  for (std::size_t k = 0; k < K; ++k) g.prevalence.push_back(static_cast<double>(single[k]) / P);
  for (std::size_t a = 0; a < K; ++a) {
    for (std::size_t b = a + 1; b < K; ++b) {
      const auto n = joint[a * K + b];
      if (!n) continue;
      const double pmi = std::log((static_cast<double>(n) / P) / (g.prevalence[a] * g.prevalence[b]));
      if (pmi > threshold) g.edges.push_back({a, b, pmi, n});
    }
  }
  return g;
}

inline TopicGraph topic_pmi_graph(const TopicModelState& s, double threshold, double presence_cutoff = 0.05) {
  std::vector<std::vector<bool>> presence;
  for (const auto& row : page_theta(s)) {
    std::vector<bool> on(row.size());
    for (std::size_t k = 0; k < row.size(); ++k) on[k] = row[k] > presence_cutoff;
    presence.push_back(std::move(on));
  }
  return topic_pmi_graph(presence, threshold);
}

} // namespace corposcope::lda
