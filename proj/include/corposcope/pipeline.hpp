#pragma once

// Pipeline configuration, the stages that turn a corpus into an artifact
// bundle, and the runner that sequences them with hash-based caching, an
// exclusive lock and a failure marker.

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "corposcope/annotate.hpp"
#include "corposcope/artifacts.hpp"
#include "corposcope/corpus.hpp"
#include "corposcope/diversity.hpp"
#include "corposcope/error.hpp"
#include "corposcope/fields.hpp"
#include "corposcope/hash.hpp"
#include "corposcope/lda.hpp"
#include "corposcope/report.hpp"
#include "corposcope/rng.hpp"
#include "corposcope/text.hpp"
#include "corposcope/tsne.hpp"

namespace corposcope::pipeline {

namespace fs = std::filesystem;
using artifacts::Csv;
using artifacts::json;
using artifacts::num;

inline constexpr int kBundleVersion = 1;

// ---------------------------------------------------------------------------
// Configuration

enum class ResamplingUnit { reference, article };

struct LdaSection {
  std::vector<std::size_t> topics{100};
  std::size_t iterations = 10000;
  std::optional<double> alpha;
  double beta = 0.01;
  std::size_t log_stride = 10;
  std::size_t threads = 1;
  double pmi_threshold = 0.0;
  double presence_cutoff = 0.05;
  std::size_t top_words = 20;
  lda::EnrichmentMode enrichment = lda::EnrichmentMode::theta_mass;
};

struct FieldsSection {
  std::size_t model = 0; // 0 = first entry of the topic menu
  tsne::EmbeddingConfig embedding{};
  std::optional<std::size_t> k_min, k_max;
  fields::ClusterOptions cluster{};
  double percentile = 4.0;
  std::size_t permutations = 1000;
  std::size_t keywords = 18;
  std::set<corpus::DocType> doc_types{corpus::DocType::article, corpus::DocType::essay_review, corpus::DocType::other};
};

struct DiversitySection {
  std::size_t iterations = 1000;
  double level = 0.95;
  diversity::GeoVarianceScale geo_scale = diversity::GeoVarianceScale::half_circumference;
  annotate::Rank taxon_rank = annotate::Rank::phylum;
  ResamplingUnit unit = ResamplingUnit::reference;
};

struct PipelineConfig {
  fs::path config_path;
  json raw; // the file as written

  std::map<std::string, fs::path> inputs; // logical name -> resolved path
  std::map<std::string, std::string> input_labels; // logical name -> path as recorded in the bundle
  std::vector<lda::Period> geo_periods;
  std::vector<lda::Period> topic_periods;
  std::set<std::string> taxon_blocklist;
  LdaSection lda;
  FieldsSection fields;
  DiversitySection diversity;
  json server = json::object();
  fs::path output_dir;
  std::uint64_t seed = 0;

  std::size_t field_model() const { return fields.model ? fields.model : lda.topics.front(); }
};

namespace detail {

inline void only_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ValidationError(where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw ValidationError(where + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline std::uint64_t parse_seed(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used, 10);
    if (used != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ValidationError(where + ": seed must be a non-negative integer, got '" + s + "'");
  }
}

inline lda::EnrichmentMode parse_enrichment(const std::string& s) {
  if (s == "theta-mass") return lda::EnrichmentMode::theta_mass;
  if (s == "presence") return lda::EnrichmentMode::presence;
  throw ValidationError("lda.enrichment must be 'theta-mass' or 'presence'");
}

inline std::string to_string(lda::EnrichmentMode m) { return m == lda::EnrichmentMode::theta_mass ? "theta-mass" : "presence"; }

} // namespace detail

// Paths resolve against the config file's directory. The output directory
// resolves against the working directory. Seed precedence: explicit
// override, then CORPOSCOPE_SEED, then the file. CORPOSCOPE_OUTPUT_DIR
// replaces the configured output directory.
inline PipelineConfig load_config(const fs::path& path, std::optional<std::uint64_t> seed_override = std::nullopt) {
  PipelineConfig c;
  c.config_path = path;
  try {
    c.raw = json::parse(text::read_file(path));
  } catch (const json::exception& e) {
    throw ValidationError("config " + path.string() + ": " + e.what());
  }
  const fs::path base = path.parent_path();
  const json& j = c.raw;
  try {
    detail::only_keys(j, "config", {"manifest", "lexicon", "taxonomy", "gazetteer", "geo_annotations", "citations", "periods",
                                    "taxon_blocklist", "lda", "fields", "diversity", "server", "output_dir", "seed"});
    auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
    for (const char* key : {"manifest", "lexicon", "taxonomy", "gazetteer", "geo_annotations"}) {
      if (!j.contains(key)) throw ValidationError("config: missing '" + std::string(key) + "'");
      c.inputs[key] = resolve(j.at(key).get<std::string>());
      c.input_labels[key] = j.at(key).get<std::string>();
    }
    if (j.contains("citations")) {
      c.inputs["citations"] = resolve(j.at("citations").get<std::string>());
      c.input_labels["citations"] = j.at("citations").get<std::string>();
    }

    if (!j.contains("periods")) throw ValidationError("config: missing 'periods'");
    detail::only_keys(j.at("periods"), "periods", {"geo", "topics"});
    c.geo_periods = report::parse_periods(j.at("periods").at("geo").get<std::vector<std::string>>(), "periods.geo");
    c.topic_periods = report::parse_periods(j.at("periods").at("topics").get<std::vector<std::string>>(), "periods.topics");
    if (j.contains("taxon_blocklist"))
      for (const auto& s : j.at("taxon_blocklist").get<std::vector<std::string>>()) c.taxon_blocklist.insert(annotate::TaxonLexicon::normalize(s));

    if (j.contains("lda")) {
      const auto& l = j.at("lda");
      detail::only_keys(l, "lda", {"topics", "iterations", "alpha", "beta", "log_stride", "threads", "pmi_threshold",
                                   "presence_cutoff", "top_words", "enrichment"});
      detail::read(l, "topics", c.lda.topics);
      detail::read(l, "iterations", c.lda.iterations);
      if (l.contains("alpha")) c.lda.alpha = l.at("alpha").get<double>();
      detail::read(l, "beta", c.lda.beta);
      detail::read(l, "log_stride", c.lda.log_stride);
      detail::read(l, "threads", c.lda.threads);
      detail::read(l, "pmi_threshold", c.lda.pmi_threshold);
      detail::read(l, "presence_cutoff", c.lda.presence_cutoff);
      detail::read(l, "top_words", c.lda.top_words);
      if (l.contains("enrichment")) c.lda.enrichment = detail::parse_enrichment(l.at("enrichment").get<std::string>());
    }
    if (c.lda.topics.empty()) throw ValidationError("lda.topics must list at least one K");
    for (auto k : c.lda.topics)
      if (k < 2) throw ValidationError("lda.topics: every K must be >= 2");

    if (j.contains("fields")) {
      const auto& f = j.at("fields");
      detail::only_keys(f, "fields", {"model", "seeds", "perplexity", "iterations", "learning_rate", "patience", "tolerance", "theta",
                                      "early_exaggeration", "exaggeration_iterations", "k_min", "k_max", "restarts", "n_init",
                                      "confirm_runs", "quorum", "min_size", "percentile", "permutations", "keywords", "doc_types"});
      auto& e = c.fields.embedding;
      detail::read(f, "model", c.fields.model);
      detail::read(f, "seeds", e.seeds);
      detail::read(f, "perplexity", e.perplexity);
      detail::read(f, "iterations", e.iterations);
      detail::read(f, "learning_rate", e.learning_rate);
      detail::read(f, "patience", e.patience);
      detail::read(f, "tolerance", e.tolerance);
      detail::read(f, "theta", e.theta);
      detail::read(f, "early_exaggeration", e.early_exaggeration);
      detail::read(f, "exaggeration_iterations", e.exaggeration_iterations);
      if (f.contains("k_min")) c.fields.k_min = f.at("k_min").get<std::size_t>();
      if (f.contains("k_max")) c.fields.k_max = f.at("k_max").get<std::size_t>();
      detail::read(f, "restarts", c.fields.cluster.restarts);
      detail::read(f, "n_init", c.fields.cluster.n_init);
      detail::read(f, "confirm_runs", c.fields.cluster.confirm_runs);
      detail::read(f, "quorum", c.fields.cluster.quorum);
      detail::read(f, "min_size", c.fields.cluster.min_size);
      detail::read(f, "percentile", c.fields.percentile);
      detail::read(f, "permutations", c.fields.permutations);
      detail::read(f, "keywords", c.fields.keywords);
      if (f.contains("doc_types")) {
        c.fields.doc_types.clear();
        for (const auto& s : f.at("doc_types").get<std::vector<std::string>>()) c.fields.doc_types.insert(corpus::parse_doc_type(s));
      }
    } else {
      c.fields.embedding.seeds = {1, 2, 3, 4, 5};
    }
    if (c.fields.embedding.seeds.empty()) throw ValidationError("fields.seeds must list at least one seed");
    if (c.fields.embedding.theta > 0.7) throw ValidationError("fields.theta must be <= 0.7");
    if (c.fields.model && std::find(c.lda.topics.begin(), c.lda.topics.end(), c.fields.model) == c.lda.topics.end())
      throw ValidationError("fields.model " + std::to_string(c.fields.model) + " is not in lda.topics");

    if (j.contains("diversity")) {
      const auto& d = j.at("diversity");
      detail::only_keys(d, "diversity", {"iterations", "level", "geo_scale", "taxon_rank", "unit"});
      detail::read(d, "iterations", c.diversity.iterations);
      detail::read(d, "level", c.diversity.level);
      if (d.contains("geo_scale")) c.diversity.geo_scale = diversity::parse_geo_variance_scale(d.at("geo_scale").get<std::string>());
      if (d.contains("taxon_rank")) {
        const auto r = annotate::parse_rank(d.at("taxon_rank").get<std::string>());
        if (!r || !annotate::is_ranked(*r)) throw ValidationError("diversity.taxon_rank must be a named rank");
        c.diversity.taxon_rank = *r;
      }
      if (d.contains("unit")) {
        const auto u = d.at("unit").get<std::string>();
        if (u == "reference") c.diversity.unit = ResamplingUnit::reference;
        else if (u == "article") c.diversity.unit = ResamplingUnit::article;
        else throw ValidationError("diversity.unit must be 'reference' or 'article'");
      }
    }
    if (c.diversity.iterations == 0) throw ValidationError("diversity.iterations must be >= 1");
    if (!(c.diversity.level > 0.0 && c.diversity.level < 1.0)) throw ValidationError("diversity.level must be in (0, 1)");

    if (j.contains("server")) c.server = j.at("server");
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }

  if (const char* env = std::getenv("CORPOSCOPE_SEED"); env && *env) c.seed = detail::parse_seed(env, "CORPOSCOPE_SEED");
  if (seed_override) c.seed = *seed_override;
  if (const char* env = std::getenv("CORPOSCOPE_OUTPUT_DIR"); env && *env) c.output_dir = env;
  if (c.output_dir.empty()) throw ValidationError("config: no output_dir (set it or CORPOSCOPE_OUTPUT_DIR)");

  for (const auto& [name, p] : c.inputs)
    if (!fs::is_regular_file(p)) throw ValidationError("input '" + name + "' not found: " + p.string());
  return c;
}

// ---------------------------------------------------------------------------
// Stages

using Outputs = std::map<std::string, std::string>; // relative path -> content

struct StageContext {
  const PipelineConfig& cfg;
  fs::path dir;
  std::vector<std::string> log;

  void note(std::string line) { log.push_back(std::move(line)); }
};

struct StageDef {
  std::string name;
  std::vector<std::string> deps;
  std::function<json(const PipelineConfig&)> settings; // configuration the stage depends on
  std::function<Outputs(StageContext&)> run;
};

namespace stages {

inline std::string jsonl(const json& j) { return j.dump() + "\n"; }

inline Outputs ingest(StageContext& ctx) {
  const auto& cfg = ctx.cfg;
  const auto manifest = corpus::load_manifest(cfg.inputs.at("manifest"));
  const auto docs = corpus::load_corpus(manifest.corpus);
  if (docs.empty()) throw ValidationError("corpus has no documents");
  std::set<std::string> stopwords;
  if (!manifest.stopwords.empty()) stopwords = corpus::parse_stopwords(text::read_file(manifest.stopwords));

  std::vector<int> years;
  for (const auto& d : docs) years.push_back(d.year);
  try {
    lda::assign_periods(years, cfg.geo_periods);
  } catch (const ValidationError& e) {
    throw ValidationError(std::string("periods.geo: ") + e.what());
  }
  try {
    lda::assign_periods(years, cfg.topic_periods);
  } catch (const ValidationError& e) {
    throw ValidationError(std::string("periods.topics: ") + e.what());
  }

  Csv audit({"doc_id", "headers_removed", "detection_score", "cut_page", "cut_line", "overridden"});
  std::string pages;
  std::vector<corpus::TokenStream> streams;
  std::size_t page_count = 0;
  for (const auto& d : docs) {
    std::optional<corpus::BibliographyCut> override_cut;
    if (const auto it = manifest.bibliography_overrides.find(d.doc_id); it != manifest.bibliography_overrides.end())
      override_cut = it->second;
    const auto s = corpus::strip_front_back_matter(d, manifest.strip, override_cut);
    const auto& a = s.audit;
    audit.row({a.doc_id, num(a.headers_removed), num(a.detection_score), a.cut ? num(a.cut->page_index) : "",
               a.cut ? num(a.cut->line_index) : "", a.overridden ? "1" : "0"});
    for (const auto& p : s.document.pages) {
      pages += jsonl({{"doc_id", p.doc_id}, {"page_index", p.page_index}, {"text", p.text}});
      streams.push_back(corpus::tokenize(p));
      ++page_count;
    }
  }
  auto phrased = corpus::extract_phrases(std::move(streams), manifest.phrases);
  auto vocab = corpus::build_vocabulary(std::move(phrased.streams), stopwords, manifest.page_limit);

  std::map<std::string, std::size_t> doc_tokens;
  std::string tokens;
  std::size_t total_tokens = 0;
  for (const auto& s : vocab.streams) {
    doc_tokens[s.doc_id] += s.tokens.size();
    total_tokens += s.tokens.size();
    tokens += jsonl({{"doc_id", s.doc_id}, {"page_index", s.page_index}, {"tokens", s.tokens}});
  }
  json documents = json::array();
  for (const auto& d : docs) {
    artifacts::DocMeta m{d.doc_id, d.year, d.doc_type, d.author_ids, d.pages.size(), doc_tokens[d.doc_id]};
    documents.push_back(artifacts::to_json(m));
  }
  std::string vocabulary;
  for (std::size_t i = 0; i < vocab.vocabulary.size(); ++i)
    vocabulary += vocab.vocabulary.term(i) + "\t" + num(vocab.vocabulary.page_frequency(i)) + "\t" +
                  num(vocab.vocabulary.corpus_count(i)) + "\n";
  std::string phrases;
  for (const auto& p : phrased.table.phrases) phrases += p + "\n";

  Csv citations({"doc_id", "cited_doc_id"});
  std::size_t citation_count = 0;
  if (cfg.inputs.count("citations")) {
    std::set<std::string> ids;
    for (const auto& d : docs) ids.insert(d.doc_id);
    const auto lines = text::split_lines(text::read_file(cfg.inputs.at("citations")));
    for (std::size_t ln = 0; ln < lines.size(); ++ln) {
      if (text::trim(lines[ln]).empty()) continue;
      const auto f = text::split_csv(lines[ln]);
      if (ln == 0 && !f.empty() && text::trim(f[0]) == "doc_id") continue;
      const std::string where = "citations row " + std::to_string(ln + 1);
      if (f.size() != 2) throw ValidationError(where + ": expected 2 comma-separated fields");
      const std::string from(text::trim(f[0])), to(text::trim(f[1]));
      for (const auto& id : {from, to})
        if (!ids.count(id)) throw ValidationError(where + ": unknown document '" + id + "'");
      citations.row({from, to});
      ++citation_count;
    }
  }

  ctx.note(num(docs.size()) + " documents, " + num(page_count) + " pages, " + num(vocab.vocabulary.size()) + " terms, " +
           num(total_tokens) + " tokens, " + num(phrased.table.phrases.size()) + " phrases, " + num(citation_count) + " citations");
  return {{artifacts::path::documents, artifacts::dump(documents)},
          {artifacts::path::pages, pages},
          {artifacts::path::tokens, tokens},
          {artifacts::path::vocabulary, vocabulary},
          {artifacts::path::phrases, phrases},
          {artifacts::path::strip_audit, audit.str()},
          {artifacts::path::citations, citations.str()}};
}

inline Outputs annotate(StageContext& ctx) {
  const auto& cfg = ctx.cfg;
  const std::string taxonomy_text = text::read_file(cfg.inputs.at("taxonomy"));
  const auto tree = annotate::parse_taxonomy(taxonomy_text);
  const auto lexicon = annotate::parse_lexicon(text::read_file(cfg.inputs.at("lexicon")));
  lexicon.validate(tree);

  std::vector<annotate::TaxonMention> mentions;
  for (const auto& page : artifacts::load_pages(ctx.dir)) {
    auto m = annotate::match_taxa(page, lexicon, cfg.taxon_blocklist);
    mentions.insert(mentions.end(), m.begin(), m.end());
  }
  Csv mention_csv({"doc_id", "page_index", "begin", "end", "surface", "taxon_id"});
  for (const auto& m : mentions) mention_csv.row({m.doc_id, num(m.page_index), num(m.begin), num(m.end), m.surface, m.taxon_id});

  Csv counts({"taxon_id", "name", "rank", "division", "mentions", "pages", "articles"});
  for (const auto& [id, c] : annotate::count_taxa(mentions)) {
    const auto& n = tree.node(id);
    counts.row({id, n.name, std::string(annotate::to_string(n.rank)), n.division, num(c.mentions), num(c.pages), num(c.articles)});
  }

  std::set<std::string> ids;
  for (const auto& d : artifacts::load_documents(ctx.dir)) ids.insert(d.doc_id);
  const auto gazetteer = annotate::parse_gazetteer(text::read_file(cfg.inputs.at("gazetteer")));
  const auto annotations = annotate::parse_geo_annotations(text::read_file(cfg.inputs.at("geo_annotations")));
  for (const auto& a : annotations)
    if (!ids.count(a.doc_id)) throw ValidationError("geo annotation for unknown document '" + a.doc_id + "'");
  const auto tagged = annotate::tag_locations(annotations, gazetteer, true);
  Csv tags({"doc_id", "role", "uri", "lat", "lon", "country"});
  for (const auto& t : tagged.tags)
    tags.row({t.doc_id, std::string(annotate::to_string(t.role)), t.uri, num(t.position.lat), num(t.position.lon), t.country_code});

  ctx.note(num(mentions.size()) + " taxon mentions, " + num(tagged.tags.size()) + " geo tags");
  return {{artifacts::path::mentions, mention_csv.str()},
          {artifacts::path::taxon_counts, counts.str()},
          {artifacts::path::geo_tags, tags.str()},
          {artifacts::path::taxonomy, taxonomy_text}};
}

inline std::vector<std::string> topic_columns(std::size_t k) {
  std::vector<std::string> cols;
  for (std::size_t t = 0; t < k; ++t) cols.push_back("t" + std::to_string(t));
  return cols;
}

inline Outputs lda(StageContext& ctx) {
  const auto& cfg = ctx.cfg;
  const auto docs = artifacts::load_documents(ctx.dir);
  const auto vocab = artifacts::load_vocabulary(ctx.dir);
  const auto corpus = lda::make_lda_corpus(artifacts::load_tokens(ctx.dir), vocab);
  std::map<std::string, int> years;
  for (const auto& d : docs) years.emplace(d.doc_id, d.year);

  Outputs out;
  for (const auto K : cfg.lda.topics) {
    lda::LdaConfig lc;
    lc.topics = K;
    lc.iterations = cfg.lda.iterations;
    lc.alpha = cfg.lda.alpha;
    lc.beta = cfg.lda.beta;
    lc.seed = derive_seed(cfg.seed, 0x1DA, K);
    lc.log_stride = cfg.lda.log_stride;
    lc.threads = cfg.lda.threads;
    const auto s = lda::fit_lda(corpus, lc);

    Csv sweeps({"sweep", "reassigned_fraction"});
    for (const auto& l : s.log) sweeps.row({num(l.sweep), num(l.reassigned_fraction)});

    const auto theta = lda::doc_theta(s);
    const auto tokens = lda::doc_token_counts(s);
    auto header = topic_columns(K);
    header.insert(header.begin(), {"doc_id", "tokens"});
    Csv doc_csv(header);
    for (std::size_t d = 0; d < s.doc_ids.size(); ++d) {
      std::vector<std::string> row{s.doc_ids[d], num(tokens[d])};
      for (double v : theta[d]) row.push_back(num(v));
      doc_csv.row(row);
    }
    header[1] = "page_index";
    Csv page_csv(header);
    const auto ptheta = lda::page_theta(s);
    for (std::size_t p = 0; p < s.pages(); ++p) {
      std::vector<std::string> row{s.doc_ids[s.page_doc[p]], num(s.page_index[p])};
      for (double v : ptheta[p]) row.push_back(num(v));
      page_csv.row(row);
    }

    const auto enrichment = lda::topic_enrichment(s, years, cfg.topic_periods, cfg.lda.enrichment, cfg.lda.presence_cutoff);
    Csv enrich({"topic", "period", "enrichment"});
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t p = 0; p < cfg.topic_periods.size(); ++p) enrich.row({num(k), cfg.topic_periods[p].label(), num(enrichment[k][p])});

    std::vector<int> doc_years;
    for (const auto& id : s.doc_ids) doc_years.push_back(years.at(id));
    const auto period_of = lda::assign_periods(doc_years, cfg.topic_periods);
    std::vector<std::size_t> pdocs(cfg.topic_periods.size(), 0), ptokens(cfg.topic_periods.size(), 0);
    for (std::size_t d = 0; d < s.doc_ids.size(); ++d) {
      ++pdocs[period_of[d]];
      ptokens[period_of[d]] += tokens[d];
    }
    Csv weights({"period", "documents", "tokens"});
    for (std::size_t p = 0; p < cfg.topic_periods.size(); ++p) weights.row({cfg.topic_periods[p].label(), num(pdocs[p]), num(ptokens[p])});

    json topics = json::array();
    for (std::size_t k = 0; k < K; ++k) {
      json words = json::array();
      for (const auto& w : lda::topic_top_words(s, vocab.terms(), k, cfg.lda.top_words))
        words.push_back({{"word", w.word}, {"probability", w.probability}});
      json t = {{"topic", k}, {"top_words", words}};
      t["label"] = report::topic_label(t);
      topics.push_back(t);
    }
    const json model = {{"model", K},
                        {"alpha", s.alpha},
                        {"beta", s.beta},
                        {"iterations", lc.iterations},
                        {"seed", lc.seed},
                        {"threads", lc.threads},
                        {"tokens", s.tokens()},
                        {"pages", s.pages()},
                        {"vocabulary", s.vocabulary_size},
                        {"enrichment_mode", detail::to_string(cfg.lda.enrichment)},
                        {"warnings", s.warnings},
                        {"topics", topics}};

    const auto graph = lda::topic_pmi_graph(s, cfg.lda.pmi_threshold, cfg.lda.presence_cutoff);
    json nodes = json::array(), edges = json::array();
    for (std::size_t k = 0; k < K; ++k) nodes.push_back({{"topic", k}, {"label", topics[k]["label"]}, {"prevalence", graph.prevalence[k]}});
    for (const auto& e : graph.edges) edges.push_back({{"a", e.a}, {"b", e.b}, {"pmi", e.pmi}, {"cooccurrences", e.cooccurrences}});
    const json gj = {{"model", K}, {"threshold", cfg.lda.pmi_threshold}, {"presence_cutoff", cfg.lda.presence_cutoff},
                     {"nodes", nodes}, {"edges", edges}};

    out[artifacts::path::lda_file(K, "sweeps.csv")] = sweeps.str();
    out[artifacts::path::lda_file(K, "topics.json")] = artifacts::dump(model);
    out[artifacts::path::lda_file(K, "doc_theta.csv")] = doc_csv.str();
    out[artifacts::path::lda_file(K, "page_theta.csv")] = page_csv.str();
    out[artifacts::path::lda_file(K, "enrichment.csv")] = enrich.str();
    out[artifacts::path::lda_file(K, "period_weights.csv")] = weights.str();
    out[artifacts::path::lda_file(K, "topic_graph.json")] = artifacts::dump(gj);
    ctx.note("K=" + num(K) + ": " + num(lc.iterations) + " sweeps, final reassigned fraction " +
             num(s.log.empty() ? 0.0 : s.log.back().reassigned_fraction) + ", " + num(graph.edges.size()) + " PMI edges");
    for (const auto& w : s.warnings) ctx.note("K=" + num(K) + " warning: " + w);
  }
  return out;
}

inline json envelope_json(const fields::Envelope& e) {
  return {{"observed", e.observed}, {"low", e.low}, {"high", e.high}, {"outside", e.outside}};
}

inline Outputs fields(StageContext& ctx) {
  const auto& cfg = ctx.cfg;
  const std::size_t K = cfg.field_model();
  const auto docs = artifacts::load_documents(ctx.dir);
  std::map<std::string, const artifacts::DocMeta*> meta;
  for (const auto& d : docs) meta.emplace(d.doc_id, &d);
  const auto theta = artifacts::load_doc_theta(ctx.dir, K);

  std::vector<std::string> ids;
  std::vector<std::vector<double>> thetas;
  std::vector<int> years;
  for (std::size_t i = 0; i < theta.doc_ids.size(); ++i) {
    const auto* m = meta.at(theta.doc_ids[i]);
    if (!cfg.fields.doc_types.count(m->doc_type)) continue;
    ids.push_back(m->doc_id);
    thetas.push_back(theta.theta[i]);
    years.push_back(m->year);
  }
  const std::size_t n = ids.size();
  if (n < 4) throw ValidationError("fields: need at least 4 documents of the selected types, have " + num(n));

  auto ecfg = cfg.fields.embedding;
  for (auto& s : ecfg.seeds) s = derive_seed(cfg.seed, 0x75E, s);
  const auto emb = tsne::embed_tsne(ids, thetas, ecfg);

  auto [k_min, k_max] = fields::default_k_range(n);
  if (cfg.fields.k_min) k_min = *cfg.fields.k_min;
  if (cfg.fields.k_max) k_max = *cfg.fields.k_max;
  k_max = std::min(k_max, n - 1);
  if (k_min > k_max) throw ValidationError("fields: empty k range [" + num(k_min) + ", " + num(k_max) + "]");
  const auto sel = fields::select_k(emb, k_min, k_max, derive_seed(cfg.seed, 0x5E1), cfg.fields.cluster);
  const auto model = fields::robust_cluster(emb, sel.k, derive_seed(cfg.seed, 0xC1), cfg.fields.cluster);

  Csv embedding({"doc_id", "x", "y", "field"});
  for (std::size_t i = 0; i < n; ++i) embedding.row({ids[i], num(emb.coords[i][0]), num(emb.coords[i][1]), num(model.assignment[i])});

  json runs = json::array();
  for (const auto& r : emb.runs) {
    json log = json::array();
    for (const auto& p : r.kl_log) log.push_back({p.iteration, p.kl});
    runs.push_back({{"seed", r.seed}, {"iterations_run", r.iterations_run}, {"initial_kl", r.initial_kl()},
                    {"final_kl", r.final_kl()}, {"kl_log", log}});
  }
  const json runs_json = {{"model", K}, {"documents", n}, {"perplexity", emb.perplexity}, {"jittered", emb.jittered},
                          {"selected_seed", emb.seed}, {"kl", emb.kl}, {"runs", runs}};

  Csv kcsv({"k", "mean_rss", "objective", "selected"});
  for (const auto& s : sel.scores) kcsv.row({num(s.k), num(s.mean_rss), num(s.objective), s.k == sel.k ? "1" : "0"});

  const auto members = model.members();
  const auto centroids = fields::field_centroids(model, thetas);
  const auto keywords = fields::field_keywords(model, fields::doc_term_sets(ids, artifacts::load_tokens(ctx.dir)), cfg.fields.keywords);

  json graph_json = {{"percentile", cfg.fields.percentile}, {"nodes", json::array()}, {"edges", json::array()}, {"path_lengths", json::array()}};
  if (model.field_count >= 2) {
    const auto g = fields::build_field_graph(model, emb.coords, cfg.fields.percentile, derive_seed(cfg.seed, 0xF1E));
    graph_json["cutoff"] = g.cutoff;
    graph_json["reference_distance"] = g.reference_distance;
    graph_json["layout_seed"] = g.layout_seed;
    for (std::size_t f = 0; f < g.field_count; ++f)
      graph_json["nodes"].push_back({{"field", f}, {"size", members[f].size()}, {"x", g.layout[f][0]}, {"y", g.layout[f][1]}});
    for (const auto& e : g.edges)
      graph_json["edges"].push_back({{"a", e.a}, {"b", e.b}, {"distance", e.distance},
                                     {"log_inverse_distance", e.log_inverse_distance}, {"weight", e.weight}});
    graph_json["path_lengths"] = fields::field_path_lengths(g);
  } else if (model.field_count == 1) {
    graph_json["nodes"].push_back({{"field", 0}, {"size", members[0].size()}, {"x", 0.5}, {"y", 0.5}});
    graph_json["path_lengths"] = json::array({json::array({0.0})});
  }

  Csv temporal({"field", "year", "count", "density", "delta"});
  json perm_json = {{"permutations", cfg.fields.permutations}, {"seed", derive_seed(cfg.seed, 0xBE)}, {"years", json::array()},
                    {"variance", json::array()}, {"mean", json::array()}, {"half_life_variance", nullptr}};
  std::optional<fields::TemporalBias> bias;
  if (model.field_count >= 1) {
    bias = fields::temporal_bias(model, years);
    for (std::size_t f = 0; f < bias->fields.size(); ++f) {
      const auto& s = bias->fields[f];
      const auto dy = bias->delta_years();
      for (std::size_t t = 0; t < dy.size(); ++t) {
        const bool in_span = t < s.counts.size();
        temporal.row({num(f), num(dy[t]), in_span ? num(s.counts[t]) : "", in_span ? num(s.density[t]) : "", num(s.delta[t])});
      }
    }
    const auto perm = fields::permutation_test(*bias, cfg.fields.permutations, derive_seed(cfg.seed, 0xBE));
    perm_json["years"] = bias->delta_years();
    for (const auto& e : perm.variance) perm_json["variance"].push_back(envelope_json(e));
    for (const auto& e : perm.mean) perm_json["mean"].push_back(envelope_json(e));
    perm_json["half_life_variance"] = envelope_json(perm.half_life_variance);
  }

  json field_list = json::array();
  for (std::size_t f = 0; f < model.field_count; ++f) {
    json mem = json::array(), kw = json::array();
    for (auto i : members[f]) mem.push_back(ids[i]);
    for (const auto& k : keywords[f])
      kw.push_back({{"term", k.term}, {"chi2", k.chi2}, {"in_docs", k.in_docs}, {"in_fraction", k.in_fraction}, {"out_docs", k.out_docs}});
    json entry = {{"field", f}, {"size", members[f].size()}, {"members", mem}, {"centroid", centroids[f]}, {"keywords", kw}};
    entry["half_life"] = bias->fields[f].half_life;
    entry["delta"] = bias->fields[f].delta;
    field_list.push_back(entry);
  }
  json fields_json = {{"model", K},
                      {"documents", n},
                      {"doc_types", json::array()},
                      {"k", sel.k},
                      {"field_count", model.field_count},
                      {"assigned", model.assigned_count()},
                      {"cluster", {{"restarts", cfg.fields.cluster.restarts}, {"n_init", cfg.fields.cluster.n_init},
                                   {"confirm_runs", cfg.fields.cluster.confirm_runs}, {"quorum", cfg.fields.cluster.quorum},
                                   {"min_size", cfg.fields.cluster.min_size}}},
                      {"r2", model.assigned_count() ? json(fields::field_r2(model, thetas)) : json(nullptr)},
                      {"baseline", fields::prediction_baseline(model, thetas)},
                      {"first_year", bias ? json(bias->first_year) : json(nullptr)},
                      {"last_year", bias ? json(bias->last_year) : json(nullptr)},
                      {"fields", field_list}};
  for (auto t : cfg.fields.doc_types) fields_json["doc_types"].push_back(corpus::to_string(t));
  if (fields_json["r2"].is_number() && !std::isfinite(fields_json["r2"].get<double>())) fields_json["r2"] = nullptr;

  ctx.note("model K=" + num(K) + ", " + num(n) + " documents, KL " + num(emb.kl) + " (seed " + std::to_string(emb.seed) + "), k=" +
           num(sel.k) + ", " + num(model.field_count) + " fields, " + num(model.assigned_count()) + " assigned");
  return {{artifacts::path::embedding, embedding.str()},
          {artifacts::path::embedding_runs, artifacts::dump(runs_json)},
          {artifacts::path::k_selection, kcsv.str()},
          {artifacts::path::fields, artifacts::dump(fields_json)},
          {artifacts::path::field_graph, artifacts::dump(graph_json)},
          {artifacts::path::temporal, temporal.str()},
          {artifacts::path::permutation, artifacts::dump(perm_json)}};
}

// Observations grouped into resampling units: one per reference, or all
// references of one article together.
template <typename T>
std::vector<std::vector<T>> resampling_units(const std::vector<std::pair<std::string, T>>& refs, ResamplingUnit unit) {
  std::vector<std::vector<T>> out;
  if (unit == ResamplingUnit::reference) {
    for (const auto& [_, v] : refs) out.push_back({v});
    return out;
  }
  std::map<std::string, std::vector<T>> by_doc;
  for (const auto& [doc, v] : refs) by_doc[doc].push_back(v);
  for (auto& [_, v] : by_doc) out.push_back(std::move(v));
  return out;
}

template <typename T>
std::vector<T> flatten(std::span<const std::vector<T>> units) {
  std::vector<T> out;
  for (const auto& u : units) out.insert(out.end(), u.begin(), u.end());
  return out;
}

inline Outputs diversity(StageContext& ctx) {
  const auto& cfg = ctx.cfg;
  const auto& dc = cfg.diversity;
  const auto docs = artifacts::load_documents(ctx.dir);
  const auto geo_period = report::doc_periods(docs, cfg.geo_periods);
  const auto topic_period = report::doc_periods(docs, cfg.topic_periods);
  const auto tags = artifacts::load_geo_tags(ctx.dir);
  const auto mentions = artifacts::load_mentions(ctx.dir);
  const auto tree = annotate::parse_taxonomy(text::read_file(ctx.dir / artifacts::path::taxonomy));

  Csv csv({"metric", "period", "role", "value", "ci_low", "ci_high", "iterations", "seed"});
  std::size_t row_index = 0, written = 0, skipped = 0;
  auto options = [&] {
    return diversity::BootstrapOptions{dc.iterations, dc.level, derive_seed(cfg.seed, 0xD1, row_index++)};
  };
  auto emit = [&](const std::optional<diversity::DiversityEstimate>& e, const std::string& period, const std::string& role) {
    if (!e) {
      ++skipped;
      return;
    }
    csv.row({e->metric, period, role, num(e->value), num(e->ci_low), num(e->ci_high), num(e->iterations), std::to_string(e->seed)});
    ++written;
  };
  // At least two observations are needed for any of the indices.
  auto labelled = [&](const std::vector<std::pair<std::string, std::string>>& refs, const std::string& name, auto metric) {
    const auto opts = options();
    if (refs.size() < 2) return std::optional<diversity::DiversityEstimate>{};
    const auto units = resampling_units(refs, dc.unit);
    auto wrapped = [&](std::span<const std::vector<std::string>> s) {
      const auto flat = flatten(s);
      return metric(std::span<const std::string>(flat));
    };
    return std::optional(diversity::bootstrap_ci(units, wrapped, opts, name));
  };

  for (std::size_t p = 0; p < cfg.geo_periods.size(); ++p) {
    for (auto role : {annotate::GeoRole::content, annotate::GeoRole::author}) {
      std::vector<std::pair<std::string, std::string>> countries;
      std::vector<std::pair<std::string, annotate::LatLon>> points;
      for (const auto& t : tags) {
        if (t.role != role || geo_period.at(t.doc_id) != p) continue;
        countries.emplace_back(t.doc_id, t.country_code);
        points.emplace_back(t.doc_id, t.position);
      }
      const auto label = cfg.geo_periods[p].label();
      const std::string r(annotate::to_string(role));
      emit(labelled(countries, "shannon", diversity::shannon_of), label, r);
      emit(labelled(countries, "simpson", diversity::simpson_of), label, r);
      const auto opts = options();
      if (points.size() < 2) {
        emit(std::nullopt, label, r);
        continue;
      }
      const auto units = resampling_units(points, dc.unit);
      auto metric = [&](std::span<const std::vector<annotate::LatLon>> s) {
        diversity::GeoPointSet set;
        for (const auto& u : s)
          for (const auto& pt : u) set.add(pt);
        return diversity::geo_proximal(set, dc.geo_scale);
      };
      emit(diversity::bootstrap_ci(units, metric, opts, "geo_proximal"), label, r);
    }
  }

  // Field weights from the stored path lengths.
  const auto graph = artifacts::read_json(ctx.dir / artifacts::path::field_graph);
  const auto lengths = graph.at("path_lengths").get<std::vector<std::vector<double>>>();
  std::map<std::string, int> field_of;
  for (const auto& e : artifacts::load_embedding(ctx.dir)) field_of.emplace(e.doc_id, e.field);

  for (std::size_t p = 0; p < cfg.topic_periods.size(); ++p) {
    const auto label = cfg.topic_periods[p].label();
    std::vector<std::pair<std::string, std::string>> ranked, taxa;
    for (const auto& m : mentions) {
      if (topic_period.at(m.doc_id) != p) continue;
      taxa.emplace_back(m.doc_id, m.taxon_id);
      if (const auto a = annotate::ancestor_at_rank(m.taxon_id, dc.taxon_rank, tree)) ranked.emplace_back(m.doc_id, *a);
    }
    const std::string rank(annotate::to_string(dc.taxon_rank));
    emit(labelled(ranked, "taxon_shannon." + rank, diversity::shannon_of), label, "all");
    emit(labelled(ranked, "taxon_simpson." + rank, diversity::simpson_of), label, "all");
    std::set<std::string> present;
    for (const auto& [_, t] : taxa) present.insert(t);
    const auto weights = diversity::tree_path_weights(tree, std::vector<std::string>(present.begin(), present.end()));
    emit(labelled(taxa, "taxonomic_distinctness",
                  [&weights](std::span<const std::string> s) {
                    return diversity::weighted_diversity(diversity::AbundanceVector::from_observations(s), weights);
                  }),
         label, "all");

    const auto opts = options();
    if (lengths.empty()) {
      emit(std::nullopt, label, "all");
      continue;
    }
    std::vector<std::size_t> article_fields;
    for (const auto& d : docs) {
      if (topic_period.at(d.doc_id) != p) continue;
      const auto it = field_of.find(d.doc_id);
      if (it != field_of.end() && it->second >= 0) article_fields.push_back(static_cast<std::size_t>(it->second));
    }
    emit(fields::field_diversity(fields::field_pair_weights(lengths), article_fields, opts), label, "all");
  }
  ctx.note(num(written) + " diversity estimates, " + num(skipped) + " skipped for too few observations");
  return {{artifacts::path::diversity, csv.str()}};
}

// ---- reports

inline std::vector<std::string> period_labels(const std::vector<lda::Period>& periods) {
  std::vector<std::string> out;
  for (const auto& p : periods) out.push_back(p.label());
  return out;
}

inline Outputs report_geo(StageContext& ctx) {
  const auto& cfg = ctx.cfg;
  const auto rows = report::geo_counts(artifacts::load_documents(ctx.dir), artifacts::load_geo_tags(ctx.dir), cfg.geo_periods);
  const auto labels = period_labels(cfg.geo_periods);
  std::vector<report::Series> series;
  for (const char* role : {"content", "author"}) {
    report::Series s{std::string("countries (") + role + ")", std::vector<double>(labels.size(), 0.0), {}, {}};
    for (const auto& r : rows)
      if (r.role == role) s.values[static_cast<std::size_t>(std::find(labels.begin(), labels.end(), r.period) - labels.begin())] += 1.0;
    series.push_back(std::move(s));
  }
  ctx.note(num(rows.size()) + " geo rows");
  return {{"report/geo.csv", report::geo_csv(rows)},
          {"report/geo.svg", report::svg_line_chart("Distinct countries per period", labels, series)}};
}

inline Outputs report_taxa(StageContext& ctx) {
  const auto& cfg = ctx.cfg;
  const auto tree = annotate::parse_taxonomy(text::read_file(ctx.dir / artifacts::path::taxonomy));
  const auto rows = report::taxon_shares(artifacts::load_documents(ctx.dir), artifacts::load_mentions(ctx.dir), tree,
                                         cfg.topic_periods, cfg.diversity.taxon_rank);
  const auto labels = period_labels(cfg.topic_periods);
  std::map<std::string, report::Series> by_taxon;
  for (const auto& r : rows) {
    auto& s = by_taxon[r.name];
    if (s.values.empty()) s = {r.name, std::vector<double>(labels.size(), 0.0), {}, {}};
    s.values[static_cast<std::size_t>(std::find(labels.begin(), labels.end(), r.period) - labels.begin())] = r.percent;
  }
  std::vector<report::Series> series;
  for (auto& [_, s] : by_taxon) series.push_back(std::move(s));
  ctx.note(num(rows.size()) + " taxon rows");
  return {{"report/taxa.csv", report::taxa_csv(rows)},
          {"report/taxa.svg", report::svg_line_chart("Articles mentioning each " + std::string(annotate::to_string(cfg.diversity.taxon_rank)) + " (%)",
                                                      labels, series)}};
}

inline Outputs report_topics(StageContext& ctx) {
  const auto& cfg = ctx.cfg;
  const auto docs = artifacts::load_documents(ctx.dir);
  const auto labels = period_labels(cfg.topic_periods);
  std::vector<report::TopicPeriod> rows;
  Outputs out;
  for (auto K : cfg.lda.topics) {
    const auto r = report::topic_periods(ctx.dir, K, docs, cfg.topic_periods);
    std::vector<report::Series> series;
    for (std::size_t k = 0; k < K; ++k) {
      report::Series s{num(k) + " " + r[k * labels.size()].label, {}, {}, {}};
      for (std::size_t p = 0; p < labels.size(); ++p) s.values.push_back(r[k * labels.size() + p].enrichment);
      series.push_back(std::move(s));
    }
    out["report/topics_k" + num(K) + ".svg"] = report::svg_line_chart("Topic enrichment by period (K=" + num(K) + ")", labels, series);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  out["report/topics.csv"] = report::topics_csv(rows);
  ctx.note(num(rows.size()) + " topic rows");
  return out;
}

inline Outputs report_fields(StageContext& ctx) {
  const auto rows = report::bias_series(artifacts::read_json(ctx.dir / artifacts::path::permutation));
  std::vector<std::string> labels;
  report::Series var{"variance of delta", {}, {}, {}}, mean{"mean of delta", {}, {}, {}};
  for (const auto& r : rows) {
    labels.push_back(num(r.year));
    var.values.push_back(r.variance);
    var.low.push_back(r.variance_low);
    var.high.push_back(r.variance_high);
    mean.values.push_back(r.mean);
    mean.low.push_back(r.mean_low);
    mean.high.push_back(r.mean_high);
  }
  ctx.note(num(rows.size()) + " temporal-bias rows");
  return {{"report/fields.csv", report::fields_csv(rows)},
          {"report/fields.svg", report::svg_line_chart("Temporal bias across fields with 95% permutation envelope", labels, {var, mean})}};
}

inline Outputs report_diversity(StageContext& ctx) {
  const auto rows = report::diversity_rows(artifacts::read_csv(ctx.dir / artifacts::path::diversity));
  std::vector<std::string> labels;
  std::map<std::string, std::map<std::string, const report::DiversityRow*>> by_metric;
  for (const auto& r : rows) {
    if (std::find(labels.begin(), labels.end(), r.period) == labels.end()) labels.push_back(r.period);
    by_metric[r.metric][r.period] = &r;
  }
  std::sort(labels.begin(), labels.end());
  Outputs out;
  for (const auto& [metric, cells] : by_metric) {
    report::Series s{metric, {}, {}, {}};
    std::vector<std::string> xs;
    for (const auto& [period, r] : cells) {
      xs.push_back(period);
      s.values.push_back(r->value);
      s.low.push_back(r->ci_low);
      s.high.push_back(r->ci_high);
    }
    out["report/diversity_" + metric + ".svg"] = report::svg_line_chart(metric + " with bootstrap interval", xs, {s});
  }
  out["report/diversity.csv"] = report::diversity_csv(rows);
  ctx.note(num(rows.size()) + " diversity rows");
  return out;
}

// Per-model author vectors (token-weighted sums of document mixtures,
// normalized) and the document index used by the server.
inline Outputs serve_export(StageContext& ctx) {
  const auto& cfg = ctx.cfg;
  const auto docs = artifacts::load_documents(ctx.dir);
  const auto geo_period = report::doc_periods(docs, cfg.geo_periods);
  const auto topic_period = report::doc_periods(docs, cfg.topic_periods);
  std::map<std::string, int> field_of;
  for (const auto& e : artifacts::load_embedding(ctx.dir)) field_of.emplace(e.doc_id, e.field);

  json documents = json::array();
  std::map<std::string, std::vector<std::string>> author_docs;
  for (const auto& d : docs) {
    const auto f = field_of.find(d.doc_id);
    documents.push_back({{"doc_id", d.doc_id},
                         {"year", d.year},
                         {"doc_type", corpus::to_string(d.doc_type)},
                         {"authors", d.authors},
                         {"field", f == field_of.end() ? json(nullptr) : json(f->second)},
                         {"geo_period", cfg.geo_periods[geo_period.at(d.doc_id)].label()},
                         {"topic_period", cfg.topic_periods[topic_period.at(d.doc_id)].label()}});
    for (const auto& a : d.authors) author_docs[a].push_back(d.doc_id);
  }

  json models = json::object();
  for (auto K : cfg.lda.topics) {
    const auto theta = artifacts::load_doc_theta(ctx.dir, K);
    std::map<std::string, std::size_t> row;
    for (std::size_t i = 0; i < theta.doc_ids.size(); ++i) row.emplace(theta.doc_ids[i], i);
    std::vector<std::string> names;
    std::vector<std::vector<double>> vecs;
    for (const auto& [author, ids] : author_docs) {
      std::vector<double> v(K, 0.0);
      double total = 0.0;
      for (const auto& id : ids) {
        const auto it = row.find(id);
        if (it == row.end()) continue;
        const double w = static_cast<double>(theta.tokens[it->second]);
        for (std::size_t k = 0; k < K; ++k) v[k] += w * theta.theta[it->second][k];
        total += w;
      }
      if (!(total > 0.0)) continue;
      for (auto& x : v) x /= total;
      names.push_back(author);
      vecs.push_back(std::move(v));
    }
    json authors = json::object();
    for (std::size_t a = 0; a < names.size(); ++a) {
      std::vector<std::pair<double, std::string>> sims;
      for (std::size_t b = 0; b < names.size(); ++b)
        if (a != b) sims.emplace_back(1.0 - fields::cosine_distance(vecs[a], vecs[b]), names[b]);
      std::sort(sims.begin(), sims.end(), [](const auto& x, const auto& y) { return x.first != y.first ? x.first > y.first : x.second < y.second; });
      if (sims.size() > 10) sims.resize(10);
      json nearest = json::array();
      for (const auto& [s, b] : sims) nearest.push_back({{"author", b}, {"similarity", s}});
      authors[names[a]] = {{"topic_mixture", vecs[a]}, {"nearest", nearest}};
    }
    models[num(K)] = authors;
  }
  json author_index = json::object();
  for (const auto& [a, ids] : author_docs) author_index[a] = ids;

  const json index = {{"documents", documents}, {"author_documents", author_index}, {"author_vectors", models}};
  ctx.note(num(docs.size()) + " documents, " + num(author_docs.size()) + " authors indexed");
  return {{artifacts::path::api_index, artifacts::dump(index)}};
}

} // namespace stages

inline json slice(const json& raw, std::initializer_list<const char*> keys) {
  json out = json::object();
  for (auto k : keys)
    if (raw.contains(k)) out[k] = raw.at(k);
  return out;
}

inline const std::vector<StageDef>& stage_table() {
  static const std::vector<StageDef> table{
      {"ingest", {}, [](const PipelineConfig& c) { return slice(c.raw, {"periods"}); }, stages::ingest},
      {"annotate", {"ingest"}, [](const PipelineConfig& c) { return slice(c.raw, {"taxon_blocklist"}); }, stages::annotate},
      {"lda", {"ingest"},
       [](const PipelineConfig& c) {
         auto s = slice(c.raw, {"lda", "periods"});
         s["seed"] = c.seed;
         s["threads"] = c.lda.threads;
         return s;
       },
       stages::lda},
      {"fields", {"ingest", "lda"},
       [](const PipelineConfig& c) {
         auto s = slice(c.raw, {"fields"});
         s["seed"] = c.seed;
         s["model"] = c.field_model();
         return s;
       },
       stages::fields},
      {"diversity", {"ingest", "annotate", "fields"},
       [](const PipelineConfig& c) {
         auto s = slice(c.raw, {"diversity", "periods"});
         s["seed"] = c.seed;
         return s;
       },
       stages::diversity},
      {"report.geo", {"ingest", "annotate"}, [](const PipelineConfig& c) { return slice(c.raw, {"periods"}); }, stages::report_geo},
      {"report.taxa", {"ingest", "annotate"}, [](const PipelineConfig& c) { return slice(c.raw, {"periods", "diversity"}); },
       stages::report_taxa},
      {"report.topics", {"ingest", "lda"}, [](const PipelineConfig& c) { return slice(c.raw, {"periods", "lda"}); },
       stages::report_topics},
      {"report.fields", {"fields"}, [](const PipelineConfig&) { return json::object(); }, stages::report_fields},
      {"report.diversity", {"diversity"}, [](const PipelineConfig&) { return json::object(); }, stages::report_diversity},
      {"serve-export", {"ingest", "lda", "fields"}, [](const PipelineConfig& c) { return slice(c.raw, {"periods", "lda"}); },
       stages::serve_export},
  };
  return table;
}

inline const StageDef& stage(const std::string& name) {
  for (const auto& s : stage_table())
    if (s.name == name) return s;
  throw ValidationError("unknown stage '" + name + "'");
}

inline std::vector<std::string> report_stages() {
  return {"report.geo", "report.taxa", "report.topics", "report.fields", "report.diversity"};
}

// `targets` plus everything they depend on, in table order.
inline std::vector<std::string> closure(const std::vector<std::string>& targets) {
  std::set<std::string> need;
  std::function<void(const std::string&)> visit = [&](const std::string& n) {
    if (!need.insert(n).second) return;
    for (const auto& d : stage(n).deps) visit(d);
  };
  for (const auto& t : targets) visit(t);
  std::vector<std::string> out;
  for (const auto& s : stage_table())
    if (need.count(s.name)) out.push_back(s.name);
  return out;
}

// Which external inputs feed each stage directly.
inline std::vector<std::string> stage_inputs(const std::string& name) {
  if (name == "ingest") return {"manifest", "corpus", "stopwords", "citations"};
  if (name == "annotate") return {"lexicon", "taxonomy", "gazetteer", "geo_annotations"};
  return {};
}

// ---------------------------------------------------------------------------
// Bundle status

struct BundleStatus {
  bool complete = false;
  std::vector<std::string> problems; // missing stages, missing or modified artifacts
};

inline BundleStatus check_bundle(const fs::path& dir) {
  BundleStatus st;
  const auto bundle_path = dir / artifacts::kBundleFile;
  if (!fs::is_regular_file(bundle_path)) {
    st.problems.push_back(std::string(artifacts::kBundleFile) + " is missing");
    return st;
  }
  json b;
  try {
    b = json::parse(text::read_file(bundle_path));
  } catch (const json::exception& e) {
    st.problems.push_back(std::string(artifacts::kBundleFile) + " is unreadable: " + e.what());
    return st;
  }
  if (fs::exists(dir / artifacts::kFailedMarker)) st.problems.push_back("FAILED marker present: the last run failed");
  const auto& stages = b.value("stages", json::object());
  for (const auto& s : stage_table()) {
    if (!stages.contains(s.name)) {
      st.problems.push_back("stage '" + s.name + "' has not run");
      continue;
    }
    for (const auto& [rel, sha] : stages.at(s.name).at("outputs").items()) {
      const auto p = dir / rel;
      if (!fs::is_regular_file(p)) st.problems.push_back("missing artifact " + rel);
      else if (sha256_file(p) != sha.get<std::string>()) st.problems.push_back("modified artifact " + rel);
    }
    for (const auto& dep : s.deps) {
      if (!stages.contains(dep)) continue;
      const auto& recorded = stages.at(s.name).at("inputs").value("stages", json::object());
      if (!recorded.contains(dep) || recorded.at(dep) != stages.at(dep).at("outputs"))
        st.problems.push_back("stage '" + s.name + "' is stale relative to '" + dep + "'");
    }
  }
  st.complete = st.problems.empty();
  return st;
}

// ---------------------------------------------------------------------------
// Runner

struct RunOptions {
  bool force = false;      // rerun the requested targets even when cached
  bool sequential = false; // single-threaded sampling for bit-identical runs
  std::function<void(const std::string&)> progress = [](const std::string&) {};
};

// Exclusive ownership of an output directory for one run.
class DirectoryLock {
public:
  explicit DirectoryLock(const fs::path& dir) : path_(dir / artifacts::kLockFile) {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
      if (errno == EEXIST)
        throw Error("output directory " + dir.string() + " is locked by another run (" + path_.string() + "); remove it if stale");
      throw Error("cannot create lock " + path_.string() + ": " + std::strerror(errno));
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
  }
  ~DirectoryLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

private:
  fs::path path_;
};

struct StageOutcome {
  std::string name;
  bool skipped = false;
};

class Runner {
public:
  Runner(PipelineConfig cfg, RunOptions opts) : cfg_(std::move(cfg)), opts_(std::move(opts)) {
    if (opts_.sequential) cfg_.lda.threads = 1;
  }

  const PipelineConfig& config() const { return cfg_; }

  // Runs the targets and their dependencies. With `require_deps`, missing
  // dependencies are an error instead of being run.
  std::vector<StageOutcome> run(const std::vector<std::string>& targets, bool require_deps = false) {
    const fs::path dir = cfg_.output_dir;
    fs::create_directories(dir);
    DirectoryLock lock(dir);
    load_bundle(dir);
    const auto inputs = hash_inputs();
    bundle_["bundle_version"] = kBundleVersion;
    bundle_["seed"] = cfg_.seed;
    bundle_["config"] = snapshot();
    bundle_["inputs"] = inputs;
    if (!bundle_.contains("stages")) bundle_["stages"] = json::object();

    const std::set<std::string> forced(targets.begin(), targets.end());
    std::vector<StageOutcome> outcomes;
    auto order = closure(targets);
    if (require_deps) {
      std::vector<std::string> missing;
      for (const auto& name : order) {
        if (forced.count(name)) continue;
        if (!bundle_["stages"].contains(name) || !outputs_intact(dir, bundle_["stages"][name])) missing.push_back(name);
      }
      // The last missing stage in table order pulls in the others.
      if (!missing.empty()) {
        std::vector<std::string> lines;
        for (const auto& name : missing) lines.push_back("stage '" + name + "' has not completed");
        throw ValidationError(text::join(lines, ", ") + "; run `corposcope " + command_for(missing.back()) + "` first");
      }
      std::erase_if(order, [&](const std::string& n) { return !forced.count(n); });
    }
    for (const auto& name : order) {
      const auto& def = stage(name);
      json stage_inputs_json = {{"files", json::object()}, {"stages", json::object()}};
      for (const auto& in : stage_inputs(name))
        if (inputs.contains(in)) stage_inputs_json["files"][in] = inputs.at(in).at("sha256");
      for (const auto& d : def.deps) stage_inputs_json["stages"][d] = bundle_["stages"].at(d).at("outputs");
      const json fp_source = {{"stage", name}, {"bundle_version", kBundleVersion}, {"settings", def.settings(cfg_)}, {"inputs", stage_inputs_json}};
      const std::string fingerprint = sha256_hex(fp_source.dump());

      auto& recorded = bundle_["stages"][name];
      const bool cached = recorded.is_object() && recorded.value("fingerprint", "") == fingerprint && outputs_intact(dir, recorded);
      if (cached && !(opts_.force && forced.count(name))) {
        opts_.progress(name + ": up to date, skipped");
        outcomes.push_back({name, true});
        continue;
      }
      opts_.progress(name + ": running");
      if (recorded.is_object() && recorded.contains("outputs"))
        for (const auto& [rel, _] : recorded.at("outputs").items()) fs::remove(dir / rel);

      StageContext ctx{cfg_, dir, {}};
      Outputs outs;
      try {
        outs = def.run(ctx);
      } catch (const std::exception& e) {
        bundle_["stages"].erase(name);
        bundle_["complete"] = false;
        write_bundle(dir);
        const bool validation = dynamic_cast<const ValidationError*>(&e) != nullptr;
        text::write_file(dir / artifacts::kFailedMarker,
                         artifacts::dump({{"stage", name}, {"error", e.what()}, {"exit_code", validation ? 2 : 1}}));
        throw;
      }
      json hashes = json::object();
      for (const auto& [rel, content] : outs) {
        text::write_file(dir / rel, content);
        hashes[rel] = sha256_hex(content);
      }
      bundle_["stages"][name] = {{"fingerprint", fingerprint}, {"inputs", stage_inputs_json}, {"outputs", hashes}, {"log", ctx.log}};
      for (const auto& line : ctx.log) opts_.progress(name + ": " + line);
      outcomes.push_back({name, false});
      write_bundle(dir);
    }
    std::error_code ec;
    fs::remove(dir / artifacts::kFailedMarker, ec);
    write_bundle(dir);
    return outcomes;
  }

private:
  static std::string command_for(const std::string& stage) {
    return stage.rfind("report.", 0) == 0 ? "report --kind " + stage.substr(7) : stage;
  }

  static bool outputs_intact(const fs::path& dir, const json& recorded) {
    if (!recorded.contains("outputs")) return false;
    for (const auto& [rel, sha] : recorded.at("outputs").items()) {
      const auto p = dir / rel;
      if (!fs::is_regular_file(p) || sha256_file(p) != sha.get<std::string>()) return false;
    }
    return true;
  }

  void load_bundle(const fs::path& dir) {
    bundle_ = json::object();
    const auto p = dir / artifacts::kBundleFile;
    if (!fs::is_regular_file(p)) return;
    try {
      bundle_ = json::parse(text::read_file(p));
      if (!bundle_.is_object() || bundle_.value("bundle_version", 0) != kBundleVersion) bundle_ = json::object();
    } catch (const json::exception&) {
      bundle_ = json::object();
    }
  }

  json hash_inputs() const {
    json out = json::object();
    const fs::path base = cfg_.config_path.parent_path();
    for (const auto& [name, p] : cfg_.inputs) out[name] = {{"path", cfg_.input_labels.at(name)}, {"sha256", sha256_file(p)}};
    const auto manifest = corpus::load_manifest(cfg_.inputs.at("manifest"));
    auto add = [&](const std::string& name, const fs::path& p) {
      if (!fs::is_regular_file(p)) throw ValidationError("input '" + name + "' not found: " + p.string());
      out[name] = {{"path", p.lexically_relative(base).generic_string()}, {"sha256", sha256_file(p)}};
    };
    add("corpus", manifest.corpus);
    if (!manifest.stopwords.empty()) add("stopwords", manifest.stopwords);
    return out;
  }

  json snapshot() const {
    json s = cfg_.raw;
    s.erase("output_dir");
    s.erase("seed");
    s["effective"] = {{"seed", cfg_.seed},
                      {"lda_threads", cfg_.lda.threads},
                      {"models", cfg_.lda.topics},
                      {"field_model", cfg_.field_model()},
                      {"presence_cutoff", cfg_.lda.presence_cutoff},
                      {"taxon_rank", annotate::to_string(cfg_.diversity.taxon_rank)},
                      {"geo_periods", stages::period_labels(cfg_.geo_periods)},
                      {"topic_periods", stages::period_labels(cfg_.topic_periods)}};
    return s;
  }

  void write_bundle(const fs::path& dir) {
    bool complete = true;
    for (const auto& s : stage_table()) complete = complete && bundle_["stages"].contains(s.name);
    bundle_["complete"] = complete;
    text::write_file(dir / artifacts::kBundleFile, artifacts::dump(bundle_));
  }

  PipelineConfig cfg_;
  RunOptions opts_;
  json bundle_;
};

} // namespace corposcope::pipeline
