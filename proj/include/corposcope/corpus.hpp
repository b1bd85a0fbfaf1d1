#pragma once

// Corpus ingestion: JSON-Lines documents, running-header and bibliography
// removal, tokenization, collocation phrases and the filtered vocabulary.

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "corposcope/error.hpp"
#include "corposcope/text.hpp"

namespace corposcope::corpus {

enum class DocType { article, essay_review, book_review, other };

inline std::string_view to_string(DocType t) {
  switch (t) {
    case DocType::article: return "article";
    case DocType::essay_review: return "essay_review";
    case DocType::book_review: return "book_review";
    case DocType::other: return "other";
  }
  return "other";
}

inline DocType parse_doc_type(std::string_view s) {
  if (s == "article") return DocType::article;
  if (s == "essay_review") return DocType::essay_review;
  if (s == "book_review") return DocType::book_review;
  if (s == "other") return DocType::other;
  throw ValidationError("unknown doc_type '" + std::string(s) + "'");
}

struct PageRecord {
  std::string doc_id;
  std::size_t page_index = 0;
  std::string text;
};

struct Document {
  std::string doc_id;
  int year = 0;
  DocType doc_type = DocType::article;
  std::vector<std::string> author_ids;
  std::vector<PageRecord> pages;
};

struct TokenStream {
  std::string doc_id;
  std::size_t page_index = 0;
  std::vector<std::string> tokens;
};

// ---------------------------------------------------------------------------
// Loading

// One JSON object per line:
//   {"doc_id": str, "year": int, "doc_type": str, "authors": [str], "pages": [...]}
// A page is either a string (its position is the page index) or an object
// {"page_index": int, "text": str}. Blank lines are ignored.
inline std::vector<Document> parse_corpus(std::string_view content) {
  std::vector<Document> docs;
  std::set<std::string> seen;
  const auto lines = text::split_lines(content);
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const auto line = text::trim(lines[ln]);
    if (line.empty()) continue;
    const std::string where = "corpus line " + std::to_string(ln + 1);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(where + ": malformed JSON (" + e.what() + ")");
    }
    try {
      Document d;
      d.doc_id = j.at("doc_id").get<std::string>();
      d.year = j.at("year").get<int>();
      d.doc_type = parse_doc_type(j.value("doc_type", std::string("article")));
      if (j.contains("authors")) d.author_ids = j.at("authors").get<std::vector<std::string>>();
      const auto& pages = j.at("pages");
      if (!pages.is_array()) throw ValidationError("'pages' must be an array");
      std::set<std::size_t> indices;
      for (std::size_t p = 0; p < pages.size(); ++p) {
        PageRecord rec;
        rec.doc_id = d.doc_id;
        if (pages[p].is_string()) {
          rec.page_index = p;
          rec.text = pages[p].get<std::string>();
        } else {
          rec.page_index = pages[p].at("page_index").get<std::size_t>();
          rec.text = pages[p].value("text", std::string());
        }
        if (!indices.insert(rec.page_index).second)
          throw ValidationError("duplicate page_index " + std::to_string(rec.page_index));
        d.pages.push_back(std::move(rec));
      }
      std::stable_sort(d.pages.begin(), d.pages.end(),
                       [](const PageRecord& a, const PageRecord& b) { return a.page_index < b.page_index; });
      if (!seen.insert(d.doc_id).second) throw ValidationError("duplicate doc_id '" + d.doc_id + "'");
      docs.push_back(std::move(d));
    } catch (const ValidationError& e) {
      throw ValidationError(where + ": " + e.what());
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(where + ": " + e.what());
    }
  }
  return docs;
}

inline std::vector<Document> load_corpus(const std::filesystem::path& path) {
  return parse_corpus(text::read_file(path));
}

// ---------------------------------------------------------------------------
// Front/back matter

struct BibliographyCut {
  std::size_t page_index = 0; // page holding the first cut line
  std::size_t line_index = 0; // line within that page, after header removal
};

struct StripOptions {
  std::vector<std::string> header_patterns; // ECMAScript regex, case-insensitive, full-line match
  std::size_t header_scan_lines = 3;
  std::size_t window = 5;
  std::size_t min_citation_lines = 3;
};

struct StripAudit {
  std::string doc_id;
  std::size_t headers_removed = 0;
  std::size_t detection_score = 0; // most citation-like lines seen in any window
  std::optional<BibliographyCut> cut;
  bool overridden = false;
};

struct StrippedDocument {
  Document document;
  StripAudit audit;
};

inline bool is_citation_line(std::string_view line) {
  static const std::regex year_paren(R"(^[^()]{0,80}\((1[5-9]|20)\d\d[a-z]?\))");
  static const std::regex doi(R"(doi:)", std::regex::icase);
  static const std::regex volume_issue(R"(\b\d+\s*\(\d+(-\d+)?\))");
  const std::string s(text::trim(line));
  if (s.empty()) return false;
  if (std::regex_search(s, year_paren)) return true;
  if (std::regex_search(s, doi)) return true;
  if (std::regex_search(s, volume_issue)) return true;
  return std::count(s.begin(), s.end(), ',') >= 2 && s.back() == '.';
}

// Removes running headers from the top of each page, then drops everything
// from the detected (or overridden) start of the bibliography onward. Pages
// past the cut are kept with empty text so page indices stay stable.
inline StrippedDocument strip_front_back_matter(const Document& doc, const StripOptions& opts,
                                                std::optional<BibliographyCut> override_cut = std::nullopt) {
  std::vector<std::regex> rules;
  rules.reserve(opts.header_patterns.size());
  for (const auto& p : opts.header_patterns) {
    try {
      rules.emplace_back(p, std::regex::ECMAScript | std::regex::icase);
    } catch (const std::regex_error& e) {
      throw ValidationError("invalid header pattern '" + p + "': " + e.what());
    }
  }

  StrippedDocument out{doc, {}};
  out.audit.doc_id = doc.doc_id;

  std::vector<std::vector<std::string>> page_lines;
  for (const auto& page : doc.pages) {
    auto lines = text::split_lines(page.text);
    std::vector<std::string> kept;
    for (std::size_t i = 0; i < lines.size(); ++i) {
      bool header = false;
      if (i < opts.header_scan_lines) {
        const std::string t(text::trim(lines[i]));
        for (const auto& r : rules)
          if (std::regex_match(t, r)) { header = true; break; }
      }
      if (header) ++out.audit.headers_removed;
      else kept.push_back(std::move(lines[i]));
    }
    page_lines.push_back(std::move(kept));
  }

  struct Pos { std::size_t page, line; bool citation; };
  std::vector<Pos> flat;
  for (std::size_t p = 0; p < page_lines.size(); ++p)
    for (std::size_t l = 0; l < page_lines[p].size(); ++l)
      if (!text::trim(page_lines[p][l]).empty())
        flat.push_back({p, l, is_citation_line(page_lines[p][l])});

  std::optional<std::pair<std::size_t, std::size_t>> cut; // (page position, line)
  if (override_cut) {
    for (std::size_t p = 0; p < doc.pages.size(); ++p)
      if (doc.pages[p].page_index == override_cut->page_index) cut = {{p, override_cut->line_index}};
    out.audit.overridden = true;
  }
  if (opts.window > 0) {
    for (std::size_t start = 0; start < flat.size(); ++start) {
      const std::size_t end = std::min(flat.size(), start + opts.window);
      std::size_t hits = 0;
      for (std::size_t k = start; k < end; ++k) hits += flat[k].citation;
      out.audit.detection_score = std::max(out.audit.detection_score, hits);
      if (!override_cut && !cut && hits >= opts.min_citation_lines) {
        std::size_t k = start;
        while (!flat[k].citation) ++k;
        cut = {{flat[k].page, flat[k].line}};
      }
    }
  }

  for (std::size_t p = 0; p < page_lines.size(); ++p) {
    auto& lines = page_lines[p];
    if (cut) {
      if (p > cut->first) lines.clear();
      else if (p == cut->first && cut->second < lines.size())
        lines.resize(cut->second);
    }
    out.document.pages[p].text = text::join(lines, "\n");
  }
  if (cut) out.audit.cut = BibliographyCut{doc.pages[cut->first].page_index, cut->second};
  return out;
}

// ---------------------------------------------------------------------------
// Tokens

// Maximal runs of alphabetic characters, lower-cased; everything else is a
// separator.
inline TokenStream tokenize(const PageRecord& page) {
  TokenStream ts{page.doc_id, page.page_index, {}};
  std::string current;
  const std::string_view s = page.text;
  std::size_t i = 0;
  while (i < s.size()) {
    const char32_t c = text::decode_utf8(s, i);
    if (text::is_alpha(c)) {
      text::append_utf8(current, text::to_lower(c));
    } else if (!current.empty()) {
      ts.tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) ts.tokens.push_back(std::move(current));
  return ts;
}

inline std::size_t word_parts(std::string_view unit) {
  return 1 + static_cast<std::size_t>(std::count(unit.begin(), unit.end(), '_'));
}

// ---------------------------------------------------------------------------
// Phrases

enum class PhraseScoring {
  as_printed,         // (N_ij - min_count) / (N_i + N_j) > factor * N
  normalized_product, // (N_ij - min_count) / (N_i * N_j) * N > factor
};

inline std::string_view to_string(PhraseScoring s) {
  return s == PhraseScoring::as_printed ? "as-printed" : "normalized-product";
}

inline PhraseScoring parse_phrase_scoring(std::string_view s) {
  if (s == "as-printed") return PhraseScoring::as_printed;
  if (s == "normalized-product") return PhraseScoring::normalized_product;
  throw ValidationError("unknown phrase scoring '" + std::string(s) + "'");
}

struct PhraseOptions {
  std::size_t passes = 3;
  double min_count = 5.0;
  double factor = 0.1;
  PhraseScoring scoring = PhraseScoring::normalized_product;
  std::size_t max_parts = 6;
};

inline bool phrase_accepted(double n_ij, double n_i, double n_j, double n, const PhraseOptions& o) {
  const double numerator = n_ij - o.min_count;
  if (numerator <= 0.0) return false;
  switch (o.scoring) {
    case PhraseScoring::as_printed: return numerator / (n_i + n_j) > o.factor * n;
    case PhraseScoring::normalized_product: return numerator / (n_i * n_j) * n > o.factor;
  }
  return false;
}

struct PhraseTable {
  std::map<std::pair<std::string, std::string>, std::size_t> bigram_counts; // N_ij, last pass
  std::map<std::string, std::size_t> unit_counts;                           // N_i, last pass
  std::size_t total = 0;                                                    // N, last pass
  PhraseOptions options;
  std::set<std::string> phrases; // every unit created in any pass
};

struct PhraseResult {
  std::vector<TokenStream> streams;
  PhraseTable table;
};

namespace detail {
struct PairHash {
  std::size_t operator()(const std::pair<std::string, std::string>& p) const noexcept {
    const std::size_t a = std::hash<std::string>{}(p.first);
    return a ^ (std::hash<std::string>{}(p.second) + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  }
};
} // namespace detail

// Runs `passes` rounds of collocation merging. Each round recounts units and
// adjacent pairs, then merges accepted pairs greedily left to right without
// overlap. A merge that would exceed max_parts word parts is never made.
inline PhraseResult extract_phrases(std::vector<TokenStream> streams, const PhraseOptions& opts = {}) {
  PhraseResult result;
  result.table.options = opts;
  for (std::size_t pass = 0; pass < opts.passes; ++pass) {
    std::unordered_map<std::string, std::size_t> units;
    std::unordered_map<std::pair<std::string, std::string>, std::size_t, detail::PairHash> pairs;
    std::size_t total = 0;
    for (const auto& s : streams) {
      total += s.tokens.size();
      for (std::size_t i = 0; i < s.tokens.size(); ++i) {
        ++units[s.tokens[i]];
        if (i + 1 < s.tokens.size()) ++pairs[{s.tokens[i], s.tokens[i + 1]}];
      }
    }

    std::unordered_set<std::pair<std::string, std::string>, detail::PairHash> accepted;
    for (const auto& [bigram, n_ij] : pairs) {
      if (word_parts(bigram.first) + word_parts(bigram.second) > opts.max_parts) continue;
      if (phrase_accepted(static_cast<double>(n_ij), static_cast<double>(units[bigram.first]),
                          static_cast<double>(units[bigram.second]), static_cast<double>(total), opts))
        accepted.insert(bigram);
    }

    result.table.bigram_counts = {pairs.begin(), pairs.end()};
    result.table.unit_counts = {units.begin(), units.end()};
    result.table.total = total;
    if (accepted.empty()) break;

    for (auto& s : streams) {
      std::vector<std::string> merged;
      merged.reserve(s.tokens.size());
      std::size_t i = 0;
      while (i < s.tokens.size()) {
        if (i + 1 < s.tokens.size() && accepted.count({s.tokens[i], s.tokens[i + 1]})) {
          std::string unit = s.tokens[i] + "_" + s.tokens[i + 1];
          result.table.phrases.insert(unit);
          merged.push_back(std::move(unit));
          i += 2;
        } else {
          merged.push_back(std::move(s.tokens[i]));
          ++i;
        }
      }
      s.tokens = std::move(merged);
    }
  }
  result.streams = std::move(streams);
  return result;
}

// ---------------------------------------------------------------------------
// Vocabulary

// Terms whose page frequency exceeds the limit are dropped. The limit is an
// absolute page count or a fraction of all pages.
struct PageFrequencyLimit {
  std::variant<std::size_t, double> value = 0.25;

  static PageFrequencyLimit absolute(std::size_t pages) { return {pages}; }
  static PageFrequencyLimit fraction(double f) { return {f}; }

  bool excludes(std::size_t page_frequency, std::size_t total_pages) const {
    if (const auto* n = std::get_if<std::size_t>(&value)) return page_frequency > *n;
    return static_cast<double>(page_frequency) > std::get<double>(value) * static_cast<double>(total_pages);
  }
};

class Vocabulary {
public:
  Vocabulary() = default;

  // `terms` must be sorted and unique.
  Vocabulary(std::vector<std::string> terms, std::vector<std::size_t> page_frequency,
             std::vector<std::size_t> corpus_count)
      : terms_(std::move(terms)), page_frequency_(std::move(page_frequency)), corpus_count_(std::move(corpus_count)) {
    for (std::size_t i = 0; i < terms_.size(); ++i) index_.emplace(terms_[i], i);
  }

  std::size_t size() const { return terms_.size(); }
  bool empty() const { return terms_.empty(); }
  const std::string& term(std::size_t id) const { return terms_.at(id); }
  const std::vector<std::string>& terms() const { return terms_; }
  std::size_t page_frequency(std::size_t id) const { return page_frequency_.at(id); }
  std::size_t corpus_count(std::size_t id) const { return corpus_count_.at(id); }

  std::optional<std::size_t> id(std::string_view term) const {
    const auto it = index_.find(std::string(term));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

private:
  std::vector<std::string> terms_;
  std::vector<std::size_t> page_frequency_;
  std::vector<std::size_t> corpus_count_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct VocabularyResult {
  Vocabulary vocabulary;
  std::vector<TokenStream> streams;
};

inline std::unordered_map<std::string, std::size_t> page_frequencies(const std::vector<TokenStream>& streams) {
  std::unordered_map<std::string, std::size_t> pf;
  for (const auto& s : streams) {
    std::unordered_set<std::string_view> seen(s.tokens.begin(), s.tokens.end());
    for (auto t : seen) ++pf[std::string(t)];
  }
  return pf;
}

inline VocabularyResult build_vocabulary(std::vector<TokenStream> streams, const std::set<std::string>& stopwords,
                                         const PageFrequencyLimit& limit = {}) {
  const auto pf = page_frequencies(streams);
  const std::size_t total_pages = streams.size();
  auto keep = [&](const std::string& t) {
    return !stopwords.count(t) && !limit.excludes(pf.at(t), total_pages);
  };

  std::map<std::string, std::size_t> counts;
  for (auto& s : streams) {
    std::erase_if(s.tokens, [&](const std::string& t) { return !keep(t); });
    for (const auto& t : s.tokens) ++counts[t];
  }
  if (counts.empty()) throw ValidationError("vocabulary is empty after stopword and page-frequency filtering");

  std::vector<std::string> terms;
  std::vector<std::size_t> freq, count;
  for (const auto& [t, c] : counts) {
    terms.push_back(t);
    freq.push_back(pf.at(t));
    count.push_back(c);
  }
  return {Vocabulary(std::move(terms), std::move(freq), std::move(count)), std::move(streams)};
}

inline std::set<std::string> parse_stopwords(std::string_view content) {
  std::set<std::string> out;
  for (const auto& line : text::split_lines(content)) {
    const auto t = text::trim(line);
    if (!t.empty() && t.front() != '#') out.insert(text::ascii_lower(t));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifest

struct CorpusManifest {
  std::filesystem::path corpus;
  std::filesystem::path stopwords;
  StripOptions strip;
  std::map<std::string, BibliographyCut> bibliography_overrides;
  PhraseOptions phrases;
  PageFrequencyLimit page_limit;
};

// JSON manifest; relative paths resolve against the manifest's directory.
//   {"corpus": "corpus.jsonl", "stopwords": "stopwords.txt",
//    "header_patterns": ["^journal of .*$"],
//    "bibliography_overrides": {"doc7": [3, 12]},
//    "phrases": {"passes": 3, "min_count": 5, "factor": 0.1, "scoring": "normalized-product"},
//    "max_page_fraction": 0.25}   // or "max_pages": 6000
inline CorpusManifest parse_manifest(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  CorpusManifest m;
  try {
    auto resolve = [&](const std::string& p) {
      const std::filesystem::path path(p);
      return path.is_absolute() ? path : base_dir / path;
    };
    m.corpus = resolve(j.at("corpus").get<std::string>());
    if (j.contains("stopwords")) m.stopwords = resolve(j.at("stopwords").get<std::string>());
    if (j.contains("header_patterns")) m.strip.header_patterns = j.at("header_patterns").get<std::vector<std::string>>();
    if (j.contains("bibliography_overrides")) {
      for (const auto& [doc, pos] : j.at("bibliography_overrides").items()) {
        const auto v = pos.get<std::vector<std::size_t>>();
        if (v.size() != 2) throw ValidationError("bibliography override for '" + doc + "' must be [page, line]");
        m.bibliography_overrides[doc] = {v[0], v[1]};
      }
    }
    if (j.contains("phrases")) {
      const auto& p = j.at("phrases");
      m.phrases.passes = p.value("passes", m.phrases.passes);
      m.phrases.min_count = p.value("min_count", m.phrases.min_count);
      m.phrases.factor = p.value("factor", m.phrases.factor);
      if (p.contains("scoring")) m.phrases.scoring = parse_phrase_scoring(p.at("scoring").get<std::string>());
    }
    if (j.contains("max_pages")) m.page_limit = PageFrequencyLimit::absolute(j.at("max_pages").get<std::size_t>());
    else if (j.contains("max_page_fraction"))
      m.page_limit = PageFrequencyLimit::fraction(j.at("max_page_fraction").get<double>());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("manifest: ") + e.what());
  }
  return m;
}

inline CorpusManifest load_manifest(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("manifest " + path.string() + ": " + e.what());
  }
  return parse_manifest(j, path.parent_path());
}

} // namespace corposcope::corpus
