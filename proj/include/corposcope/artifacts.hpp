#pragma once

// Artifact files inside an output bundle: their relative paths, CSV/JSON
// writers, and typed loaders shared by the pipeline stages, the reports and
// the server.

#include <cstdlib>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "corposcope/annotate.hpp"
#include "corposcope/corpus.hpp"
#include "corposcope/error.hpp"
#include "corposcope/text.hpp"

namespace corposcope::artifacts {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr const char* kBundleFile = "bundle.json";
inline constexpr const char* kFailedMarker = "FAILED";
inline constexpr const char* kLockFile = ".corposcope.lock";

// Relative artifact paths.
namespace path {
inline constexpr const char* documents = "corpus/documents.json";
inline constexpr const char* pages = "corpus/pages.jsonl";
inline constexpr const char* tokens = "corpus/tokens.jsonl";
inline constexpr const char* vocabulary = "corpus/vocabulary.tsv";
inline constexpr const char* phrases = "corpus/phrases.txt";
inline constexpr const char* strip_audit = "corpus/strip_audit.csv";
inline constexpr const char* citations = "corpus/citations.csv";
inline constexpr const char* mentions = "annotate/taxon_mentions.csv";
inline constexpr const char* taxon_counts = "annotate/taxon_counts.csv";
inline constexpr const char* geo_tags = "annotate/geo_tags.csv";
inline constexpr const char* taxonomy = "annotate/taxonomy.tsv";
inline constexpr const char* embedding = "fields/embedding.csv";
inline constexpr const char* embedding_runs = "fields/embedding_runs.json";
inline constexpr const char* k_selection = "fields/k_selection.csv";
inline constexpr const char* fields = "fields/fields.json";
inline constexpr const char* field_graph = "fields/graph.json";
inline constexpr const char* temporal = "fields/temporal.csv";
inline constexpr const char* permutation = "fields/permutation.json";
inline constexpr const char* diversity = "diversity/diversity.csv";
inline constexpr const char* api_index = "api/index.json";

inline std::string lda_dir(std::size_t k) { return "lda/k" + std::to_string(k); }
inline std::string lda_file(std::size_t k, const char* name) { return lda_dir(k) + "/" + name; }
} // namespace path

// ---------------------------------------------------------------------------
// Writers

class Csv {
public:
  explicit Csv(const std::vector<std::string>& header) { row(header); }

  Csv& row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ += ',';
      out_ += text::csv_escape(fields[i]);
    }
    out_ += '\n';
    return *this;
  }

  const std::string& str() const { return out_; }

private:
  std::string out_;
};

inline std::string num(double v) { return text::format_double(v); }
inline std::string num(std::size_t v) { return std::to_string(v); }
inline std::string num(int v) { return std::to_string(v); }

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// Readers

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw ValidationError("missing column '" + std::string(name) + "'");
  }
};

inline Table parse_csv(std::string_view content) {
  Table t;
  bool first = true;
  for (const auto& line : text::split_lines(content)) {
    if (line.empty()) continue;
    if (first) {
      t.header = text::split_csv(line);
      first = false;
    } else {
      t.rows.push_back(text::split_csv(line));
    }
  }
  return t;
}

inline Table read_csv(const fs::path& p) { return parse_csv(text::read_file(p)); }

inline json read_json(const fs::path& p) {
  try {
    return json::parse(text::read_file(p));
  } catch (const json::exception& e) {
    throw ValidationError(p.string() + ": " + e.what());
  }
}

inline double to_double(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str()) throw ValidationError("not a number: '" + s + "'");
  return v;
}

inline std::size_t to_size(const std::string& s) { return static_cast<std::size_t>(std::stoull(s)); }

// ---------------------------------------------------------------------------
// Typed artifacts

struct DocMeta {
  std::string doc_id;
  int year = 0;
  corpus::DocType doc_type = corpus::DocType::article;
  std::vector<std::string> authors;
  std::size_t pages = 0;
  std::size_t tokens = 0;
};

inline json to_json(const DocMeta& d) {
  return {{"doc_id", d.doc_id}, {"year", d.year},     {"doc_type", corpus::to_string(d.doc_type)},
          {"authors", d.authors}, {"pages", d.pages}, {"tokens", d.tokens}};
}

inline std::vector<DocMeta> load_documents(const fs::path& dir) {
  std::vector<DocMeta> out;
  for (const auto& j : read_json(dir / path::documents)) {
    DocMeta d;
    d.doc_id = j.at("doc_id").get<std::string>();
    d.year = j.at("year").get<int>();
    d.doc_type = corpus::parse_doc_type(j.at("doc_type").get<std::string>());
    d.authors = j.at("authors").get<std::vector<std::string>>();
    d.pages = j.at("pages").get<std::size_t>();
    d.tokens = j.at("tokens").get<std::size_t>();
    out.push_back(std::move(d));
  }
  return out;
}

inline std::vector<corpus::TokenStream> load_tokens(const fs::path& dir) {
  std::vector<corpus::TokenStream> out;
  for (const auto& line : text::split_lines(text::read_file(dir / path::tokens))) {
    if (line.empty()) continue;
    const auto j = json::parse(line);
    out.push_back({j.at("doc_id").get<std::string>(), j.at("page_index").get<std::size_t>(),
                   j.at("tokens").get<std::vector<std::string>>()});
  }
  return out;
}

inline std::vector<corpus::PageRecord> load_pages(const fs::path& dir) {
  std::vector<corpus::PageRecord> out;
  for (const auto& line : text::split_lines(text::read_file(dir / path::pages))) {
    if (line.empty()) continue;
    const auto j = json::parse(line);
    out.push_back({j.at("doc_id").get<std::string>(), j.at("page_index").get<std::size_t>(), j.at("text").get<std::string>()});
  }
  return out;
}

inline corpus::Vocabulary load_vocabulary(const fs::path& dir) {
  std::vector<std::string> terms;
  std::vector<std::size_t> pf, count;
  for (const auto& line : text::split_lines(text::read_file(dir / path::vocabulary))) {
    if (line.empty()) continue;
    const auto f = text::split(line, '\t');
    if (f.size() != 3) throw ValidationError("vocabulary: malformed row '" + line + "'");
    terms.push_back(f[0]);
    pf.push_back(to_size(f[1]));
    count.push_back(to_size(f[2]));
  }
  return {std::move(terms), std::move(pf), std::move(count)};
}

inline std::vector<annotate::TaxonMention> load_mentions(const fs::path& dir) {
  const auto t = read_csv(dir / path::mentions);
  std::vector<annotate::TaxonMention> out;
  for (const auto& r : t.rows)
    out.push_back({r.at(0), to_size(r.at(1)), to_size(r.at(2)), to_size(r.at(3)), r.at(4), r.at(5)});
  return out;
}

inline std::vector<annotate::GeoTag> load_geo_tags(const fs::path& dir) {
  const auto t = read_csv(dir / path::geo_tags);
  std::vector<annotate::GeoTag> out;
  for (const auto& r : t.rows)
    out.push_back({r.at(0), annotate::parse_geo_role(r.at(1)), r.at(2), {to_double(r.at(3)), to_double(r.at(4))}, r.at(5)});
  return out;
}

// Document-topic mixtures of one model, aligned by row.
struct ThetaTable {
  std::vector<std::string> doc_ids;
  std::vector<std::size_t> tokens;
  std::vector<std::vector<double>> theta;
};

inline ThetaTable load_doc_theta(const fs::path& dir, std::size_t k) {
  const auto t = read_csv(dir / path::lda_file(k, "doc_theta.csv"));
  ThetaTable out;
  for (const auto& r : t.rows) {
    out.doc_ids.push_back(r.at(0));
    out.tokens.push_back(to_size(r.at(1)));
    std::vector<double> row;
    for (std::size_t i = 2; i < r.size(); ++i) row.push_back(to_double(r[i]));
    if (row.size() != k) throw ValidationError("doc_theta for K=" + std::to_string(k) + " has a row of the wrong width");
    out.theta.push_back(std::move(row));
  }
  return out;
}

struct PageTheta {
  std::string doc_id;
  std::size_t page_index = 0;
  std::vector<double> theta;
};

inline std::vector<PageTheta> load_page_theta(const fs::path& dir, std::size_t k) {
  const auto t = read_csv(dir / path::lda_file(k, "page_theta.csv"));
  std::vector<PageTheta> out;
  for (const auto& r : t.rows) {
    PageTheta p{r.at(0), to_size(r.at(1)), {}};
    for (std::size_t i = 2; i < r.size(); ++i) p.theta.push_back(to_double(r[i]));
    out.push_back(std::move(p));
  }
  return out;
}

// Embedding coordinates and field assignment (-1 = unassigned).
struct EmbeddedDoc {
  std::string doc_id;
  double x = 0.0;
  double y = 0.0;
  int field = -1;
};

inline std::vector<EmbeddedDoc> load_embedding(const fs::path& dir) {
  const auto t = read_csv(dir / path::embedding);
  std::vector<EmbeddedDoc> out;
  for (const auto& r : t.rows) out.push_back({r.at(0), to_double(r.at(1)), to_double(r.at(2)), std::stoi(r.at(3))});
  return out;
}

struct Citation {
  std::string from;
  std::string to;
};

inline std::vector<Citation> load_citations(const fs::path& dir) {
  std::vector<Citation> out;
  for (const auto& r : read_csv(dir / path::citations).rows) out.push_back({r.at(0), r.at(1)});
  return out;
}

} // namespace corposcope::artifacts
