#pragma once

// Dictionary-based taxon mention detection with lineage resolution, and
// gazetteer-backed geographic tagging.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

#include "corposcope/corpus.hpp"
#include "corposcope/error.hpp"
#include "corposcope/text.hpp"

namespace corposcope::annotate {

// ---------------------------------------------------------------------------
// Taxonomy

enum class Rank {
  no_rank, clade,
  superkingdom, kingdom, subkingdom,
  superphylum, phylum, subphylum,
  superclass, class_, subclass, infraclass,
  cohort, subcohort,
  superorder, order, suborder, infraorder, parvorder,
  superfamily, family, subfamily,
  tribe, subtribe,
  genus, subgenus,
  species_group, species_subgroup, species, subspecies,
  varietas, forma, strain,
};

namespace detail {
inline constexpr std::array<std::pair<Rank, std::string_view>, 33> kRankNames{{
    {Rank::no_rank, "no rank"}, {Rank::clade, "clade"},
    {Rank::superkingdom, "superkingdom"}, {Rank::kingdom, "kingdom"}, {Rank::subkingdom, "subkingdom"},
    {Rank::superphylum, "superphylum"}, {Rank::phylum, "phylum"}, {Rank::subphylum, "subphylum"},
    {Rank::superclass, "superclass"}, {Rank::class_, "class"}, {Rank::subclass, "subclass"},
    {Rank::infraclass, "infraclass"}, {Rank::cohort, "cohort"}, {Rank::subcohort, "subcohort"},
    {Rank::superorder, "superorder"}, {Rank::order, "order"}, {Rank::suborder, "suborder"},
    {Rank::infraorder, "infraorder"}, {Rank::parvorder, "parvorder"},
    {Rank::superfamily, "superfamily"}, {Rank::family, "family"}, {Rank::subfamily, "subfamily"},
    {Rank::tribe, "tribe"}, {Rank::subtribe, "subtribe"},
    {Rank::genus, "genus"}, {Rank::subgenus, "subgenus"},
    {Rank::species_group, "species group"}, {Rank::species_subgroup, "species subgroup"},
    {Rank::species, "species"}, {Rank::subspecies, "subspecies"},
    {Rank::varietas, "varietas"}, {Rank::forma, "forma"}, {Rank::strain, "strain"},
}};
} // namespace detail

inline std::string_view to_string(Rank r) {
  for (const auto& [rank, name] : detail::kRankNames)
    if (rank == r) return name;
  return "no rank";
}

inline std::optional<Rank> parse_rank(std::string_view s) {
  for (const auto& [rank, name] : detail::kRankNames)
    if (name == s) return rank;
  return std::nullopt;
}

// "no rank" and "clade" nodes are contracted when building ranked paths.
inline bool is_ranked(Rank r) { return r != Rank::no_rank && r != Rank::clade; }

struct TaxonNode {
  std::string taxon_id;
  std::optional<std::string> parent_id;
  Rank rank = Rank::no_rank;
  std::string name;
  std::string division;
};

class TaxonomyTree {
public:
  TaxonomyTree() = default;

  // Validates single root, existing parents, acyclicity and non-empty divisions.
  explicit TaxonomyTree(std::vector<TaxonNode> nodes) : nodes_(std::move(nodes)) {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].division.empty())
        throw ValidationError("taxon '" + nodes_[i].taxon_id + "' has an empty division");
      if (!index_.emplace(nodes_[i].taxon_id, i).second)
        throw ValidationError("duplicate taxon_id '" + nodes_[i].taxon_id + "'");
    }
    std::optional<std::size_t> root;
    children_.assign(nodes_.size(), {});
    parent_.assign(nodes_.size(), kNone);
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const auto& n = nodes_[i];
      if (!n.parent_id) {
        if (root) throw ValidationError("taxonomy has more than one root ('" + nodes_[*root].taxon_id + "', '" + n.taxon_id + "')");
        root = i;
        continue;
      }
      const auto it = index_.find(*n.parent_id);
      if (it == index_.end())
        throw ValidationError("taxon '" + n.taxon_id + "' names missing parent '" + *n.parent_id + "'");
      parent_[i] = it->second;
      children_[it->second].push_back(i);
    }
    if (!nodes_.empty() && !root) throw ValidationError("taxonomy has no root");
    root_ = root.value_or(kNone);
    // Every node must reach the root; a cycle would never get there.
    depth_.assign(nodes_.size(), kNone);
    if (root_ != kNone) {
      std::vector<std::size_t> stack{root_};
      depth_[root_] = 0;
      while (!stack.empty()) {
        const auto u = stack.back();
        stack.pop_back();
        for (auto c : children_[u]) {
          depth_[c] = depth_[u] + 1;
          stack.push_back(c);
        }
      }
    }
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (depth_[i] == kNone) throw ValidationError("taxonomy cycle through '" + nodes_[i].taxon_id + "'");
    for (auto& c : children_)
      std::sort(c.begin(), c.end(), [&](auto a, auto b) { return nodes_[a].taxon_id < nodes_[b].taxon_id; });
  }

  std::size_t size() const { return nodes_.size(); }
  bool contains(std::string_view id) const { return index_.count(std::string(id)) > 0; }
  const TaxonNode& root() const { return nodes_.at(root_); }

  const TaxonNode& node(std::string_view id) const { return nodes_[require(id)]; }

  std::vector<const TaxonNode*> children(std::string_view id) const {
    std::vector<const TaxonNode*> out;
    for (auto c : children_[require(id)]) out.push_back(&nodes_[c]);
    return out;
  }

  // Root first, taxon last.
  std::vector<const TaxonNode*> lineage(std::string_view id) const {
    std::vector<const TaxonNode*> path;
    for (auto i = require(id); i != kNone; i = parent_[i]) path.push_back(&nodes_[i]);
    std::reverse(path.begin(), path.end());
    return path;
  }

  const std::vector<TaxonNode>& nodes() const { return nodes_; }

private:
  static constexpr std::size_t kNone = static_cast<std::size_t>(-1);

  std::size_t require(std::string_view id) const {
    const auto it = index_.find(std::string(id));
    if (it == index_.end()) throw ValidationError("unknown taxon_id '" + std::string(id) + "'");
    return it->second;
  }

  std::vector<TaxonNode> nodes_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::vector<std::size_t>> children_;
  std::vector<std::size_t> parent_;
  std::vector<std::size_t> depth_;
  std::size_t root_ = kNone;
};

inline std::vector<const TaxonNode*> resolve_lineage(std::string_view taxon_id, const TaxonomyTree& tree) {
  return tree.lineage(taxon_id);
}

inline std::optional<std::string> ancestor_at_rank(std::string_view taxon_id, Rank rank, const TaxonomyTree& tree) {
  for (const auto* n : tree.lineage(taxon_id))
    if (n->rank == rank) return n->taxon_id;
  return std::nullopt;
}

// TSV: taxon_id <TAB> parent_id <TAB> rank <TAB> name <TAB> division.
// The root has an empty parent, "-", or its own id.
inline TaxonomyTree parse_taxonomy(std::string_view content) {
  std::vector<TaxonNode> nodes;
  const auto lines = text::split_lines(content);
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    if (text::trim(lines[ln]).empty() || lines[ln].front() == '#') continue;
    const auto f = text::split(lines[ln], '\t');
    const std::string where = "taxonomy row " + std::to_string(ln + 1);
    if (f.size() != 5) throw ValidationError(where + ": expected 5 tab-separated fields, got " + std::to_string(f.size()));
    TaxonNode n;
    n.taxon_id = std::string(text::trim(f[0]));
    if (n.taxon_id.empty()) throw ValidationError(where + ": empty taxon_id");
    const std::string parent(text::trim(f[1]));
    if (!parent.empty() && parent != "-" && parent != n.taxon_id) n.parent_id = parent;
    const auto rank = parse_rank(text::trim(f[2]));
    if (!rank) throw ValidationError(where + ": unknown rank '" + f[2] + "'");
    n.rank = *rank;
    n.name = std::string(text::trim(f[3]));
    n.division = std::string(text::trim(f[4]));
    if (n.division.empty()) throw ValidationError(where + ": empty division");
    nodes.push_back(std::move(n));
  }
  return TaxonomyTree(std::move(nodes));
}

// ---------------------------------------------------------------------------
// Lexicon and matching

// Case-folded surface forms of 1-6 words. Internal whitespace in a surface
// matches any whitespace run in page text.
class TaxonLexicon {
public:
  TaxonLexicon() { trie_.emplace_back(); }

  void add(std::string_view surface, std::string taxon_id) {
    const std::string key = normalize(surface);
    if (key.empty()) throw ValidationError("empty lexicon surface");
    const auto words = static_cast<std::size_t>(std::count(key.begin(), key.end(), ' ')) + 1;
    if (words > 6) throw ValidationError("lexicon surface '" + key + "' has more than 6 words");
    if (!surfaces_.emplace(key, taxon_id).second) throw ValidationError("duplicate lexicon surface '" + key + "'");
    std::size_t node = 0;
    for (char c : key) {
      auto it = trie_[node].next.find(c);
      if (it == trie_[node].next.end()) {
        trie_.emplace_back();
        it = trie_[node].next.emplace(c, trie_.size() - 1).first;
      }
      node = it->second;
    }
    trie_[node].taxon = std::move(taxon_id);
  }

  void validate(const TaxonomyTree& tree) const {
    for (const auto& [surface, id] : surfaces_)
      if (!tree.contains(id)) throw ValidationError("lexicon surface '" + surface + "' maps to unknown taxon '" + id + "'");
  }

  std::size_t size() const { return surfaces_.size(); }
  const std::map<std::string, std::string>& surfaces() const { return surfaces_; }

  static std::string normalize(std::string_view s) {
    std::string out;
    bool space = false;
    for (char c : text::trim(s)) {
      if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
        space = true;
        continue;
      }
      if (space) out += ' ';
      space = false;
      out += (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
    }
    return out;
  }

  // Longest lexicon entry matching text at `pos` whose end falls on a word
  // boundary. Returns (end offset, taxon id).
  std::optional<std::pair<std::size_t, std::string>> longest_at(std::string_view folded, std::size_t pos) const {
    auto is_word = [](char c) {
      const auto u = static_cast<unsigned char>(c);
      return std::isalnum(u) || u >= 0x80;
    };
    auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; };
    std::optional<std::pair<std::size_t, std::string>> best;
    std::size_t node = 0, i = pos;
    while (i < folded.size()) {
      char c = folded[i];
      std::size_t advance = 1;
      if (is_space(c)) {
        c = ' ';
        while (i + advance < folded.size() && is_space(folded[i + advance])) ++advance;
      }
      const auto it = trie_[node].next.find(c);
      if (it == trie_[node].next.end()) break;
      node = it->second;
      i += advance;
      if (trie_[node].taxon && c != ' ' && (i == folded.size() || !is_word(folded[i]) || !is_word(folded[i - 1])))
        best = {{i, *trie_[node].taxon}};
    }
    return best;
  }

private:
  struct TrieNode {
    std::map<char, std::size_t> next;
    std::optional<std::string> taxon;
  };
  std::vector<TrieNode> trie_;
  std::map<std::string, std::string> surfaces_;
};

// TSV: surface <TAB> taxon_id.
inline TaxonLexicon parse_lexicon(std::string_view content) {
  TaxonLexicon lex;
  const auto lines = text::split_lines(content);
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    if (text::trim(lines[ln]).empty() || lines[ln].front() == '#') continue;
    const auto f = text::split(lines[ln], '\t');
    const std::string where = "lexicon row " + std::to_string(ln + 1);
    if (f.size() != 2) throw ValidationError(where + ": expected 2 tab-separated fields, got " + std::to_string(f.size()) + " in '" + lines[ln] + "'");
    const std::string id(text::trim(f[1]));
    if (id.empty()) throw ValidationError(where + ": empty taxon_id");
    try {
      lex.add(f[0], id);
    } catch (const ValidationError& e) {
      throw ValidationError(where + ": " + e.what());
    }
  }
  return lex;
}

struct TaxonMention {
  std::string doc_id;
  std::size_t page_index = 0;
  std::size_t begin = 0; // byte offsets into the page text, [begin, end)
  std::size_t end = 0;
  std::string surface;   // text as it appears on the page
  std::string taxon_id;

  auto operator<=>(const TaxonMention&) const = default;
};

// Leftmost-longest, non-overlapping scan; a match must start and end on a
// word boundary. Surfaces in `blocklist` (normalized) are skipped.
inline std::vector<TaxonMention> match_taxa(const corpus::PageRecord& page, const TaxonLexicon& lexicon,
                                            const std::set<std::string>& blocklist = {}) {
  std::vector<TaxonMention> out;
  const std::string folded = text::ascii_lower(page.text);
  auto is_word = [](char c) {
    const auto u = static_cast<unsigned char>(c);
    return std::isalnum(u) || u >= 0x80;
  };
  std::size_t i = 0;
  while (i < folded.size()) {
    const bool boundary = i == 0 || !is_word(folded[i - 1]) || !is_word(folded[i]);
    if (boundary && !std::isspace(static_cast<unsigned char>(folded[i]))) {
      if (auto m = lexicon.longest_at(folded, i)) {
        const std::string surface = page.text.substr(i, m->first - i);
        if (!blocklist.count(TaxonLexicon::normalize(surface))) {
          out.push_back({page.doc_id, page.page_index, i, m->first, surface, m->second});
          i = m->first;
          continue;
        }
      }
    }
    ++i;
  }
  return out;
}

// Mention counts aggregated at `rank`: each mention adds one to its
// ancestor at that rank, if any.
inline std::map<std::string, std::size_t> rollup(const std::vector<TaxonMention>& mentions, Rank rank,
                                                 const TaxonomyTree& tree) {
  std::map<std::string, std::size_t> out;
  for (const auto& m : mentions)
    if (auto a = ancestor_at_rank(m.taxon_id, rank, tree)) ++out[*a];
  return out;
}

inline std::map<std::string, std::size_t> rollup_division(const std::vector<TaxonMention>& mentions,
                                                          const TaxonomyTree& tree) {
  std::map<std::string, std::size_t> out;
  for (const auto& m : mentions) ++out[tree.node(m.taxon_id).division];
  return out;
}

// Per-taxon counts under the three counting modes: raw mentions, distinct
// pages, distinct articles.
struct TaxonCounts {
  std::size_t mentions = 0;
  std::size_t pages = 0;
  std::size_t articles = 0;
};

inline std::map<std::string, TaxonCounts> count_taxa(const std::vector<TaxonMention>& mentions) {
  std::map<std::string, TaxonCounts> out;
  std::set<std::tuple<std::string, std::string, std::size_t>> pages;
  std::set<std::pair<std::string, std::string>> articles;
  for (const auto& m : mentions) {
    auto& c = out[m.taxon_id];
    ++c.mentions;
    if (pages.insert({m.taxon_id, m.doc_id, m.page_index}).second) ++c.pages;
    if (articles.insert({m.taxon_id, m.doc_id}).second) ++c.articles;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Geography

inline constexpr double kEarthRadiusKm = 6371.0088;
inline constexpr double kHalfCircumferenceKm = std::numbers::pi * kEarthRadiusKm;

struct LatLon {
  double lat = 0.0;
  double lon = 0.0;

  auto operator<=>(const LatLon&) const = default;
};

inline bool valid(const LatLon& p) {
  return std::isfinite(p.lat) && std::isfinite(p.lon) && std::abs(p.lat) <= 90.0 && std::abs(p.lon) <= 180.0;
}

// Haversine distance on a sphere of mean Earth radius.
inline double great_circle_distance(const LatLon& a, const LatLon& b) {
  if (!valid(a) || !valid(b)) throw ValidationError("invalid coordinates");
  constexpr double rad = std::numbers::pi / 180.0;
  const double dlat = (b.lat - a.lat) * rad;
  const double dlon = (b.lon - a.lon) * rad;
  const double s1 = std::sin(dlat / 2.0);
  const double s2 = std::sin(dlon / 2.0);
  double h = s1 * s1 + std::cos(a.lat * rad) * std::cos(b.lat * rad) * s2 * s2;
  h = std::clamp(h, 0.0, 1.0);
  return 2.0 * kEarthRadiusKm * std::asin(std::sqrt(h));
}

struct Place {
  std::string name;
  std::string uri;
  LatLon position;
  std::string country_code;
};

// Names are case-folded. When a name occurs on several rows the first row
// wins; annotations can name a uri to pick another.
class Gazetteer {
public:
  void add(Place p) {
    if (!valid(p.position)) throw ValidationError("gazetteer entry '" + p.name + "' has invalid coordinates");
    if (by_uri_.count(p.uri)) throw ValidationError("duplicate gazetteer uri '" + p.uri + "'");
    const auto idx = places_.size();
    by_uri_.emplace(p.uri, idx);
    by_name_.emplace(text::ascii_lower(text::trim(p.name)), idx);
    places_.push_back(std::move(p));
  }

  const Place* find_uri(std::string_view uri) const {
    const auto it = by_uri_.find(std::string(uri));
    return it == by_uri_.end() ? nullptr : &places_[it->second];
  }

  const Place* find_name(std::string_view name) const {
    const auto it = by_name_.find(text::ascii_lower(text::trim(name)));
    return it == by_name_.end() ? nullptr : &places_[it->second];
  }

  const Place* resolve(std::string_view name_or_uri) const {
    if (const auto* p = find_uri(text::trim(name_or_uri))) return p;
    return find_name(name_or_uri);
  }

  std::size_t size() const { return places_.size(); }

private:
  std::vector<Place> places_;
  std::unordered_map<std::string, std::size_t> by_uri_;
  std::unordered_map<std::string, std::size_t> by_name_;
};

// TSV: name <TAB> uri <TAB> lat <TAB> lon <TAB> country.
inline Gazetteer parse_gazetteer(std::string_view content) {
  Gazetteer g;
  const auto lines = text::split_lines(content);
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    if (text::trim(lines[ln]).empty() || lines[ln].front() == '#') continue;
    const auto f = text::split(lines[ln], '\t');
    const std::string where = "gazetteer row " + std::to_string(ln + 1);
    if (f.size() != 5) throw ValidationError(where + ": expected 5 tab-separated fields");
    Place p;
    p.name = std::string(text::trim(f[0]));
    p.uri = std::string(text::trim(f[1]));
    try {
      std::size_t used = 0;
      p.position.lat = std::stod(f[2], &used);
      p.position.lon = std::stod(f[3], &used);
    } catch (const std::exception&) {
      throw ValidationError(where + ": unparsable coordinates");
    }
    p.country_code = std::string(text::trim(f[4]));
    try {
      g.add(std::move(p));
    } catch (const ValidationError& e) {
      throw ValidationError(where + ": " + e.what());
    }
  }
  return g;
}

enum class GeoRole { content, author };

inline std::string_view to_string(GeoRole r) { return r == GeoRole::content ? "content" : "author"; }

inline GeoRole parse_geo_role(std::string_view s) {
  if (s == "content") return GeoRole::content;
  if (s == "author") return GeoRole::author;
  throw ValidationError("unknown geo role '" + std::string(s) + "'");
}

struct GeoAnnotation {
  std::string doc_id;
  GeoRole role = GeoRole::content;
  std::string place_or_uri;
};

struct GeoTag {
  std::string doc_id;
  GeoRole role = GeoRole::content;
  std::string uri;
  LatLon position;
  std::string country_code;

  auto operator<=>(const GeoTag&) const = default;
};

// CSV: doc_id,role,place_or_uri. An optional header row starting with
// "doc_id" is skipped.
inline std::vector<GeoAnnotation> parse_geo_annotations(std::string_view content) {
  std::vector<GeoAnnotation> out;
  const auto lines = text::split_lines(content);
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    if (text::trim(lines[ln]).empty()) continue;
    const auto f = text::split_csv(lines[ln]);
    if (ln == 0 && !f.empty() && text::trim(f[0]) == "doc_id") continue;
    const std::string where = "geo annotation row " + std::to_string(ln + 1);
    if (f.size() != 3) throw ValidationError(where + ": expected 3 comma-separated fields");
    try {
      out.push_back({std::string(text::trim(f[0])), parse_geo_role(text::trim(f[1])), std::string(text::trim(f[2]))});
    } catch (const ValidationError& e) {
      throw ValidationError(where + ": " + e.what());
    }
  }
  return out;
}

struct TagResult {
  std::vector<GeoTag> tags;
  std::vector<GeoAnnotation> unresolved; // lenient mode only
};

// One tag per distinct (doc, role, place), ordered by (doc, role, uri).
inline TagResult tag_locations(const std::vector<GeoAnnotation>& annotations, const Gazetteer& gazetteer,
                               bool strict = true) {
  TagResult out;
  std::set<GeoTag> tags;
  std::vector<std::string> missing;
  for (const auto& a : annotations) {
    const Place* p = gazetteer.resolve(a.place_or_uri);
    if (!p) {
      missing.push_back(a.doc_id + ":" + a.place_or_uri);
      out.unresolved.push_back(a);
      continue;
    }
    tags.insert({a.doc_id, a.role, p->uri, p->position, p->country_code});
  }
  if (strict && !missing.empty())
    throw ValidationError("unresolvable places: " + text::join(missing, ", "));
  out.tags.assign(tags.begin(), tags.end());
  return out;
}

} // namespace corposcope::annotate
