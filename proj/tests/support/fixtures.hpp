#pragma once

// Planted-data generators shared by unit and acceptance tests. Each returns
// the data together with the answer it was built from.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "corposcope/annotate.hpp"
#include "corposcope/corpus.hpp"
#include "corposcope/fields.hpp"
#include "corposcope/lda.hpp"
#include "corposcope/rng.hpp"

namespace fixtures {

using corposcope::Rng;

// A small taxonomy with unranked nodes, several phyla and two divisions.
inline const char* kTaxonomyTsv =
    "1\t\tno rank\troot\tUnassigned\n"
    "131567\t1\tno rank\tcellular organisms\tUnassigned\n"
    "2759\t131567\tsuperkingdom\tEukaryota\tUnassigned\n"
    "33208\t2759\tkingdom\tMetazoa\tInvertebrates\n"
    "7711\t33208\tphylum\tChordata\tVertebrates\n"
    "40674\t7711\tclass\tMammalia\tMammals\n"
    "9989\t40674\torder\tRodentia\tRodents\n"
    "10066\t9989\tfamily\tMuridae\tRodents\n"
    "10088\t10066\tgenus\tMus\tRodents\n"
    "10090\t10088\tspecies\tMus musculus\tRodents\n"
    "33554\t40674\torder\tCarnivora\tMammals\n"
    "9632\t33554\tfamily\tUrsidae\tMammals\n"
    "9639\t9632\tgenus\tUrsus\tMammals\n"
    "9644\t9639\tspecies\tUrsus arctos\tMammals\n"
    "9643\t9639\tspecies\tUrsus americanus\tMammals\n"
    "8782\t7711\tclass\tAves\tVertebrates\n"
    "9126\t8782\torder\tPasseriformes\tVertebrates\n"
    "48155\t9126\tgenus\tGeospiza\tVertebrates\n"
    "48157\t48155\tspecies\tGeospiza fortis\tVertebrates\n"
    "6656\t33208\tphylum\tArthropoda\tInvertebrates\n"
    "50557\t6656\tclass\tInsecta\tInvertebrates\n"
    "7147\t50557\torder\tDiptera\tInvertebrates\n"
    "7215\t7147\tgenus\tDrosophila\tInvertebrates\n"
    "7227\t7215\tspecies\tDrosophila melanogaster\tInvertebrates\n"
    "6447\t33208\tphylum\tMollusca\tInvertebrates\n"
    "6448\t6447\tclass\tGastropoda\tInvertebrates\n"
    "6449\t6448\tspecies\tCepaea nemoralis\tInvertebrates\n"
    "33090\t2759\tkingdom\tViridiplantae\tPlants\n"
    "35493\t33090\tphylum\tStreptophyta\tPlants\n"
    "3511\t35493\tgenus\tQuercus\tPlants\n"
    "38942\t3511\tspecies\tQuercus robur\tPlants\n";

inline const char* kLexiconTsv =
    "mouse\t10090\n"
    "house mouse\t10090\n"
    "mus musculus\t10090\n"
    "bear\t9639\n"
    "brown bear\t9644\n"
    "black bear\t9643\n"
    "medium ground finch\t48157\n"
    "finch\t48155\n"
    "fruit fly\t7227\n"
    "drosophila\t7215\n"
    "drosophila melanogaster\t7227\n"
    "grove snail\t6449\n"
    "oak\t3511\n"
    "english oak\t38942\n";

struct PlantedPages {
  std::vector<corposcope::corpus::PageRecord> pages;
  std::vector<corposcope::annotate::TaxonMention> expected;
};

// Pages of filler prose with lexicon surfaces inserted at random places in
// random case. Filler words never contain a lexicon surface as a word.
inline PlantedPages planted_mention_pages(std::uint64_t seed, std::size_t n_pages = 30) {
  static const std::vector<std::string> filler{"the", "history", "of", "biology", "was", "shaped", "by",
                                               "field", "work", "and", "laboratory", "practice", "in", "many",
                                               "places", "bearing", "mousey", "oaken", "finches", "flyer"};
  static const std::vector<std::string> surfaces{"mouse", "house mouse", "Mus musculus", "bear", "brown bear",
                                                 "black bear", "medium ground finch", "finch", "fruit fly",
                                                 "Drosophila", "Drosophila melanogaster", "grove snail", "oak",
                                                 "english oak"};
  const auto lexicon = corposcope::annotate::parse_lexicon(kLexiconTsv);
  Rng rng(seed);
  PlantedPages out;
  for (std::size_t p = 0; p < n_pages; ++p) {
    std::string text;
    const std::size_t words = 20 + rng.below(30);
    const std::size_t plants = 1 + rng.below(5);
    std::vector<std::size_t> at;
    for (std::size_t k = 0; k < plants; ++k) at.push_back(rng.below(words));
    std::sort(at.begin(), at.end());
    std::size_t next = 0;
    for (std::size_t w = 0; w < words; ++w) {
      while (next < at.size() && at[next] == w) {
        std::string s = surfaces[rng.below(surfaces.size())];
        if (rng.below(2)) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
        if (!text.empty()) text += rng.below(4) == 0 ? ", " : " ";
        const std::size_t begin = text.size();
        text += s;
        out.expected.push_back({"page_doc", p, begin, text.size(), s,
                                lexicon.surfaces().at(corposcope::annotate::TaxonLexicon::normalize(s))});
        ++next;
        text += rng.below(3) == 0 ? "." : "";
      }
      if (!text.empty()) text += ' ';
      text += filler[rng.below(filler.size())];
    }
    out.pages.push_back({"page_doc", p, text});
  }
  return out;
}

// Points in the plane around `centers`, isotropic Gaussian noise.
struct Blobs {
  std::vector<std::string> ids;
  std::vector<std::array<double, 2>> points;
  std::vector<int> labels;
};

inline Blobs gaussian_blobs(const std::vector<std::array<double, 2>>& centers, const std::vector<std::size_t>& sizes,
                            double sigma, std::uint64_t seed) {
  Rng rng(seed);
  Blobs b;
  for (std::size_t c = 0; c < centers.size(); ++c)
    for (std::size_t i = 0; i < sizes[c]; ++i) {
      char id[32];
      std::snprintf(id, sizeof id, "doc%05zu", b.ids.size());
      b.ids.push_back(id);
      b.points.push_back({centers[c][0] + sigma * rng.normal(), centers[c][1] + sigma * rng.normal()});
      b.labels.push_back(static_cast<int>(c));
    }
  return b;
}

// Adjusted Rand index between two labelings; negative labels form their
// own classes.
inline double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  std::map<std::pair<int, int>, double> nij;
  std::map<int, double> ai, bj;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++nij[{a[i], b[i]}];
    ++ai[a[i]];
    ++bj[b[i]];
  }
  auto c2 = [](double x) { return x * (x - 1.0) / 2.0; };
  double sij = 0, sa = 0, sb = 0;
  for (const auto& [_, v] : nij) sij += c2(v);
  for (const auto& [_, v] : ai) sa += c2(v);
  for (const auto& [_, v] : bj) sb += c2(v);
  const double expected = sa * sb / c2(static_cast<double>(a.size()));
  const double max = (sa + sb) / 2.0;
  if (max == expected) return 1.0;
  return (sij - expected) / (max - expected);
}

// Mean silhouette of `labels` over 2-D points.
inline double silhouette(const std::vector<std::array<double, 2>>& pts, const std::vector<int>& labels) {
  double total = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    std::map<int, std::pair<double, int>> by;
    for (std::size_t j = 0; j < pts.size(); ++j) {
      if (i == j) continue;
      auto& e = by[labels[j]];
      e.first += std::hypot(pts[i][0] - pts[j][0], pts[i][1] - pts[j][1]);
      ++e.second;
    }
    const double a = by[labels[i]].second ? by[labels[i]].first / by[labels[i]].second : 0.0;
    double b = INFINITY;
    for (const auto& [l, e] : by)
      if (l != labels[i] && e.second) b = std::min(b, e.first / e.second);
    total += (b - a) / std::max(a, b);
  }
  return total / static_cast<double>(pts.size());
}

// Pages drawn from the LDA generative model with K planted topics, each a
// random distribution concentrated on its own block of the vocabulary.
struct PlantedLda {
  std::vector<std::vector<std::uint32_t>> pages;
  std::vector<std::vector<double>> phi; // K x V
  std::size_t vocabulary_size = 0;
};

inline PlantedLda planted_lda(std::size_t n_pages, std::size_t v, std::size_t k, std::size_t page_len, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::gamma_distribution<double> doc_alpha(0.2, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  PlantedLda out;
  out.vocabulary_size = v;
  const std::size_t block = v / k;
  for (std::size_t t = 0; t < k; ++t) {
    std::vector<double> row(v, 0.0);
    double s = 0.0;
    for (std::size_t w = t * block; w < (t + 1) * block; ++w) s += row[w] = 0.2 + u(gen);
    for (auto& x : row) x /= s;
    out.phi.push_back(row);
  }
  auto draw = [&](const std::vector<double>& p) {
    double r = u(gen);
    for (std::size_t i = 0; i < p.size(); ++i)
      if ((r -= p[i]) < 0.0) return i;
    return p.size() - 1;
  };
  for (std::size_t d = 0; d < n_pages; ++d) {
    std::vector<double> theta(k);
    double s = 0.0;
    for (auto& x : theta) s += x = doc_alpha(gen) + 1e-12;
    for (auto& x : theta) x /= s;
    std::vector<std::uint32_t> page;
    for (std::size_t i = 0; i < page_len; ++i) page.push_back(static_cast<std::uint32_t>(draw(out.phi[draw(theta)])));
    out.pages.push_back(std::move(page));
  }
  return out;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return d / std::sqrt(na * nb);
}

// Sampler input with `pages_per_doc` consecutive planted pages per document.
inline corposcope::lda::LdaCorpus lda_corpus(const PlantedLda& p, std::size_t pages_per_doc = 1) {
  corposcope::lda::LdaCorpus c;
  c.vocabulary_size = p.vocabulary_size;
  for (std::size_t i = 0; i < p.pages.size(); ++i) {
    if (i % pages_per_doc == 0) c.doc_ids.push_back("doc" + std::to_string(i / pages_per_doc));
    c.page_doc.push_back(c.doc_ids.size() - 1);
    c.page_index.push_back(i % pages_per_doc);
    c.pages.push_back(p.pages[i]);
  }
  return c;
}

// Best mean cosine over all one-to-one matchings of recovered to planted rows.
inline double best_match_cosine(const corposcope::lda::TopicModelState& s, const PlantedLda& p) {
  std::vector<std::size_t> perm(s.topics);
  std::iota(perm.begin(), perm.end(), 0);
  double best = 0.0;
  do {
    double sum = 0.0;
    for (std::size_t k = 0; k < s.topics; ++k) sum += cosine(corposcope::lda::phi_row(s, perm[k]), p.phi[k]);
    best = std::max(best, sum / static_cast<double>(s.topics));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

// Topic mixtures in `groups` groups, each concentrated on its own block of
// the k topics.
struct Mixtures {
  std::vector<std::string> ids;
  std::vector<std::vector<double>> theta;
  std::vector<int> labels;
};

inline Mixtures planted_mixtures(std::size_t per_group, std::size_t groups, std::size_t k, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::gamma_distribution<double> g(0.5, 1.0);
  Mixtures m;
  const std::size_t block = k / groups;
  for (std::size_t c = 0; c < groups; ++c)
    for (std::size_t i = 0; i < per_group; ++i) {
      std::vector<double> row(k, 0.0);
      double s = 0;
      for (std::size_t t = 0; t < k; ++t) s += row[t] = (t / block == c ? 1.0 : 0.05) * (g(gen) + 1e-6);
      for (auto& v : row) v /= s;
      m.ids.push_back("doc" + std::to_string(m.ids.size()));
      m.theta.push_back(row);
      m.labels.push_back(static_cast<int>(c));
    }
  return m;
}

inline corposcope::fields::FieldModel model_of(const std::vector<int>& assignment) {
  corposcope::fields::FieldModel m;
  for (std::size_t i = 0; i < assignment.size(); ++i) m.doc_ids.push_back("d" + std::to_string(1000 + i));
  m.assignment = assignment;
  m.field_count = assignment.empty() ? 0 : static_cast<std::size_t>(*std::max_element(assignment.begin(), assignment.end()) + 1);
  return m;
}

// Documents spread over `fields` fields and `years` years. Stationary: field
// and year drawn independently. Directional: field f lives in its own block
// of consecutive years.
struct Dated {
  corposcope::fields::FieldModel model;
  std::vector<int> years;
};

inline Dated dated_fields(bool directional, std::size_t fields, int years, std::size_t docs, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<int> assignment;
  Dated out;
  const int block = years / static_cast<int>(fields);
  for (std::size_t i = 0; i < docs; ++i) {
    const auto f = static_cast<int>(i % fields);
    assignment.push_back(f);
    const int y = directional ? f * block + static_cast<int>(rng.below(static_cast<std::uint64_t>(block)))
                              : static_cast<int>(rng.below(static_cast<std::uint64_t>(years)));
    out.years.push_back(1960 + y);
  }
  out.model = model_of(assignment);
  return out;
}

} // namespace fixtures
