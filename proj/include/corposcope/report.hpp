#pragma once

// Aggregations behind the report CSVs and the matching server endpoints,
// plus minimal SVG charts. Every number here is recomputed from bundle
// artifacts; the server calls the same functions.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "corposcope/annotate.hpp"
#include "corposcope/artifacts.hpp"
#include "corposcope/lda.hpp"

namespace corposcope::report {

using artifacts::DocMeta;
using lda::Period;

// Period index of every document, keyed by doc_id.
inline std::map<std::string, std::size_t> doc_periods(const std::vector<DocMeta>& docs, const std::vector<Period>& periods) {
  std::vector<int> years;
  for (const auto& d : docs) years.push_back(d.year);
  const auto idx = lda::assign_periods(years, periods);
  std::map<std::string, std::size_t> out;
  for (std::size_t i = 0; i < docs.size(); ++i) out.emplace(docs[i].doc_id, idx[i]);
  return out;
}

inline std::vector<Period> parse_periods(const std::vector<std::string>& labels, const std::string& what) {
  std::vector<Period> out;
  for (const auto& l : labels) {
    const auto p = lda::parse_period(l);
    if (!p) throw ValidationError(what + ": malformed period '" + l + "' (expected FIRST-LAST)");
    out.push_back(*p);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Geography

struct GeoCount {
  std::string period;
  std::string role;
  std::string country;
  std::size_t articles = 0; // distinct documents tagged with the country
};

// Rows ordered by period, role, country.
inline std::vector<GeoCount> geo_counts(const std::vector<DocMeta>& docs, const std::vector<annotate::GeoTag>& tags,
                                        const std::vector<Period>& periods) {
  const auto period_of = doc_periods(docs, periods);
  std::map<std::tuple<std::size_t, std::string, std::string>, std::set<std::string>> cells;
  for (const auto& t : tags) {
    const auto it = period_of.find(t.doc_id);
    if (it == period_of.end()) throw ValidationError("geo tag for unknown document '" + t.doc_id + "'");
    cells[{it->second, std::string(annotate::to_string(t.role)), t.country_code}].insert(t.doc_id);
  }
  std::vector<GeoCount> out;
  for (const auto& [key, ids] : cells)
    out.push_back({periods[std::get<0>(key)].label(), std::get<1>(key), std::get<2>(key), ids.size()});
  return out;
}

inline std::string geo_csv(const std::vector<GeoCount>& rows) {
  artifacts::Csv csv({"period", "role", "country", "articles"});
  for (const auto& r : rows) csv.row({r.period, r.role, r.country, artifacts::num(r.articles)});
  return csv.str();
}

// ---------------------------------------------------------------------------
// Taxa

struct TaxonShare {
  std::string period;
  std::string taxon_id;
  std::string name;
  std::size_t articles = 0; // documents mentioning the taxon or a descendant
  std::size_t base = 0;     // documents in the period with any mention at the rank
  double percent = 0.0;
};

// Share of documents mentioning each taxon at `rank`, among documents of
// the period that mention anything resolvable at that rank. A document
// mentioning several such taxa counts toward each, so percentages can sum
// past 100.
inline std::vector<TaxonShare> taxon_shares(const std::vector<DocMeta>& docs, const std::vector<annotate::TaxonMention>& mentions,
                                            const annotate::TaxonomyTree& tree, const std::vector<Period>& periods,
                                            annotate::Rank rank) {
  const auto period_of = doc_periods(docs, periods);
  std::map<std::pair<std::size_t, std::string>, std::set<std::string>> cells;
  std::map<std::size_t, std::set<std::string>> base;
  for (const auto& m : mentions) {
    const auto a = annotate::ancestor_at_rank(m.taxon_id, rank, tree);
    if (!a) continue;
    const auto it = period_of.find(m.doc_id);
    if (it == period_of.end()) throw ValidationError("mention in unknown document '" + m.doc_id + "'");
    cells[{it->second, *a}].insert(m.doc_id);
    base[it->second].insert(m.doc_id);
  }
  std::vector<TaxonShare> out;
  for (const auto& [key, ids] : cells) {
    const auto n = base[key.first].size();
    out.push_back({periods[key.first].label(), key.second, tree.node(key.second).name, ids.size(), n,
                   100.0 * static_cast<double>(ids.size()) / static_cast<double>(n)});
  }
  return out;
}

inline std::string taxa_csv(const std::vector<TaxonShare>& rows) {
  artifacts::Csv csv({"period", "taxon_id", "name", "articles", "base", "percent"});
  for (const auto& r : rows)
    csv.row({r.period, r.taxon_id, r.name, artifacts::num(r.articles), artifacts::num(r.base), artifacts::num(r.percent)});
  return csv.str();
}

// ---------------------------------------------------------------------------
// Topics

struct TopicPeriod {
  std::size_t model = 0;
  std::size_t topic = 0;
  std::string label;
  std::string period;
  double prevalence = 0.0; // token-weighted mean theta within the period
  double enrichment = 0.0; // as stored by the lda stage
};

inline std::string topic_label(const artifacts::json& topic, std::size_t words = 3) {
  std::vector<std::string> w;
  for (const auto& t : topic.at("top_words")) {
    if (w.size() == words) break;
    w.push_back(t.at("word").get<std::string>());
  }
  return text::join(w, " ");
}

inline std::vector<TopicPeriod> topic_periods(const artifacts::fs::path& dir, std::size_t model, const std::vector<DocMeta>& docs,
                                              const std::vector<Period>& periods) {
  const auto topics = artifacts::read_json(dir / artifacts::path::lda_file(model, "topics.json"));
  const auto theta = artifacts::load_doc_theta(dir, model);
  std::map<std::string, int> year;
  for (const auto& d : docs) year.emplace(d.doc_id, d.year);
  std::vector<int> years;
  for (const auto& id : theta.doc_ids) {
    const auto it = year.find(id);
    if (it == year.end()) throw ValidationError("doc_theta names unknown document '" + id + "'");
    years.push_back(it->second);
  }
  const auto period_of = lda::assign_periods(years, periods);
  std::vector<std::vector<double>> mass(model, std::vector<double>(periods.size(), 0.0));
  std::vector<double> weight(periods.size(), 0.0);
  for (std::size_t d = 0; d < theta.doc_ids.size(); ++d) {
    const double w = static_cast<double>(theta.tokens[d]);
    weight[period_of[d]] += w;
    for (std::size_t k = 0; k < model; ++k) mass[k][period_of[d]] += w * theta.theta[d][k];
  }
  std::map<std::pair<std::size_t, std::string>, double> enrichment;
  for (const auto& r : artifacts::read_csv(dir / artifacts::path::lda_file(model, "enrichment.csv")).rows)
    enrichment[{artifacts::to_size(r.at(0)), r.at(1)}] = artifacts::to_double(r.at(2));

  std::vector<TopicPeriod> out;
  for (std::size_t k = 0; k < model; ++k) {
    const auto label = topic_label(topics.at("topics").at(k));
    for (std::size_t p = 0; p < periods.size(); ++p) {
      const auto e = enrichment.find({k, periods[p].label()});
      if (e == enrichment.end()) throw ValidationError("enrichment.csv lacks topic " + std::to_string(k) + " in " + periods[p].label());
      out.push_back({model, k, label, periods[p].label(), weight[p] > 0.0 ? mass[k][p] / weight[p] : 0.0, e->second});
    }
  }
  return out;
}

inline std::string topics_csv(const std::vector<TopicPeriod>& rows) {
  artifacts::Csv csv({"model", "topic", "label", "period", "prevalence", "enrichment"});
  for (const auto& r : rows)
    csv.row({artifacts::num(r.model), artifacts::num(r.topic), r.label, r.period, artifacts::num(r.prevalence),
             artifacts::num(r.enrichment)});
  return csv.str();
}

// ---------------------------------------------------------------------------
// Fields: pass-through of the permutation artifact

struct BiasYear {
  int year = 0;
  double variance = 0.0, variance_low = 0.0, variance_high = 0.0;
  double mean = 0.0, mean_low = 0.0, mean_high = 0.0;
};

inline std::vector<BiasYear> bias_series(const artifacts::json& permutation) {
  std::vector<BiasYear> out;
  const auto& years = permutation.at("years");
  for (std::size_t i = 0; i < years.size(); ++i) {
    const auto& v = permutation.at("variance").at(i);
    const auto& m = permutation.at("mean").at(i);
    out.push_back({years[i].get<int>(), v.at("observed").get<double>(), v.at("low").get<double>(), v.at("high").get<double>(),
                   m.at("observed").get<double>(), m.at("low").get<double>(), m.at("high").get<double>()});
  }
  return out;
}

inline std::string fields_csv(const std::vector<BiasYear>& rows) {
  artifacts::Csv csv({"year", "variance", "variance_low", "variance_high", "mean", "mean_low", "mean_high"});
  for (const auto& r : rows)
    csv.row({artifacts::num(r.year), artifacts::num(r.variance), artifacts::num(r.variance_low), artifacts::num(r.variance_high),
             artifacts::num(r.mean), artifacts::num(r.mean_low), artifacts::num(r.mean_high)});
  return csv.str();
}

// ---------------------------------------------------------------------------
// Diversity: pass-through with the role folded into the metric name

struct DiversityRow {
  std::string metric;
  std::string period;
  double value = 0.0, ci_low = 0.0, ci_high = 0.0;
};

inline std::vector<DiversityRow> diversity_rows(const artifacts::Table& t) {
  const auto metric = t.column("metric"), period = t.column("period"), role = t.column("role");
  const auto value = t.column("value"), lo = t.column("ci_low"), hi = t.column("ci_high");
  std::vector<DiversityRow> out;
  for (const auto& r : t.rows) {
    const std::string name = r.at(role) == "all" ? r.at(metric) : r.at(metric) + "." + r.at(role);
    out.push_back({name, r.at(period), artifacts::to_double(r.at(value)), artifacts::to_double(r.at(lo)), artifacts::to_double(r.at(hi))});
  }
  return out;
}

inline std::string diversity_csv(const std::vector<DiversityRow>& rows) {
  artifacts::Csv csv({"metric", "period", "value", "ci_low", "ci_high"});
  for (const auto& r : rows)
    csv.row({r.metric, r.period, artifacts::num(r.value), artifacts::num(r.ci_low), artifacts::num(r.ci_high)});
  return csv.str();
}

// ---------------------------------------------------------------------------
// SVG

struct Series {
  std::string name;
  std::vector<double> values; // NaN = gap
  std::vector<double> low;    // optional band, same length as values
  std::vector<double> high;
};

namespace detail {

inline std::string svg_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline const char* colour(std::size_t i) {
  static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return palette[i % 10];
}

} // namespace detail

// Line chart over categorical x positions, with optional shaded bands.
inline std::string svg_line_chart(const std::string& title, const std::vector<std::string>& x_labels,
                                  const std::vector<Series>& series) {
  constexpr double W = 720, H = 400, left = 60, right = 160, top = 40, bottom = 60;
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.values.size(); ++i) {
      for (double v : {s.values[i], s.low.empty() ? NAN : s.low[i], s.high.empty() ? NAN : s.high[i]})
        if (std::isfinite(v)) {
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
    }
  if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
  if (hi - lo < 1e-12) lo -= 0.5, hi += 0.5;
  const std::size_t n = x_labels.size();
  auto x = [&](std::size_t i) { return left + (n > 1 ? (W - left - right) * static_cast<double>(i) / static_cast<double>(n - 1) : (W - left - right) / 2); };
  auto y = [&](double v) { return top + (H - top - bottom) * (hi - v) / (hi - lo); };

  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"720\" height=\"400\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg += "<text x=\"" + detail::fmt(W / 2) + "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" + detail::svg_escape(title) + "</text>\n";
  svg += "<line x1=\"60\" y1=\"" + detail::fmt(H - bottom) + "\" x2=\"" + detail::fmt(W - right) + "\" y2=\"" + detail::fmt(H - bottom) + "\" stroke=\"#333\"/>\n";
  svg += "<line x1=\"60\" y1=\"40\" x2=\"60\" y2=\"" + detail::fmt(H - bottom) + "\" stroke=\"#333\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = lo + (hi - lo) * t / 4.0;
    svg += "<text x=\"55\" y=\"" + detail::fmt(y(v) + 4) + "\" text-anchor=\"end\">" + detail::fmt(v) + "</text>\n";
  }
  const std::size_t stride = std::max<std::size_t>(1, n / 12);
  for (std::size_t i = 0; i < n; i += stride)
    svg += "<text x=\"" + detail::fmt(x(i)) + "\" y=\"" + detail::fmt(H - bottom + 16) + "\" text-anchor=\"middle\">" +
           detail::svg_escape(x_labels[i]) + "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& S = series[s];
    if (!S.low.empty()) {
      std::string up, down;
      for (std::size_t i = 0; i < S.values.size(); ++i)
        if (std::isfinite(S.low[i]) && std::isfinite(S.high[i])) {
          up += detail::fmt(x(i)) + "," + detail::fmt(y(S.high[i])) + " ";
          down = detail::fmt(x(i)) + "," + detail::fmt(y(S.low[i])) + " " + down;
        }
      if (!up.empty())
        svg += "<polygon points=\"" + up + down + "\" fill=\"" + detail::colour(s) + "\" fill-opacity=\"0.2\" stroke=\"none\"/>\n";
    }
    std::string pts;
    for (std::size_t i = 0; i < S.values.size(); ++i) {
      if (!std::isfinite(S.values[i])) {
        if (!pts.empty()) svg += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" + detail::colour(s) + "\"/>\n";
        pts.clear();
        continue;
      }
      pts += detail::fmt(x(i)) + "," + detail::fmt(y(S.values[i])) + " ";
    }
    if (!pts.empty()) svg += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" + detail::colour(s) + "\"/>\n";
    svg += "<text x=\"" + detail::fmt(W - right + 10) + "\" y=\"" + detail::fmt(top + 14.0 * static_cast<double>(s)) + "\" fill=\"" +
           detail::colour(s) + "\">" + detail::svg_escape(S.name) + "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

} // namespace corposcope::report
