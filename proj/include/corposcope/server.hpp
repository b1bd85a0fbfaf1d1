#pragma once

// Read-only JSON API over a complete artifact bundle. The bundle is loaded
// once into memory; `handle` is a pure function of the bundle and the
// request, so identical requests give identical bodies.

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "corposcope/annotate.hpp"
#include "corposcope/artifacts.hpp"
#include "corposcope/error.hpp"
#include "corposcope/fields.hpp"
#include "corposcope/hash.hpp"
#include "corposcope/pipeline.hpp"
#include "corposcope/report.hpp"
#include "corposcope/text.hpp"

namespace corposcope::server {

namespace fs = std::filesystem;
using artifacts::json;

struct Request {
  std::string path;
  std::map<std::string, std::string> query;
};

struct Response {
  int status = 200;
  std::string body;
};

// Raised while handling a request; mapped to a JSON error body.
struct HttpError : std::runtime_error {
  int status;
  HttpError(int s, const std::string& reason) : std::runtime_error(reason), status(s) {}
};

inline HttpError not_found(const std::string& what) { return {404, what}; }
inline HttpError bad_request(const std::string& what) { return {400, what}; }

inline std::string fill_template(std::string tpl, const std::string& id) {
  for (std::size_t at = tpl.find("{id}"); at != std::string::npos; at = tpl.find("{id}", at + id.size())) tpl.replace(at, 4, id);
  return tpl;
}

class ApiBundle {
public:
  // Refuses incomplete bundles, listing what is missing.
  explicit ApiBundle(const fs::path& dir) : dir_(dir) {
    const auto status = pipeline::check_bundle(dir);
    if (!status.complete) throw ValidationError("bundle " + dir.string() + " is incomplete:\n  " + text::join(status.problems, "\n  "));
    hash_ = sha256_file(dir / artifacts::kBundleFile);
    const auto bundle = artifacts::read_json(dir / artifacts::kBundleFile);
    const auto& cfg = bundle.at("config");
    const auto& eff = cfg.at("effective");
    server_cfg_ = cfg.value("server", json::object());
    models_ = eff.at("models").get<std::vector<std::size_t>>();
    field_model_ = eff.at("field_model").get<std::size_t>();
    presence_cutoff_ = eff.at("presence_cutoff").get<double>();
    geo_periods_ = report::parse_periods(eff.at("geo_periods").get<std::vector<std::string>>(), "geo_periods");
    topic_periods_ = report::parse_periods(eff.at("topic_periods").get<std::vector<std::string>>(), "topic_periods");

    docs_ = artifacts::load_documents(dir);
    for (std::size_t i = 0; i < docs_.size(); ++i) doc_index_.emplace(docs_[i].doc_id, i);
    geo_period_ = report::doc_periods(docs_, geo_periods_);
    topic_period_ = report::doc_periods(docs_, topic_periods_);
    tags_ = artifacts::load_geo_tags(dir);
    tree_ = annotate::parse_taxonomy(text::read_file(dir / artifacts::path::taxonomy));
    mentions_ = artifacts::load_mentions(dir);
    for (std::size_t i = 0; i < mentions_.size(); ++i) {
      doc_mentions_[mentions_[i].doc_id].push_back(i);
      for (const auto* n : tree_.lineage(mentions_[i].taxon_id)) subtree_mentions_[n->taxon_id].push_back(i);
    }
    for (const auto& c : artifacts::load_citations(dir)) {
      cites_[c.from].push_back(c.to);
      cited_by_[c.to].push_back(c.from);
    }
    for (const auto& e : artifacts::load_embedding(dir)) field_of_.emplace(e.doc_id, e.field);

    for (auto k : models_) {
      auto& m = models_data_[k];
      m.topics = artifacts::read_json(dir / artifacts::path::lda_file(k, "topics.json"));
      m.graph = artifacts::read_json(dir / artifacts::path::lda_file(k, "topic_graph.json"));
      m.theta = artifacts::load_doc_theta(dir, k);
      for (std::size_t i = 0; i < m.theta.doc_ids.size(); ++i) m.theta_row.emplace(m.theta.doc_ids[i], i);
      for (auto& p : artifacts::load_page_theta(dir, k)) m.pages[p.doc_id].push_back(std::move(p));
      m.periods = report::topic_periods(dir, k, docs_, topic_periods_);
    }
    fields_ = artifacts::read_json(dir / artifacts::path::fields);
    field_graph_ = artifacts::read_json(dir / artifacts::path::field_graph);
    permutation_ = artifacts::read_json(dir / artifacts::path::permutation);
    index_ = artifacts::read_json(dir / artifacts::path::api_index);
  }

  const std::string& hash() const { return hash_; }
  std::string cors_origin() const { return server_cfg_.value("cors_origin", "*"); }

  Response handle(const Request& req) const {
    try {
      return {200, route(req).dump()};
    } catch (const HttpError& e) {
      return {e.status, json{{"error", e.status == 404 ? "not_found" : "bad_request"}, {"reason", e.what()}}.dump()};
    }
  }

private:
  struct ModelData {
    json topics, graph;
    artifacts::ThetaTable theta;
    std::map<std::string, std::size_t> theta_row;
    std::map<std::string, std::vector<artifacts::PageTheta>> pages;
    std::vector<report::TopicPeriod> periods;
  };

  json route(const Request& req) const {
    const auto parts = text::split(req.path.size() > 1 ? req.path.substr(1) : std::string(), '/');
    const auto& q = req.query;
    if (req.path == "/health") return {{"status", "ok"}, {"bundle", hash_}};
    if (parts.size() == 2 && parts[0] == "topics") return topic(parse_index(parts[1], "topic"), model(q));
    if (parts.size() == 1 && parts[0] == "documents") return document_list(q);
    if (parts.size() == 2 && parts[0] == "documents") return document(parts[1], model(q));
    if (parts.size() == 2 && parts[0] == "taxa") return taxon(parts[1]);
    if (parts.size() == 1 && parts[0] == "fields") return field_list();
    if (parts.size() == 2 && parts[0] == "fields") return field(parse_index(parts[1], "field"));
    if (parts.size() == 2 && parts[0] == "graph" && parts[1] == "topics") return models_data_.at(model(q)).graph;
    if (parts.size() == 2 && parts[0] == "graph" && parts[1] == "fields") return field_graph_;
    if (parts.size() == 2 && parts[0] == "authors") return author(parts[1], model(q));
    if (parts.size() == 1 && parts[0] == "geo") return geo(q);
    throw not_found("no route for " + req.path);
  }

  // ---- parameters

  static std::size_t parse_index(const std::string& s, const std::string& what) {
    if (s.empty() || s.size() > 9 || !std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; }))
      throw bad_request(what + " must be a non-negative integer, got '" + s + "'");
    return std::stoul(s);
  }

  std::size_t model(const std::map<std::string, std::string>& q) const {
    const auto it = q.find("model");
    if (it == q.end()) return field_model_;
    const auto k = parse_index(it->second, "model");
    if (!models_data_.count(k)) throw not_found("no topic model with K=" + it->second);
    return k;
  }

  static std::pair<std::size_t, std::size_t> page(const std::map<std::string, std::string>& q) {
    std::size_t offset = 0, limit = 50;
    if (const auto it = q.find("offset"); it != q.end()) offset = parse_index(it->second, "offset");
    if (const auto it = q.find("limit"); it != q.end()) limit = parse_index(it->second, "limit");
    if (limit == 0) throw bad_request("limit must be >= 1");
    return {offset, limit};
  }

  static json paginate(const json& items, std::pair<std::size_t, std::size_t> pg) {
    json out = json::array();
    for (std::size_t i = pg.first; i < items.size() && i < pg.first + pg.second; ++i) out.push_back(items[i]);
    return {{"total", items.size()}, {"offset", pg.first}, {"limit", pg.second}, {"items", out}};
  }

  std::optional<std::string> link(const char* kind, const std::string& id) const {
    const auto links = server_cfg_.value("links", json::object());
    if (!links.contains(kind)) return std::nullopt;
    return fill_template(links.at(kind).get<std::string>(), id);
  }

  // ---- documents

  json doc_summary(const artifacts::DocMeta& d) const {
    json j = artifacts::to_json(d);
    const auto f = field_of_.find(d.doc_id);
    j["field"] = f == field_of_.end() || f->second < 0 ? json(nullptr) : json(f->second);
    j["geo_period"] = geo_periods_[geo_period_.at(d.doc_id)].label();
    j["topic_period"] = topic_periods_[topic_period_.at(d.doc_id)].label();
    return j;
  }

  const artifacts::DocMeta& doc(const std::string& id) const {
    const auto it = doc_index_.find(id);
    if (it == doc_index_.end()) throw not_found("unknown document '" + id + "'");
    return docs_[it->second];
  }

  json document(const std::string& id, std::size_t k) const {
    const auto& d = doc(id);
    json j = doc_summary(d);
    j["model"] = k;
    json pages = json::array();
    const auto& m = models_data_.at(k);
    if (const auto it = m.pages.find(id); it != m.pages.end())
      for (const auto& p : it->second) pages.push_back({{"page_index", p.page_index}, {"theta", p.theta}});
    j["pages"] = pages;
    const auto row = m.theta_row.find(id);
    j["theta"] = row == m.theta_row.end() ? json(nullptr) : json(m.theta.theta[row->second]);
    json mentions = json::array();
    if (const auto it = doc_mentions_.find(id); it != doc_mentions_.end())
      for (auto i : it->second) {
        const auto& mm = mentions_[i];
        mentions.push_back({{"page_index", mm.page_index}, {"begin", mm.begin}, {"end", mm.end}, {"surface", mm.surface},
                            {"taxon_id", mm.taxon_id}, {"name", tree_.node(mm.taxon_id).name}});
      }
    j["mentions"] = mentions;
    auto ids = [](const std::map<std::string, std::vector<std::string>>& m, const std::string& key) {
      const auto it = m.find(key);
      return it == m.end() ? json::array() : json(it->second);
    };
    j["citations"] = {{"out", ids(cites_, id)}, {"in", ids(cited_by_, id)}};
    const auto l = link("document", id);
    j["link"] = l ? json(*l) : json(nullptr);
    return j;
  }

  json document_list(const std::map<std::string, std::string>& q) const {
    std::optional<int> field;
    if (const auto it = q.find("field"); it != q.end()) {
      const auto f = parse_index(it->second, "field");
      if (f >= fields_.at("fields").size()) throw not_found("unknown field " + it->second);
      field = static_cast<int>(f);
    }
    std::optional<std::string> period;
    if (const auto it = q.find("period"); it != q.end()) {
      if (!known_period(it->second)) throw bad_request("unknown period '" + it->second + "'");
      period = it->second;
    }
    json items = json::array();
    for (const auto& d : docs_) {
      const auto s = doc_summary(d);
      if (field && s["field"] != *field) continue;
      if (period && s["geo_period"] != *period && s["topic_period"] != *period) continue;
      items.push_back(s);
    }
    auto out = paginate(items, page(q));
    out["field"] = field ? json(*field) : json(nullptr);
    out["period"] = period ? json(*period) : json(nullptr);
    return out;
  }

  bool known_period(const std::string& label) const {
    for (const auto* ps : {&geo_periods_, &topic_periods_})
      for (const auto& p : *ps)
        if (p.label() == label) return true;
    return false;
  }

  // ---- topics

  json topic(std::size_t t, std::size_t k) const {
    const auto& m = models_data_.at(k);
    if (t >= k) throw not_found("model K=" + std::to_string(k) + " has no topic " + std::to_string(t));
    const auto& entry = m.topics.at("topics").at(t);
    json prevalence = json::array();
    for (const auto& r : m.periods)
      if (r.topic == t) prevalence.push_back({{"period", r.period}, {"prevalence", r.prevalence}, {"enrichment", r.enrichment}});
    json related = json::array();
    std::vector<json> edges;
    for (const auto& e : m.graph.at("edges")) {
      const auto a = e.at("a").get<std::size_t>(), b = e.at("b").get<std::size_t>();
      if (a != t && b != t) continue;
      const auto other = a == t ? b : a;
      edges.push_back({{"topic", other}, {"label", m.topics.at("topics").at(other).at("label")}, {"pmi", e.at("pmi")},
                       {"cooccurrences", e.at("cooccurrences")}});
    }
    std::stable_sort(edges.begin(), edges.end(), [](const json& x, const json& y) {
      return x["pmi"].get<double>() != y["pmi"].get<double>() ? x["pmi"].get<double>() > y["pmi"].get<double>()
                                                              : x["topic"].get<std::size_t>() < y["topic"].get<std::size_t>();
    });
    for (auto& e : edges) related.push_back(std::move(e));
    // Documents in which the topic occurs, strongest first.
    std::vector<std::pair<double, std::string>> docs;
    for (std::size_t d = 0; d < m.theta.doc_ids.size(); ++d)
      if (m.theta.theta[d][t] >= presence_cutoff_) docs.emplace_back(m.theta.theta[d][t], m.theta.doc_ids[d]);
    std::sort(docs.begin(), docs.end(), [](const auto& x, const auto& y) { return x.first != y.first ? x.first > y.first : x.second < y.second; });
    json doc_list = json::array();
    for (const auto& [w, id] : docs) doc_list.push_back({{"doc_id", id}, {"year", doc(id).year}, {"theta", w}});
    return {{"model", k},
            {"topic", t},
            {"label", entry.at("label")},
            {"top_words", entry.at("top_words")},
            {"prevalence", prevalence},
            {"related_topics", related},
            {"documents", doc_list}};
  }

  // ---- taxa

  json taxon_node(const annotate::TaxonNode& n) const {
    const auto it = subtree_mentions_.find(n.taxon_id);
    std::set<std::string> docs;
    if (it != subtree_mentions_.end())
      for (auto i : it->second) docs.insert(mentions_[i].doc_id);
    return {{"taxon_id", n.taxon_id},
            {"name", n.name},
            {"rank", annotate::to_string(n.rank)},
            {"division", n.division},
            {"mentions", it == subtree_mentions_.end() ? 0 : it->second.size()},
            {"articles", docs.size()},
            {"has_children", !tree_.children(n.taxon_id).empty()}};
  }

  json taxon(const std::string& id) const {
    if (!tree_.contains(id)) throw not_found("unknown taxon '" + id + "'");
    const auto& n = tree_.node(id);
    json j = taxon_node(n);
    json lineage = json::array(), children = json::array();
    for (const auto* a : tree_.lineage(id)) lineage.push_back({{"taxon_id", a->taxon_id}, {"name", a->name}, {"rank", annotate::to_string(a->rank)}});
    for (const auto* c : tree_.children(id)) children.push_back(taxon_node(*c));
    j["lineage"] = lineage;
    j["children"] = children;

    std::vector<std::set<std::string>> per_period(topic_periods_.size());
    std::vector<annotate::TaxonMention> subtree;
    if (const auto it = subtree_mentions_.find(id); it != subtree_mentions_.end())
      for (auto i : it->second) {
        per_period[topic_period_.at(mentions_[i].doc_id)].insert(mentions_[i].doc_id);
        subtree.push_back(mentions_[i]);
      }
    json periods = json::array();
    for (std::size_t p = 0; p < topic_periods_.size(); ++p)
      periods.push_back({{"period", topic_periods_[p].label()}, {"articles", per_period[p].size()},
                         {"documents", std::vector<std::string>(per_period[p].begin(), per_period[p].end())}});
    j["documents_per_period"] = periods;
    j["division_rollup"] = annotate::rollup_division(subtree, tree_);
    const auto l = link("taxon", id);
    j["link"] = l ? json(*l) : json(nullptr);
    return j;
  }

  // ---- fields

  json delta_series(std::size_t f) const {
    json out = json::array();
    const auto& years = permutation_.at("years");
    const auto& delta = fields_.at("fields").at(f).at("delta");
    for (std::size_t i = 0; i < years.size() && i < delta.size(); ++i) out.push_back({{"year", years[i]}, {"delta", delta[i]}});
    return out;
  }

  json field_list() const {
    json list = json::array();
    for (const auto& f : fields_.at("fields")) {
      json kw = json::array();
      for (const auto& k : f.at("keywords")) {
        if (kw.size() == 5) break;
        kw.push_back(k.at("term"));
      }
      list.push_back({{"field", f.at("field")}, {"size", f.at("size")}, {"half_life", f.at("half_life")}, {"keywords", kw}});
    }
    return {{"model", fields_.at("model")}, {"k", fields_.at("k")},         {"field_count", fields_.at("field_count")},
            {"r2", fields_.at("r2")},       {"baseline", fields_.at("baseline")}, {"fields", list}};
  }

  json field(std::size_t f) const {
    if (f >= fields_.at("fields").size()) throw not_found("unknown field " + std::to_string(f));
    json j = fields_.at("fields").at(f);
    j.erase("delta");
    j["delta_series"] = delta_series(f);
    return j;
  }

  // ---- authors

  json author(const std::string& id, std::size_t k) const {
    const auto& docs = index_.at("author_documents");
    if (!docs.contains(id)) throw not_found("unknown author '" + id + "'");
    const auto& vectors = index_.at("author_vectors").at(std::to_string(k));
    json j = {{"author", id}, {"model", k}, {"documents", docs.at(id)}};
    if (vectors.contains(id)) {
      j["topic_mixture"] = vectors.at(id).at("topic_mixture");
      j["nearest"] = vectors.at(id).at("nearest");
    } else {
      j["topic_mixture"] = nullptr;
      j["nearest"] = json::array();
    }
    return j;
  }

  // ---- geography

  json geo(const std::map<std::string, std::string>& q) const {
    std::optional<std::string> role, period;
    if (const auto it = q.find("role"); it != q.end()) {
      if (it->second != "content" && it->second != "author") throw bad_request("role must be 'content' or 'author'");
      role = it->second;
    }
    if (const auto it = q.find("period"); it != q.end()) {
      if (std::none_of(geo_periods_.begin(), geo_periods_.end(), [&](const auto& p) { return p.label() == it->second; }))
        throw bad_request("unknown geography period '" + it->second + "'");
      period = it->second;
    }
    json rows = json::array();
    for (const auto& r : report::geo_counts(docs_, tags_, geo_periods_)) {
      if ((role && r.role != *role) || (period && r.period != *period)) continue;
      rows.push_back({{"period", r.period}, {"role", r.role}, {"country", r.country}, {"articles", r.articles}});
    }
    return {{"role", role ? json(*role) : json(nullptr)}, {"period", period ? json(*period) : json(nullptr)}, {"rows", rows}};
  }

  fs::path dir_;
  std::string hash_;
  json server_cfg_;
  std::vector<std::size_t> models_;
  std::size_t field_model_ = 0;
  double presence_cutoff_ = 0.05;
  std::vector<lda::Period> geo_periods_, topic_periods_;
  std::vector<artifacts::DocMeta> docs_;
  std::map<std::string, std::size_t> doc_index_;
  std::map<std::string, std::size_t> geo_period_, topic_period_;
  std::vector<annotate::GeoTag> tags_;
  annotate::TaxonomyTree tree_;
  std::vector<annotate::TaxonMention> mentions_;
  std::map<std::string, std::vector<std::size_t>> doc_mentions_, subtree_mentions_;
  std::map<std::string, std::vector<std::string>> cites_, cited_by_;
  std::map<std::string, int> field_of_;
  std::map<std::size_t, ModelData> models_data_;
  json fields_, field_graph_, permutation_, index_;
};

} // namespace corposcope::server
