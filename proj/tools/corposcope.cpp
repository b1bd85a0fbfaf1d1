// corposcope command-line interface: pipeline stages, reports and the
// read-only API server.

#include <csignal>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <httplib.h>

#include "corposcope/corposcope.hpp"

namespace {

using namespace corposcope;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  bool force = false;
  bool sequential = false;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Pipeline configuration (JSON)")->required();
  cmd->add_option("--seed", c.seed, "Global seed (overrides CORPOSCOPE_SEED and the config)");
  cmd->add_flag("--force", c.force, "Rerun the requested stages even if cached");
  cmd->add_flag("--sequential", c.sequential, "Single-threaded sampling for bit-identical runs");
  cmd->add_flag("-q,--quiet", c.quiet, "Suppress progress output");
}

int run_stages(const Common& c, const std::vector<std::string>& targets, bool require_deps) {
  auto cfg = pipeline::load_config(c.config, c.seed);
  pipeline::RunOptions opts;
  opts.force = c.force;
  opts.sequential = c.sequential;
  if (!c.quiet) opts.progress = [](const std::string& line) { std::cerr << line << "\n"; };
  pipeline::Runner runner(std::move(cfg), opts);
  runner.run(targets, require_deps);
  return 0;
}

httplib::Server* g_server = nullptr;

int serve(const std::string& bundle, const std::string& host, int port) {
  const server::ApiBundle api(bundle);
  httplib::Server srv;
  g_server = &srv;
  const std::string etag = "\"" + api.hash() + "\"";
  const std::string origin = api.cors_origin();
  srv.Get(".*", [&](const httplib::Request& req, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", origin);
    res.set_header("ETag", etag);
    res.set_header("Cache-Control", "public, max-age=31536000, immutable");
    if (req.get_header_value("If-None-Match") == etag) {
      res.status = 304;
      return;
    }
    server::Request r{req.path, {}};
    for (const auto& [k, v] : req.params) r.query.emplace(k, v);
    const auto out = api.handle(r);
    res.status = out.status;
    res.set_content(out.body, "application/json; charset=utf-8");
  });
  srv.Options(".*", [&](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", origin);
    res.set_header("Access-Control-Allow-Methods", "GET, OPTIONS");
    res.status = 204;
  });
  std::signal(SIGINT, [](int) { if (g_server) g_server->stop(); });
  std::signal(SIGTERM, [](int) { if (g_server) g_server->stop(); });
  std::cerr << "serving " << bundle << " (bundle " << api.hash().substr(0, 12) << ") on http://" << host << ":" << port << "\n";
  if (!srv.listen(host, port)) throw Error("cannot listen on " + host + ":" + std::to_string(port));
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"corposcope: corpus analytics pipeline and artifact server"};
  app.require_subcommand(1);

  Common common;
  std::vector<std::pair<CLI::App*, std::string>> stage_cmds;
  for (const auto& [name, help] : std::vector<std::pair<std::string, std::string>>{
           {"ingest", "Load, strip, tokenize and build the vocabulary"},
           {"annotate", "Taxon mentions and geographic tags"},
           {"lda", "Fit every topic model in the menu"},
           {"fields", "Embedding, fields, field graph and temporal bias"},
           {"diversity", "Diversity indices with bootstrap intervals"},
           {"serve-export", "Indexes consumed by the server"},
           {"all", "Run every stage and report"}}) {
    auto* cmd = app.add_subcommand(name, help);
    add_common(cmd, common);
    stage_cmds.emplace_back(cmd, name);
  }
  std::string kind;
  auto* report_cmd = app.add_subcommand("report", "Summary CSVs and SVG charts from completed stages");
  add_common(report_cmd, common);
  report_cmd->add_option("--kind", kind, "geo, taxa, topics, fields or diversity (default: all)")
      ->check(CLI::IsMember({"geo", "taxa", "topics", "fields", "diversity"}));

  std::string bundle, host = "127.0.0.1";
  int port = 8080;
  auto* serve_cmd = app.add_subcommand("serve", "Serve a complete bundle over HTTP");
  serve_cmd->add_option("--bundle", bundle, "Bundle directory")->required();
  serve_cmd->add_option("--host", host, "Bind address");
  serve_cmd->add_option("--port", port, "Port");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (serve_cmd->parsed()) return serve(bundle, host, port);
    if (report_cmd->parsed()) {
      const auto targets = kind.empty() ? pipeline::report_stages() : std::vector<std::string>{"report." + kind};
      return run_stages(common, targets, true);
    }
    for (const auto& [cmd, name] : stage_cmds) {
      if (!cmd->parsed()) continue;
      if (name == "all") {
        std::vector<std::string> everything;
        for (const auto& s : pipeline::stage_table()) everything.push_back(s.name);
        return run_stages(common, everything, false);
      }
      return run_stages(common, {name}, false);
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
