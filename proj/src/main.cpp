// kgforge command line: runs the batch pipeline stages over one data
// directory, serves the exported live view over HTTP, and reports per-fact
// provenance for any published entity.
//
// Exit codes: 0 on success, 2 for configuration problems, 3 when a pipeline
// stage fails (the stage is named on stderr).

#include <cstdio>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include "kgforge/error.hpp"
#include "kgforge/pipeline.hpp"

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

void print_stage(const kgf::StageReport& report) {
  ordered_json doc;
  doc["stage"] = report.stage;
  doc["millis"] = report.millis;
  doc["counts"] = report.counts;
  std::cout << doc.dump(2) << "\n";
}

int serve(const kgf::Pipeline& pipeline) {
  kgf::LiveService service = pipeline.make_service();
  // handle_request mutates per-session context, so requests serialize even
  // though the underlying indexes never change while serving.
  std::mutex handler_mutex;

  httplib::Server server;
  server.Post("/query", [&](const httplib::Request& req, httplib::Response& res) {
    json request;
    try {
      request = json::parse(req.body);
    } catch (const json::exception& e) {
      json error{{"error", std::string("FormatError: ") + e.what()}};
      res.set_content(error.dump() + "\n", "application/json");
      return;
    }
    json response;
    {
      std::lock_guard<std::mutex> lock(handler_mutex);
      response = service.handle_request(request);
    }
    res.set_content(response.dump() + "\n", "application/json");
  });
  server.Get("/health", [&](const httplib::Request&, httplib::Response& res) {
    json doc{{"ok", true}, {"freshness_lsn", service.indexes.freshness_lsn}};
    res.set_content(doc.dump() + "\n", "application/json");
  });

  const kgf::LiveSettings& live = pipeline.config().live;
  std::fprintf(stderr, "serving %s:%d (POST /query, GET /health)\n", live.host.c_str(),
               live.port);
  if (!server.listen(live.host, live.port)) {
    std::fprintf(stderr, "stage serve failed: cannot listen on %s:%d\n", live.host.c_str(),
                 live.port);
    return kExitStage;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"provenance-carrying knowledge graph pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "pipeline configuration JSON")
      ->required()
      ->type_name("FILE");
  std::optional<uint64_t> seed;
  app.add_option("--seed", seed, "override every configured RNG seed");

  CLI::App* cmd_ingest = app.add_subcommand("ingest", "import sources and stage deltas");
  CLI::App* cmd_construct =
      app.add_subcommand("construct", "fuse staged deltas into the knowledge graph");
  CLI::App* cmd_views = app.add_subcommand("views", "refresh the maintained view catalog");
  CLI::App* cmd_embed = app.add_subcommand("embed", "train configured embedding models");
  CLI::App* cmd_live = app.add_subcommand("live-build", "export the serving view");
  CLI::App* cmd_run = app.add_subcommand("run", "all stages in order under the run lock");
  CLI::App* cmd_serve = app.add_subcommand("serve", "answer queries over the exported view");
  CLI::App* cmd_inspect = app.add_subcommand("inspect", "provenance report for one entity");

  std::optional<uint64_t> since_lsn;
  cmd_run->add_option("--since-lsn", since_lsn, "replay the operation log from this LSN");
  cmd_construct->add_option("--since-lsn", since_lsn,
                            "replay the operation log from this LSN");
  std::string report_path;
  cmd_run->add_option("--report", report_path, "write the run report here")->type_name("FILE");
  std::string entity_text;
  cmd_inspect->add_option("entity", entity_text, "entity id, e.g. akg:42")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  kgf::PipelineConfig config;
  try {
    config = kgf::PipelineConfig::load(config_path);
    if (seed) {
      config.link_seed = *seed;
      config.nerd_seed = *seed;
      for (auto& job : config.embeddings) job.config.seed = *seed;
    }
  } catch (const kgf::Error& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  }

  std::unique_ptr<kgf::Pipeline> pipeline;
  try {
    pipeline = std::make_unique<kgf::Pipeline>(config);
  } catch (const kgf::Error& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  }

  std::string verb = app.get_subcommands().front()->get_name();
  try {
    if (cmd_run->parsed()) {
      kgf::RunReport report = pipeline->run(since_lsn, report_path);
      std::cout << report.to_json().dump(2) << "\n";
      if (!report.ok) {
        std::fprintf(stderr, "stage %s failed\n", report.error.c_str());
        return kExitStage;
      }
      return 0;
    }
    if (cmd_serve->parsed()) return serve(*pipeline);
    if (cmd_inspect->parsed()) {
      std::cout << pipeline->inspect(kgf::EntityId::parse(entity_text)).dump(2) << "\n";
      return 0;
    }

    kgf::DirLock lock(config.data_dir);
    kgf::StageReport report;
    if (cmd_ingest->parsed()) {
      report = pipeline->ingest();
    } else if (cmd_construct->parsed()) {
      pipeline->set_replay_start(since_lsn);
      report = pipeline->construct();
    } else if (cmd_views->parsed()) {
      report = pipeline->views();
    } else if (cmd_embed->parsed()) {
      report = pipeline->embed();
    } else if (cmd_live->parsed()) {
      report = pipeline->live_build();
    }
    print_stage(report);
    return 0;
  } catch (const kgf::Error& e) {
    std::fprintf(stderr, "stage %s failed: %s\n", verb.c_str(), e.what());
    return kExitStage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "stage %s failed: %s\n", verb.c_str(), e.what());
    return kExitStage;
  }
}
