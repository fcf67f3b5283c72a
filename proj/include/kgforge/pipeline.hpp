#pragma once
// Pipeline driver: wires ingestion, construction, view refresh, embedding
// training, and live index builds over one data directory, with a durable
// operation log between construction and the serving stores. Each stage is
// restartable; the published snapshot only advances after a stage completes.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kgforge/embed.hpp"
#include "kgforge/engine.hpp"
#include "kgforge/fuse.hpp"
#include "kgforge/ingest.hpp"
#include "kgforge/link.hpp"
#include "kgforge/live.hpp"
#include "kgforge/nerd.hpp"
#include "kgforge/ontology.hpp"
#include "kgforge/snapshot.hpp"

namespace kgf {

struct Thresholds {
  double tau_pos = 0.9;
  double tau_neg = 0.1;
  double theta_rel = 0.5;
  double theta_reject = 0.9;
};

struct EmbedJob {
  std::string name;
  EmbedTrainConfig config;
};

struct LiveSettings {
  std::vector<std::string> stream_files;
  std::string curation_stream;  // empty means no curation source
  std::map<std::string, std::string> operators;
  std::vector<IntentDef> intents;
  std::string host = "127.0.0.1";
  int port = 8642;
};

// One JSON file describing a deployment: where the data directory lives,
// which sources feed it, and how construction and serving are tuned.
// Relative paths resolve against the config file's directory.
struct PipelineConfig {
  std::string data_dir;
  std::string ontology_path;
  std::vector<std::string> source_paths;
  Thresholds thresholds;
  std::string blocking_path;      // empty -> name-based default blocking
  std::string match_model_path;   // empty -> name-matching default model
  std::string view_catalog_path;  // empty -> built-in catalog
  std::vector<EmbedJob> embeddings;
  LiveSettings live;
  uint64_t link_seed = 11;
  uint64_t nerd_seed = 7;

  static PipelineConfig from_json(const nlohmann::json& doc, const std::string& base_dir);
  static PipelineConfig load(const std::string& path);
};

struct StageReport {
  std::string stage;
  double millis = 0.0;
  nlohmann::ordered_json counts;
};

struct RunReport {
  std::vector<StageReport> stages;
  uint64_t log_head = 0;
  bool ok = false;
  std::string error;  // stage-tagged message when !ok

  nlohmann::ordered_json to_json() const;
  void save(const std::string& path) const;
};

// Holds <data_dir>/.lock for the lifetime of a pipeline run so two runs
// cannot interleave on the same directory. Serving never takes it.
class DirLock {
 public:
  explicit DirLock(const std::string& data_dir);
  ~DirLock();
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  std::string path_;
};

class Pipeline {
 public:
  explicit Pipeline(PipelineConfig config);

  StageReport ingest();
  StageReport construct();
  StageReport views();
  StageReport embed();
  StageReport live_build();

  // Store agents replay the operation log from this LSN instead of zero on
  // the next construct; run() sets it from its own argument.
  void set_replay_start(std::optional<uint64_t> lsn) { since_lsn_ = lsn; }

  // All stages in order under the directory lock; the report lands at
  // <data_dir>/run-report.json unless report_path overrides it.
  RunReport run(std::optional<uint64_t> since_lsn = std::nullopt,
                const std::string& report_path = "");

  // Provenance report for one entity of the published snapshot: every fact
  // with sources, trust, confidence, plus same_as lineage.
  nlohmann::ordered_json inspect(const EntityId& entity) const;

  // Serving handler over the exported live view; requires live_build output.
  LiveService make_service() const;

  SnapshotPtr published_snapshot() const;
  const PipelineConfig& config() const { return config_; }

 private:
  nlohmann::ordered_json ingest_one(const SourceConfig& source);
  SnapshotPtr construct_one(SnapshotPtr snapshot, const SourceConfig& source,
                            OperationLog& log, nlohmann::ordered_json& counts);
  SnapshotPtr apply_curations(SnapshotPtr snapshot, OperationLog& log,
                              nlohmann::ordered_json& counts);
  uint64_t append_subject_payload(OperationLog& log, const SnapshotPtr& next,
                                  const std::vector<EntityId>& changed,
                                  const std::string& payload_name) const;
  void publish_snapshot(const SnapshotPtr& snapshot) const;
  void promote_state(const SourceConfig& source) const;
  std::vector<SourceConfig> load_sources() const;
  BlockingConfig blocking_config() const;
  MatchModel match_model() const;
  ViewCatalog view_catalog() const;
  ObjectResolver make_resolver(const SnapshotPtr& snapshot) const;
  DisambWeights nerd_weights(const NerdView& view) const;

  PipelineConfig config_;
  Ontology ontology_;
  std::optional<uint64_t> since_lsn_;
};

}  // namespace kgf
