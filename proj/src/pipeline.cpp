#include "kgforge/pipeline.hpp"

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <set>

#include "kgforge/error.hpp"
#include "kgforge/util.hpp"

namespace kgf {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string parent_dir(const std::string& path) {
  size_t slash = path.find_last_of('/');
  if (slash == std::string::npos) return ".";
  if (slash == 0) return "/";
  return path.substr(0, slash);
}

std::string resolve_path(const std::string& base, const std::string& path) {
  if (path.empty() || path.front() == '/') return path;
  return base + "/" + path;
}

std::string state_dir(const std::string& dd, const std::string& sid) {
  return dd + "/state/" + sid;
}
std::string delta_dir(const std::string& dd, const std::string& sid) {
  return dd + "/deltas/" + sid;
}
std::string snapshot_file(const std::string& dd) { return dd + "/snapshots/current.jsonl"; }
std::string snapshot_meta_file(const std::string& dd) { return dd + "/snapshots/meta.json"; }
std::string oplog_file(const std::string& dd) { return dd + "/oplog.jsonl"; }
std::string payload_dir(const std::string& dd) { return dd + "/payloads"; }
std::string agents_file(const std::string& dd) { return dd + "/agents.json"; }
std::string views_dir(const std::string& dd) { return dd + "/views"; }
std::string weights_file(const std::string& dd) { return dd + "/nerd/weights.json"; }
std::string embed_dir(const std::string& dd) { return dd + "/embeddings"; }
std::string live_dir(const std::string& dd) { return dd + "/live"; }

std::string require_string(const json& doc, const char* key) {
  if (!doc.contains(key) || !doc.at(key).is_string() || doc.at(key).get<std::string>().empty()) {
    raise(Errc::ConfigError, std::string("pipeline config needs a non-empty string \"") + key +
                                 "\"");
  }
  return doc.at(key).get<std::string>();
}

json read_json_file(const std::string& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    raise(Errc::IoError, path + ": " + e.what());
  }
}

double timer_millis(std::chrono::steady_clock::time_point start) {
  auto stop = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(stop - start).count();
}

std::vector<EntityId> changed_subjects(const KgSnapshot& before, const KgSnapshot& after) {
  std::set<EntityId> candidates;
  for (const auto& s : before.subjects()) candidates.insert(s);
  for (const auto& s : after.subjects()) candidates.insert(s);
  std::vector<EntityId> out;
  for (const auto& s : candidates) {
    if (before.get_entity(s) != after.get_entity(s)) out.push_back(s);
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

PipelineConfig PipelineConfig::from_json(const json& doc, const std::string& base_dir) {
  if (!doc.is_object()) raise(Errc::ConfigError, "pipeline config must be a JSON object");
  PipelineConfig cfg;
  try {
    cfg.data_dir = resolve_path(base_dir, require_string(doc, "data_dir"));
    cfg.ontology_path = resolve_path(base_dir, require_string(doc, "ontology"));
    for (const auto& p : doc.value("sources", json::array())) {
      cfg.source_paths.push_back(resolve_path(base_dir, p.get<std::string>()));
    }
    if (doc.contains("thresholds")) {
      const auto& t = doc.at("thresholds");
      cfg.thresholds.tau_pos = t.value("tau_pos", cfg.thresholds.tau_pos);
      cfg.thresholds.tau_neg = t.value("tau_neg", cfg.thresholds.tau_neg);
      cfg.thresholds.theta_rel = t.value("theta_rel", cfg.thresholds.theta_rel);
      cfg.thresholds.theta_reject = t.value("theta_reject", cfg.thresholds.theta_reject);
    }
    cfg.blocking_path = resolve_path(base_dir, doc.value("blocking", ""));
    cfg.match_model_path = resolve_path(base_dir, doc.value("match_model", ""));
    cfg.view_catalog_path = resolve_path(base_dir, doc.value("view_catalog", ""));
    for (const auto& row : doc.value("embeddings", json::array())) {
      EmbedJob job;
      job.name = require_string(row, "name");
      job.config.kind = embedding_kind_from(row.value("kind", "transe"));
      job.config.dim = row.value("dim", job.config.dim);
      job.config.epochs = row.value("epochs", job.config.epochs);
      job.config.learning_rate = row.value("learning_rate", job.config.learning_rate);
      job.config.negatives_per_positive =
          row.value("negatives_per_positive", job.config.negatives_per_positive);
      job.config.margin = row.value("margin", job.config.margin);
      job.config.seed = row.value("seed", job.config.seed);
      cfg.embeddings.push_back(std::move(job));
    }
    if (doc.contains("live")) {
      const auto& live = doc.at("live");
      for (const auto& p : live.value("streams", json::array())) {
        cfg.live.stream_files.push_back(resolve_path(base_dir, p.get<std::string>()));
      }
      cfg.live.curation_stream = resolve_path(base_dir, live.value("curation_stream", ""));
      json operators = live.value("operators", json::object());
      for (const auto& [name, fragment] : operators.items()) {
        cfg.live.operators[name] = fragment.get<std::string>();
      }
      for (const auto& row : live.value("intents", json::array())) {
        IntentDef def;
        def.name = require_string(row, "name");
        for (const auto& t : row.value("arg_types", json::array())) {
          def.arg_types.push_back(t.get<std::string>());
        }
        for (const auto& alt : row.value("alternatives", json::array())) {
          IntentAlternative a;
          a.guard_type = alt.value("guard_type", "");
          a.guard_predicate = alt.value("guard_predicate", "");
          a.kgq_template = require_string(alt, "template");
          def.alternatives.push_back(std::move(a));
        }
        cfg.live.intents.push_back(std::move(def));
      }
      cfg.live.host = live.value("host", cfg.live.host);
      cfg.live.port = live.value("port", cfg.live.port);
    }
    cfg.link_seed = doc.value("link_seed", cfg.link_seed);
    cfg.nerd_seed = doc.value("nerd_seed", cfg.nerd_seed);
  } catch (const json::exception& e) {
    raise(Errc::ConfigError, std::string("malformed pipeline config: ") + e.what());
  }

  auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in_unit(cfg.thresholds.tau_pos) || !in_unit(cfg.thresholds.tau_neg) ||
      !in_unit(cfg.thresholds.theta_rel) || !in_unit(cfg.thresholds.theta_reject)) {
    raise(Errc::ConfigError, "thresholds must lie in [0, 1]");
  }
  if (cfg.thresholds.tau_neg > cfg.thresholds.tau_pos) {
    raise(Errc::ConfigError, "tau_neg must not exceed tau_pos");
  }
  if (cfg.live.port < 1 || cfg.live.port > 65535) {
    raise(Errc::ConfigError, "live.port must be a TCP port number");
  }
  std::set<std::string> job_names;
  for (const auto& job : cfg.embeddings) {
    if (!job_names.insert(job.name).second) {
      raise(Errc::ConfigError, "duplicate embedding job name: " + job.name);
    }
  }
  return cfg;
}

PipelineConfig PipelineConfig::load(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    raise(Errc::ConfigError, e.what());
  }
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    raise(Errc::ConfigError, path + ": " + e.what());
  }
  return from_json(doc, parent_dir(path));
}

// ---------------------------------------------------------------------------
// Run reports

ordered_json RunReport::to_json() const {
  ordered_json doc;
  doc["ok"] = ok;
  doc["log_head"] = log_head;
  if (!ok) doc["error"] = error;
  auto stage_rows = ordered_json::array();
  for (const auto& s : stages) {
    ordered_json row;
    row["stage"] = s.stage;
    row["millis"] = s.millis;
    row["counts"] = s.counts;
    stage_rows.push_back(std::move(row));
  }
  doc["stages"] = std::move(stage_rows);
  return doc;
}

void RunReport::save(const std::string& path) const {
  write_file_atomic(path, to_json().dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Directory lock

DirLock::DirLock(const std::string& data_dir) {
  ensure_dir(data_dir);
  path_ = data_dir + "/.lock";
  for (int attempt = 0; attempt < 2; ++attempt) {
    int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd >= 0) {
      std::string pid = std::to_string(::getpid()) + "\n";
      ssize_t n = ::write(fd, pid.data(), pid.size());
      (void)n;
      ::close(fd);
      return;
    }
    // A lock whose holder is no longer alive is left over from a crashed run
    // and safe to reclaim.
    std::string holder;
    if (file_exists(path_)) holder = read_file(path_);
    pid_t holder_pid = static_cast<pid_t>(std::strtol(holder.c_str(), nullptr, 10));
    if (holder_pid > 0 && ::kill(holder_pid, 0) == 0) break;
    ::unlink(path_.c_str());
  }
  raise(Errc::IoError, "data directory is locked by a running pipeline: " + path_);
}

DirLock::~DirLock() { ::unlink(path_.c_str()); }

// ---------------------------------------------------------------------------
// Pipeline

Pipeline::Pipeline(PipelineConfig config) : config_(std::move(config)) {
  ontology_ = Ontology::load(config_.ontology_path);
}

std::vector<SourceConfig> Pipeline::load_sources() const {
  std::vector<SourceConfig> out;
  std::set<std::string> seen;
  for (const auto& path : config_.source_paths) {
    SourceConfig source = SourceConfig::load(path);
    if (!seen.insert(source.source_id).second) {
      raise(Errc::ConfigError, "duplicate source id across configs: " + source.source_id);
    }
    out.push_back(std::move(source));
  }
  return out;
}

BlockingConfig Pipeline::blocking_config() const {
  if (!config_.blocking_path.empty()) return BlockingConfig::load(config_.blocking_path);
  BlockingConfig cfg;
  BlockingFunction prefix;
  prefix.kind = BlockingFunction::Kind::prefix;
  prefix.predicate = kNamePredicate;
  prefix.prefix_length = 4;
  BlockingFunction minhash;
  minhash.kind = BlockingFunction::Kind::qgram_minhash;
  minhash.predicate = kNamePredicate;
  minhash.q = 3;
  minhash.bands = 8;
  minhash.rows_per_band = 2;
  minhash.seed = config_.link_seed;
  cfg.functions = {prefix, minhash};
  return cfg;
}

MatchModel Pipeline::match_model() const {
  if (!config_.match_model_path.empty()) return MatchModel::load(config_.match_model_path);
  MatchModel model;
  model.kind = "logistic";
  model.bias = -4.0;
  MatchFeature name_sim;
  name_sim.predicate = kNamePredicate;
  name_sim.comparator = "qgram_jaccard";
  name_sim.weight = 6.0;
  MatchFeature type_match;
  type_match.predicate = kTypePredicate;
  type_match.comparator = "exact";
  type_match.weight = 1.0;
  model.features = {name_sim, type_match};
  return model;
}

SnapshotPtr Pipeline::published_snapshot() const {
  std::string path = snapshot_file(config_.data_dir);
  if (!file_exists(path)) return KgSnapshot::empty();
  uint64_t version = 0;
  std::string meta_path = snapshot_meta_file(config_.data_dir);
  if (file_exists(meta_path)) version = read_json_file(meta_path).value("version", 0);
  return KgSnapshot::load(path, version);
}

void Pipeline::publish_snapshot(const SnapshotPtr& snapshot) const {
  ensure_dir(config_.data_dir + "/snapshots");
  snapshot->save(snapshot_file(config_.data_dir));
  ordered_json meta;
  meta["version"] = snapshot->version();
  meta["facts"] = snapshot->size();
  write_file_atomic(snapshot_meta_file(config_.data_dir), meta.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Stage: ingest

ordered_json Pipeline::ingest_one(const SourceConfig& source) {
  RawRowSet rows = import_source(source);
  std::vector<SourceEntity> entities = transform_entities(rows, source);
  validate_pgf_config(source.pgf_rules, ontology_);
  entities = align_ontology(entities, source, ontology_);

  std::string sdir = state_dir(config_.data_dir, source.source_id);
  ensure_dir(sdir);
  std::vector<SourceEntity> prev;
  std::string t0 = "genesis";
  if (file_exists(sdir + "/entities.jsonl")) {
    prev = parse_entities_jsonl(read_file(sdir + "/entities.jsonl"));
    if (file_exists(sdir + "/meta.json")) {
      t0 = read_json_file(sdir + "/meta.json").value("tn", t0);
    }
  }

  std::string rendered = render_entities_jsonl(entities);
  std::string tn = hex64(fnv1a64(rendered));
  SourceDelta delta = compute_delta(prev, entities, source, t0, tn);

  std::string ddir = delta_dir(config_.data_dir, source.source_id);
  write_delta(delta, ddir);
  ordered_json delta_meta;
  delta_meta["t0"] = delta.t0;
  delta_meta["tn"] = delta.tn;
  write_file_atomic(ddir + "/meta.json", delta_meta.dump(2) + "\n");

  // The new source state is staged next to the consumed one and only promoted
  // once construction has applied the delta.
  write_file_atomic(sdir + "/next.jsonl", rendered);
  write_file_atomic(sdir + "/next-meta.json", delta_meta.dump(2) + "\n");

  ordered_json counts;
  counts["entities"] = entities.size();
  counts["added"] = delta.added.size();
  counts["deleted"] = delta.deleted.size();
  counts["updated"] = delta.updated.size();
  counts["volatile_facts"] = delta.volatile_dump.size();
  return counts;
}

StageReport Pipeline::ingest() {
  auto start = std::chrono::steady_clock::now();
  ensure_dir(config_.data_dir);
  ordered_json counts = ordered_json::object();
  for (const auto& source : load_sources()) {
    counts[source.source_id] = ingest_one(source);
  }
  return {"ingest", timer_millis(start), std::move(counts)};
}

// ---------------------------------------------------------------------------
// Stage: construct

void Pipeline::promote_state(const SourceConfig& source) const {
  std::string sdir = state_dir(config_.data_dir, source.source_id);
  if (!file_exists(sdir + "/next.jsonl")) return;
  write_file_atomic(sdir + "/entities.jsonl", read_file(sdir + "/next.jsonl"));
  if (file_exists(sdir + "/next-meta.json")) {
    write_file_atomic(sdir + "/meta.json", read_file(sdir + "/next-meta.json"));
    std::remove((sdir + "/next-meta.json").c_str());
  }
  std::remove((sdir + "/next.jsonl").c_str());
}

uint64_t Pipeline::append_subject_payload(OperationLog& log, const SnapshotPtr& next,
                                          const std::vector<EntityId>& changed,
                                          const std::string& payload_name) const {
  std::vector<ExtendedTriple> payload;
  for (const auto& entity : changed) {
    auto facts = next->get_entity(entity);
    payload.insert(payload.end(), facts.begin(), facts.end());
  }
  std::string body = render_triples_jsonl(payload);
  ensure_dir(payload_dir(config_.data_dir));
  std::string ref = payload_dir(config_.data_dir) + "/" + payload_name + "-" +
                    hex64(fnv1a64(body)) + ".jsonl";
  write_file_atomic(ref, body);
  return log.append(ref, changed);
}

SnapshotPtr Pipeline::construct_one(SnapshotPtr snapshot, const SourceConfig& source,
                                    OperationLog& log, ordered_json& counts) {
  std::string ddir = delta_dir(config_.data_dir, source.source_id);
  if (!file_exists(ddir + "/added.jsonl")) {
    counts["skipped"] = "no staged delta";
    return snapshot;
  }
  SourceDelta delta = read_delta(ddir);
  if (file_exists(ddir + "/meta.json")) {
    json meta = read_json_file(ddir + "/meta.json");
    delta.t0 = meta.value("t0", "");
    delta.tn = meta.value("tn", "");
  }
  if (delta.empty()) {
    counts["skipped"] = "empty delta";
    promote_state(source);
    return snapshot;
  }

  ConstructContext ctx;
  ctx.source = source;
  ctx.ontology = ontology_;
  ctx.blocking = blocking_config();
  ctx.matcher = match_model();
  ctx.tau_pos = config_.thresholds.tau_pos;
  ctx.tau_neg = config_.thresholds.tau_neg;
  ctx.theta_rel = config_.thresholds.theta_rel;
  ctx.link_seed = config_.link_seed;
  ctx.resolver = make_resolver(snapshot);

  FusionOutcome outcome = process_source_payloads(snapshot, delta, ctx);
  std::vector<EntityId> changed = changed_subjects(*snapshot, *outcome.snapshot);

  counts = outcome.report.to_json();
  counts["changed_entities"] = changed.size();
  if (!changed.empty()) {
    std::string payload_name = source.source_id + "-" + (delta.tn.empty() ? "delta" : delta.tn);
    counts["lsn"] = append_subject_payload(log, outcome.snapshot, changed, payload_name);
    publish_snapshot(outcome.snapshot);
  }
  promote_state(source);
  return changed.empty() ? snapshot : outcome.snapshot;
}

SnapshotPtr Pipeline::apply_curations(SnapshotPtr snapshot, OperationLog& log,
                                      ordered_json& counts) {
  const std::string& stream = config_.live.curation_stream;
  if (stream.empty() || !file_exists(stream)) return snapshot;
  std::vector<CurationRecord> records = read_curation_records(stream);
  if (records.empty()) return snapshot;

  SnapshotPtr corrected = apply_curation_to_snapshot(snapshot, records);
  std::vector<EntityId> changed = changed_subjects(*snapshot, *corrected);
  counts["records"] = records.size();
  counts["changed_entities"] = changed.size();
  if (changed.empty()) return snapshot;

  counts["lsn"] = append_subject_payload(log, corrected, changed, "curation");
  publish_snapshot(corrected);
  return corrected;
}

StageReport Pipeline::construct() {
  auto start = std::chrono::steady_clock::now();
  ensure_dir(config_.data_dir);
  OperationLog log = OperationLog::open(oplog_file(config_.data_dir));
  SnapshotPtr snapshot = published_snapshot();

  ordered_json counts = ordered_json::object();
  for (const auto& source : load_sources()) {
    ordered_json source_counts = ordered_json::object();
    snapshot = construct_one(snapshot, source, log, source_counts);
    counts[source.source_id] = std::move(source_counts);
  }

  ordered_json curation_counts = ordered_json::object();
  snapshot = apply_curations(snapshot, log, curation_counts);
  if (!curation_counts.empty()) counts["curation"] = std::move(curation_counts);

  std::vector<StoreAgent> agents;
  for (StoreKind kind : {StoreKind::analytics, StoreKind::inverted_index, StoreKind::kv,
                         StoreKind::vector}) {
    agents.push_back({store_kind_name(kind), make_store(kind), since_lsn_.value_or(0)});
  }
  int replayed = 0;
  for (auto& agent : agents) replayed += agent_replay(agent, log, 0);
  save_agent_progress(agents_file(config_.data_dir), agents);

  ordered_json store_hashes = ordered_json::object();
  for (const auto& agent : agents) store_hashes[agent.store_id] = agent.store->content_hash();
  ordered_json agent_counts;
  agent_counts["entries_replayed"] = replayed;
  agent_counts["store_lsn"] = freshness(agents).min_lsn;
  agent_counts["store_hashes"] = std::move(store_hashes);
  counts["agents"] = std::move(agent_counts);
  counts["log_head"] = log.head();
  counts["snapshot_version"] = snapshot->version();
  counts["facts"] = snapshot->size();
  return {"construct", timer_millis(start), std::move(counts)};
}

// ---------------------------------------------------------------------------
// Stage: views

ViewCatalog Pipeline::view_catalog() const {
  if (!config_.view_catalog_path.empty()) return ViewCatalog::load(config_.view_catalog_path);
  ViewCatalog catalog;
  catalog.register_view({"entity_features",
                         {},
                         StoreKind::analytics,
                         "entity_features",
                         "",
                         "entity_features",
                         std::nullopt});
  catalog.register_view(
      {"importance", {"entity_features"}, StoreKind::analytics, "importance", "", "importance",
       std::nullopt});
  catalog.register_view({"entity_view",
                         {"entity_features", "importance"},
                         StoreKind::kv,
                         "entity_view",
                         "",
                         "entity_view",
                         std::nullopt});
  catalog.register_view({"search_index",
                         {"entity_view"},
                         StoreKind::inverted_index,
                         "search_index",
                         "",
                         "search_index",
                         std::nullopt});
  return catalog;
}

StageReport Pipeline::views() {
  auto start = std::chrono::steady_clock::now();
  SnapshotPtr snapshot = published_snapshot();
  std::string vdir = views_dir(config_.data_dir);
  ensure_dir(vdir);

  struct ViewBuildState {
    size_t feature_rows = 0;
    std::vector<ImportanceRecord> importance;
    NerdView view;
    size_t aliases = 0;
  };
  auto state = std::make_shared<ViewBuildState>();

  ProcedureRegistry procedures;
  procedures.add("entity_features", [state](const ViewDefinition&, RefreshContext& ctx) {
    size_t rows = 0;
    ctx.snapshot->for_each([&](const ExtendedTriple& t) {
      if (t.predicate == kNamePredicate || t.predicate == kAliasPredicate ||
          t.predicate == kTypePredicate) {
        ++rows;
      }
    });
    state->feature_rows = rows;
  });
  procedures.add("importance", [state, vdir](const ViewDefinition&, RefreshContext& ctx) {
    state->importance = compute_importance(*ctx.snapshot, 0.85, 1e-10);
    std::string lines;
    for (const auto& rec : state->importance) {
      ordered_json row;
      row["entity"] = rec.entity.str();
      row["in_degree"] = rec.in_degree;
      row["out_degree"] = rec.out_degree;
      row["identities"] = rec.identities;
      row["pagerank"] = rec.pagerank;
      row["aggregate"] = rec.aggregate;
      lines += row.dump() + "\n";
    }
    write_file_atomic(vdir + "/importance.jsonl", lines);
  });
  Ontology ontology = ontology_;
  procedures.add("entity_view", [state, ontology](const ViewDefinition&, RefreshContext& ctx) {
    state->view = build_entity_view(*ctx.snapshot, state->importance, ontology);
  });
  procedures.add("search_index", [state, vdir](const ViewDefinition&, RefreshContext&) {
    std::string lines;
    for (const auto& [alias, indexes] : state->view.alias_index) {
      ordered_json row;
      row["alias"] = alias;
      auto ids = ordered_json::array();
      for (size_t i : indexes) ids.push_back(state->view.records[i].entity.str());
      row["entities"] = std::move(ids);
      lines += row.dump() + "\n";
    }
    write_file_atomic(vdir + "/alias_index.jsonl", lines);
    state->aliases = state->view.alias_index.size();
  });

  ViewCatalog catalog = view_catalog();
  std::vector<std::string> plan = catalog.plan_refresh(catalog.names());
  RefreshContext ctx;
  ctx.snapshot = snapshot;
  ctx.changed_entities = snapshot->subjects();
  RefreshReport report = refresh_views(catalog, plan, procedures, ctx);
  write_file_atomic(vdir + "/refresh-report.json", report.to_json().dump(2) + "\n");

  bool had_weights = file_exists(weights_file(config_.data_dir));
  nerd_weights(state->view);

  ordered_json counts;
  counts["plan"] = plan;
  counts["feature_rows"] = state->feature_rows;
  counts["importance_rows"] = state->importance.size();
  counts["aliases"] = state->aliases;
  counts["weights"] = had_weights ? "loaded" : "fit";
  counts["refresh"] = report.to_json();
  return {"views", timer_millis(start), std::move(counts)};
}

// ---------------------------------------------------------------------------
// Stage: embed

StageReport Pipeline::embed() {
  auto start = std::chrono::steady_clock::now();
  ordered_json counts;
  counts["jobs"] = config_.embeddings.size();
  if (!config_.embeddings.empty()) {
    SnapshotPtr snapshot = published_snapshot();
    TrainingView view = build_training_view(*snapshot);
    counts["training_facts"] = view.facts.size();
    ensure_dir(embed_dir(config_.data_dir));
    for (const auto& job : config_.embeddings) {
      std::vector<double> losses;
      EmbeddingModel model = train(view, job.config, &losses);
      model.save(embed_dir(config_.data_dir) + "/" + job.name + ".json");
      ordered_json row;
      row["kind"] = embedding_kind_name(model.kind);
      row["dim"] = model.dim;
      row["entities"] = model.entities.size();
      row["final_loss"] = losses.empty() ? 0.0 : losses.back();
      counts[job.name] = std::move(row);
    }
  }
  return {"embed", timer_millis(start), std::move(counts)};
}

// ---------------------------------------------------------------------------
// Stage: live-build

StageReport Pipeline::live_build() {
  auto start = std::chrono::steady_clock::now();
  SnapshotPtr snapshot = published_snapshot();
  OperationLog log = OperationLog::open(oplog_file(config_.data_dir));
  std::string ldir = live_dir(config_.data_dir);
  ensure_dir(ldir);
  write_file_atomic(ldir + "/stable_view.jsonl", snapshot->render_jsonl());
  ordered_json meta;
  meta["freshness_lsn"] = log.head();
  meta["version"] = snapshot->version();
  write_file_atomic(ldir + "/meta.json", meta.dump(2) + "\n");

  ordered_json counts;
  counts["facts"] = snapshot->size();
  counts["freshness_lsn"] = log.head();
  return {"live-build", timer_millis(start), std::move(counts)};
}

// ---------------------------------------------------------------------------
// Serving and inspection

DisambWeights Pipeline::nerd_weights(const NerdView& view) const {
  std::string path = weights_file(config_.data_dir);
  if (file_exists(path)) return DisambWeights::load(path);
  FitWeightsConfig fit;
  fit.seed = config_.nerd_seed;
  try {
    DisambWeights fitted = fit_weights(view, fit);
    ensure_dir(parent_dir(path));
    fitted.save(path);
    return fitted;
  } catch (const Error&) {
    // A KG too small to calibrate on keeps conservative hand-set weights;
    // nothing is persisted so a later, larger build still fits.
    DisambWeights fallback;
    fallback.weights = {{"alias_similarity", 3.5},
                        {"relationship_overlap", 3.0},
                        {"profile_overlap", 3.0},
                        {"type_match", 0.5},
                        {"log_importance", 0.2}};
    fallback.bias = -1.0;
    fallback.theta_reject = config_.thresholds.theta_reject;
    return fallback;
  }
}

ObjectResolver Pipeline::make_resolver(const SnapshotPtr& snapshot) const {
  auto importance = compute_importance(*snapshot, 0.85, 1e-10);
  auto view = std::make_shared<NerdView>(build_entity_view(*snapshot, importance, ontology_));
  auto weights = std::make_shared<DisambWeights>(nerd_weights(*view));
  double theta = config_.thresholds.theta_reject;
  return [view, weights, theta](const std::string& literal,
                                const std::vector<std::string>& subject_context,
                                const std::string& expected_type) {
    return resolve_object(*view, *weights, literal, subject_context, expected_type, theta);
  };
}

LiveService Pipeline::make_service() const {
  std::string ldir = live_dir(config_.data_dir);
  std::string stable_path = ldir + "/stable_view.jsonl";
  if (!file_exists(stable_path)) {
    raise(Errc::StageMissing, "no exported live view at " + stable_path +
                                  "; run live-build first");
  }
  std::vector<ExtendedTriple> stable = parse_triples_jsonl(read_file(stable_path));
  uint64_t freshness_lsn = 0;
  uint64_t version = 0;
  if (file_exists(ldir + "/meta.json")) {
    json meta = read_json_file(ldir + "/meta.json");
    freshness_lsn = meta.value("freshness_lsn", 0);
    version = meta.value("version", 0);
  }

  SnapshotPtr snapshot = KgSnapshot::from_triples(stable, version);
  auto importance = compute_importance(*snapshot, 0.85, 1e-10);
  NerdView view = build_entity_view(*snapshot, importance, ontology_);
  DisambWeights weights = nerd_weights(view);

  std::vector<StreamRecord> streams;
  for (const auto& path : config_.live.stream_files) {
    for (auto& record : read_stream_records(path)) streams.push_back(std::move(record));
  }

  LiveService service;
  service.indexes = build_live_indexes(stable, streams, view, weights);
  service.indexes.freshness_lsn = freshness_lsn;

  // Curation records newer than the exported view are replayed so a restarted
  // server matches the hot state; the scratch journal keeps the replay from
  // appending duplicates to the real stream.
  const std::string& stream = config_.live.curation_stream;
  if (!stream.empty() && file_exists(stream)) {
    std::string scratch = ldir + "/.curation-replay.jsonl";
    for (const auto& record : read_curation_records(stream)) {
      service.indexes = apply_curation(std::move(service.indexes), record, scratch);
    }
    std::remove(scratch.c_str());
  }

  for (const auto& [name, fragment] : config_.live.operators) {
    service.operators.register_op(name, fragment, service.max_depth);
  }
  for (const auto& def : config_.live.intents) service.intents.register_intent(def);
  return service;
}

ordered_json Pipeline::inspect(const EntityId& entity) const {
  SnapshotPtr snapshot = published_snapshot();
  if (!snapshot->has_entity(entity)) {
    raise(Errc::UnknownEntity, "no entity " + entity.str() + " in the published snapshot");
  }
  SourceTrustTable trust = update_source_trust(*snapshot, ontology_, 0.8, 50, 1e-6);

  ordered_json doc;
  doc["entity"] = entity.str();
  doc["snapshot_version"] = snapshot->version();
  auto lineage = ordered_json::array();
  auto facts = ordered_json::array();
  for (const auto& fact : snapshot->get_entity(entity)) {
    ordered_json row;
    row["predicate"] = fact.predicate;
    if (fact.r_id) row["r_id"] = *fact.r_id;
    if (fact.r_predicate) row["r_predicate"] = *fact.r_predicate;
    row["object"] = fact.object;
    row["object_kind"] = object_kind_name(fact.object_kind);
    if (fact.locale) row["locale"] = *fact.locale;
    row["sources"] = fact.sources;
    row["trust"] = fact.trust;
    row["confidence"] = estimate_fact_confidence(fact, trust).probability;
    facts.push_back(std::move(row));
    if (fact.predicate == kSameAsPredicate) lineage.push_back(fact.object);
  }
  doc["facts"] = std::move(facts);
  doc["lineage"] = std::move(lineage);
  return doc;
}

// ---------------------------------------------------------------------------
// Full runs

RunReport Pipeline::run(std::optional<uint64_t> since_lsn, const std::string& report_path) {
  since_lsn_ = since_lsn;
  ensure_dir(config_.data_dir);
  std::string out = report_path.empty() ? config_.data_dir + "/run-report.json" : report_path;

  RunReport report;
  struct Stage {
    const char* name;
    StageReport (Pipeline::*fn)();
  };
  const Stage stage_fns[] = {{"ingest", &Pipeline::ingest},
                             {"construct", &Pipeline::construct},
                             {"views", &Pipeline::views},
                             {"embed", &Pipeline::embed},
                             {"live-build", &Pipeline::live_build}};
  try {
    DirLock lock(config_.data_dir);
    for (const auto& stage : stage_fns) {
      try {
        report.stages.push_back((this->*stage.fn)());
      } catch (const Error& e) {
        report.error = std::string(stage.name) + ": " + e.what();
        break;
      } catch (const std::exception& e) {
        report.error = std::string(stage.name) + ": " + e.what();
        break;
      }
    }
    report.ok = report.error.empty();
  } catch (const Error& e) {
    report.ok = false;
    report.error = std::string("lock: ") + e.what();
  }
  report.log_head = OperationLog::open(oplog_file(config_.data_dir)).head();
  report.save(out);
  since_lsn_.reset();
  return report;
}

}  // namespace kgf
