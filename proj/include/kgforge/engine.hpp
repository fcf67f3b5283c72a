#pragma once
// Serving-side coordination: an append-only operation log with gapless LSNs,
// store agents that replay staged payloads into heterogeneous in-process
// stores, a dependency-aware view catalog, and entity importance maintained
// as a view.

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "kgforge/snapshot.hpp"

namespace kgf {

struct LogEntry {
  uint64_t lsn = 0;
  std::string payload_ref;
  std::vector<EntityId> changed_entities;
  std::string checksum;  // fnv1a64 hex of the staged payload bytes
};

// Durable JSONL log; every append lands on disk before the LSN is returned.
class OperationLog {
 public:
  static OperationLog open(const std::string& path);

  uint64_t append(const std::string& payload_ref,
                  const std::vector<EntityId>& changed_entities);

  uint64_t head() const { return entries_.empty() ? 0 : entries_.back().lsn; }
  const std::vector<LogEntry>& entries() const { return entries_; }

  // Entries with lsn in (after, after+limit]; limit <= 0 means no cap.
  std::vector<LogEntry> read_after(uint64_t after, int limit) const;

  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::vector<LogEntry> entries_;
};

enum class StoreKind { analytics, inverted_index, kv, vector };

const char* store_kind_name(StoreKind k);
StoreKind store_kind_from(const std::string& name);

// One in-process store behind the agent interface. apply() must be
// deterministic in (entry, payload) so same-kind agents converge.
class Store {
 public:
  virtual ~Store() = default;
  virtual StoreKind kind() const = 0;
  virtual void apply(const LogEntry& entry, const std::vector<ExtendedTriple>& payload) = 0;
  virtual std::string content_hash() const = 0;
};

// Fact table replaying the log with replace-by-subject semantics.
class AnalyticsStore : public Store {
 public:
  StoreKind kind() const override { return StoreKind::analytics; }
  void apply(const LogEntry& entry, const std::vector<ExtendedTriple>& payload) override;
  std::string content_hash() const override;

  size_t size() const { return facts_.size(); }
  std::vector<ExtendedTriple> facts_for(const EntityId& subject) const;
  std::vector<ExtendedTriple> all_facts() const;

 private:
  std::map<FactKey, ExtendedTriple> facts_;
};

// Token postings over literal objects, plus named ranked lists written by
// views.
class InvertedIndexStore : public Store {
 public:
  StoreKind kind() const override { return StoreKind::inverted_index; }
  void apply(const LogEntry& entry, const std::vector<ExtendedTriple>& payload) override;
  std::string content_hash() const override;

  std::set<EntityId> search(const std::string& token) const;
  void put_ranked(const std::string& name, const std::vector<std::string>& ids);
  const std::vector<std::string>* ranked(const std::string& name) const;

 private:
  std::map<std::string, std::set<std::pair<EntityId, std::string>>> postings_;
  std::map<std::string, std::vector<std::string>> ranked_;
};

class KvStore : public Store {
 public:
  StoreKind kind() const override { return StoreKind::kv; }
  void apply(const LogEntry& entry, const std::vector<ExtendedTriple>& payload) override;
  std::string content_hash() const override;

  void put(const std::string& key, const std::string& value);
  std::optional<std::string> get(const std::string& key) const;
  size_t size() const { return kv_.size(); }

 private:
  std::map<std::string, std::string> kv_;
};

class VectorStore : public Store {
 public:
  StoreKind kind() const override { return StoreKind::vector; }
  void apply(const LogEntry& entry, const std::vector<ExtendedTriple>& payload) override;
  std::string content_hash() const override;

  void put(const std::string& key, std::vector<double> vec);
  const std::vector<double>* get(const std::string& key) const;

  // Brute-force cosine scan; returns (key, similarity) best-first.
  std::vector<std::pair<std::string, double>> nearest(const std::vector<double>& query,
                                                      size_t k) const;

 private:
  std::map<std::string, std::vector<double>> vectors_;
};

std::shared_ptr<Store> make_store(StoreKind kind);

struct StoreAgent {
  std::string store_id;
  std::shared_ptr<Store> store;
  uint64_t replay_lsn = 0;
};

// Applies entries (agent.replay_lsn, agent.replay_lsn+limit] in order,
// verifying payload checksums. Advances replay_lsn per successful entry and
// raises ApplyFailure at the first failing one, progress kept.
int agent_replay(StoreAgent& agent, const OperationLog& log, int limit);

struct Freshness {
  std::map<std::string, uint64_t> per_store;
  uint64_t min_lsn = 0;
};

Freshness freshness(const std::vector<StoreAgent>& agents);

void save_agent_progress(const std::string& path, const std::vector<StoreAgent>& agents);
std::map<std::string, uint64_t> load_agent_progress(const std::string& path);

// Procedures are referenced by registered name so the catalog file stays
// plain data.
struct ViewDefinition {
  std::string name;
  std::vector<std::string> deps;
  StoreKind target_store = StoreKind::analytics;
  std::string create_procedure;
  std::string drop_procedure;
  std::string update_procedure;
  std::optional<uint64_t> freshness_sla;
};

class ViewCatalog {
 public:
  void register_view(const ViewDefinition& def);
  const ViewDefinition* view(const std::string& name) const;
  std::vector<std::string> names() const;

  // Topological order of targets plus transitive deps, each view once,
  // dependencies before dependents.
  std::vector<std::string> plan_refresh(const std::vector<std::string>& targets) const;

  void save(const std::string& path) const;
  static ViewCatalog load(const std::string& path);

 private:
  std::map<std::string, ViewDefinition> views_;
};

struct RefreshContext {
  SnapshotPtr snapshot;
  std::vector<EntityId> changed_entities;
  std::map<std::string, std::shared_ptr<Store>> stores;  // store_kind name -> store
};

using ViewProcedure = std::function<void(const ViewDefinition&, RefreshContext&)>;

class ProcedureRegistry {
 public:
  void add(const std::string& name, ViewProcedure fn);
  const ViewProcedure* find(const std::string& name) const;

 private:
  std::map<std::string, ViewProcedure> procedures_;
};

struct RefreshReport {
  struct Entry {
    std::string view;
    int executions = 0;
    double millis = 0.0;
  };
  std::vector<Entry> entries;

  int executions_of(const std::string& view) const;
  nlohmann::ordered_json to_json() const;
};

RefreshReport refresh_views(const ViewCatalog& catalog, const std::vector<std::string>& plan,
                            const ProcedureRegistry& procedures, RefreshContext& ctx);

struct ImportanceRecord {
  EntityId entity;
  double in_degree = 0.0;
  double out_degree = 0.0;
  double identities = 0.0;
  double pagerank = 0.0;
  double aggregate = 0.0;
};

// Degree/identity/PageRank metrics over entity_ref edges (same_as excluded),
// aggregated as the mean of min-max normalized columns.
std::vector<ImportanceRecord> compute_importance(const KgSnapshot& snapshot, double damping,
                                                 double tol);

}  // namespace kgf
