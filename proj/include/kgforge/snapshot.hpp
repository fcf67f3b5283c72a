#pragma once
// Versioned, immutable KG snapshots. Mutation produces a new snapshot with
// version+1; readers keep whatever snapshot they already hold. Facts with the
// same identity key merge by source-id union (last writer wins per-source
// trust), so repeated upserts of identical payloads are no-ops.

#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "kgforge/triple.hpp"

namespace kgf {

class KgSnapshot;
using SnapshotPtr = std::shared_ptr<const KgSnapshot>;

// map<r_id, map<r_predicate, values>> for one subject+predicate.
using OneHopResult = std::map<std::string, std::map<std::string, std::vector<std::string>>>;

class KgSnapshot {
 public:
  KgSnapshot() = default;

  static SnapshotPtr empty() { return std::make_shared<KgSnapshot>(); }

  uint64_t version() const { return version_; }
  size_t size() const;

  // Returns a copy with the payload merged in and version+1. Triples are
  // validated; key-equal facts union their provenance.
  SnapshotPtr upsert_triples(const std::vector<ExtendedTriple>& payload) const;

  // Returns a copy without any fact whose key matches; version+1.
  SnapshotPtr remove_facts(const std::vector<FactKey>& keys) const;

  // Removes every fact asserted by `source` whose subject is in `subjects`,
  // dropping just that source's provenance entry when others remain.
  SnapshotPtr remove_source_facts(const std::string& source,
                                  const std::set<EntityId>& subjects) const;

  std::vector<ExtendedTriple> get_entity(const EntityId& subject) const;
  bool has_entity(const EntityId& subject) const;

  // All facts reachable through the relationship nodes of one predicate:
  // every (r_predicate -> values) group sharing the subject+predicate+r_id.
  // Raises NotComposite when the predicate holds only simple facts here.
  OneHopResult get_one_hop(const EntityId& subject, const std::string& predicate) const;

  const ExtendedTriple* find_fact(const FactKey& key) const;

  std::vector<EntityId> subjects() const;
  void for_each(const std::function<void(const ExtendedTriple&)>& fn) const;
  std::vector<ExtendedTriple> all_triples() const;

  // Canonical serialized form: subjects ascending, facts ascending by key.
  // Equal fact sets render byte-identically regardless of insertion order.
  std::string render_jsonl() const;
  void save(const std::string& path) const;
  static SnapshotPtr load(const std::string& path, uint64_t version);
  static SnapshotPtr from_triples(const std::vector<ExtendedTriple>& triples, uint64_t version);

  bool same_facts(const KgSnapshot& other) const;

 private:
  uint64_t version_ = 0;
  // Subject buckets; within a bucket facts are keyed for dedupe and ordering.
  std::map<EntityId, std::map<FactKey, ExtendedTriple>> entities_;
};

// Merges `incoming` into `existing` under fact-key equality: source union,
// last-writer-wins trust per source, object_kind from the incoming fact.
ExtendedTriple merge_provenance(const ExtendedTriple& existing, const ExtendedTriple& incoming);

}  // namespace kgf
