#pragma once
// Fusion: the serialization point of construction. Merges linked payloads
// into the KG with outer-join semantics, reconciles relationship nodes by
// fact intersection, estimates fact confidence and source trust by fixed
// point, applies deletions through same_as lineage, and overwrites volatile
// partitions.

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "kgforge/ingest.hpp"
#include "kgforge/link.hpp"
#include "kgforge/ontology.hpp"
#include "kgforge/snapshot.hpp"

namespace kgf {

struct FactConfidence {
  double probability = 0.0;
};

struct SourceTrustTable {
  std::map<std::string, double> trust;
  int iteration_count = 0;
  bool converged = false;
};

struct RelationshipMergeDecision {
  std::string source_r_id;
  std::optional<std::string> kg_r_id;  // empty -> NEW node
  double overlap_ratio = 0.0;

  bool merged() const { return kg_r_id.has_value(); }
};

SnapshotPtr fuse_simple_facts(const SnapshotPtr& snapshot,
                              const std::vector<ExtendedTriple>& linked);

std::vector<RelationshipMergeDecision> merge_relationship_nodes(
    const std::vector<ExtendedTriple>& kg_entity_triples,
    const std::vector<ExtendedTriple>& source_entity_triples, double theta_rel);

FactConfidence estimate_fact_confidence(const ExtendedTriple& fact,
                                        const SourceTrustTable& table);

SourceTrustTable update_source_trust(const KgSnapshot& snapshot, const Ontology& ontology,
                                     double initial_trust, int max_iters, double epsilon);

// same_as lineage read from the snapshot: source entity id -> akg id.
std::map<EntityId, EntityId> same_as_index(const KgSnapshot& snapshot);

SnapshotPtr apply_deletions(const SnapshotPtr& snapshot,
                            const std::vector<SourceEntity>& deleted,
                            const std::string& source_id, std::vector<std::string>* warnings);

SnapshotPtr overwrite_volatile_partition(const SnapshotPtr& snapshot,
                                         const std::string& source_id,
                                         const std::vector<ExtendedTriple>& volatile_triples,
                                         const std::set<std::string>& volatile_predicates,
                                         std::vector<std::string>* warnings);

// Replaces a literal object with an entity reference when the KG knows the
// entity; wired to the disambiguation module by the pipeline.
using ObjectResolver = std::function<std::optional<EntityId>(
    const std::string& literal, const std::vector<std::string>& subject_context,
    const std::string& expected_type)>;

struct FusionReport {
  int facts_added = 0;
  int facts_updated = 0;
  int facts_removed = 0;
  int entities_created = 0;
  int relationship_nodes_merged = 0;
  int relationship_nodes_created = 0;
  SourceTrustTable trust;
  std::vector<std::string> warnings;

  nlohmann::ordered_json to_json() const;
};

struct ConstructContext {
  SourceConfig source;
  Ontology ontology;
  BlockingConfig blocking;
  MatchModel matcher;
  double tau_pos = 0.9;
  double tau_neg = 0.1;
  double theta_rel = 0.5;
  uint64_t link_seed = 11;
  ObjectResolver resolver;  // optional; literals kept when absent
};

struct FusionOutcome {
  SnapshotPtr snapshot;
  FusionReport report;
};

// The per-source construction step: links Added entities, resolves Updated
// and Deleted through same_as, applies object resolution, fuses everything
// atomically, then overwrites the volatile partition.
FusionOutcome process_source_payloads(const SnapshotPtr& snapshot, const SourceDelta& delta,
                                      const ConstructContext& ctx);

}  // namespace kgf
