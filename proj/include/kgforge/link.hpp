#pragma once
// Subject linking: blocks likely matches, scores candidate pairs with a
// calibrated model, builds a signed linkage graph, and resolves clusters with
// seeded pivot correlation clustering under the at-most-one-graph-entity
// constraint. Emits akg id assignments plus same_as provenance.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "kgforge/ingest.hpp"
#include "kgforge/simstr.hpp"
#include "kgforge/snapshot.hpp"

namespace kgf {

struct LinkEntity {
  EntityId id;
  // Flattened: simple predicates by name, relationship fields as "pred.inner".
  std::map<std::string, std::vector<std::string>> predicates;
  bool is_graph_entity = false;
};

struct LinkingPayload {
  std::vector<LinkEntity> entities;
  std::string entity_type;

  const LinkEntity* find(const EntityId& id) const;
};

LinkEntity flatten_source_entity(const SourceEntity& e);
LinkingPayload extract_kg_view(const KgSnapshot& snapshot, const std::string& entity_type);
LinkingPayload combine_payload(LinkingPayload kg_view, const std::vector<SourceEntity>& batch);

struct BlockingFunction {
  enum class Kind { exact, prefix, qgram_minhash, composite };
  Kind kind = Kind::exact;
  std::string predicate;
  int prefix_length = 4;
  int q = 3;
  int bands = 4;
  int rows_per_band = 2;
  uint64_t seed = 1;
  std::vector<BlockingFunction> parts;  // composite only

  std::vector<std::string> keys_for(const LinkEntity& entity) const;
};

struct BlockingConfig {
  std::vector<BlockingFunction> functions;

  static BlockingConfig from_json(const nlohmann::json& doc);
  static BlockingConfig load(const std::string& path);
};

std::vector<std::set<EntityId>> block(const LinkingPayload& payload, const BlockingConfig& cfg);

struct PairList {
  std::vector<std::pair<EntityId, EntityId>> pairs;  // each stored left < right
};

PairList generate_pairs(const std::vector<std::set<EntityId>>& blocks,
                        const LinkingPayload& payload, bool include_graph_pairs);

struct ScoredPair {
  EntityId left;
  EntityId right;
  double probability = 0.0;
};

struct MatchFeature {
  std::string predicate;
  std::string comparator;  // exact | qgram_jaccard | edit_similarity | learned:<string_type>
  double weight = 1.0;
  double threshold = 0.5;  // rules models only
  int q = 3;
};

struct MatchModel {
  std::string kind = "logistic";  // logistic | rules
  double bias = 0.0;
  std::vector<MatchFeature> features;
  std::map<std::string, StringEncoder> encoders;  // string_type -> learned encoder

  static MatchModel from_json(const nlohmann::json& doc, const std::string& base_dir);
  static MatchModel load(const std::string& path);

  double feature_value(const MatchFeature& f, const LinkEntity& a, const LinkEntity& b) const;
  double score(const LinkEntity& a, const LinkEntity& b) const;
};

std::vector<ScoredPair> match_pairs(const PairList& pairs, const LinkingPayload& payload,
                                    const MatchModel& model);

struct LinkageGraph {
  std::set<EntityId> nodes;
  // Unordered pair (left < right) -> sign with the probability that placed it.
  std::map<std::pair<EntityId, EntityId>, std::pair<int, double>> edges;

  int sign(const EntityId& a, const EntityId& b) const;
  double positive_evidence(const EntityId& a, const EntityId& b) const;
};

LinkageGraph build_linkage_graph(const std::vector<ScoredPair>& scored, double tau_pos,
                                 double tau_neg);

struct ClusterAssignment {
  std::vector<std::set<EntityId>> clusters;
  std::map<EntityId, EntityId> assigned;  // node -> akg id
  std::vector<std::pair<EntityId, EntityId>> same_as;  // (source node, akg id)
  // Graph-entity pairs that clustered together before constraint repair;
  // surfaced for review instead of auto-fused.
  std::vector<std::pair<EntityId, EntityId>> review_pairs;
};

ClusterAssignment resolve_clusters(const LinkageGraph& g, const LinkingPayload& payload,
                                   uint64_t seed);

// + edges cut across clusters plus - edges kept inside; absent edges abstain.
int disagreements(const LinkageGraph& g, const std::vector<std::set<EntityId>>& clusters);

EntityId mint_graph_id(const std::set<EntityId>& members);

}  // namespace kgf
