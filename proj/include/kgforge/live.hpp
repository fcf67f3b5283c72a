#pragma once
// Live graph serving: a queryable union of the stable KG with streaming
// sources. Stream records skip linking and fusion because they carry unique
// natural keys; their textual entity references resolve through the entity
// view. Queries arrive as KGQ text or as pre-annotated intents, execute
// against an inverted index plus KV store pair, and curation hot-fixes patch
// the serving indexes directly while journaling to a stream file.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "kgforge/nerd.hpp"
#include "kgforge/snapshot.hpp"
#include "kgforge/triple.hpp"

namespace kgf {

// ---------------------------------------------------------------------------
// Serving indexes

struct LiveIndexes {
  // Normalized token -> ascending entity ids carrying it in a name or alias.
  std::map<std::string, std::vector<EntityId>> inverted;
  // Entity id -> that entity's fact rows, ascending by fact key.
  std::map<EntityId, std::vector<ExtendedTriple>> kv;
  // Curated-out fact keys; these never surface in query results.
  std::set<FactKey> blocked_facts;
  // Stream-record references that stayed literal because resolution was
  // rejected; kept for later re-resolution passes.
  std::set<FactKey> pending_resolution;
  // Operation-log position the stable view was exported at.
  uint64_t freshness_lsn = 0;

  bool operator==(const LiveIndexes&) const = default;
};

struct EntityReference {
  std::string field;
  std::string surface;
  std::string type_hint;  // empty means unconstrained
};

// One record from a live source. The natural key identifies the same item
// across updates, so re-ingesting a key overwrites rather than duplicates.
struct StreamRecord {
  std::string stream;
  std::string natural_key;
  std::map<std::string, std::string> fields;
  std::vector<EntityReference> entity_references;

  EntityId entity_id() const { return EntityId{stream, natural_key}; }
};

std::vector<StreamRecord> read_stream_records(const std::string& path);
void write_stream_records(const std::string& path, const std::vector<StreamRecord>& records);

// Indexes the stable view, then ingests every stream record in order.
LiveIndexes build_live_indexes(const std::vector<ExtendedTriple>& stable_view,
                               const std::vector<StreamRecord>& streams,
                               const NerdView& nerd_view, const DisambWeights& weights);

// Upserts one stream record: fields become facts on the record's entity,
// references resolve through the entity view at the strict threshold, and
// rejected references stay literal with a pending flag.
LiveIndexes ingest_stream_record(LiveIndexes indexes, const StreamRecord& record,
                                 const NerdView& nerd_view, const DisambWeights& weights);

// ---------------------------------------------------------------------------
// KGQ queries
//
//   query    := "MATCH" node (edge node)* ("WHERE" cond ("AND" cond)*)?
//               "RETURN" proj ("," proj)* ("LIMIT" int)?
//   node     := "(" var (":" Type)? ")"
//   edge     := "-[" pred ("*" int)? "]->" | "<-[" pred "]-"
//   cond     := var "." predpath cmp literal | "SEARCH(" var "," string ")"
//   cmp      := "=" | "!=" | "<" | "<=" | ">" | ">="
//   proj     := var ("." predpath)?
//   predpath := pred ("." pred)?
//
// Bounded repetition "*n" matches paths of one through n hops and is capped
// by max_depth. Predicates starting with an uppercase letter are virtual
// operator references and must be expanded before execution. The predpath
// element "id" projects the entity identifier itself.

struct KgqNode {
  std::string var;
  std::optional<std::string> type;

  bool operator==(const KgqNode&) const = default;
};

struct KgqEdge {
  std::string predicate;
  int repeat = 1;
  bool reversed = false;

  bool operator==(const KgqEdge&) const = default;
};

struct KgqCondition {
  bool is_search = false;
  std::string var;
  std::string search_text;               // search form
  std::vector<std::string> predpath;     // compare form, 1..2 predicates
  std::string cmp;
  std::string literal;
  bool literal_quoted = true;            // false when the literal was a bare number

  bool operator==(const KgqCondition&) const = default;
};

struct KgqProjection {
  std::string var;
  std::vector<std::string> predpath;  // empty projects the entity id

  bool operator==(const KgqProjection&) const = default;
};

struct KgqQuery {
  std::vector<KgqNode> nodes;
  std::vector<KgqEdge> edges;  // edges[i] connects nodes[i] -> nodes[i+1]
  std::vector<KgqCondition> where;
  std::vector<KgqProjection> returns;
  std::optional<int> limit;

  bool operator==(const KgqQuery&) const = default;
};

KgqQuery parse_kgq(const std::string& text, int max_depth = 3);
std::string print_kgq(const KgqQuery& query);

// ---------------------------------------------------------------------------
// Virtual operators

// Reusable chain fragment registered under an uppercase name. The fragment is
// given as KGQ text; its first and last MATCH nodes are the splice endpoints
// and its RETURN clause is ignored.
class OperatorRegistry {
 public:
  void register_op(const std::string& name, const std::string& fragment_kgq, int max_depth = 3);
  const KgqQuery* find(const std::string& name) const;
  std::vector<std::string> names() const;

 private:
  std::map<std::string, KgqQuery> ops_;
};

// Splices every operator edge's fragment into the match chain, renaming inner
// fragment variables so repeated expansions cannot collide. Endpoint type
// constraints from the fragment apply when the query node has none.
KgqQuery expand_virtual_ops(const KgqQuery& query, const OperatorRegistry& registry);

// ---------------------------------------------------------------------------
// Execution

struct ExecResult {
  // One row per chain binding, ordered by the bound entity tuple ascending.
  // Multi-valued projections render distinct values ascending, joined ", ".
  std::vector<std::vector<std::string>> rows;
  // Distinct entities bound to the final chain node, in row order.
  std::vector<EntityId> answers;
};

// Evaluates an expanded query: SEARCH conditions prune candidates through the
// inverted index first, traversal runs over KV lookups, attribute filters
// apply per hop, and the limit applies last. Blocked facts never contribute.
ExecResult execute_query(const KgqQuery& query, const LiveIndexes& indexes);

// ---------------------------------------------------------------------------
// Intent routing

struct IntentAlternative {
  std::string guard_type;       // argument entity must carry this type; "" accepts any
  std::string guard_predicate;  // argument entity must hold a fact with it; "" skips
  std::string kgq_template;     // "$1".."$9" substitute the argument entity ids
};

struct IntentDef {
  std::string name;
  std::vector<std::string> arg_types;
  std::vector<IntentAlternative> alternatives;
};

class IntentRegistry {
 public:
  void register_intent(const IntentDef& def);
  const IntentDef* find(const std::string& name) const;

 private:
  std::map<std::string, IntentDef> intents_;
};

// Picks the first alternative whose guard holds for the first argument entity
// and instantiates its template. Guards are checked in registration order.
KgqQuery route_intent(const std::string& intent, const std::vector<EntityId>& args,
                      const LiveIndexes& indexes, const IntentRegistry& registry,
                      int max_depth = 3);

// ---------------------------------------------------------------------------
// Multi-turn context

struct Interaction {
  std::string intent;
  std::vector<EntityId> args;
  std::vector<EntityId> answers;
  std::vector<EntityId> salient;
  std::map<EntityId, std::vector<std::string>> entity_types;
};

struct ContextGraph {
  std::vector<Interaction> interactions;
  size_t capacity = 8;
};

// Builds an interaction with entity types stamped from the KV store so later
// turns can bind against them after the indexes move on.
Interaction make_interaction(const std::string& intent, const std::vector<EntityId>& args,
                             const std::vector<EntityId>& answers, const LiveIndexes& indexes);

// Appends and evicts oldest-first past capacity.
ContextGraph update_context(ContextGraph context, Interaction interaction);

struct IntentSlot {
  std::optional<EntityId> entity;
  std::optional<std::string> reference;      // pronoun: "she", "he", "it", "they"
  std::optional<std::string> required_type;  // KG type the binding must carry
};

struct ParsedIntent {
  std::optional<std::string> name;
  std::vector<IntentSlot> args;
};

// Completes a partially specified intent from the context: a missing name
// copies the most recent interaction's intent; an unfilled slot binds the most
// recent context entity whose types satisfy the slot and whose sex_or_gender
// fact matches the pronoun.
ParsedIntent resolve_followup(const ParsedIntent& parsed, const ContextGraph& context,
                              const LiveIndexes& indexes);

// ---------------------------------------------------------------------------
// Curation

enum class CurationAction { block_fact, edit_fact, block_entity };

const char* curation_action_name(CurationAction a);
CurationAction curation_action_from(const std::string& name);

struct CurationRecord {
  CurationAction action = CurationAction::block_fact;
  std::optional<FactKey> fact;                // block_fact / edit_fact target
  std::optional<EntityId> entity;             // block_entity target
  std::optional<ExtendedTriple> replacement;  // edit_fact payload

  nlohmann::ordered_json to_json() const;
  static CurationRecord from_json(const nlohmann::json& doc);
};

std::vector<CurationRecord> read_curation_records(const std::string& path);

// Hot-fixes the serving indexes and journals the record to the curation
// stream file. A record whose target is absent leaves the indexes unchanged
// but is still journaled.
LiveIndexes apply_curation(LiveIndexes indexes, const CurationRecord& record,
                           const std::string& stream_path);

// Replays curation records against a stable snapshot so corrections reach KG
// construction through the same stream file.
SnapshotPtr apply_curation_to_snapshot(SnapshotPtr snapshot,
                                       const std::vector<CurationRecord>& records);

// ---------------------------------------------------------------------------
// Service endpoint

// Session-aware request handler behind the serving transports. Requests:
//   {kind: "kgq", query, session_id}
//   {kind: "intent", intent|null, args: [{entity}|{reference, type?}], session_id}
// Responses carry {rows, answered_by, freshness_lsn} or {error}.
struct LiveService {
  LiveIndexes indexes;
  OperatorRegistry operators;
  IntentRegistry intents;
  std::map<std::string, ContextGraph> sessions;
  int max_depth = 3;

  nlohmann::json handle_request(const nlohmann::json& request);
};

}  // namespace kgf
