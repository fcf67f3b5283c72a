#pragma once
// Per-source ingestion: import raw artifacts into flat rows, build
// entity-centric records, align predicates to the KG ontology through
// predicate generation functions, diff against the previously consumed
// snapshot, and export extended triples.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "kgforge/ontology.hpp"
#include "kgforge/triple.hpp"

namespace kgf {

// Order-preserving column list; duplicate names survive import so the
// transform can reject them explicitly.
using RawRow = std::vector<std::pair<std::string, std::string>>;

struct RawRowSet {
  std::string source_id;
  // Row groups by artifact group name; "" is the main group.
  std::map<std::string, std::vector<RawRow>> groups;
};

// One value of a source predicate: either a plain string or a relationship
// group of inner key -> values.
struct SourceValue {
  std::string text;
  std::map<std::string, std::vector<std::string>> node;

  bool composite() const { return !node.empty(); }
  bool operator==(const SourceValue&) const = default;
  auto operator<=>(const SourceValue&) const = default;
};

struct SourceEntity {
  EntityId id;
  std::map<std::string, std::vector<SourceValue>> predicates;

  bool operator==(const SourceEntity&) const = default;
};

struct PgfRule {
  enum class Kind { rename, combine, constant_type };
  Kind kind = Kind::rename;
  std::vector<std::string> source_predicates;
  std::string target_predicate;
  // combine: "{pred}"-placeholder template; constant_type: the constant value.
  std::string combiner;
};

struct SourceConfig {
  std::string source_id;
  std::string format;  // default for artifacts: jsonl | tsv | csv
  std::string id_column;
  std::string entity_type;
  struct Artifact {
    std::string path;
    std::string format;  // empty -> config default
    std::string group;   // "" is the main group
  };
  std::vector<Artifact> artifacts;
  struct Join {
    std::string group;
    std::string on;  // column in the joined group holding the main-entity id
  };
  std::vector<Join> joins;
  std::vector<std::string> schema;  // predicate keys every entity must carry
  std::vector<PgfRule> pgf_rules;
  std::vector<std::string> required_predicates;  // post-alignment obligations
  std::set<std::string> volatile_predicates;
  std::map<std::string, std::string> locales;  // predicate -> locale tag
  double default_trust = 0.8;

  static SourceConfig from_json(const nlohmann::json& doc, const std::string& base_dir);
  static SourceConfig load(const std::string& path);
};

struct SourceDelta {
  std::vector<SourceEntity> added;
  std::vector<SourceEntity> deleted;
  std::vector<SourceEntity> updated;
  std::vector<ExtendedTriple> volatile_dump;
  std::string t0;
  std::string tn;

  bool empty() const {
    return added.empty() && deleted.empty() && updated.empty() && volatile_dump.empty();
  }
};

RawRowSet import_source(const SourceConfig& cfg);
RawRowSet import_rows(const SourceConfig& cfg, const std::string& group,
                      const std::string& format, const std::string& text, RawRowSet into);

std::vector<SourceEntity> transform_entities(const RawRowSet& rows, const SourceConfig& cfg);

void validate_pgf_config(const std::vector<PgfRule>& rules, const Ontology& ontology);
std::vector<SourceEntity> align_ontology(const std::vector<SourceEntity>& entities,
                                         const SourceConfig& cfg, const Ontology& ontology);

SourceDelta compute_delta(const std::vector<SourceEntity>& prev,
                          const std::vector<SourceEntity>& curr, const SourceConfig& cfg,
                          const std::string& t0, const std::string& tn);

std::vector<ExtendedTriple> export_extended_triples(const std::vector<SourceEntity>& entities,
                                                    const std::string& source_id,
                                                    double default_trust,
                                                    const std::map<std::string, std::string>& locales);

// Relationship-node ids are stable across runs: hash of the owning entity id,
// the predicate, and the group ordinal.
std::string mint_r_id(const EntityId& entity, const std::string& predicate, size_t ordinal);

nlohmann::ordered_json entity_to_json(const SourceEntity& e);
SourceEntity entity_from_json(const nlohmann::json& doc);
std::string render_entities_jsonl(const std::vector<SourceEntity>& entities);
std::vector<SourceEntity> parse_entities_jsonl(const std::string& text);

// Writes <dir>/{added,deleted,updated,volatile}.jsonl.
void write_delta(const SourceDelta& delta, const std::string& dir);
SourceDelta read_delta(const std::string& dir);

}  // namespace kgf
