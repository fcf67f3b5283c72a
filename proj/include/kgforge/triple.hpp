#pragma once
// Extended-triple data model: one flat fact row with optional relationship-node
// fields (r_id, r_predicate) and provenance/trust/locale metadata. Parallel
// sources[]/trust[] arrays attribute every fact to the inputs that claimed it.

#include <compare>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kgforge/error.hpp"

namespace kgf {

inline constexpr const char* kGraphNamespace = "akg";

struct EntityId {
  std::string ns;     // "akg" for graph entities, else the source identifier
  std::string local;

  std::string str() const { return ns + ":" + local; }
  bool is_graph() const { return ns == kGraphNamespace; }
  bool empty() const { return ns.empty() && local.empty(); }

  // Splits on the first ':'; the rendered form is "namespace:local_id".
  static EntityId parse(const std::string& rendered);

  auto operator<=>(const EntityId&) const = default;
};

enum class ObjectKind { literal, entity_ref };

const char* object_kind_name(ObjectKind k);
ObjectKind object_kind_from(const std::string& name);

struct ExtendedTriple {
  EntityId subject;
  std::string predicate;
  std::optional<std::string> r_id;
  std::optional<std::string> r_predicate;
  std::string object;  // literal text, or the rendered EntityId for entity_ref
  ObjectKind object_kind = ObjectKind::literal;
  std::optional<std::string> locale;
  std::vector<std::string> sources;
  std::vector<double> trust;

  bool is_composite() const { return r_id.has_value(); }
  EntityId object_id() const { return EntityId::parse(object); }

  bool operator==(const ExtendedTriple&) const = default;
};

// Fact identity: (subject, predicate, r_id, r_predicate, object, locale).
// Key-equal triples merge their provenance arrays instead of duplicating.
struct FactKey {
  EntityId subject;
  std::string predicate;
  std::optional<std::string> r_id;
  std::optional<std::string> r_predicate;
  std::string object;
  std::optional<std::string> locale;

  auto operator<=>(const FactKey&) const = default;
  std::string str() const;
};

FactKey fact_key(const ExtendedTriple& t);

// Throws on any invariant violation: EmptySources, ArrayLengthMismatch,
// DanglingCompositeField, TrustOutOfRange.
void validate(const ExtendedTriple& t);

// Parses and validates one raw record with the Table-style column slots.
ExtendedTriple validate_triple(const nlohmann::json& record);

nlohmann::ordered_json triple_to_json(const ExtendedTriple& t);
ExtendedTriple triple_from_json(const nlohmann::json& record);  // no validation

std::string render_triples_jsonl(const std::vector<ExtendedTriple>& triples);
std::vector<ExtendedTriple> parse_triples_jsonl(const std::string& text);
void write_triples_file(const std::string& path, const std::vector<ExtendedTriple>& triples);
std::vector<ExtendedTriple> read_triples_file(const std::string& path);

}  // namespace kgf
