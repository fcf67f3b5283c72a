#pragma once
// KG ontology registry: the predicate and type vocabulary targeted by source
// alignment. Predicates can be functional (single-valued per subject),
// composite (relationship-node groups), or entity-valued with an expected
// target type that drives object resolution.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

namespace kgf {

struct PredicateDef {
  std::string name;
  bool functional = false;
  bool composite = false;
  std::vector<std::string> r_predicates;   // inner keys for composite predicates
  std::optional<std::string> target_type;  // set when objects should resolve to entities
};

class Ontology {
 public:
  static Ontology from_json(const nlohmann::json& doc);
  static Ontology load(const std::string& path);

  bool has_predicate(const std::string& name) const;
  bool has_type(const std::string& name) const;
  const PredicateDef* predicate(const std::string& name) const;
  bool is_functional(const std::string& name) const;
  std::optional<std::string> target_type(const std::string& name) const;

  const std::set<std::string>& types() const { return types_; }
  const std::map<std::string, PredicateDef>& predicates() const { return predicates_; }

 private:
  std::map<std::string, PredicateDef> predicates_;
  std::set<std::string> types_;
};

// Predicate names with fixed platform meaning, not source data.
inline constexpr const char* kSameAsPredicate = "same_as";
inline constexpr const char* kTypePredicate = "type";
inline constexpr const char* kNamePredicate = "name";
inline constexpr const char* kAliasPredicate = "alias";
inline constexpr const char* kDescriptionPredicate = "description";

}  // namespace kgf
