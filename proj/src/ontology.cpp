#include "kgforge/ontology.hpp"

#include "kgforge/error.hpp"
#include "kgforge/util.hpp"

namespace kgf {

using nlohmann::json;

Ontology Ontology::from_json(const json& doc) {
  Ontology out;
  for (const auto& t : doc.value("types", json::array())) {
    out.types_.insert(t.get<std::string>());
  }
  for (const auto& p : doc.value("predicates", json::array())) {
    PredicateDef def;
    def.name = p.at("name").get<std::string>();
    if (def.name.empty()) raise(Errc::EmptyPredicateName, "ontology predicate with empty name");
    def.functional = p.value("functional", false);
    def.composite = p.value("composite", false);
    if (p.contains("r_predicates")) {
      def.r_predicates = p["r_predicates"].get<std::vector<std::string>>();
    }
    if (p.contains("target_type") && !p["target_type"].is_null()) {
      def.target_type = p["target_type"].get<std::string>();
    }
    if (out.predicates_.count(def.name)) {
      raise(Errc::DuplicatePredicateName, def.name + " declared twice in ontology");
    }
    out.predicates_.emplace(def.name, std::move(def));
  }
  return out;
}

Ontology Ontology::load(const std::string& path) {
  json doc = json::parse(read_file(path), nullptr, false);
  if (doc.is_discarded()) raise(Errc::FormatError, "bad JSON in ontology file " + path);
  return from_json(doc);
}

bool Ontology::has_predicate(const std::string& name) const {
  return predicates_.count(name) > 0;
}

bool Ontology::has_type(const std::string& name) const { return types_.count(name) > 0; }

const PredicateDef* Ontology::predicate(const std::string& name) const {
  auto it = predicates_.find(name);
  return it == predicates_.end() ? nullptr : &it->second;
}

bool Ontology::is_functional(const std::string& name) const {
  const PredicateDef* def = predicate(name);
  return def && def->functional;
}

std::optional<std::string> Ontology::target_type(const std::string& name) const {
  const PredicateDef* def = predicate(name);
  return def ? def->target_type : std::nullopt;
}

}  // namespace kgf
