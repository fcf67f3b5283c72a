#include "kgforge/triple.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace kgf {

using nlohmann::json;
using nlohmann::ordered_json;

EntityId EntityId::parse(const std::string& rendered) {
  auto pos = rendered.find(':');
  if (pos == std::string::npos || pos == 0 || pos + 1 == rendered.size()) {
    raise(Errc::FormatError, "entity id must be namespace:local_id, got: " + rendered);
  }
  return EntityId{rendered.substr(0, pos), rendered.substr(pos + 1)};
}

const char* object_kind_name(ObjectKind k) {
  return k == ObjectKind::literal ? "literal" : "entity_ref";
}

ObjectKind object_kind_from(const std::string& name) {
  if (name == "literal") return ObjectKind::literal;
  if (name == "entity_ref") return ObjectKind::entity_ref;
  raise(Errc::FormatError, "unknown object_kind: " + name);
}

std::string FactKey::str() const {
  std::ostringstream os;
  os << subject.str() << '|' << predicate << '|' << r_id.value_or("") << '|'
     << r_predicate.value_or("") << '|' << object << '|' << locale.value_or("");
  return os.str();
}

FactKey fact_key(const ExtendedTriple& t) {
  return FactKey{t.subject, t.predicate, t.r_id, t.r_predicate, t.object, t.locale};
}

void validate(const ExtendedTriple& t) {
  if (t.sources.empty()) {
    raise(Errc::EmptySources, fact_key(t).str());
  }
  if (t.sources.size() != t.trust.size()) {
    raise(Errc::ArrayLengthMismatch,
          "sources=" + std::to_string(t.sources.size()) +
              " trust=" + std::to_string(t.trust.size()) + " for " + fact_key(t).str());
  }
  if (t.r_predicate.has_value() != t.r_id.has_value()) {
    raise(Errc::DanglingCompositeField,
          std::string(t.r_predicate ? "r_predicate" : "r_id") + " set without its pair on " +
              t.subject.str() + " " + t.predicate);
  }
  for (double v : t.trust) {
    if (!(v >= 0.0 && v <= 1.0) || !std::isfinite(v)) {
      raise(Errc::TrustOutOfRange, std::to_string(v) + " on " + fact_key(t).str());
    }
  }
  if (t.locale && t.object_kind != ObjectKind::literal) {
    raise(Errc::FormatError, "locale on non-literal object: " + fact_key(t).str());
  }
}

static std::optional<std::string> opt_string(const json& record, const char* field) {
  if (!record.contains(field) || record[field].is_null()) return std::nullopt;
  return record[field].get<std::string>();
}

ExtendedTriple triple_from_json(const json& record) {
  ExtendedTriple t;
  t.subject = EntityId::parse(record.at("subject").get<std::string>());
  t.predicate = record.at("predicate").get<std::string>();
  t.r_id = opt_string(record, "r_id");
  t.r_predicate = opt_string(record, "r_predicate");
  t.object = record.at("object").get<std::string>();
  t.object_kind = object_kind_from(record.value("object_kind", "literal"));
  t.locale = opt_string(record, "locale");
  if (record.contains("sources")) t.sources = record["sources"].get<std::vector<std::string>>();
  if (record.contains("trust")) t.trust = record["trust"].get<std::vector<double>>();
  return t;
}

ExtendedTriple validate_triple(const json& record) {
  ExtendedTriple t = triple_from_json(record);
  validate(t);
  return t;
}

ordered_json triple_to_json(const ExtendedTriple& t) {
  ordered_json out;
  out["subject"] = t.subject.str();
  out["predicate"] = t.predicate;
  out["r_id"] = t.r_id ? json(*t.r_id) : json(nullptr);
  out["r_predicate"] = t.r_predicate ? json(*t.r_predicate) : json(nullptr);
  out["object"] = t.object;
  out["object_kind"] = object_kind_name(t.object_kind);
  out["locale"] = t.locale ? json(*t.locale) : json(nullptr);
  out["sources"] = t.sources;
  out["trust"] = t.trust;
  return out;
}

std::string render_triples_jsonl(const std::vector<ExtendedTriple>& triples) {
  std::ostringstream os;
  for (const auto& t : triples) {
    os << triple_to_json(t).dump() << '\n';
  }
  return os.str();
}

std::vector<ExtendedTriple> parse_triples_jsonl(const std::string& text) {
  std::vector<ExtendedTriple> out;
  std::istringstream is(text);
  std::string line;
  size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    json record = json::parse(line, nullptr, false);
    if (record.is_discarded()) {
      raise(Errc::FormatError, "bad JSON at line " + std::to_string(lineno));
    }
    out.push_back(triple_from_json(record));
  }
  return out;
}

void write_triples_file(const std::string& path, const std::vector<ExtendedTriple>& triples) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) raise(Errc::IoError, "cannot open for write: " + path);
  os << render_triples_jsonl(triples);
  if (!os.flush()) raise(Errc::IoError, "write failed: " + path);
}

std::vector<ExtendedTriple> read_triples_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) raise(Errc::IoError, "cannot open for read: " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_triples_jsonl(buf.str());
}

}  // namespace kgf
