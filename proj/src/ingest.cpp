#include "kgforge/ingest.hpp"

#include <algorithm>
#include <filesystem>
#include <sstream>

#include "kgforge/util.hpp"

namespace fs = std::filesystem;

namespace kgf {

using nlohmann::json;
using nlohmann::ordered_json;

SourceConfig SourceConfig::from_json(const json& doc, const std::string& base_dir) {
  SourceConfig cfg;
  cfg.source_id = doc.at("source_id").get<std::string>();
  if (cfg.source_id.empty()) raise(Errc::ConfigError, "source_id must be non-empty");
  cfg.format = doc.value("format", "jsonl");
  cfg.id_column = doc.at("id_column").get<std::string>();
  cfg.entity_type = doc.value("entity_type", "");
  for (const auto& a : doc.value("artifacts", json::array())) {
    Artifact art;
    if (a.is_string()) {
      art.path = a.get<std::string>();
    } else {
      art.path = a.at("path").get<std::string>();
      art.format = a.value("format", "");
      art.group = a.value("group", "");
    }
    if (!base_dir.empty() && !art.path.empty() && art.path[0] != '/') {
      art.path = (fs::path(base_dir) / art.path).string();
    }
    cfg.artifacts.push_back(std::move(art));
  }
  for (const auto& j : doc.value("joins", json::array())) {
    cfg.joins.push_back(Join{j.at("group").get<std::string>(), j.at("on").get<std::string>()});
  }
  if (doc.contains("schema")) cfg.schema = doc["schema"].get<std::vector<std::string>>();
  for (const auto& r : doc.value("pgf_rules", json::array())) {
    PgfRule rule;
    std::string kind = r.at("kind").get<std::string>();
    if (kind == "rename") {
      rule.kind = PgfRule::Kind::rename;
    } else if (kind == "combine") {
      rule.kind = PgfRule::Kind::combine;
    } else if (kind == "constant_type") {
      rule.kind = PgfRule::Kind::constant_type;
    } else {
      raise(Errc::ConfigError, "unknown pgf rule kind: " + kind);
    }
    if (r.contains("source_predicates")) {
      rule.source_predicates = r["source_predicates"].get<std::vector<std::string>>();
    }
    rule.target_predicate = r.at("target_predicate").get<std::string>();
    rule.combiner = r.value("combiner", "");
    cfg.pgf_rules.push_back(std::move(rule));
  }
  if (doc.contains("required_predicates")) {
    cfg.required_predicates = doc["required_predicates"].get<std::vector<std::string>>();
  }
  for (const auto& v : doc.value("volatile_predicates", json::array())) {
    cfg.volatile_predicates.insert(v.get<std::string>());
  }
  if (doc.contains("locales")) {
    for (const auto& [pred, tag] : doc["locales"].items()) {
      cfg.locales[pred] = tag.get<std::string>();
    }
  }
  cfg.default_trust = doc.value("default_trust", 0.8);
  if (cfg.default_trust < 0.0 || cfg.default_trust > 1.0) {
    raise(Errc::ConfigError, "default_trust out of [0,1]");
  }
  return cfg;
}

SourceConfig SourceConfig::load(const std::string& path) {
  json doc = json::parse(read_file(path), nullptr, false);
  if (doc.is_discarded()) raise(Errc::FormatError, "bad JSON in source config " + path);
  return from_json(doc, fs::path(path).parent_path().string());
}

namespace {

void flatten_json_value(const std::string& key, const json& value, RawRow& row, int depth) {
  if (value.is_null()) return;
  if (value.is_string()) {
    row.emplace_back(key, value.get<std::string>());
  } else if (value.is_number() || value.is_boolean()) {
    row.emplace_back(key, value.dump());
  } else if (value.is_array()) {
    if (depth > 0) raise(Errc::FormatError, "array nested too deep under " + key);
    for (size_t i = 0; i < value.size(); ++i) {
      flatten_json_value(key + "[" + std::to_string(i) + "]", value[i], row, depth + 1);
    }
  } else if (value.is_object()) {
    if (depth > 1) raise(Errc::FormatError, "object nested too deep under " + key);
    for (const auto& [sub, v] : value.items()) {
      if (!v.is_string() && !v.is_number() && !v.is_boolean() && !v.is_null()) {
        raise(Errc::FormatError, "relationship value must be scalar: " + key + "." + sub);
      }
      if (!v.is_null()) {
        row.emplace_back(key + "." + sub, v.is_string() ? v.get<std::string>() : v.dump());
      }
    }
  } else {
    raise(Errc::FormatError, "unsupported value under " + key);
  }
}

std::vector<RawRow> parse_jsonl_rows(const std::string& text) {
  std::vector<RawRow> rows;
  std::istringstream is(text);
  std::string line;
  size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.is_object()) {
      raise(Errc::FormatError, "line " + std::to_string(lineno) + ": not a JSON object");
    }
    RawRow row;
    for (const auto& [key, value] : rec.items()) {
      flatten_json_value(key, value, row, 0);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<std::string> split_delimited(const std::string& line, char sep, bool quoted) {
  std::vector<std::string> out;
  std::string cur;
  bool in_quotes = false;
  for (size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted && c == '"') {
      if (in_quotes && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else {
        in_quotes = !in_quotes;
      }
    } else if (c == sep && !in_quotes) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::vector<RawRow> parse_delimited_rows(const std::string& text, char sep, bool quoted) {
  std::vector<RawRow> rows;
  std::istringstream is(text);
  std::string line;
  size_t lineno = 0;
  std::vector<std::string> header;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_delimited(line, sep, quoted);
    if (header.empty()) {
      header = cells;
      continue;
    }
    if (cells.size() != header.size()) {
      raise(Errc::FormatError, "line " + std::to_string(lineno) + ": expected " +
                                   std::to_string(header.size()) + " columns, got " +
                                   std::to_string(cells.size()));
    }
    RawRow row;
    for (size_t i = 0; i < cells.size(); ++i) row.emplace_back(header[i], cells[i]);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

RawRowSet import_rows(const SourceConfig& cfg, const std::string& group,
                      const std::string& format, const std::string& text, RawRowSet into) {
  into.source_id = cfg.source_id;
  std::vector<RawRow> rows;
  if (format == "jsonl") {
    rows = parse_jsonl_rows(text);
  } else if (format == "tsv") {
    rows = parse_delimited_rows(text, '\t', false);
  } else if (format == "csv") {
    rows = parse_delimited_rows(text, ',', true);
  } else {
    raise(Errc::UnknownFormat, format);
  }
  auto& slot = into.groups[group];
  slot.insert(slot.end(), rows.begin(), rows.end());
  return into;
}

RawRowSet import_source(const SourceConfig& cfg) {
  RawRowSet out;
  out.source_id = cfg.source_id;
  if (cfg.artifacts.empty()) raise(Errc::ConfigError, "source declares no artifacts");
  for (const auto& art : cfg.artifacts) {
    std::string format = art.format.empty() ? cfg.format : art.format;
    try {
      out = import_rows(cfg, art.group, format, read_file(art.path), std::move(out));
    } catch (const Error& e) {
      if (e.code() == Errc::FormatError) {
        raise(Errc::FormatError, art.path + ": " + e.what());
      }
      throw;
    }
  }
  return out;
}

namespace {

struct ColumnPath {
  std::string base;
  int ordinal = 0;
  std::string inner;  // empty for plain values
};

ColumnPath parse_column(const std::string& name) {
  ColumnPath p;
  std::string head = name;
  auto dot = name.find('.');
  if (dot != std::string::npos) {
    head = name.substr(0, dot);
    p.inner = name.substr(dot + 1);
    if (p.inner.empty() || p.inner.find('.') != std::string::npos) {
      raise(Errc::FormatError, "bad column path: " + name);
    }
  }
  auto bracket = head.find('[');
  if (bracket != std::string::npos) {
    if (head.back() != ']') raise(Errc::FormatError, "bad column ordinal: " + name);
    p.base = head.substr(0, bracket);
    p.ordinal = std::stoi(head.substr(bracket + 1, head.size() - bracket - 2));
  } else {
    p.base = head;
  }
  return p;
}

// Collects one row's columns into the entity's predicate map. Repeated full
// column names within a row are schema violations; multi-values arrive as
// ordinal-suffixed columns or as extra joined rows.
void absorb_row(SourceEntity& entity, const RawRow& row, const std::string& skip_column,
                bool collide_with_existing) {
  std::set<std::string> seen;
  std::set<std::string> preexisting;
  if (collide_with_existing) {
    for (const auto& [pred, _] : entity.predicates) preexisting.insert(pred);
  }
  std::map<std::string, std::map<int, SourceValue>> groups;
  for (const auto& [column, value] : row) {
    if (column.empty()) raise(Errc::EmptyPredicateName, "entity " + entity.id.str());
    if (column == skip_column) continue;
    if (!seen.insert(column).second) {
      raise(Errc::DuplicatePredicateName, column + " repeated on " + entity.id.str());
    }
    ColumnPath path = parse_column(column);
    if (path.base.empty()) raise(Errc::EmptyPredicateName, "entity " + entity.id.str());
    if (preexisting.count(path.base)) {
      raise(Errc::DuplicatePredicateName,
            path.base + " already present on " + entity.id.str() + " from another row group");
    }
    auto& slot = groups[path.base][path.ordinal];
    if (path.inner.empty()) {
      if (!value.empty()) slot.text = value;
    } else {
      if (!value.empty()) slot.node[path.inner].push_back(value);
    }
  }
  for (auto& [base, ordinals] : groups) {
    auto& values = entity.predicates[base];
    for (auto& [_, value] : ordinals) {
      if (value.composite() && !value.text.empty()) {
        raise(Errc::FormatError, base + " mixes plain and relationship values");
      }
      if (value.composite() || !value.text.empty()) values.push_back(std::move(value));
    }
  }
}

}  // namespace

std::vector<SourceEntity> transform_entities(const RawRowSet& rows, const SourceConfig& cfg) {
  auto main_it = rows.groups.find("");
  if (main_it == rows.groups.end()) raise(Errc::ConfigError, "no main row group imported");

  std::vector<SourceEntity> out;
  std::map<std::string, size_t> by_local;
  for (const auto& row : main_it->second) {
    std::string local;
    for (const auto& [column, value] : row) {
      if (column == cfg.id_column) {
        local = value;
        break;
      }
    }
    if (local.empty()) {
      raise(Errc::MissingIdPredicate, "row without " + cfg.id_column + " in " + rows.source_id);
    }
    if (by_local.count(local)) {
      raise(Errc::DuplicateEntityId, rows.source_id + ":" + local);
    }
    SourceEntity entity;
    entity.id = EntityId{rows.source_id, local};
    absorb_row(entity, row, cfg.id_column, false);
    by_local[local] = out.size();
    out.push_back(std::move(entity));
  }

  for (const auto& [group, group_rows] : rows.groups) {
    if (group.empty()) continue;
    const SourceConfig::Join* join = nullptr;
    for (const auto& j : cfg.joins) {
      if (j.group == group) join = &j;
    }
    if (!join) raise(Errc::ConfigError, "row group '" + group + "' has no join declared");
    bool first_row_of_entity = true;
    std::set<std::string> joined_once;
    for (const auto& row : group_rows) {
      std::string key;
      for (const auto& [column, value] : row) {
        if (column == join->on) {
          key = value;
          break;
        }
      }
      if (key.empty()) {
        raise(Errc::MissingIdPredicate, "group " + group + " row without " + join->on);
      }
      auto it = by_local.find(key);
      if (it == by_local.end()) continue;
      first_row_of_entity = joined_once.insert(key).second;
      absorb_row(out[it->second], row, join->on, first_row_of_entity);
    }
  }

  for (const auto& entity : out) {
    for (const auto& pred : cfg.schema) {
      if (!entity.predicates.count(pred)) {
        raise(Errc::MissingSchemaPredicate, pred + " absent on " + entity.id.str());
      }
    }
  }
  return out;
}

namespace {

std::vector<std::string> template_placeholders(const std::string& tmpl) {
  std::vector<std::string> out;
  size_t pos = 0;
  while ((pos = tmpl.find('{', pos)) != std::string::npos) {
    size_t end = tmpl.find('}', pos);
    if (end == std::string::npos) raise(Errc::ConfigError, "unclosed placeholder in " + tmpl);
    out.push_back(tmpl.substr(pos + 1, end - pos - 1));
    pos = end + 1;
  }
  return out;
}

}  // namespace

void validate_pgf_config(const std::vector<PgfRule>& rules, const Ontology& ontology) {
  for (const auto& rule : rules) {
    const std::string& target = rule.target_predicate;
    auto dot = target.find('.');
    if (dot == std::string::npos) {
      if (!ontology.has_predicate(target)) {
        raise(Errc::ConfigError, "pgf target not in ontology: " + target);
      }
    } else {
      std::string base = target.substr(0, dot);
      std::string inner = target.substr(dot + 1);
      const PredicateDef* def = ontology.predicate(base);
      if (!def || !def->composite ||
          std::find(def->r_predicates.begin(), def->r_predicates.end(), inner) ==
              def->r_predicates.end()) {
        raise(Errc::ConfigError, "pgf target not a relationship field: " + target);
      }
    }
    switch (rule.kind) {
      case PgfRule::Kind::rename:
        if (rule.source_predicates.size() != 1) {
          raise(Errc::ConfigError, "rename needs exactly one source predicate for " + target);
        }
        break;
      case PgfRule::Kind::combine: {
        auto placeholders = template_placeholders(rule.combiner);
        std::set<std::string> distinct(placeholders.begin(), placeholders.end());
        if (distinct.size() != rule.source_predicates.size()) {
          raise(Errc::CombinerArityMismatch,
                target + ": " + std::to_string(distinct.size()) + " placeholders vs " +
                    std::to_string(rule.source_predicates.size()) + " source predicates");
        }
        for (const auto& ph : distinct) {
          if (std::find(rule.source_predicates.begin(), rule.source_predicates.end(), ph) ==
              rule.source_predicates.end()) {
            raise(Errc::CombinerArityMismatch, target + ": placeholder {" + ph + "} unlisted");
          }
        }
        break;
      }
      case PgfRule::Kind::constant_type:
        if (rule.combiner.empty()) {
          raise(Errc::ConfigError, "constant_type rule without a value for " + target);
        }
        if (target == kTypePredicate && !ontology.has_type(rule.combiner)) {
          raise(Errc::ConfigError, "constant_type value not an ontology type: " + rule.combiner);
        }
        break;
    }
  }
}

std::vector<SourceEntity> align_ontology(const std::vector<SourceEntity>& entities,
                                         const SourceConfig& cfg, const Ontology& ontology) {
  validate_pgf_config(cfg.pgf_rules, ontology);
  std::vector<SourceEntity> out;
  out.reserve(entities.size());
  for (const auto& entity : entities) {
    SourceEntity aligned;
    aligned.id = entity.id;
    for (const auto& rule : cfg.pgf_rules) {
      switch (rule.kind) {
        case PgfRule::Kind::rename: {
          const std::string& src = rule.source_predicates[0];
          const std::string& target = rule.target_predicate;
          auto src_dot = src.find('.');
          auto tgt_dot = target.find('.');
          if (src_dot == std::string::npos) {
            // Whole-predicate rename; values (simple or composite) carry over.
            auto it = entity.predicates.find(src);
            if (it == entity.predicates.end()) {
              auto moved = aligned.predicates.find(src);
              if (moved != aligned.predicates.end() && src != target) {
                auto values = std::move(moved->second);
                aligned.predicates.erase(moved);
                auto& dst = aligned.predicates[target];
                dst.insert(dst.end(), values.begin(), values.end());
              }
              break;
            }
            auto& dst = aligned.predicates[target];
            dst.insert(dst.end(), it->second.begin(), it->second.end());
            break;
          }
          // Inner-key rename over an already-aligned composite predicate.
          if (tgt_dot == std::string::npos) {
            raise(Errc::ConfigError, "inner rename needs dotted target: " + target);
          }
          std::string src_base = src.substr(0, src_dot);
          std::string src_inner = src.substr(src_dot + 1);
          std::string tgt_inner = target.substr(tgt_dot + 1);
          if (src_base != target.substr(0, tgt_dot)) {
            raise(Errc::ConfigError, "inner rename across predicates: " + src + " -> " + target);
          }
          auto it = aligned.predicates.find(src_base);
          if (it == aligned.predicates.end()) break;
          for (auto& value : it->second) {
            auto inner_it = value.node.find(src_inner);
            if (inner_it == value.node.end()) continue;
            auto inner_values = std::move(inner_it->second);
            value.node.erase(inner_it);
            auto& dst = value.node[tgt_inner];
            dst.insert(dst.end(), inner_values.begin(), inner_values.end());
          }
          break;
        }
        case PgfRule::Kind::combine: {
          std::string rendered = rule.combiner;
          bool complete = true;
          for (const auto& ph : template_placeholders(rule.combiner)) {
            auto it = entity.predicates.find(ph);
            if (it == entity.predicates.end() || it->second.empty() ||
                it->second.front().composite()) {
              complete = false;
              break;
            }
            const std::string& value = it->second.front().text;
            size_t pos;
            while ((pos = rendered.find("{" + ph + "}")) != std::string::npos) {
              rendered = rendered.substr(0, pos) + value + rendered.substr(pos + ph.size() + 2);
            }
          }
          if (complete) {
            aligned.predicates[rule.target_predicate].push_back(SourceValue{rendered, {}});
          }
          break;
        }
        case PgfRule::Kind::constant_type:
          aligned.predicates[rule.target_predicate].push_back(SourceValue{rule.combiner, {}});
          break;
      }
    }
    for (const auto& pred : cfg.required_predicates) {
      auto it = aligned.predicates.find(pred);
      if (it == aligned.predicates.end() || it->second.empty()) {
        raise(Errc::UnmappedRequiredPredicate, pred + " missing on " + entity.id.str());
      }
    }
    out.push_back(std::move(aligned));
  }
  return out;
}

namespace {

// Canonical form used for change detection: volatile predicates removed,
// values sorted.
std::map<std::string, std::vector<SourceValue>> canonical_predicates(
    const SourceEntity& entity, const std::set<std::string>& volatile_predicates) {
  std::map<std::string, std::vector<SourceValue>> out;
  for (const auto& [pred, values] : entity.predicates) {
    if (volatile_predicates.count(pred)) continue;
    auto sorted = values;
    for (auto& v : sorted) {
      for (auto& [_, inner] : v.node) std::sort(inner.begin(), inner.end());
    }
    std::sort(sorted.begin(), sorted.end());
    out[pred] = std::move(sorted);
  }
  return out;
}

SourceEntity strip_volatile(const SourceEntity& entity,
                            const std::set<std::string>& volatile_predicates) {
  SourceEntity out;
  out.id = entity.id;
  for (const auto& [pred, values] : entity.predicates) {
    if (!volatile_predicates.count(pred)) out.predicates[pred] = values;
  }
  return out;
}

}  // namespace

SourceDelta compute_delta(const std::vector<SourceEntity>& prev,
                          const std::vector<SourceEntity>& curr, const SourceConfig& cfg,
                          const std::string& t0, const std::string& tn) {
  SourceDelta delta;
  delta.t0 = t0;
  delta.tn = tn;
  std::map<EntityId, const SourceEntity*> prev_by_id, curr_by_id;
  for (const auto& e : prev) prev_by_id[e.id] = &e;
  for (const auto& e : curr) curr_by_id[e.id] = &e;

  for (const auto& [id, e] : curr_by_id) {
    auto it = prev_by_id.find(id);
    if (it == prev_by_id.end()) {
      delta.added.push_back(strip_volatile(*e, cfg.volatile_predicates));
    } else if (canonical_predicates(*e, cfg.volatile_predicates) !=
               canonical_predicates(*it->second, cfg.volatile_predicates)) {
      delta.updated.push_back(strip_volatile(*e, cfg.volatile_predicates));
    }
  }
  for (const auto& [id, e] : prev_by_id) {
    if (!curr_by_id.count(id)) {
      delta.deleted.push_back(strip_volatile(*e, cfg.volatile_predicates));
    }
  }

  for (const auto& [_, e] : curr_by_id) {
    SourceEntity volatile_only;
    volatile_only.id = e->id;
    for (const auto& [pred, values] : e->predicates) {
      if (cfg.volatile_predicates.count(pred)) volatile_only.predicates[pred] = values;
    }
    if (!volatile_only.predicates.empty()) {
      auto triples = export_extended_triples({volatile_only}, cfg.source_id, cfg.default_trust,
                                             cfg.locales);
      delta.volatile_dump.insert(delta.volatile_dump.end(), triples.begin(), triples.end());
    }
  }
  return delta;
}

std::string mint_r_id(const EntityId& entity, const std::string& predicate, size_t ordinal) {
  return "r" + hex64(fnv1a64(entity.str() + "|" + predicate + "|" + std::to_string(ordinal)));
}

std::vector<ExtendedTriple> export_extended_triples(
    const std::vector<SourceEntity>& entities, const std::string& source_id, double default_trust,
    const std::map<std::string, std::string>& locales) {
  std::vector<ExtendedTriple> out;
  auto locale_for = [&locales](const std::string& key) -> std::optional<std::string> {
    auto it = locales.find(key);
    if (it == locales.end()) return std::nullopt;
    return it->second;
  };
  for (const auto& entity : entities) {
    for (const auto& [pred, values] : entity.predicates) {
      size_t composite_ordinal = 0;
      for (const auto& value : values) {
        if (!value.composite()) {
          ExtendedTriple t;
          t.subject = entity.id;
          t.predicate = pred;
          t.object = value.text;
          t.object_kind = ObjectKind::literal;
          t.locale = locale_for(pred);
          t.sources = {source_id};
          t.trust = {default_trust};
          validate(t);
          out.push_back(std::move(t));
          continue;
        }
        std::string r_id = mint_r_id(entity.id, pred, composite_ordinal++);
        for (const auto& [inner, inner_values] : value.node) {
          for (const auto& inner_value : inner_values) {
            ExtendedTriple t;
            t.subject = entity.id;
            t.predicate = pred;
            t.r_id = r_id;
            t.r_predicate = inner;
            t.object = inner_value;
            t.object_kind = ObjectKind::literal;
            t.locale = locale_for(pred + "." + inner);
            t.sources = {source_id};
            t.trust = {default_trust};
            validate(t);
            out.push_back(std::move(t));
          }
        }
      }
    }
  }
  return out;
}

ordered_json entity_to_json(const SourceEntity& e) {
  ordered_json predicates = ordered_json::object();
  for (const auto& [pred, values] : e.predicates) {
    ordered_json list = ordered_json::array();
    for (const auto& v : values) {
      if (v.composite()) {
        ordered_json node = ordered_json::object();
        for (const auto& [inner, inner_values] : v.node) node[inner] = inner_values;
        list.push_back(std::move(node));
      } else {
        list.push_back(v.text);
      }
    }
    predicates[pred] = std::move(list);
  }
  ordered_json out;
  out["id"] = e.id.str();
  out["predicates"] = std::move(predicates);
  return out;
}

SourceEntity entity_from_json(const json& doc) {
  SourceEntity e;
  e.id = EntityId::parse(doc.at("id").get<std::string>());
  for (const auto& [pred, values] : doc.at("predicates").items()) {
    auto& slot = e.predicates[pred];
    for (const auto& v : values) {
      if (v.is_string()) {
        slot.push_back(SourceValue{v.get<std::string>(), {}});
      } else {
        SourceValue sv;
        for (const auto& [inner, inner_values] : v.items()) {
          sv.node[inner] = inner_values.get<std::vector<std::string>>();
        }
        slot.push_back(std::move(sv));
      }
    }
  }
  return e;
}

std::string render_entities_jsonl(const std::vector<SourceEntity>& entities) {
  std::ostringstream os;
  for (const auto& e : entities) os << entity_to_json(e).dump() << '\n';
  return os.str();
}

std::vector<SourceEntity> parse_entities_jsonl(const std::string& text) {
  std::vector<SourceEntity> out;
  std::istringstream is(text);
  std::string line;
  size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    json doc = json::parse(line, nullptr, false);
    if (doc.is_discarded()) {
      raise(Errc::FormatError, "bad entity JSON at line " + std::to_string(lineno));
    }
    out.push_back(entity_from_json(doc));
  }
  return out;
}

void write_delta(const SourceDelta& delta, const std::string& dir) {
  ensure_dir(dir);
  write_file_atomic(dir + "/added.jsonl", render_entities_jsonl(delta.added));
  write_file_atomic(dir + "/deleted.jsonl", render_entities_jsonl(delta.deleted));
  write_file_atomic(dir + "/updated.jsonl", render_entities_jsonl(delta.updated));
  write_file_atomic(dir + "/volatile.jsonl", render_triples_jsonl(delta.volatile_dump));
}

SourceDelta read_delta(const std::string& dir) {
  SourceDelta delta;
  delta.added = parse_entities_jsonl(read_file(dir + "/added.jsonl"));
  delta.deleted = parse_entities_jsonl(read_file(dir + "/deleted.jsonl"));
  delta.updated = parse_entities_jsonl(read_file(dir + "/updated.jsonl"));
  delta.volatile_dump = parse_triples_jsonl(read_file(dir + "/volatile.jsonl"));
  return delta;
}

}  // namespace kgf
