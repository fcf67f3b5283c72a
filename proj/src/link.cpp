#include "kgforge/link.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "kgforge/ontology.hpp"
#include "kgforge/util.hpp"

namespace fs = std::filesystem;

namespace kgf {

using nlohmann::json;

const LinkEntity* LinkingPayload::find(const EntityId& id) const {
  for (const auto& e : entities) {
    if (e.id == id) return &e;
  }
  return nullptr;
}

LinkEntity flatten_source_entity(const SourceEntity& e) {
  LinkEntity out;
  out.id = e.id;
  for (const auto& [pred, values] : e.predicates) {
    for (const auto& value : values) {
      if (value.composite()) {
        for (const auto& [inner, inner_values] : value.node) {
          auto& slot = out.predicates[pred + "." + inner];
          slot.insert(slot.end(), inner_values.begin(), inner_values.end());
        }
      } else {
        out.predicates[pred].push_back(value.text);
      }
    }
  }
  return out;
}

LinkingPayload extract_kg_view(const KgSnapshot& snapshot, const std::string& entity_type) {
  LinkingPayload out;
  out.entity_type = entity_type;
  for (const auto& subject : snapshot.subjects()) {
    if (!subject.is_graph()) continue;
    auto facts = snapshot.get_entity(subject);
    bool typed = false;
    for (const auto& t : facts) {
      if (t.predicate == kTypePredicate && t.object == entity_type) typed = true;
    }
    if (!typed) continue;
    LinkEntity e;
    e.id = subject;
    e.is_graph_entity = true;
    for (const auto& t : facts) {
      if (t.predicate == kSameAsPredicate) continue;
      std::string key = t.r_predicate ? t.predicate + "." + *t.r_predicate : t.predicate;
      e.predicates[key].push_back(t.object);
    }
    out.entities.push_back(std::move(e));
  }
  return out;
}

LinkingPayload combine_payload(LinkingPayload kg_view, const std::vector<SourceEntity>& batch) {
  for (const auto& e : batch) {
    kg_view.entities.push_back(flatten_source_entity(e));
  }
  return kg_view;
}

namespace {

uint64_t minhash_band(const std::set<std::string>& grams, int band, int rows_per_band,
                      uint64_t seed) {
  uint64_t signature = 1469598103934665603ull;
  for (int row = 0; row < rows_per_band; ++row) {
    uint64_t salt = seed * 0x9e3779b97f4a7c15ull + static_cast<uint64_t>(band * rows_per_band + row);
    uint64_t best = UINT64_MAX;
    for (const auto& g : grams) {
      uint64_t h = fnv1a64(g) ^ salt;
      h *= 0xff51afd7ed558ccdull;
      h ^= h >> 33;
      best = std::min(best, h);
    }
    signature ^= best + 0x9e3779b97f4a7c15ull + (signature << 6) + (signature >> 2);
  }
  return signature;
}

}  // namespace

std::vector<std::string> BlockingFunction::keys_for(const LinkEntity& entity) const {
  std::vector<std::string> out;
  if (kind == Kind::composite) {
    // Cartesian combination of the part keys; empty part -> no composite key.
    std::vector<std::string> acc = {""};
    for (const auto& part : parts) {
      auto part_keys = part.keys_for(entity);
      if (part_keys.empty()) return {};
      std::vector<std::string> next;
      for (const auto& prefix : acc) {
        for (const auto& pk : part_keys) next.push_back(prefix + "|" + pk);
      }
      acc = std::move(next);
    }
    return acc;
  }
  auto it = entity.predicates.find(predicate);
  if (it == entity.predicates.end()) return {};
  for (const auto& raw : it->second) {
    std::string value = normalize_text(raw);
    if (value.empty()) continue;
    switch (kind) {
      case Kind::exact:
        out.push_back(predicate + "=" + value);
        break;
      case Kind::prefix:
        out.push_back(predicate + "^" + value.substr(0, static_cast<size_t>(prefix_length)));
        break;
      case Kind::qgram_minhash: {
        auto grams = qgram_set(value, q);
        if (grams.empty()) break;
        for (int band = 0; band < bands; ++band) {
          out.push_back(predicate + "~" + std::to_string(band) + ":" +
                        hex64(minhash_band(grams, band, rows_per_band, seed)));
        }
        break;
      }
      case Kind::composite:
        break;
    }
  }
  return out;
}

BlockingConfig BlockingConfig::from_json(const json& doc) {
  BlockingConfig cfg;
  std::function<BlockingFunction(const json&)> parse_fn = [&](const json& f) {
    BlockingFunction fn;
    std::string kind = f.at("function").get<std::string>();
    if (kind == "exact") {
      fn.kind = BlockingFunction::Kind::exact;
    } else if (kind == "prefix") {
      fn.kind = BlockingFunction::Kind::prefix;
    } else if (kind == "qgram_minhash") {
      fn.kind = BlockingFunction::Kind::qgram_minhash;
    } else if (kind == "composite") {
      fn.kind = BlockingFunction::Kind::composite;
    } else {
      raise(Errc::ConfigError, "unknown blocking function: " + kind);
    }
    fn.predicate = f.value("predicate", "");
    fn.prefix_length = f.value("length", 4);
    fn.q = f.value("q", 3);
    fn.bands = f.value("bands", 4);
    fn.rows_per_band = f.value("rows", 2);
    fn.seed = f.value("seed", 1);
    for (const auto& part : f.value("parts", json::array())) {
      fn.parts.push_back(parse_fn(part));
    }
    if (fn.kind != BlockingFunction::Kind::composite && fn.predicate.empty()) {
      raise(Errc::ConfigError, "blocking function without predicate");
    }
    if (fn.kind == BlockingFunction::Kind::composite && fn.parts.empty()) {
      raise(Errc::ConfigError, "composite blocking function without parts");
    }
    return fn;
  };
  for (const auto& f : doc.value("functions", json::array())) {
    cfg.functions.push_back(parse_fn(f));
  }
  if (cfg.functions.empty()) raise(Errc::ConfigError, "blocking config has no functions");
  return cfg;
}

BlockingConfig BlockingConfig::load(const std::string& path) {
  json doc = json::parse(read_file(path), nullptr, false);
  if (doc.is_discarded()) raise(Errc::FormatError, "bad JSON in blocking config " + path);
  return from_json(doc);
}

std::vector<std::set<EntityId>> block(const LinkingPayload& payload, const BlockingConfig& cfg) {
  std::map<std::string, std::set<EntityId>> buckets;
  for (const auto& entity : payload.entities) {
    for (const auto& fn : cfg.functions) {
      for (const auto& key : fn.keys_for(entity)) {
        buckets[key].insert(entity.id);
      }
    }
  }
  std::vector<std::set<EntityId>> out;
  std::set<std::set<EntityId>> seen;
  for (auto& [_, bucket] : buckets) {
    if (bucket.size() < 2) continue;
    if (seen.insert(bucket).second) out.push_back(std::move(bucket));
  }
  return out;
}

PairList generate_pairs(const std::vector<std::set<EntityId>>& blocks,
                        const LinkingPayload& payload, bool include_graph_pairs) {
  std::set<std::pair<EntityId, EntityId>> seen;
  std::map<EntityId, bool> graph_flags;
  for (const auto& e : payload.entities) graph_flags[e.id] = e.is_graph_entity;
  for (const auto& block_set : blocks) {
    std::vector<EntityId> members(block_set.begin(), block_set.end());
    for (size_t i = 0; i < members.size(); ++i) {
      for (size_t j = i + 1; j < members.size(); ++j) {
        if (!include_graph_pairs && graph_flags[members[i]] && graph_flags[members[j]]) continue;
        seen.emplace(members[i], members[j]);
      }
    }
  }
  PairList out;
  out.pairs.assign(seen.begin(), seen.end());
  return out;
}

MatchModel MatchModel::from_json(const json& doc, const std::string& base_dir) {
  MatchModel model;
  model.kind = doc.value("kind", "logistic");
  if (model.kind != "logistic" && model.kind != "rules") {
    raise(Errc::ConfigError, "unknown matching model kind: " + model.kind);
  }
  model.bias = doc.value("bias", 0.0);
  for (const auto& f : doc.value("features", json::array())) {
    MatchFeature feature;
    feature.predicate = f.at("predicate").get<std::string>();
    feature.comparator = f.at("comparator").get<std::string>();
    feature.weight = f.value("weight", 1.0);
    feature.threshold = f.value("threshold", 0.5);
    feature.q = f.value("q", 3);
    model.features.push_back(std::move(feature));
  }
  if (model.features.empty()) raise(Errc::ConfigError, "matching model has no features");
  for (const auto& [string_type, path] : doc.value("encoders", json::object()).items()) {
    std::string full = path.get<std::string>();
    if (!base_dir.empty() && !full.empty() && full[0] != '/') {
      full = (fs::path(base_dir) / full).string();
    }
    model.encoders.emplace(string_type, StringEncoder::load(full));
  }
  return model;
}

MatchModel MatchModel::load(const std::string& path) {
  json doc = json::parse(read_file(path), nullptr, false);
  if (doc.is_discarded()) raise(Errc::FormatError, "bad JSON in matching model " + path);
  return from_json(doc, fs::path(path).parent_path().string());
}

double MatchModel::feature_value(const MatchFeature& f, const LinkEntity& a,
                                 const LinkEntity& b) const {
  auto ita = a.predicates.find(f.predicate);
  auto itb = b.predicates.find(f.predicate);
  if (ita == a.predicates.end() || itb == b.predicates.end()) return 0.0;
  double best = 0.0;
  for (const auto& va : ita->second) {
    for (const auto& vb : itb->second) {
      std::string na = normalize_text(va);
      std::string nb = normalize_text(vb);
      double sim = 0.0;
      if (f.comparator == "exact") {
        sim = na == nb ? 1.0 : 0.0;
      } else if (f.comparator == "qgram_jaccard") {
        sim = qgram_jaccard(na, nb, f.q);
      } else if (f.comparator == "edit_similarity") {
        sim = edit_similarity(na, nb);
      } else if (f.comparator.rfind("learned:", 0) == 0) {
        std::string string_type = f.comparator.substr(8);
        auto enc = encoders.find(string_type);
        if (enc == encoders.end()) {
          raise(Errc::ConfigError, "no encoder loaded for string type " + string_type);
        }
        if (na.empty() || nb.empty()) continue;
        // Map cosine [-1,1] into [0,1] so weights mean the same across features.
        sim = (enc->second.similarity(na, nb) + 1.0) / 2.0;
      } else {
        raise(Errc::ConfigError, "unknown comparator: " + f.comparator);
      }
      best = std::max(best, sim);
    }
  }
  return best;
}

double MatchModel::score(const LinkEntity& a, const LinkEntity& b) const {
  if (kind == "rules") {
    double total_weight = 0.0, fired = 0.0;
    for (const auto& f : features) {
      total_weight += f.weight;
      if (feature_value(f, a, b) >= f.threshold) fired += f.weight;
    }
    return total_weight == 0.0 ? 0.0 : fired / total_weight;
  }
  double z = bias;
  for (const auto& f : features) {
    z += f.weight * feature_value(f, a, b);
  }
  return 1.0 / (1.0 + std::exp(-z));
}

std::vector<ScoredPair> match_pairs(const PairList& pairs, const LinkingPayload& payload,
                                    const MatchModel& model) {
  // A feature predicate absent from the whole payload schema is a config bug,
  // not a low-similarity signal.
  for (const auto& f : model.features) {
    bool present = false;
    for (const auto& e : payload.entities) {
      if (e.predicates.count(f.predicate)) {
        present = true;
        break;
      }
    }
    if (!present && !payload.entities.empty()) {
      raise(Errc::MissingFeaturePredicate, f.predicate);
    }
  }
  std::map<EntityId, const LinkEntity*> by_id;
  for (const auto& e : payload.entities) by_id[e.id] = &e;
  std::vector<ScoredPair> out;
  out.reserve(pairs.pairs.size());
  for (const auto& [left, right] : pairs.pairs) {
    auto la = by_id.find(left);
    auto rb = by_id.find(right);
    if (la == by_id.end() || rb == by_id.end()) continue;
    out.push_back(ScoredPair{left, right, model.score(*la->second, *rb->second)});
  }
  return out;
}

int LinkageGraph::sign(const EntityId& a, const EntityId& b) const {
  auto key = a < b ? std::make_pair(a, b) : std::make_pair(b, a);
  auto it = edges.find(key);
  return it == edges.end() ? 0 : it->second.first;
}

double LinkageGraph::positive_evidence(const EntityId& a, const EntityId& b) const {
  auto key = a < b ? std::make_pair(a, b) : std::make_pair(b, a);
  auto it = edges.find(key);
  if (it == edges.end() || it->second.first != 1) return 0.0;
  return it->second.second;
}

LinkageGraph build_linkage_graph(const std::vector<ScoredPair>& scored, double tau_pos,
                                 double tau_neg) {
  if (!(0.0 <= tau_neg && tau_neg < tau_pos && tau_pos <= 1.0)) {
    raise(Errc::ThresholdOrder, "need 0 <= tau_neg < tau_pos <= 1, got tau_neg=" +
                                    std::to_string(tau_neg) + " tau_pos=" +
                                    std::to_string(tau_pos));
  }
  LinkageGraph g;
  for (const auto& sp : scored) {
    if (sp.left == sp.right) continue;
    g.nodes.insert(sp.left);
    g.nodes.insert(sp.right);
    auto key = sp.left < sp.right ? std::make_pair(sp.left, sp.right)
                                  : std::make_pair(sp.right, sp.left);
    if (sp.probability >= tau_pos) {
      g.edges[key] = {1, sp.probability};
    } else if (sp.probability <= tau_neg) {
      g.edges[key] = {-1, sp.probability};
    }
  }
  return g;
}

EntityId mint_graph_id(const std::set<EntityId>& members) {
  std::string joined;
  for (const auto& m : members) joined += m.str() + "\n";
  return EntityId{kGraphNamespace, "e" + hex64(fnv1a64(joined))};
}

int disagreements(const LinkageGraph& g, const std::vector<std::set<EntityId>>& clusters) {
  std::map<EntityId, size_t> cluster_of;
  for (size_t i = 0; i < clusters.size(); ++i) {
    for (const auto& node : clusters[i]) cluster_of[node] = i;
  }
  int count = 0;
  for (const auto& [key, edge] : g.edges) {
    bool together = cluster_of.at(key.first) == cluster_of.at(key.second);
    if (edge.first == 1 && !together) ++count;
    if (edge.first == -1 && together) ++count;
  }
  return count;
}

ClusterAssignment resolve_clusters(const LinkageGraph& g, const LinkingPayload& payload,
                                   uint64_t seed) {
  ClusterAssignment out;
  std::set<EntityId> universe = g.nodes;
  for (const auto& e : payload.entities) universe.insert(e.id);
  std::map<EntityId, bool> is_graph;
  for (const auto& e : payload.entities) is_graph[e.id] = e.is_graph_entity;
  for (const auto& node : universe) is_graph.try_emplace(node, node.is_graph());

  // Seeded pivot pass: random order, pivot absorbs its unclustered +1
  // neighbors.
  std::vector<EntityId> order(universe.begin(), universe.end());
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::set<EntityId> clustered;
  std::vector<std::set<EntityId>> pivot_clusters;
  for (const auto& pivot : order) {
    if (clustered.count(pivot)) continue;
    std::set<EntityId> cluster = {pivot};
    clustered.insert(pivot);
    for (const auto& other : universe) {
      if (clustered.count(other)) continue;
      if (g.sign(pivot, other) == 1) {
        cluster.insert(other);
        clustered.insert(other);
      }
    }
    pivot_clusters.push_back(std::move(cluster));
  }

  // Constraint repair: split any cluster holding several graph entities.
  std::vector<std::set<EntityId>> repaired;
  for (auto& cluster : pivot_clusters) {
    std::vector<EntityId> graph_members;
    for (const auto& node : cluster) {
      if (is_graph[node]) graph_members.push_back(node);
    }
    if (graph_members.size() <= 1) {
      repaired.push_back(std::move(cluster));
      continue;
    }
    for (size_t i = 0; i < graph_members.size(); ++i) {
      for (size_t j = i + 1; j < graph_members.size(); ++j) {
        if (g.sign(graph_members[i], graph_members[j]) == 1) {
          out.review_pairs.emplace_back(graph_members[i], graph_members[j]);
        }
      }
    }
    std::map<EntityId, std::set<EntityId>> split;
    for (const auto& ge : graph_members) split[ge] = {ge};
    std::set<EntityId> residual;
    for (const auto& node : cluster) {
      if (is_graph[node]) continue;
      double best = 0.0;
      const EntityId* best_graph = nullptr;
      for (const auto& ge : graph_members) {
        double evidence = g.positive_evidence(node, ge);
        if (evidence > best || (evidence == best && evidence > 0.0 && best_graph &&
                                ge.str() < best_graph->str())) {
          best = evidence;
          best_graph = &ge;
        }
      }
      if (best_graph && best > 0.0) {
        split[*best_graph].insert(node);
      } else {
        residual.insert(node);
      }
    }
    for (auto& [_, members] : split) repaired.push_back(std::move(members));
    if (!residual.empty()) repaired.push_back(std::move(residual));
  }

  // Id assignment: the cluster's graph entity if present, else a minted id
  // derived from the member set so re-linking the same inputs is stable.
  for (auto& cluster : repaired) {
    EntityId akg;
    bool has_graph = false;
    for (const auto& node : cluster) {
      if (is_graph[node]) {
        akg = node;
        has_graph = true;
        break;
      }
    }
    if (!has_graph) akg = mint_graph_id(cluster);
    for (const auto& node : cluster) {
      out.assigned[node] = akg;
      if (!is_graph[node]) out.same_as.emplace_back(node, akg);
    }
    out.clusters.push_back(std::move(cluster));
  }
  std::sort(out.same_as.begin(), out.same_as.end());
  return out;
}

}  // namespace kgf
