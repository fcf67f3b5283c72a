#include "kgforge/nerd.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>
#include <set>

#include <json.hpp>

#include "kgforge/util.hpp"

namespace kgf {

namespace {

constexpr size_t kNeighborCap = 16;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Fraction of the mention's context tokens found in the given token set.
double overlap_fraction(const std::vector<std::string>& context,
                        const std::set<std::string>& profile) {
  if (context.empty() || profile.empty()) return 0.0;
  size_t hits = 0;
  for (const auto& token : context) {
    if (profile.count(token)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(context.size());
}

NerdEntityRecord build_record(const KgSnapshot& snapshot, const EntityId& entity,
                              const std::map<EntityId, double>& importance_of,
                              const std::map<EntityId, std::vector<std::pair<std::string, EntityId>>>&
                                  incoming,
                              const Ontology& ontology) {
  NerdEntityRecord record;
  record.entity = entity;

  std::vector<std::pair<std::string, EntityId>> neighbors;  // (rendered predicate, neighbor)
  for (const ExtendedTriple& t : snapshot.get_entity(entity)) {
    if (t.predicate == kNamePredicate || t.predicate == kAliasPredicate) {
      record.names_aliases[t.locale.value_or("")].push_back(t.object);
    } else if (t.predicate == kTypePredicate) {
      record.types.push_back(t.object);
    } else if (t.predicate == kDescriptionPredicate) {
      if (!record.description) record.description = t.object;
    } else if (t.object_kind == ObjectKind::entity_ref && t.predicate != kSameAsPredicate) {
      neighbors.push_back({t.predicate, t.object_id()});
    }
  }
  auto in_it = incoming.find(entity);
  if (in_it != incoming.end()) {
    for (const auto& [predicate, neighbor] : in_it->second) {
      neighbors.push_back({predicate + "^-1", neighbor});
    }
  }
  if (record.names_aliases.empty()) {
    record.names_aliases[""].push_back(entity.local);
  }
  std::sort(record.types.begin(), record.types.end());
  record.types.erase(std::unique(record.types.begin(), record.types.end()), record.types.end());

  std::stable_sort(neighbors.begin(), neighbors.end(),
                   [&](const auto& a, const auto& b) {
                     double ia = importance_of.count(a.second) ? importance_of.at(a.second) : 0.0;
                     double ib = importance_of.count(b.second) ? importance_of.at(b.second) : 0.0;
                     if (ia != ib) return ia > ib;
                     return a.second < b.second;
                   });
  if (neighbors.size() > kNeighborCap) neighbors.resize(kNeighborCap);

  std::set<std::string> neighbor_types;
  for (const auto& [predicate, neighbor] : neighbors) {
    record.neighbor_ids.push_back(neighbor);
    std::string surface = neighbor.local;
    for (const ExtendedTriple& t : snapshot.get_entity(neighbor)) {
      if (t.predicate == kNamePredicate) {
        surface = t.object;
        break;
      }
    }
    record.key_relationships.push_back({predicate, surface});
    for (const ExtendedTriple& t : snapshot.get_entity(neighbor)) {
      if (t.predicate == kTypePredicate && ontology.has_type(t.object)) {
        neighbor_types.insert(t.object);
      }
    }
  }
  record.neighbor_types.assign(neighbor_types.begin(), neighbor_types.end());

  auto imp = importance_of.find(entity);
  record.importance = imp == importance_of.end() ? 0.0 : imp->second;
  return record;
}

std::map<EntityId, std::vector<std::pair<std::string, EntityId>>> incoming_edges(
    const KgSnapshot& snapshot) {
  std::map<EntityId, std::vector<std::pair<std::string, EntityId>>> incoming;
  snapshot.for_each([&](const ExtendedTriple& t) {
    if (t.object_kind != ObjectKind::entity_ref || t.predicate == kSameAsPredicate) return;
    EntityId target = t.object_id();
    if (target.is_graph()) incoming[target].push_back({t.predicate, t.subject});
  });
  return incoming;
}

std::map<EntityId, double> importance_map(const std::vector<ImportanceRecord>& importance) {
  std::map<EntityId, double> out;
  for (const ImportanceRecord& r : importance) out[r.entity] = r.aggregate;
  return out;
}

std::set<std::string> profile_tokens(const NerdEntityRecord& record) {
  std::set<std::string> tokens;
  for (const auto& type : record.neighbor_types) {
    for (const auto& token : tokenize(type)) tokens.insert(token);
  }
  if (record.description) {
    for (const auto& token : tokenize(*record.description)) tokens.insert(token);
  }
  return tokens;
}

std::set<std::string> relationship_tokens(const NerdEntityRecord& record) {
  std::set<std::string> tokens;
  for (const auto& [predicate, surface] : record.key_relationships) {
    for (const auto& token : tokenize(surface)) tokens.insert(token);
  }
  return tokens;
}

// Tokenizes raw text while keeping the character span of each token.
struct SpanToken {
  std::string token;
  size_t start = 0;
  size_t end = 0;
};

std::vector<SpanToken> span_tokenize(const std::string& text) {
  std::vector<SpanToken> out;
  size_t i = 0;
  while (i < text.size()) {
    if (!std::isalnum(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    size_t start = i;
    std::string token;
    while (i < text.size() && std::isalnum(static_cast<unsigned char>(text[i]))) {
      token.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(text[i]))));
      ++i;
    }
    out.push_back({token, start, i});
  }
  return out;
}

}  // namespace

std::vector<std::string> NerdEntityRecord::all_aliases() const {
  std::vector<std::string> out;
  for (const auto& [locale, surfaces] : names_aliases) {
    out.insert(out.end(), surfaces.begin(), surfaces.end());
  }
  return out;
}

const NerdEntityRecord* NerdView::find(const EntityId& entity) const {
  auto it = std::lower_bound(records.begin(), records.end(), entity,
                             [](const NerdEntityRecord& r, const EntityId& id) {
                               return r.entity < id;
                             });
  if (it == records.end() || !(it->entity == entity)) return nullptr;
  return &*it;
}

void NerdView::reindex() {
  alias_index.clear();
  max_alias_tokens = 0;
  for (size_t i = 0; i < records.size(); ++i) {
    std::set<std::string> seen;
    for (const auto& alias : records[i].all_aliases()) {
      // Keys are token-joined so punctuation differences cannot split the
      // dictionary from the scanner's phrase construction.
      auto tokens = tokenize(alias);
      if (tokens.empty()) continue;
      std::string key = tokens[0];
      for (size_t t = 1; t < tokens.size(); ++t) key += " " + tokens[t];
      if (!seen.insert(key).second) continue;
      alias_index[key].push_back(i);
      max_alias_tokens = std::max(max_alias_tokens, tokens.size());
    }
  }
}

NerdView build_entity_view(const KgSnapshot& snapshot,
                           const std::vector<ImportanceRecord>& importance,
                           const Ontology& ontology) {
  NerdView view;
  auto importance_of = importance_map(importance);
  auto incoming = incoming_edges(snapshot);
  for (const EntityId& subject : snapshot.subjects()) {
    if (!subject.is_graph()) continue;
    view.records.push_back(build_record(snapshot, subject, importance_of, incoming, ontology));
  }
  view.reindex();
  return view;
}

void refresh_entity_view(NerdView& view, const KgSnapshot& snapshot,
                         const std::vector<ImportanceRecord>& importance,
                         const Ontology& ontology, const std::vector<EntityId>& changed) {
  auto importance_of = importance_map(importance);
  auto incoming = incoming_edges(snapshot);

  // The affected set is each changed entity plus anything adjacent to it in
  // either the old records or the new snapshot.
  std::set<EntityId> affected(changed.begin(), changed.end());
  for (const EntityId& id : changed) {
    const NerdEntityRecord* old_record = view.find(id);
    if (old_record) {
      for (const EntityId& n : old_record->neighbor_ids) affected.insert(n);
    }
    for (const ExtendedTriple& t : snapshot.get_entity(id)) {
      if (t.object_kind == ObjectKind::entity_ref && t.predicate != kSameAsPredicate) {
        affected.insert(t.object_id());
      }
    }
    auto in_it = incoming.find(id);
    if (in_it != incoming.end()) {
      for (const auto& [predicate, neighbor] : in_it->second) affected.insert(neighbor);
    }
  }
  // A record can reference a changed entity beyond that entity's own capped
  // neighbor list (via an inverse edge), so scan the view for back references.
  std::set<EntityId> changed_set(changed.begin(), changed.end());
  for (const NerdEntityRecord& record : view.records) {
    for (const EntityId& n : record.neighbor_ids) {
      if (changed_set.count(n)) {
        affected.insert(record.entity);
        break;
      }
    }
  }

  std::vector<NerdEntityRecord> next;
  next.reserve(view.records.size());
  for (const NerdEntityRecord& record : view.records) {
    if (!affected.count(record.entity)) next.push_back(record);
  }
  for (const EntityId& id : affected) {
    if (!id.is_graph() || !snapshot.has_entity(id)) continue;
    next.push_back(build_record(snapshot, id, importance_of, incoming, ontology));
  }
  std::sort(next.begin(), next.end(),
            [](const NerdEntityRecord& a, const NerdEntityRecord& b) { return a.entity < b.entity; });
  for (NerdEntityRecord& record : next) {
    auto imp = importance_of.find(record.entity);
    record.importance = imp == importance_of.end() ? 0.0 : imp->second;
  }
  view.records = std::move(next);
  view.reindex();
}

std::vector<NerdCandidate> retrieve_candidates(const NerdView& view, const Mention& mention,
                                               size_t k, const StringEncoder* encoder) {
  std::vector<NerdCandidate> scored;
  for (size_t i = 0; i < view.records.size(); ++i) {
    const NerdEntityRecord& record = view.records[i];
    if (mention.type_hint &&
        std::find(record.types.begin(), record.types.end(), *mention.type_hint) ==
            record.types.end()) {
      continue;
    }
    double best = 0.0;
    for (const auto& alias : record.all_aliases()) {
      double sim = encoder ? encoder->similarity(mention.surface, alias)
                           : qgram_jaccard(normalize_text(mention.surface),
                                           normalize_text(alias), 3);
      best = std::max(best, sim);
    }
    if (best <= 0.0) continue;
    scored.push_back({i, record.entity, best, record.importance});
  }
  std::sort(scored.begin(), scored.end(), [](const NerdCandidate& a, const NerdCandidate& b) {
    if (a.alias_similarity != b.alias_similarity) return a.alias_similarity > b.alias_similarity;
    if (a.importance != b.importance) return a.importance > b.importance;
    return a.entity < b.entity;
  });
  if (scored.size() > k) scored.resize(k);
  return scored;
}

std::vector<std::string> disamb_feature_names() {
  return {"alias_similarity", "relationship_overlap", "profile_overlap", "type_match",
          "log_importance"};
}

std::map<std::string, double> disamb_features(const Mention& mention,
                                              const NerdCandidate& candidate,
                                              const NerdView& view) {
  const NerdEntityRecord& record = view.records[candidate.record_index];
  std::map<std::string, double> features;
  features["alias_similarity"] = candidate.alias_similarity;
  features["relationship_overlap"] =
      overlap_fraction(mention.context_tokens, relationship_tokens(record));
  features["profile_overlap"] = overlap_fraction(mention.context_tokens, profile_tokens(record));
  double type_match = 1.0;
  if (mention.type_hint &&
      std::find(record.types.begin(), record.types.end(), *mention.type_hint) ==
          record.types.end()) {
    type_match = 0.0;
  }
  features["type_match"] = type_match;
  features["log_importance"] = std::log1p(std::max(0.0, record.importance));
  return features;
}

DisambiguationResult disambiguate(const Mention& mention,
                                  const std::vector<NerdCandidate>& candidates,
                                  const NerdView& view, const DisambWeights& weights,
                                  double theta_reject) {
  DisambiguationResult result;
  for (const NerdCandidate& candidate : candidates) {
    double z = weights.bias;
    for (const auto& [name, value] : disamb_features(mention, candidate, view)) {
      auto w = weights.weights.find(name);
      if (w != weights.weights.end()) z += w->second * value;
    }
    result.per_candidate_scores.push_back({candidate.entity, sigmoid(z)});
  }
  size_t best = 0;
  for (size_t i = 0; i < result.per_candidate_scores.size(); ++i) {
    if (result.per_candidate_scores[i].second > result.per_candidate_scores[best].second) {
      best = i;
    }
  }
  if (!result.per_candidate_scores.empty()) {
    result.confidence = result.per_candidate_scores[best].second;
    if (result.confidence >= theta_reject) {
      result.outcome = result.per_candidate_scores[best].first;
    }
  }
  return result;
}

void DisambWeights::save(const std::string& path) const {
  nlohmann::ordered_json doc;
  auto ws = nlohmann::ordered_json::object();
  for (const auto& [name, value] : weights) ws[name] = value;
  doc["weights"] = std::move(ws);
  doc["bias"] = bias;
  doc["theta_reject"] = theta_reject;
  write_file_atomic(path, doc.dump(2) + "\n");
}

DisambWeights DisambWeights::load(const std::string& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    raise(Errc::FormatError, path + ": " + e.what());
  }
  DisambWeights out;
  for (const auto& [name, value] : doc.at("weights").items()) {
    out.weights[name] = value.get<double>();
  }
  out.bias = doc.at("bias").get<double>();
  out.theta_reject = doc.at("theta_reject").get<double>();
  return out;
}

DisambWeights fit_weights(const NerdView& view, const FitWeightsConfig& cfg) {
  // Templated training pairs: a record's alias mentioned alongside tokens
  // sampled from its own relationships and profile is a positive; the same
  // mention paired with a rival record is a negative.
  struct Example {
    Mention mention;
    NerdCandidate candidate;
    double label = 0.0;
  };
  std::vector<Example> examples;
  std::mt19937_64 rng(cfg.seed);

  std::vector<size_t> populated;
  for (size_t i = 0; i < view.records.size(); ++i) populated.push_back(i);
  if (populated.empty()) raise(Errc::InsufficientData, "entity view has no records");

  for (size_t i : populated) {
    const NerdEntityRecord& record = view.records[i];
    std::vector<std::string> pool;
    for (const auto& token : relationship_tokens(record)) pool.push_back(token);
    for (const auto& token : profile_tokens(record)) pool.push_back(token);
    for (const auto& alias : record.all_aliases()) {
      Mention mention;
      mention.surface = alias;
      if (pool.empty()) {
        mention.context_tokens = {"mentioned"};
      } else {
        std::shuffle(pool.begin(), pool.end(), rng);
        size_t take = std::max<size_t>(1, pool.size() / 2);
        mention.context_tokens.assign(pool.begin(), pool.begin() + take);
      }

      auto candidates = retrieve_candidates(view, mention, view.records.size());
      const NerdCandidate* self = nullptr;
      for (const auto& c : candidates) {
        if (c.record_index == i) self = &c;
      }
      if (!self) continue;
      examples.push_back({mention, *self, 1.0});

      int negatives = 0;
      for (const auto& c : candidates) {
        if (c.record_index == i) continue;
        examples.push_back({mention, c, 0.0});
        if (++negatives >= cfg.negatives_per_positive) break;
      }
      while (negatives < cfg.negatives_per_positive && view.records.size() > 1) {
        size_t pick = rng() % view.records.size();
        if (pick == i) continue;
        NerdCandidate rival{pick, view.records[pick].entity, 0.0,
                            view.records[pick].importance};
        examples.push_back({mention, rival, 0.0});
        ++negatives;
      }
    }
  }
  if (examples.size() < 4) {
    raise(Errc::InsufficientData, "not enough templated examples to fit weights");
  }

  DisambWeights fitted;
  for (const auto& name : disamb_feature_names()) fitted.weights[name] = 0.0;
  fitted.bias = 0.0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(examples.begin(), examples.end(), rng);
    for (const Example& ex : examples) {
      auto features = disamb_features(ex.mention, ex.candidate, view);
      double z = fitted.bias;
      for (const auto& [name, value] : features) z += fitted.weights.at(name) * value;
      double error = sigmoid(z) - ex.label;
      fitted.bias -= cfg.learning_rate * error;
      for (const auto& [name, value] : features) {
        fitted.weights.at(name) -= cfg.learning_rate * error * value;
      }
    }
  }
  return fitted;
}

std::optional<EntityId> resolve_object(const NerdView& view, const DisambWeights& weights,
                                       const std::string& literal,
                                       const std::vector<std::string>& subject_context,
                                       const std::string& expected_type, double theta_reject) {
  Mention mention;
  mention.surface = literal;
  mention.context_tokens = subject_context;
  if (!expected_type.empty()) mention.type_hint = expected_type;
  auto candidates = retrieve_candidates(view, mention, 8);
  return disambiguate(mention, candidates, view, weights, theta_reject).outcome;
}

std::vector<Annotation> annotate_text(const std::string& text, const NerdView& view,
                                      const DisambWeights& weights, double theta_reject) {
  std::vector<Annotation> annotations;
  auto tokens = span_tokenize(text);
  if (tokens.empty() || view.max_alias_tokens == 0) return annotations;

  std::vector<std::string> context;
  for (const auto& t : tokens) context.push_back(t.token);

  size_t at = 0;
  while (at < tokens.size()) {
    size_t longest = 0;
    const std::vector<size_t>* hit = nullptr;
    size_t window_cap = std::min(view.max_alias_tokens, tokens.size() - at);
    std::string phrase;
    for (size_t len = 1; len <= window_cap; ++len) {
      if (len > 1) phrase += " ";
      phrase += tokens[at + len - 1].token;
      auto it = view.alias_index.find(phrase);
      if (it != view.alias_index.end()) {
        longest = len;
        hit = &it->second;
      }
    }
    if (!hit) {
      ++at;
      continue;
    }

    size_t start = tokens[at].start;
    size_t end = tokens[at + longest - 1].end;
    Mention mention;
    mention.surface = text.substr(start, end - start);
    mention.context_tokens = context;
    auto candidates = retrieve_candidates(view, mention, 8);
    auto result = disambiguate(mention, candidates, view, weights, theta_reject);
    if (result.outcome) {
      annotations.push_back({start, end, mention.surface, *result.outcome, result.confidence});
    }
    at += longest;
  }
  return annotations;
}

std::string render_annotations_jsonl(const std::vector<Annotation>& annotations) {
  std::string out;
  for (const Annotation& a : annotations) {
    nlohmann::ordered_json row;
    row["start"] = a.start;
    row["end"] = a.end;
    row["surface"] = a.surface;
    row["entity"] = a.entity.str();
    row["confidence"] = a.confidence;
    out += row.dump() + "\n";
  }
  return out;
}

}  // namespace kgf
