#pragma once
// Entity recognition and disambiguation over the KG: a per-entity profile
// view (aliases, types, relationships, neighbor types, description,
// importance), alias-similarity candidate retrieval, a one-vs-all logistic
// scorer with rejection, object resolution for construction, and dictionary
// text annotation.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kgforge/engine.hpp"
#include "kgforge/ontology.hpp"
#include "kgforge/simstr.hpp"
#include "kgforge/snapshot.hpp"

namespace kgf {

struct NerdEntityRecord {
  EntityId entity;
  std::map<std::string, std::vector<std::string>> names_aliases;  // locale ("" untagged) -> surfaces
  std::vector<std::string> types;
  std::optional<std::string> description;
  std::vector<std::pair<std::string, std::string>> key_relationships;  // (predicate, surface)
  std::vector<EntityId> neighbor_ids;
  std::vector<std::string> neighbor_types;
  double importance = 0.0;

  std::vector<std::string> all_aliases() const;

  bool operator==(const NerdEntityRecord&) const = default;
};

// Immutable profile-per-entity view with an alias dictionary for retrieval
// and mention detection. Swapped wholesale or patched per entity on refresh.
struct NerdView {
  std::vector<NerdEntityRecord> records;  // ascending by entity id
  std::map<std::string, std::vector<size_t>> alias_index;  // normalized alias -> record indexes
  size_t max_alias_tokens = 0;

  const NerdEntityRecord* find(const EntityId& entity) const;
  void reindex();
};

// One record per graph entity. Relationship lists carry both directions
// (incoming edges render as predicate + "^-1") and cap at the 16
// highest-importance neighbors.
NerdView build_entity_view(const KgSnapshot& snapshot,
                           const std::vector<ImportanceRecord>& importance,
                           const Ontology& ontology);

// Recomputes the records of `changed` entities plus their old and new
// neighbors, and re-stamps importance everywhere from the given table, so the
// result equals a full rebuild.
void refresh_entity_view(NerdView& view, const KgSnapshot& snapshot,
                         const std::vector<ImportanceRecord>& importance,
                         const Ontology& ontology, const std::vector<EntityId>& changed);

struct Mention {
  std::string surface;
  std::vector<std::string> context_tokens;
  std::optional<std::string> type_hint;
};

struct NerdCandidate {
  size_t record_index = 0;
  EntityId entity;
  double alias_similarity = 0.0;
  double importance = 0.0;
};

// Scores every record that shares the type hint by max alias similarity
// (learned cosine when an encoder is given, q-gram overlap otherwise); ties
// break by importance, then entity id.
std::vector<NerdCandidate> retrieve_candidates(const NerdView& view, const Mention& mention,
                                               size_t k,
                                               const StringEncoder* encoder = nullptr);

struct DisambWeights {
  std::map<std::string, double> weights;
  double bias = 0.0;
  double theta_reject = 0.5;

  void save(const std::string& path) const;
  static DisambWeights load(const std::string& path);
};

// Feature names used by the scorer and the weights file.
std::vector<std::string> disamb_feature_names();

// Feature vector for one (mention, candidate) pair, keyed by feature name.
std::map<std::string, double> disamb_features(const Mention& mention,
                                              const NerdCandidate& candidate,
                                              const NerdView& view);

struct DisambiguationResult {
  std::optional<EntityId> outcome;  // nullopt means REJECT
  double confidence = 0.0;
  std::vector<std::pair<EntityId, double>> per_candidate_scores;
};

// One-vs-all logistic scores per candidate; the argmax wins when it clears
// theta_reject, otherwise the mention is rejected.
DisambiguationResult disambiguate(const Mention& mention,
                                  const std::vector<NerdCandidate>& candidates,
                                  const NerdView& view, const DisambWeights& weights,
                                  double theta_reject);

struct FitWeightsConfig {
  int epochs = 200;
  double learning_rate = 0.5;
  int negatives_per_positive = 3;
  uint64_t seed = 1;
};

// Calibrates the scorer on templated mentions generated from the view itself:
// each record's aliases paired with context sampled from its own profile
// (positive label) and with rival records (negative label).
DisambWeights fit_weights(const NerdView& view, const FitWeightsConfig& cfg);

// Construction-side object resolution: candidates filtered by the expected
// ontology type, disambiguated against the subject's other facts. Returns
// the entity on acceptance, nullopt to keep the literal.
std::optional<EntityId> resolve_object(const NerdView& view, const DisambWeights& weights,
                                       const std::string& literal,
                                       const std::vector<std::string>& subject_context,
                                       const std::string& expected_type,
                                       double theta_reject = 0.9);

struct Annotation {
  size_t start = 0;  // character offsets into the original text, end exclusive
  size_t end = 0;
  std::string surface;
  EntityId entity;
  double confidence = 0.0;
};

// Dictionary scan with longest-match alias detection; every mention is
// disambiguated against the full text's tokens and dropped on rejection.
std::vector<Annotation> annotate_text(const std::string& text, const NerdView& view,
                                      const DisambWeights& weights, double theta_reject = 0.5);

std::string render_annotations_jsonl(const std::vector<Annotation>& annotations);

}  // namespace kgf
