#pragma once
// Knowledge-graph embeddings: TransE and DistMult training over the
// entity-to-entity fact view, with scoring, ranked imputation, and
// low-score fact auditing. Nearest-neighbor search is a brute-force scan,
// which doubles as the oracle for any later approximate index.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "kgforge/snapshot.hpp"

namespace kgf {

struct FactTriple {
  int s = 0;
  int p = 0;
  int o = 0;

  auto operator<=>(const FactTriple&) const = default;
};

// Entity-to-entity facts only; literal objects and same_as lineage rows are
// filtered out. Vocab order is sorted, so ids are stable across runs.
struct TrainingView {
  std::vector<FactTriple> facts;
  std::vector<std::string> entities;
  std::vector<std::string> predicates;
  std::map<std::string, int> entity_index;
  std::map<std::string, int> predicate_index;
};

TrainingView build_training_view(const KgSnapshot& snapshot);

enum class EmbeddingKind { transe, distmult };

const char* embedding_kind_name(EmbeddingKind k);
EmbeddingKind embedding_kind_from(const std::string& name);

struct EmbeddingModel {
  EmbeddingKind kind = EmbeddingKind::transe;
  int dim = 0;
  std::vector<std::string> entities;
  std::vector<std::string> predicates;
  std::vector<double> entity_vectors;     // |E| x dim, row-major
  std::vector<double> predicate_vectors;  // |P| x dim, row-major

  const double* entity_row(int id) const { return entity_vectors.data() + id * dim; }
  const double* predicate_row(int id) const { return predicate_vectors.data() + id * dim; }
  int entity_id(const std::string& name) const;        // UnknownId when absent
  int predicate_id(const std::string& name) const;     // UnknownId when absent

  void save(const std::string& path) const;
  static EmbeddingModel load(const std::string& path);
};

struct EmbedTrainConfig {
  EmbeddingKind kind = EmbeddingKind::transe;
  int dim = 32;
  int epochs = 200;
  double learning_rate = 0.05;
  int negatives_per_positive = 4;
  double margin = 1.0;
  uint64_t seed = 1;
};

// Uniform init in [-6/sqrt(dim), +6/sqrt(dim)], seeded; TransE entity rows
// start unit-normalized to match the per-update renorm invariant.
EmbeddingModel init_model(const TrainingView& view, const EmbedTrainConfig& cfg);

EmbeddingModel train(const TrainingView& view, const EmbedTrainConfig& cfg,
                     std::vector<double>* epoch_losses = nullptr);

// TransE: -||s + p - o||2. DistMult: sum_i s_i * p_i * o_i.
double score_fact(const EmbeddingModel& model, int s, int p, int o);
double score_fact(const EmbeddingModel& model, const std::string& s, const std::string& p,
                  const std::string& o);

// Loss and parameter gradients for one (positive, negative) example pair,
// keyed by ('e' or 'p', row id). Exposed so gradients can be checked against
// central finite differences.
struct ExampleGrads {
  double loss = 0.0;
  std::map<std::pair<char, int>, std::vector<double>> rows;
};

ExampleGrads example_gradients(const EmbeddingModel& model, const FactTriple& positive,
                               const FactTriple& negative, double margin);

struct RankedEntity {
  int id = 0;
  double score = 0.0;
};

// Brute-force scan of all entity vectors by the model's score for (s, p, ?),
// minus excluded ids; ties break on entity id. k past |E| returns everything.
std::vector<RankedEntity> predict_object(const EmbeddingModel& model, int s, int p, size_t k,
                                         const std::set<int>& exclude_known = {});

// The given candidate objects sorted by score_fact descending, entity-id
// tiebreak.
std::vector<RankedEntity> rank_facts(const EmbeddingModel& model, int s, int p,
                                     const std::vector<int>& objects);

// Indexes of the facts whose score lands in the bottom `percentile` percent
// of all scored facts. 0 flags nothing, 100 flags everything.
std::vector<size_t> verify_facts(const EmbeddingModel& model, const std::vector<FactTriple>& facts,
                                 double percentile);

}  // namespace kgf
