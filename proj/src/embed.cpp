#include "kgforge/embed.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include <json.hpp>

#include "kgforge/ontology.hpp"
#include "kgforge/util.hpp"

static_assert(std::endian::native == std::endian::little,
              "model files store raw little-endian f32 matrices");

namespace kgf {

namespace {

constexpr double kNormEps = 1e-12;

double stable_softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void check_entity(const EmbeddingModel& model, int id) {
  if (id < 0 || id >= static_cast<int>(model.entities.size())) {
    raise(Errc::UnknownId, "entity id out of range: " + std::to_string(id));
  }
}

void check_predicate(const EmbeddingModel& model, int id) {
  if (id < 0 || id >= static_cast<int>(model.predicates.size())) {
    raise(Errc::UnknownId, "predicate id out of range: " + std::to_string(id));
  }
}

void renorm_entity_row(EmbeddingModel& model, int id) {
  double* row = model.entity_vectors.data() + static_cast<size_t>(id) * model.dim;
  double norm = 0.0;
  for (int i = 0; i < model.dim; ++i) norm += row[i] * row[i];
  norm = std::sqrt(norm);
  if (norm > kNormEps) {
    for (int i = 0; i < model.dim; ++i) row[i] /= norm;
  }
}

void add_grad(ExampleGrads& grads, char kind, int id, int dim, const double* values,
              double scale) {
  auto& row = grads.rows[{kind, id}];
  if (row.empty()) row.assign(dim, 0.0);
  for (int i = 0; i < dim; ++i) row[i] += scale * values[i];
}

}  // namespace

TrainingView build_training_view(const KgSnapshot& snapshot) {
  std::set<std::string> entity_names;
  std::set<std::string> predicate_names;
  std::vector<std::pair<std::string, std::pair<std::string, std::string>>> raw;
  snapshot.for_each([&](const ExtendedTriple& t) {
    if (t.object_kind != ObjectKind::entity_ref) return;
    if (t.predicate == kSameAsPredicate) return;
    entity_names.insert(t.subject.str());
    entity_names.insert(t.object);
    predicate_names.insert(t.predicate);
    raw.push_back({t.subject.str(), {t.predicate, t.object}});
  });
  if (raw.empty()) {
    raise(Errc::EmptyTrainingSet, "no entity-to-entity facts to train on");
  }

  TrainingView view;
  view.entities.assign(entity_names.begin(), entity_names.end());
  view.predicates.assign(predicate_names.begin(), predicate_names.end());
  for (size_t i = 0; i < view.entities.size(); ++i) {
    view.entity_index[view.entities[i]] = static_cast<int>(i);
  }
  for (size_t i = 0; i < view.predicates.size(); ++i) {
    view.predicate_index[view.predicates[i]] = static_cast<int>(i);
  }
  for (const auto& [s, po] : raw) {
    view.facts.push_back({view.entity_index.at(s), view.predicate_index.at(po.first),
                          view.entity_index.at(po.second)});
  }
  std::sort(view.facts.begin(), view.facts.end());
  view.facts.erase(std::unique(view.facts.begin(), view.facts.end()), view.facts.end());
  return view;
}

const char* embedding_kind_name(EmbeddingKind k) {
  return k == EmbeddingKind::transe ? "transe" : "distmult";
}

EmbeddingKind embedding_kind_from(const std::string& name) {
  if (name == "transe") return EmbeddingKind::transe;
  if (name == "distmult") return EmbeddingKind::distmult;
  raise(Errc::ConfigError, "unknown embedding kind: " + name);
}

int EmbeddingModel::entity_id(const std::string& name) const {
  auto it = std::lower_bound(entities.begin(), entities.end(), name);
  if (it == entities.end() || *it != name) raise(Errc::UnknownId, "unknown entity: " + name);
  return static_cast<int>(it - entities.begin());
}

int EmbeddingModel::predicate_id(const std::string& name) const {
  auto it = std::lower_bound(predicates.begin(), predicates.end(), name);
  if (it == predicates.end() || *it != name) raise(Errc::UnknownId, "unknown predicate: " + name);
  return static_cast<int>(it - predicates.begin());
}

EmbeddingModel init_model(const TrainingView& view, const EmbedTrainConfig& cfg) {
  if (cfg.dim <= 0) raise(Errc::ConfigError, "embedding dim must be positive");
  EmbeddingModel model;
  model.kind = cfg.kind;
  model.dim = cfg.dim;
  model.entities = view.entities;
  model.predicates = view.predicates;

  double bound = 6.0 / std::sqrt(static_cast<double>(cfg.dim));
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> uni(-bound, bound);
  model.entity_vectors.resize(model.entities.size() * cfg.dim);
  model.predicate_vectors.resize(model.predicates.size() * cfg.dim);
  for (double& v : model.entity_vectors) v = uni(rng);
  for (double& v : model.predicate_vectors) v = uni(rng);
  if (cfg.kind == EmbeddingKind::transe) {
    for (size_t e = 0; e < model.entities.size(); ++e) {
      renorm_entity_row(model, static_cast<int>(e));
    }
  }
  return model;
}

double score_fact(const EmbeddingModel& model, int s, int p, int o) {
  check_entity(model, s);
  check_predicate(model, p);
  check_entity(model, o);
  const double* vs = model.entity_row(s);
  const double* vp = model.predicate_row(p);
  const double* vo = model.entity_row(o);
  if (model.kind == EmbeddingKind::transe) {
    double sq = 0.0;
    for (int i = 0; i < model.dim; ++i) {
      double d = vs[i] + vp[i] - vo[i];
      sq += d * d;
    }
    return -std::sqrt(sq);
  }
  // (s*o)*p keeps the float rounding symmetric in s and o, so swapping them
  // returns the bit-identical score.
  double dot = 0.0;
  for (int i = 0; i < model.dim; ++i) dot += (vs[i] * vo[i]) * vp[i];
  return dot;
}

double score_fact(const EmbeddingModel& model, const std::string& s, const std::string& p,
                  const std::string& o) {
  return score_fact(model, model.entity_id(s), model.predicate_id(p), model.entity_id(o));
}

ExampleGrads example_gradients(const EmbeddingModel& model, const FactTriple& positive,
                               const FactTriple& negative, double margin) {
  check_entity(model, positive.s);
  check_predicate(model, positive.p);
  check_entity(model, positive.o);
  check_entity(model, negative.s);
  check_predicate(model, negative.p);
  check_entity(model, negative.o);

  ExampleGrads grads;
  int dim = model.dim;
  if (model.kind == EmbeddingKind::transe) {
    auto distance_and_unit = [&](const FactTriple& f, std::vector<double>& unit) {
      const double* vs = model.entity_row(f.s);
      const double* vp = model.predicate_row(f.p);
      const double* vo = model.entity_row(f.o);
      unit.resize(dim);
      double sq = 0.0;
      for (int i = 0; i < dim; ++i) {
        unit[i] = vs[i] + vp[i] - vo[i];
        sq += unit[i] * unit[i];
      }
      double dist = std::sqrt(sq);
      double denom = std::max(dist, kNormEps);
      for (int i = 0; i < dim; ++i) unit[i] /= denom;
      return dist;
    };
    std::vector<double> upos, uneg;
    double dpos = distance_and_unit(positive, upos);
    double dneg = distance_and_unit(negative, uneg);
    grads.loss = std::max(0.0, margin + dpos - dneg);
    if (grads.loss > 0.0) {
      add_grad(grads, 'e', positive.s, dim, upos.data(), 1.0);
      add_grad(grads, 'p', positive.p, dim, upos.data(), 1.0);
      add_grad(grads, 'e', positive.o, dim, upos.data(), -1.0);
      add_grad(grads, 'e', negative.s, dim, uneg.data(), -1.0);
      add_grad(grads, 'p', negative.p, dim, uneg.data(), -1.0);
      add_grad(grads, 'e', negative.o, dim, uneg.data(), 1.0);
    }
    return grads;
  }

  double spos = score_fact(model, positive.s, positive.p, positive.o);
  double sneg = score_fact(model, negative.s, negative.p, negative.o);
  grads.loss = stable_softplus(-spos) + stable_softplus(sneg);
  double dpos = -sigmoid(-spos);
  double dneg = sigmoid(sneg);
  auto add_distmult = [&](const FactTriple& f, double dscore) {
    const double* vs = model.entity_row(f.s);
    const double* vp = model.predicate_row(f.p);
    const double* vo = model.entity_row(f.o);
    std::vector<double> gs(dim), gp(dim), go(dim);
    for (int i = 0; i < dim; ++i) {
      gs[i] = dscore * vp[i] * vo[i];
      gp[i] = dscore * vs[i] * vo[i];
      go[i] = dscore * vs[i] * vp[i];
    }
    add_grad(grads, 'e', f.s, dim, gs.data(), 1.0);
    add_grad(grads, 'p', f.p, dim, gp.data(), 1.0);
    add_grad(grads, 'e', f.o, dim, go.data(), 1.0);
  };
  add_distmult(positive, dpos);
  add_distmult(negative, dneg);
  return grads;
}

EmbeddingModel train(const TrainingView& view, const EmbedTrainConfig& cfg,
                     std::vector<double>* epoch_losses) {
  if (view.facts.empty()) raise(Errc::EmptyTrainingSet, "no facts to train on");
  if (cfg.epochs < 0 || cfg.learning_rate <= 0.0 || cfg.negatives_per_positive <= 0) {
    raise(Errc::ConfigError, "train config values must be positive");
  }
  EmbeddingModel model = init_model(view, cfg);
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  std::uniform_int_distribution<int> pick_entity(0, static_cast<int>(view.entities.size()) - 1);

  std::vector<FactTriple> order = view.facts;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total_loss = 0.0;
    size_t examples = 0;
    for (const FactTriple& fact : order) {
      // One positive and its negatives form a mini-batch: gradients
      // accumulate across the pairs and apply as a single step.
      ExampleGrads batch;
      for (int j = 0; j < cfg.negatives_per_positive; ++j) {
        FactTriple corrupted = fact;
        if (rng() % 2 == 0) {
          corrupted.o = pick_entity(rng);
        } else {
          corrupted.s = pick_entity(rng);
        }
        ExampleGrads pair = example_gradients(model, fact, corrupted, cfg.margin);
        batch.loss += pair.loss;
        for (const auto& [key, row] : pair.rows) {
          auto& acc = batch.rows[key];
          if (acc.empty()) acc.assign(model.dim, 0.0);
          for (int i = 0; i < model.dim; ++i) acc[i] += row[i];
        }
        ++examples;
      }
      total_loss += batch.loss;
      for (const auto& [key, row] : batch.rows) {
        double* target = key.first == 'e'
                             ? model.entity_vectors.data() + static_cast<size_t>(key.second) * model.dim
                             : model.predicate_vectors.data() +
                                   static_cast<size_t>(key.second) * model.dim;
        for (int i = 0; i < model.dim; ++i) target[i] -= cfg.learning_rate * row[i];
      }
      if (model.kind == EmbeddingKind::transe) {
        for (const auto& [key, row] : batch.rows) {
          if (key.first == 'e') renorm_entity_row(model, key.second);
        }
      }
    }
    double epoch_loss = examples > 0 ? total_loss / static_cast<double>(examples) : 0.0;
    if (!std::isfinite(epoch_loss)) {
      raise(Errc::NonFiniteLoss, "epoch " + std::to_string(epoch) + " loss diverged");
    }
    if (epoch_losses) epoch_losses->push_back(epoch_loss);
  }
  return model;
}

std::vector<RankedEntity> predict_object(const EmbeddingModel& model, int s, int p, size_t k,
                                         const std::set<int>& exclude_known) {
  check_entity(model, s);
  check_predicate(model, p);
  std::vector<RankedEntity> out;
  for (int o = 0; o < static_cast<int>(model.entities.size()); ++o) {
    if (exclude_known.count(o)) continue;
    out.push_back({o, score_fact(model, s, p, o)});
  }
  std::sort(out.begin(), out.end(), [](const RankedEntity& a, const RankedEntity& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
  if (out.size() > k) out.resize(k);
  return out;
}

std::vector<RankedEntity> rank_facts(const EmbeddingModel& model, int s, int p,
                                     const std::vector<int>& objects) {
  std::vector<RankedEntity> out;
  for (int o : objects) out.push_back({o, score_fact(model, s, p, o)});
  std::sort(out.begin(), out.end(), [](const RankedEntity& a, const RankedEntity& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
  return out;
}

std::vector<size_t> verify_facts(const EmbeddingModel& model, const std::vector<FactTriple>& facts,
                                 double percentile) {
  if (percentile < 0.0 || percentile > 100.0) {
    raise(Errc::ConfigError, "percentile must lie in [0, 100]");
  }
  std::vector<std::pair<double, size_t>> scored;
  for (size_t i = 0; i < facts.size(); ++i) {
    scored.push_back({score_fact(model, facts[i].s, facts[i].p, facts[i].o), i});
  }
  std::sort(scored.begin(), scored.end());
  size_t flag_count = static_cast<size_t>(
      std::floor(static_cast<double>(facts.size()) * percentile / 100.0));
  std::vector<size_t> flagged;
  for (size_t i = 0; i < flag_count && i < scored.size(); ++i) flagged.push_back(scored[i].second);
  std::sort(flagged.begin(), flagged.end());
  return flagged;
}

void EmbeddingModel::save(const std::string& path) const {
  nlohmann::ordered_json header;
  header["kind"] = embedding_kind_name(kind);
  header["dim"] = dim;
  header["entities"] = entities;
  header["predicates"] = predicates;

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(Errc::IoError, "cannot write model file: " + path);
  out << header.dump() << "\n";
  auto write_matrix = [&](const std::vector<double>& values) {
    std::vector<float> f32(values.size());
    for (size_t i = 0; i < values.size(); ++i) f32[i] = static_cast<float>(values[i]);
    out.write(reinterpret_cast<const char*>(f32.data()),
              static_cast<std::streamsize>(f32.size() * sizeof(float)));
  };
  write_matrix(entity_vectors);
  write_matrix(predicate_vectors);
  if (!out) raise(Errc::IoError, "model write failed: " + path);
}

EmbeddingModel EmbeddingModel::load(const std::string& path) {
  std::string raw = read_file(path);
  size_t newline = raw.find('\n');
  if (newline == std::string::npos) raise(Errc::FormatError, path + ": missing model header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(raw.substr(0, newline));
  } catch (const nlohmann::json::exception& e) {
    raise(Errc::FormatError, path + ": " + e.what());
  }

  EmbeddingModel model;
  model.kind = embedding_kind_from(header.at("kind").get<std::string>());
  model.dim = header.at("dim").get<int>();
  for (const auto& e : header.at("entities")) model.entities.push_back(e.get<std::string>());
  for (const auto& p : header.at("predicates")) model.predicates.push_back(p.get<std::string>());

  size_t entity_count = model.entities.size() * static_cast<size_t>(model.dim);
  size_t predicate_count = model.predicates.size() * static_cast<size_t>(model.dim);
  size_t expected = newline + 1 + (entity_count + predicate_count) * sizeof(float);
  if (raw.size() != expected) {
    raise(Errc::FormatError, path + ": matrix payload size mismatch");
  }
  const char* cursor = raw.data() + newline + 1;
  auto read_matrix = [&](size_t count, std::vector<double>& into) {
    std::vector<float> f32(count);
    std::memcpy(f32.data(), cursor, count * sizeof(float));
    cursor += count * sizeof(float);
    into.resize(count);
    for (size_t i = 0; i < count; ++i) into[i] = static_cast<double>(f32[i]);
  };
  read_matrix(entity_count, model.entity_vectors);
  read_matrix(predicate_count, model.predicate_vectors);
  return model;
}

}  // namespace kgf
