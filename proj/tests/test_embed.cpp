#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "kgforge/embed.hpp"
#include "kgforge/util.hpp"

using namespace kgf;

namespace {

ExtendedTriple fact(const std::string& subject, const std::string& pred, const std::string& object,
                    ObjectKind kind) {
  ExtendedTriple t;
  t.subject = EntityId::parse(subject);
  t.predicate = pred;
  t.object = object;
  t.object_kind = kind;
  t.sources = {"src"};
  t.trust = {0.8};
  return t;
}

ExtendedTriple ref(const std::string& subject, const std::string& pred, const std::string& object) {
  return fact(subject, pred, object, ObjectKind::entity_ref);
}

// Hand-assembled model; entity and predicate names must arrive sorted so the
// vocab lookups stay valid.
EmbeddingModel toy_model(EmbeddingKind kind, std::vector<std::string> entities,
                         std::vector<std::string> predicates, int dim) {
  EmbeddingModel m;
  m.kind = kind;
  m.dim = dim;
  m.entities = std::move(entities);
  m.predicates = std::move(predicates);
  m.entity_vectors.assign(m.entities.size() * dim, 0.0);
  m.predicate_vectors.assign(m.predicates.size() * dim, 0.0);
  return m;
}

void set_entity(EmbeddingModel& m, int id, std::vector<double> values) {
  std::copy(values.begin(), values.end(), m.entity_vectors.begin() + id * m.dim);
}

void set_predicate(EmbeddingModel& m, int id, std::vector<double> values) {
  std::copy(values.begin(), values.end(), m.predicate_vectors.begin() + id * m.dim);
}

// Two member groups plus acquaintance edges pointing at each group's hub
// member, so every person's vector is anchored near its block even when its
// membership fact is held out.
struct PlantedGraph {
  TrainingView view;
  std::vector<FactTriple> held_out;
  int group_a = 0;
  int group_b = 0;
};

PlantedGraph planted_graph() {
  std::vector<ExtendedTriple> triples;
  auto person = [](char block, int i) {
    return std::string("akg:") + block + std::to_string(i);
  };
  for (int i = 0; i < 10; ++i) {
    if (i > 0) {
      triples.push_back(ref(person('a', i), "knows", person('a', 0)));
      triples.push_back(ref(person('b', i), "knows", person('b', 0)));
    }
    triples.push_back(ref(person('a', i), "member_of", "akg:group_a"));
    triples.push_back(ref(person('b', i), "member_of", "akg:group_b"));
  }
  auto snapshot = KgSnapshot::from_triples(triples, 1);
  TrainingView full = build_training_view(*snapshot);

  PlantedGraph g;
  g.group_a = full.entity_index.at("akg:group_a");
  g.group_b = full.entity_index.at("akg:group_b");
  int member_of = full.predicate_index.at("member_of");
  std::set<int> held_subjects = {full.entity_index.at("akg:a8"), full.entity_index.at("akg:a9"),
                                 full.entity_index.at("akg:b9")};
  g.view = full;
  g.view.facts.clear();
  for (const FactTriple& f : full.facts) {
    if (f.p == member_of && held_subjects.count(f.s)) {
      g.held_out.push_back(f);
    } else {
      g.view.facts.push_back(f);
    }
  }
  return g;
}

double mean_reciprocal_rank(const EmbeddingModel& model, const std::vector<FactTriple>& facts) {
  double total = 0.0;
  for (const FactTriple& f : facts) {
    auto ranked = predict_object(model, f.s, f.p, model.entities.size());
    for (size_t i = 0; i < ranked.size(); ++i) {
      if (ranked[i].id == f.o) {
        total += 1.0 / static_cast<double>(i + 1);
        break;
      }
    }
  }
  return total / static_cast<double>(facts.size());
}

}  // namespace

TEST_CASE("training view keeps only entity-to-entity facts") {
  auto snapshot = KgSnapshot::from_triples(
      {
          ref("akg:e1", "influenced_by", "akg:e2"),
          ref("akg:e1", "same_as", "imdb:x1"),
          fact("akg:e1", "name", "Alien", ObjectKind::literal),
          fact("akg:e2", "year", "1979", ObjectKind::literal),
      },
      1);
  TrainingView view = build_training_view(*snapshot);

  REQUIRE(view.facts.size() == 1);
  CHECK(view.entities == std::vector<std::string>{"akg:e1", "akg:e2"});
  CHECK(view.predicates == std::vector<std::string>{"influenced_by"});
  CHECK(view.facts[0] == FactTriple{0, 0, 1});

  SUBCASE("a snapshot with no entity references cannot train") {
    auto literals =
        KgSnapshot::from_triples({fact("akg:e1", "name", "Alien", ObjectKind::literal)}, 1);
    CHECK_THROWS_WITH_AS(build_training_view(*literals), doctest::Contains("EmptyTrainingSet"),
                         Error);
  }

  SUBCASE("vocab order is stable across insertion orders") {
    auto shuffled = KgSnapshot::from_triples(
        {
            fact("akg:e2", "year", "1979", ObjectKind::literal),
            ref("akg:e1", "same_as", "imdb:x1"),
            ref("akg:e1", "influenced_by", "akg:e2"),
            fact("akg:e1", "name", "Alien", ObjectKind::literal),
        },
        1);
    TrainingView again = build_training_view(*shuffled);
    CHECK(again.entities == view.entities);
    CHECK(again.predicates == view.predicates);
    CHECK(again.facts == view.facts);
  }
}

TEST_CASE("scores follow the closed-form definitions") {
  SUBCASE("a translation landing exactly on the object scores zero") {
    EmbeddingModel m = toy_model(EmbeddingKind::transe, {"a", "b", "c"}, {"p"}, 2);
    set_entity(m, 0, {0.25, 0.5});
    set_predicate(m, 0, {0.125, 0.25});
    set_entity(m, 1, {0.375, 0.75});
    set_entity(m, 2, {1.0, 1.0});
    CHECK(score_fact(m, 0, 0, 1) == 0.0);
    CHECK(score_fact(m, 0, 0, 2) < 0.0);
    CHECK(score_fact(m, "a", "p", "b") == 0.0);
  }

  SUBCASE("transe distance matches hand arithmetic") {
    EmbeddingModel m = toy_model(EmbeddingKind::transe, {"a", "b"}, {"p"}, 2);
    set_entity(m, 0, {1.0, 0.0});
    set_predicate(m, 0, {0.0, 1.0});
    set_entity(m, 1, {0.0, 0.0});
    CHECK(score_fact(m, 0, 0, 1) == doctest::Approx(-std::sqrt(2.0)));
  }

  SUBCASE("distmult is the threeway elementwise product") {
    EmbeddingModel m = toy_model(EmbeddingKind::distmult, {"a", "b"}, {"p", "zero"}, 2);
    set_entity(m, 0, {1.0, 2.0});
    set_predicate(m, 0, {3.0, 4.0});
    set_entity(m, 1, {5.0, 6.0});
    CHECK(score_fact(m, 0, 0, 1) == 63.0);

    for (int o = 0; o < 2; ++o) CHECK(score_fact(m, 0, 1, o) == 0.0);
  }

  SUBCASE("out-of-vocabulary ids are rejected") {
    EmbeddingModel m = toy_model(EmbeddingKind::transe, {"a"}, {"p"}, 2);
    CHECK_THROWS_WITH_AS(score_fact(m, 0, 0, 1), doctest::Contains("UnknownId"), Error);
    CHECK_THROWS_WITH_AS(score_fact(m, -1, 0, 0), doctest::Contains("UnknownId"), Error);
    CHECK_THROWS_WITH_AS(score_fact(m, 0, 1, 0), doctest::Contains("UnknownId"), Error);
    CHECK_THROWS_WITH_AS(score_fact(m, "a", "q", "a"), doctest::Contains("UnknownId"), Error);
  }
}

TEST_CASE("analytic gradients agree with central finite differences") {
  TrainingView view;
  view.entities = {"a", "b", "c", "d"};
  view.predicates = {"p", "q"};
  for (size_t i = 0; i < view.entities.size(); ++i) {
    view.entity_index[view.entities[i]] = static_cast<int>(i);
  }
  for (size_t i = 0; i < view.predicates.size(); ++i) {
    view.predicate_index[view.predicates[i]] = static_cast<int>(i);
  }
  view.facts = {{0, 0, 1}};

  FactTriple positive{0, 0, 1};
  FactTriple corrupt_object{0, 0, 2};
  FactTriple corrupt_subject{3, 0, 1};

  for (EmbeddingKind kind : {EmbeddingKind::transe, EmbeddingKind::distmult}) {
    std::string kind_name = embedding_kind_name(kind);
    CAPTURE(kind_name);
    EmbedTrainConfig cfg;
    cfg.kind = kind;
    cfg.dim = 6;
    cfg.seed = 5;
    cfg.margin = 2.0;
    EmbeddingModel model = init_model(view, cfg);

    for (const FactTriple& negative : {corrupt_object, corrupt_subject}) {
      ExampleGrads grads = example_gradients(model, positive, negative, cfg.margin);
      REQUIRE(grads.loss > 0.05);
      REQUIRE(!grads.rows.empty());

      // Rows are compared by L2 norm; single components near zero would
      // otherwise drown in central-difference roundoff.
      const double h = 1e-6;
      for (const auto& [key, row] : grads.rows) {
        double diff_sq = 0.0;
        double analytic_sq = 0.0;
        double fd_sq = 0.0;
        for (int i = 0; i < model.dim; ++i) {
          auto value_at = [&](EmbeddingModel& m) -> double& {
            auto& matrix = key.first == 'e' ? m.entity_vectors : m.predicate_vectors;
            return matrix[static_cast<size_t>(key.second) * m.dim + i];
          };
          EmbeddingModel bumped = model;
          value_at(bumped) += h;
          double up = example_gradients(bumped, positive, negative, cfg.margin).loss;
          value_at(bumped) -= 2.0 * h;
          double down = example_gradients(bumped, positive, negative, cfg.margin).loss;
          double fd = (up - down) / (2.0 * h);
          diff_sq += (fd - row[i]) * (fd - row[i]);
          analytic_sq += row[i] * row[i];
          fd_sq += fd * fd;
        }
        double rel = std::sqrt(diff_sq) /
                     std::max({std::sqrt(analytic_sq), std::sqrt(fd_sq), 1e-8});
        CHECK(rel < 1e-4);
      }
      CHECK(grads.rows.count({'e', negative == corrupt_object ? 3 : 2}) == 0);
    }
  }
}

TEST_CASE("training separates a planted two-group graph") {
  PlantedGraph g = planted_graph();

  for (EmbeddingKind kind : {EmbeddingKind::transe, EmbeddingKind::distmult}) {
    std::string kind_name = embedding_kind_name(kind);
    CAPTURE(kind_name);
    EmbedTrainConfig cfg;
    cfg.kind = kind;
    cfg.dim = 16;
    cfg.epochs = 200;
    cfg.learning_rate = 0.05;
    cfg.seed = 3;
    std::vector<double> losses;
    EmbeddingModel model = train(g.view, cfg, &losses);

    REQUIRE(losses.size() == 200);
    for (double loss : losses) CHECK(std::isfinite(loss));

    double positive_mean = 0.0;
    for (const FactTriple& f : g.view.facts) positive_mean += score_fact(model, f.s, f.p, f.o);
    positive_mean /= static_cast<double>(g.view.facts.size());

    std::mt19937_64 rng(99);
    std::uniform_int_distribution<int> pick(0, static_cast<int>(g.view.entities.size()) - 1);
    double corrupted_mean = 0.0;
    int samples = 0;
    for (const FactTriple& f : g.view.facts) {
      for (int j = 0; j < 5; ++j) {
        corrupted_mean += score_fact(model, f.s, f.p, pick(rng));
        ++samples;
      }
    }
    corrupted_mean /= static_cast<double>(samples);
    CHECK(positive_mean > corrupted_mean);

    // Random-ranking baseline over the same candidate set: expected
    // reciprocal rank of a uniformly placed object among n candidates.
    double n = static_cast<double>(g.view.entities.size());
    double random_mrr = 0.0;
    for (int k = 1; k <= static_cast<int>(n); ++k) random_mrr += 1.0 / k;
    random_mrr /= n;
    CHECK(mean_reciprocal_rank(model, g.held_out) >= 2.0 * random_mrr);
  }
}

TEST_CASE("training is reproducible and zero epochs return the init") {
  PlantedGraph g = planted_graph();
  EmbedTrainConfig cfg;
  cfg.kind = EmbeddingKind::distmult;
  cfg.dim = 8;
  cfg.epochs = 20;
  cfg.seed = 17;

  EmbeddingModel first = train(g.view, cfg);
  EmbeddingModel second = train(g.view, cfg);
  CHECK(first.entity_vectors == second.entity_vectors);
  CHECK(first.predicate_vectors == second.predicate_vectors);

  SUBCASE("a different seed moves the vectors") {
    cfg.seed = 18;
    EmbeddingModel third = train(g.view, cfg);
    CHECK(third.entity_vectors != first.entity_vectors);
  }

  SUBCASE("zero epochs leave the seeded init untouched") {
    cfg.epochs = 0;
    EmbeddingModel untrained = train(g.view, cfg);
    EmbeddingModel reference = init_model(g.view, cfg);
    CHECK(untrained.entity_vectors == reference.entity_vectors);
    CHECK(untrained.predicate_vectors == reference.predicate_vectors);
  }

  SUBCASE("a runaway learning rate is reported, not returned") {
    cfg.epochs = 5;
    cfg.learning_rate = 1e155;
    CHECK_THROWS_WITH_AS(train(g.view, cfg), doctest::Contains("NonFiniteLoss"), Error);
  }
}

TEST_CASE("object prediction scans the whole entity table") {
  SUBCASE("an exact translation target ranks first") {
    EmbeddingModel m = toy_model(EmbeddingKind::transe, {"a", "b", "c"}, {"p"}, 2);
    set_entity(m, 0, {0.25, 0.5});
    set_predicate(m, 0, {0.125, 0.25});
    set_entity(m, 1, {0.375, 0.75});
    set_entity(m, 2, {-1.0, 2.0});
    auto top = predict_object(m, 0, 0, 1);
    REQUIRE(top.size() == 1);
    CHECK(top[0].id == 1);
    CHECK(top[0].score == 0.0);

    SUBCASE("excluding the winner promotes the runner-up") {
      auto rest = predict_object(m, 0, 0, 1, {1});
      REQUIRE(rest.size() == 1);
      CHECK(rest[0].id != 1);
    }
  }

  SUBCASE("k beyond the vocabulary returns every entity ranked") {
    EmbeddingModel m = toy_model(EmbeddingKind::distmult, {"a", "b", "c"}, {"p"}, 2);
    set_entity(m, 0, {0.5, 0.5});
    set_predicate(m, 0, {1.0, 1.0});
    set_entity(m, 1, {2.0, 0.0});
    set_entity(m, 2, {3.0, 0.0});
    auto all = predict_object(m, 0, 0, 50);
    REQUIRE(all.size() == 3);
    CHECK(all[0].id == 2);
    CHECK(all[1].id == 1);
    for (size_t i = 1; i < all.size(); ++i) CHECK(all[i - 1].score >= all[i].score);
  }

  SUBCASE("top-1 equals the brute-force argmax of score_fact") {
    PlantedGraph g = planted_graph();
    EmbedTrainConfig cfg;
    cfg.dim = 8;
    cfg.epochs = 30;
    cfg.seed = 7;
    EmbeddingModel model = train(g.view, cfg);
    int member_of = static_cast<int>(
        std::find(model.predicates.begin(), model.predicates.end(), "member_of") -
        model.predicates.begin());
    for (int s = 0; s < static_cast<int>(model.entities.size()); s += 3) {
      auto top = predict_object(model, s, member_of, 1);
      REQUIRE(top.size() == 1);
      int best = -1;
      double best_score = 0.0;
      for (int o = 0; o < static_cast<int>(model.entities.size()); ++o) {
        double score = score_fact(model, s, member_of, o);
        if (best < 0 || score > best_score) {
          best = o;
          best_score = score;
        }
      }
      CHECK(top[0].id == best);
      CHECK(top[0].score == best_score);
    }
  }

  SUBCASE("unknown ids are rejected") {
    EmbeddingModel m = toy_model(EmbeddingKind::transe, {"a"}, {"p"}, 2);
    CHECK_THROWS_WITH_AS(predict_object(m, 2, 0, 1), doctest::Contains("UnknownId"), Error);
  }
}

TEST_CASE("candidate object ranking is deterministic") {
  EmbeddingModel m = toy_model(EmbeddingKind::distmult,
                               {"occ:singer", "occ:songwriter", "occ:tv_actor", "person:a"},
                               {"occupation"}, 2);
  set_entity(m, 3, {1.0, 1.0});
  set_predicate(m, 0, {1.0, 1.0});
  set_entity(m, 0, {3.0, 0.0});
  set_entity(m, 1, {2.0, 0.0});
  set_entity(m, 2, {1.0, 0.0});

  SUBCASE("a single candidate ranks as itself") {
    auto ranked = rank_facts(m, 3, 0, {2});
    REQUIRE(ranked.size() == 1);
    CHECK(ranked[0].id == 2);
  }

  SUBCASE("candidates come back in score order") {
    auto ranked = rank_facts(m, 3, 0, {2, 0, 1});
    REQUIRE(ranked.size() == 3);
    CHECK(ranked[0].id == 0);
    CHECK(ranked[1].id == 1);
    CHECK(ranked[2].id == 2);
    CHECK(ranked[0].score == 3.0);
    CHECK(m.entities[ranked[0].id] == "occ:singer");
  }

  SUBCASE("score ties break on the lower entity id") {
    set_entity(m, 1, {3.0, 0.0});
    auto ranked = rank_facts(m, 3, 0, {1, 0});
    CHECK(ranked[0].id == 0);
    CHECK(ranked[1].id == 1);
  }
}

TEST_CASE("fact auditing flags the low-score tail") {
  EmbeddingModel m = toy_model(EmbeddingKind::distmult,
                               {"occ:singer", "occ:songwriter", "occ:tv_actor", "person:a"},
                               {"occupation"}, 2);
  set_entity(m, 3, {1.0, 1.0});
  set_predicate(m, 0, {1.0, 1.0});
  set_entity(m, 0, {3.0, 0.0});
  set_entity(m, 1, {2.0, 0.0});
  set_entity(m, 2, {1.0, 0.0});
  std::vector<FactTriple> facts = {{3, 0, 0}, {3, 0, 1}, {3, 0, 2}};

  CHECK(verify_facts(m, facts, 0.0).empty());
  CHECK(verify_facts(m, facts, 100.0) == std::vector<size_t>{0, 1, 2});
  CHECK(verify_facts(m, facts, 50.0) == std::vector<size_t>{2});
  CHECK(verify_facts(m, facts, 67.0) == std::vector<size_t>{1, 2});
  CHECK_THROWS_WITH_AS(verify_facts(m, facts, 101.0), doctest::Contains("ConfigError"), Error);

  SUBCASE("an injected cross-group fact lands in the bottom decile") {
    PlantedGraph g = planted_graph();
    EmbedTrainConfig cfg;
    cfg.dim = 16;
    cfg.epochs = 150;
    cfg.seed = 3;
    EmbeddingModel model = train(g.view, cfg);

    std::vector<FactTriple> audited = g.view.facts;
    int member_of = static_cast<int>(
        std::find(model.predicates.begin(), model.predicates.end(), "member_of") -
        model.predicates.begin());
    FactTriple injected{model.entity_id("akg:a0"), member_of, g.group_b};
    audited.push_back(injected);

    auto flagged = verify_facts(model, audited, 10.0);
    CHECK(std::count(flagged.begin(), flagged.end(), audited.size() - 1) == 1);
  }
}

TEST_CASE("distmult scores are symmetric in subject and object") {
  PlantedGraph g = planted_graph();
  EmbedTrainConfig cfg;
  cfg.kind = EmbeddingKind::distmult;
  cfg.dim = 12;
  cfg.epochs = 10;
  cfg.seed = 29;
  EmbeddingModel model = train(g.view, cfg);

  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> pick_entity(0, static_cast<int>(model.entities.size()) - 1);
  std::uniform_int_distribution<int> pick_predicate(0,
                                                    static_cast<int>(model.predicates.size()) - 1);
  for (int round = 0; round < 100; ++round) {
    int s = pick_entity(rng);
    int p = pick_predicate(rng);
    int o = pick_entity(rng);
    CHECK(score_fact(model, s, p, o) == score_fact(model, o, p, s));
  }
}

TEST_CASE("model files round trip through the binary format") {
  PlantedGraph g = planted_graph();
  EmbedTrainConfig cfg;
  cfg.kind = EmbeddingKind::transe;
  cfg.dim = 8;
  cfg.epochs = 10;
  cfg.seed = 11;
  EmbeddingModel model = train(g.view, cfg);

  std::filesystem::create_directories("/tmp/kgforge_test_embed");
  std::string path = "/tmp/kgforge_test_embed/model.kge";
  model.save(path);
  EmbeddingModel loaded = EmbeddingModel::load(path);

  CHECK(loaded.kind == model.kind);
  CHECK(loaded.dim == model.dim);
  CHECK(loaded.entities == model.entities);
  CHECK(loaded.predicates == model.predicates);
  REQUIRE(loaded.entity_vectors.size() == model.entity_vectors.size());
  for (size_t i = 0; i < model.entity_vectors.size(); ++i) {
    CHECK(loaded.entity_vectors[i] == doctest::Approx(model.entity_vectors[i]).epsilon(1e-6));
  }

  // The f32 narrowing happens once: a second round trip is bit-exact.
  std::string again = "/tmp/kgforge_test_embed/model2.kge";
  loaded.save(again);
  EmbeddingModel reloaded = EmbeddingModel::load(again);
  CHECK(reloaded.entity_vectors == loaded.entity_vectors);
  CHECK(reloaded.predicate_vectors == loaded.predicate_vectors);

  SUBCASE("a truncated file is rejected") {
    std::string raw = read_file(path);
    write_file_atomic("/tmp/kgforge_test_embed/broken.kge", raw.substr(0, raw.size() / 2));
    CHECK_THROWS_WITH_AS(EmbeddingModel::load("/tmp/kgforge_test_embed/broken.kge"),
                         doctest::Contains("FormatError"), Error);
  }
}
