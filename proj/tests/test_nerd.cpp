#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include <json.hpp>

#include "kgforge/nerd.hpp"
#include "kgforge/util.hpp"

using namespace kgf;

namespace {

EntityId akg(const std::string& local) { return EntityId{"akg", local}; }

ExtendedTriple simple(const EntityId& subject, const std::string& pred, const std::string& obj,
                      ObjectKind kind = ObjectKind::literal) {
  ExtendedTriple t;
  t.subject = subject;
  t.predicate = pred;
  t.object = obj;
  t.object_kind = kind;
  t.sources = {"s1"};
  t.trust = {0.8};
  return t;
}

ExtendedTriple edge(const std::string& from, const std::string& pred, const std::string& to) {
  return simple(akg(from), pred, akg(to).str(), ObjectKind::entity_ref);
}

std::string scratch(const std::string& name) {
  std::string dir = "/tmp/kgforge_test_nerd/" + name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

Ontology geo_ontology() {
  nlohmann::json doc = {
      {"types", {"city", "person", "university", "country", "state"}},
      {"predicates",
       {{{"name", "name"}},
        {{"name", "alias"}},
        {{"name", "type"}},
        {{"name", "description"}},
        {{"name", "same_as"}},
        {{"name", "located_in"}, {"target_type", "city"}}}}};
  return Ontology::from_json(doc);
}

// Two cities sharing the surface "Hanover", two universities sharing "UW",
// and a stacked-alias city for longest-match detection.
SnapshotPtr geo_snapshot() {
  std::vector<ExtendedTriple> rows;
  rows.push_back(simple(akg("hanover_nh"), "name", "Hanover"));
  rows.push_back(simple(akg("hanover_nh"), "type", "city"));
  rows.push_back(simple(akg("hanover_nh"), "description", "college town in new hampshire"));
  rows.push_back(edge("hanover_nh", "located_in", "new_hampshire"));

  rows.push_back(simple(akg("hanover_de"), "name", "Hannover"));
  rows.push_back(simple(akg("hanover_de"), "alias", "Hanover"));
  rows.push_back(simple(akg("hanover_de"), "type", "city"));
  rows.push_back(edge("hanover_de", "located_in", "germany"));

  rows.push_back(simple(akg("hanover_person"), "name", "Hanover"));
  rows.push_back(simple(akg("hanover_person"), "type", "person"));

  ExtendedTriple tagged = simple(akg("dartmouth"), "alias", "Dartmouth");
  tagged.locale = "en";
  rows.push_back(simple(akg("dartmouth"), "name", "Dartmouth College"));
  rows.push_back(tagged);
  rows.push_back(simple(akg("dartmouth"), "type", "university"));
  rows.push_back(edge("dartmouth", "located_in", "hanover_nh"));

  rows.push_back(simple(akg("germany"), "name", "Germany"));
  rows.push_back(simple(akg("germany"), "type", "country"));
  rows.push_back(simple(akg("new_hampshire"), "name", "New Hampshire"));
  rows.push_back(simple(akg("new_hampshire"), "type", "state"));

  rows.push_back(simple(akg("nyc"), "name", "New York City"));
  rows.push_back(simple(akg("nyc"), "alias", "New York"));
  rows.push_back(simple(akg("nyc"), "type", "city"));

  rows.push_back(simple(akg("uw_seattle"), "name", "University of Washington"));
  rows.push_back(simple(akg("uw_seattle"), "alias", "UW"));
  rows.push_back(simple(akg("uw_seattle"), "type", "university"));
  rows.push_back(edge("uw_seattle", "located_in", "seattle"));

  rows.push_back(simple(akg("uw_waterloo"), "name", "University of Waterloo"));
  rows.push_back(simple(akg("uw_waterloo"), "alias", "UW"));
  rows.push_back(simple(akg("uw_waterloo"), "type", "university"));
  rows.push_back(edge("uw_waterloo", "located_in", "waterloo"));

  rows.push_back(simple(akg("seattle"), "name", "Seattle"));
  rows.push_back(simple(akg("seattle"), "type", "city"));
  rows.push_back(simple(akg("waterloo"), "name", "Waterloo"));
  rows.push_back(simple(akg("waterloo"), "type", "city"));

  rows.push_back(simple(akg("orphan"), "type", "city"));

  rows.push_back(simple(EntityId{"ext", "x1"}, "name", "External Row"));
  return KgSnapshot::from_triples(rows, 1);
}

ImportanceRecord rec(const std::string& local, double aggregate) {
  ImportanceRecord r;
  r.entity = akg(local);
  r.aggregate = aggregate;
  return r;
}

std::vector<ImportanceRecord> geo_importance() {
  return {rec("hanover_nh", 0.30),  rec("hanover_de", 0.60), rec("hanover_person", 0.05),
          rec("dartmouth", 0.40),   rec("germany", 0.80),    rec("new_hampshire", 0.35),
          rec("nyc", 0.90),         rec("uw_seattle", 0.50), rec("uw_waterloo", 0.45),
          rec("seattle", 0.70),     rec("waterloo", 0.20)};
}

NerdView geo_view() { return build_entity_view(*geo_snapshot(), geo_importance(), geo_ontology()); }

// Fixed scorer calibrated so a bare alias match sits between the annotation
// threshold (0.5) and the object-resolution threshold (0.9), and context
// overlap lifts the right candidate over 0.9.
DisambWeights hand_weights() {
  DisambWeights w;
  w.weights = {{"alias_similarity", 2.0},
               {"relationship_overlap", 3.0},
               {"profile_overlap", 3.0},
               {"type_match", 0.5},
               {"log_importance", 0.0}};
  w.bias = -1.0;
  w.theta_reject = 0.5;
  return w;
}

bool has_relationship(const NerdEntityRecord& r, const std::string& pred,
                      const std::string& surface) {
  return std::find(r.key_relationships.begin(), r.key_relationships.end(),
                   std::make_pair(pred, surface)) != r.key_relationships.end();
}

}  // namespace

TEST_CASE("entity view records carry profiles in both edge directions") {
  NerdView view = geo_view();

  const NerdEntityRecord* nh = view.find(akg("hanover_nh"));
  REQUIRE(nh != nullptr);
  CHECK(nh->names_aliases.at("").size() == 1);
  CHECK(nh->names_aliases.at("")[0] == "Hanover");
  CHECK(nh->types == std::vector<std::string>{"city"});
  REQUIRE(nh->description.has_value());
  CHECK(*nh->description == "college town in new hampshire");
  CHECK(has_relationship(*nh, "located_in", "New Hampshire"));
  CHECK(has_relationship(*nh, "located_in^-1", "Dartmouth College"));
  CHECK(nh->neighbor_types == std::vector<std::string>{"state", "university"});
  CHECK(nh->importance == doctest::Approx(0.30));

  SUBCASE("locale-tagged aliases keep their tag") {
    const NerdEntityRecord* college = view.find(akg("dartmouth"));
    REQUIRE(college != nullptr);
    CHECK(college->names_aliases.at("en") == std::vector<std::string>{"Dartmouth"});
    CHECK(college->names_aliases.at("") == std::vector<std::string>{"Dartmouth College"});
    auto aliases = college->all_aliases();
    CHECK(std::find(aliases.begin(), aliases.end(), "Dartmouth") != aliases.end());
  }

  SUBCASE("records without name facts fall back to the local id") {
    const NerdEntityRecord* orphan = view.find(akg("orphan"));
    REQUIRE(orphan != nullptr);
    CHECK(orphan->names_aliases.at("") == std::vector<std::string>{"orphan"});
    CHECK(orphan->importance == 0.0);
  }

  SUBCASE("non-graph subjects get no record") {
    CHECK(view.find(EntityId{"ext", "x1"}) == nullptr);
  }

  SUBCASE("records sort ascending and find misses cleanly") {
    CHECK(std::is_sorted(view.records.begin(), view.records.end(),
                         [](const NerdEntityRecord& a, const NerdEntityRecord& b) {
                           return a.entity < b.entity;
                         }));
    CHECK(view.find(akg("missing")) == nullptr);
  }

  SUBCASE("alias dictionary spans multi-token surfaces") {
    CHECK(view.max_alias_tokens == 3);
    REQUIRE(view.alias_index.count("new york city") == 1);
    REQUIRE(view.alias_index.count("hanover") == 1);
    CHECK(view.alias_index.at("hanover").size() == 3);
  }
}

TEST_CASE("neighbor lists cap at the sixteen highest-importance entities") {
  std::vector<ExtendedTriple> rows;
  rows.push_back(simple(akg("hub"), "name", "Hub"));
  std::vector<ImportanceRecord> importance;
  for (int i = 0; i < 20; ++i) {
    std::string local = "s" + std::string(i < 10 ? "0" : "") + std::to_string(i);
    rows.push_back(simple(akg(local), "name", "Spoke " + std::to_string(i)));
    rows.push_back(edge("hub", "links_to", local));
    importance.push_back(rec(local, i / 100.0));
  }
  importance.push_back(rec("hub", 0.5));

  NerdView view = build_entity_view(*KgSnapshot::from_triples(rows, 1), importance,
                                    geo_ontology());
  const NerdEntityRecord* hub = view.find(akg("hub"));
  REQUIRE(hub != nullptr);
  REQUIRE(hub->neighbor_ids.size() == 16);
  CHECK(hub->neighbor_ids.front() == akg("s19"));
  for (int dropped = 0; dropped < 4; ++dropped) {
    std::string local = "s0" + std::to_string(dropped);
    CHECK(std::find(hub->neighbor_ids.begin(), hub->neighbor_ids.end(), akg(local)) ==
          hub->neighbor_ids.end());
  }
}

TEST_CASE("candidate retrieval ranks by alias similarity then importance") {
  NerdView view = geo_view();

  SUBCASE("exact surface with no hint puts the more important city first") {
    Mention m{"Hanover", {}, std::nullopt};
    auto candidates = retrieve_candidates(view, m, 8);
    REQUIRE(candidates.size() >= 3);
    CHECK(candidates[0].entity == akg("hanover_de"));
    CHECK(candidates[1].entity == akg("hanover_nh"));
    CHECK(candidates[2].entity == akg("hanover_person"));
    CHECK(candidates[2].alias_similarity == doctest::Approx(1.0));
    if (candidates.size() > 3) CHECK(candidates[3].alias_similarity < 1.0);
  }

  SUBCASE("type hints filter before ranking") {
    Mention m{"Hanover", {}, "person"};
    auto candidates = retrieve_candidates(view, m, 8);
    REQUIRE(candidates.size() == 1);
    CHECK(candidates[0].entity == akg("hanover_person"));

    Mention city{"Hanover", {}, "city"};
    auto cities = retrieve_candidates(view, city, 8);
    REQUIRE(cities.size() >= 2);
    CHECK(cities[0].entity == akg("hanover_de"));
    CHECK(cities[1].entity == akg("hanover_nh"));
  }

  SUBCASE("k truncates after sorting") {
    Mention m{"Hanover", {}, std::nullopt};
    auto top = retrieve_candidates(view, m, 1);
    REQUIRE(top.size() == 1);
    CHECK(top[0].entity == akg("hanover_de"));
  }

  SUBCASE("misspellings still surface candidates with lower similarity") {
    Mention m{"Hanovr", {}, std::nullopt};
    auto candidates = retrieve_candidates(view, m, 8);
    REQUIRE(!candidates.empty());
    CHECK(candidates[0].alias_similarity > 0.3);
    CHECK(candidates[0].alias_similarity < 1.0);
    CHECK(candidates[0].entity == akg("hanover_de"));
  }

  SUBCASE("unrelated surfaces return nothing") {
    Mention m{"zzqqx", {}, std::nullopt};
    CHECK(retrieve_candidates(view, m, 8).empty());
  }

  SUBCASE("a trained encoder can replace the q-gram fallback") {
    StringEncoder encoder = StringEncoder::make("place", 3, 512, 16, 7);
    Mention m{"Hanover", {}, std::nullopt};
    auto candidates = retrieve_candidates(view, m, 8, &encoder);
    REQUIRE(!candidates.empty());
    bool found = false;
    for (const auto& c : candidates) {
      if (c.entity == akg("hanover_nh")) found = true;
    }
    CHECK(found);
  }
}

TEST_CASE("disambiguation picks by context and rejects below threshold") {
  NerdView view = geo_view();
  DisambWeights w = hand_weights();

  SUBCASE("feature vector matches a hand computation") {
    Mention m{"Hanover", {"visited", "dartmouth"}, std::nullopt};
    auto candidates = retrieve_candidates(view, m, 8);
    const NerdCandidate* nh = nullptr;
    for (const auto& c : candidates) {
      if (c.entity == akg("hanover_nh")) nh = &c;
    }
    REQUIRE(nh != nullptr);
    auto features = disamb_features(m, *nh, view);
    CHECK(features.at("alias_similarity") == doctest::Approx(1.0));
    CHECK(features.at("relationship_overlap") == doctest::Approx(0.5));
    CHECK(features.at("type_match") == 1.0);
    CHECK(features.at("log_importance") == doctest::Approx(std::log1p(0.30)));
    for (const auto& name : disamb_feature_names()) CHECK(features.count(name) == 1);
  }

  SUBCASE("dartmouth context selects the New Hampshire town") {
    Mention m{"Hanover", {"visited", "dartmouth"}, std::nullopt};
    auto candidates = retrieve_candidates(view, m, 8);
    auto result = disambiguate(m, candidates, view, w, 0.9);
    REQUIRE(result.outcome.has_value());
    CHECK(*result.outcome == akg("hanover_nh"));
    CHECK(result.confidence >= 0.9);
    CHECK(result.per_candidate_scores.size() == candidates.size());
  }

  SUBCASE("no context rejects at the strict threshold but not the loose one") {
    Mention m{"Hanover", {}, std::nullopt};
    auto candidates = retrieve_candidates(view, m, 8);
    auto strict = disambiguate(m, candidates, view, w, 0.9);
    CHECK(!strict.outcome.has_value());
    CHECK(strict.confidence > 0.0);
    auto loose = disambiguate(m, candidates, view, w, 0.5);
    CHECK(loose.outcome.has_value());
  }

  SUBCASE("empty candidate lists reject with zero confidence") {
    Mention m{"zzqqx", {}, std::nullopt};
    auto result = disambiguate(m, {}, view, w, 0.1);
    CHECK(!result.outcome.has_value());
    CHECK(result.confidence == 0.0);
    CHECK(result.per_candidate_scores.empty());
  }

  SUBCASE("a threshold of one rejects every fixture mention") {
    for (const char* surface : {"Hanover", "Dartmouth", "UW", "Germany"}) {
      Mention m{surface, {"visited", "dartmouth", "seattle"}, std::nullopt};
      auto candidates = retrieve_candidates(view, m, 8);
      auto result = disambiguate(m, candidates, view, w, 1.0);
      CHECK(!result.outcome.has_value());
    }
  }

  SUBCASE("raising the threshold never converts a rejection into an acceptance") {
    std::vector<Mention> mentions = {
        {"Hanover", {"visited", "dartmouth"}, std::nullopt},
        {"Hanover", {}, std::nullopt},
        {"UW", {"seattle"}, "university"},
        {"Hanovr", {"germany"}, std::nullopt},
    };
    for (const auto& m : mentions) {
      auto candidates = retrieve_candidates(view, m, 8);
      bool rejected = false;
      std::optional<EntityId> first_accept;
      for (int step = 0; step <= 20; ++step) {
        auto result = disambiguate(m, candidates, view, w, step / 20.0);
        if (result.outcome) {
          CHECK(!rejected);
          if (!first_accept) first_accept = result.outcome;
          CHECK(*result.outcome == *first_accept);
        } else {
          rejected = true;
        }
      }
      CHECK(rejected);
    }
  }
}

TEST_CASE("object resolution follows the expected type and subject context") {
  NerdView view = geo_view();
  DisambWeights w = hand_weights();

  SUBCASE("context decides between the acronym twins") {
    auto seattle = resolve_object(view, w, "UW", {"seattle"}, "university");
    REQUIRE(seattle.has_value());
    CHECK(*seattle == akg("uw_seattle"));

    auto waterloo = resolve_object(view, w, "UW", {"waterloo"}, "university");
    REQUIRE(waterloo.has_value());
    CHECK(*waterloo == akg("uw_waterloo"));
  }

  SUBCASE("no context keeps the literal at the default threshold") {
    CHECK(!resolve_object(view, w, "UW", {}, "university").has_value());
  }

  SUBCASE("a mismatched expected type leaves no candidates") {
    CHECK(!resolve_object(view, w, "UW", {"seattle"}, "country").has_value());
  }

  SUBCASE("an empty expected type searches every record") {
    auto result = resolve_object(view, w, "Hanover", {"visited", "dartmouth"}, "", 0.85);
    REQUIRE(result.has_value());
    CHECK(*result == akg("hanover_nh"));
  }
}

TEST_CASE("text annotation finds longest alias matches with character spans") {
  NerdView view = geo_view();
  DisambWeights w = hand_weights();

  SUBCASE("each detected mention is disambiguated in the full text context") {
    std::string text = "We visited Hanover and Dartmouth.";
    auto annotations = annotate_text(text, view, w, 0.5);
    REQUIRE(annotations.size() == 2);

    CHECK(annotations[0].surface == "Hanover");
    CHECK(annotations[0].start == text.find("Hanover"));
    CHECK(annotations[0].end == annotations[0].start + 7);
    CHECK(annotations[0].entity == akg("hanover_nh"));
    CHECK(annotations[0].confidence >= 0.5);

    CHECK(annotations[1].surface == "Dartmouth");
    CHECK(annotations[1].entity == akg("dartmouth"));
    for (const auto& a : annotations) {
      CHECK(text.substr(a.start, a.end - a.start) == a.surface);
    }
  }

  SUBCASE("the longest alias wins over its prefix") {
    std::string text = "I love New York City a lot";
    auto annotations = annotate_text(text, view, w, 0.5);
    REQUIRE(annotations.size() == 1);
    CHECK(annotations[0].surface == "New York City");
    CHECK(annotations[0].entity == akg("nyc"));
    CHECK(text.substr(annotations[0].start, annotations[0].end - annotations[0].start) ==
          "New York City");
  }

  SUBCASE("the shorter alias still matches on its own") {
    auto annotations = annotate_text("New York is busy", view, w, 0.5);
    REQUIRE(annotations.size() == 1);
    CHECK(annotations[0].surface == "New York");
    CHECK(annotations[0].entity == akg("nyc"));
  }

  SUBCASE("case differences and punctuation do not block detection") {
    auto annotations = annotate_text("we toured HANOVER, then left", view, w, 0.5);
    REQUIRE(annotations.size() == 1);
    CHECK(annotations[0].surface == "HANOVER");
  }

  SUBCASE("text without any alias yields nothing") {
    CHECK(annotate_text("nothing matches in this sentence", view, w, 0.5).empty());
    CHECK(annotate_text("", view, w, 0.5).empty());
  }

  SUBCASE("a maximal threshold suppresses every annotation") {
    CHECK(annotate_text("We visited Hanover and Dartmouth.", view, w, 1.0).empty());
  }

  SUBCASE("rendered lines round trip through a JSON parser") {
    std::string text = "We visited Hanover and Dartmouth.";
    auto annotations = annotate_text(text, view, w, 0.5);
    std::string jsonl = render_annotations_jsonl(annotations);
    std::vector<std::string> lines;
    size_t at = 0;
    while (at < jsonl.size()) {
      size_t nl = jsonl.find('\n', at);
      lines.push_back(jsonl.substr(at, nl - at));
      at = nl + 1;
    }
    REQUIRE(lines.size() == annotations.size());
    for (size_t i = 0; i < lines.size(); ++i) {
      auto doc = nlohmann::json::parse(lines[i]);
      CHECK(doc.at("start").get<size_t>() == annotations[i].start);
      CHECK(doc.at("end").get<size_t>() == annotations[i].end);
      CHECK(doc.at("surface").get<std::string>() == annotations[i].surface);
      CHECK(doc.at("entity").get<std::string>() == annotations[i].entity.str());
      CHECK(doc.at("confidence").get<double>() == doctest::Approx(annotations[i].confidence));
    }
  }
}

TEST_CASE("fitted weights separate the fixture ambiguities") {
  NerdView view = geo_view();
  FitWeightsConfig cfg;
  DisambWeights fitted = fit_weights(view, cfg);

  SUBCASE("all named features carry a weight") {
    for (const auto& name : disamb_feature_names()) {
      CHECK(fitted.weights.count(name) == 1);
      CHECK(std::isfinite(fitted.weights.at(name)));
    }
    CHECK(std::isfinite(fitted.bias));
  }

  SUBCASE("fitting is deterministic for a fixed seed") {
    DisambWeights again = fit_weights(view, cfg);
    CHECK(again.weights == fitted.weights);
    CHECK(again.bias == fitted.bias);
  }

  SUBCASE("context overlap dominates the learned scorer") {
    Mention seattle{"UW", {"seattle"}, "university"};
    auto candidates = retrieve_candidates(view, seattle, 8);
    auto result = disambiguate(seattle, candidates, view, fitted, 0.5);
    REQUIRE(result.outcome.has_value());
    CHECK(*result.outcome == akg("uw_seattle"));

    Mention nh{"Hanover", {"dartmouth", "college", "hampshire"}, std::nullopt};
    auto nh_candidates = retrieve_candidates(view, nh, 8);
    auto nh_result = disambiguate(nh, nh_candidates, view, fitted, 0.5);
    REQUIRE(nh_result.outcome.has_value());
    CHECK(*nh_result.outcome == akg("hanover_nh"));

    Mention de{"Hanover", {"germany"}, std::nullopt};
    auto de_candidates = retrieve_candidates(view, de, 8);
    auto de_result = disambiguate(de, de_candidates, view, fitted, 0.5);
    REQUIRE(de_result.outcome.has_value());
    CHECK(*de_result.outcome == akg("hanover_de"));
  }
}

TEST_CASE("weights files round trip exactly") {
  std::string dir = scratch("weights");
  DisambWeights w = hand_weights();
  w.theta_reject = 0.85;
  w.save(dir + "/disamb.json");

  DisambWeights loaded = DisambWeights::load(dir + "/disamb.json");
  CHECK(loaded.weights == w.weights);
  CHECK(loaded.bias == w.bias);
  CHECK(loaded.theta_reject == w.theta_reject);

  SUBCASE("corrupt files raise a format error") {
    write_file_atomic(dir + "/broken.json", "{not json");
    CHECK_THROWS_WITH_AS(DisambWeights::load(dir + "/broken.json"),
                         doctest::Contains("FormatError"), Error);
  }
}

TEST_CASE("incremental view refresh equals a full rebuild") {
  SnapshotPtr v1 = geo_snapshot();
  auto importance = geo_importance();
  Ontology ontology = geo_ontology();
  NerdView incremental = build_entity_view(*v1, importance, ontology);

  SUBCASE("renaming an entity updates records that cite it as a neighbor") {
    SnapshotPtr v2 = v1->upsert_triples({simple(akg("seattle"), "alias", "Emerald City")});
    refresh_entity_view(incremental, *v2, importance, ontology, {akg("seattle")});
    NerdView full = build_entity_view(*v2, importance, ontology);
    CHECK(incremental.records == full.records);
    CHECK(incremental.alias_index == full.alias_index);
    CHECK(incremental.max_alias_tokens == full.max_alias_tokens);
  }

  SUBCASE("adding a connected entity rebuilds both endpoints") {
    std::vector<ExtendedTriple> payload = {
        simple(akg("portland"), "name", "Portland"),
        simple(akg("portland"), "type", "city"),
        edge("portland", "located_in", "seattle"),
    };
    SnapshotPtr v2 = v1->upsert_triples(payload);
    refresh_entity_view(incremental, *v2, importance, ontology, {akg("portland")});
    NerdView full = build_entity_view(*v2, importance, ontology);
    CHECK(incremental.records == full.records);
    const NerdEntityRecord* seattle = incremental.find(akg("seattle"));
    REQUIRE(seattle != nullptr);
    CHECK(has_relationship(*seattle, "located_in^-1", "Portland"));
  }

  SUBCASE("deleting every fact of an entity drops its record") {
    std::vector<FactKey> keys;
    for (const auto& t : v1->get_entity(akg("hanover_person"))) keys.push_back(fact_key(t));
    SnapshotPtr v2 = v1->remove_facts(keys);
    refresh_entity_view(incremental, *v2, importance, ontology, {akg("hanover_person")});
    NerdView full = build_entity_view(*v2, importance, ontology);
    CHECK(incremental.records == full.records);
    CHECK(incremental.find(akg("hanover_person")) == nullptr);
    CHECK(incremental.alias_index.at("hanover").size() == 2);
  }

  SUBCASE("importance updates restamp every record even with no changed entities") {
    std::vector<ImportanceRecord> bumped = importance;
    for (auto& r : bumped) {
      if (r.entity == akg("germany")) r.aggregate = 0.95;
    }
    refresh_entity_view(incremental, *v1, bumped, ontology, {});
    NerdView full = build_entity_view(*v1, bumped, ontology);
    CHECK(incremental.records == full.records);
    const NerdEntityRecord* germany = incremental.find(akg("germany"));
    REQUIRE(germany != nullptr);
    CHECK(germany->importance == doctest::Approx(0.95));
  }

  SUBCASE("a removed edge updates the former neighbor's inverse relationship") {
    std::vector<FactKey> keys;
    for (const auto& t : v1->get_entity(akg("dartmouth"))) {
      if (t.predicate == "located_in") keys.push_back(fact_key(t));
    }
    REQUIRE(keys.size() == 1);
    SnapshotPtr v2 = v1->remove_facts(keys);
    refresh_entity_view(incremental, *v2, importance, ontology, {akg("dartmouth")});
    NerdView full = build_entity_view(*v2, importance, ontology);
    CHECK(incremental.records == full.records);
    const NerdEntityRecord* nh = incremental.find(akg("hanover_nh"));
    REQUIRE(nh != nullptr);
    CHECK(!has_relationship(*nh, "located_in^-1", "Dartmouth College"));
  }
}
