#include "kgforge/fuse.hpp"

#include <algorithm>
#include <cmath>

#include "kgforge/util.hpp"

namespace kgf {

using nlohmann::ordered_json;

SnapshotPtr fuse_simple_facts(const SnapshotPtr& snapshot,
                              const std::vector<ExtendedTriple>& linked) {
  for (const auto& t : linked) {
    if (!t.subject.is_graph()) {
      raise(Errc::UnlinkedSubject, t.subject.str() + " " + t.predicate);
    }
  }
  return snapshot->upsert_triples(linked);
}

namespace {

using NodeFacts = std::map<std::string, std::set<std::pair<std::string, std::string>>>;

// r_id -> set of (r_predicate, object) pairs under one predicate.
std::map<std::string, NodeFacts> group_relationship_nodes(
    const std::vector<ExtendedTriple>& triples) {
  std::map<std::string, NodeFacts> by_predicate;
  for (const auto& t : triples) {
    if (!t.r_id || !t.r_predicate) continue;
    by_predicate[t.predicate][*t.r_id].insert({*t.r_predicate, t.object});
  }
  return by_predicate;
}

}  // namespace

std::vector<RelationshipMergeDecision> merge_relationship_nodes(
    const std::vector<ExtendedTriple>& kg_entity_triples,
    const std::vector<ExtendedTriple>& source_entity_triples, double theta_rel) {
  auto kg_nodes = group_relationship_nodes(kg_entity_triples);
  auto source_nodes = group_relationship_nodes(source_entity_triples);
  std::vector<RelationshipMergeDecision> out;
  for (const auto& [predicate, nodes] : source_nodes) {
    auto kg_it = kg_nodes.find(predicate);
    for (const auto& [source_r_id, facts] : nodes) {
      RelationshipMergeDecision decision;
      decision.source_r_id = source_r_id;
      if (kg_it != kg_nodes.end() && !facts.empty()) {
        for (const auto& [kg_r_id, kg_facts] : kg_it->second) {
          size_t inter = 0;
          for (const auto& f : facts) inter += kg_facts.count(f);
          double ratio = static_cast<double>(inter) / static_cast<double>(facts.size());
          if (ratio > decision.overlap_ratio ||
              (ratio == decision.overlap_ratio && decision.kg_r_id && ratio >= theta_rel &&
               kg_r_id < *decision.kg_r_id)) {
            decision.overlap_ratio = ratio;
            decision.kg_r_id = kg_r_id;
          }
        }
      }
      if (decision.overlap_ratio < theta_rel) decision.kg_r_id.reset();
      out.push_back(std::move(decision));
    }
  }
  return out;
}

FactConfidence estimate_fact_confidence(const ExtendedTriple& fact,
                                        const SourceTrustTable& table) {
  double survive = 1.0;
  for (const auto& source : fact.sources) {
    auto it = table.trust.find(source);
    if (it == table.trust.end()) raise(Errc::UnknownSource, source);
    survive *= 1.0 - it->second;
  }
  return FactConfidence{1.0 - survive};
}

SourceTrustTable update_source_trust(const KgSnapshot& snapshot, const Ontology& ontology,
                                     double initial_trust, int max_iters, double epsilon) {
  SourceTrustTable table;
  std::vector<const ExtendedTriple*> facts;
  snapshot.for_each([&](const ExtendedTriple& t) {
    if (t.predicate == kSameAsPredicate) return;
    facts.push_back(&t);
    for (const auto& source : t.sources) table.trust.try_emplace(source, initial_trust);
  });
  if (table.trust.empty()) {
    table.converged = true;
    return table;
  }

  // Simple facts on functional predicates compete per (subject, predicate)
  // slot; everything else stands alone.
  std::map<std::pair<EntityId, std::string>, std::vector<size_t>> slots;
  for (size_t i = 0; i < facts.size(); ++i) {
    const auto& t = *facts[i];
    if (!t.r_id && ontology.is_functional(t.predicate)) {
      slots[{t.subject, t.predicate}].push_back(i);
    }
  }

  std::vector<double> confidence(facts.size(), 0.0);
  for (int iter = 1; iter <= max_iters; ++iter) {
    for (size_t i = 0; i < facts.size(); ++i) {
      confidence[i] = estimate_fact_confidence(*facts[i], table).probability;
    }
    for (const auto& [_, members] : slots) {
      std::set<std::string> objects;
      for (size_t i : members) objects.insert(facts[i]->object);
      if (objects.size() < 2) continue;
      double total = 0.0;
      for (size_t i : members) total += confidence[i];
      if (total <= 0.0) continue;
      // Disagreeing claims split the slot's vote mass by their raw share.
      for (size_t i : members) confidence[i] *= confidence[i] / total;
    }
    std::map<std::string, std::pair<double, int>> sums;
    for (size_t i = 0; i < facts.size(); ++i) {
      for (const auto& source : facts[i]->sources) {
        auto& slot = sums[source];
        slot.first += confidence[i];
        slot.second += 1;
      }
    }
    double max_change = 0.0;
    for (auto& [source, trust] : table.trust) {
      auto it = sums.find(source);
      double next = it == sums.end() ? trust : it->second.first / it->second.second;
      max_change = std::max(max_change, std::abs(next - trust));
      trust = next;
    }
    table.iteration_count = iter;
    if (max_change < epsilon) {
      table.converged = true;
      break;
    }
  }
  return table;
}

std::map<EntityId, EntityId> same_as_index(const KgSnapshot& snapshot) {
  std::map<EntityId, EntityId> out;
  snapshot.for_each([&out](const ExtendedTriple& t) {
    if (t.predicate == kSameAsPredicate && t.object_kind == ObjectKind::entity_ref) {
      out[EntityId::parse(t.object)] = t.subject;
    }
  });
  return out;
}

SnapshotPtr apply_deletions(const SnapshotPtr& snapshot,
                            const std::vector<SourceEntity>& deleted,
                            const std::string& source_id, std::vector<std::string>* warnings) {
  auto links = same_as_index(*snapshot);
  std::set<EntityId> subjects;
  for (const auto& e : deleted) {
    auto it = links.find(e.id);
    if (it == links.end()) {
      if (warnings) {
        warnings->push_back("NeverLinked: " + e.id.str() + " has no same_as lineage, skipped");
      }
      continue;
    }
    subjects.insert(it->second);
  }
  if (subjects.empty()) return snapshot;
  return snapshot->remove_source_facts(source_id, subjects);
}

SnapshotPtr overwrite_volatile_partition(const SnapshotPtr& snapshot,
                                         const std::string& source_id,
                                         const std::vector<ExtendedTriple>& volatile_triples,
                                         const std::set<std::string>& volatile_predicates,
                                         std::vector<std::string>* warnings) {
  // Clear the partition: volatile facts claimed by this source lose its
  // provenance entry; sole-source facts disappear entirely.
  std::vector<FactKey> to_remove;
  std::vector<ExtendedTriple> to_strip;
  snapshot->for_each([&](const ExtendedTriple& t) {
    if (!volatile_predicates.count(t.predicate)) return;
    auto pos = std::find(t.sources.begin(), t.sources.end(), source_id);
    if (pos == t.sources.end()) return;
    if (t.sources.size() == 1) {
      to_remove.push_back(fact_key(t));
    } else {
      to_strip.push_back(t);
    }
  });
  SnapshotPtr next = snapshot->remove_facts(to_remove);
  if (!to_strip.empty()) {
    std::set<EntityId> subjects;
    std::vector<FactKey> strip_keys;
    std::vector<ExtendedTriple> replacements;
    for (auto t : to_strip) {
      size_t idx = static_cast<size_t>(
          std::find(t.sources.begin(), t.sources.end(), source_id) - t.sources.begin());
      t.sources.erase(t.sources.begin() + static_cast<ptrdiff_t>(idx));
      t.trust.erase(t.trust.begin() + static_cast<ptrdiff_t>(idx));
      strip_keys.push_back(fact_key(t));
      replacements.push_back(std::move(t));
    }
    next = next->remove_facts(strip_keys);
    next = next->upsert_triples(replacements);
  }

  auto links = same_as_index(*next);
  std::vector<ExtendedTriple> mapped;
  for (auto t : volatile_triples) {
    if (!volatile_predicates.count(t.predicate)) {
      raise(Errc::ConfigError, "non-volatile predicate in volatile payload: " + t.predicate);
    }
    if (!t.subject.is_graph()) {
      auto it = links.find(t.subject);
      if (it == links.end()) {
        if (warnings) {
          warnings->push_back("UnlinkedVolatileSubject: " + t.subject.str() + ", row skipped");
        }
        continue;
      }
      t.subject = it->second;
    }
    mapped.push_back(std::move(t));
  }
  return next->upsert_triples(mapped);
}

ordered_json FusionReport::to_json() const {
  ordered_json counts;
  counts["facts_added"] = facts_added;
  counts["facts_updated"] = facts_updated;
  counts["facts_removed"] = facts_removed;
  counts["entities_created"] = entities_created;
  counts["relationship_nodes_merged"] = relationship_nodes_merged;
  counts["relationship_nodes_created"] = relationship_nodes_created;
  ordered_json trust_json = ordered_json::object();
  for (const auto& [source, value] : trust.trust) trust_json[source] = value;
  ordered_json out;
  out["counts"] = std::move(counts);
  out["trust"] = std::move(trust_json);
  out["trust_iterations"] = trust.iteration_count;
  out["trust_converged"] = trust.converged;
  out["warnings"] = warnings;
  return out;
}

namespace {

std::vector<std::string> literal_context(const SourceEntity& entity) {
  std::vector<std::string> out;
  for (const auto& [pred, values] : entity.predicates) {
    for (const auto& value : values) {
      if (value.composite()) {
        for (const auto& [_, inner_values] : value.node) {
          out.insert(out.end(), inner_values.begin(), inner_values.end());
        }
      } else {
        out.push_back(value.text);
      }
    }
  }
  return out;
}

}  // namespace

FusionOutcome process_source_payloads(const SnapshotPtr& snapshot, const SourceDelta& delta,
                                      const ConstructContext& ctx) {
  FusionOutcome outcome;
  FusionReport& report = outcome.report;
  SnapshotPtr working = snapshot;

  auto links = same_as_index(*working);

  // Partition the payload: Added always links; Updated re-uses its lineage
  // and falls back to linking when none exists.
  std::vector<SourceEntity> to_link = delta.added;
  std::map<EntityId, EntityId> assigned;
  std::vector<const SourceEntity*> direct;
  for (const auto& e : delta.updated) {
    auto it = links.find(e.id);
    if (it == links.end()) {
      report.warnings.push_back("link drift: updated entity " + e.id.str() +
                                " had no same_as lineage, re-linking");
      to_link.push_back(e);
    } else {
      assigned[e.id] = it->second;
      direct.push_back(&e);
    }
  }

  if (!to_link.empty()) {
    LinkingPayload payload =
        combine_payload(extract_kg_view(*working, ctx.source.entity_type), to_link);
    auto blocks = block(payload, ctx.blocking);
    auto pairs = generate_pairs(blocks, payload, true);
    auto scored = match_pairs(pairs, payload, ctx.matcher);
    auto graph = build_linkage_graph(scored, ctx.tau_pos, ctx.tau_neg);
    auto clusters = resolve_clusters(graph, payload, ctx.link_seed);
    std::set<EntityId> batch_ids;
    for (const auto& e : to_link) batch_ids.insert(e.id);
    std::set<EntityId> created;
    for (const auto& [node, akg] : clusters.assigned) {
      if (batch_ids.count(node)) {
        assigned[node] = akg;
        if (!working->has_entity(akg)) created.insert(akg);
      }
    }
    report.entities_created = static_cast<int>(created.size());
    for (const auto& [a, b] : clusters.review_pairs) {
      report.warnings.push_back("review: graph entities " + a.str() + " and " + b.str() +
                                " matched positively, left unfused");
    }
  }

  // Updated entities replace their source's earlier claims before refusing.
  std::set<EntityId> replaced_subjects;
  for (const auto* e : direct) replaced_subjects.insert(assigned.at(e->id));
  if (!replaced_subjects.empty()) {
    size_t before = working->size();
    working = working->remove_source_facts(ctx.source.source_id, replaced_subjects);
    report.facts_removed += static_cast<int>(before - working->size());
  }

  // Deleted entities resolve through lineage only.
  if (!delta.deleted.empty()) {
    size_t before = working->size();
    working = apply_deletions(working, delta.deleted, ctx.source.source_id, &report.warnings);
    report.facts_removed += static_cast<int>(before - working->size());
  }

  // Export payload triples under akg subjects, resolve literal objects, and
  // reconcile relationship nodes against what the KG already holds.
  std::vector<SourceEntity> payload_entities = delta.added;
  for (const auto* e : direct) payload_entities.push_back(*e);
  std::vector<ExtendedTriple> fused;
  std::vector<ExtendedTriple> same_as_facts;
  for (const auto& entity : payload_entities) {
    auto it = assigned.find(entity.id);
    if (it == assigned.end()) {
      raise(Errc::UnlinkedSubject, entity.id.str() + " received no cluster assignment");
    }
    const EntityId& akg = it->second;
    auto triples = export_extended_triples({entity}, ctx.source.source_id,
                                           ctx.source.default_trust, ctx.source.locales);
    std::vector<std::string> context = literal_context(entity);
    for (auto& t : triples) {
      t.subject = akg;
      const std::string& value_predicate = t.r_predicate ? *t.r_predicate : t.predicate;
      auto expected = ctx.ontology.target_type(value_predicate);
      if (expected && ctx.resolver && t.object_kind == ObjectKind::literal) {
        auto resolved = ctx.resolver(t.object, context, *expected);
        if (resolved) {
          t.object = resolved->str();
          t.object_kind = ObjectKind::entity_ref;
          t.locale.reset();
        }
      }
    }
    auto decisions = merge_relationship_nodes(working->get_entity(akg), triples, ctx.theta_rel);
    std::map<std::string, std::string> r_id_rewrite;
    for (const auto& d : decisions) {
      if (d.merged()) {
        r_id_rewrite[d.source_r_id] = *d.kg_r_id;
        ++report.relationship_nodes_merged;
      } else {
        ++report.relationship_nodes_created;
      }
    }
    for (auto& t : triples) {
      if (t.r_id) {
        auto rw = r_id_rewrite.find(*t.r_id);
        if (rw != r_id_rewrite.end()) t.r_id = rw->second;
      }
      fused.push_back(std::move(t));
    }
    ExtendedTriple link_fact;
    link_fact.subject = akg;
    link_fact.predicate = kSameAsPredicate;
    link_fact.object = entity.id.str();
    link_fact.object_kind = ObjectKind::entity_ref;
    link_fact.sources = {ctx.source.source_id};
    link_fact.trust = {ctx.source.default_trust};
    same_as_facts.push_back(std::move(link_fact));
  }

  int added = 0, updated = 0;
  std::set<FactKey> counted;
  for (const auto& t : fused) {
    FactKey key = fact_key(t);
    if (!counted.insert(key).second) continue;
    const ExtendedTriple* existing = working->find_fact(key);
    if (!existing) {
      ++added;
    } else if (std::find(existing->sources.begin(), existing->sources.end(),
                         ctx.source.source_id) == existing->sources.end()) {
      ++updated;
    }
  }
  report.facts_added = added;
  report.facts_updated = updated;

  working = fuse_simple_facts(working, fused);
  working = working->upsert_triples(same_as_facts);

  if (!delta.volatile_dump.empty() || !ctx.source.volatile_predicates.empty()) {
    working = overwrite_volatile_partition(working, ctx.source.source_id, delta.volatile_dump,
                                           ctx.source.volatile_predicates, &report.warnings);
  }

  report.trust = update_source_trust(*working, ctx.ontology, 0.7, 100, 1e-6);
  outcome.snapshot = working;
  return outcome;
}

}  // namespace kgf
