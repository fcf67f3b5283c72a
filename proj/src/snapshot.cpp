#include "kgforge/snapshot.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace kgf {

size_t KgSnapshot::size() const {
  size_t n = 0;
  for (const auto& [_, facts] : entities_) n += facts.size();
  return n;
}

ExtendedTriple merge_provenance(const ExtendedTriple& existing, const ExtendedTriple& incoming) {
  ExtendedTriple merged = existing;
  merged.object_kind = incoming.object_kind;
  for (size_t i = 0; i < incoming.sources.size(); ++i) {
    auto it = std::find(merged.sources.begin(), merged.sources.end(), incoming.sources[i]);
    if (it == merged.sources.end()) {
      merged.sources.push_back(incoming.sources[i]);
      merged.trust.push_back(incoming.trust[i]);
    } else {
      merged.trust[static_cast<size_t>(it - merged.sources.begin())] = incoming.trust[i];
    }
  }
  return merged;
}

SnapshotPtr KgSnapshot::upsert_triples(const std::vector<ExtendedTriple>& payload) const {
  auto next = std::make_shared<KgSnapshot>(*this);
  next->version_ = version_ + 1;
  for (const auto& t : payload) {
    validate(t);
    auto& slot = next->entities_[t.subject];
    FactKey key = fact_key(t);
    auto it = slot.find(key);
    if (it == slot.end()) {
      slot.emplace(std::move(key), t);
    } else {
      it->second = merge_provenance(it->second, t);
    }
  }
  return next;
}

SnapshotPtr KgSnapshot::remove_facts(const std::vector<FactKey>& keys) const {
  auto next = std::make_shared<KgSnapshot>(*this);
  next->version_ = version_ + 1;
  for (const auto& key : keys) {
    auto ent = next->entities_.find(key.subject);
    if (ent == next->entities_.end()) continue;
    ent->second.erase(key);
    if (ent->second.empty()) next->entities_.erase(ent);
  }
  return next;
}

SnapshotPtr KgSnapshot::remove_source_facts(const std::string& source,
                                            const std::set<EntityId>& subjects) const {
  auto next = std::make_shared<KgSnapshot>(*this);
  next->version_ = version_ + 1;
  for (const auto& subject : subjects) {
    auto ent = next->entities_.find(subject);
    if (ent == next->entities_.end()) continue;
    for (auto it = ent->second.begin(); it != ent->second.end();) {
      auto& t = it->second;
      auto pos = std::find(t.sources.begin(), t.sources.end(), source);
      if (pos == t.sources.end()) {
        ++it;
        continue;
      }
      if (t.sources.size() == 1) {
        it = ent->second.erase(it);
      } else {
        size_t idx = static_cast<size_t>(pos - t.sources.begin());
        t.sources.erase(t.sources.begin() + static_cast<ptrdiff_t>(idx));
        t.trust.erase(t.trust.begin() + static_cast<ptrdiff_t>(idx));
        ++it;
      }
    }
    if (ent->second.empty()) next->entities_.erase(ent);
  }
  return next;
}

std::vector<ExtendedTriple> KgSnapshot::get_entity(const EntityId& subject) const {
  std::vector<ExtendedTriple> out;
  auto it = entities_.find(subject);
  if (it == entities_.end()) return out;
  out.reserve(it->second.size());
  for (const auto& [_, t] : it->second) out.push_back(t);
  return out;
}

bool KgSnapshot::has_entity(const EntityId& subject) const {
  return entities_.count(subject) > 0;
}

OneHopResult KgSnapshot::get_one_hop(const EntityId& subject, const std::string& predicate) const {
  OneHopResult out;
  auto it = entities_.find(subject);
  if (it == entities_.end()) return out;
  // One bucket scan; no join. First collect the r_ids this predicate introduces.
  std::set<std::string> rids;
  bool simple_only = false;
  for (const auto& [_, t] : it->second) {
    if (t.predicate != predicate) continue;
    if (t.r_id) {
      rids.insert(*t.r_id);
    } else {
      simple_only = true;
    }
  }
  if (rids.empty()) {
    if (simple_only) {
      raise(Errc::NotComposite, predicate + " holds only simple facts on " + subject.str());
    }
    return out;
  }
  for (const auto& [_, t] : it->second) {
    if (t.r_id && t.r_predicate && rids.count(*t.r_id)) {
      out[*t.r_id][*t.r_predicate].push_back(t.object);
    }
  }
  return out;
}

const ExtendedTriple* KgSnapshot::find_fact(const FactKey& key) const {
  auto ent = entities_.find(key.subject);
  if (ent == entities_.end()) return nullptr;
  auto it = ent->second.find(key);
  return it == ent->second.end() ? nullptr : &it->second;
}

std::vector<EntityId> KgSnapshot::subjects() const {
  std::vector<EntityId> out;
  out.reserve(entities_.size());
  for (const auto& [id, _] : entities_) out.push_back(id);
  return out;
}

void KgSnapshot::for_each(const std::function<void(const ExtendedTriple&)>& fn) const {
  for (const auto& [_, facts] : entities_) {
    for (const auto& [__, t] : facts) fn(t);
  }
}

std::vector<ExtendedTriple> KgSnapshot::all_triples() const {
  std::vector<ExtendedTriple> out;
  out.reserve(size());
  for_each([&out](const ExtendedTriple& t) { out.push_back(t); });
  return out;
}

std::string KgSnapshot::render_jsonl() const {
  std::ostringstream os;
  for (const auto& [_, facts] : entities_) {
    for (const auto& [__, t] : facts) {
      ExtendedTriple canon = t;
      // Provenance order must not depend on arrival order.
      std::vector<size_t> idx(canon.sources.size());
      for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
        return canon.sources[a] < canon.sources[b];
      });
      ExtendedTriple sorted = canon;
      for (size_t i = 0; i < idx.size(); ++i) {
        sorted.sources[i] = canon.sources[idx[i]];
        sorted.trust[i] = canon.trust[idx[i]];
      }
      os << triple_to_json(sorted).dump() << '\n';
    }
  }
  return os.str();
}

void KgSnapshot::save(const std::string& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) raise(Errc::IoError, "cannot open for write: " + path);
  os << render_jsonl();
  if (!os.flush()) raise(Errc::IoError, "write failed: " + path);
}

SnapshotPtr KgSnapshot::from_triples(const std::vector<ExtendedTriple>& triples, uint64_t version) {
  auto snap = std::make_shared<KgSnapshot>();
  for (const auto& t : triples) {
    validate(t);
    auto& slot = snap->entities_[t.subject];
    FactKey key = fact_key(t);
    auto it = slot.find(key);
    if (it == slot.end()) {
      slot.emplace(std::move(key), t);
    } else {
      it->second = merge_provenance(it->second, t);
    }
  }
  snap->version_ = version;
  return snap;
}

SnapshotPtr KgSnapshot::load(const std::string& path, uint64_t version) {
  return from_triples(read_triples_file(path), version);
}

bool KgSnapshot::same_facts(const KgSnapshot& other) const {
  return render_jsonl() == other.render_jsonl();
}

}  // namespace kgf
