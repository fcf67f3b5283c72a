#include "kgforge/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "kgforge/ontology.hpp"
#include "kgforge/util.hpp"

namespace kgf {

namespace {

nlohmann::ordered_json entry_to_json(const LogEntry& e) {
  nlohmann::ordered_json doc;
  doc["lsn"] = e.lsn;
  doc["payload_ref"] = e.payload_ref;
  auto changed = nlohmann::ordered_json::array();
  for (const auto& id : e.changed_entities) changed.push_back(id.str());
  doc["changed_entities"] = std::move(changed);
  doc["checksum"] = e.checksum;
  return doc;
}

LogEntry entry_from_json(const nlohmann::json& doc) {
  LogEntry e;
  e.lsn = doc.at("lsn").get<uint64_t>();
  e.payload_ref = doc.at("payload_ref").get<std::string>();
  for (const auto& id : doc.at("changed_entities")) {
    e.changed_entities.push_back(EntityId::parse(id.get<std::string>()));
  }
  e.checksum = doc.at("checksum").get<std::string>();
  return e;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

OperationLog OperationLog::open(const std::string& path) {
  OperationLog log;
  log.path_ = path;
  if (!file_exists(path)) return log;
  std::istringstream in(read_file(path));
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    LogEntry entry;
    try {
      entry = entry_from_json(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      raise(Errc::FormatError, path + " line " + std::to_string(line_no) + ": " + e.what());
    }
    uint64_t expected = log.entries_.empty() ? 1 : log.entries_.back().lsn + 1;
    if (entry.lsn != expected) {
      raise(Errc::FormatError, path + " line " + std::to_string(line_no) + ": lsn " +
                                   std::to_string(entry.lsn) + ", expected " +
                                   std::to_string(expected));
    }
    log.entries_.push_back(std::move(entry));
  }
  return log;
}

uint64_t OperationLog::append(const std::string& payload_ref,
                              const std::vector<EntityId>& changed_entities) {
  if (!file_exists(payload_ref)) {
    raise(Errc::StageMissing, "staged payload not found: " + payload_ref);
  }
  LogEntry entry;
  entry.lsn = head() + 1;
  entry.payload_ref = payload_ref;
  entry.changed_entities = changed_entities;
  entry.checksum = hex64(fnv1a64(read_file(payload_ref)));

  std::ofstream out(path_, std::ios::app);
  if (!out) raise(Errc::IoError, "cannot open log for append: " + path_);
  out << entry_to_json(entry).dump() << "\n";
  out.flush();
  if (!out) raise(Errc::IoError, "log append failed: " + path_);

  entries_.push_back(std::move(entry));
  return entries_.back().lsn;
}

std::vector<LogEntry> OperationLog::read_after(uint64_t after, int limit) const {
  std::vector<LogEntry> out;
  for (const auto& e : entries_) {
    if (e.lsn <= after) continue;
    if (limit > 0 && out.size() >= static_cast<size_t>(limit)) break;
    out.push_back(e);
  }
  return out;
}

const char* store_kind_name(StoreKind k) {
  switch (k) {
    case StoreKind::analytics: return "analytics";
    case StoreKind::inverted_index: return "inverted_index";
    case StoreKind::kv: return "kv";
    case StoreKind::vector: return "vector";
  }
  return "unknown";
}

StoreKind store_kind_from(const std::string& name) {
  if (name == "analytics") return StoreKind::analytics;
  if (name == "inverted_index") return StoreKind::inverted_index;
  if (name == "kv") return StoreKind::kv;
  if (name == "vector") return StoreKind::vector;
  raise(Errc::ConfigError, "unknown store kind: " + name);
}

void AnalyticsStore::apply(const LogEntry& entry, const std::vector<ExtendedTriple>& payload) {
  std::set<EntityId> changed(entry.changed_entities.begin(), entry.changed_entities.end());
  for (auto it = facts_.begin(); it != facts_.end();) {
    if (changed.count(it->first.subject)) {
      it = facts_.erase(it);
    } else {
      ++it;
    }
  }
  for (const auto& t : payload) facts_[fact_key(t)] = t;
}

std::string AnalyticsStore::content_hash() const {
  return hex64(fnv1a64(render_triples_jsonl(all_facts())));
}

std::vector<ExtendedTriple> AnalyticsStore::facts_for(const EntityId& subject) const {
  std::vector<ExtendedTriple> out;
  for (const auto& [key, t] : facts_) {
    if (key.subject == subject) out.push_back(t);
  }
  return out;
}

std::vector<ExtendedTriple> AnalyticsStore::all_facts() const {
  std::vector<ExtendedTriple> out;
  out.reserve(facts_.size());
  for (const auto& [key, t] : facts_) out.push_back(t);
  return out;
}

void InvertedIndexStore::apply(const LogEntry& entry, const std::vector<ExtendedTriple>& payload) {
  std::set<EntityId> changed(entry.changed_entities.begin(), entry.changed_entities.end());
  for (auto it = postings_.begin(); it != postings_.end();) {
    auto& entries = it->second;
    for (auto p = entries.begin(); p != entries.end();) {
      if (changed.count(p->first)) {
        p = entries.erase(p);
      } else {
        ++p;
      }
    }
    if (entries.empty()) {
      it = postings_.erase(it);
    } else {
      ++it;
    }
  }
  for (const auto& t : payload) {
    if (t.object_kind != ObjectKind::literal) continue;
    for (const auto& token : tokenize(t.object)) {
      postings_[token].insert({t.subject, t.predicate});
    }
  }
}

std::string InvertedIndexStore::content_hash() const {
  std::ostringstream out;
  for (const auto& [token, entries] : postings_) {
    out << token;
    for (const auto& [entity, predicate] : entries) out << "|" << entity.str() << "/" << predicate;
    out << "\n";
  }
  for (const auto& [name, ids] : ranked_) {
    out << "#" << name;
    for (const auto& id : ids) out << "|" << id;
    out << "\n";
  }
  return hex64(fnv1a64(out.str()));
}

std::set<EntityId> InvertedIndexStore::search(const std::string& token) const {
  std::set<EntityId> out;
  auto it = postings_.find(normalize_text(token));
  if (it == postings_.end()) return out;
  for (const auto& [entity, predicate] : it->second) out.insert(entity);
  return out;
}

void InvertedIndexStore::put_ranked(const std::string& name, const std::vector<std::string>& ids) {
  ranked_[name] = ids;
}

const std::vector<std::string>* InvertedIndexStore::ranked(const std::string& name) const {
  auto it = ranked_.find(name);
  return it == ranked_.end() ? nullptr : &it->second;
}

void KvStore::apply(const LogEntry& entry, const std::vector<ExtendedTriple>& payload) {
  std::map<EntityId, std::vector<ExtendedTriple>> by_subject;
  for (const auto& t : payload) by_subject[t.subject].push_back(t);
  for (const auto& id : entry.changed_entities) {
    auto it = by_subject.find(id);
    if (it == by_subject.end()) {
      kv_.erase("entity:" + id.str());
    } else {
      kv_["entity:" + id.str()] = render_triples_jsonl(it->second);
    }
  }
}

std::string KvStore::content_hash() const {
  std::ostringstream out;
  for (const auto& [key, value] : kv_) out << key << "\t" << value << "\n";
  return hex64(fnv1a64(out.str()));
}

void KvStore::put(const std::string& key, const std::string& value) { kv_[key] = value; }

std::optional<std::string> KvStore::get(const std::string& key) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return std::nullopt;
  return it->second;
}

void VectorStore::apply(const LogEntry& entry, const std::vector<ExtendedTriple>& payload) {
  constexpr size_t kFeatureDim = 16;
  std::map<EntityId, std::vector<ExtendedTriple>> by_subject;
  for (const auto& t : payload) by_subject[t.subject].push_back(t);
  for (const auto& id : entry.changed_entities) {
    auto it = by_subject.find(id);
    if (it == by_subject.end()) {
      vectors_.erase(id.str());
      continue;
    }
    std::vector<double> vec(kFeatureDim, 0.0);
    for (const auto& t : it->second) {
      if (t.object_kind != ObjectKind::literal) continue;
      for (const auto& token : tokenize(t.object)) {
        vec[fnv1a64(token) % kFeatureDim] += 1.0;
      }
    }
    double norm = 0.0;
    for (double v : vec) norm += v * v;
    norm = std::sqrt(norm);
    if (norm > 0.0) {
      for (double& v : vec) v /= norm;
    }
    vectors_[id.str()] = std::move(vec);
  }
}

std::string VectorStore::content_hash() const {
  std::ostringstream out;
  for (const auto& [key, vec] : vectors_) {
    out << key;
    for (double v : vec) out << "|" << format_double(v);
    out << "\n";
  }
  return hex64(fnv1a64(out.str()));
}

void VectorStore::put(const std::string& key, std::vector<double> vec) {
  vectors_[key] = std::move(vec);
}

const std::vector<double>* VectorStore::get(const std::string& key) const {
  auto it = vectors_.find(key);
  return it == vectors_.end() ? nullptr : &it->second;
}

std::vector<std::pair<std::string, double>> VectorStore::nearest(const std::vector<double>& query,
                                                                 size_t k) const {
  std::vector<std::pair<std::string, double>> scored;
  double qnorm = 0.0;
  for (double v : query) qnorm += v * v;
  qnorm = std::sqrt(qnorm);
  for (const auto& [key, vec] : vectors_) {
    if (vec.size() != query.size()) continue;
    double dot = 0.0;
    double norm = 0.0;
    for (size_t i = 0; i < vec.size(); ++i) {
      dot += vec[i] * query[i];
      norm += vec[i] * vec[i];
    }
    norm = std::sqrt(norm);
    double sim = (qnorm > 0.0 && norm > 0.0) ? dot / (qnorm * norm) : 0.0;
    scored.push_back({key, sim});
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (scored.size() > k) scored.resize(k);
  return scored;
}

std::shared_ptr<Store> make_store(StoreKind kind) {
  switch (kind) {
    case StoreKind::analytics: return std::make_shared<AnalyticsStore>();
    case StoreKind::inverted_index: return std::make_shared<InvertedIndexStore>();
    case StoreKind::kv: return std::make_shared<KvStore>();
    case StoreKind::vector: return std::make_shared<VectorStore>();
  }
  raise(Errc::ConfigError, "unknown store kind");
}

int agent_replay(StoreAgent& agent, const OperationLog& log, int limit) {
  int applied = 0;
  for (const auto& entry : log.read_after(agent.replay_lsn, limit)) {
    if (!file_exists(entry.payload_ref)) {
      raise(Errc::ApplyFailure, "lsn " + std::to_string(entry.lsn) +
                                    ": staged payload missing: " + entry.payload_ref);
    }
    std::string raw = read_file(entry.payload_ref);
    if (hex64(fnv1a64(raw)) != entry.checksum) {
      raise(Errc::ApplyFailure,
            "lsn " + std::to_string(entry.lsn) + ": payload checksum mismatch");
    }
    std::vector<ExtendedTriple> payload;
    try {
      payload = parse_triples_jsonl(raw);
    } catch (const Error& e) {
      raise(Errc::ApplyFailure, "lsn " + std::to_string(entry.lsn) + ": " + e.what());
    }
    try {
      agent.store->apply(entry, payload);
    } catch (const std::exception& e) {
      raise(Errc::ApplyFailure, "lsn " + std::to_string(entry.lsn) + ": " + e.what());
    }
    agent.replay_lsn = entry.lsn;
    ++applied;
  }
  return applied;
}

Freshness freshness(const std::vector<StoreAgent>& agents) {
  if (agents.empty()) raise(Errc::EmptyAgentSet, "freshness needs at least one agent");
  Freshness f;
  f.min_lsn = agents.front().replay_lsn;
  for (const auto& agent : agents) {
    f.per_store[agent.store_id] = agent.replay_lsn;
    f.min_lsn = std::min(f.min_lsn, agent.replay_lsn);
  }
  return f;
}

void save_agent_progress(const std::string& path, const std::vector<StoreAgent>& agents) {
  nlohmann::ordered_json doc = nlohmann::ordered_json::object();
  for (const auto& agent : agents) doc[agent.store_id] = agent.replay_lsn;
  write_file_atomic(path, doc.dump(2) + "\n");
}

std::map<std::string, uint64_t> load_agent_progress(const std::string& path) {
  std::map<std::string, uint64_t> out;
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    raise(Errc::FormatError, path + ": " + e.what());
  }
  for (const auto& [store_id, lsn] : doc.items()) out[store_id] = lsn.get<uint64_t>();
  return out;
}

void ViewCatalog::register_view(const ViewDefinition& def) {
  for (const auto& dep : def.deps) {
    if (dep == def.name) raise(Errc::CycleDetected, "view depends on itself: " + def.name);
    if (!views_.count(dep)) {
      raise(Errc::UnknownDependency, "view " + def.name + " depends on unregistered " + dep);
    }
  }
  auto previous = views_.find(def.name);
  std::optional<ViewDefinition> saved;
  if (previous != views_.end()) saved = previous->second;
  views_[def.name] = def;

  // Re-registration can redirect an existing edge back onto a dependent, so
  // walk the dependency closure from the new definition.
  std::set<std::string> seen;
  std::vector<std::string> stack = {def.name};
  seen.insert(def.name);
  bool cycle = false;
  while (!stack.empty() && !cycle) {
    std::string at = stack.back();
    stack.pop_back();
    for (const auto& dep : views_.at(at).deps) {
      if (dep == def.name) {
        cycle = true;
        break;
      }
      if (seen.insert(dep).second) stack.push_back(dep);
    }
  }
  if (cycle) {
    if (saved) {
      views_[def.name] = *saved;
    } else {
      views_.erase(def.name);
    }
    raise(Errc::CycleDetected, "registering " + def.name + " would close a dependency cycle");
  }
}

const ViewDefinition* ViewCatalog::view(const std::string& name) const {
  auto it = views_.find(name);
  return it == views_.end() ? nullptr : &it->second;
}

std::vector<std::string> ViewCatalog::names() const {
  std::vector<std::string> out;
  for (const auto& [name, def] : views_) out.push_back(name);
  return out;
}

std::vector<std::string> ViewCatalog::plan_refresh(const std::vector<std::string>& targets) const {
  std::vector<std::string> order;
  std::set<std::string> done;
  // Iterative DFS post-order: dependencies land in the plan before dependents.
  struct Frame {
    std::string name;
    size_t next_dep = 0;
  };
  for (const auto& target : targets) {
    if (!views_.count(target)) raise(Errc::UnknownDependency, "unknown view: " + target);
    if (done.count(target)) continue;
    std::vector<Frame> stack = {{target}};
    while (!stack.empty()) {
      Frame& frame = stack.back();
      const auto& deps = views_.at(frame.name).deps;
      if (frame.next_dep < deps.size()) {
        const std::string& dep = deps[frame.next_dep++];
        if (!done.count(dep)) stack.push_back({dep});
      } else {
        if (done.insert(frame.name).second) order.push_back(frame.name);
        stack.pop_back();
      }
    }
  }
  return order;
}

void ViewCatalog::save(const std::string& path) const {
  auto doc = nlohmann::ordered_json::array();
  for (const auto& [name, def] : views_) {
    nlohmann::ordered_json row;
    row["name"] = def.name;
    row["deps"] = def.deps;
    row["target_store"] = store_kind_name(def.target_store);
    row["create"] = def.create_procedure;
    row["drop"] = def.drop_procedure;
    row["update"] = def.update_procedure;
    if (def.freshness_sla) row["freshness_sla"] = *def.freshness_sla;
    doc.push_back(std::move(row));
  }
  write_file_atomic(path, doc.dump(2) + "\n");
}

ViewCatalog ViewCatalog::load(const std::string& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    raise(Errc::FormatError, path + ": " + e.what());
  }
  std::vector<ViewDefinition> defs;
  for (const auto& row : doc) {
    ViewDefinition def;
    def.name = row.at("name").get<std::string>();
    for (const auto& dep : row.at("deps")) def.deps.push_back(dep.get<std::string>());
    def.target_store = store_kind_from(row.at("target_store").get<std::string>());
    def.create_procedure = row.at("create").get<std::string>();
    def.drop_procedure = row.at("drop").get<std::string>();
    def.update_procedure = row.at("update").get<std::string>();
    if (row.contains("freshness_sla")) def.freshness_sla = row["freshness_sla"].get<uint64_t>();
    defs.push_back(std::move(def));
  }

  // Rows are stored sorted by name, which need not be dependency order, so
  // register in passes until everything lands.
  ViewCatalog catalog;
  std::vector<bool> done(defs.size(), false);
  size_t remaining = defs.size();
  while (remaining > 0) {
    size_t registered_this_pass = 0;
    for (size_t i = 0; i < defs.size(); ++i) {
      if (done[i]) continue;
      bool ready = true;
      for (const auto& dep : defs[i].deps) {
        if (!catalog.view(dep)) {
          ready = false;
          break;
        }
      }
      if (!ready) continue;
      catalog.register_view(defs[i]);
      done[i] = true;
      ++registered_this_pass;
      --remaining;
    }
    if (registered_this_pass == 0) {
      for (size_t i = 0; i < defs.size(); ++i) {
        if (!done[i]) catalog.register_view(defs[i]);
      }
      break;
    }
  }
  return catalog;
}

void ProcedureRegistry::add(const std::string& name, ViewProcedure fn) {
  procedures_[name] = std::move(fn);
}

const ViewProcedure* ProcedureRegistry::find(const std::string& name) const {
  auto it = procedures_.find(name);
  return it == procedures_.end() ? nullptr : &it->second;
}

int RefreshReport::executions_of(const std::string& view) const {
  for (const auto& e : entries) {
    if (e.view == view) return e.executions;
  }
  return 0;
}

nlohmann::ordered_json RefreshReport::to_json() const {
  auto doc = nlohmann::ordered_json::array();
  for (const auto& e : entries) {
    nlohmann::ordered_json row;
    row["view"] = e.view;
    row["executions"] = e.executions;
    row["millis"] = e.millis;
    doc.push_back(std::move(row));
  }
  return doc;
}

RefreshReport refresh_views(const ViewCatalog& catalog, const std::vector<std::string>& plan,
                            const ProcedureRegistry& procedures, RefreshContext& ctx) {
  RefreshReport report;
  for (const auto& name : plan) {
    const ViewDefinition* def = catalog.view(name);
    if (!def) raise(Errc::UnknownDependency, "plan names unknown view: " + name);
    const ViewProcedure* proc = procedures.find(def->update_procedure);
    if (!proc) {
      raise(Errc::ViewProcedureError,
            "view " + name + ": no procedure named " + def->update_procedure);
    }
    auto start = std::chrono::steady_clock::now();
    try {
      (*proc)(*def, ctx);
    } catch (const std::exception& e) {
      raise(Errc::ViewProcedureError, "view " + name + ": " + e.what());
    }
    auto stop = std::chrono::steady_clock::now();
    double millis = std::chrono::duration<double, std::milli>(stop - start).count();

    bool merged = false;
    for (auto& entry : report.entries) {
      if (entry.view == name) {
        ++entry.executions;
        entry.millis += millis;
        merged = true;
        break;
      }
    }
    if (!merged) report.entries.push_back({name, 1, millis});
  }
  return report;
}

std::vector<ImportanceRecord> compute_importance(const KgSnapshot& snapshot, double damping,
                                                 double tol) {
  // Node set: every subject plus every referenced entity, so sinks that never
  // assert facts still collect rank.
  std::set<EntityId> nodes;
  std::vector<std::pair<EntityId, EntityId>> edges;
  std::map<EntityId, std::set<std::string>> sources_of;
  snapshot.for_each([&](const ExtendedTriple& t) {
    nodes.insert(t.subject);
    auto& seen = sources_of[t.subject];
    for (const auto& s : t.sources) seen.insert(s);
    if (t.object_kind == ObjectKind::entity_ref && t.predicate != kSameAsPredicate) {
      EntityId target = t.object_id();
      nodes.insert(target);
      edges.push_back({t.subject, target});
    }
  });

  std::vector<EntityId> order(nodes.begin(), nodes.end());
  std::map<EntityId, size_t> index;
  for (size_t i = 0; i < order.size(); ++i) index[order[i]] = i;
  size_t n = order.size();

  std::vector<double> in_degree(n, 0.0);
  std::vector<double> out_degree(n, 0.0);
  std::vector<std::vector<size_t>> incoming(n);
  for (const auto& [from, to] : edges) {
    size_t u = index.at(from);
    size_t v = index.at(to);
    out_degree[u] += 1.0;
    in_degree[v] += 1.0;
    incoming[v].push_back(u);
  }

  std::vector<double> rank(n, n > 0 ? 1.0 / static_cast<double>(n) : 0.0);
  std::vector<double> next(n, 0.0);
  for (int iter = 0; iter < 1000 && n > 0; ++iter) {
    double dangling = 0.0;
    for (size_t i = 0; i < n; ++i) {
      if (out_degree[i] == 0.0) dangling += rank[i];
    }
    double base = (1.0 - damping) / static_cast<double>(n) +
                  damping * dangling / static_cast<double>(n);
    for (size_t v = 0; v < n; ++v) {
      double flow = 0.0;
      for (size_t u : incoming[v]) flow += rank[u] / out_degree[u];
      next[v] = base + damping * flow;
    }
    double delta = 0.0;
    for (size_t i = 0; i < n; ++i) delta += std::fabs(next[i] - rank[i]);
    rank.swap(next);
    if (delta < tol) break;
  }

  std::vector<ImportanceRecord> records(n);
  for (size_t i = 0; i < n; ++i) {
    records[i].entity = order[i];
    records[i].in_degree = in_degree[i];
    records[i].out_degree = out_degree[i];
    auto it = sources_of.find(order[i]);
    records[i].identities = it == sources_of.end() ? 0.0 : static_cast<double>(it->second.size());
    records[i].pagerank = rank[i];
  }

  auto normalized = [&](auto getter) {
    std::vector<double> out(n, 0.0);
    if (n == 0) return out;
    double lo = getter(records[0]);
    double hi = lo;
    for (const auto& r : records) {
      lo = std::min(lo, getter(r));
      hi = std::max(hi, getter(r));
    }
    if (hi > lo) {
      for (size_t i = 0; i < n; ++i) out[i] = (getter(records[i]) - lo) / (hi - lo);
    }
    return out;
  };
  auto nin = normalized([](const ImportanceRecord& r) { return r.in_degree; });
  auto nout = normalized([](const ImportanceRecord& r) { return r.out_degree; });
  auto nid = normalized([](const ImportanceRecord& r) { return r.identities; });
  auto npr = normalized([](const ImportanceRecord& r) { return r.pagerank; });
  for (size_t i = 0; i < n; ++i) {
    records[i].aggregate = (nin[i] + nout[i] + nid[i] + npr[i]) / 4.0;
  }
  return records;
}

}  // namespace kgf
