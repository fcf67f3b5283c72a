#include "kgforge/simstr.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "kgforge/error.hpp"
#include "kgforge/ontology.hpp"
#include "kgforge/util.hpp"

namespace kgf {

using nlohmann::json;

std::set<std::string> qgram_set(const std::string& s, int q) {
  std::set<std::string> out;
  if (q < 1) raise(Errc::ConfigError, "q must be >= 1");
  std::string padded = std::string(static_cast<size_t>(q - 1), '#') + s +
                       std::string(static_cast<size_t>(q - 1), '#');
  if (padded.size() < static_cast<size_t>(q)) return out;
  for (size_t i = 0; i + static_cast<size_t>(q) <= padded.size(); ++i) {
    out.insert(padded.substr(i, static_cast<size_t>(q)));
  }
  return out;
}

double qgram_jaccard(const std::string& a, const std::string& b, int q) {
  auto qa = qgram_set(a, q);
  auto qb = qgram_set(b, q);
  if (qa.empty() && qb.empty()) return 1.0;
  size_t inter = 0;
  for (const auto& g : qa) inter += qb.count(g);
  size_t uni = qa.size() + qb.size() - inter;
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double edit_similarity(const std::string& a, const std::string& b) {
  if (a.empty() && b.empty()) return 1.0;
  size_t n = a.size(), m = b.size();
  std::vector<size_t> prev(m + 1), cur(m + 1);
  for (size_t j = 0; j <= m; ++j) prev[j] = j;
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = i;
    for (size_t j = 1; j <= m; ++j) {
      size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  double dist = static_cast<double>(prev[m]);
  return 1.0 - dist / static_cast<double>(std::max(n, m));
}

double cosine(const std::vector<double>& u, const std::vector<double>& v) {
  if (u.size() != v.size()) raise(Errc::ConfigError, "cosine over mismatched dims");
  double dot = 0, nu = 0, nv = 0;
  for (size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu < 1e-24 || nv < 1e-24) raise(Errc::ZeroVector, "cosine of zero vector");
  return dot / (std::sqrt(nu) * std::sqrt(nv));
}

StringEncoder StringEncoder::make(const std::string& string_type, int ngram_size,
                                  int hash_buckets, int dim, uint64_t seed) {
  StringEncoder enc;
  enc.string_type = string_type;
  enc.ngram_size = ngram_size;
  enc.hash_buckets = hash_buckets;
  enc.dim = dim;
  enc.table.resize(static_cast<size_t>(hash_buckets) * static_cast<size_t>(dim));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-0.1, 0.1);
  for (double& v : enc.table) v = dist(rng);
  return enc;
}

std::vector<std::pair<int, int>> StringEncoder::bucket_counts(const std::string& s) const {
  std::string norm = normalize_text(s);
  if (norm.empty()) raise(Errc::EmptyString, "cannot encode empty string");
  std::map<int, int> counts;
  std::string padded = std::string(static_cast<size_t>(ngram_size - 1), '#') + norm +
                       std::string(static_cast<size_t>(ngram_size - 1), '#');
  for (size_t i = 0; i + static_cast<size_t>(ngram_size) <= padded.size(); ++i) {
    uint64_t h = fnv1a64(padded.substr(i, static_cast<size_t>(ngram_size)));
    counts[static_cast<int>(h % static_cast<uint64_t>(hash_buckets))] += 1;
  }
  return {counts.begin(), counts.end()};
}

std::vector<double> StringEncoder::encode(const std::string& s) const {
  auto counts = bucket_counts(s);
  std::vector<double> mean(static_cast<size_t>(dim), 0.0);
  int total = 0;
  for (const auto& [bucket, count] : counts) {
    const double* row = table.data() + static_cast<size_t>(bucket) * static_cast<size_t>(dim);
    for (int d = 0; d < dim; ++d) mean[static_cast<size_t>(d)] += row[d] * count;
    total += count;
  }
  double norm = 0;
  for (double& v : mean) {
    v /= total;
    norm += v * v;
  }
  norm = std::sqrt(norm);
  if (norm < 1e-12) raise(Errc::ZeroVector, "degenerate encoding for: " + s);
  for (double& v : mean) v /= norm;
  return mean;
}

double StringEncoder::similarity(const std::string& a, const std::string& b) const {
  return cosine(encode(a), encode(b));
}

void StringEncoder::save(const std::string& path) const {
  json header = {{"string_type", string_type},
                 {"ngram_size", ngram_size},
                 {"hash_buckets", hash_buckets},
                 {"dim", dim}};
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) raise(Errc::IoError, "cannot open for write: " + path);
  os << header.dump() << '\n';
  std::vector<float> f32(table.size());
  for (size_t i = 0; i < table.size(); ++i) f32[i] = static_cast<float>(table[i]);
  os.write(reinterpret_cast<const char*>(f32.data()),
           static_cast<std::streamsize>(f32.size() * sizeof(float)));
  if (!os.flush()) raise(Errc::IoError, "write failed: " + path);
}

StringEncoder StringEncoder::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) raise(Errc::IoError, "cannot open for read: " + path);
  std::string header_line;
  std::getline(is, header_line);
  json header = json::parse(header_line, nullptr, false);
  if (header.is_discarded()) raise(Errc::FormatError, "bad encoder header in " + path);
  StringEncoder enc;
  enc.string_type = header.at("string_type").get<std::string>();
  enc.ngram_size = header.at("ngram_size").get<int>();
  enc.hash_buckets = header.at("hash_buckets").get<int>();
  enc.dim = header.at("dim").get<int>();
  size_t n = static_cast<size_t>(enc.hash_buckets) * static_cast<size_t>(enc.dim);
  std::vector<float> f32(n);
  is.read(reinterpret_cast<char*>(f32.data()), static_cast<std::streamsize>(n * sizeof(float)));
  if (static_cast<size_t>(is.gcount()) != n * sizeof(float)) {
    raise(Errc::FormatError, "truncated encoder table in " + path);
  }
  enc.table.assign(f32.begin(), f32.end());
  return enc;
}

static std::string apply_typo(const std::string& s, std::mt19937_64& rng) {
  if (s.size() < 4) return s;
  std::uniform_int_distribution<size_t> pos_dist(1, s.size() - 2);
  size_t pos = pos_dist(rng);
  switch (rng() % 3) {
    case 0: {  // transpose adjacent characters
      std::string out = s;
      std::swap(out[pos], out[pos + 1]);
      return out;
    }
    case 1:  // drop one character
      return s.substr(0, pos) + s.substr(pos + 1);
    default:  // double one character
      return s.substr(0, pos) + s[pos] + s.substr(pos);
  }
}

std::vector<TrainingTriplet> generate_training_data(const KgSnapshot& snapshot,
                                                    const std::string& string_type,
                                                    const AugmentationConfig& cfg) {
  struct NamePool {
    std::vector<std::string> names;
    std::vector<std::string> aliases;
  };
  std::map<EntityId, NamePool> pools;
  snapshot.for_each([&](const ExtendedTriple& t) {
    if (!t.subject.is_graph()) return;
    if (t.predicate == kNamePredicate) pools[t.subject].names.push_back(t.object);
    if (t.predicate == kAliasPredicate) pools[t.subject].aliases.push_back(t.object);
  });
  if (!cfg.entity_type.empty()) {
    for (auto it = pools.begin(); it != pools.end();) {
      bool keep = false;
      for (const auto& t : snapshot.get_entity(it->first)) {
        if (t.predicate == kTypePredicate && t.object == cfg.entity_type) keep = true;
      }
      it = keep ? std::next(it) : pools.erase(it);
    }
  }

  std::vector<std::pair<std::string, std::string>> positives;
  std::vector<std::string> negative_pool;
  std::mt19937_64 rng(cfg.seed);
  for (const auto& [_, pool] : pools) {
    for (const auto& name : pool.names) {
      negative_pool.push_back(name);
      for (const auto& alias : pool.aliases) {
        if (alias != name) positives.emplace_back(name, alias);
      }
      for (int i = 0; i < cfg.typo_variants_per_name; ++i) {
        std::string typo = apply_typo(name, rng);
        if (typo != name) positives.emplace_back(name, typo);
      }
    }
  }

  std::vector<TrainingTriplet> out;
  if (negative_pool.size() >= 2) {
    size_t neg_cursor = 0;
    for (const auto& [anchor, positive] : positives) {
      for (size_t tries = 0; tries < negative_pool.size(); ++tries) {
        const std::string& neg = negative_pool[neg_cursor % negative_pool.size()];
        ++neg_cursor;
        if (neg != anchor) {
          out.push_back(TrainingTriplet{anchor, positive, neg});
          break;
        }
      }
    }
  }
  if (out.size() < static_cast<size_t>(cfg.min_triplets)) {
    raise(Errc::InsufficientData, std::to_string(out.size()) + " triplets for " + string_type +
                                      ", need " + std::to_string(cfg.min_triplets));
  }
  return out;
}

namespace {

struct EncodedParts {
  std::vector<std::pair<int, int>> counts;
  std::vector<double> mean;  // pre-normalization pooled vector
  std::vector<double> unit;
  double norm = 0;
  int total = 0;
};

EncodedParts encode_parts(const StringEncoder& enc, const std::string& s) {
  EncodedParts p;
  p.counts = enc.bucket_counts(s);
  p.mean.assign(static_cast<size_t>(enc.dim), 0.0);
  for (const auto& [bucket, count] : p.counts) {
    const double* row =
        enc.table.data() + static_cast<size_t>(bucket) * static_cast<size_t>(enc.dim);
    for (int d = 0; d < enc.dim; ++d) p.mean[static_cast<size_t>(d)] += row[d] * count;
    p.total += count;
  }
  double norm2 = 0;
  for (double& v : p.mean) {
    v /= p.total;
    norm2 += v * v;
  }
  p.norm = std::sqrt(norm2);
  if (p.norm < 1e-12) raise(Errc::ZeroVector, "degenerate encoding for: " + s);
  p.unit.resize(p.mean.size());
  for (size_t i = 0; i < p.mean.size(); ++i) p.unit[i] = p.mean[i] / p.norm;
  return p;
}

// d cos(u,v)/d m_u = (v_hat - cos * u_hat) / |m_u|, the standard normalized
// dot-product derivative.
std::vector<double> dcos_dmean(const EncodedParts& u, const EncodedParts& v, double cos_uv) {
  std::vector<double> g(u.unit.size());
  for (size_t i = 0; i < g.size(); ++i) {
    g[i] = (v.unit[i] - cos_uv * u.unit[i]) / u.norm;
  }
  return g;
}

void scatter(std::map<int, std::vector<double>>& rows, const EncodedParts& part,
             const std::vector<double>& dmean, double scale, int dim) {
  for (const auto& [bucket, count] : part.counts) {
    auto& row = rows[bucket];
    if (row.empty()) row.assign(static_cast<size_t>(dim), 0.0);
    double w = scale * static_cast<double>(count) / static_cast<double>(part.total);
    for (int d = 0; d < dim; ++d) row[static_cast<size_t>(d)] += w * dmean[static_cast<size_t>(d)];
  }
}

}  // namespace

TripletGrads triplet_loss_gradients(const StringEncoder& enc, const TrainingTriplet& t,
                                    double margin) {
  TripletGrads out;
  EncodedParts a = encode_parts(enc, t.anchor);
  EncodedParts p = encode_parts(enc, t.positive);
  EncodedParts n = encode_parts(enc, t.negative);
  double cos_ap = 0, cos_an = 0;
  for (size_t i = 0; i < a.unit.size(); ++i) {
    cos_ap += a.unit[i] * p.unit[i];
    cos_an += a.unit[i] * n.unit[i];
  }
  out.loss = std::max(0.0, margin - cos_ap + cos_an);
  if (out.loss <= 0.0) return out;

  std::map<int, std::vector<double>> rows;
  auto d_ap_a = dcos_dmean(a, p, cos_ap);
  auto d_an_a = dcos_dmean(a, n, cos_an);
  auto d_ap_p = dcos_dmean(p, a, cos_ap);
  auto d_an_n = dcos_dmean(n, a, cos_an);
  std::vector<double> da(a.unit.size());
  for (size_t i = 0; i < da.size(); ++i) da[i] = -d_ap_a[i] + d_an_a[i];
  scatter(rows, a, da, 1.0, enc.dim);
  scatter(rows, p, d_ap_p, -1.0, enc.dim);
  scatter(rows, n, d_an_n, 1.0, enc.dim);
  out.rows.assign(rows.begin(), rows.end());
  return out;
}

StringEncoder train_encoder(const std::vector<TrainingTriplet>& triplets,
                            const std::string& string_type, const EncoderTrainConfig& cfg,
                            std::vector<double>* epoch_losses) {
  if (triplets.empty()) raise(Errc::InsufficientData, "no training triplets");
  for (const auto& t : triplets) {
    if (t.anchor == t.negative) {
      raise(Errc::ConfigError, "triplet anchor equals negative: " + t.anchor);
    }
  }
  StringEncoder enc =
      StringEncoder::make(string_type, cfg.ngram_size, cfg.hash_buckets, cfg.dim, cfg.seed);
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  std::vector<size_t> order(triplets.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0;
    for (size_t idx : order) {
      TripletGrads g = triplet_loss_gradients(enc, triplets[idx], cfg.margin);
      if (!std::isfinite(g.loss)) raise(Errc::NonFiniteLoss, "triplet loss diverged");
      epoch_loss += g.loss;
      for (const auto& [bucket, row] : g.rows) {
        double* dst =
            enc.table.data() + static_cast<size_t>(bucket) * static_cast<size_t>(enc.dim);
        for (int d = 0; d < enc.dim; ++d) dst[d] -= cfg.lr * row[static_cast<size_t>(d)];
      }
    }
    if (!std::isfinite(epoch_loss)) raise(Errc::NonFiniteLoss, "epoch loss diverged");
    if (epoch_losses) {
      epoch_losses->push_back(epoch_loss / static_cast<double>(triplets.size()));
    }
  }
  return enc;
}

}  // namespace kgf
