#pragma once
// String similarity: deterministic comparators (q-gram Jaccard, edit
// similarity) and learned per-type character encoders. An encoder hashes
// padded character n-grams into an embedding table, mean-pools the rows and
// L2-normalizes; training minimizes a triplet margin loss over cosine
// similarity with distant supervision mined from the KG.

#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "kgforge/snapshot.hpp"

namespace kgf {

double qgram_jaccard(const std::string& a, const std::string& b, int q);
double edit_similarity(const std::string& a, const std::string& b);
std::set<std::string> qgram_set(const std::string& s, int q);

double cosine(const std::vector<double>& u, const std::vector<double>& v);

struct StringEncoder {
  std::string string_type;
  int ngram_size = 3;
  int hash_buckets = 4096;
  int dim = 64;
  std::vector<double> table;  // hash_buckets x dim, row-major

  static StringEncoder make(const std::string& string_type, int ngram_size, int hash_buckets,
                            int dim, uint64_t seed);

  std::vector<double> encode(const std::string& s) const;
  double similarity(const std::string& a, const std::string& b) const;

  void save(const std::string& path) const;
  static StringEncoder load(const std::string& path);

  // N-gram bucket histogram for the normalized string; shared by encode and
  // the training gradient scatter.
  std::vector<std::pair<int, int>> bucket_counts(const std::string& s) const;
};

struct TrainingTriplet {
  std::string anchor;
  std::string positive;
  std::string negative;
};

struct AugmentationConfig {
  std::string entity_type;
  int typo_variants_per_name = 1;
  int min_triplets = 8;
  uint64_t seed = 7;
};

// Distant supervision: (name, alias) pairs of one entity are positives, typo
// edits of names add more, names of other entities are negatives.
std::vector<TrainingTriplet> generate_training_data(const KgSnapshot& snapshot,
                                                    const std::string& string_type,
                                                    const AugmentationConfig& cfg);

struct EncoderTrainConfig {
  int ngram_size = 3;
  int hash_buckets = 4096;
  int dim = 64;
  double margin = 0.2;
  double lr = 0.1;
  int epochs = 20;
  uint64_t seed = 1;
};

struct TripletGrads {
  // Bucket-indexed gradient rows for one triplet, ready to apply or compare
  // against finite differences.
  std::vector<std::pair<int, std::vector<double>>> rows;
  double loss = 0.0;
};

TripletGrads triplet_loss_gradients(const StringEncoder& enc, const TrainingTriplet& t,
                                    double margin);

StringEncoder train_encoder(const std::vector<TrainingTriplet>& triplets,
                            const std::string& string_type, const EncoderTrainConfig& cfg,
                            std::vector<double>* epoch_losses = nullptr);

}  // namespace kgf
