#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "civrec/rng.hpp"

namespace civrec::data {

struct InteractionRecord {
  std::string user;
  std::string item;
  int rating = 0;  // 1..5
  std::optional<std::int64_t> timestamp;
};

struct LabeledRecord {
  InteractionRecord rec;
  bool label = false;
};

// Delimiter-separated text, one interaction per line:
//   user,item,rating[,timestamp]
// Delimiter auto-detected among comma / tab / "::". Malformed lines and
// empty files are hard errors with the offending line number.
std::vector<InteractionRecord> load_interactions(const std::string& path);

// Label 1 iff rating >= threshold (default: only five-star ratings).
std::vector<LabeledRecord> binarize(const std::vector<InteractionRecord>& records,
                                    int threshold = 5);

using IdPair = std::pair<std::string, std::string>;

// Positive (label-1) pairs, deduplicated, input order preserved.
std::vector<IdPair> positive_pairs(const std::vector<LabeledRecord>& records);

// Iteratively removes users and items with fewer than k interactions until
// a fixed point; may return an empty set.
std::vector<IdPair> k_core_filter(std::vector<IdPair> positives, int k = 10);

struct IndexMap {
  std::vector<std::string> users;  // dense idx -> external id
  std::vector<std::string> items;
  std::unordered_map<std::string, std::int64_t> user_idx;
  std::unordered_map<std::string, std::int64_t> item_idx;

  static IndexMap build(const std::vector<IdPair>& pairs);
};

using Pair = std::pair<std::int64_t, std::int64_t>;  // (user idx, item idx)

struct DatasetBundle {
  std::vector<Pair> train;
  std::vector<Pair> val;
  std::vector<Pair> test;
  // Parallel to `train`: 1 when the record came from the uniformly-random
  // subset, 0 when it came from the biased remainder. Every val/test record
  // is from the random subset by construction.
  std::vector<std::uint8_t> train_from_random;
  std::int64_t user_count = 0;
  std::int64_t item_count = 0;
  std::vector<std::int64_t> popularity;  // item -> count in train
  std::uint64_t seed = 0;

  // Sorted train items per user, rebuilt alongside popularity.
  std::vector<std::vector<std::int64_t>> train_items_by_user;

  void rebuild_caches();
  bool user_has_train(std::int64_t user, std::int64_t item) const;
  const std::vector<std::int64_t>& train_items(std::int64_t user) const;
};

// Uniformly samples 40% of the positives as the "random" subset; 10% of the
// total (taken from the random subset) becomes validation, 20% test, and the
// leftover random tenth plus the biased remainder form the training set.
DatasetBundle split_biased_unbiased(const std::vector<Pair>& positives, std::int64_t user_count,
                                    std::int64_t item_count, Rng& rng);

// Uniform over items the user has no train positive for.
std::int64_t sample_negative(std::int64_t user, Rng& rng, const DatasetBundle& bundle);

// K items with the highest train counts, ties broken by lower item index.
// Returned in rank order.
std::vector<std::int64_t> popular_set(const DatasetBundle& bundle, std::int64_t k);

struct SyntheticSpec {
  std::int64_t users = 200;
  std::int64_t items = 100;
  std::int64_t latent_dim = 8;
  double confounder_strength = 3.0;
  double exposure_skew = 1.0;
  std::int64_t positives_per_user = 15;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticData {
  DatasetBundle bundle;
  std::vector<double> preference;  // users x items, row-major ground truth
  std::vector<double> exposure;    // users x items exposure probabilities
  std::vector<double> confounder;  // per-item confounder score (standardized)
};

// Confounded interaction generator. Train positives are drawn from
// softmax(preference + strength * confounder) per user; val/test positives
// are drawn from softmax(preference) alone, so they reflect preference only.
SyntheticData generate_synthetic(const SyntheticSpec& spec);

// Bundle files: <prefix>.train.txt / .val.txt / .test.txt with one
// "user_idx item_idx" pair per line, plus <prefix>.meta.txt with counts and
// the seed. Train rows are ordered biased-first; the meta file records the
// size of the trailing random block.
void save_bundle(const std::string& prefix, const DatasetBundle& bundle);
DatasetBundle load_bundle(const std::string& prefix);

}  // namespace civrec::data
