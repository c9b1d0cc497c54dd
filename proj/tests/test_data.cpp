#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "civrec/data.hpp"
#include "support/tempdir.hpp"

using namespace civrec;
using testsupport::TempDir;

TEST_CASE("load_interactions parses delimited lines in order") {
  TempDir dir;
  dir.write("r.csv", "1,32,5,978300760\n2,11,3\n1,11,4\n");
  const auto records = data::load_interactions(dir.file("r.csv"));
  REQUIRE(records.size() == 3);
  CHECK(records[0].user == "1");
  CHECK(records[0].item == "32");
  CHECK(records[0].rating == 5);
  CHECK(records[0].timestamp == 978300760);
  CHECK(records[1].rating == 3);
  CHECK_FALSE(records[1].timestamp.has_value());
  CHECK(records[2].user == "1");
}

TEST_CASE("load_interactions understands :: and tab delimiters") {
  TempDir dir;
  dir.write("ml.dat", "7::1193::5::978300760\n7::661::3::978302109\n");
  const auto ml = data::load_interactions(dir.file("ml.dat"));
  REQUIRE(ml.size() == 2);
  CHECK(ml[0].item == "1193");
  dir.write("t.tsv", "a\tb\t4\n");
  CHECK(data::load_interactions(dir.file("t.tsv"))[0].rating == 4);
}

TEST_CASE("load_interactions rejects bad ratings, malformed lines, empty files") {
  TempDir dir;
  dir.write("bad.csv", "1,32,5\n1,33,9\n");
  CHECK_THROWS_WITH_AS(data::load_interactions(dir.file("bad.csv")),
                       doctest::Contains("rating out of range at line 2"), std::runtime_error);
  dir.write("mal.csv", "1,32\n");
  CHECK_THROWS_WITH_AS(data::load_interactions(dir.file("mal.csv")),
                       doctest::Contains("line 1"), std::runtime_error);
  dir.write("empty.csv", "");
  CHECK_THROWS_WITH_AS(data::load_interactions(dir.file("empty.csv")),
                       doctest::Contains("empty"), std::runtime_error);
}

TEST_CASE("binarize labels five-star ratings only by default") {
  std::vector<data::InteractionRecord> records{
      {"u", "a", 5, {}}, {"u", "b", 4, {}}, {"v", "a", 1, {}}};
  const auto labeled = data::binarize(records);
  CHECK(labeled[0].label);
  CHECK_FALSE(labeled[1].label);
  CHECK_FALSE(labeled[2].label);
  CHECK(data::binarize({}).empty());
  // threshold is a knob for other corpora
  CHECK(data::binarize(records, 4)[1].label);
}

// Sequential-deletion oracle: repeatedly drop all edges of one offending
// endpoint at a time. The k-core is unique, so any deletion order agrees.
static std::vector<data::IdPair> kcore_oracle(std::vector<data::IdPair> edges, int k) {
  for (;;) {
    std::map<std::string, int> user_deg, item_deg;
    for (const auto& [u, i] : edges) {
      ++user_deg[u];
      ++item_deg[i];
    }
    std::string drop_user, drop_item;
    for (const auto& [u, d] : user_deg) {
      if (d < k) {
        drop_user = u;
        break;
      }
    }
    if (drop_user.empty()) {
      for (const auto& [i, d] : item_deg) {
        if (d < k) {
          drop_item = i;
          break;
        }
      }
    }
    if (drop_user.empty() && drop_item.empty()) return edges;
    std::vector<data::IdPair> next;
    for (const auto& e : edges) {
      if (e.first != drop_user && (drop_item.empty() || e.second != drop_item)) {
        next.push_back(e);
      }
    }
    edges = std::move(next);
  }
}

TEST_CASE("k_core_filter: fixed points and the cascading chain") {
  // u1-i1, u1-i2, u2-i2 with k=2 cascades to empty.
  std::vector<data::IdPair> chain{{"u1", "i1"}, {"u1", "i2"}, {"u2", "i2"}};
  CHECK(data::k_core_filter(chain, 2).empty());
  CHECK(kcore_oracle(chain, 2).empty());

  // Complete 2x2 graph is already a 2-core.
  std::vector<data::IdPair> block{{"u1", "i1"}, {"u1", "i2"}, {"u2", "i1"}, {"u2", "i2"}};
  CHECK(data::k_core_filter(block, 2) == block);

  // k=1 keeps any nonempty edge list.
  CHECK(data::k_core_filter(chain, 1) == chain);
}

TEST_CASE("k_core_filter matches the brute-force oracle on random graphs") {
  Rng rng(404);
  for (int trial = 0; trial < 200; ++trial) {
    std::set<data::IdPair> edge_set;
    const int n_edges = 1 + static_cast<int>(rng.below(30));
    for (int e = 0; e < n_edges; ++e) {
      edge_set.insert({"u" + std::to_string(rng.below(6)), "i" + std::to_string(rng.below(6))});
    }
    const std::vector<data::IdPair> edges(edge_set.begin(), edge_set.end());
    const int k = 1 + static_cast<int>(rng.below(4));
    auto got = data::k_core_filter(edges, k);
    auto expected = kcore_oracle(edges, k);
    std::sort(got.begin(), got.end());
    std::sort(expected.begin(), expected.end());
    REQUIRE(got == expected);
  }
}

static std::vector<data::Pair> grid_positives(std::int64_t n) {
  // n distinct (user, item) pairs over a 40x50 grid.
  std::vector<data::Pair> out;
  for (std::int64_t u = 0; u < 40 && static_cast<std::int64_t>(out.size()) < n; ++u) {
    for (std::int64_t i = 0; i < 50 && static_cast<std::int64_t>(out.size()) < n; ++i) {
      out.emplace_back(u, i);
    }
  }
  return out;
}

TEST_CASE("split_biased_unbiased: 70:10:20 with val/test inside the random subset") {
  std::vector<data::Pair> positives;
  for (std::int64_t u = 0; u < 50; ++u)
    for (std::int64_t i = 0; i < 20; ++i) positives.emplace_back(u, i);
  REQUIRE(positives.size() == 1000);

  Rng rng(1);
  const auto bundle = data::split_biased_unbiased(positives, 50, 20, rng);
  CHECK(bundle.train.size() == 700);
  CHECK(bundle.val.size() == 100);
  CHECK(bundle.test.size() == 200);

  std::set<data::Pair> train(bundle.train.begin(), bundle.train.end());
  std::set<data::Pair> val(bundle.val.begin(), bundle.val.end());
  std::set<data::Pair> test(bundle.test.begin(), bundle.test.end());
  CHECK(train.size() + val.size() + test.size() == 1000);  // pairwise disjoint partition

  // 40% random draw = val + test + flagged tail of train.
  std::int64_t flagged = 0;
  for (const auto f : bundle.train_from_random) flagged += f;
  CHECK(flagged == 400 - 100 - 200);

  Rng rng2(1);
  const auto again = data::split_biased_unbiased(positives, 50, 20, rng2);
  CHECK(again.train == bundle.train);
  CHECK(again.val == bundle.val);
  CHECK(again.test == bundle.test);

  CHECK_THROWS_AS(data::split_biased_unbiased(grid_positives(9), 40, 50, rng),
                  std::runtime_error);
}

TEST_CASE("split sizes stay within one interaction of exact percentages") {
  Rng rng(9);
  for (const std::int64_t n : {10, 11, 37, 123, 998, 1001}) {
    const auto positives = grid_positives(n);
    const auto actual = static_cast<double>(positives.size());
    const auto bundle = data::split_biased_unbiased(positives, 40, 50, rng);
    CHECK(std::abs(static_cast<double>(bundle.train.size()) - 0.7 * actual) <= 1.0);
    CHECK(std::abs(static_cast<double>(bundle.val.size()) - 0.1 * actual) <= 1.0);
    CHECK(std::abs(static_cast<double>(bundle.test.size()) - 0.2 * actual) <= 1.0);
    // popularity counts sum to |train| and match a recount
    std::int64_t total = 0;
    for (const auto c : bundle.popularity) total += c;
    CHECK(total == static_cast<std::int64_t>(bundle.train.size()));
  }
}

static data::DatasetBundle tiny_bundle() {
  data::DatasetBundle bundle;
  bundle.user_count = 2;
  bundle.item_count = 10;
  bundle.train = {{0, 0}, {1, 0}, {1, 1}};
  bundle.train_from_random = {0, 0, 1};
  bundle.val = {{0, 1}};
  bundle.test = {{0, 2}, {1, 2}};
  bundle.seed = 5;
  bundle.rebuild_caches();
  return bundle;
}

TEST_CASE("sample_negative is uniform over non-positive items") {
  auto bundle = tiny_bundle();
  Rng rng(3);

  // single candidate
  data::DatasetBundle two;
  two.user_count = 1;
  two.item_count = 2;
  two.train = {{0, 0}};
  two.train_from_random = {0};
  two.rebuild_caches();
  for (int i = 0; i < 5; ++i) CHECK(data::sample_negative(0, rng, two) == 1);

  // frequency check: user 0 has positive {0} among items {0..9}
  std::vector<int> counts(10, 0);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) ++counts[data::sample_negative(0, rng, bundle)];
  CHECK(counts[0] == 0);
  for (int i = 1; i < 10; ++i) {
    CHECK(std::abs(counts[i] / static_cast<double>(draws) - 1.0 / 9.0) < 0.02);
  }

  // user positive on every item
  data::DatasetBundle full;
  full.user_count = 1;
  full.item_count = 2;
  full.train = {{0, 0}, {0, 1}};
  full.train_from_random = {0, 0};
  full.rebuild_caches();
  CHECK_THROWS_WITH_AS(data::sample_negative(0, rng, full), doctest::Contains("no negative"),
                       std::runtime_error);
}

TEST_CASE("popular_set ranks by count with index tie-break") {
  data::DatasetBundle bundle;
  bundle.user_count = 1;
  bundle.item_count = 3;
  bundle.popularity = {5, 9, 1};
  CHECK(data::popular_set(bundle, 2) == std::vector<std::int64_t>{1, 0});
  CHECK(data::popular_set(bundle, 3) == std::vector<std::int64_t>{1, 0, 2});
  bundle.popularity = {3, 3, 1};
  CHECK(data::popular_set(bundle, 1) == std::vector<std::int64_t>{0});
  CHECK_THROWS_AS(data::popular_set(bundle, 4), std::runtime_error);
}

static std::vector<double> softmax_row(const double* row, std::size_t n) {
  double mx = row[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, row[i]);
  std::vector<double> p(n);
  double z = 0;
  for (std::size_t i = 0; i < n; ++i) z += (p[i] = std::exp(row[i] - mx));
  for (auto& v : p) v /= z;
  return p;
}

TEST_CASE("synthetic generator: zero confounding leaves exposure at the preference softmax") {
  data::SyntheticSpec spec;
  spec.users = 30;
  spec.items = 40;
  spec.confounder_strength = 0.0;
  spec.seed = 2;
  const auto synth = data::generate_synthetic(spec);
  double worst_kl = 0.0;
  for (std::int64_t u = 0; u < spec.users; ++u) {
    const auto p = softmax_row(synth.preference.data() + u * spec.items,
                               static_cast<std::size_t>(spec.items));
    double kl = 0.0;
    for (std::int64_t i = 0; i < spec.items; ++i) {
      const double q = synth.exposure[u * spec.items + i];
      kl += q * std::log(q / p[i]);
    }
    worst_kl = std::max(worst_kl, std::abs(kl));
  }
  CHECK(worst_kl < 1e-6);
}

TEST_CASE("synthetic generator: strong confounding overexposes top-decile items") {
  data::SyntheticSpec spec;
  spec.confounder_strength = 5.0;
  spec.seed = 0;
  const auto synth = data::generate_synthetic(spec);

  std::vector<std::int64_t> order(spec.items);
  for (std::int64_t i = 0; i < spec.items; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](auto a, auto b) { return synth.confounder[a] > synth.confounder[b]; });
  std::set<std::int64_t> top_decile(order.begin(), order.begin() + spec.items / 10);

  const auto share = [&](const std::vector<data::Pair>& pairs) {
    std::int64_t hits = 0;
    for (const auto& [u, i] : pairs) hits += top_decile.count(i) ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(pairs.size());
  };
  CHECK(share(synth.bundle.train) > 2.0 * share(synth.bundle.test));
}

TEST_CASE("synthetic generator is deterministic and produces disjoint splits") {
  data::SyntheticSpec spec;
  spec.users = 25;
  spec.items = 30;
  spec.positives_per_user = 7;
  spec.seed = 11;
  const auto a = data::generate_synthetic(spec);
  const auto b = data::generate_synthetic(spec);
  CHECK(a.bundle.train == b.bundle.train);
  CHECK(a.bundle.val == b.bundle.val);
  CHECK(a.bundle.test == b.bundle.test);
  CHECK(a.preference == b.preference);

  std::set<data::Pair> all;
  for (const auto* split : {&a.bundle.train, &a.bundle.val, &a.bundle.test}) {
    for (const auto& p : *split) CHECK(all.insert(p).second);
  }
}

TEST_CASE("bundle save/load round-trips and is byte-stable") {
  TempDir dir;
  const auto bundle = tiny_bundle();
  data::save_bundle(dir.file("b"), bundle);
  const auto loaded = data::load_bundle(dir.file("b"));
  CHECK(loaded.user_count == bundle.user_count);
  CHECK(loaded.item_count == bundle.item_count);
  CHECK(loaded.seed == bundle.seed);
  CHECK(loaded.val == bundle.val);
  CHECK(loaded.test == bundle.test);
  CHECK(loaded.popularity == bundle.popularity);
  std::int64_t flags = 0;
  for (const auto f : loaded.train_from_random) flags += f;
  CHECK(flags == 1);

  data::save_bundle(dir.file("c"), loaded);
  CHECK(testsupport::slurp(dir.file("b.train.txt")) == testsupport::slurp(dir.file("c.train.txt")));
  CHECK(testsupport::slurp(dir.file("b.meta.txt")) == testsupport::slurp(dir.file("c.meta.txt")));
}
