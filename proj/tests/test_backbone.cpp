#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "civrec/backbone.hpp"
#include "support/gradcheck.hpp"

using namespace civrec;
using diff::Graph;
using diff::Tensor;

namespace {

data::DatasetBundle bundle_from_edges(std::vector<data::Pair> edges, std::int64_t users,
                                      std::int64_t items) {
  data::DatasetBundle bundle;
  bundle.user_count = users;
  bundle.item_count = items;
  bundle.train = std::move(edges);
  bundle.train_from_random.assign(bundle.train.size(), 0);
  bundle.rebuild_caches();
  return bundle;
}

double adj_entry(const backbone::NormAdjacency& adj, std::int64_t r, std::int64_t c) {
  const auto& m = *adj.mat;
  for (std::size_t e = 0; e < m.vals.size(); ++e) {
    if (m.row_idx[e] == r && m.col_idx[e] == c) return m.vals[e];
  }
  return 0.0;
}

}  // namespace

TEST_CASE("init_embeddings is deterministic and honours the config") {
  backbone::Config config;
  config.dim = 128;
  Rng a(42), b(42);
  const auto ta = backbone::init_embeddings(config, 5, 7, a);
  const auto tb = backbone::init_embeddings(config, 5, 7, b);
  CHECK(ta.user.shape() == diff::Shape{5, 128});
  CHECK(ta.item.shape() == diff::Shape{7, 128});
  CHECK(std::equal(ta.user.values().begin(), ta.user.values().end(), tb.user.values().begin()));
  CHECK(ta.user.requires_grad());

  config.dim = 1;
  CHECK_THROWS_AS(backbone::init_embeddings(config, 5, 7, a), std::runtime_error);
}

TEST_CASE("init_embeddings sample standard deviation tracks init_std") {
  backbone::Config config;
  config.dim = 100;
  config.init_std = 0.1;
  Rng rng(0);
  const auto table = backbone::init_embeddings(config, 10000, 2, rng);  // 1e6 samples
  double sum = 0.0, sq = 0.0;
  for (const double v : table.user.values()) {
    sum += v;
    sq += v * v;
  }
  const double n = static_cast<double>(table.user.numel());
  const double stddev = std::sqrt(sq / n - (sum / n) * (sum / n));
  CHECK(std::abs(stddev - 0.1) < 0.002);
}

TEST_CASE("norm adjacency: degree-1 edges and hand-checked normalization") {
  {
    const auto adj = bundle_from_edges({{0, 0}}, 1, 1);
    const auto norm = backbone::build_norm_adjacency(adj);
    CHECK(adj_entry(norm, 0, 1) == doctest::Approx(1.0));
    CHECK(adj_entry(norm, 1, 0) == doctest::Approx(1.0));
    CHECK(adj_entry(norm, 0, 0) == 0.0);  // no self loops
  }
  {
    // u0 connected to i0 and i1, items degree 1 each -> entries 1/sqrt(2)
    const auto adj = bundle_from_edges({{0, 0}, {0, 1}}, 1, 2);
    const auto norm = backbone::build_norm_adjacency(adj);
    CHECK(adj_entry(norm, 0, 1) == doctest::Approx(1.0 / std::sqrt(2.0)));
    CHECK(adj_entry(norm, 0, 2) == doctest::Approx(1.0 / std::sqrt(2.0)));
    CHECK(adj_entry(norm, 1, 0) == doctest::Approx(1.0 / std::sqrt(2.0)));
  }
}

TEST_CASE("norm adjacency equals the dense D^{-1/2} A D^{-1/2} oracle") {
  Rng rng(77);
  for (int trial = 0; trial < 30; ++trial) {
    const std::int64_t users = 2 + static_cast<std::int64_t>(rng.below(8));
    const std::int64_t items = 2 + static_cast<std::int64_t>(rng.below(8));
    std::set<data::Pair> edges;
    const std::int64_t want = 1 + static_cast<std::int64_t>(rng.below(20));
    for (std::int64_t e = 0; e < want; ++e) {
      edges.insert({static_cast<std::int64_t>(rng.below(users)),
                    static_cast<std::int64_t>(rng.below(items))});
    }
    const auto bundle = bundle_from_edges({edges.begin(), edges.end()}, users, items);
    const auto norm = backbone::build_norm_adjacency(bundle);

    const std::int64_t n = users + items;
    std::vector<double> dense(n * n, 0.0), deg(n, 0.0);
    for (const auto& [u, i] : bundle.train) {
      dense[u * n + users + i] = 1.0;
      dense[(users + i) * n + u] = 1.0;
      deg[u] += 1.0;
      deg[users + i] += 1.0;
    }
    for (std::int64_t r = 0; r < n; ++r) {
      for (std::int64_t c = 0; c < n; ++c) {
        double expected = dense[r * n + c];
        if (expected != 0.0) expected /= std::sqrt(deg[r] * deg[c]);
        CHECK(std::abs(adj_entry(norm, r, c) - expected) < 1e-10);
        // symmetry
        CHECK(adj_entry(norm, r, c) == doctest::Approx(adj_entry(norm, c, r)));
      }
    }
  }
}

TEST_CASE("propagate: zero layers is the identity, one layer averages the edge") {
  backbone::Config config;
  config.kind = backbone::Kind::kLightGcn;
  config.dim = 4;
  Rng rng(5);
  const auto bundle = bundle_from_edges({{0, 0}}, 1, 1);
  const auto table = backbone::init_embeddings(config, 1, 1, rng);
  const auto adj = backbone::build_norm_adjacency(bundle);

  Graph g;
  const auto p0 = backbone::propagate(g, table, adj, 0);
  for (std::int64_t d = 0; d < 4; ++d) {
    CHECK(p0.nodes.at(0, d) == table.user.values()[d]);
    CHECK(p0.nodes.at(1, d) == table.item.values()[d]);
  }

  // single edge with unit normalization: layer-1 user row = (e_u + e_i) / 2
  const auto p1 = backbone::propagate(g, table, adj, 1);
  for (std::int64_t d = 0; d < 4; ++d) {
    const double expected = 0.5 * (table.user.values()[d] + table.item.values()[d]);
    CHECK(p1.nodes.at(0, d) == doctest::Approx(expected));
  }
}

TEST_CASE("propagate matches a dense reference on random graphs") {
  Rng rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    const std::int64_t users = 2 + static_cast<std::int64_t>(rng.below(6));
    const std::int64_t items = 2 + static_cast<std::int64_t>(rng.below(6));
    std::set<data::Pair> edges;
    for (std::int64_t e = 0; e < 12; ++e) {
      edges.insert({static_cast<std::int64_t>(rng.below(users)),
                    static_cast<std::int64_t>(rng.below(items))});
    }
    const auto bundle = bundle_from_edges({edges.begin(), edges.end()}, users, items);
    const auto adj = backbone::build_norm_adjacency(bundle);

    backbone::Config config;
    config.kind = backbone::Kind::kLightGcn;
    config.dim = 3;
    const auto table = backbone::init_embeddings(config, users, items, rng);
    const std::int64_t layers = 2;

    Graph g;
    const auto prop = backbone::propagate(g, table, adj, layers);

    // dense oracle
    const std::int64_t n = users + items, dim = config.dim;
    std::vector<double> a(n * n, 0.0);
    for (std::size_t e = 0; e < adj.mat->vals.size(); ++e) {
      a[adj.mat->row_idx[e] * n + adj.mat->col_idx[e]] = adj.mat->vals[e];
    }
    std::vector<double> cur(n * dim), acc(n * dim);
    for (std::int64_t u = 0; u < users; ++u)
      for (std::int64_t d = 0; d < dim; ++d) cur[u * dim + d] = table.user.at(u, d);
    for (std::int64_t i = 0; i < items; ++i)
      for (std::int64_t d = 0; d < dim; ++d) cur[(users + i) * dim + d] = table.item.at(i, d);
    acc = cur;
    for (std::int64_t l = 0; l < layers; ++l) {
      std::vector<double> next(n * dim, 0.0);
      for (std::int64_t r = 0; r < n; ++r)
        for (std::int64_t c = 0; c < n; ++c)
          for (std::int64_t d = 0; d < dim; ++d) next[r * dim + d] += a[r * n + c] * cur[c * dim + d];
      cur = next;
      for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += cur[j];
    }
    for (auto& v : acc) v /= static_cast<double>(layers + 1);
    for (std::int64_t j = 0; j < n * dim; ++j) {
      REQUIRE(std::abs(prop.nodes.values()[j] - acc[j]) < 1e-10);
    }
  }
}

TEST_CASE("gradients flow through two propagation layers") {
  Rng rng(3);
  const auto bundle = bundle_from_edges({{0, 0}, {0, 1}, {1, 1}}, 2, 2);
  const auto adj = backbone::build_norm_adjacency(bundle);
  backbone::Config config;
  config.kind = backbone::Kind::kLightGcn;
  config.dim = 3;
  auto table = backbone::init_embeddings(config, 2, 2, rng);
  const auto build = [&](Graph& g) {
    const auto prop = backbone::propagate(g, table, adj, 2);
    return g.sum(g.sigmoid(prop.nodes));
  };
  CHECK(testsupport::check_grads(table.user, build).max_rel < 1e-4);
  CHECK(testsupport::check_grads(table.item, build).max_rel < 1e-4);
}

TEST_CASE("lookup returns initialized rows and validates ranges") {
  backbone::Config config;
  config.dim = 4;
  Rng rng(1);
  const auto table = backbone::init_embeddings(config, 3, 2, rng);
  Graph g;
  const auto fwd = backbone::BackboneForward::make(g, table, config, nullptr);
  const auto [wu, wi] = backbone::lookup(g, fwd, 2, 1);
  for (std::int64_t d = 0; d < 4; ++d) {
    CHECK(wu.at(0, d) == table.user.at(2, d));
    CHECK(wi.at(0, d) == table.item.at(1, d));
  }
  CHECK_THROWS_WITH_AS(fwd.user_rows(g, {3}), doctest::Contains("out of range"),
                       std::runtime_error);
  CHECK_THROWS_WITH_AS(fwd.item_rows(g, {-1}), doctest::Contains("out of range"),
                       std::runtime_error);
}

TEST_CASE("lightgcn with zero layers gathers exactly the mf rows") {
  backbone::Config mf;
  mf.dim = 4;
  backbone::Config gcn = mf;
  gcn.kind = backbone::Kind::kLightGcn;
  gcn.layers = 0;

  Rng rng(9);
  const auto table = backbone::init_embeddings(mf, 3, 3, rng);
  const auto bundle = bundle_from_edges({{0, 0}, {1, 1}, {2, 2}, {0, 1}}, 3, 3);
  const auto adj = backbone::build_norm_adjacency(bundle);

  Graph g;
  const auto fmf = backbone::BackboneForward::make(g, table, mf, nullptr);
  const auto fgcn = backbone::BackboneForward::make(g, table, gcn, &adj);
  const auto a = fmf.item_rows(g, {0, 2, 1});
  const auto b = fgcn.item_rows(g, {0, 2, 1});
  for (std::int64_t j = 0; j < a.numel(); ++j) CHECK(a.values()[j] == b.values()[j]);
}
