#include "civrec/backbone.hpp"

#include <cmath>
#include <stdexcept>

namespace civrec::backbone {

namespace {
[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }
}  // namespace

std::string to_string(Kind kind) { return kind == Kind::kMf ? "mf" : "lightgcn"; }

Kind kind_from_string(const std::string& s) {
  if (s == "mf") return Kind::kMf;
  if (s == "lightgcn") return Kind::kLightGcn;
  fail("backbone: unknown kind '" + s + "' (expected mf|lightgcn)");
}

void Config::validate() const {
  if (dim < 2) fail("backbone: dim must be >= 2");
  if (layers < 0) fail("backbone: layers must be >= 0");
  if (!(init_std > 0.0)) fail("backbone: init_std must be > 0");
}

EmbeddingTable init_embeddings(const Config& config, std::int64_t user_count,
                               std::int64_t item_count, Rng& rng) {
  config.validate();
  if (user_count <= 0 || item_count <= 0) fail("init_embeddings: counts must be positive");
  EmbeddingTable table;
  table.user = diff::Tensor::randn({user_count, config.dim}, rng, config.init_std, true)
                   .set_name("backbone.user");
  table.item = diff::Tensor::randn({item_count, config.dim}, rng, config.init_std, true)
                   .set_name("backbone.item");
  return table;
}

NormAdjacency build_norm_adjacency(const data::DatasetBundle& bundle) {
  if (bundle.train.empty()) fail("build_norm_adjacency: no train positives");
  const std::int64_t nu = bundle.user_count, ni = bundle.item_count;
  std::vector<std::int64_t> user_deg(static_cast<std::size_t>(nu), 0);
  std::vector<std::int64_t> item_deg(static_cast<std::size_t>(ni), 0);
  for (const auto& [u, i] : bundle.train) {
    ++user_deg[static_cast<std::size_t>(u)];
    ++item_deg[static_cast<std::size_t>(i)];
  }
  auto mat = std::make_shared<diff::SparseMatrix>();
  mat->rows = mat->cols = nu + ni;
  mat->row_idx.reserve(2 * bundle.train.size());
  mat->col_idx.reserve(2 * bundle.train.size());
  mat->vals.reserve(2 * bundle.train.size());
  for (const auto& [u, i] : bundle.train) {
    const double w = 1.0 / std::sqrt(static_cast<double>(user_deg[u]) *
                                     static_cast<double>(item_deg[i]));
    mat->row_idx.push_back(u);
    mat->col_idx.push_back(nu + i);
    mat->vals.push_back(w);
    mat->row_idx.push_back(nu + i);
    mat->col_idx.push_back(u);
    mat->vals.push_back(w);
  }
  return {std::move(mat), nu, ni};
}

Propagated propagate(diff::Graph& g, const EmbeddingTable& table, const NormAdjacency& adj,
                     std::int64_t layers) {
  diff::Tensor nodes = g.concat_rows(table.user, table.item);
  if (layers > 0) {
    diff::Tensor acc = nodes;
    diff::Tensor cur = nodes;
    for (std::int64_t l = 0; l < layers; ++l) {
      cur = g.spmm(adj.mat, cur);
      acc = g.add(acc, cur);
    }
    nodes = g.scale(acc, 1.0 / static_cast<double>(layers + 1));
  }
  return {nodes, adj.user_count};
}

BackboneForward BackboneForward::make(diff::Graph& g, const EmbeddingTable& table,
                                      const Config& config, const NormAdjacency* adj) {
  BackboneForward fwd;
  fwd.user_count_ = table.user.rows();
  fwd.item_count_ = table.item.rows();
  if (config.kind == Kind::kLightGcn) {
    if (adj == nullptr) fail("backbone: lightgcn requires the train adjacency");
    fwd.combined_ = propagate(g, table, *adj, config.layers).nodes;
    fwd.use_combined_ = true;
  } else {
    fwd.user_src_ = table.user;
    fwd.item_src_ = table.item;
  }
  return fwd;
}

diff::Tensor BackboneForward::user_rows(diff::Graph& g,
                                        const std::vector<std::int64_t>& users) const {
  for (auto u : users) {
    if (u < 0 || u >= user_count_) {
      fail("lookup: user index " + std::to_string(u) + " out of range [0," +
           std::to_string(user_count_) + ")");
    }
  }
  return g.row_gather(use_combined_ ? combined_ : user_src_, users);
}

diff::Tensor BackboneForward::item_rows(diff::Graph& g,
                                        const std::vector<std::int64_t>& items) const {
  std::vector<std::int64_t> rows;
  rows.reserve(items.size());
  for (auto i : items) {
    if (i < 0 || i >= item_count_) {
      fail("lookup: item index " + std::to_string(i) + " out of range [0," +
           std::to_string(item_count_) + ")");
    }
    rows.push_back(use_combined_ ? user_count_ + i : i);
  }
  return g.row_gather(use_combined_ ? combined_ : item_src_, rows);
}

std::pair<diff::Tensor, diff::Tensor> lookup(diff::Graph& g, const BackboneForward& fwd,
                                             std::int64_t user, std::int64_t item) {
  return {fwd.user_rows(g, {user}), fwd.item_rows(g, {item})};
}

}  // namespace civrec::backbone
