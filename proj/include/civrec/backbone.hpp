#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "civrec/data.hpp"
#include "civrec/diff.hpp"
#include "civrec/rng.hpp"

namespace civrec::backbone {

enum class Kind : std::uint8_t { kMf = 0, kLightGcn = 1 };

std::string to_string(Kind kind);
Kind kind_from_string(const std::string& s);

struct Config {
  Kind kind = Kind::kMf;
  std::int64_t dim = 128;
  std::int64_t layers = 2;  // used only when kind == kLightGcn
  double init_std = 0.1;

  void validate() const;
};

struct EmbeddingTable {
  diff::Tensor user;  // user_count x dim
  diff::Tensor item;  // item_count x dim
};

// Entries i.i.d. normal(0, init_std^2); deterministic given the rng state.
EmbeddingTable init_embeddings(const Config& config, std::int64_t user_count,
                               std::int64_t item_count, Rng& rng);

// Symmetric normalization D^{-1/2} A D^{-1/2} of the bipartite train graph
// over user+item nodes. No self loops; isolated nodes yield zero rows.
struct NormAdjacency {
  std::shared_ptr<const diff::SparseMatrix> mat;
  std::int64_t user_count = 0;
  std::int64_t item_count = 0;
};

NormAdjacency build_norm_adjacency(const data::DatasetBundle& bundle);

// Mean of propagation layers E^0 .. E^L over the combined (user+item) node
// matrix; differentiable back to the tables. Row u is user u, row
// user_count + i is item i.
struct Propagated {
  diff::Tensor nodes;
  std::int64_t user_count = 0;
};

Propagated propagate(diff::Graph& g, const EmbeddingTable& table, const NormAdjacency& adj,
                     std::int64_t layers);

// Per-batch differentiable access to entity embeddings: raw table rows for
// MF, propagated rows for LightGCN.
class BackboneForward {
 public:
  static BackboneForward make(diff::Graph& g, const EmbeddingTable& table, const Config& config,
                              const NormAdjacency* adj);

  diff::Tensor user_rows(diff::Graph& g, const std::vector<std::int64_t>& users) const;
  diff::Tensor item_rows(diff::Graph& g, const std::vector<std::int64_t>& items) const;

 private:
  diff::Tensor user_src_, item_src_, combined_;
  bool use_combined_ = false;
  std::int64_t user_count_ = 0, item_count_ = 0;
};

// (w_u, w_i) rows for a single pair; out-of-range indices are rejected.
std::pair<diff::Tensor, diff::Tensor> lookup(diff::Graph& g, const BackboneForward& fwd,
                                             std::int64_t user, std::int64_t item);

}  // namespace civrec::backbone
