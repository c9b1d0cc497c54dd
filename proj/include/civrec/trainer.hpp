#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "civrec/backbone.hpp"
#include "civrec/csem.hpp"
#include "civrec/data.hpp"
#include "civrec/decompose.hpp"
#include "civrec/diff.hpp"

namespace civrec::trainer {

enum class Variant : std::uint8_t {
  kFull = 0,
  kCausalOnly = 1,
  kConOnly = 2,
  kOriginal = 3,
  kIps = 4,
  kIpsCapped = 5,
};

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);
bool uses_extraction(Variant v);

struct TrainConfig {
  backbone::Config backbone;
  std::int64_t hidden_dim = 0;  // 0 -> 2 * embedding dim
  decompose::Config decompose;
  Variant variant = Variant::kFull;
  double lr = 0.001;
  std::int64_t batch_size = 128;
  std::int64_t epochs = 10;
  std::uint64_t seed = 0;
  double ips_cap = 10.0;       // used only for the capped IPS variant
  std::int64_t eval_every = 0;  // 0 disables the validation hook

  void validate() const;
};

struct LossReport {
  std::int64_t epoch = 0;
  double l_civ = 0.0;
  double l_click = 0.0;
  double l_total = 0.0;
  double seconds = 0.0;
};

struct ModelState {
  backbone::Config backbone_cfg;
  backbone::EmbeddingTable table;
  std::optional<backbone::NormAdjacency> adjacency;
  csem::Params csem;
  decompose::Config decompose_cfg;
  Variant variant = Variant::kFull;
  std::uint64_t seed = 0;
  std::int64_t user_count = 0;
  std::int64_t item_count = 0;
  std::vector<double> item_weights;  // per-item IPS weights; empty otherwise

  // Fixed registry order shared by the optimizer and checkpoints.
  std::vector<diff::Tensor> all_params() const;
  // Backbone only for the baseline variants; everything otherwise.
  std::vector<diff::Tensor> trainable_params() const;
};

ModelState init_model(const TrainConfig& config, const data::DatasetBundle& bundle);

// Mean over the batch of -ln sigma(<u,p> - <u,n>). Inputs are B x D rows.
diff::Tensor bpr_loss(diff::Graph& g, const diff::Tensor& w_user, const diff::Tensor& w_pos,
                      const diff::Tensor& w_neg);
// Positive-item weights multiply the per-triple loss before averaging.
diff::Tensor bpr_loss_weighted(diff::Graph& g, const diff::Tensor& w_user,
                               const diff::Tensor& w_pos, const diff::Tensor& w_neg,
                               const diff::Tensor& weights);
// Score-level form; bpr_loss reduces to this after the two inner products.
diff::Tensor bpr_from_scores(diff::Graph& g, const diff::Tensor& pos_scores,
                             const diff::Tensor& neg_scores);

// Inverse-popularity weights, mean-normalized to 1 over the train positives.
// The capped variant clips raw weights at `cap` before normalization.
std::vector<double> ips_item_weights(const data::DatasetBundle& bundle, bool capped, double cap);

struct TripleForward {
  diff::Tensor w_user, w_pos, w_neg;  // reconstructed rows per variant
  diff::Tensor civ_sum;               // summed variational objective; undefined for baselines
  bool has_civ = false;
};

TripleForward triple_forward(diff::Graph& g, const ModelState& state,
                             const std::vector<std::int64_t>& users,
                             const std::vector<std::int64_t>& pos_items,
                             const std::vector<std::int64_t>& neg_items, Rng& rng);

struct TrainResult {
  ModelState state;
  diff::AdamState adam;
  std::vector<LossReport> reports;
};

using ReportHook = std::function<void(const LossReport&)>;
using EvalHook = std::function<void(std::int64_t epoch, const ModelState&)>;

// Seeded epoch loop: shuffle train positives, one fresh uniform negative per
// positive, batched joint update of backbone and extraction parameters.
// Aborts with the epoch/batch location if the loss turns non-finite.
TrainResult train(const TrainConfig& config, const data::DatasetBundle& bundle,
                  const ReportHook& on_report = {}, const EvalHook& on_eval = {});

}  // namespace civrec::trainer
