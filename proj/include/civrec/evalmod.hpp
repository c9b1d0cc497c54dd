#pragma once

#include <cstdint>
#include <unordered_set>
#include <vector>

#include "civrec/data.hpp"
#include "civrec/trainer.hpp"

namespace civrec::evalmod {

enum class Split : std::uint8_t { kVal = 0, kTest = 1 };

struct MetricReport {
  std::int64_t k = 0;
  double recall = 0.0;
  double hr = 0.0;
  double ndcg = 0.0;
  double iou = 0.0;
  std::int64_t users = 0;  // users actually evaluated
};

// Deterministic scoring rows for every user and item under the active
// variant. Sampling is replaced by the posterior means, so evaluation of a
// fixed state is reproducible.
struct EvalEmbeddings {
  std::int64_t user_count = 0;
  std::int64_t item_count = 0;
  std::int64_t dim = 0;
  std::vector<double> user_re;  // user_count x dim
  std::vector<double> item_re;  // item_count x dim
};

EvalEmbeddings compute_eval_embeddings(const trainer::ModelState& state);

// Scores every item by the inner product of reconstructed rows, excludes the
// user's train positives, returns the top K (ties broken by lower index).
std::vector<std::int64_t> rank_topk(const EvalEmbeddings& emb, std::int64_t user, std::int64_t k,
                                    const data::DatasetBundle& bundle);

double recall_at_k(const std::vector<std::int64_t>& topk,
                   const std::unordered_set<std::int64_t>& relevant);
double hr_at_k(const std::vector<std::int64_t>& topk,
               const std::unordered_set<std::int64_t>& relevant);
double ndcg_at_k(const std::vector<std::int64_t>& topk,
                 const std::unordered_set<std::int64_t>& relevant, std::int64_t k);
double iou_at_k(const std::vector<std::int64_t>& topk, const std::vector<std::int64_t>& popular);

// Per-user metrics averaged over users with at least one relevant item in
// the split (users with fewer than K candidates are skipped as well).
std::vector<MetricReport> evaluate(const trainer::ModelState& state,
                                   const data::DatasetBundle& bundle, Split split,
                                   const std::vector<std::int64_t>& ks = {20, 50});

}  // namespace civrec::evalmod
