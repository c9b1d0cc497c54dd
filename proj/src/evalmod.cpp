#include "civrec/evalmod.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "civrec/decompose.hpp"

namespace civrec::evalmod {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

// Reconstructed rows for one side, sampling replaced by posterior means.
std::vector<double> side_eval_rows(const trainer::ModelState& state, const diff::Tensor& x,
                                   const csem::SideParams& side) {
  diff::Graph g(/*recording=*/false);
  if (!uses_extraction(state.variant)) {
    return {x.values().begin(), x.values().end()};
  }
  const csem::GaussianDiag q_inst = csem::encode_instrument(g, x, side);
  const csem::GaussianDiag q_cond = csem::encode_condition(g, x, side);
  diff::Tensor out;
  switch (state.variant) {
    case trainer::Variant::kFull:
      out = decompose::reconstruct_rows(g, x, q_inst.mean, q_cond.mean, state.decompose_cfg);
      break;
    case trainer::Variant::kCausalOnly:
      out = decompose::project_rows(g, q_inst.mean, x, state.decompose_cfg.epsilon);
      break;
    case trainer::Variant::kConOnly:
      out = q_cond.mean;
      break;
    default:
      fail("evaluate: unreachable variant");
  }
  return {out.values().begin(), out.values().end()};
}

}  // namespace

EvalEmbeddings compute_eval_embeddings(const trainer::ModelState& state) {
  diff::Graph g(/*recording=*/false);
  const std::int64_t nu = state.user_count, ni = state.item_count;
  const backbone::NormAdjacency* adj = state.adjacency ? &*state.adjacency : nullptr;
  const auto fwd = backbone::BackboneForward::make(g, state.table, state.backbone_cfg, adj);

  std::vector<std::int64_t> all_users(static_cast<std::size_t>(nu));
  for (std::int64_t u = 0; u < nu; ++u) all_users[static_cast<std::size_t>(u)] = u;
  std::vector<std::int64_t> all_items(static_cast<std::size_t>(ni));
  for (std::int64_t i = 0; i < ni; ++i) all_items[static_cast<std::size_t>(i)] = i;

  const diff::Tensor xu = fwd.user_rows(g, all_users);
  const diff::Tensor xi = fwd.item_rows(g, all_items);

  EvalEmbeddings emb;
  emb.user_count = nu;
  emb.item_count = ni;
  emb.dim = state.backbone_cfg.dim;
  emb.user_re = side_eval_rows(state, xu, state.csem.user);
  emb.item_re = side_eval_rows(state, xi, state.csem.item);
  return emb;
}

std::vector<std::int64_t> rank_topk(const EvalEmbeddings& emb, std::int64_t user, std::int64_t k,
                                    const data::DatasetBundle& bundle) {
  if (user < 0 || user >= emb.user_count) fail("rank_topk: user out of range");
  const auto& excluded = bundle.train_items(user);
  const std::int64_t candidates = emb.item_count - static_cast<std::int64_t>(excluded.size());
  if (k > candidates) {
    fail("rank_topk: k=" + std::to_string(k) + " exceeds " + std::to_string(candidates) +
         " candidates for user " + std::to_string(user));
  }
  const double* urow = emb.user_re.data() + user * emb.dim;
  std::vector<std::pair<double, std::int64_t>> scored;
  scored.reserve(static_cast<std::size_t>(candidates));
  for (std::int64_t i = 0; i < emb.item_count; ++i) {
    if (std::binary_search(excluded.begin(), excluded.end(), i)) continue;
    const double* irow = emb.item_re.data() + i * emb.dim;
    double s = 0.0;
    for (std::int64_t d = 0; d < emb.dim; ++d) s += urow[d] * irow[d];
    scored.emplace_back(s, i);
  }
  const auto by_rank = [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  };
  std::partial_sort(scored.begin(), scored.begin() + k, scored.end(), by_rank);
  std::vector<std::int64_t> out;
  out.reserve(static_cast<std::size_t>(k));
  for (std::int64_t r = 0; r < k; ++r) out.push_back(scored[static_cast<std::size_t>(r)].second);
  return out;
}

double recall_at_k(const std::vector<std::int64_t>& topk,
                   const std::unordered_set<std::int64_t>& relevant) {
  if (relevant.empty()) fail("recall_at_k: empty relevant set");
  std::int64_t hits = 0;
  for (auto i : topk) hits += relevant.count(i) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

double hr_at_k(const std::vector<std::int64_t>& topk,
               const std::unordered_set<std::int64_t>& relevant) {
  if (relevant.empty()) fail("hr_at_k: empty relevant set");
  for (auto i : topk) {
    if (relevant.count(i)) return 1.0;
  }
  return 0.0;
}

double ndcg_at_k(const std::vector<std::int64_t>& topk,
                 const std::unordered_set<std::int64_t>& relevant, std::int64_t k) {
  if (relevant.empty()) fail("ndcg_at_k: empty relevant set");
  double dcg = 0.0;
  for (std::size_t r = 0; r < topk.size(); ++r) {
    if (relevant.count(topk[r])) {
      dcg += 1.0 / std::log2(static_cast<double>(r + 2));
    }
  }
  const std::int64_t ideal = std::min<std::int64_t>(k, static_cast<std::int64_t>(relevant.size()));
  double idcg = 0.0;
  for (std::int64_t r = 1; r <= ideal; ++r) {
    idcg += 1.0 / std::log2(static_cast<double>(r + 1));
  }
  return dcg / idcg;
}

double iou_at_k(const std::vector<std::int64_t>& topk, const std::vector<std::int64_t>& popular) {
  if (topk.empty() || popular.empty()) fail("iou_at_k: empty input set");
  std::unordered_set<std::int64_t> pop(popular.begin(), popular.end());
  std::int64_t inter = 0;
  for (auto i : topk) inter += pop.count(i) ? 1 : 0;
  const std::int64_t uni =
      static_cast<std::int64_t>(topk.size()) + static_cast<std::int64_t>(pop.size()) - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<MetricReport> evaluate(const trainer::ModelState& state,
                                   const data::DatasetBundle& bundle, Split split,
                                   const std::vector<std::int64_t>& ks) {
  const std::vector<data::Pair>& pairs = split == Split::kVal ? bundle.val : bundle.test;
  if (pairs.empty()) fail("evaluate: split is empty");

  std::vector<std::unordered_set<std::int64_t>> relevant(
      static_cast<std::size_t>(bundle.user_count));
  for (const auto& [u, i] : pairs) relevant[static_cast<std::size_t>(u)].insert(i);

  const EvalEmbeddings emb = compute_eval_embeddings(state);

  std::vector<MetricReport> out;
  for (const auto k : ks) {
    const auto popular = data::popular_set(bundle, std::min(k, bundle.item_count));
    MetricReport rep;
    rep.k = k;
    double recall = 0.0, hr = 0.0, ndcg = 0.0, iou = 0.0;
    std::int64_t users = 0;
    for (std::int64_t u = 0; u < bundle.user_count; ++u) {
      const auto& rel = relevant[static_cast<std::size_t>(u)];
      if (rel.empty()) continue;  // spec: users without relevant items are skipped
      const std::int64_t candidates =
          bundle.item_count - static_cast<std::int64_t>(bundle.train_items(u).size());
      if (candidates < k) continue;
      const auto topk = rank_topk(emb, u, k, bundle);
      recall += recall_at_k(topk, rel);
      hr += hr_at_k(topk, rel);
      ndcg += ndcg_at_k(topk, rel, k);
      iou += iou_at_k(topk, popular);
      ++users;
    }
    if (users > 0) {
      rep.recall = recall / static_cast<double>(users);
      rep.hr = hr / static_cast<double>(users);
      rep.ndcg = ndcg / static_cast<double>(users);
      rep.iou = iou / static_cast<double>(users);
    }
    rep.users = users;
    out.push_back(rep);
  }
  return out;
}

}  // namespace civrec::evalmod
