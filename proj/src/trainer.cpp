#include "civrec/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

namespace civrec::trainer {

namespace {
[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }
}  // namespace

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kFull: return "full";
    case Variant::kCausalOnly: return "causal";
    case Variant::kConOnly: return "con";
    case Variant::kOriginal: return "original";
    case Variant::kIps: return "ips";
    case Variant::kIpsCapped: return "ipsc";
  }
  return "?";
}

Variant variant_from_string(const std::string& s) {
  if (s == "full") return Variant::kFull;
  if (s == "causal") return Variant::kCausalOnly;
  if (s == "con") return Variant::kConOnly;
  if (s == "original") return Variant::kOriginal;
  if (s == "ips") return Variant::kIps;
  if (s == "ipsc") return Variant::kIpsCapped;
  fail("variant: unknown '" + s + "' (expected full|causal|con|original|ips|ipsc)");
}

bool uses_extraction(Variant v) {
  return v == Variant::kFull || v == Variant::kCausalOnly || v == Variant::kConOnly;
}

void TrainConfig::validate() const {
  backbone.validate();
  decompose.validate();
  if (!(lr > 0.0)) fail("train config: lr must be > 0");
  if (batch_size < 1) fail("train config: batch size must be >= 1");
  if (epochs < 1) fail("train config: epochs must be >= 1");
  if (hidden_dim < 0) fail("train config: hidden dim must be >= 0");
  if (eval_every < 0) fail("train config: eval_every must be >= 0");
  if (variant == Variant::kIpsCapped && !(ips_cap > 0.0)) {
    fail("train config: ips cap must be > 0 for the capped variant");
  }
}

std::vector<diff::Tensor> ModelState::all_params() const {
  std::vector<diff::Tensor> out;
  out.push_back(table.user);
  out.push_back(table.item);
  csem.collect(out);
  return out;
}

std::vector<diff::Tensor> ModelState::trainable_params() const {
  if (!uses_extraction(variant)) return {table.user, table.item};
  return all_params();
}

ModelState init_model(const TrainConfig& config, const data::DatasetBundle& bundle) {
  config.validate();
  if (bundle.train.empty()) fail("init_model: bundle has no train positives");
  Rng rng(config.seed);
  ModelState state;
  state.backbone_cfg = config.backbone;
  state.decompose_cfg = config.decompose;
  state.variant = config.variant;
  state.seed = config.seed;
  state.user_count = bundle.user_count;
  state.item_count = bundle.item_count;
  state.table = backbone::init_embeddings(config.backbone, bundle.user_count, bundle.item_count, rng);
  state.csem = csem::Params::init(config.backbone.dim, config.hidden_dim, rng);
  if (config.backbone.kind == backbone::Kind::kLightGcn) {
    state.adjacency = backbone::build_norm_adjacency(bundle);
  }
  if (config.variant == Variant::kIps || config.variant == Variant::kIpsCapped) {
    state.item_weights =
        ips_item_weights(bundle, config.variant == Variant::kIpsCapped, config.ips_cap);
  }
  return state;
}

diff::Tensor bpr_from_scores(diff::Graph& g, const diff::Tensor& pos_scores,
                             const diff::Tensor& neg_scores) {
  // -ln sigmoid(pos - neg) == softplus(neg - pos), evaluated stably.
  return g.mean(g.softplus(g.sub(neg_scores, pos_scores)));
}

diff::Tensor bpr_loss(diff::Graph& g, const diff::Tensor& w_user, const diff::Tensor& w_pos,
                      const diff::Tensor& w_neg) {
  return bpr_from_scores(g, g.row_dot(w_user, w_pos), g.row_dot(w_user, w_neg));
}

diff::Tensor bpr_loss_weighted(diff::Graph& g, const diff::Tensor& w_user,
                               const diff::Tensor& w_pos, const diff::Tensor& w_neg,
                               const diff::Tensor& weights) {
  const diff::Tensor per_triple =
      g.softplus(g.sub(g.row_dot(w_user, w_neg), g.row_dot(w_user, w_pos)));
  return g.mean(g.mul(per_triple, weights));
}

std::vector<double> ips_item_weights(const data::DatasetBundle& bundle, bool capped, double cap) {
  const double n_train = static_cast<double>(bundle.train.size());
  std::vector<double> raw(bundle.popularity.size(), 0.0);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (bundle.popularity[i] > 0) {
      raw[i] = n_train / static_cast<double>(bundle.popularity[i]);
      if (capped) raw[i] = std::min(raw[i], cap);
    }
  }
  // Mean over train positives of the positive item's weight.
  double lo = 0.0, hi = 0.0;
  bool first = true;
  double sum = 0.0;
  for (const auto& [u, i] : bundle.train) {
    const double w = raw[static_cast<std::size_t>(i)];
    sum += w;
    if (first) {
      lo = hi = w;
      first = false;
    } else {
      lo = std::min(lo, w);
      hi = std::max(hi, w);
    }
  }
  if (lo == hi) {
    // Uniform popularity: normalization is the identity, exactly.
    for (auto& w : raw) {
      if (w != 0.0) w = 1.0;
    }
    return raw;
  }
  const double mean = sum / n_train;
  for (auto& w : raw) w /= mean;
  return raw;
}

TripleForward triple_forward(diff::Graph& g, const ModelState& state,
                             const std::vector<std::int64_t>& users,
                             const std::vector<std::int64_t>& pos_items,
                             const std::vector<std::int64_t>& neg_items, Rng& rng) {
  if (users.size() != pos_items.size() || users.size() != neg_items.size() || users.empty()) {
    fail("triple_forward: batch index vectors must be nonempty and equal-sized");
  }
  const backbone::NormAdjacency* adj = state.adjacency ? &*state.adjacency : nullptr;
  const auto fwd = backbone::BackboneForward::make(g, state.table, state.backbone_cfg, adj);
  const diff::Tensor wu = fwd.user_rows(g, users);
  const diff::Tensor wp = fwd.item_rows(g, pos_items);
  const diff::Tensor wn = fwd.item_rows(g, neg_items);

  TripleForward out;
  if (!uses_extraction(state.variant)) {
    out.w_user = wu;
    out.w_pos = wp;
    out.w_neg = wn;
    return out;
  }

  // The variational objective covers the positive-pair entities only; the
  // negative item passes through the encoders just to get its latents.
  const csem::SideLatents lu = csem::encode_side(g, wu, state.csem.user, rng, true);
  const csem::SideLatents lp = csem::encode_side(g, wp, state.csem.item, rng, true);
  const csem::SideLatents ln = csem::encode_side(g, wn, state.csem.item, rng, false);
  out.civ_sum = g.add(lu.objective_sum, lp.objective_sum);
  out.has_civ = true;

  const double eps = state.decompose_cfg.epsilon;
  switch (state.variant) {
    case Variant::kFull:
      out.w_user = decompose::reconstruct_rows(g, wu, lu.z_instrument, lu.z_condition,
                                               state.decompose_cfg);
      out.w_pos = decompose::reconstruct_rows(g, wp, lp.z_instrument, lp.z_condition,
                                              state.decompose_cfg);
      out.w_neg = decompose::reconstruct_rows(g, wn, ln.z_instrument, ln.z_condition,
                                              state.decompose_cfg);
      break;
    case Variant::kCausalOnly:
      out.w_user = decompose::project_rows(g, lu.z_instrument, wu, eps);
      out.w_pos = decompose::project_rows(g, lp.z_instrument, wp, eps);
      out.w_neg = decompose::project_rows(g, ln.z_instrument, wn, eps);
      break;
    case Variant::kConOnly:
      out.w_user = lu.z_condition;
      out.w_pos = lp.z_condition;
      out.w_neg = ln.z_condition;
      break;
    default:
      fail("triple_forward: unreachable variant");
  }
  return out;
}

TrainResult train(const TrainConfig& config, const data::DatasetBundle& bundle,
                  const ReportHook& on_report, const EvalHook& on_eval) {
  config.validate();
  TrainResult result;
  result.state = init_model(config, bundle);
  ModelState& state = result.state;

  auto trainable = state.trainable_params();
  result.adam = diff::AdamState(trainable);
  Rng rng(config.seed + 0x9e3779b97f4a7c15ull);  // decoupled from init draws

  const std::int64_t n = static_cast<std::int64_t>(bundle.train.size());
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

  const bool weighted =
      state.variant == Variant::kIps || state.variant == Variant::kIpsCapped;

  for (std::int64_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    rng.shuffle(order);
    double civ_acc = 0.0, click_acc = 0.0;
    std::int64_t seen = 0;

    for (std::int64_t start = 0; start < n; start += config.batch_size) {
      const std::int64_t stop = std::min(n, start + config.batch_size);
      const std::int64_t bs = stop - start;
      std::vector<std::int64_t> users, pos, neg;
      users.reserve(bs);
      pos.reserve(bs);
      neg.reserve(bs);
      for (std::int64_t i = start; i < stop; ++i) {
        const auto& [u, p] = bundle.train[static_cast<std::size_t>(order[i])];
        users.push_back(u);
        pos.push_back(p);
        neg.push_back(data::sample_negative(u, rng, bundle));
      }
      const std::int64_t batch_no = start / config.batch_size;
      try {
        diff::Graph g;
        const TripleForward fw = triple_forward(g, state, users, pos, neg, rng);
        diff::Tensor l_click;
        if (weighted) {
          auto w = diff::Tensor::zeros({bs, 1});
          auto wv = w.values_mut();
          for (std::int64_t i = 0; i < bs; ++i) {
            wv[i] = state.item_weights[static_cast<std::size_t>(pos[static_cast<std::size_t>(i)])];
          }
          l_click = bpr_loss_weighted(g, fw.w_user, fw.w_pos, fw.w_neg, w);
        } else {
          l_click = bpr_loss(g, fw.w_user, fw.w_pos, fw.w_neg);
        }
        diff::Tensor l_total = l_click;
        diff::Tensor l_civ;
        if (fw.has_civ) {
          l_civ = g.scale(fw.civ_sum, 1.0 / (2.0 * static_cast<double>(bs)));
          l_total = g.add(l_civ, l_click);
        }
        if (!std::isfinite(l_total.item())) fail("non-finite loss");
        g.backward(l_total);
        result.adam.step(trainable, config.lr);
        for (auto& p : trainable) p.zero_grad();

        civ_acc += (fw.has_civ ? l_civ.item() : 0.0) * static_cast<double>(bs);
        click_acc += l_click.item() * static_cast<double>(bs);
        seen += bs;
      } catch (const std::exception& e) {
        fail("train: aborted at epoch " + std::to_string(epoch) + ", batch " +
             std::to_string(batch_no) + ": " + e.what());
      }
    }

    LossReport report;
    report.epoch = epoch;
    report.l_civ = civ_acc / static_cast<double>(seen);
    report.l_click = click_acc / static_cast<double>(seen);
    report.l_total = report.l_civ + report.l_click;
    report.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (on_report) on_report(report);
    result.reports.push_back(report);

    if (config.eval_every > 0 && epoch % config.eval_every == 0 && on_eval) {
      on_eval(epoch, state);
    }
  }
  return result;
}

}  // namespace civrec::trainer
