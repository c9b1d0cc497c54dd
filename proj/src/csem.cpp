#include "civrec/csem.hpp"

#include <cmath>
#include <stdexcept>

namespace civrec::csem {

namespace {
[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }
}  // namespace

Mlp Mlp::init(std::int64_t in, std::int64_t hidden, std::int64_t out, Rng& rng,
              const std::string& name) {
  Mlp mlp;
  mlp.w1 = diff::Tensor::randn({in, hidden}, rng, 1.0 / std::sqrt(static_cast<double>(in)), true)
               .set_name(name + ".w1");
  mlp.b1 = diff::Tensor::zeros({1, hidden}, true).set_name(name + ".b1");
  mlp.w2 =
      diff::Tensor::randn({hidden, out}, rng, 1.0 / std::sqrt(static_cast<double>(hidden)), true)
          .set_name(name + ".w2");
  mlp.b2 = diff::Tensor::zeros({1, out}, true).set_name(name + ".b2");
  return mlp;
}

diff::Tensor Mlp::forward(diff::Graph& g, const diff::Tensor& x) const {
  const diff::Tensor h = g.softplus(g.add(g.matmul(x, w1), b1));
  return g.add(g.matmul(h, w2), b2);
}

void Mlp::collect(std::vector<diff::Tensor>& out) const {
  out.push_back(w1);
  out.push_back(b1);
  out.push_back(w2);
  out.push_back(b2);
}

void SideParams::collect(std::vector<diff::Tensor>& out) const {
  enc_instrument.collect(out);
  enc_condition.collect(out);
  prior_condition.collect(out);
  decoder.collect(out);
}

Params Params::init(std::int64_t embed_dim, std::int64_t hidden_dim, Rng& rng) {
  if (embed_dim < 2) fail("csem: embedding dim must be >= 2");
  if (hidden_dim <= 0) hidden_dim = 2 * embed_dim;
  Params p;
  p.latent_dim = embed_dim;
  p.hidden_dim = hidden_dim;
  auto side = [&](const std::string& prefix) {
    SideParams s;
    s.enc_instrument = Mlp::init(embed_dim, hidden_dim, 2 * embed_dim, rng, prefix + ".enc_inst");
    s.enc_condition = Mlp::init(embed_dim, hidden_dim, 2 * embed_dim, rng, prefix + ".enc_cond");
    s.prior_condition =
        Mlp::init(embed_dim, hidden_dim, 2 * embed_dim, rng, prefix + ".prior_cond");
    s.decoder = Mlp::init(2 * embed_dim, hidden_dim, embed_dim, rng, prefix + ".decoder");
    return s;
  };
  p.user = side("csem.user");
  p.item = side("csem.item");
  return p;
}

void Params::collect(std::vector<diff::Tensor>& out) const {
  user.collect(out);
  item.collect(out);
}

namespace {

GaussianDiag gaussian_head(diff::Graph& g, const diff::Tensor& x, const Mlp& net) {
  const std::int64_t latent = net.w2.cols() / 2;
  const diff::Tensor raw = net.forward(g, x);
  auto [mean, logvar_raw] = g.split_cols(raw, latent);
  return {mean, g.clip(logvar_raw, -kLogVarClip, kLogVarClip)};
}

}  // namespace

GaussianDiag encode_instrument(diff::Graph& g, const diff::Tensor& x, const SideParams& side) {
  return gaussian_head(g, x, side.enc_instrument);
}

GaussianDiag encode_condition(diff::Graph& g, const diff::Tensor& x, const SideParams& side) {
  return gaussian_head(g, x, side.enc_condition);
}

GaussianDiag condition_prior(diff::Graph& g, const diff::Tensor& x, const SideParams& side) {
  return gaussian_head(g, x, side.prior_condition);
}

diff::Tensor gaussian_eps(Rng& rng, std::int64_t batch, std::int64_t dim) {
  return diff::Tensor::randn({batch, dim}, rng);
}

diff::Tensor sample(diff::Graph& g, const GaussianDiag& gauss, const diff::Tensor& eps) {
  const diff::Tensor std = g.exp(g.scale(gauss.logvar, 0.5));
  return g.add(gauss.mean, g.mul(std, eps));
}

diff::Tensor decode(diff::Graph& g, const diff::Tensor& z_instrument,
                    const diff::Tensor& z_condition, const SideParams& side) {
  return side.decoder.forward(g, g.concat_cols(z_instrument, z_condition));
}

diff::Tensor recon_nll(diff::Graph& g, const diff::Tensor& x, const diff::Tensor& x_hat) {
  const diff::Tensor d = g.sub(x, x_hat);
  return g.scale(g.sum(g.mul(d, d)), 0.5);
}

diff::Tensor kl_gaussians(diff::Graph& g, const GaussianDiag& q, const GaussianDiag& p) {
  if (q.mean.shape() != p.mean.shape()) {
    fail("kl_gaussians: dim mismatch (" + diff::shape_str(q.mean.shape()) + " vs " +
         diff::shape_str(p.mean.shape()) + ")");
  }
  // 0.5 * sum[ (lv_p - lv_q) + (exp(lv_q) + (mu_q - mu_p)^2) * exp(-lv_p) - 1 ]
  const diff::Tensor dmu = g.sub(q.mean, p.mean);
  const diff::Tensor ratio =
      g.mul(g.add(g.exp(q.logvar), g.mul(dmu, dmu)), g.exp(g.scale(p.logvar, -1.0)));
  const diff::Tensor ones = diff::Tensor::full(q.mean.shape(), 1.0);
  const diff::Tensor terms = g.sub(g.add(g.sub(p.logvar, q.logvar), ratio), ones);
  return g.scale(g.sum(terms), 0.5);
}

diff::Tensor kl_standard(diff::Graph& g, const GaussianDiag& q) {
  const GaussianDiag standard{diff::Tensor::zeros(q.mean.shape()),
                              diff::Tensor::zeros(q.logvar.shape())};
  return kl_gaussians(g, q, standard);
}

SideLatents encode_side(diff::Graph& g, const diff::Tensor& x, const SideParams& side, Rng& rng,
                        bool with_objective) {
  const std::int64_t batch = x.rows();
  const std::int64_t dim = x.cols();
  const GaussianDiag q_inst = encode_instrument(g, x, side);
  const GaussianDiag q_cond = encode_condition(g, x, side);
  SideLatents out;
  out.z_instrument = sample(g, q_inst, gaussian_eps(rng, batch, dim));
  out.z_condition = sample(g, q_cond, gaussian_eps(rng, batch, dim));
  if (with_objective) {
    const GaussianDiag prior = condition_prior(g, x, side);
    const diff::Tensor x_hat = decode(g, out.z_instrument, out.z_condition, side);
    const diff::Tensor obj =
        g.add(g.add(recon_nll(g, x, x_hat), kl_standard(g, q_inst)), kl_gaussians(g, q_cond, prior));
    out.objective_sum = obj;
  }
  return out;
}

diff::Tensor elbo_loss(diff::Graph& g, const diff::Tensor& user_x, const diff::Tensor& item_x,
                       const Params& params, Rng& rng) {
  if (user_x.rows() != item_x.rows()) fail("elbo_loss: user/item batch size mismatch");
  if (user_x.rows() == 0) fail("elbo_loss: empty batch");
  const SideLatents us = encode_side(g, user_x, params.user, rng, true);
  const SideLatents is = encode_side(g, item_x, params.item, rng, true);
  const double denom = 2.0 * static_cast<double>(user_x.rows());
  return g.scale(g.add(us.objective_sum, is.objective_sum), 1.0 / denom);
}

}  // namespace civrec::csem
