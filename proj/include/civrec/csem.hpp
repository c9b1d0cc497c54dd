#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "civrec/diff.hpp"
#include "civrec/rng.hpp"

namespace civrec::csem {

// Raw log-variance outputs are clipped to this band before exponentiation.
inline constexpr double kLogVarClip = 10.0;

// One hidden layer, softplus activation. The smooth nonlinearity keeps
// finite-difference gradient checks meaningful everywhere.
struct Mlp {
  diff::Tensor w1, b1, w2, b2;

  static Mlp init(std::int64_t in, std::int64_t hidden, std::int64_t out, Rng& rng,
                  const std::string& name);
  diff::Tensor forward(diff::Graph& g, const diff::Tensor& x) const;  // B x in -> B x out
  void collect(std::vector<diff::Tensor>& out) const;
};

// Batched diagonal Gaussian: mean and logvar are both B x D.
struct GaussianDiag {
  diff::Tensor mean;
  diff::Tensor logvar;
};

// Per-side networks of the extraction module: two independent posterior
// encoders (instrument and conditioning set), the conditional prior network,
// and the decoder mapping (z_inst ++ z_cond) back to the entity embedding.
struct SideParams {
  Mlp enc_instrument;
  Mlp enc_condition;
  Mlp prior_condition;
  Mlp decoder;

  void collect(std::vector<diff::Tensor>& out) const;
};

struct Params {
  SideParams user;
  SideParams item;
  std::int64_t latent_dim = 0;  // equals the embedding dim
  std::int64_t hidden_dim = 0;

  static Params init(std::int64_t embed_dim, std::int64_t hidden_dim, Rng& rng);
  void collect(std::vector<diff::Tensor>& out) const;
};

GaussianDiag encode_instrument(diff::Graph& g, const diff::Tensor& x, const SideParams& side);
GaussianDiag encode_condition(diff::Graph& g, const diff::Tensor& x, const SideParams& side);
GaussianDiag condition_prior(diff::Graph& g, const diff::Tensor& x, const SideParams& side);

// Standard-normal noise tensor for reparameterized sampling.
diff::Tensor gaussian_eps(Rng& rng, std::int64_t batch, std::int64_t dim);

// z = mean + exp(logvar / 2) * eps, differentiable w.r.t. mean and logvar.
diff::Tensor sample(diff::Graph& g, const GaussianDiag& gauss, const diff::Tensor& eps);

diff::Tensor decode(diff::Graph& g, const diff::Tensor& z_instrument,
                    const diff::Tensor& z_condition, const SideParams& side);

// Unit-variance Gaussian likelihood: 0.5 * ||x - x_hat||^2 summed over the
// batch (the constant term is dropped).
diff::Tensor recon_nll(diff::Graph& g, const diff::Tensor& x, const diff::Tensor& x_hat);

// Closed-form KL divergences, summed over batch entities and dimensions.
// kl_standard(q) delegates to kl_gaussians against a zero-parameter prior so
// the two agree bit-for-bit.
diff::Tensor kl_standard(diff::Graph& g, const GaussianDiag& q);
diff::Tensor kl_gaussians(diff::Graph& g, const GaussianDiag& q, const GaussianDiag& p);

// Latents plus, optionally, this side's summed variational objective.
struct SideLatents {
  diff::Tensor z_instrument;
  diff::Tensor z_condition;
  diff::Tensor objective_sum;  // defined only when requested
};

SideLatents encode_side(diff::Graph& g, const diff::Tensor& x, const SideParams& side, Rng& rng,
                        bool with_objective);

// Negative ELBO averaged over batch entities of both sides:
// recon NLL + KL(q_inst || N(0,I)) + KL(q_cond || prior(x)).
diff::Tensor elbo_loss(diff::Graph& g, const diff::Tensor& user_x, const diff::Tensor& item_x,
                       const Params& params, Rng& rng);

}  // namespace civrec::csem
