#pragma once

#include "civrec/diff.hpp"

namespace civrec::decompose {

struct Config {
  double alpha = 0.85;
  double epsilon = 1e-8;  // degenerate-instrument guard on ||z||

  void validate() const;
};

// Orthogonal projection of w onto span(z): the vector-case closed-form
// least-squares solution w_hat = z * (z.w / ||z||^2). Differentiable in both
// inputs; rejects ||z|| < epsilon. 1-D tensors.
diff::Tensor project(diff::Graph& g, const diff::Tensor& z, const diff::Tensor& w, double epsilon);

// Row-wise projection for batched entities (B x D).
diff::Tensor project_rows(diff::Graph& g, const diff::Tensor& z, const diff::Tensor& w,
                          double epsilon);

// alpha * w_hat + (1 - alpha) * z_condition, elementwise.
diff::Tensor fuse(diff::Graph& g, const diff::Tensor& w_hat, const diff::Tensor& z_condition,
                  const Config& config);

// fuse(project(z_inst, w), z_cond): one entity or one batch row each.
diff::Tensor reconstruct(diff::Graph& g, const diff::Tensor& w, const diff::Tensor& z_instrument,
                         const diff::Tensor& z_condition, const Config& config);
diff::Tensor reconstruct_rows(diff::Graph& g, const diff::Tensor& w,
                              const diff::Tensor& z_instrument, const diff::Tensor& z_condition,
                              const Config& config);

}  // namespace civrec::decompose
