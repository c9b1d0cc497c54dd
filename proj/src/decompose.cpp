#include "civrec/decompose.hpp"

#include <cmath>
#include <stdexcept>

namespace civrec::decompose {

namespace {
[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }
}  // namespace

void Config::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) fail("decompose: alpha must lie in [0,1]");
  if (!(epsilon > 0.0 && epsilon <= 1e-4)) fail("decompose: epsilon must lie in (0, 1e-4]");
}

diff::Tensor project(diff::Graph& g, const diff::Tensor& z, const diff::Tensor& w,
                     double epsilon) {
  if (z.shape().size() != 1 || z.shape() != w.shape()) {
    fail("project: dim mismatch (" + diff::shape_str(z.shape()) + " vs " +
         diff::shape_str(w.shape()) + ")");
  }
  const diff::Tensor zz = g.dot(z, z);
  if (zz.item() < epsilon * epsilon) fail("project: degenerate instrument (||z|| < epsilon)");
  const diff::Tensor coeff = g.div(g.dot(z, w), zz);
  return g.mul(z, coeff);
}

diff::Tensor project_rows(diff::Graph& g, const diff::Tensor& z, const diff::Tensor& w,
                          double epsilon) {
  if (z.shape().size() != 2 || z.shape() != w.shape()) {
    fail("project: dim mismatch (" + diff::shape_str(z.shape()) + " vs " +
         diff::shape_str(w.shape()) + ")");
  }
  const diff::Tensor zz = g.row_dot(z, z);
  for (double v : zz.values()) {
    if (v < epsilon * epsilon) fail("project: degenerate instrument (||z|| < epsilon)");
  }
  const diff::Tensor coeff = g.div(g.row_dot(z, w), zz);
  return g.mul(z, coeff);
}

diff::Tensor fuse(diff::Graph& g, const diff::Tensor& w_hat, const diff::Tensor& z_condition,
                  const Config& config) {
  config.validate();
  if (w_hat.shape() != z_condition.shape()) {
    fail("fuse: dim mismatch (" + diff::shape_str(w_hat.shape()) + " vs " +
         diff::shape_str(z_condition.shape()) + ")");
  }
  return g.add(g.scale(w_hat, config.alpha), g.scale(z_condition, 1.0 - config.alpha));
}

diff::Tensor reconstruct(diff::Graph& g, const diff::Tensor& w, const diff::Tensor& z_instrument,
                         const diff::Tensor& z_condition, const Config& config) {
  return fuse(g, project(g, z_instrument, w, config.epsilon), z_condition, config);
}

diff::Tensor reconstruct_rows(diff::Graph& g, const diff::Tensor& w,
                              const diff::Tensor& z_instrument, const diff::Tensor& z_condition,
                              const Config& config) {
  return fuse(g, project_rows(g, z_instrument, w, config.epsilon), z_condition, config);
}

}  // namespace civrec::decompose
