#include "civrec/diff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace civrec::diff {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

void check_finite_span(const char* op, std::span<const double> vals) {
  for (double v : vals) {
    if (!std::isfinite(v)) {
      fail(std::string(op) + ": non-finite input rejected");
    }
  }
}

void check_finite_out(const char* op, std::span<const double> vals) {
  for (double v : vals) {
    if (!std::isfinite(v)) {
      fail(std::string(op) + ": non-finite result");
    }
  }
}

bool is_2d(const Shape& s) { return s.size() == 2; }

}  // namespace

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  if (shape.empty()) os << "scalar";
  return os.str();
}

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kMatMul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kDiv: return "div";
    case OpKind::kConcatCols: return "concat_cols";
    case OpKind::kConcatRows: return "concat_rows";
    case OpKind::kSliceCols: return "slice_cols";
    case OpKind::kRowGather: return "row_gather";
    case OpKind::kSum: return "sum";
    case OpKind::kRowSum: return "row_sum";
    case OpKind::kMean: return "mean";
    case OpKind::kDot: return "dot";
    case OpKind::kRowDot: return "row_dot";
    case OpKind::kL2NormSq: return "l2_norm_sq";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kLog: return "log";
    case OpKind::kExp: return "exp";
    case OpKind::kSoftplus: return "softplus";
    case OpKind::kScale: return "scale";
    case OpKind::kClip: return "clip";
    case OpKind::kSpmm: return "spmm";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto d = std::make_shared<TensorData>();
  const auto n = shape_numel(shape);
  if (n < 0) fail("tensor: negative dimension in shape " + shape_str(shape));
  d->shape = std::move(shape);
  d->values.assign(static_cast<std::size_t>(n), 0.0);
  d->requires_grad = requires_grad;
  return Tensor(std::move(d));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.d_->values.begin(), t.d_->values.end(), value);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  const auto n = shape_numel(shape);
  if (n != static_cast<std::int64_t>(values.size())) {
    fail("tensor: " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
  }
  auto d = std::make_shared<TensorData>();
  d->shape = std::move(shape);
  d->values = std::move(values);
  d->requires_grad = requires_grad;
  return Tensor(std::move(d));
}

Tensor Tensor::vec(std::vector<double> values, bool requires_grad) {
  Shape s{static_cast<std::int64_t>(values.size())};
  return from(std::move(s), std::move(values), requires_grad);
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (double& v : t.d_->values) v = rng.normal() * stddev;
  return t;
}

std::int64_t Tensor::rows() const {
  if (!is_2d(d_->shape)) fail("tensor: rows() on shape " + shape_str(d_->shape));
  return d_->shape[0];
}

std::int64_t Tensor::cols() const {
  if (!is_2d(d_->shape)) fail("tensor: cols() on shape " + shape_str(d_->shape));
  return d_->shape[1];
}

double Tensor::item() const {
  if (numel() != 1) fail("tensor: item() on shape " + shape_str(d_->shape));
  return d_->values[0];
}

double Tensor::at(std::int64_t r, std::int64_t c) const {
  return d_->values[static_cast<std::size_t>(r * cols() + c)];
}

std::span<const double> Tensor::grad() const {
  if (d_->grad.empty()) fail("tensor: gradient not populated for '" + d_->name + "'");
  return d_->grad;
}

std::span<double> Tensor::grad_mut() {
  if (d_->grad.empty()) d_->grad.assign(d_->values.size(), 0.0);
  return d_->grad;
}

// ---------------------------------------------------------------------------
// Graph forward ops

namespace {

std::span<double> node_grad(const std::shared_ptr<TensorData>& t) {
  if (t->grad.empty()) t->grad.assign(t->values.size(), 0.0);
  return t->grad;
}

}  // namespace

Tensor Graph::record(Node node) {
  check_finite_out(op_name(node.kind), node.output->values);
  auto out = node.output;
  bool needs = false;
  for (const auto& in : node.inputs) needs = needs || in->requires_grad;
  if (needs) {
    out->requires_grad = true;
    if (recording_) nodes_.push_back(std::move(node));
  }
  return Tensor(std::move(out));
}

Tensor Graph::matmul(const Tensor& a, const Tensor& b) {
  if (!is_2d(a.shape()) || !is_2d(b.shape()) || a.shape()[1] != b.shape()[0]) {
    fail(std::string("matmul: shape mismatch (") + shape_str(a.shape()) + " vs " +
         shape_str(b.shape()) + ")");
  }
  check_finite_span("matmul", a.values());
  check_finite_span("matmul", b.values());
  const std::int64_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  auto out = Tensor::zeros({m, n});
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  double* pc = out.values_mut().data();
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t kk = 0; kk < k; ++kk) {
      const double av = pa[i * k + kk];
      if (av == 0.0) continue;
      const double* brow = pb + kk * n;
      double* crow = pc + i * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return record({OpKind::kMatMul, {a.d_, b.d_}, out.d_});
}

namespace {

enum class AddForm { kSame, kRowBroadcast };

AddForm add_form(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return AddForm::kSame;
  if (is_2d(a)) {
    if ((is_2d(b) && b[0] == 1 && b[1] == a[1]) || (b.size() == 1 && b[0] == a[1])) {
      return AddForm::kRowBroadcast;
    }
  }
  fail(std::string(op) + ": shape mismatch (" + shape_str(a) + " vs " + shape_str(b) + ")");
}

enum class MulForm { kSame, kColBroadcast, kScalar };

MulForm mul_form(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return MulForm::kSame;
  if (shape_numel(b) == 1) return MulForm::kScalar;
  if (is_2d(a) && is_2d(b) && b[0] == a[0] && b[1] == 1) return MulForm::kColBroadcast;
  fail(std::string(op) + ": shape mismatch (" + shape_str(a) + " vs " + shape_str(b) + ")");
}

}  // namespace

Tensor Graph::add(const Tensor& a, const Tensor& b) {
  const AddForm form = add_form("add", a.shape(), b.shape());
  check_finite_span("add", a.values());
  check_finite_span("add", b.values());
  auto out = Tensor::zeros(a.shape());
  auto ov = out.values_mut();
  const auto av = a.values(), bv = b.values();
  if (form == AddForm::kSame) {
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  } else {
    const std::int64_t r = a.shape()[0], c = a.shape()[1];
    for (std::int64_t i = 0; i < r; ++i)
      for (std::int64_t j = 0; j < c; ++j) ov[i * c + j] = av[i * c + j] + bv[j];
  }
  return record({OpKind::kAdd, {a.d_, b.d_}, out.d_});
}

Tensor Graph::sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    fail(std::string("sub: shape mismatch (") + shape_str(a.shape()) + " vs " +
         shape_str(b.shape()) + ")");
  }
  check_finite_span("sub", a.values());
  check_finite_span("sub", b.values());
  auto out = Tensor::zeros(a.shape());
  auto ov = out.values_mut();
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
  return record({OpKind::kSub, {a.d_, b.d_}, out.d_});
}

Tensor Graph::mul(const Tensor& a, const Tensor& b) {
  const MulForm form = mul_form("mul", a.shape(), b.shape());
  check_finite_span("mul", a.values());
  check_finite_span("mul", b.values());
  auto out = Tensor::zeros(a.shape());
  auto ov = out.values_mut();
  const auto av = a.values(), bv = b.values();
  if (form == MulForm::kSame) {
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  } else if (form == MulForm::kScalar) {
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[0];
  } else {
    const std::int64_t r = a.shape()[0], c = a.shape()[1];
    for (std::int64_t i = 0; i < r; ++i)
      for (std::int64_t j = 0; j < c; ++j) ov[i * c + j] = av[i * c + j] * bv[i];
  }
  return record({OpKind::kMul, {a.d_, b.d_}, out.d_});
}

Tensor Graph::div(const Tensor& a, const Tensor& b) {
  const MulForm form = mul_form("div", a.shape(), b.shape());
  check_finite_span("div", a.values());
  check_finite_span("div", b.values());
  for (double v : b.values()) {
    if (v == 0.0) fail("div: zero denominator");
  }
  auto out = Tensor::zeros(a.shape());
  auto ov = out.values_mut();
  const auto av = a.values(), bv = b.values();
  if (form == MulForm::kSame) {
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] / bv[i];
  } else if (form == MulForm::kScalar) {
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] / bv[0];
  } else {
    const std::int64_t r = a.shape()[0], c = a.shape()[1];
    for (std::int64_t i = 0; i < r; ++i)
      for (std::int64_t j = 0; j < c; ++j) ov[i * c + j] = av[i * c + j] / bv[i];
  }
  return record({OpKind::kDiv, {a.d_, b.d_}, out.d_});
}

Tensor Graph::concat_cols(const Tensor& a, const Tensor& b) {
  if (!is_2d(a.shape()) || !is_2d(b.shape()) || a.shape()[0] != b.shape()[0]) {
    fail(std::string("concat_cols: shape mismatch (") + shape_str(a.shape()) + " vs " +
         shape_str(b.shape()) + ")");
  }
  check_finite_span("concat_cols", a.values());
  check_finite_span("concat_cols", b.values());
  const std::int64_t r = a.shape()[0], ca = a.shape()[1], cb = b.shape()[1];
  auto out = Tensor::zeros({r, ca + cb});
  auto ov = out.values_mut();
  const auto av = a.values(), bv = b.values();
  for (std::int64_t i = 0; i < r; ++i) {
    std::copy_n(av.data() + i * ca, ca, ov.data() + i * (ca + cb));
    std::copy_n(bv.data() + i * cb, cb, ov.data() + i * (ca + cb) + ca);
  }
  Node node{OpKind::kConcatCols, {a.d_, b.d_}, out.d_};
  node.i0 = ca;
  return record(std::move(node));
}

Tensor Graph::concat_rows(const Tensor& a, const Tensor& b) {
  if (!is_2d(a.shape()) || !is_2d(b.shape()) || a.shape()[1] != b.shape()[1]) {
    fail(std::string("concat_rows: shape mismatch (") + shape_str(a.shape()) + " vs " +
         shape_str(b.shape()) + ")");
  }
  check_finite_span("concat_rows", a.values());
  check_finite_span("concat_rows", b.values());
  const std::int64_t ra = a.shape()[0], rb = b.shape()[0], c = a.shape()[1];
  auto out = Tensor::zeros({ra + rb, c});
  auto ov = out.values_mut();
  std::copy_n(a.values().data(), ra * c, ov.data());
  std::copy_n(b.values().data(), rb * c, ov.data() + ra * c);
  Node node{OpKind::kConcatRows, {a.d_, b.d_}, out.d_};
  node.i0 = ra;
  return record(std::move(node));
}

std::pair<Tensor, Tensor> Graph::split_cols(const Tensor& x, std::int64_t first_cols) {
  if (!is_2d(x.shape()) || first_cols <= 0 || first_cols >= x.shape()[1]) {
    fail("split_cols: invalid split at " + std::to_string(first_cols) + " for shape " +
         shape_str(x.shape()));
  }
  check_finite_span("split_cols", x.values());
  const std::int64_t r = x.shape()[0], c = x.shape()[1];
  auto slice = [&](std::int64_t c0, std::int64_t c1) {
    auto out = Tensor::zeros({r, c1 - c0});
    auto ov = out.values_mut();
    const auto xv = x.values();
    for (std::int64_t i = 0; i < r; ++i) {
      std::copy_n(xv.data() + i * c + c0, c1 - c0, ov.data() + i * (c1 - c0));
    }
    Node node{OpKind::kSliceCols, {x.d_}, out.d_};
    node.i0 = c0;
    node.i1 = c1;
    return record(std::move(node));
  };
  Tensor lo = slice(0, first_cols);
  Tensor hi = slice(first_cols, c);
  return {lo, hi};
}

Tensor Graph::row_gather(const Tensor& table, std::vector<std::int64_t> rows) {
  if (!is_2d(table.shape())) {
    fail("row_gather: table must be 2-d, got " + shape_str(table.shape()));
  }
  const std::int64_t n = table.shape()[0], c = table.shape()[1];
  for (auto r : rows) {
    if (r < 0 || r >= n) {
      fail("row_gather: index " + std::to_string(r) + " out of range [0," + std::to_string(n) +
           ")");
    }
  }
  check_finite_span("row_gather", table.values());
  auto out = Tensor::zeros({static_cast<std::int64_t>(rows.size()), c});
  auto ov = out.values_mut();
  const auto tv = table.values();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(tv.data() + rows[i] * c, c, ov.data() + static_cast<std::int64_t>(i) * c);
  }
  Node node{OpKind::kRowGather, {table.d_}, out.d_};
  node.indices = std::move(rows);
  return record(std::move(node));
}

Tensor Graph::sum(const Tensor& x) {
  check_finite_span("sum", x.values());
  double s = 0.0;
  for (double v : x.values()) s += v;
  auto out = Tensor::scalar(s);
  return record({OpKind::kSum, {x.d_}, out.d_});
}

Tensor Graph::row_sum(const Tensor& x) {
  if (!is_2d(x.shape())) fail("row_sum: input must be 2-d, got " + shape_str(x.shape()));
  check_finite_span("row_sum", x.values());
  const std::int64_t r = x.shape()[0], c = x.shape()[1];
  auto out = Tensor::zeros({r, 1});
  auto ov = out.values_mut();
  const auto xv = x.values();
  for (std::int64_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::int64_t j = 0; j < c; ++j) s += xv[i * c + j];
    ov[i] = s;
  }
  return record({OpKind::kRowSum, {x.d_}, out.d_});
}

Tensor Graph::mean(const Tensor& x) {
  if (x.numel() == 0) fail("mean: empty tensor");
  check_finite_span("mean", x.values());
  double s = 0.0;
  for (double v : x.values()) s += v;
  auto out = Tensor::scalar(s / static_cast<double>(x.numel()));
  return record({OpKind::kMean, {x.d_}, out.d_});
}

Tensor Graph::dot(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 1 || a.shape() != b.shape()) {
    fail(std::string("dot: shape mismatch (") + shape_str(a.shape()) + " vs " +
         shape_str(b.shape()) + ")");
  }
  check_finite_span("dot", a.values());
  check_finite_span("dot", b.values());
  double s = 0.0;
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * bv[i];
  auto out = Tensor::scalar(s);
  return record({OpKind::kDot, {a.d_, b.d_}, out.d_});
}

Tensor Graph::row_dot(const Tensor& a, const Tensor& b) {
  if (!is_2d(a.shape()) || a.shape() != b.shape()) {
    fail(std::string("row_dot: shape mismatch (") + shape_str(a.shape()) + " vs " +
         shape_str(b.shape()) + ")");
  }
  check_finite_span("row_dot", a.values());
  check_finite_span("row_dot", b.values());
  const std::int64_t r = a.shape()[0], c = a.shape()[1];
  auto out = Tensor::zeros({r, 1});
  auto ov = out.values_mut();
  const auto av = a.values(), bv = b.values();
  for (std::int64_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::int64_t j = 0; j < c; ++j) s += av[i * c + j] * bv[i * c + j];
    ov[i] = s;
  }
  return record({OpKind::kRowDot, {a.d_, b.d_}, out.d_});
}

Tensor Graph::l2_norm_sq(const Tensor& x) {
  check_finite_span("l2_norm_sq", x.values());
  double s = 0.0;
  for (double v : x.values()) s += v * v;
  auto out = Tensor::scalar(s);
  return record({OpKind::kL2NormSq, {x.d_}, out.d_});
}

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

Tensor Graph::sigmoid(const Tensor& x) {
  check_finite_span("sigmoid", x.values());
  auto out = Tensor::zeros(x.shape());
  auto ov = out.values_mut();
  const auto xv = x.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = stable_sigmoid(xv[i]);
  return record({OpKind::kSigmoid, {x.d_}, out.d_});
}

Tensor Graph::log(const Tensor& x) {
  check_finite_span("log", x.values());
  for (double v : x.values()) {
    if (v <= 0.0) fail("log: non-positive input");
  }
  auto out = Tensor::zeros(x.shape());
  auto ov = out.values_mut();
  const auto xv = x.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = std::log(xv[i]);
  return record({OpKind::kLog, {x.d_}, out.d_});
}

Tensor Graph::exp(const Tensor& x) {
  check_finite_span("exp", x.values());
  for (double v : x.values()) {
    if (v > 700.0) fail("exp: overflow");
  }
  auto out = Tensor::zeros(x.shape());
  auto ov = out.values_mut();
  const auto xv = x.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = std::exp(xv[i]);
  return record({OpKind::kExp, {x.d_}, out.d_});
}

Tensor Graph::softplus(const Tensor& x) {
  check_finite_span("softplus", x.values());
  auto out = Tensor::zeros(x.shape());
  auto ov = out.values_mut();
  const auto xv = x.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = stable_softplus(xv[i]);
  return record({OpKind::kSoftplus, {x.d_}, out.d_});
}

Tensor Graph::scale(const Tensor& x, double factor) {
  if (!std::isfinite(factor)) fail("scale: non-finite factor");
  check_finite_span("scale", x.values());
  auto out = Tensor::zeros(x.shape());
  auto ov = out.values_mut();
  const auto xv = x.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = factor * xv[i];
  Node node{OpKind::kScale, {x.d_}, out.d_};
  node.f0 = factor;
  return record(std::move(node));
}

Tensor Graph::clip(const Tensor& x, double lo, double hi) {
  if (!(lo < hi)) fail("clip: invalid bounds");
  check_finite_span("clip", x.values());
  auto out = Tensor::zeros(x.shape());
  auto ov = out.values_mut();
  const auto xv = x.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = std::clamp(xv[i], lo, hi);
  Node node{OpKind::kClip, {x.d_}, out.d_};
  node.f0 = lo;
  node.f1 = hi;
  return record(std::move(node));
}

Tensor Graph::spmm(const std::shared_ptr<const SparseMatrix>& m, const Tensor& x) {
  if (!m) fail("spmm: null matrix");
  if (!is_2d(x.shape()) || x.shape()[0] != m->cols) {
    fail("spmm: shape mismatch (" + std::to_string(m->rows) + "x" + std::to_string(m->cols) +
         " vs " + shape_str(x.shape()) + ")");
  }
  check_finite_span("spmm", x.values());
  const std::int64_t c = x.shape()[1];
  auto out = Tensor::zeros({m->rows, c});
  auto ov = out.values_mut();
  const auto xv = x.values();
  for (std::size_t e = 0; e < m->vals.size(); ++e) {
    const std::int64_t r = m->row_idx[e], k = m->col_idx[e];
    const double w = m->vals[e];
    for (std::int64_t j = 0; j < c; ++j) ov[r * c + j] += w * xv[k * c + j];
  }
  Node node{OpKind::kSpmm, {x.d_}, out.d_};
  node.sparse = m;
  return record(std::move(node));
}

// ---------------------------------------------------------------------------
// Backward

void Graph::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    fail("backward: loss must be scalar, got shape " +
         (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) return;  // nothing reachable requires grad
  node_grad(loss.d_)[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    backward_node(*it);
  }
}

void Graph::backward_node(const Node& node) {
  const std::span<const double> g = node.output->grad;
  auto want = [](const std::shared_ptr<TensorData>& t) { return t->requires_grad; };

  switch (node.kind) {
    case OpKind::kMatMul: {
      const auto& a = node.inputs[0];
      const auto& b = node.inputs[1];
      const std::int64_t m = a->shape[0], k = a->shape[1], n = b->shape[1];
      if (want(a)) {
        auto ga = node_grad(a);
        for (std::int64_t i = 0; i < m; ++i)
          for (std::int64_t j = 0; j < n; ++j) {
            const double gv = g[i * n + j];
            if (gv == 0.0) continue;
            for (std::int64_t kk = 0; kk < k; ++kk) ga[i * k + kk] += gv * b->values[kk * n + j];
          }
      }
      if (want(b)) {
        auto gb = node_grad(b);
        for (std::int64_t i = 0; i < m; ++i)
          for (std::int64_t kk = 0; kk < k; ++kk) {
            const double av = a->values[i * k + kk];
            if (av == 0.0) continue;
            for (std::int64_t j = 0; j < n; ++j) gb[kk * n + j] += av * g[i * n + j];
          }
      }
      break;
    }
    case OpKind::kAdd: {
      const auto& a = node.inputs[0];
      const auto& b = node.inputs[1];
      if (want(a)) {
        auto ga = node_grad(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (want(b)) {
        auto gb = node_grad(b);
        if (b->values.size() == g.size()) {
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        } else {  // row broadcast: column sums
          const std::int64_t r = a->shape[0], c = a->shape[1];
          for (std::int64_t i = 0; i < r; ++i)
            for (std::int64_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
        }
      }
      break;
    }
    case OpKind::kSub: {
      const auto& a = node.inputs[0];
      const auto& b = node.inputs[1];
      if (want(a)) {
        auto ga = node_grad(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (want(b)) {
        auto gb = node_grad(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
      break;
    }
    case OpKind::kMul: {
      const auto& a = node.inputs[0];
      const auto& b = node.inputs[1];
      if (b->values.size() == a->values.size()) {
        if (want(a)) {
          auto ga = node_grad(a);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b->values[i];
        }
        if (want(b)) {
          auto gb = node_grad(b);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a->values[i];
        }
      } else if (b->values.size() == 1) {
        if (want(a)) {
          auto ga = node_grad(a);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b->values[0];
        }
        if (want(b)) {
          auto gb = node_grad(b);
          for (std::size_t i = 0; i < g.size(); ++i) gb[0] += g[i] * a->values[i];
        }
      } else {  // column broadcast
        const std::int64_t r = a->shape[0], c = a->shape[1];
        if (want(a)) {
          auto ga = node_grad(a);
          for (std::int64_t i = 0; i < r; ++i)
            for (std::int64_t j = 0; j < c; ++j) ga[i * c + j] += g[i * c + j] * b->values[i];
        }
        if (want(b)) {
          auto gb = node_grad(b);
          for (std::int64_t i = 0; i < r; ++i)
            for (std::int64_t j = 0; j < c; ++j) gb[i] += g[i * c + j] * a->values[i * c + j];
        }
      }
      break;
    }
    case OpKind::kDiv: {
      const auto& a = node.inputs[0];
      const auto& b = node.inputs[1];
      if (b->values.size() == a->values.size()) {
        if (want(a)) {
          auto ga = node_grad(a);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / b->values[i];
        }
        if (want(b)) {
          auto gb = node_grad(b);
          for (std::size_t i = 0; i < g.size(); ++i)
            gb[i] -= g[i] * a->values[i] / (b->values[i] * b->values[i]);
        }
      } else if (b->values.size() == 1) {
        if (want(a)) {
          auto ga = node_grad(a);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / b->values[0];
        }
        if (want(b)) {
          auto gb = node_grad(b);
          for (std::size_t i = 0; i < g.size(); ++i)
            gb[0] -= g[i] * a->values[i] / (b->values[0] * b->values[0]);
        }
      } else {
        const std::int64_t r = a->shape[0], c = a->shape[1];
        if (want(a)) {
          auto ga = node_grad(a);
          for (std::int64_t i = 0; i < r; ++i)
            for (std::int64_t j = 0; j < c; ++j) ga[i * c + j] += g[i * c + j] / b->values[i];
        }
        if (want(b)) {
          auto gb = node_grad(b);
          for (std::int64_t i = 0; i < r; ++i)
            for (std::int64_t j = 0; j < c; ++j)
              gb[i] -= g[i * c + j] * a->values[i * c + j] / (b->values[i] * b->values[i]);
        }
      }
      break;
    }
    case OpKind::kConcatCols: {
      const auto& a = node.inputs[0];
      const auto& b = node.inputs[1];
      const std::int64_t r = a->shape[0], ca = node.i0, cb = b->shape[1];
      if (want(a)) {
        auto ga = node_grad(a);
        for (std::int64_t i = 0; i < r; ++i)
          for (std::int64_t j = 0; j < ca; ++j) ga[i * ca + j] += g[i * (ca + cb) + j];
      }
      if (want(b)) {
        auto gb = node_grad(b);
        for (std::int64_t i = 0; i < r; ++i)
          for (std::int64_t j = 0; j < cb; ++j) gb[i * cb + j] += g[i * (ca + cb) + ca + j];
      }
      break;
    }
    case OpKind::kConcatRows: {
      const auto& a = node.inputs[0];
      const auto& b = node.inputs[1];
      const std::int64_t ra = node.i0, c = a->shape[1];
      if (want(a)) {
        auto ga = node_grad(a);
        for (std::int64_t i = 0; i < ra * c; ++i) ga[i] += g[i];
      }
      if (want(b)) {
        auto gb = node_grad(b);
        const std::int64_t nb = b->shape[0] * c;
        for (std::int64_t i = 0; i < nb; ++i) gb[i] += g[ra * c + i];
      }
      break;
    }
    case OpKind::kSliceCols: {
      const auto& x = node.inputs[0];
      if (!want(x)) break;
      auto gx = node_grad(x);
      const std::int64_t r = x->shape[0], c = x->shape[1];
      const std::int64_t c0 = node.i0, w = node.i1 - node.i0;
      for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < w; ++j) gx[i * c + c0 + j] += g[i * w + j];
      break;
    }
    case OpKind::kRowGather: {
      const auto& t = node.inputs[0];
      if (!want(t)) break;
      auto gt = node_grad(t);
      const std::int64_t c = t->shape[1];
      for (std::size_t i = 0; i < node.indices.size(); ++i) {
        const std::int64_t r = node.indices[i];
        for (std::int64_t j = 0; j < c; ++j)
          gt[r * c + j] += g[static_cast<std::int64_t>(i) * c + j];
      }
      break;
    }
    case OpKind::kSum: {
      const auto& x = node.inputs[0];
      if (!want(x)) break;
      auto gx = node_grad(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0];
      break;
    }
    case OpKind::kRowSum: {
      const auto& x = node.inputs[0];
      if (!want(x)) break;
      auto gx = node_grad(x);
      const std::int64_t r = x->shape[0], c = x->shape[1];
      for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < c; ++j) gx[i * c + j] += g[i];
      break;
    }
    case OpKind::kMean: {
      const auto& x = node.inputs[0];
      if (!want(x)) break;
      auto gx = node_grad(x);
      const double inv = 1.0 / static_cast<double>(x->values.size());
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0] * inv;
      break;
    }
    case OpKind::kDot: {
      const auto& a = node.inputs[0];
      const auto& b = node.inputs[1];
      if (want(a)) {
        auto ga = node_grad(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0] * b->values[i];
      }
      if (want(b)) {
        auto gb = node_grad(b);
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[0] * a->values[i];
      }
      break;
    }
    case OpKind::kRowDot: {
      const auto& a = node.inputs[0];
      const auto& b = node.inputs[1];
      const std::int64_t r = a->shape[0], c = a->shape[1];
      if (want(a)) {
        auto ga = node_grad(a);
        for (std::int64_t i = 0; i < r; ++i)
          for (std::int64_t j = 0; j < c; ++j) ga[i * c + j] += g[i] * b->values[i * c + j];
      }
      if (want(b)) {
        auto gb = node_grad(b);
        for (std::int64_t i = 0; i < r; ++i)
          for (std::int64_t j = 0; j < c; ++j) gb[i * c + j] += g[i] * a->values[i * c + j];
      }
      break;
    }
    case OpKind::kL2NormSq: {
      const auto& x = node.inputs[0];
      if (!want(x)) break;
      auto gx = node_grad(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += 2.0 * g[0] * x->values[i];
      break;
    }
    case OpKind::kSigmoid: {
      const auto& x = node.inputs[0];
      if (!want(x)) break;
      auto gx = node_grad(x);
      for (std::size_t i = 0; i < gx.size(); ++i) {
        const double s = node.output->values[i];
        gx[i] += g[i] * s * (1.0 - s);
      }
      break;
    }
    case OpKind::kLog: {
      const auto& x = node.inputs[0];
      if (!want(x)) break;
      auto gx = node_grad(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] / x->values[i];
      break;
    }
    case OpKind::kExp: {
      const auto& x = node.inputs[0];
      if (!want(x)) break;
      auto gx = node_grad(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * node.output->values[i];
      break;
    }
    case OpKind::kSoftplus: {
      const auto& x = node.inputs[0];
      if (!want(x)) break;
      auto gx = node_grad(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * stable_sigmoid(x->values[i]);
      break;
    }
    case OpKind::kScale: {
      const auto& x = node.inputs[0];
      if (!want(x)) break;
      auto gx = node_grad(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * node.f0;
      break;
    }
    case OpKind::kClip: {
      const auto& x = node.inputs[0];
      if (!want(x)) break;
      auto gx = node_grad(x);
      for (std::size_t i = 0; i < gx.size(); ++i) {
        const double v = x->values[i];
        if (v >= node.f0 && v <= node.f1) gx[i] += g[i];
      }
      break;
    }
    case OpKind::kSpmm: {
      const auto& x = node.inputs[0];
      if (!want(x)) break;
      auto gx = node_grad(x);
      const auto& m = *node.sparse;
      const std::int64_t c = x->shape[1];
      for (std::size_t e = 0; e < m.vals.size(); ++e) {
        const std::int64_t r = m.row_idx[e], k = m.col_idx[e];
        const double w = m.vals[e];
        for (std::int64_t j = 0; j < c; ++j) gx[k * c + j] += w * g[r * c + j];
      }
      break;
    }
  }
}

// ---------------------------------------------------------------------------
// Adam

AdamState::AdamState(const std::vector<Tensor>& params, AdamConfig config) : config_(config) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  shapes_.reserve(params.size());
  for (const auto& p : params) {
    m_.emplace_back(p.values().size(), 0.0);
    v_.emplace_back(p.values().size(), 0.0);
    shapes_.push_back(p.shape());
  }
}

void AdamState::step(std::vector<Tensor>& params, double lr) {
  if (params.size() != m_.size()) {
    fail("adam_step: parameter count changed (" + std::to_string(params.size()) + " vs " +
         std::to_string(m_.size()) + ")");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != shapes_[i]) {
      fail("adam_step: shape mismatch for parameter '" + params[i].name() + "'");
    }
    if (!params[i].has_grad()) {
      fail("adam_step: missing gradient for parameter '" + params[i].name() + "'");
    }
  }
  step_ += 1;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto vals = params[i].values_mut();
    const auto grad = params[i].grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < vals.size(); ++j) {
      const double gj = grad[j];
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * gj;
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * gj * gj;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      vals[j] -= lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

}  // namespace civrec::diff
