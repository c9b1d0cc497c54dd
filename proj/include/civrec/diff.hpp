#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "civrec/rng.hpp"

namespace civrec::diff {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorData {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until backward populates it
  bool requires_grad = false;
  std::string name;
};

// Handle with shared ownership; copies alias the same storage. Gradients
// accumulate in place, so a parameter tensor reused across graphs keeps
// collecting until zero_grad().
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor vec(std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value);
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const { return d_->shape; }
  std::int64_t numel() const { return static_cast<std::int64_t>(d_->values.size()); }
  std::int64_t rows() const;
  std::int64_t cols() const;

  std::span<const double> values() const { return d_->values; }
  std::span<double> values_mut() { return d_->values; }
  double item() const;
  double at(std::int64_t r, std::int64_t c) const;

  bool has_grad() const { return d_ && !d_->grad.empty(); }
  std::span<const double> grad() const;
  std::span<double> grad_mut();  // zero-allocates on first touch
  void zero_grad() { d_->grad.clear(); }

  bool requires_grad() const { return d_ && d_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    d_->requires_grad = on;
    return *this;
  }
  const std::string& name() const { return d_->name; }
  Tensor& set_name(std::string name) {
    d_->name = std::move(name);
    return *this;
  }

  bool same_storage(const Tensor& other) const { return d_ == other.d_; }

 private:
  explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}
  std::shared_ptr<TensorData> d_;
  friend class Graph;
  friend class AdamState;
};

// Constant sparse matrix in COO form, used for graph propagation. Not a
// differentiable input: gradients flow only through the dense operand.
struct SparseMatrix {
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::vector<std::int64_t> row_idx;
  std::vector<std::int64_t> col_idx;
  std::vector<double> vals;
};

enum class OpKind : std::uint8_t {
  kMatMul,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kConcatCols,
  kConcatRows,
  kSliceCols,
  kRowGather,
  kSum,
  kRowSum,
  kMean,
  kDot,
  kRowDot,
  kL2NormSq,
  kSigmoid,
  kLog,
  kExp,
  kSoftplus,
  kScale,
  kClip,
  kSpmm,
};

const char* op_name(OpKind kind);

// Dynamic tape. Each op validates shapes and finiteness, computes the
// output eagerly, and records a node when any input requires grad (and the
// graph is recording). backward() replays nodes in exact reverse insertion
// order, accumulating into every requires_grad input.
class Graph {
 public:
  explicit Graph(bool recording = true) : recording_(recording) {}

  Tensor matmul(const Tensor& a, const Tensor& b);
  // add: identical shapes, or (r,c)+(1,c)/(c) row broadcast
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  // mul/div: identical shapes, (r,c) op (r,1) column broadcast, or x op scalar{1}
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor div(const Tensor& a, const Tensor& b);
  Tensor concat_cols(const Tensor& a, const Tensor& b);
  Tensor concat_rows(const Tensor& a, const Tensor& b);
  std::pair<Tensor, Tensor> split_cols(const Tensor& x, std::int64_t first_cols);
  Tensor row_gather(const Tensor& table, std::vector<std::int64_t> rows);
  Tensor sum(const Tensor& x);
  Tensor row_sum(const Tensor& x);
  Tensor mean(const Tensor& x);
  Tensor dot(const Tensor& a, const Tensor& b);
  Tensor row_dot(const Tensor& a, const Tensor& b);
  Tensor l2_norm_sq(const Tensor& x);
  Tensor sigmoid(const Tensor& x);
  Tensor log(const Tensor& x);
  Tensor exp(const Tensor& x);
  Tensor softplus(const Tensor& x);
  Tensor scale(const Tensor& x, double factor);
  Tensor clip(const Tensor& x, double lo, double hi);
  Tensor spmm(const std::shared_ptr<const SparseMatrix>& m, const Tensor& x);

  // loss must be scalar; grads of multiply-used tensors accumulate as sums.
  void backward(const Tensor& loss);

  std::size_t node_count() const { return nodes_.size(); }
  bool recording() const { return recording_; }

 private:
  struct Node {
    OpKind kind;
    std::vector<std::shared_ptr<TensorData>> inputs;
    std::shared_ptr<TensorData> output;
    std::int64_t i0 = 0, i1 = 0;  // op-specific (slice bounds, ...)
    double f0 = 0.0, f1 = 0.0;    // op-specific (scale factor, clip bounds)
    std::vector<std::int64_t> indices;
    std::shared_ptr<const SparseMatrix> sparse;
  };

  Tensor record(Node node);
  void backward_node(const Node& node);

  std::vector<Node> nodes_;
  bool recording_ = true;
};

double stable_sigmoid(double x);
double stable_softplus(double x);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standard Adam with bias correction. Moments are keyed by parameter
// position; shapes are pinned at construction.
class AdamState {
 public:
  AdamState() = default;
  explicit AdamState(const std::vector<Tensor>& params, AdamConfig config = {});

  // Applies one update to every parameter. Grads are left untouched; the
  // caller zeroes them.
  void step(std::vector<Tensor>& params, double lr);

  std::int64_t step_count() const { return step_; }
  const AdamConfig& config() const { return config_; }
  std::size_t param_count() const { return m_.size(); }
  std::vector<double>& moment1(std::size_t i) { return m_[i]; }
  std::vector<double>& moment2(std::size_t i) { return v_[i]; }
  const std::vector<double>& moment1(std::size_t i) const { return m_[i]; }
  const std::vector<double>& moment2(std::size_t i) const { return v_[i]; }
  void set_step_count(std::int64_t t) { step_ = t; }

 private:
  AdamConfig config_;
  std::int64_t step_ = 0;
  std::vector<std::vector<double>> m_, v_;
  std::vector<Shape> shapes_;
};

}  // namespace civrec::diff
