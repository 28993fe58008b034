#pragma once

#include <Eigen/Dense>

#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "i2st/errors.hpp"
#include "i2st/rng.hpp"

namespace i2st {

// Extents of a dense row-major tensor. Rank 0 (empty shape) is a scalar.
using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
long long numel(const Shape& s);

struct TensorNode {
  Shape shape;
  Eigen::ArrayXd value;
  Eigen::ArrayXd grad;  // empty until tracked
  bool requires_grad = false;
};

// Value-semantic handle to a node in the computation graph. Copies alias the
// same storage; tensors are treated as immutable once an op on a live tape
// has consumed them.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor constant(Shape shape, double v);
  static Tensor from(Shape shape, std::vector<double> data);
  static Tensor scalar(double v);
  // I.i.d. normal entries scaled by `scale`.
  static Tensor randn(Shape shape, Rng& rng, double scale = 1.0);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int extent(int axis) const { return node_->shape[static_cast<std::size_t>(axis)]; }
  long long size() const { return node_->value.size(); }

  const Eigen::ArrayXd& data() const { return node_->value; }
  Eigen::ArrayXd& data() { return node_->value; }
  const Eigen::ArrayXd& grad() const { return node_->grad; }

  double item() const;
  double at(std::initializer_list<int> idx) const;
  double& at(std::initializer_list<int> idx);

  bool requires_grad() const { return node_->requires_grad; }
  // Marks a leaf as trainable and allocates its zeroed gradient buffer.
  void set_requires_grad(bool on);
  void zero_grad();

  std::shared_ptr<TensorNode>& node() { return node_; }
  const std::shared_ptr<TensorNode>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}
  std::shared_ptr<TensorNode> node_;
};

// Records one backward rule per op, in execution order (which is a
// topological order of the graph, since ops only consume existing nodes).
class Tape {
 public:
  // Reverse-mode sweep from a scalar loss. Gradients of this tape's
  // intermediate nodes are reset first; leaf gradients accumulate, so
  // repeated calls without zero_grad() add up.
  void backward(const Tensor& loss);

  void clear() { records_.clear(); }
  std::size_t size() const { return records_.size(); }

  void push(std::shared_ptr<TensorNode> out,
            std::function<void(const TensorNode&)> pull) {
    records_.push_back({std::move(out), std::move(pull)});
  }

 private:
  struct Record {
    std::shared_ptr<TensorNode> out;
    std::function<void(const TensorNode&)> pull;
  };
  std::vector<Record> records_;
};

// Makes a tape the active recording target for the current thread while in
// scope. With no active tape, ops run forward-only.
class TapeScope {
 public:
  explicit TapeScope(Tape& t);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

Tape* active_tape();

// ---------------------------------------------------------------------------
// Ops. Each computes eagerly and, when a tape is active and an input is
// tracked, records an exact backward rule.
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);

Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor sqrt(const Tensor& a);          // gradient requires strictly positive input
Tensor clamp_min(const Tensor& a, double c);

// [m×k]·[k×n] -> [m×n]
Tensor matmul(const Tensor& a, const Tensor& b);
// [B×m×k]·[B×k×n] -> [B×m×n]
Tensor bmm(const Tensor& a, const Tensor& b);

// Slices along `axis` are shifted by their max, exponentiated and normalized.
Tensor softmax(const Tensor& a, int axis);

// logits: rank-1 [N]. Returns -log softmax(logits)[label] as a scalar.
Tensor cross_entropy_logits(const Tensor& logits, int label);

// input [C×H×W] or [N×C×H×W]; kernel [C_out×C_in×kh×kw]. Cross-correlation
// with zero padding; output spatial extent floor((H+2p-kh)/stride)+1.
Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding);
// Adds bias[c] to every pixel of channel c ([C×H×W] or [N×C×H×W]).
Tensor bias_channel(const Tensor& input, const Tensor& bias);
// Adds b (length = last extent) to every slice along the last axis.
Tensor add_rowvec(const Tensor& a, const Tensor& b);

Tensor mean_axis(const Tensor& a, int axis);
Tensor sum_axis(const Tensor& a, int axis);
// Hard minimum over `axis`; gradient routes to the first argmin on ties.
Tensor min_axis(const Tensor& a, int axis);
Tensor mean_all(const Tensor& a);
Tensor sum_all(const Tensor& a);

// Nearest-neighbor 2x spatial upsampling of [..×H×W] on the last two axes.
Tensor upsample2x(const Tensor& a);

Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a, std::vector<int> perm);
Tensor concat(const std::vector<Tensor>& parts, int axis);
// Keeps indices [begin, end) along `axis`.
Tensor slice(const Tensor& a, int axis, int begin, int end);

// Per-slice normalization over the last axis to mean 0 / variance 1
// (population variance, +eps inside the square root), then gamma*xhat+beta.
Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-10);

}  // namespace i2st
