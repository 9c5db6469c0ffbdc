#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace dmmg {

using Shape = std::vector<int>;

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // sized lazily by Tape::backward
  bool requires_grad = false;
};
}  // namespace detail

/// Dense f32 tensor, row-major. Copying a Tensor copies a handle; the
/// underlying buffer is shared. Ops always allocate fresh outputs, so values
/// behave as immutable snapshots; `mutable_data` is reserved for leaves
/// (parameters, staging buffers) mutated between tapes.
class Tensor {
 public:
  Tensor() : impl_(std::make_shared<detail::TensorImpl>()) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value);
  static Tensor from_data(Shape shape, std::vector<float> data, bool requires_grad = false);
  static Tensor scalar(float value);

  const Shape& shape() const { return impl_->shape; }
  std::int64_t numel() const { return static_cast<std::int64_t>(impl_->data.size()); }
  int dim(int axis) const { return impl_->shape[static_cast<size_t>(axis)]; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }

  const float* data() const { return impl_->data.data(); }
  float* mutable_data() { return impl_->data.data(); }
  const std::vector<float>& values() const { return impl_->data; }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool rg) {
    impl_->requires_grad = rg;
    return *this;
  }

  /// Gradient from the most recent backward pass that touched this tensor.
  /// Returns an all-zero vector of matching size if none did.
  std::vector<float> grad() const;

  /// Value of a single-element tensor.
  float item() const;

  bool all_finite() const;
  Tensor clone() const;  // deep copy of values (drops grad, keeps flag)

  std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Reverse-mode tape, rebuilt per forward pass (define-by-run). Constructing
/// a Tape makes it the active recorder for the current thread; ops executed
/// while one is active record backward closures when an input requires grad.
/// With no active tape every op is a pure function.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  /// Backpropagate from a scalar loss. Visits each recorded node exactly
  /// once, in reverse execution order, accumulating into `grad` buffers of
  /// every tensor that requires grad.
  void backward(const Tensor& loss);

  size_t size() const { return nodes_.size(); }

  struct Node {
    std::shared_ptr<detail::TensorImpl> out;
    std::vector<std::shared_ptr<detail::TensorImpl>> ins;
    std::function<void(const std::vector<float>&)> backprop;
  };
  void record(Node node) { nodes_.push_back(std::move(node)); }

 private:
  std::vector<Node> nodes_;
  Tape* prev_ = nullptr;
};

enum class MapMode { Relu, Sigmoid, Square, Neg, AddConst, Sqrt, Rsqrt };
enum class ReduceMode { Sum, Mean, Max };

// ---- differentiable operations ------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

/// Elementwise map. AddConst uses `c`; the other modes ignore it.
Tensor elementwise_map(const Tensor& x, MapMode mode, float c = 0.0f);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor square(const Tensor& x);
Tensor sqrt(const Tensor& x);   // domain: x > 0
Tensor rsqrt(const Tensor& x);  // domain: x > 0
Tensor neg(const Tensor& x);
Tensor add_const(const Tensor& x, float c);
Tensor scale(const Tensor& x, float c);

/// Reduce over `axes` (non-empty, unique, in range). The output drops the
/// reduced axes; reducing every axis yields a rank-0 scalar.
Tensor reduce(const Tensor& x, const std::set<int>& axes, ReduceMode mode);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

/// 1-D convolution along the last axis of x[B,C,T] with kernel[Cout,C,k]
/// (k odd), "same" zero padding then stride: T' = ceil(T / stride).
Tensor temporal_conv1d(const Tensor& x, const Tensor& kernel, int stride);

Tensor reshape(const Tensor& x, Shape new_shape);
Tensor transpose_nd(const Tensor& x, const std::vector<int>& perm);

Tensor take_row(const Tensor& x, int row);            // [N,P] -> [P]
Tensor stack_rows(const std::vector<Tensor>& rows);   // N x [P] -> [N,P]
Tensor add_rowvec(const Tensor& x, const Tensor& b);  // [M,N] + [N]
Tensor mul_rowvec(const Tensor& x, const Tensor& b);  // [M,N] * [N]
Tensor mul_scalar_tensor(const Tensor& x, const Tensor& s);  // s rank-0

/// Rotation matrix of a unit quaternion [w,x,y,z] with hand-coded Jacobian.
Tensor quat_to_rotmat(const Tensor& q);

/// Places w[k] symmetrically at the k-th undirected edge of a J-joint graph
/// with unit diagonal: out[i][j] = out[j][i] = w[k], out[i][i] = 1, zero
/// elsewhere.
Tensor edge_weights_to_adjacency(const Tensor& w,
                                 const std::vector<std::pair<int, int>>& edges,
                                 int joints);

/// Mean softmax cross entropy of logits[B,K] against integer labels.
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);
/// Row-wise softmax probabilities (pure value helper, never recorded).
std::vector<float> softmax_rows(const Tensor& logits);

/// x scaled to unit L2 norm (rank-1). Caller must ensure the norm is
/// bounded away from zero; see SkeletonAugmenter for the guarded use.
Tensor l2_normalize(const Tensor& x);

/// Symmetric normalization A -> D^{-1/2} A D^{-1/2} with D_ii = row sum.
/// Rows must sum to a positive value.
Tensor normalized_adjacency(const Tensor& a);

/// Max over coordinates of |autodiff - central difference| relative error,
/// with the convention |a-n| / max(1, |a|, |n|). `f` must produce a finite
/// scalar and must not manage tapes itself. eps must lie in [1e-6, 1e-2].
float check_gradients(const std::function<Tensor(const Tensor&)>& f, Tensor x, float eps);

}  // namespace dmmg
