#include "dmmg/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include "dmmg/errors.hpp"

namespace dmmg {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

std::string shape_str(const Shape& s) {
  std::ostringstream o;
  o << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) o << ',';
    o << s[i];
  }
  o << ']';
  return o.str();
}

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

std::vector<std::int64_t> row_major_strides(const Shape& s) {
  std::vector<std::int64_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
    st[static_cast<size_t>(i)] = st[static_cast<size_t>(i + 1)] * s[static_cast<size_t>(i + 1)];
  return st;
}

void ensure_grad_zeroed(const std::shared_ptr<detail::TensorImpl>& t) {
  t->grad.assign(t->data.size(), 0.0f);
}

using Impl = std::shared_ptr<detail::TensorImpl>;

/// Marks `out` as requiring grad when any input does, and records a backward
/// closure on the active tape. With no tape (or no grad-requiring input) the
/// op stays a pure function.
void maybe_record(Tensor& out, const std::vector<Tensor>& ins,
                  std::function<void(const std::vector<float>&)> backprop) {
  bool any = false;
  for (const auto& in : ins) any = any || in.requires_grad();
  if (any) out.set_requires_grad(true);
  Tape* tape = Tape::active();
  if (!tape || !any) return;
  Tape::Node node;
  node.out = out.impl();
  node.ins.reserve(ins.size());
  for (const auto& in : ins) node.ins.push_back(in.impl());
  node.backprop = std::move(backprop);
  tape->record(std::move(node));
}

void require_rank(const Tensor& t, int rank, const char* op) {
  if (t.rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     " input, got shape " + shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

}  // namespace

// ---- Tensor ---------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  Tensor t;
  std::int64_t n = shape_numel(shape);
  t.impl_->shape = std::move(shape);
  t.impl_->data.assign(static_cast<size_t>(n), 0.0f);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::full(Shape shape, float value) {
  Tensor t = zeros(std::move(shape));
  std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<float> data, bool requires_grad) {
  std::int64_t n = shape_numel(shape);
  if (n != static_cast<std::int64_t>(data.size()))
    throw ShapeError("from_data: shape " + shape_str(shape) + " wants " + std::to_string(n) +
                     " values, got " + std::to_string(data.size()));
  Tensor t;
  t.impl_->shape = std::move(shape);
  t.impl_->data = std::move(data);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(float value) { return from_data({}, {value}); }

std::vector<float> Tensor::grad() const {
  if (impl_->grad.size() == impl_->data.size()) return impl_->grad;
  return std::vector<float>(impl_->data.size(), 0.0f);
}

float Tensor::item() const {
  if (numel() != 1)
    throw ContractError("item: tensor with shape " + shape_str(impl_->shape) +
                        " is not a single value");
  return impl_->data[0];
}

bool Tensor::all_finite() const {
  for (float v : impl_->data)
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor Tensor::clone() const {
  Tensor t;
  t.impl_->shape = impl_->shape;
  t.impl_->data = impl_->data;
  t.impl_->requires_grad = impl_->requires_grad;
  return t;
}

// ---- Tape -------------------------------------------------------------------

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape::Tape() : prev_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw ContractError("backward: loss must be a single value, got shape " +
                        shape_str(loss.shape()));
  if (!std::isfinite(loss.data()[0]))
    throw NumericError("backward: loss is not finite");
  for (auto& node : nodes_) {
    ensure_grad_zeroed(node.out);
    for (auto& in : node.ins) ensure_grad_zeroed(in);
  }
  ensure_grad_zeroed(loss.impl());
  loss.impl()->grad[0] = 1.0f;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backprop(it->out->grad);
}

// ---- binary elementwise ----------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.dim(1) != b.dim(0))
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros({m, n});
  ConstMapMat am(a.data(), m, k), bm(b.data(), k, n);
  MapMat(out.mutable_data(), m, n).noalias() = am * bm;
  Impl ai = a.impl(), bi = b.impl();
  maybe_record(out, {a, b}, [ai, bi, m, k, n](const std::vector<float>& g) {
    ConstMapMat gm(g.data(), m, n);
    ConstMapMat am(ai->data.data(), m, k), bm(bi->data.data(), k, n);
    if (ai->requires_grad) MapMat(ai->grad.data(), m, k).noalias() += gm * bm.transpose();
    if (bi->requires_grad) MapMat(bi->grad.data(), k, n).noalias() += am.transpose() * gm;
  });
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) out.mutable_data()[i] = a.data()[i] + b.data()[i];
  Impl ai = a.impl(), bi = b.impl();
  maybe_record(out, {a, b}, [ai, bi, n](const std::vector<float>& g) {
    if (ai->requires_grad)
      for (std::int64_t i = 0; i < n; ++i) ai->grad[static_cast<size_t>(i)] += g[static_cast<size_t>(i)];
    if (bi->requires_grad)
      for (std::int64_t i = 0; i < n; ++i) bi->grad[static_cast<size_t>(i)] += g[static_cast<size_t>(i)];
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape());
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) out.mutable_data()[i] = a.data()[i] - b.data()[i];
  Impl ai = a.impl(), bi = b.impl();
  maybe_record(out, {a, b}, [ai, bi, n](const std::vector<float>& g) {
    if (ai->requires_grad)
      for (std::int64_t i = 0; i < n; ++i) ai->grad[static_cast<size_t>(i)] += g[static_cast<size_t>(i)];
    if (bi->requires_grad)
      for (std::int64_t i = 0; i < n; ++i) bi->grad[static_cast<size_t>(i)] -= g[static_cast<size_t>(i)];
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) out.mutable_data()[i] = a.data()[i] * b.data()[i];
  Impl ai = a.impl(), bi = b.impl();
  maybe_record(out, {a, b}, [ai, bi, n](const std::vector<float>& g) {
    for (std::int64_t i = 0; i < n; ++i) {
      size_t s = static_cast<size_t>(i);
      if (ai->requires_grad) ai->grad[s] += g[s] * bi->data[s];
      if (bi->requires_grad) bi->grad[s] += g[s] * ai->data[s];
    }
  });
  return out;
}

// ---- unary elementwise -------------------------------------------------------

Tensor elementwise_map(const Tensor& x, MapMode mode, float c) {
  Tensor out = Tensor::zeros(x.shape());
  const std::int64_t n = x.numel();
  const float* xd = x.data();
  float* od = out.mutable_data();
  switch (mode) {
    case MapMode::Relu:
      for (std::int64_t i = 0; i < n; ++i) od[i] = xd[i] > 0.0f ? xd[i] : 0.0f;
      break;
    case MapMode::Sigmoid:
      for (std::int64_t i = 0; i < n; ++i) od[i] = 1.0f / (1.0f + std::exp(-xd[i]));
      break;
    case MapMode::Square:
      for (std::int64_t i = 0; i < n; ++i) od[i] = xd[i] * xd[i];
      break;
    case MapMode::Neg:
      for (std::int64_t i = 0; i < n; ++i) od[i] = -xd[i];
      break;
    case MapMode::AddConst:
      for (std::int64_t i = 0; i < n; ++i) od[i] = xd[i] + c;
      break;
    case MapMode::Sqrt:
      for (std::int64_t i = 0; i < n; ++i) {
        if (xd[i] < 0.0f) throw NumericError("sqrt: negative input " + std::to_string(xd[i]));
        od[i] = std::sqrt(xd[i]);
      }
      break;
    case MapMode::Rsqrt:
      for (std::int64_t i = 0; i < n; ++i) {
        if (xd[i] <= 0.0f) throw NumericError("rsqrt: non-positive input " + std::to_string(xd[i]));
        od[i] = 1.0f / std::sqrt(xd[i]);
      }
      break;
  }
  Impl xi = x.impl(), oi = out.impl();
  maybe_record(out, {x}, [xi, oi, mode, n](const std::vector<float>& g) {
    if (!xi->requires_grad) return;
    for (std::int64_t i = 0; i < n; ++i) {
      size_t s = static_cast<size_t>(i);
      float d = 0.0f;
      switch (mode) {
        case MapMode::Relu: d = xi->data[s] > 0.0f ? 1.0f : 0.0f; break;
        case MapMode::Sigmoid: d = oi->data[s] * (1.0f - oi->data[s]); break;
        case MapMode::Square: d = 2.0f * xi->data[s]; break;
        case MapMode::Neg: d = -1.0f; break;
        case MapMode::AddConst: d = 1.0f; break;
        case MapMode::Sqrt: d = 0.5f / oi->data[s]; break;
        case MapMode::Rsqrt: d = -0.5f * oi->data[s] * oi->data[s] * oi->data[s]; break;
      }
      xi->grad[s] += g[s] * d;
    }
  });
  return out;
}

Tensor relu(const Tensor& x) { return elementwise_map(x, MapMode::Relu); }
Tensor sigmoid(const Tensor& x) { return elementwise_map(x, MapMode::Sigmoid); }
Tensor square(const Tensor& x) { return elementwise_map(x, MapMode::Square); }
Tensor sqrt(const Tensor& x) { return elementwise_map(x, MapMode::Sqrt); }
Tensor rsqrt(const Tensor& x) { return elementwise_map(x, MapMode::Rsqrt); }
Tensor neg(const Tensor& x) { return elementwise_map(x, MapMode::Neg); }
Tensor add_const(const Tensor& x, float c) { return elementwise_map(x, MapMode::AddConst, c); }

Tensor scale(const Tensor& x, float c) {
  Tensor out = Tensor::zeros(x.shape());
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) out.mutable_data()[i] = c * x.data()[i];
  Impl xi = x.impl();
  maybe_record(out, {x}, [xi, c, n](const std::vector<float>& g) {
    if (!xi->requires_grad) return;
    for (std::int64_t i = 0; i < n; ++i)
      xi->grad[static_cast<size_t>(i)] += c * g[static_cast<size_t>(i)];
  });
  return out;
}

// ---- reductions ----------------------------------------------------------------

Tensor reduce(const Tensor& x, const std::set<int>& axes, ReduceMode mode) {
  if (axes.empty()) throw ConfigError("reduce: axes must be non-empty");
  for (int a : axes)
    if (a < 0 || a >= x.rank())
      throw ShapeError("reduce: axis " + std::to_string(a) + " out of range for shape " +
                       shape_str(x.shape()));
  const int rank = x.rank();
  Shape out_shape;
  std::vector<bool> reduced(static_cast<size_t>(rank), false);
  for (int a : axes) reduced[static_cast<size_t>(a)] = true;
  std::int64_t count = 1;
  for (int d = 0; d < rank; ++d) {
    if (reduced[static_cast<size_t>(d)])
      count *= x.dim(d);
    else
      out_shape.push_back(x.dim(d));
  }
  if (count == 0) throw DegenerateError("reduce: reduction over an empty extent");
  if (x.numel() == 0) throw DegenerateError("reduce: input has no elements");

  Tensor out = mode == ReduceMode::Max
                   ? Tensor::full(out_shape, -std::numeric_limits<float>::infinity())
                   : Tensor::zeros(out_shape);
  auto in_strides = row_major_strides(x.shape());
  auto out_strides = row_major_strides(out_shape);
  // out stride attached to each kept input axis, 0 for reduced axes
  std::vector<std::int64_t> axis_out_stride(static_cast<size_t>(rank), 0);
  {
    int kept = 0;
    for (int d = 0; d < rank; ++d)
      if (!reduced[static_cast<size_t>(d)]) axis_out_stride[static_cast<size_t>(d)] = out_strides[static_cast<size_t>(kept++)];
  }
  const std::int64_t n = x.numel();
  std::vector<std::int64_t> argmax;
  if (mode == ReduceMode::Max) argmax.assign(static_cast<size_t>(out.numel()), -1);
  for (std::int64_t i = 0; i < n; ++i) {
    std::int64_t oi = 0, rem = i;
    for (int d = 0; d < rank; ++d) {
      std::int64_t coord = rem / in_strides[static_cast<size_t>(d)];
      rem %= in_strides[static_cast<size_t>(d)];
      oi += coord * axis_out_stride[static_cast<size_t>(d)];
    }
    float v = x.data()[i];
    float* o = out.mutable_data() + oi;
    switch (mode) {
      case ReduceMode::Sum:
      case ReduceMode::Mean: *o += v; break;
      case ReduceMode::Max:
        if (v > *o) {
          *o = v;
          argmax[static_cast<size_t>(oi)] = i;
        }
        break;
    }
  }
  if (mode == ReduceMode::Mean) {
    float inv = 1.0f / static_cast<float>(count);
    for (std::int64_t i = 0; i < out.numel(); ++i) out.mutable_data()[i] *= inv;
  }

  Impl xi = x.impl();
  Shape xshape = x.shape();
  maybe_record(out, {x}, [xi, xshape, reduced, mode, count, argmax](const std::vector<float>& g) {
    if (!xi->requires_grad) return;
    if (mode == ReduceMode::Max) {
      for (size_t oi = 0; oi < argmax.size(); ++oi)
        if (argmax[oi] >= 0) xi->grad[static_cast<size_t>(argmax[oi])] += g[oi];
      return;
    }
    const int rank = static_cast<int>(xshape.size());
    auto in_strides = row_major_strides(xshape);
    Shape out_shape;
    for (int d = 0; d < rank; ++d)
      if (!reduced[static_cast<size_t>(d)]) out_shape.push_back(xshape[static_cast<size_t>(d)]);
    auto out_strides = row_major_strides(out_shape);
    std::vector<std::int64_t> axis_out_stride(static_cast<size_t>(rank), 0);
    int kept = 0;
    for (int d = 0; d < rank; ++d)
      if (!reduced[static_cast<size_t>(d)]) axis_out_stride[static_cast<size_t>(d)] = out_strides[static_cast<size_t>(kept++)];
    const float inv = mode == ReduceMode::Mean ? 1.0f / static_cast<float>(count) : 1.0f;
    const std::int64_t n = static_cast<std::int64_t>(xi->data.size());
    for (std::int64_t i = 0; i < n; ++i) {
      std::int64_t oi = 0, rem = i;
      for (int d = 0; d < rank; ++d) {
        std::int64_t coord = rem / in_strides[static_cast<size_t>(d)];
        rem %= in_strides[static_cast<size_t>(d)];
        oi += coord * axis_out_stride[static_cast<size_t>(d)];
      }
      xi->grad[static_cast<size_t>(i)] += g[static_cast<size_t>(oi)] * inv;
    }
  });
  return out;
}

Tensor sum_all(const Tensor& x) {
  if (x.rank() == 0) return x;
  std::set<int> axes;
  for (int d = 0; d < x.rank(); ++d) axes.insert(d);
  return reduce(x, axes, ReduceMode::Sum);
}

Tensor mean_all(const Tensor& x) {
  if (x.rank() == 0) return x;
  std::set<int> axes;
  for (int d = 0; d < x.rank(); ++d) axes.insert(d);
  return reduce(x, axes, ReduceMode::Mean);
}

// ---- temporal convolution -----------------------------------------------------

namespace {
// col[(c*K+dk)*Tp + tp] = x[b,c,tp*stride+dk-pad], zero outside [0,T)
void im2col(const float* xb, int C, int T, int K, int stride, int Tp, float* col) {
  const int pad = K / 2;
  for (int c = 0; c < C; ++c)
    for (int dk = 0; dk < K; ++dk) {
      float* row = col + (static_cast<std::int64_t>(c) * K + dk) * Tp;
      for (int tp = 0; tp < Tp; ++tp) {
        int t = tp * stride + dk - pad;
        row[tp] = (t >= 0 && t < T) ? xb[static_cast<std::int64_t>(c) * T + t] : 0.0f;
      }
    }
}
}  // namespace

Tensor temporal_conv1d(const Tensor& x, const Tensor& kernel, int stride) {
  require_rank(x, 3, "temporal_conv1d");
  require_rank(kernel, 3, "temporal_conv1d kernel");
  const int B = x.dim(0), C = x.dim(1), T = x.dim(2);
  const int Cout = kernel.dim(0), K = kernel.dim(2);
  if (kernel.dim(1) != C)
    throw ShapeError("temporal_conv1d: kernel expects " + std::to_string(kernel.dim(1)) +
                     " channels, input has " + std::to_string(C));
  if (K % 2 == 0) throw ConfigError("temporal_conv1d: kernel size must be odd, got " + std::to_string(K));
  if (stride < 1) throw ConfigError("temporal_conv1d: stride must be positive, got " + std::to_string(stride));
  const int Tp = (T + stride - 1) / stride;
  const int CK = C * K;
  Tensor out = Tensor::zeros({B, Cout, Tp});
  std::vector<float> col(static_cast<size_t>(CK) * Tp);
  ConstMapMat km(kernel.data(), Cout, CK);
  for (int b = 0; b < B; ++b) {
    im2col(x.data() + static_cast<std::int64_t>(b) * C * T, C, T, K, stride, Tp, col.data());
    ConstMapMat cm(col.data(), CK, Tp);
    MapMat(out.mutable_data() + static_cast<std::int64_t>(b) * Cout * Tp, Cout, Tp).noalias() = km * cm;
  }
  Impl xi = x.impl(), ki = kernel.impl();
  maybe_record(out, {x, kernel}, [xi, ki, B, C, T, Cout, K, stride, Tp, CK](const std::vector<float>& g) {
    std::vector<float> col(static_cast<size_t>(CK) * Tp);
    ConstMapMat km(ki->data.data(), Cout, CK);
    const int pad = K / 2;
    for (int b = 0; b < B; ++b) {
      ConstMapMat gm(g.data() + static_cast<std::int64_t>(b) * Cout * Tp, Cout, Tp);
      if (ki->requires_grad) {
        im2col(xi->data.data() + static_cast<std::int64_t>(b) * C * T, C, T, K, stride, Tp, col.data());
        ConstMapMat cm(col.data(), CK, Tp);
        MapMat(ki->grad.data(), Cout, CK).noalias() += gm * cm.transpose();
      }
      if (xi->requires_grad) {
        RowMat dcol = km.transpose() * gm;  // [CK, Tp]
        float* dxb = xi->grad.data() + static_cast<std::int64_t>(b) * C * T;
        for (int c = 0; c < C; ++c)
          for (int dk = 0; dk < K; ++dk)
            for (int tp = 0; tp < Tp; ++tp) {
              int t = tp * stride + dk - pad;
              if (t >= 0 && t < T)
                dxb[static_cast<std::int64_t>(c) * T + t] += dcol(c * K + dk, tp);
            }
      }
    }
  });
  return out;
}

// ---- layout ops ------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape new_shape) {
  std::int64_t n = shape_numel(new_shape);
  if (n != x.numel())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(new_shape));
  Tensor out = Tensor::from_data(std::move(new_shape), x.values());
  Impl xi = x.impl();
  maybe_record(out, {x}, [xi, n](const std::vector<float>& g) {
    if (!xi->requires_grad) return;
    for (std::int64_t i = 0; i < n; ++i)
      xi->grad[static_cast<size_t>(i)] += g[static_cast<size_t>(i)];
  });
  return out;
}

Tensor transpose_nd(const Tensor& x, const std::vector<int>& perm) {
  const int rank = x.rank();
  if (static_cast<int>(perm.size()) != rank)
    throw ConfigError("transpose_nd: permutation length " + std::to_string(perm.size()) +
                      " does not match rank " + std::to_string(rank));
  std::vector<bool> seen(static_cast<size_t>(rank), false);
  for (int p : perm) {
    if (p < 0 || p >= rank || seen[static_cast<size_t>(p)])
      throw ConfigError("transpose_nd: invalid permutation");
    seen[static_cast<size_t>(p)] = true;
  }
  Shape out_shape(static_cast<size_t>(rank));
  for (int d = 0; d < rank; ++d) out_shape[static_cast<size_t>(d)] = x.dim(perm[static_cast<size_t>(d)]);
  Tensor out = Tensor::zeros(out_shape);
  auto in_strides = row_major_strides(x.shape());
  auto out_strides = row_major_strides(out_shape);
  // out coordinate d reads input axis perm[d]; scatter from input order
  std::vector<std::int64_t> scatter(static_cast<size_t>(rank), 0);
  for (int d = 0; d < rank; ++d) scatter[static_cast<size_t>(perm[static_cast<size_t>(d)])] = out_strides[static_cast<size_t>(d)];
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    std::int64_t oi = 0, rem = i;
    for (int d = 0; d < rank; ++d) {
      std::int64_t coord = rem / in_strides[static_cast<size_t>(d)];
      rem %= in_strides[static_cast<size_t>(d)];
      oi += coord * scatter[static_cast<size_t>(d)];
    }
    out.mutable_data()[oi] = x.data()[i];
  }
  Impl xi = x.impl();
  Shape xshape = x.shape();
  maybe_record(out, {x}, [xi, xshape, perm](const std::vector<float>& g) {
    if (!xi->requires_grad) return;
    const int rank = static_cast<int>(xshape.size());
    auto in_strides = row_major_strides(xshape);
    Shape out_shape(static_cast<size_t>(rank));
    for (int d = 0; d < rank; ++d) out_shape[static_cast<size_t>(d)] = xshape[static_cast<size_t>(perm[static_cast<size_t>(d)])];
    auto out_strides = row_major_strides(out_shape);
    std::vector<std::int64_t> scatter(static_cast<size_t>(rank), 0);
    for (int d = 0; d < rank; ++d) scatter[static_cast<size_t>(perm[static_cast<size_t>(d)])] = out_strides[static_cast<size_t>(d)];
    const std::int64_t n = static_cast<std::int64_t>(xi->data.size());
    for (std::int64_t i = 0; i < n; ++i) {
      std::int64_t oi = 0, rem = i;
      for (int d = 0; d < rank; ++d) {
        std::int64_t coord = rem / in_strides[static_cast<size_t>(d)];
        rem %= in_strides[static_cast<size_t>(d)];
        oi += coord * scatter[static_cast<size_t>(d)];
      }
      xi->grad[static_cast<size_t>(i)] += g[static_cast<size_t>(oi)];
    }
  });
  return out;
}

Tensor take_row(const Tensor& x, int row) {
  require_rank(x, 2, "take_row");
  const int n = x.dim(0), p = x.dim(1);
  if (row < 0 || row >= n)
    throw ShapeError("take_row: row " + std::to_string(row) + " out of range for " +
                     shape_str(x.shape()));
  std::vector<float> vals(x.data() + static_cast<std::int64_t>(row) * p,
                          x.data() + static_cast<std::int64_t>(row + 1) * p);
  Tensor out = Tensor::from_data({p}, std::move(vals));
  Impl xi = x.impl();
  maybe_record(out, {x}, [xi, row, p](const std::vector<float>& g) {
    if (!xi->requires_grad) return;
    for (int j = 0; j < p; ++j)
      xi->grad[static_cast<size_t>(row) * p + static_cast<size_t>(j)] += g[static_cast<size_t>(j)];
  });
  return out;
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw ShapeError("stack_rows: no rows given");
  const int p = static_cast<int>(rows[0].numel());
  for (const auto& r : rows) {
    if (r.rank() != 1 || r.numel() != p)
      throw ShapeError("stack_rows: rows must all be length " + std::to_string(p) +
                       " vectors, got " + shape_str(r.shape()));
  }
  const int n = static_cast<int>(rows.size());
  Tensor out = Tensor::zeros({n, p});
  for (int i = 0; i < n; ++i)
    std::memcpy(out.mutable_data() + static_cast<std::int64_t>(i) * p, rows[i].data(),
                sizeof(float) * static_cast<size_t>(p));
  std::vector<Impl> impls;
  impls.reserve(rows.size());
  for (const auto& r : rows) impls.push_back(r.impl());
  maybe_record(out, rows, [impls, p](const std::vector<float>& g) {
    for (size_t i = 0; i < impls.size(); ++i) {
      if (!impls[i]->requires_grad) continue;
      for (int j = 0; j < p; ++j)
        impls[i]->grad[static_cast<size_t>(j)] += g[i * static_cast<size_t>(p) + static_cast<size_t>(j)];
    }
  });
  return out;
}

Tensor add_rowvec(const Tensor& x, const Tensor& b) {
  require_rank(x, 2, "add_rowvec");
  require_rank(b, 1, "add_rowvec bias");
  const int m = x.dim(0), n = x.dim(1);
  if (b.dim(0) != n)
    throw ShapeError("add_rowvec: bias length " + std::to_string(b.dim(0)) +
                     " does not match columns " + std::to_string(n));
  Tensor out = Tensor::zeros({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out.mutable_data()[static_cast<std::int64_t>(i) * n + j] =
          x.data()[static_cast<std::int64_t>(i) * n + j] + b.data()[j];
  Impl xi = x.impl(), bi = b.impl();
  maybe_record(out, {x, b}, [xi, bi, m, n](const std::vector<float>& g) {
    if (xi->requires_grad)
      for (size_t i = 0; i < static_cast<size_t>(m) * n; ++i) xi->grad[i] += g[i];
    if (bi->requires_grad)
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          bi->grad[static_cast<size_t>(j)] += g[static_cast<size_t>(i) * n + static_cast<size_t>(j)];
  });
  return out;
}

Tensor mul_rowvec(const Tensor& x, const Tensor& b) {
  require_rank(x, 2, "mul_rowvec");
  require_rank(b, 1, "mul_rowvec scale");
  const int m = x.dim(0), n = x.dim(1);
  if (b.dim(0) != n)
    throw ShapeError("mul_rowvec: scale length " + std::to_string(b.dim(0)) +
                     " does not match columns " + std::to_string(n));
  Tensor out = Tensor::zeros({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out.mutable_data()[static_cast<std::int64_t>(i) * n + j] =
          x.data()[static_cast<std::int64_t>(i) * n + j] * b.data()[j];
  Impl xi = x.impl(), bi = b.impl();
  maybe_record(out, {x, b}, [xi, bi, m, n](const std::vector<float>& g) {
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        const size_t flat = static_cast<size_t>(i) * n + static_cast<size_t>(j);
        if (xi->requires_grad) xi->grad[flat] += g[flat] * bi->data[static_cast<size_t>(j)];
        if (bi->requires_grad) bi->grad[static_cast<size_t>(j)] += g[flat] * xi->data[flat];
      }
  });
  return out;
}

Tensor mul_scalar_tensor(const Tensor& x, const Tensor& s) {
  if (s.numel() != 1)
    throw ShapeError("mul_scalar_tensor: scale must be a single value, got " +
                     shape_str(s.shape()));
  Tensor out = Tensor::zeros(x.shape());
  const float sv = s.data()[0];
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) out.mutable_data()[i] = sv * x.data()[i];
  Impl xi = x.impl(), si = s.impl();
  maybe_record(out, {x, s}, [xi, si, n](const std::vector<float>& g) {
    const float sv = si->data[0];
    if (xi->requires_grad)
      for (std::int64_t i = 0; i < n; ++i)
        xi->grad[static_cast<size_t>(i)] += sv * g[static_cast<size_t>(i)];
    if (si->requires_grad) {
      float acc = 0.0f;
      for (std::int64_t i = 0; i < n; ++i)
        acc += g[static_cast<size_t>(i)] * xi->data[static_cast<size_t>(i)];
      si->grad[0] += acc;
    }
  });
  return out;
}

// ---- structured ops ------------------------------------------------------------

Tensor quat_to_rotmat(const Tensor& q) {
  if (q.rank() != 1 || q.dim(0) != 4)
    throw ShapeError("quat_to_rotmat: expected a length 4 quaternion, got " + shape_str(q.shape()));
  const float w = q.data()[0], x = q.data()[1], y = q.data()[2], z = q.data()[3];
  std::vector<float> r = {
      1 - 2 * (y * y + z * z), 2 * (x * y - w * z),     2 * (x * z + w * y),
      2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y)};
  Tensor out = Tensor::from_data({3, 3}, std::move(r));
  Impl qi = q.impl();
  maybe_record(out, {q}, [qi](const std::vector<float>& g) {
    if (!qi->requires_grad) return;
    const float w = qi->data[0], x = qi->data[1], y = qi->data[2], z = qi->data[3];
    // rows: dR_ij/dw, dR_ij/dx, dR_ij/dy, dR_ij/dz for the 9 entries of R
    const float jac[4][9] = {
        {0, -2 * z, 2 * y, 2 * z, 0, -2 * x, -2 * y, 2 * x, 0},
        {0, 2 * y, 2 * z, 2 * y, -4 * x, -2 * w, 2 * z, 2 * w, -4 * x},
        {-4 * y, 2 * x, 2 * w, 2 * x, 0, 2 * z, -2 * w, 2 * z, -4 * y},
        {-4 * z, -2 * w, 2 * x, 2 * w, -4 * z, 2 * y, 2 * x, 2 * y, 0}};
    for (int k = 0; k < 4; ++k) {
      float acc = 0.0f;
      for (int e = 0; e < 9; ++e) acc += g[static_cast<size_t>(e)] * jac[k][e];
      qi->grad[static_cast<size_t>(k)] += acc;
    }
  });
  return out;
}

Tensor edge_weights_to_adjacency(const Tensor& w,
                                 const std::vector<std::pair<int, int>>& edges, int joints) {
  require_rank(w, 1, "edge_weights_to_adjacency");
  if (w.dim(0) != static_cast<int>(edges.size()))
    throw ShapeError("edge_weights_to_adjacency: " + std::to_string(w.dim(0)) +
                     " weights for " + std::to_string(edges.size()) + " edges");
  if (joints <= 0)
    throw ConfigError("edge_weights_to_adjacency: joint count must be positive");
  std::set<std::pair<int, int>> seen;
  for (const auto& [i, j] : edges) {
    if (i < 0 || i >= joints || j < 0 || j >= joints)
      throw ConfigError("edge_weights_to_adjacency: edge (" + std::to_string(i) + "," +
                        std::to_string(j) + ") outside " + std::to_string(joints) + " joints");
    if (i == j)
      throw ConfigError("edge_weights_to_adjacency: self loop at joint " + std::to_string(i));
    if (!seen.insert({std::min(i, j), std::max(i, j)}).second)
      throw ConfigError("edge_weights_to_adjacency: duplicate edge (" + std::to_string(i) + "," +
                        std::to_string(j) + ")");
  }
  Tensor out = Tensor::zeros({joints, joints});
  for (int d = 0; d < joints; ++d)
    out.mutable_data()[static_cast<std::int64_t>(d) * joints + d] = 1.0f;
  for (size_t k = 0; k < edges.size(); ++k) {
    auto [i, j] = edges[k];
    out.mutable_data()[static_cast<std::int64_t>(i) * joints + j] = w.data()[k];
    out.mutable_data()[static_cast<std::int64_t>(j) * joints + i] = w.data()[k];
  }
  Impl wi = w.impl();
  auto edges_copy = edges;
  maybe_record(out, {w}, [wi, edges_copy, joints](const std::vector<float>& g) {
    if (!wi->requires_grad) return;
    for (size_t k = 0; k < edges_copy.size(); ++k) {
      auto [i, j] = edges_copy[k];
      wi->grad[k] += g[static_cast<size_t>(i) * joints + static_cast<size_t>(j)] +
                     g[static_cast<size_t>(j) * joints + static_cast<size_t>(i)];
    }
  });
  return out;
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  require_rank(logits, 2, "softmax_cross_entropy");
  const int bsz = logits.dim(0), k = logits.dim(1);
  if (static_cast<int>(labels.size()) != bsz)
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for batch of " + std::to_string(bsz));
  for (int l : labels)
    if (l < 0 || l >= k)
      throw ConfigError("softmax_cross_entropy: label " + std::to_string(l) + " outside " +
                        std::to_string(k) + " classes");
  std::vector<float> probs(static_cast<size_t>(bsz) * k);
  double total = 0.0;
  for (int i = 0; i < bsz; ++i) {
    const float* row = logits.data() + static_cast<std::int64_t>(i) * k;
    float m = *std::max_element(row, row + k);
    double denom = 0.0;
    for (int j = 0; j < k; ++j) denom += std::exp(static_cast<double>(row[j] - m));
    for (int j = 0; j < k; ++j)
      probs[static_cast<size_t>(i) * k + static_cast<size_t>(j)] =
          static_cast<float>(std::exp(static_cast<double>(row[j] - m)) / denom);
    total -= static_cast<double>(row[labels[static_cast<size_t>(i)]] - m) - std::log(denom);
  }
  Tensor out = Tensor::scalar(static_cast<float>(total / bsz));
  Impl li = logits.impl();
  maybe_record(out, {logits}, [li, probs, labels, bsz, k](const std::vector<float>& g) {
    if (!li->requires_grad) return;
    const float scale = g[0] / static_cast<float>(bsz);
    for (int i = 0; i < bsz; ++i)
      for (int j = 0; j < k; ++j) {
        float p = probs[static_cast<size_t>(i) * k + static_cast<size_t>(j)];
        float onehot = j == labels[static_cast<size_t>(i)] ? 1.0f : 0.0f;
        li->grad[static_cast<size_t>(i) * k + static_cast<size_t>(j)] += scale * (p - onehot);
      }
  });
  return out;
}

std::vector<float> softmax_rows(const Tensor& logits) {
  require_rank(logits, 2, "softmax_rows");
  const int bsz = logits.dim(0), k = logits.dim(1);
  std::vector<float> probs(static_cast<size_t>(bsz) * k);
  for (int i = 0; i < bsz; ++i) {
    const float* row = logits.data() + static_cast<std::int64_t>(i) * k;
    float m = *std::max_element(row, row + k);
    double denom = 0.0;
    for (int j = 0; j < k; ++j) denom += std::exp(static_cast<double>(row[j] - m));
    for (int j = 0; j < k; ++j)
      probs[static_cast<size_t>(i) * k + static_cast<size_t>(j)] =
          static_cast<float>(std::exp(static_cast<double>(row[j] - m)) / denom);
  }
  return probs;
}

// ---- composed helpers ------------------------------------------------------------

Tensor l2_normalize(const Tensor& x) {
  require_rank(x, 1, "l2_normalize");
  Tensor sq = square(x);
  Tensor total = reduce(sq, {0}, ReduceMode::Sum);
  Tensor inv_norm = elementwise_map(total, MapMode::Rsqrt);
  return mul_scalar_tensor(x, inv_norm);
}

Tensor normalized_adjacency(const Tensor& a) {
  require_rank(a, 2, "normalized_adjacency");
  const int j = a.dim(0);
  if (a.dim(1) != j)
    throw ShapeError("normalized_adjacency: matrix must be square, got " + shape_str(a.shape()));
  Tensor degree = reduce(a, {1}, ReduceMode::Sum);
  for (int i = 0; i < j; ++i)
    if (degree.data()[i] <= 0.0f)
      throw DegenerateError("normalized_adjacency: row " + std::to_string(i) +
                            " sums to " + std::to_string(degree.data()[i]));
  Tensor inv_sqrt = elementwise_map(degree, MapMode::Rsqrt);
  Tensor outer = matmul(reshape(inv_sqrt, {j, 1}), reshape(inv_sqrt, {1, j}));
  return mul(a, outer);
}

// ---- gradient checking --------------------------------------------------------------

float check_gradients(const std::function<Tensor(const Tensor&)>& f, Tensor x, float eps) {
  if (!(eps >= 1e-6f && eps <= 1e-2f))
    throw ConfigError("check_gradients: eps " + std::to_string(eps) +
                      " outside [1e-6, 1e-2]");
  x.set_requires_grad(true);
  std::vector<float> analytic;
  {
    Tape tape;
    Tensor y = f(x);
    if (y.numel() != 1)
      throw ContractError("check_gradients: function output has shape " + shape_str(y.shape()));
    tape.backward(y);
    analytic = x.grad();
  }
  float worst = 0.0f;
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    const float saved = x.data()[i];
    x.mutable_data()[i] = saved + eps;
    float up = f(x).item();
    x.mutable_data()[i] = saved - eps;
    float down = f(x).item();
    x.mutable_data()[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw NumericError("check_gradients: function is not finite near coordinate " +
                         std::to_string(i));
    float numeric = (up - down) / (2.0f * eps);
    float a = analytic[static_cast<size_t>(i)];
    float denom = std::max({1.0f, std::fabs(a), std::fabs(numeric)});
    worst = std::max(worst, std::fabs(a - numeric) / denom);
  }
  return worst;
}

}  // namespace dmmg
