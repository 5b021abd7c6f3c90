#pragma once

// Differentiable operations on Tensor<T>.
//
// Conventions shared by every op here:
//  * image-like tensors are NCHW, row-major;
//  * two non-scalar operands must have identical shapes (a rank-0 tensor
//    broadcasts against anything);
//  * the subgradient at the kink of relu/abs/scalar_max is 0;
//  * reductions run in a single fixed order, so results are reproducible.

#include <Eigen/Core>

#include "uacanet/tensor.hpp"

namespace uacanet {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
const std::vector<T>& in_data(const TensorImpl<T>& out, std::size_t k) {
  return out.node->inputs[k]->data;
}

/// Gradient buffer of operand k, or nullptr when it does not need one.
template <typename T>
T* in_grad(const TensorImpl<T>& out, std::size_t k) {
  auto& in = out.node->inputs[k];
  return in->requires_grad ? in->grad.data() : nullptr;
}

inline bool is_scalar_shape(const Shape& s) { return s.empty(); }

template <typename T>
Shape binary_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() == b.shape()) return a.shape();
  if (is_scalar_shape(a.shape())) return b.shape();
  if (is_scalar_shape(b.shape())) return a.shape();
  throw ShapeError(concat_msg(op, ": shape mismatch ", shape_str(a.shape()), " vs ",
                              shape_str(b.shape())));
}

/// Shared driver for element-wise binary ops. `fwd(x, y)` computes the value,
/// `dx(x, y, z)`/`dy(x, y, z)` the partials given the output z.
template <typename T, typename Fwd, typename Dx, typename Dy>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, const char* name, Fwd fwd, Dx dx,
                    Dy dy) {
  Shape shape = binary_shape(a, b, name);
  const auto n = static_cast<std::size_t>(numel_of(shape));
  const bool a_scalar = a.numel() == 1 && a.shape() != shape;
  const bool b_scalar = b.numel() == 1 && b.shape() != shape;
  std::vector<T> out(n);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[a_scalar ? 0 : i], bv[b_scalar ? 0 : i]);
  return make_result<T>(
      std::move(shape), std::move(out), name, {a, b},
      [a_scalar, b_scalar, n, dx, dy](const TensorImpl<T>& o) {
        const auto& x = in_data(o, 0);
        const auto& y = in_data(o, 1);
        T* gx = in_grad(o, 0);
        T* gy = in_grad(o, 1);
        for (std::size_t i = 0; i < n; ++i) {
          const T xi = x[a_scalar ? 0 : i];
          const T yi = y[b_scalar ? 0 : i];
          const T g = o.grad[i];
          if (gx) gx[a_scalar ? 0 : i] += g * dx(xi, yi, o.data[i]);
          if (gy) gy[b_scalar ? 0 : i] += g * dy(xi, yi, o.data[i]);
        }
      });
}

/// Element-wise unary op; `deriv(x, y)` is dy/dx given input x and output y.
template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary_op(const Tensor<T>& a, const char* name, Fwd fwd, Deriv deriv) {
  std::vector<T> out(a.values().size());
  std::transform(a.values().begin(), a.values().end(), out.begin(), fwd);
  return make_result<T>(a.shape(), std::move(out), name, {a}, [deriv](const TensorImpl<T>& o) {
    const auto& x = in_data(o, 0);
    T* gx = in_grad(o, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] += o.grad[i] * deriv(x[i], o.data[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Element-wise arithmetic
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(
      a, b, "add", [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); },
      [](T, T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); },
      [](T, T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y, T) { return y; },
      [](T x, T, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(
      a, b, "div", [](T x, T y) { return x / y; }, [](T, T y, T) { return T(1) / y; },
      [](T x, T y, T) { return -x / (y * y); });
}

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T>
Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  return detail::unary_op(
      a, "add_scalar", [c](T x) { return x + c; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T c) {
  return detail::unary_op(
      a, "mul_scalar", [c](T x) { return x * c; }, [c](T, T) { return c; });
}

/// c - a
template <typename T>
Tensor<T> rsub_scalar(const Tensor<T>& a, T c) {
  return detail::unary_op(
      a, "rsub_scalar", [c](T x) { return c - x; }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> scalar_max(const Tensor<T>& a, T c) {
  return detail::unary_op(
      a, "scalar_max", [c](T x) { return x > c ? x : c; },
      [c](T x, T) { return x > c ? T(1) : T(0); });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
  return detail::unary_op(
      a, "abs", [](T x) { return x < T(0) ? -x : x; },
      [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return detail::unary_op(
      a, "relu", [](T x) { return x > T(0) ? x : T(0); },
      [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return detail::unary_op(
      a, "sigmoid", [](T x) { return sigmoid_scalar(x); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  return detail::unary_op(
      a, "log", [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

/// Clamp into [lo, hi]; gradient passes only strictly inside the interval.
template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  return detail::unary_op(
      a, "clamp", [lo, hi](T x) { return std::min(std::max(x, lo), hi); },
      [lo, hi](T x, T) { return (x > lo && x < hi) ? T(1) : T(0); });
}

// ---------------------------------------------------------------------------
// Reductions and layout
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = T(0);
  for (T v : a.values()) acc += v;
  return detail::make_result<T>(Shape{}, {acc}, "sum", {a}, [](const TensorImpl<T>& o) {
    T* gx = detail::in_grad(o, 0);
    if (!gx) return;
    const auto n = o.node->inputs[0]->data.size();
    for (std::size_t i = 0; i < n; ++i) gx[i] += o.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return mul_scalar(sum(a), T(1) / static_cast<T>(a.numel()));
}

/// Copying reshape; the element count must be preserved.
template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel_of(shape) != a.numel()) {
    throw ShapeError(detail::concat_msg("reshape: ", shape_str(a.shape()), " cannot become ",
                                        shape_str(shape)));
  }
  return detail::make_result<T>(std::move(shape), a.values(), "reshape", {a},
                                [](const TensorImpl<T>& o) {
                                  T* gx = detail::in_grad(o, 0);
                                  if (!gx) return;
                                  for (std::size_t i = 0; i < o.grad.size(); ++i) gx[i] += o.grad[i];
                                });
}

namespace detail {

inline Shape strides_of(const Shape& shape) {
  Shape strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

/// For each output linear index of permute(shape, perm), the source index.
inline std::vector<std::int64_t> permute_index(const Shape& shape, const std::vector<int>& perm) {
  const std::size_t nd = shape.size();
  Shape out_shape(nd);
  for (std::size_t i = 0; i < nd; ++i) out_shape[i] = shape[static_cast<std::size_t>(perm[i])];
  const Shape in_strides = strides_of(shape);
  Shape src_strides(nd);
  for (std::size_t i = 0; i < nd; ++i) src_strides[i] = in_strides[static_cast<std::size_t>(perm[i])];
  const auto n = numel_of(shape);
  std::vector<std::int64_t> index(static_cast<std::size_t>(n));
  std::vector<std::int64_t> counter(nd, 0);
  std::int64_t src = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    index[static_cast<std::size_t>(i)] = src;
    for (std::size_t d = nd; d-- > 0;) {
      if (++counter[d] < out_shape[d]) {
        src += src_strides[d];
        break;
      }
      src -= src_strides[d] * (out_shape[d] - 1);
      counter[d] = 0;
    }
  }
  return index;
}

}  // namespace detail

/// Axis permutation: output axis i is input axis perm[i].
template <typename T>
Tensor<T> permute(const Tensor<T>& a, std::vector<int> perm) {
  const std::size_t nd = a.ndim();
  std::vector<int> check = perm;
  std::sort(check.begin(), check.end());
  for (std::size_t i = 0; i < check.size(); ++i) {
    if (check.size() != nd || check[i] != static_cast<int>(i)) {
      throw ShapeError("permute: invalid axis order for shape " + shape_str(a.shape()));
    }
  }
  Shape out_shape(nd);
  for (std::size_t i = 0; i < nd; ++i) out_shape[i] = a.shape()[static_cast<std::size_t>(perm[i])];
  auto index = std::make_shared<std::vector<std::int64_t>>(detail::permute_index(a.shape(), perm));
  std::vector<T> out(index->size());
  const auto& src = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = src[static_cast<std::size_t>((*index)[i])];
  return detail::make_result<T>(std::move(out_shape), std::move(out), "permute", {a},
                                [index](const TensorImpl<T>& o) {
                                  T* gx = detail::in_grad(o, 0);
                                  if (!gx) return;
                                  for (std::size_t i = 0; i < index->size(); ++i)
                                    gx[(*index)[i]] += o.grad[i];
                                });
}

// ---------------------------------------------------------------------------
// Matrix multiplication
// ---------------------------------------------------------------------------

/// Batched contraction over the last axis of `a` and the second-to-last of
/// `b`. Leading axes must agree or be 1 in one operand (broadcast).
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() < 2 || a.ndim() != b.ndim()) {
    throw ShapeError(detail::concat_msg("matmul: incompatible ranks ", shape_str(a.shape()), " and ",
                                        shape_str(b.shape())));
  }
  const std::size_t nd = a.ndim();
  const std::int64_t m = a.dim(nd - 2), k = a.dim(nd - 1), n = b.dim(nd - 1);
  if (b.dim(nd - 2) != k) {
    throw ShapeError(detail::concat_msg("matmul: inner extent mismatch ", shape_str(a.shape()),
                                        " x ", shape_str(b.shape())));
  }
  Shape out_shape(nd);
  for (std::size_t i = 0; i + 2 < nd; ++i) {
    const auto da = a.dim(i), db = b.dim(i);
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(detail::concat_msg("matmul: batch extents do not broadcast ",
                                          shape_str(a.shape()), " x ", shape_str(b.shape())));
    }
    out_shape[i] = std::max(da, db);
  }
  out_shape[nd - 2] = m;
  out_shape[nd - 1] = n;

  // Offsets (in matrices) of each batch entry inside a and b.
  const std::int64_t batches = numel_of(Shape(out_shape.begin(), out_shape.end() - 2));
  auto offsets = std::make_shared<std::vector<std::pair<std::int64_t, std::int64_t>>>();
  offsets->reserve(static_cast<std::size_t>(batches));
  for (std::int64_t bi = 0; bi < batches; ++bi) {
    std::int64_t rem = bi, oa = 0, ob = 0, sa = 1, sb = 1;
    for (std::size_t d = nd - 2; d-- > 0;) {
      const std::int64_t idx = rem % out_shape[d];
      rem /= out_shape[d];
      oa += (a.dim(d) == 1 ? 0 : idx) * sa;
      ob += (b.dim(d) == 1 ? 0 : idx) * sb;
      sa *= a.dim(d);
      sb *= b.dim(d);
    }
    offsets->emplace_back(oa, ob);
  }

  std::vector<T> out(static_cast<std::size_t>(batches * m * n));
  for (std::int64_t bi = 0; bi < batches; ++bi) {
    auto [oa, ob] = (*offsets)[static_cast<std::size_t>(bi)];
    detail::ConstMatMap<T> A(a.values().data() + oa * m * k, m, k);
    detail::ConstMatMap<T> B(b.values().data() + ob * k * n, k, n);
    detail::MatMap<T> C(out.data() + bi * m * n, m, n);
    C.noalias() = A * B;
  }
  return detail::make_result<T>(
      std::move(out_shape), std::move(out), "matmul", {a, b},
      [offsets, m, k, n](const TensorImpl<T>& o) {
        const auto& av = detail::in_data(o, 0);
        const auto& bv = detail::in_data(o, 1);
        T* ga = detail::in_grad(o, 0);
        T* gb = detail::in_grad(o, 1);
        for (std::size_t bi = 0; bi < offsets->size(); ++bi) {
          auto [oa, ob] = (*offsets)[bi];
          detail::ConstMatMap<T> G(o.grad.data() + static_cast<std::int64_t>(bi) * m * n, m, n);
          if (ga) {
            detail::ConstMatMap<T> B(bv.data() + ob * k * n, k, n);
            detail::MatMap<T> GA(ga + oa * m * k, m, k);
            GA.noalias() += G * B.transpose();
          }
          if (gb) {
            detail::ConstMatMap<T> A(av.data() + oa * m * k, m, k);
            detail::MatMap<T> GB(gb + ob * k * n, k, n);
            GB.noalias() += A.transpose() * G;
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Softmax
// ---------------------------------------------------------------------------

/// Softmax along the last axis.
template <typename T>
Tensor<T> softmax_last(const Tensor<T>& a) {
  if (a.ndim() == 0) throw ShapeError("softmax_last: rank-0 input");
  const std::int64_t len = a.dim(a.ndim() - 1);
  const std::int64_t rows = a.numel() / len;
  std::vector<T> out(a.values().size());
  const auto& x = a.values();
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * len;
    T* yr = out.data() + r * len;
    T mx = *std::max_element(xr, xr + len);
    T total = T(0);
    for (std::int64_t j = 0; j < len; ++j) total += (yr[j] = std::exp(xr[j] - mx));
    for (std::int64_t j = 0; j < len; ++j) yr[j] /= total;
  }
  return detail::make_result<T>(a.shape(), std::move(out), "softmax_last", {a},
                                [rows, len](const TensorImpl<T>& o) {
                                  T* gx = detail::in_grad(o, 0);
                                  if (!gx) return;
                                  for (std::int64_t r = 0; r < rows; ++r) {
                                    const T* y = o.data.data() + r * len;
                                    const T* g = o.grad.data() + r * len;
                                    T dot = T(0);
                                    for (std::int64_t j = 0; j < len; ++j) dot += y[j] * g[j];
                                    for (std::int64_t j = 0; j < len; ++j)
                                      gx[r * len + j] += y[j] * (g[j] - dot);
                                  }
                                });
}

/// Element-wise softmax across K same-shape competitors: output k at element
/// i is exp(x_k[i]) / sum_j exp(x_j[i]), evaluated with max subtraction.
template <typename T>
std::vector<Tensor<T>> softmax_over(const std::vector<Tensor<T>>& items) {
  if (items.empty()) throw std::invalid_argument("softmax_over: empty competitor list");
  const std::size_t count = items.size();
  for (const auto& t : items) {
    if (t.shape() != items[0].shape()) {
      throw ShapeError(detail::concat_msg("softmax_over: shape mismatch ",
                                          shape_str(items[0].shape()), " vs ", shape_str(t.shape())));
    }
  }
  const auto n = static_cast<std::size_t>(items[0].numel());
  auto probs = std::make_shared<std::vector<std::vector<T>>>(count, std::vector<T>(n));
  for (std::size_t i = 0; i < n; ++i) {
    T mx = items[0].values()[i];
    for (std::size_t k = 1; k < count; ++k) mx = std::max(mx, items[k].values()[i]);
    T total = T(0);
    for (std::size_t k = 0; k < count; ++k)
      total += ((*probs)[k][i] = std::exp(items[k].values()[i] - mx));
    for (std::size_t k = 0; k < count; ++k) (*probs)[k][i] /= total;
  }
  std::vector<Tensor<T>> outs;
  outs.reserve(count);
  for (std::size_t j = 0; j < count; ++j) {
    // Output j depends on every competitor: d y_j / d x_k = y_j (delta_jk - y_k).
    outs.push_back(detail::make_result<T>(
        items[0].shape(), (*probs)[j], "softmax_over", items,
        [probs, j, count, n](const TensorImpl<T>& o) {
          const auto& yj = (*probs)[j];
          for (std::size_t k = 0; k < count; ++k) {
            T* gk = detail::in_grad(o, k);
            if (!gk) continue;
            const auto& yk = (*probs)[k];
            for (std::size_t i = 0; i < n; ++i) {
              const T local = (j == k ? yj[i] * (T(1) - yj[i]) : -yj[i] * yk[i]);
              gk[i] += o.grad[i] * local;
            }
          }
        }));
  }
  return outs;
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

struct Conv2dOptions {
  int stride = 1;
  int pad_h = 0;
  int pad_w = 0;
  int dilation = 1;

  static Conv2dOptions same(int kernel_h, int kernel_w, int dilation = 1) {
    return {1, dilation * (kernel_h - 1) / 2, dilation * (kernel_w - 1) / 2, dilation};
  }
};

inline std::int64_t conv_out_extent(std::int64_t in, std::int64_t kernel, int stride, int pad,
                                    int dilation) {
  return (in + 2 * pad - dilation * (kernel - 1) - 1) / stride + 1;
}

namespace detail {

struct ConvGeometry {
  std::int64_t batch, cin, h, w, cout, kh, kw, oh, ow;
  Conv2dOptions opt;
  bool pointwise() const {
    return kh == 1 && kw == 1 && opt.stride == 1 && opt.pad_h == 0 && opt.pad_w == 0;
  }
  std::int64_t k() const { return cin * kh * kw; }
  std::int64_t p() const { return oh * ow; }
};

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  const std::int64_t P = g.p();
  for (std::int64_t c = 0; c < g.cin; ++c)
    for (std::int64_t i = 0; i < g.kh; ++i)
      for (std::int64_t j = 0; j < g.kw; ++j) {
        T* row = col + ((c * g.kh + i) * g.kw + j) * P;
        const T* plane = x + c * g.h * g.w;
        for (std::int64_t oy = 0; oy < g.oh; ++oy) {
          const std::int64_t iy = oy * g.opt.stride - g.opt.pad_h + i * g.opt.dilation;
          T* dst = row + oy * g.ow;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.ow, T(0));
            continue;
          }
          for (std::int64_t ox = 0; ox < g.ow; ++ox) {
            const std::int64_t ix = ox * g.opt.stride - g.opt.pad_w + j * g.opt.dilation;
            dst[ox] = (ix >= 0 && ix < g.w) ? plane[iy * g.w + ix] : T(0);
          }
        }
      }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* x) {
  const std::int64_t P = g.p();
  for (std::int64_t c = 0; c < g.cin; ++c)
    for (std::int64_t i = 0; i < g.kh; ++i)
      for (std::int64_t j = 0; j < g.kw; ++j) {
        const T* row = col + ((c * g.kh + i) * g.kw + j) * P;
        T* plane = x + c * g.h * g.w;
        for (std::int64_t oy = 0; oy < g.oh; ++oy) {
          const std::int64_t iy = oy * g.opt.stride - g.opt.pad_h + i * g.opt.dilation;
          if (iy < 0 || iy >= g.h) continue;
          for (std::int64_t ox = 0; ox < g.ow; ++ox) {
            const std::int64_t ix = ox * g.opt.stride - g.opt.pad_w + j * g.opt.dilation;
            if (ix >= 0 && ix < g.w) plane[iy * g.w + ix] += row[oy * g.ow + ox];
          }
        }
      }
}

template <typename T>
Tensor<T> conv2d_impl(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>* bias_ptr,
                      Conv2dOptions opt) {
  if (opt.stride < 1 || opt.dilation < 1 || opt.pad_h < 0 || opt.pad_w < 0) {
    throw std::invalid_argument("conv2d: stride and dilation must be >= 1, padding >= 0");
  }
  if (input.ndim() != 4 || weight.ndim() != 4 || input.dim(1) != weight.dim(1)) {
    throw ShapeError(detail::concat_msg("conv2d: input ", shape_str(input.shape()),
                                        " does not match weight ", shape_str(weight.shape())));
  }
  if (bias_ptr && (bias_ptr->ndim() != 1 || bias_ptr->dim(0) != weight.dim(0))) {
    throw ShapeError(detail::concat_msg("conv2d: bias ", shape_str(bias_ptr->shape()),
                                        " does not match weight ", shape_str(weight.shape())));
  }
  detail::ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), weight.dim(0),
                         weight.dim(2), weight.dim(3), 0, 0, opt};
  g.oh = conv_out_extent(g.h, g.kh, opt.stride, opt.pad_h, opt.dilation);
  g.ow = conv_out_extent(g.w, g.kw, opt.stride, opt.pad_w, opt.dilation);
  if (g.oh < 1 || g.ow < 1) {
    throw ShapeError(detail::concat_msg("conv2d: kernel ", shape_str(weight.shape()),
                                        " larger than padded input ", shape_str(input.shape())));
  }
  const std::int64_t K = g.k(), P = g.p();
  std::vector<T> out(static_cast<std::size_t>(g.batch * g.cout * P));
  std::vector<T> col(g.pointwise() ? 0 : static_cast<std::size_t>(K * P));
  detail::ConstMatMap<T> W(weight.values().data(), g.cout, K);
  for (std::int64_t b = 0; b < g.batch; ++b) {
    const T* xb = input.values().data() + b * g.cin * g.h * g.w;
    const T* colp = xb;
    if (!g.pointwise()) {
      detail::im2col(xb, g, col.data());
      colp = col.data();
    }
    detail::ConstMatMap<T> C(colp, K, P);
    detail::MatMap<T> O(out.data() + b * g.cout * P, g.cout, P);
    O.noalias() = W * C;
    if (bias_ptr)
      for (std::int64_t co = 0; co < g.cout; ++co) O.row(co).array() += bias_ptr->values()[co];
  }
  std::vector<Tensor<T>> operands{input, weight};
  if (bias_ptr) operands.push_back(*bias_ptr);
  const bool has_bias = bias_ptr != nullptr;
  return make_result<T>(
      Shape{g.batch, g.cout, g.oh, g.ow}, std::move(out), "conv2d", operands,
      [g, has_bias](const TensorImpl<T>& o) {
        const std::int64_t K = g.k(), P = g.p();
        const auto& xv = detail::in_data(o, 0);
        const auto& wv = detail::in_data(o, 1);
        T* gx = detail::in_grad(o, 0);
        T* gw = detail::in_grad(o, 1);
        T* gb = has_bias ? detail::in_grad(o, 2) : nullptr;
        std::vector<T> col(g.pointwise() ? 0 : static_cast<std::size_t>(K * P));
        std::vector<T> dcol(g.pointwise() || !gx ? 0 : static_cast<std::size_t>(K * P));
        detail::ConstMatMap<T> W(wv.data(), g.cout, K);
        for (std::int64_t b = 0; b < g.batch; ++b) {
          detail::ConstMatMap<T> G(o.grad.data() + b * g.cout * P, g.cout, P);
          if (gb) {
            // Plain loop: Eigen's vectorised sum peels by address alignment,
            // which would make the rounding depend on where the buffer lives.
            for (std::int64_t co = 0; co < g.cout; ++co) {
              T acc = 0;
              for (std::int64_t i = 0; i < P; ++i) acc += G(co, i);
              gb[co] += acc;
            }
          }
          const T* xb = xv.data() + b * g.cin * g.h * g.w;
          if (gw) {
            const T* colp = xb;
            if (!g.pointwise()) {
              detail::im2col(xb, g, col.data());
              colp = col.data();
            }
            detail::ConstMatMap<T> C(colp, K, P);
            detail::MatMap<T> GW(gw, g.cout, K);
            GW.noalias() += G * C.transpose();
          }
          if (gx) {
            T* gxb = gx + b * g.cin * g.h * g.w;
            if (g.pointwise()) {
              detail::MatMap<T> GX(gxb, K, P);
              GX.noalias() += W.transpose() * G;
            } else {
              detail::MatMap<T> DC(dcol.data(), K, P);
              DC.noalias() = W.transpose() * G;
              detail::col2im_add(dcol.data(), g, gxb);
            }
          }
        }
      });
}

}  // namespace detail

/// 2-d cross-correlation: input [B,Cin,H,W], weight [Cout,Cin,kh,kw], bias [Cout].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 Conv2dOptions opt = {}) {
  return detail::conv2d_impl(input, weight, &bias, opt);
}

/// Bias-free variant.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, Conv2dOptions opt = {}) {
  return detail::conv2d_impl<T>(input, weight, nullptr, opt);
}

// ---------------------------------------------------------------------------
// Resampling and channel plumbing
// ---------------------------------------------------------------------------

namespace detail {

struct LerpTap {
  std::int64_t lo, hi;
  double frac;
};

/// Half-pixel-centre source taps for resizing `in` samples to `out` samples.
inline std::vector<LerpTap> lerp_taps(std::int64_t in, std::int64_t out) {
  std::vector<LerpTap> taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::int64_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    auto lo = static_cast<std::int64_t>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    const std::int64_t hi = std::min(lo + 1, in - 1);
    taps[static_cast<std::size_t>(i)] = {lo, hi, hi == lo ? 0.0 : src - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace detail

/// Bilinear resampling of the two trailing axes (align_corners = false).
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, std::int64_t out_h, std::int64_t out_w) {
  if (x.ndim() != 4) throw ShapeError("bilinear_resize: expected NCHW, got " + shape_str(x.shape()));
  if (out_h < 1 || out_w < 1) throw std::invalid_argument("bilinear_resize: output size must be >= 1");
  const std::int64_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  Shape out_shape{x.dim(0), x.dim(1), out_h, out_w};
  if (h == out_h && w == out_w) {
    return reshape(x, out_shape);  // exact copy, gradient passes straight through
  }
  auto ty = std::make_shared<std::vector<detail::LerpTap>>(detail::lerp_taps(h, out_h));
  auto tx = std::make_shared<std::vector<detail::LerpTap>>(detail::lerp_taps(w, out_w));
  std::vector<T> out(static_cast<std::size_t>(planes * out_h * out_w));
  const auto& src = x.values();
  for (std::int64_t p = 0; p < planes; ++p) {
    const T* in = src.data() + p * h * w;
    T* dst = out.data() + p * out_h * out_w;
    for (std::int64_t oy = 0; oy < out_h; ++oy) {
      const auto& vy = (*ty)[static_cast<std::size_t>(oy)];
      const T fy = static_cast<T>(vy.frac);
      for (std::int64_t ox = 0; ox < out_w; ++ox) {
        const auto& vx = (*tx)[static_cast<std::size_t>(ox)];
        const T fx = static_cast<T>(vx.frac);
        const T a = in[vy.lo * w + vx.lo], b = in[vy.lo * w + vx.hi];
        const T c = in[vy.hi * w + vx.lo], d = in[vy.hi * w + vx.hi];
        // Interpolate as v0 + f (v1 - v0) so constants are reproduced exactly.
        const T top = a + fx * (b - a);
        const T bottom = c + fx * (d - c);
        dst[oy * out_w + ox] = top + fy * (bottom - top);
      }
    }
  }
  return detail::make_result<T>(
      std::move(out_shape), std::move(out), "bilinear_resize", {x},
      [ty, tx, planes, h, w, out_h, out_w](const TensorImpl<T>& o) {
        T* gx = detail::in_grad(o, 0);
        if (!gx) return;
        for (std::int64_t p = 0; p < planes; ++p) {
          T* gin = gx + p * h * w;
          const T* g = o.grad.data() + p * out_h * out_w;
          for (std::int64_t oy = 0; oy < out_h; ++oy) {
            const auto& vy = (*ty)[static_cast<std::size_t>(oy)];
            const T fy = static_cast<T>(vy.frac);
            for (std::int64_t ox = 0; ox < out_w; ++ox) {
              const auto& vx = (*tx)[static_cast<std::size_t>(ox)];
              const T fx = static_cast<T>(vx.frac);
              const T gv = g[oy * out_w + ox];
              gin[vy.lo * w + vx.lo] += gv * (T(1) - fx) * (T(1) - fy);
              gin[vy.lo * w + vx.hi] += gv * fx * (T(1) - fy);
              gin[vy.hi * w + vx.lo] += gv * (T(1) - fx) * fy;
              gin[vy.hi * w + vx.hi] += gv * fx * fy;
            }
          }
        }
      });
}

/// Concatenates NCHW tensors along the channel axis, in argument order.
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_channels: empty list");
  const auto& ref = xs[0];
  if (ref.ndim() != 4) throw ShapeError("concat_channels: expected NCHW, got " + shape_str(ref.shape()));
  std::int64_t channels = 0;
  for (const auto& t : xs) {
    if (t.ndim() != 4 || t.dim(0) != ref.dim(0) || t.dim(2) != ref.dim(2) || t.dim(3) != ref.dim(3)) {
      throw ShapeError(detail::concat_msg("concat_channels: ", shape_str(t.shape()),
                                          " incompatible with ", shape_str(ref.shape())));
    }
    channels += t.dim(1);
  }
  const std::int64_t batch = ref.dim(0), plane = ref.dim(2) * ref.dim(3);
  std::vector<std::int64_t> widths;
  for (const auto& t : xs) widths.push_back(t.dim(1));
  std::vector<T> out(static_cast<std::size_t>(batch * channels * plane));
  for (std::int64_t b = 0; b < batch; ++b) {
    std::int64_t offset = 0;
    for (const auto& t : xs) {
      const std::int64_t block = t.dim(1) * plane;
      std::copy_n(t.values().data() + b * block, block, out.data() + (b * channels + offset) * plane);
      offset += t.dim(1);
    }
  }
  return detail::make_result<T>(
      Shape{batch, channels, ref.dim(2), ref.dim(3)}, std::move(out), "concat_channels", xs,
      [widths, batch, channels, plane](const TensorImpl<T>& o) {
        std::int64_t offset = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
          T* gk = detail::in_grad(o, k);
          const std::int64_t block = widths[k] * plane;
          if (gk) {
            for (std::int64_t b = 0; b < batch; ++b) {
              const T* src = o.grad.data() + (b * channels + offset) * plane;
              T* dst = gk + b * block;
              for (std::int64_t i = 0; i < block; ++i) dst[i] += src[i];
            }
          }
          offset += widths[k];
        }
      });
}

// ---------------------------------------------------------------------------
// Normalisation
// ---------------------------------------------------------------------------

/// Group normalisation over (C/groups, H, W) per sample, with per-channel
/// affine gamma/beta of shape [C].
template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, std::int64_t groups, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps = T(1e-5)) {
  if (x.ndim() != 4 || groups < 1 || x.dim(1) % groups != 0) {
    throw ShapeError(detail::concat_msg("group_norm: ", groups, " groups do not divide input ",
                                        shape_str(x.shape())));
  }
  if (gamma.numel() != x.dim(1) || beta.numel() != x.dim(1)) {
    throw ShapeError(detail::concat_msg("group_norm: affine ", shape_str(gamma.shape()),
                                        " does not match input ", shape_str(x.shape())));
  }
  const std::int64_t batch = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
  const std::int64_t per_group = channels / groups;
  const std::int64_t count = per_group * plane;
  auto normalized = std::make_shared<std::vector<T>>(x.values().size());
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(batch * groups));
  std::vector<T> out(x.values().size());
  const auto& xv = x.values();
  for (std::int64_t b = 0; b < batch; ++b)
    for (std::int64_t gi = 0; gi < groups; ++gi) {
      const std::int64_t base = (b * channels + gi * per_group) * plane;
      T mu = T(0);
      for (std::int64_t i = 0; i < count; ++i) mu += xv[base + i];
      mu /= static_cast<T>(count);
      T var = T(0);
      for (std::int64_t i = 0; i < count; ++i) {
        const T d = xv[base + i] - mu;
        var += d * d;
      }
      var /= static_cast<T>(count);
      const T istd = T(1) / std::sqrt(var + eps);
      (*inv_std)[b * groups + gi] = istd;
      for (std::int64_t c = 0; c < per_group; ++c) {
        const std::int64_t ch = gi * per_group + c;
        const T ga = gamma.values()[ch], be = beta.values()[ch];
        for (std::int64_t i = 0; i < plane; ++i) {
          const std::int64_t idx = base + c * plane + i;
          const T nh = (xv[idx] - mu) * istd;
          (*normalized)[idx] = nh;
          out[idx] = nh * ga + be;
        }
      }
    }
  return detail::make_result<T>(
      x.shape(), std::move(out), "group_norm", {x, gamma, beta},
      [normalized, inv_std, batch, channels, plane, groups, per_group,
       count](const TensorImpl<T>& o) {
        const auto& gav = detail::in_data(o, 1);
        T* gx = detail::in_grad(o, 0);
        T* gg = detail::in_grad(o, 1);
        T* gbeta = detail::in_grad(o, 2);
        const auto& nh = *normalized;
        for (std::int64_t b = 0; b < batch; ++b)
          for (std::int64_t gi = 0; gi < groups; ++gi) {
            const std::int64_t base = (b * channels + gi * per_group) * plane;
            T sum_g = T(0), sum_gn = T(0);
            for (std::int64_t c = 0; c < per_group; ++c) {
              const std::int64_t ch = gi * per_group + c;
              for (std::int64_t i = 0; i < plane; ++i) {
                const std::int64_t idx = base + c * plane + i;
                const T g = o.grad[idx];
                if (gg) gg[ch] += g * nh[idx];
                if (gbeta) gbeta[ch] += g;
                const T gn = g * gav[ch];
                sum_g += gn;
                sum_gn += gn * nh[idx];
              }
            }
            if (!gx) continue;
            const T istd = (*inv_std)[b * groups + gi];
            const T inv_n = T(1) / static_cast<T>(count);
            for (std::int64_t c = 0; c < per_group; ++c) {
              const std::int64_t ch = gi * per_group + c;
              for (std::int64_t i = 0; i < plane; ++i) {
                const std::int64_t idx = base + c * plane + i;
                const T gn = o.grad[idx] * gav[ch];
                gx[idx] += istd * (gn - inv_n * sum_g - nh[idx] * inv_n * sum_gn);
              }
            }
          }
      });
}

}  // namespace uacanet
