#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "raslf/scan_kernel.hpp"
#include "raslf/tensor.hpp"

namespace raslf {

/// The closed set of differentiable primitives.
enum class OpKind {
  add,
  sub,
  mul,
  matmul,
  conv2d,
  layer_norm,
  silu,
  softplus,
  exp,
  sigmoid,
  concat,
  slice,
  reshape,
  permute,
  pixel_shuffle,
  mean,
  sum,
  abs,
  selective_scan,
};

inline std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::matmul: return "matmul";
    case OpKind::conv2d: return "conv2d";
    case OpKind::layer_norm: return "layer_norm";
    case OpKind::silu: return "silu";
    case OpKind::softplus: return "softplus";
    case OpKind::exp: return "exp";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::concat: return "concat";
    case OpKind::slice: return "slice";
    case OpKind::reshape: return "reshape";
    case OpKind::permute: return "permute";
    case OpKind::pixel_shuffle: return "pixel_shuffle";
    case OpKind::mean: return "mean";
    case OpKind::sum: return "sum";
    case OpKind::abs: return "abs";
    case OpKind::selective_scan: return "selective_scan";
  }
  throw Error("unknown primitive kind " +
              std::to_string(static_cast<int>(kind)));
}

inline OpKind op_kind_from_string(std::string_view name) {
  for (int k = 0; k <= static_cast<int>(OpKind::selective_scan); ++k) {
    if (op_name(static_cast<OpKind>(k)) == name) return static_cast<OpKind>(k);
  }
  throw Error("unknown primitive kind '" + std::string(name) + "'");
}

enum class PadMode { zero, replicate };

/// Attributes consumed by `apply`; each primitive reads only its own fields.
struct OpAttributes {
  std::size_t axis = 0;
  std::size_t start = 0;
  std::size_t stop = 0;
  Shape shape;
  std::vector<std::size_t> perm;
  std::size_t factor = 1;
  std::size_t groups = 1;
  PadMode pad = PadMode::zero;
  double eps = 1e-5;
  bool reverse = false;
};

namespace detail {

template <class T>
void check_finite(std::string_view op, const std::vector<T>& values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError(std::string(op) + ": non-finite output at index " +
                         std::to_string(i));
    }
  }
}

template <class T, class Fn>
Tensor<T> emit(std::string_view op, Shape shape, std::vector<T> value,
               std::initializer_list<Tensor<T>> inputs, Fn&& backward) {
  if (runtime_flags().debug_checks) check_finite(op, value);
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  Tape<T>* tape = active_tape<T>();
  bool needs_grad = false;
  for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
  if (tape != nullptr && needs_grad) {
    node->requires_grad = true;
    node->is_leaf = false;
    for (const auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::forward<Fn>(backward);
    tape->record(node);
  }
  return Tensor<T>(std::move(node));
}

// Gradient buffer of input i, or nullptr when it needs none.
template <class T>
T* input_grad(Node<T>& self, std::size_t i) {
  auto& in = *self.inputs[i];
  return in.requires_grad ? in.grad_buffer() : nullptr;
}

inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(),
                    big.end() - static_cast<std::ptrdiff_t>(small.size()));
}

inline void require(bool ok, std::string_view op, const std::string& what) {
  if (!ok) throw ShapeError(std::string(op) + ": " + what);
}

enum class Binary { add, sub, mul };

template <class T>
Tensor<T> binary(Binary kind, const Tensor<T>& a, const Tensor<T>& b) {
  const std::string_view name =
      kind == Binary::add ? "add" : kind == Binary::sub ? "sub" : "mul";
  const bool a_big = a.rank() >= b.rank();
  const Tensor<T>& big = a_big ? a : b;
  const Tensor<T>& small = a_big ? b : a;
  require(is_suffix(small.shape(), big.shape()), name,
          "operands " + to_string(a.shape()) + " and " + to_string(b.shape()) +
              " do not broadcast over leading extents");
  const std::size_t n = big.numel();
  std::vector<T> out(n);
  const auto av = a.data();
  const auto bv = b.data();
  const std::size_t na = a.numel();
  const std::size_t nb = b.numel();
  for (std::size_t i = 0; i < n; ++i) {
    const T x = av[na == n ? i : i % na];
    const T y = bv[nb == n ? i : i % nb];
    out[i] = kind == Binary::add ? x + y : kind == Binary::sub ? x - y : x * y;
  }
  FlopCounter::add(n);
  return emit<T>(name, big.shape(), std::move(out), {a, b},
                 [kind, a, b](Node<T>& self) {
                   const std::size_t n = self.value.size();
                   const std::size_t na = a.numel();
                   const std::size_t nb = b.numel();
                   const T* g = self.grad.data();
                   if (T* ga = input_grad(self, 0)) {
                     const auto bv = b.data();
                     for (std::size_t i = 0; i < n; ++i) {
                       const T d = kind == Binary::mul
                                       ? g[i] * bv[nb == n ? i : i % nb]
                                       : g[i];
                       ga[na == n ? i : i % na] += d;
                     }
                   }
                   if (T* gb = input_grad(self, 1)) {
                     const auto av = a.data();
                     for (std::size_t i = 0; i < n; ++i) {
                       const T d = kind == Binary::mul
                                       ? g[i] * av[na == n ? i : i % na]
                                   : kind == Binary::sub ? -g[i]
                                                         : g[i];
                       gb[nb == n ? i : i % nb] += d;
                     }
                   }
                 });
}

enum class Unary { silu, softplus, exp, sigmoid, abs };

template <class T>
T sigmoid_value(T x) {
  return x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                   : std::exp(x) / (T(1) + std::exp(x));
}

template <class T>
T softplus_value(T x) {
  return x > T(20) ? x : std::log1p(std::exp(x));
}

template <class T>
Tensor<T> unary(Unary kind, const Tensor<T>& x) {
  static constexpr std::string_view names[] = {"silu", "softplus", "exp",
                                               "sigmoid", "abs"};
  static constexpr std::uint64_t costs[] = {4, 3, 1, 3, 1};
  const auto xv = x.data();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const T v = xv[i];
    switch (kind) {
      case Unary::silu: out[i] = v * sigmoid_value(v); break;
      case Unary::softplus: out[i] = softplus_value(v); break;
      case Unary::exp: out[i] = std::exp(v); break;
      case Unary::sigmoid: out[i] = sigmoid_value(v); break;
      case Unary::abs: out[i] = std::abs(v); break;
    }
  }
  const auto k = static_cast<std::size_t>(kind);
  FlopCounter::add(costs[k] * xv.size());
  return emit<T>(names[k], x.shape(), std::move(out), {x},
                 [kind, x](Node<T>& self) {
                   T* gx = input_grad(self, 0);
                   if (!gx) return;
                   const auto xv = x.data();
                   const T* g = self.grad.data();
                   for (std::size_t i = 0; i < xv.size(); ++i) {
                     const T v = xv[i];
                     T d = 0;
                     switch (kind) {
                       case Unary::silu: {
                         const T s = sigmoid_value(v);
                         d = s * (T(1) + v * (T(1) - s));
                         break;
                       }
                       case Unary::softplus: d = sigmoid_value(v); break;
                       case Unary::exp: d = self.value[i]; break;
                       case Unary::sigmoid:
                         d = self.value[i] * (T(1) - self.value[i]);
                         break;
                       case Unary::abs:
                         d = v > T(0) ? T(1) : v < T(0) ? T(-1) : T(0);
                         break;
                     }
                     gx[i] += g[i] * d;
                   }
                 });
}

// Row-major strides.
inline std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

// For every output flat index, the source flat index under a permutation.
inline std::vector<std::size_t> permute_gather(
    const Shape& in_shape, const std::vector<std::size_t>& perm) {
  const std::size_t rank = in_shape.size();
  const auto in_strides = strides_of(in_shape);
  Shape out_shape(rank);
  std::vector<std::size_t> step(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = in_shape[perm[i]];
    step[i] = in_strides[perm[i]];
  }
  const std::size_t n = numel(in_shape);
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t offset = 0;
  for (std::size_t o = 0; o < n; ++o) {
    src[o] = offset;
    for (std::size_t d = rank; d-- > 0;) {
      if (++idx[d] < out_shape[d]) {
        offset += step[d];
        break;
      }
      offset -= step[d] * (out_shape[d] - 1);
      idx[d] = 0;
    }
  }
  return src;
}

}  // namespace detail

namespace ops {

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(detail::Binary::add, a, b);
}
template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(detail::Binary::sub, a, b);
}
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(detail::Binary::mul, a, b);
}
template <class T>
Tensor<T> silu(const Tensor<T>& x) {
  return detail::unary(detail::Unary::silu, x);
}
template <class T>
Tensor<T> softplus(const Tensor<T>& x) {
  return detail::unary(detail::Unary::softplus, x);
}
template <class T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::unary(detail::Unary::exp, x);
}
template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary(detail::Unary::sigmoid, x);
}
/// Subgradient at 0 is 0.
template <class T>
Tensor<T> abs(const Tensor<T>& x) {
  return detail::unary(detail::Unary::abs, x);
}

/// Matrix product over the last two extents. `b` may carry fewer leading
/// extents than `a` (a rank-2 `b` is shared by every leading index of `a`).
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  using detail::require;
  require(a.rank() >= 2 && b.rank() >= 2, "matmul",
          "operands need rank >= 2, got " + to_string(a.shape()) + " and " +
              to_string(b.shape()));
  const std::size_t m = a.dim(a.rank() - 2);
  const std::size_t k = a.dim(a.rank() - 1);
  const std::size_t kb = b.dim(b.rank() - 2);
  const std::size_t n = b.dim(b.rank() - 1);
  require(k == kb, "matmul",
          "inner extents differ: " + to_string(a.shape()) + " x " +
              to_string(b.shape()));
  const Shape a_batch(a.shape().begin(), a.shape().end() - 2);
  const Shape b_batch(b.shape().begin(), b.shape().end() - 2);
  require(detail::is_suffix(b_batch, a_batch), "matmul",
          "batch extents of " + to_string(b.shape()) +
              " do not broadcast against " + to_string(a.shape()));
  const std::size_t batches = numel(a_batch);
  const std::size_t b_batches = numel(b_batch);
  Shape out_shape = a_batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<T> out(batches * m * n, T(0));
  const T* av = a.data().data();
  const T* bv = b.data().data();
  for (std::size_t bi = 0; bi < batches; ++bi) {
    const T* A = av + bi * m * k;
    const T* B = bv + (bi % b_batches) * k * n;
    T* C = out.data() + bi * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      T* crow = C + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const T s = A[i * k + p];
        const T* brow = B + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += s * brow[j];
      }
    }
  }
  FlopCounter::add(2ull * batches * m * k * n);
  return detail::emit<T>(
      "matmul", std::move(out_shape), std::move(out), {a, b},
      [a, b, batches, b_batches, m, k, n](detail::Node<T>& self) {
        const T* g = self.grad.data();
        const T* av = a.data().data();
        const T* bv = b.data().data();
        if (T* ga = detail::input_grad(self, 0)) {
          const T scale = runtime_flags().corrupt_matmul_grad ? T(1.5) : T(1);
          for (std::size_t bi = 0; bi < batches; ++bi) {
            const T* B = bv + (bi % b_batches) * k * n;
            const T* G = g + bi * m * n;
            T* GA = ga + bi * m * k;
            for (std::size_t i = 0; i < m; ++i) {
              for (std::size_t p = 0; p < k; ++p) {
                const T* brow = B + p * n;
                const T* grow = G + i * n;
                T acc = 0;
                for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                GA[i * k + p] += scale * acc;
              }
            }
          }
        }
        if (T* gb = detail::input_grad(self, 1)) {
          for (std::size_t bi = 0; bi < batches; ++bi) {
            const T* A = av + bi * m * k;
            const T* G = g + bi * m * n;
            T* GB = gb + (bi % b_batches) * k * n;
            for (std::size_t i = 0; i < m; ++i) {
              const T* grow = G + i * n;
              for (std::size_t p = 0; p < k; ++p) {
                const T s = A[i * k + p];
                T* gbrow = GB + p * n;
                for (std::size_t j = 0; j < n; ++j) gbrow[j] += s * grow[j];
              }
            }
          }
        }
      });
}

namespace conv_detail {

// Source column for output column x and kernel tap kx (offset kx - 1), or -1
// when the tap falls in the zero padding.
inline std::ptrdiff_t source_index(std::ptrdiff_t x, std::ptrdiff_t offset,
                                   std::ptrdiff_t extent, PadMode pad) {
  std::ptrdiff_t s = x + offset;
  if (s >= 0 && s < extent) return s;
  if (pad == PadMode::zero) return -1;
  return std::clamp<std::ptrdiff_t>(s, 0, extent - 1);
}

// Visits every (kernel row, output row, source row) triple together with the
// output column range whose taps stay inside the image.
struct Taps {
  std::ptrdiff_t height;
  std::ptrdiff_t width;
  PadMode pad;

  template <class Body>
  void operator()(Body&& body) const {
    for (std::ptrdiff_t ky = 0; ky < 3; ++ky) {
      for (std::ptrdiff_t y = 0; y < height; ++y) {
        const std::ptrdiff_t sy = source_index(y, ky - 1, height, pad);
        if (sy < 0) continue;
        for (std::ptrdiff_t kx = 0; kx < 3; ++kx) {
          const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, 1 - kx);
          const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(width, width + 1 - kx);
          body(ky, kx, y, sy, x0, x1);
        }
      }
    }
  }
};

}  // namespace conv_detail

/// 3x3, stride 1 convolution on (N, Cin, H, W) with weight
/// (Cout, Cin / groups, 3, 3) and optional bias (Cout).
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight,
                 const std::type_identity_t<std::optional<Tensor<T>>>& bias =
                     std::nullopt,
                 std::size_t groups = 1, PadMode pad = PadMode::zero) {
  using detail::require;
  require(x.rank() == 4, "conv2d",
          "input must be (N, C, H, W), got " + to_string(x.shape()));
  require(weight.rank() == 4 && weight.dim(2) == 3 && weight.dim(3) == 3,
          "conv2d", "weight must be (Cout, Cin/groups, 3, 3), got " +
                        to_string(weight.shape()));
  const std::size_t N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Cout = weight.dim(0);
  require(groups >= 1 && Cin % groups == 0 && Cout % groups == 0, "conv2d",
          "groups " + std::to_string(groups) + " must divide Cin " +
              std::to_string(Cin) + " and Cout " + std::to_string(Cout));
  const std::size_t cin_g = Cin / groups;
  const std::size_t cout_g = Cout / groups;
  require(weight.dim(1) == cin_g, "conv2d",
          "weight extent 1 is " + std::to_string(weight.dim(1)) +
              ", expected Cin/groups = " + std::to_string(cin_g));
  if (bias) {
    require(bias->rank() == 1 && bias->dim(0) == Cout, "conv2d",
            "bias must be (" + std::to_string(Cout) + "), got " +
                to_string(bias->shape()));
  }
  const std::size_t plane = H * W;
  std::vector<T> out(N * Cout * plane, T(0));
  const T* xv = x.data().data();
  const T* wv = weight.data().data();
  const conv_detail::Taps for_each_tap{static_cast<std::ptrdiff_t>(H),
                                       static_cast<std::ptrdiff_t>(W), pad};
  const auto sW = static_cast<std::ptrdiff_t>(W);

  for (std::size_t nb = 0; nb < N; ++nb) {
    for (std::size_t co = 0; co < Cout; ++co) {
      const std::size_t g = co / cout_g;
      T* o = out.data() + (nb * Cout + co) * plane;
      for (std::size_t cl = 0; cl < cin_g; ++cl) {
        const std::size_t ci = g * cin_g + cl;
        const T* in = xv + (nb * Cin + ci) * plane;
        const T* w = wv + (co * cin_g + cl) * 9;
        for_each_tap([&](std::ptrdiff_t ky, std::ptrdiff_t kx, std::ptrdiff_t y,
                         std::ptrdiff_t sy, std::ptrdiff_t x0,
                         std::ptrdiff_t x1) {
          const T wk = w[ky * 3 + kx];
          T* orow = o + y * sW;
          const T* irow = in + sy * sW;
          const std::ptrdiff_t dx = kx - 1;
          for (std::ptrdiff_t xx = x0; xx < x1; ++xx)
            orow[xx] += wk * irow[xx + dx];
          if (pad == PadMode::replicate) {
            for (std::ptrdiff_t xx = 0; xx < x0; ++xx)
              orow[xx] += wk * in[sy * sW + conv_detail::source_index(
                                                xx, kx - 1, sW, pad)];
            for (std::ptrdiff_t xx = std::max(x1, x0); xx < sW; ++xx)
              orow[xx] += wk * in[sy * sW + conv_detail::source_index(
                                                xx, kx - 1, sW, pad)];
          }
        });
      }
      if (bias) {
        const T bval = (*bias)[co];
        for (std::size_t i = 0; i < plane; ++i) o[i] += bval;
      }
    }
  }
  FlopCounter::add(2ull * N * Cout * plane * cin_g * 9 +
                   (bias ? N * Cout * plane : 0));

  Tensor<T> b = bias ? *bias : Tensor<T>::zeros({Cout});
  const bool has_bias = bias.has_value();
  return detail::emit<T>(
      "conv2d", {N, Cout, H, W}, std::move(out), {x, weight, b},
      [x, weight, has_bias, N, Cin, Cout, cin_g, cout_g, W, plane, pad,
       for_each_tap](detail::Node<T>& self) {
        const T* g = self.grad.data();
        const T* xv = x.data().data();
        const T* wv = weight.data().data();
        T* gx = detail::input_grad(self, 0);
        T* gw = detail::input_grad(self, 1);
        T* gb = has_bias ? detail::input_grad(self, 2) : nullptr;
        const auto sW = static_cast<std::ptrdiff_t>(W);
        for (std::size_t nb = 0; nb < N; ++nb) {
          for (std::size_t co = 0; co < Cout; ++co) {
            const std::size_t grp = co / cout_g;
            const T* go = g + (nb * Cout + co) * plane;
            if (gb) {
              T acc = 0;
              for (std::size_t i = 0; i < plane; ++i) acc += go[i];
              gb[co] += acc;
            }
            for (std::size_t cl = 0; cl < cin_g; ++cl) {
              const std::size_t ci = grp * cin_g + cl;
              const T* in = xv + (nb * Cin + ci) * plane;
              T* gin = gx ? gx + (nb * Cin + ci) * plane : nullptr;
              const T* w = wv + (co * cin_g + cl) * 9;
              T* gwk = gw ? gw + (co * cin_g + cl) * 9 : nullptr;
              for_each_tap([&](std::ptrdiff_t ky, std::ptrdiff_t kx,
                               std::ptrdiff_t y, std::ptrdiff_t sy,
                               std::ptrdiff_t x0, std::ptrdiff_t x1) {
                const T* grow = go + y * sW;
                const T* irow = in + sy * sW;
                const std::ptrdiff_t dx = kx - 1;
                const T wk = w[ky * 3 + kx];
                T acc = 0;
                if (gin) {
                  T* girow = gin + sy * sW;
                  for (std::ptrdiff_t xx = x0; xx < x1; ++xx) {
                    acc += grow[xx] * irow[xx + dx];
                    girow[xx + dx] += wk * grow[xx];
                  }
                } else {
                  for (std::ptrdiff_t xx = x0; xx < x1; ++xx)
                    acc += grow[xx] * irow[xx + dx];
                }
                if (pad == PadMode::replicate) {
                  auto edge = [&](std::ptrdiff_t xx) {
                    const std::ptrdiff_t s = sy * sW + conv_detail::source_index(
                                                           xx, kx - 1, sW, pad);
                    acc += grow[xx] * in[s];
                    if (gin) gin[s] += wk * grow[xx];
                  };
                  for (std::ptrdiff_t xx = 0; xx < x0; ++xx) edge(xx);
                  for (std::ptrdiff_t xx = std::max(x1, x0); xx < sW; ++xx)
                    edge(xx);
                }
                if (gwk) gwk[ky * 3 + kx] += acc;
              });
            }
          }
        }
      });
}

/// Normalizes over the last extent, then applies per-channel scale and shift.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, double eps = 1e-5) {
  using detail::require;
  require(x.rank() >= 1, "layer_norm", "input must have rank >= 1");
  const std::size_t C = x.dim(x.rank() - 1);
  require(gamma.shape() == Shape{C} && beta.shape() == Shape{C}, "layer_norm",
          "scale/shift must be (" + std::to_string(C) + "), got " +
              to_string(gamma.shape()) + " and " + to_string(beta.shape()));
  const std::size_t rows = x.numel() / C;
  std::vector<T> out(x.numel());
  std::vector<T> xhat(x.numel());
  std::vector<T> rstd(rows);
  const T* xv = x.data().data();
  const T* gv = gamma.data().data();
  const T* bv = beta.data().data();
  T jitter = 0;
  if (runtime_flags().nondeterministic_layer_norm) {
    jitter = T(1e-3) * static_cast<T>(++runtime_flags().nondeterminism_counter);
  }
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv + r * C;
    double mean = 0;
    for (std::size_t c = 0; c < C; ++c) mean += row[c];
    mean /= static_cast<double>(C);
    double var = 0;
    for (std::size_t c = 0; c < C; ++c) {
      const double d = row[c] - mean;
      var += d * d;
    }
    var /= static_cast<double>(C);
    const T rs = static_cast<T>(1.0 / std::sqrt(var + eps));
    rstd[r] = rs;
    for (std::size_t c = 0; c < C; ++c) {
      const T h = static_cast<T>(row[c] - mean) * rs;
      xhat[r * C + c] = h;
      out[r * C + c] = h * gv[c] + bv[c] + jitter;
    }
  }
  FlopCounter::add(8ull * x.numel());
  return detail::emit<T>(
      "layer_norm", x.shape(), std::move(out), {x, gamma, beta},
      [gamma, rows, C, xhat = std::move(xhat),
       rstd = std::move(rstd)](detail::Node<T>& self) {
        const T* g = self.grad.data();
        const T* gv = gamma.data().data();
        T* gx = detail::input_grad(self, 0);
        T* gg = detail::input_grad(self, 1);
        T* gb = detail::input_grad(self, 2);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* gr = g + r * C;
          const T* hr = xhat.data() + r * C;
          if (gg || gb) {
            for (std::size_t c = 0; c < C; ++c) {
              if (gg) gg[c] += gr[c] * hr[c];
              if (gb) gb[c] += gr[c];
            }
          }
          if (gx) {
            double s1 = 0, s2 = 0;
            for (std::size_t c = 0; c < C; ++c) {
              const double d = static_cast<double>(gr[c]) * gv[c];
              s1 += d;
              s2 += d * hr[c];
            }
            const double inv_c = 1.0 / static_cast<double>(C);
            for (std::size_t c = 0; c < C; ++c) {
              const double d = static_cast<double>(gr[c]) * gv[c];
              gx[r * C + c] += static_cast<T>(
                  rstd[r] * (d - s1 * inv_c - hr[c] * s2 * inv_c));
            }
          }
        }
      });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  detail::require(numel(shape) == x.numel(), "reshape",
                  "cannot view " + to_string(x.shape()) + " as " +
                      to_string(shape));
  std::vector<T> out(x.data().begin(), x.data().end());
  return detail::emit<T>("reshape", std::move(shape), std::move(out), {x},
                         [](detail::Node<T>& self) {
                           T* gx = detail::input_grad(self, 0);
                           if (!gx) return;
                           for (std::size_t i = 0; i < self.grad.size(); ++i)
                             gx[i] += self.grad[i];
                         });
}

/// Output extent i is input extent perm[i].
template <class T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
  const std::size_t rank = x.rank();
  detail::require(perm.size() == rank, "permute",
                  "permutation of length " + std::to_string(perm.size()) +
                      " for shape " + to_string(x.shape()));
  std::vector<bool> seen(rank, false);
  for (std::size_t p : perm) {
    detail::require(p < rank && !seen[p], "permute",
                    "invalid permutation for shape " + to_string(x.shape()));
    seen[p] = true;
  }
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = x.dim(perm[i]);
  auto src = std::make_shared<std::vector<std::size_t>>(
      detail::permute_gather(x.shape(), perm));
  const T* xv = x.data().data();
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[(*src)[i]];
  return detail::emit<T>("permute", std::move(out_shape), std::move(out), {x},
                         [src](detail::Node<T>& self) {
                           T* gx = detail::input_grad(self, 0);
                           if (!gx) return;
                           for (std::size_t i = 0; i < self.grad.size(); ++i)
                             gx[(*src)[i]] += self.grad[i];
                         });
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  detail::require(!parts.empty(), "concat", "no operands");
  const Shape& ref = parts.front().shape();
  detail::require(axis < ref.size(), "concat",
                  "axis " + std::to_string(axis) + " out of range for " +
                      to_string(ref));
  Shape out_shape = ref;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    detail::require(s.size() == ref.size(), "concat",
                    "rank mismatch: " + to_string(s) + " vs " + to_string(ref));
    s[axis] = ref[axis];
    detail::require(s == ref, "concat",
                    "extents differ off axis: " + to_string(p.shape()) +
                        " vs " + to_string(ref));
    out_shape[axis] += p.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= ref[i];
  for (std::size_t i = axis + 1; i < ref.size(); ++i) inner *= ref[i];
  std::vector<T> out(numel(out_shape));
  const std::size_t out_row = out_shape[axis] * inner;
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t row = p.dim(axis) * inner;
    const T* pv = p.data().data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy(pv + o * row, pv + (o + 1) * row, out.data() + o * out_row + off);
    off += row;
  }
  auto node_out = detail::emit<T>("concat", out_shape, std::move(out), {}, [](detail::Node<T>&) {});
  // Variadic inputs: record manually when any part needs a gradient.
  Tape<T>* tape = detail::active_tape<T>();
  bool needs = false;
  for (const auto& p : parts) needs = needs || p.requires_grad();
  if (tape && needs) {
    auto& node = *node_out.node();
    node.requires_grad = true;
    node.is_leaf = false;
    for (const auto& p : parts) node.inputs.push_back(p.node());
    std::vector<std::size_t> rows;
    for (const auto& p : parts) rows.push_back(p.dim(axis) * inner);
    node.backward = [outer, out_row, offsets, rows](detail::Node<T>& self) {
      for (std::size_t i = 0; i < self.inputs.size(); ++i) {
        T* gp = detail::input_grad(self, i);
        if (!gp) continue;
        for (std::size_t o = 0; o < outer; ++o) {
          const T* src = self.grad.data() + o * out_row + offsets[i];
          T* dst = gp + o * rows[i];
          for (std::size_t j = 0; j < rows[i]; ++j) dst[j] += src[j];
        }
      }
    };
    tape->record(node_out.node());
  }
  return node_out;
}

/// Elements [start, stop) along `axis`.
template <class T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start,
                std::size_t stop) {
  detail::require(axis < x.rank() && start < stop && stop <= x.dim(axis),
                  "slice",
                  "range [" + std::to_string(start) + ", " +
                      std::to_string(stop) + ") on axis " +
                      std::to_string(axis) + " of " + to_string(x.shape()));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  Shape out_shape = x.shape();
  out_shape[axis] = stop - start;
  const std::size_t in_row = x.dim(axis) * inner;
  const std::size_t out_row = (stop - start) * inner;
  const std::size_t off = start * inner;
  std::vector<T> out(outer * out_row);
  const T* xv = x.data().data();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy(xv + o * in_row + off, xv + o * in_row + off + out_row,
              out.data() + o * out_row);
  return detail::emit<T>("slice", std::move(out_shape), std::move(out), {x},
                         [outer, in_row, out_row, off](detail::Node<T>& self) {
                           T* gx = detail::input_grad(self, 0);
                           if (!gx) return;
                           for (std::size_t o = 0; o < outer; ++o)
                             for (std::size_t j = 0; j < out_row; ++j)
                               gx[o * in_row + off + j] +=
                                   self.grad[o * out_row + j];
                         });
}

/// (N, C*r*r, H, W) -> (N, C, H*r, W*r) with
/// out[n][c][h*r + i][w*r + j] = in[n][c*r*r + i*r + j][h][w].
template <class T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, std::size_t r) {
  detail::require(x.rank() == 4 && r >= 1 && x.dim(1) % (r * r) == 0,
                  "pixel_shuffle",
                  "input " + to_string(x.shape()) +
                      " is not (N, C*r^2, H, W) for r = " + std::to_string(r));
  const std::size_t N = x.dim(0), Cr = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t C = Cr / (r * r);
  // Equivalent permutation: (N, C, r, r, H, W) -> (N, C, H, r, W, r).
  auto src = std::make_shared<std::vector<std::size_t>>(
      detail::permute_gather({N, C, r, r, H, W}, {0, 1, 4, 2, 5, 3}));
  const T* xv = x.data().data();
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[(*src)[i]];
  return detail::emit<T>("pixel_shuffle", {N, C, H * r, W * r}, std::move(out),
                         {x}, [src](detail::Node<T>& self) {
                           T* gx = detail::input_grad(self, 0);
                           if (!gx) return;
                           for (std::size_t i = 0; i < self.grad.size(); ++i)
                             gx[(*src)[i]] += self.grad[i];
                         });
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  double acc = 0;
  for (T v : x.data()) acc += v;
  FlopCounter::add(x.numel());
  return detail::emit<T>("sum", {}, {static_cast<T>(acc)}, {x},
                         [](detail::Node<T>& self) {
                           T* gx = detail::input_grad(self, 0);
                           if (!gx) return;
                           const std::size_t n = self.inputs[0]->value.size();
                           for (std::size_t i = 0; i < n; ++i)
                             gx[i] += self.grad[0];
                         });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  double acc = 0;
  for (T v : x.data()) acc += v;
  const double n = static_cast<double>(x.numel());
  FlopCounter::add(x.numel());
  return detail::emit<T>("mean", {}, {static_cast<T>(acc / n)}, {x},
                         [](detail::Node<T>& self) {
                           T* gx = detail::input_grad(self, 0);
                           if (!gx) return;
                           const std::size_t n = self.inputs[0]->value.size();
                           const T g = self.grad[0] / static_cast<T>(n);
                           for (std::size_t i = 0; i < n; ++i) gx[i] += g;
                         });
}

/// Fused selective-scan recurrence (see scan_kernel.hpp for the shapes).
template <class T>
Tensor<T> selective_scan(const Tensor<T>& u, const Tensor<T>& delta_raw,
                         const Tensor<T>& delta_bias, const Tensor<T>& a_log,
                         const Tensor<T>& b, const Tensor<T>& c,
                         const Tensor<T>& d, bool reverse = false) {
  const ScanDims dims = scan_dims(u.shape(), delta_raw.shape(),
                                  delta_bias.shape(), a_log.shape(), b.shape(),
                                  c.shape(), d.shape());
  auto saved = std::make_shared<ScanSaved>();
  std::vector<T> out(u.numel());
  scan_forward<T>(dims, u.data(), delta_raw.data(), delta_bias.data(),
                  a_log.data(), b.data(), c.data(), d.data(), reverse, out,
                  saved.get());
  FlopCounter::add(scan_flops(dims));
  auto node = detail::emit<T>("selective_scan", u.shape(), std::move(out),
                              {u, delta_raw, delta_bias, a_log, b, c, d},
                              [dims, reverse, saved, u, delta_raw, delta_bias,
                               a_log, b, c, d](detail::Node<T>& self) {
                                ScanGrads<T> g;
                                g.u = detail::input_grad(self, 0);
                                g.delta_raw = detail::input_grad(self, 1);
                                g.delta_bias = detail::input_grad(self, 2);
                                g.a_log = detail::input_grad(self, 3);
                                g.b = detail::input_grad(self, 4);
                                g.c = detail::input_grad(self, 5);
                                g.d = detail::input_grad(self, 6);
                                scan_backward<T>(dims, u.data(),
                                                 delta_raw.data(),
                                                 delta_bias.data(),
                                                 a_log.data(), b.data(),
                                                 c.data(), d.data(), reverse,
                                                 *saved, self.grad, g);
                              });
  if (!node.requires_grad()) saved->clear();
  return node;
}

/// Generic dispatcher over the closed primitive set.
template <class T>
Tensor<T> apply(OpKind kind, const std::vector<Tensor<T>>& in,
                const OpAttributes& attr = {}) {
  auto arity = [&](std::size_t lo, std::size_t hi) {
    if (in.size() < lo || in.size() > hi) {
      throw ShapeError(std::string(op_name(kind)) + ": expected " +
                       std::to_string(lo) + (lo == hi ? "" : "-" + std::to_string(hi)) +
                       " inputs, got " + std::to_string(in.size()));
    }
  };
  switch (kind) {
    case OpKind::add: arity(2, 2); return add(in[0], in[1]);
    case OpKind::sub: arity(2, 2); return sub(in[0], in[1]);
    case OpKind::mul: arity(2, 2); return mul(in[0], in[1]);
    case OpKind::matmul: arity(2, 2); return matmul(in[0], in[1]);
    case OpKind::conv2d:
      arity(2, 3);
      return conv2d(in[0], in[1],
                    in.size() == 3 ? std::optional<Tensor<T>>(in[2])
                                   : std::nullopt,
                    attr.groups, attr.pad);
    case OpKind::layer_norm: arity(3, 3); return layer_norm(in[0], in[1], in[2], attr.eps);
    case OpKind::silu: arity(1, 1); return silu(in[0]);
    case OpKind::softplus: arity(1, 1); return softplus(in[0]);
    case OpKind::exp: arity(1, 1); return exp(in[0]);
    case OpKind::sigmoid: arity(1, 1); return sigmoid(in[0]);
    case OpKind::concat: arity(1, in.size() ? in.size() : 1); return concat(in, attr.axis);
    case OpKind::slice: arity(1, 1); return slice(in[0], attr.axis, attr.start, attr.stop);
    case OpKind::reshape: arity(1, 1); return reshape(in[0], attr.shape);
    case OpKind::permute: arity(1, 1); return permute(in[0], attr.perm);
    case OpKind::pixel_shuffle: arity(1, 1); return pixel_shuffle(in[0], attr.factor);
    case OpKind::mean: arity(1, 1); return mean(in[0]);
    case OpKind::sum: arity(1, 1); return sum(in[0]);
    case OpKind::abs: arity(1, 1); return abs(in[0]);
    case OpKind::selective_scan:
      arity(7, 7);
      return selective_scan(in[0], in[1], in[2], in[3], in[4], in[5], in[6],
                            attr.reverse);
  }
  throw Error("apply: unknown primitive kind " +
              std::to_string(static_cast<int>(kind)));
}

}  // namespace ops
}  // namespace raslf
