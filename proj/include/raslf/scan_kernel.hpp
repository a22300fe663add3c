#pragma once

// Fused kernel for the selective-scan recurrence
//   delta_t = softplus(delta_raw_t + bias)
//   h_t     = exp(delta_t * A) * h_{t-1} + delta_t * B_t * x_t,  h_0 = 0
//   y_t     = sum_n C_t[n] * h_t[n] + D * x_t
// with A = -exp(A_log). Shapes: x, delta_raw (B, L, Ci); bias, D (Ci);
// A_log (Ci, N); B, C (B, L, N). State is accumulated in double.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "raslf/tensor.hpp"

namespace raslf {

struct ScanDims {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::size_t channels = 0;
  std::size_t state = 0;
};

inline ScanDims scan_dims(const Shape& u, const Shape& delta_raw,
                          const Shape& delta_bias, const Shape& a_log,
                          const Shape& b, const Shape& c, const Shape& d) {
  if (u.size() != 3 || u[1] == 0) {
    throw ShapeError("selective_scan: tokens must be (B, L >= 1, Ci), got " +
                     to_string(u));
  }
  ScanDims dims{u[0], u[1], u[2], a_log.size() == 2 ? a_log[1] : 0};
  auto check = [](bool ok, const char* what, const Shape& got) {
    if (!ok) {
      throw ShapeError(std::string("selective_scan: ") + what + ", got " +
                       to_string(got));
    }
  };
  check(dims.state >= 1 && a_log[0] == dims.channels,
        "A_log must be (Ci, N >= 1)", a_log);
  check(delta_raw == u, "delta must match tokens", delta_raw);
  check(delta_bias == Shape{dims.channels}, "delta bias must be (Ci)",
        delta_bias);
  check(d == Shape{dims.channels}, "D must be (Ci)", d);
  const Shape bc{dims.batch, dims.length, dims.state};
  check(b == bc, "B must be (B, L, N)", b);
  check(c == bc, "C must be (B, L, N)", c);
  return dims;
}

/// Analytic FLOPs: delta (bias add + softplus) 4, per state 8, skip 2.
inline std::uint64_t scan_flops(const ScanDims& d) {
  return std::uint64_t{d.batch} * d.length * d.channels * (8 * d.state + 6);
}

/// Intermediates kept for the backward pass.
struct ScanSaved {
  std::vector<double> h;      // (B, L, Ci, N) in scan order
  std::vector<double> decay;  // (B, L, Ci, N)
  std::vector<double> delta;  // (B, L, Ci)
  void clear() {
    h = {};
    decay = {};
    delta = {};
  }
};

template <class T>
struct ScanGrads {
  T* u = nullptr;
  T* delta_raw = nullptr;
  T* delta_bias = nullptr;
  T* a_log = nullptr;
  T* b = nullptr;
  T* c = nullptr;
  T* d = nullptr;
};

namespace detail {

template <class T>
double softplus_t(double x) {
  if (x > 20.0) return x;
  const T v = static_cast<T>(x);
  return double(std::log1p(std::exp(v)));
}

inline double sigmoid_d(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                : std::exp(x) / (1.0 + std::exp(x));
}

// Token index of scan step s.
inline std::size_t scan_token(std::size_t s, std::size_t length,
                              bool reverse) {
  return reverse ? length - 1 - s : s;
}

}  // namespace detail

template <class T>
void scan_forward(const ScanDims& dims, std::span<const T> u,
                  std::span<const T> delta_raw, std::span<const T> delta_bias,
                  std::span<const T> a_log, std::span<const T> b,
                  std::span<const T> c, std::span<const T> d, bool reverse,
                  std::span<T> out, ScanSaved* saved) {
  const std::size_t L = dims.length, Ci = dims.channels, N = dims.state;
  std::vector<double> A(Ci * N);
  for (std::size_t i = 0; i < A.size(); ++i) A[i] = -std::exp(double(a_log[i]));
  if (saved) {
    saved->h.assign(dims.batch * L * Ci * N, 0.0);
    saved->decay.assign(dims.batch * L * Ci * N, 0.0);
    saved->delta.assign(dims.batch * L * Ci, 0.0);
  }
  // Row-at-a-time over all (channel, state) pairs. exp runs in T precision;
  // the state itself is accumulated in double.
  const std::size_t CN = Ci * N;
  std::vector<double> h(CN), decay(CN), dt(Ci), dx(Ci);
  for (std::size_t bi = 0; bi < dims.batch; ++bi) {
    std::fill(h.begin(), h.end(), 0.0);
    for (std::size_t s = 0; s < L; ++s) {
      const std::size_t t = detail::scan_token(s, L, reverse);
      const std::size_t row = bi * L + t;
      const T* bt = b.data() + row * N;
      const T* ct = c.data() + row * N;
      const T* xt = u.data() + row * Ci;
      const T* rt = delta_raw.data() + row * Ci;
      for (std::size_t ch = 0; ch < Ci; ++ch) {
        dt[ch] = detail::softplus_t<T>(double(rt[ch]) + double(delta_bias[ch]));
        dx[ch] = dt[ch] * double(xt[ch]);
      }
      for (std::size_t i = 0; i < CN; ++i)
        decay[i] = double(std::exp(static_cast<T>(dt[i / N] * A[i])));
      for (std::size_t ch = 0; ch < Ci; ++ch) {
        double* hc = h.data() + ch * N;
        const double* dc = decay.data() + ch * N;
        double y = double(d[ch]) * double(xt[ch]);
        for (std::size_t n = 0; n < N; ++n) {
          hc[n] = dc[n] * hc[n] + dx[ch] * double(bt[n]);
          y += double(ct[n]) * hc[n];
        }
        if (!std::isfinite(y)) {
          std::size_t bad = 0;
          while (bad + 1 < N && std::isfinite(hc[bad])) ++bad;
          throw NumericError("selective_scan: non-finite state at t=" +
                             std::to_string(t) + ", c=" + std::to_string(ch) +
                             ", n=" + std::to_string(bad));
        }
        out[row * Ci + ch] = static_cast<T>(y);
      }
      if (saved) {
        const std::size_t base = (bi * L + s) * CN;
        std::copy(h.begin(), h.end(), saved->h.begin() + std::ptrdiff_t(base));
        std::copy(decay.begin(), decay.end(),
                  saved->decay.begin() + std::ptrdiff_t(base));
        std::copy(dt.begin(), dt.end(),
                  saved->delta.begin() + std::ptrdiff_t((bi * L + s) * Ci));
      }
    }
  }
}

template <class T>
void scan_backward(const ScanDims& dims, std::span<const T> u,
                   std::span<const T> delta_raw, std::span<const T> delta_bias,
                   std::span<const T> a_log, std::span<const T> b,
                   std::span<const T> c, std::span<const T> d, bool reverse,
                   const ScanSaved& saved, std::span<const T> grad_out,
                   const ScanGrads<T>& g) {
  const std::size_t L = dims.length, Ci = dims.channels, N = dims.state;
  std::vector<double> A(Ci * N);
  for (std::size_t i = 0; i < A.size(); ++i) A[i] = -std::exp(double(a_log[i]));
  std::vector<double> gA(Ci * N, 0.0), gD(Ci, 0.0), gbias(Ci, 0.0);
  std::vector<double> gh(Ci * N);
  std::vector<double> gB(N), gC(N);
  for (std::size_t bi = 0; bi < dims.batch; ++bi) {
    std::fill(gh.begin(), gh.end(), 0.0);
    for (std::size_t s = L; s-- > 0;) {
      const std::size_t t = detail::scan_token(s, L, reverse);
      const std::size_t row = bi * L + t;
      const T* bt = b.data() + row * N;
      const T* ct = c.data() + row * N;
      std::fill(gB.begin(), gB.end(), 0.0);
      std::fill(gC.begin(), gC.end(), 0.0);
      for (std::size_t ch = 0; ch < Ci; ++ch) {
        const double gy = grad_out[row * Ci + ch];
        const double x = u[row * Ci + ch];
        const std::size_t cur = ((bi * L + s) * Ci + ch) * N;
        const double dt = saved.delta[(bi * L + s) * Ci + ch];
        gD[ch] += gy * x;
        double gx = gy * double(d[ch]);
        double gdt = 0.0;
        double* ghc = gh.data() + ch * N;
        const double* ac = A.data() + ch * N;
        for (std::size_t n = 0; n < N; ++n) {
          const double h_t = saved.h[cur + n];
          const double h_prev = s > 0 ? saved.h[cur - Ci * N + n] : 0.0;
          const double decay = saved.decay[cur + n];
          gC[n] += gy * h_t;
          const double gtot = ghc[n] + gy * double(ct[n]);
          const double gdecay = gtot * h_prev;
          gdt += gdecay * decay * ac[n] + gtot * double(bt[n]) * x;
          gA[ch * N + n] += gdecay * decay * dt;
          gB[n] += gtot * dt * x;
          gx += gtot * dt * double(bt[n]);
          ghc[n] = gtot * decay;
        }
        const double graw =
            gdt * detail::sigmoid_d(double(delta_raw[row * Ci + ch]) +
                                    double(delta_bias[ch]));
        if (g.delta_raw) g.delta_raw[row * Ci + ch] += static_cast<T>(graw);
        gbias[ch] += graw;
        if (g.u) g.u[row * Ci + ch] += static_cast<T>(gx);
      }
      for (std::size_t n = 0; n < N; ++n) {
        if (g.b) g.b[row * N + n] += static_cast<T>(gB[n]);
        if (g.c) g.c[row * N + n] += static_cast<T>(gC[n]);
      }
    }
  }
  for (std::size_t ch = 0; ch < Ci; ++ch) {
    if (g.d) g.d[ch] += static_cast<T>(gD[ch]);
    if (g.delta_bias) g.delta_bias[ch] += static_cast<T>(gbias[ch]);
    for (std::size_t n = 0; n < N; ++n) {
      if (g.a_log) {
        g.a_log[ch * N + n] +=
            static_cast<T>(gA[ch * N + n] * A[ch * N + n]);
      }
    }
  }
}

}  // namespace raslf
