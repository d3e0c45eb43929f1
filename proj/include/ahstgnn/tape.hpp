#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "ahstgnn/common.hpp"
#include "ahstgnn/tensor.hpp"

namespace ahst {

namespace detail {

// C[m,n] += A[m,k] * B[k,n]
inline void gemm_acc(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* ar = a + i * k;
    double* cr = c + i * n;
    for (int64_t kk = 0; kk < k; ++kk) {
      const double av = ar[kk];
      const double* br = b + kk * n;
      for (int64_t j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

// dA[m,k] += G[m,n] * B[k,n]^T
inline void gemm_abt_acc(const double* g, const double* b, double* da, int64_t m, int64_t n, int64_t k) {
  for (int64_t i = 0; i < m; ++i) {
    const double* gr = g + i * n;
    double* dr = da + i * k;
    for (int64_t kk = 0; kk < k; ++kk) {
      const double* br = b + kk * n;
      double acc = 0.0;
      for (int64_t j = 0; j < n; ++j) acc += gr[j] * br[j];
      dr[kk] += acc;
    }
  }
}

// dB[k,n] += A[m,k]^T * G[m,n]
inline void gemm_atb_acc(const double* a, const double* g, double* db, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* ar = a + i * k;
    const double* gr = g + i * n;
    for (int64_t kk = 0; kk < k; ++kk) {
      const double av = ar[kk];
      if (av == 0.0) continue;
      double* dr = db + kk * n;
      for (int64_t j = 0; j < n; ++j) dr[j] += av * gr[j];
    }
  }
}

}  // namespace detail

enum class EwOp { add, sub, mul };

// Records every executed operation together with its backward rule; replaying
// the rules in reverse order accumulates gradients into each tensor reachable
// from the loss whose needs_grad flag is set. Forward results are identical
// whether or not recording is enabled.
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }
  size_t size() const { return entries_.size(); }

  void clear() { entries_.clear(); }

  // ---- elementwise with trailing-dimension broadcast ----

  Tensor add(const Tensor& a, const Tensor& b) { return elementwise(EwOp::add, a, b); }
  Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(EwOp::sub, a, b); }
  Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(EwOp::mul, a, b); }

  Tensor elementwise(EwOp op, const Tensor& a, const Tensor& b) {
    const Shape os = broadcast_shape(a.shape(), b.shape());
    Tensor out = Tensor::zeros(os);
    double* o = out.data();
    const double* av = a.data();
    const double* bv = b.data();
    if (a.shape() == b.shape()) {
      const int64_t n = out.numel();
      switch (op) {
        case EwOp::add: for (int64_t i = 0; i < n; ++i) o[i] = av[i] + bv[i]; break;
        case EwOp::sub: for (int64_t i = 0; i < n; ++i) o[i] = av[i] - bv[i]; break;
        case EwOp::mul: for (int64_t i = 0; i < n; ++i) o[i] = av[i] * bv[i]; break;
      }
    } else {
      const auto sa = detail::bcast_strides(a.shape(), os);
      const auto sb = detail::bcast_strides(b.shape(), os);
      switch (op) {
        case EwOp::add:
          detail::for_each_pair(os, sa, sb, [&](int64_t io, int64_t ia, int64_t ib) { o[io] = av[ia] + bv[ib]; });
          break;
        case EwOp::sub:
          detail::for_each_pair(os, sa, sb, [&](int64_t io, int64_t ia, int64_t ib) { o[io] = av[ia] - bv[ib]; });
          break;
        case EwOp::mul:
          detail::for_each_pair(os, sa, sb, [&](int64_t io, int64_t ia, int64_t ib) { o[io] = av[ia] * bv[ib]; });
          break;
      }
    }
    if (track(out, {a, b})) {
      Tensor ta = a, tb = b, to = out;
      record(out, [ta, tb, to, op]() mutable {
        const Shape& os2 = to.shape();
        const std::vector<double>& g = to.grad();
        const bool same = ta.shape() == tb.shape();
        if (ta.needs_grad()) {
          std::vector<double>& ga = ta.ensure_grad();
          if (op == EwOp::mul) {
            const double* bv2 = tb.data();
            if (same) {
              for (int64_t i = 0; i < to.numel(); ++i) ga[static_cast<size_t>(i)] += g[static_cast<size_t>(i)] * bv2[i];
            } else {
              const auto sa2 = detail::bcast_strides(ta.shape(), os2);
              const auto sb2 = detail::bcast_strides(tb.shape(), os2);
              detail::for_each_pair(os2, sa2, sb2, [&](int64_t io, int64_t ia, int64_t ib) {
                ga[static_cast<size_t>(ia)] += g[static_cast<size_t>(io)] * bv2[ib];
              });
            }
          } else {
            if (same) {
              for (int64_t i = 0; i < to.numel(); ++i) ga[static_cast<size_t>(i)] += g[static_cast<size_t>(i)];
            } else {
              const auto sa2 = detail::bcast_strides(ta.shape(), os2);
              detail::for_each_strided(os2, sa2, [&](int64_t io, int64_t ia) {
                ga[static_cast<size_t>(ia)] += g[static_cast<size_t>(io)];
              });
            }
          }
        }
        if (tb.needs_grad()) {
          std::vector<double>& gb = tb.ensure_grad();
          const double sgn = (op == EwOp::sub) ? -1.0 : 1.0;
          if (op == EwOp::mul) {
            const double* av2 = ta.data();
            if (same) {
              for (int64_t i = 0; i < to.numel(); ++i) gb[static_cast<size_t>(i)] += g[static_cast<size_t>(i)] * av2[i];
            } else {
              const auto sa2 = detail::bcast_strides(ta.shape(), os2);
              const auto sb2 = detail::bcast_strides(tb.shape(), os2);
              detail::for_each_pair(os2, sa2, sb2, [&](int64_t io, int64_t ia, int64_t ib) {
                gb[static_cast<size_t>(ib)] += g[static_cast<size_t>(io)] * av2[ia];
              });
            }
          } else {
            if (same) {
              for (int64_t i = 0; i < to.numel(); ++i) gb[static_cast<size_t>(i)] += sgn * g[static_cast<size_t>(i)];
            } else {
              const auto sb2 = detail::bcast_strides(tb.shape(), os2);
              detail::for_each_strided(os2, sb2, [&](int64_t io, int64_t ib) {
                gb[static_cast<size_t>(ib)] += sgn * g[static_cast<size_t>(io)];
              });
            }
          }
        }
      });
    }
    return out;
  }

  // ---- matmul: a[..,m,k] * b[..,k,n]; leading dimensions broadcast ----

  Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() < 2 || b.ndim() < 2) {
      throw ShapeError("matmul needs rank >= 2 operands, got " + shape_str(a.shape()) + " and " +
                       shape_str(b.shape()));
    }
    const int64_t m = a.dim(-2), k = a.dim(-1);
    const int64_t kb = b.dim(-2), n = b.dim(-1);
    if (k != kb) {
      throw ShapeError("matmul inner dimensions disagree: " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()));
    }
    const Shape lead_a(a.shape().begin(), a.shape().end() - 2);
    const Shape lead_b(b.shape().begin(), b.shape().end() - 2);
    const Shape lead = broadcast_shape(lead_a, lead_b);
    Shape os = lead;
    os.push_back(m);
    os.push_back(n);
    Tensor out = Tensor::zeros(os);

    const auto sa = detail::bcast_strides(lead_a, lead);
    const auto sb = detail::bcast_strides(lead_b, lead);
    const double* av = a.data();
    const double* bv = b.data();
    double* ov = out.data();
    detail::for_each_pair(lead, sa, sb, [&](int64_t lo, int64_t la, int64_t lb) {
      detail::gemm_acc(av + la * m * k, bv + lb * k * n, ov + lo * m * n, m, k, n);
    });

    if (track(out, {a, b})) {
      Tensor ta = a, tb = b, to = out;
      record(out, [ta, tb, to, lead, sa, sb, m, k, n]() mutable {
        const double* g = to.grad().data();
        if (ta.needs_grad()) {
          double* ga = ta.ensure_grad().data();
          const double* bv2 = tb.data();
          detail::for_each_pair(lead, sa, sb, [&](int64_t lo, int64_t la, int64_t lb) {
            detail::gemm_abt_acc(g + lo * m * n, bv2 + lb * k * n, ga + la * m * k, m, n, k);
          });
        }
        if (tb.needs_grad()) {
          double* gb = tb.ensure_grad().data();
          const double* av2 = ta.data();
          detail::for_each_pair(lead, sa, sb, [&](int64_t lo, int64_t la, int64_t lb) {
            detail::gemm_atb_acc(av2 + la * m * k, g + lo * m * n, gb + lb * k * n, m, k, n);
          });
        }
      });
    }
    return out;
  }

  // ---- activations ----

  Tensor sigmoid(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    const double* xv = x.data();
    double* o = out.data();
    for (int64_t i = 0; i < x.numel(); ++i) {
      const double v = xv[i];
      if (v >= 0.0) {
        o[i] = 1.0 / (1.0 + std::exp(-v));
      } else {
        const double e = std::exp(v);
        o[i] = e / (1.0 + e);
      }
    }
    if (track(out, {x})) {
      Tensor tx = x, to = out;
      record(out, [tx, to]() mutable {
        const std::vector<double>& g = to.grad();
        const double* y = to.data();
        std::vector<double>& gx = tx.ensure_grad();
        for (int64_t i = 0; i < to.numel(); ++i) {
          gx[static_cast<size_t>(i)] += g[static_cast<size_t>(i)] * y[i] * (1.0 - y[i]);
        }
      });
    }
    return out;
  }

  Tensor tanh(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    const double* xv = x.data();
    double* o = out.data();
    for (int64_t i = 0; i < x.numel(); ++i) o[i] = std::tanh(xv[i]);
    if (track(out, {x})) {
      Tensor tx = x, to = out;
      record(out, [tx, to]() mutable {
        const std::vector<double>& g = to.grad();
        const double* y = to.data();
        std::vector<double>& gx = tx.ensure_grad();
        for (int64_t i = 0; i < to.numel(); ++i) {
          gx[static_cast<size_t>(i)] += g[static_cast<size_t>(i)] * (1.0 - y[i] * y[i]);
        }
      });
    }
    return out;
  }

  Tensor relu(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    const double* xv = x.data();
    double* o = out.data();
    for (int64_t i = 0; i < x.numel(); ++i) o[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    if (track(out, {x})) {
      Tensor tx = x, to = out;
      record(out, [tx, to]() mutable {
        const std::vector<double>& g = to.grad();
        const double* xv2 = tx.data();
        std::vector<double>& gx = tx.ensure_grad();
        for (int64_t i = 0; i < to.numel(); ++i) {
          if (xv2[i] > 0.0) gx[static_cast<size_t>(i)] += g[static_cast<size_t>(i)];
        }
      });
    }
    return out;
  }

  Tensor leaky_relu(const Tensor& x, double alpha = 0.2) {
    Tensor out = Tensor::zeros(x.shape());
    const double* xv = x.data();
    double* o = out.data();
    for (int64_t i = 0; i < x.numel(); ++i) o[i] = xv[i] > 0.0 ? xv[i] : alpha * xv[i];
    if (track(out, {x})) {
      Tensor tx = x, to = out;
      record(out, [tx, to, alpha]() mutable {
        const std::vector<double>& g = to.grad();
        const double* xv2 = tx.data();
        std::vector<double>& gx = tx.ensure_grad();
        for (int64_t i = 0; i < to.numel(); ++i) {
          gx[static_cast<size_t>(i)] += g[static_cast<size_t>(i)] * (xv2[i] > 0.0 ? 1.0 : alpha);
        }
      });
    }
    return out;
  }

  // |x| with subgradient sign(x), 0 at the origin.
  Tensor abs(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    const double* xv = x.data();
    double* o = out.data();
    for (int64_t i = 0; i < x.numel(); ++i) o[i] = std::fabs(xv[i]);
    if (track(out, {x})) {
      Tensor tx = x, to = out;
      record(out, [tx, to]() mutable {
        const std::vector<double>& g = to.grad();
        const double* xv2 = tx.data();
        std::vector<double>& gx = tx.ensure_grad();
        for (int64_t i = 0; i < to.numel(); ++i) {
          const double s = xv2[i] > 0.0 ? 1.0 : (xv2[i] < 0.0 ? -1.0 : 0.0);
          gx[static_cast<size_t>(i)] += g[static_cast<size_t>(i)] * s;
        }
      });
    }
    return out;
  }

  // ---- softmax ----

  // Max-subtracted; output is strictly positive and sums to 1 along `axis`.
  Tensor softmax(const Tensor& x, int axis) {
    const int nd = x.ndim();
    if (axis < 0) axis += nd;
    if (axis < 0 || axis >= nd) {
      throw ShapeError("softmax axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
    }
    const int64_t axis_len = x.shape()[static_cast<size_t>(axis)];
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= x.shape()[static_cast<size_t>(i)];
    for (int i = axis + 1; i < nd; ++i) inner *= x.shape()[static_cast<size_t>(i)];

    Tensor out = Tensor::zeros(x.shape());
    const double* xv = x.data();
    double* o = out.data();
    for (int64_t ou = 0; ou < outer; ++ou) {
      for (int64_t in = 0; in < inner; ++in) {
        const int64_t base = ou * axis_len * inner + in;
        double mx = -std::numeric_limits<double>::infinity();
        for (int64_t a = 0; a < axis_len; ++a) mx = std::max(mx, xv[base + a * inner]);
        double z = 0.0;
        for (int64_t a = 0; a < axis_len; ++a) {
          const double e = std::exp(xv[base + a * inner] - mx);
          o[base + a * inner] = e;
          z += e;
        }
        const double zi = 1.0 / z;
        for (int64_t a = 0; a < axis_len; ++a) o[base + a * inner] *= zi;
      }
    }
    if (track(out, {x})) {
      Tensor tx = x, to = out;
      record(out, [tx, to, outer, inner, axis_len]() mutable {
        const double* g = to.grad().data();
        const double* y = to.data();
        std::vector<double>& gx = tx.ensure_grad();
        for (int64_t ou = 0; ou < outer; ++ou) {
          for (int64_t in = 0; in < inner; ++in) {
            const int64_t base = ou * axis_len * inner + in;
            double dot = 0.0;
            for (int64_t a = 0; a < axis_len; ++a) dot += g[base + a * inner] * y[base + a * inner];
            for (int64_t a = 0; a < axis_len; ++a) {
              const int64_t idx = base + a * inner;
              gx[static_cast<size_t>(idx)] += y[idx] * (g[idx] - dot);
            }
          }
        }
      });
    }
    return out;
  }

  // Softmax over the last axis restricted to positions where `mask` > 0.
  // Masked-out positions are exactly 0 in the output and receive no gradient.
  // The mask must be a non-differentiable tensor whose shape is a trailing
  // suffix of (or equal to) the score shape. A row with no unmasked entry is
  // a contract violation (an isolated node cannot be normalized).
  Tensor masked_softmax(const Tensor& scores, const Tensor& mask) {
    if (mask.needs_grad()) throw ContractError("masked_softmax mask must not require gradients");
    const Shape& ss = scores.shape();
    const Shape& ms = mask.shape();
    if (ms.size() > ss.size() || !std::equal(ms.rbegin(), ms.rend(), ss.rbegin())) {
      throw ShapeError("mask shape " + shape_str(ms) + " is not a suffix of " + shape_str(ss));
    }
    const int64_t row = ss.back();
    const int64_t rows = scores.numel() / row;
    const int64_t mask_n = mask.numel();
    Tensor out = Tensor::zeros(ss);
    const double* sv = scores.data();
    const double* mv = mask.data();
    double* o = out.data();
    for (int64_t r = 0; r < rows; ++r) {
      const int64_t base = r * row;
      const int64_t mbase = (base % mask_n);
      bool any_neighbor = false;
      double mx = -std::numeric_limits<double>::infinity();
      for (int64_t j = 0; j < row; ++j) {
        if (mv[mbase + j] > 0.0) {
          any_neighbor = true;
          // NaN scores must propagate into the output; neighbor existence
          // is decided by the mask alone.
          if (!(sv[base + j] <= mx)) mx = sv[base + j];
        }
      }
      if (!any_neighbor) {
        throw ContractError("masked_softmax: row " + std::to_string(r) + " has no neighbors");
      }
      double z = 0.0;
      for (int64_t j = 0; j < row; ++j) {
        if (mv[mbase + j] > 0.0) {
          const double e = std::exp(sv[base + j] - mx);
          o[base + j] = e;
          z += e;
        }
      }
      const double zi = 1.0 / z;
      for (int64_t j = 0; j < row; ++j) o[base + j] *= zi;
    }
    if (track(out, {scores})) {
      Tensor ts = scores, to = out, tm = mask;
      record(out, [ts, to, tm, rows, row, mask_n]() mutable {
        const double* g = to.grad().data();
        const double* y = to.data();
        const double* mv2 = tm.data();
        std::vector<double>& gs = ts.ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
          const int64_t base = r * row;
          const int64_t mbase = (base % mask_n);
          double dot = 0.0;
          for (int64_t j = 0; j < row; ++j) dot += g[base + j] * y[base + j];
          for (int64_t j = 0; j < row; ++j) {
            if (mv2[mbase + j] > 0.0) {
              gs[static_cast<size_t>(base + j)] += y[base + j] * (g[base + j] - dot);
            }
          }
        }
      });
    }
    return out;
  }

  // ---- dilated causal convolution along the time axis ----

  // x: [B,T,N,Cin], kernel: [k,Cin,Cout] -> [B,T,N,Cout]. The time axis is
  // left-padded with (k-1)*dilation implicit zeros, so output length equals T
  // and output at time t depends only on inputs at times <= t.
  Tensor dilated_causal_conv1d(const Tensor& x, const Tensor& kernel, int64_t dilation) {
    if (x.ndim() != 4 || kernel.ndim() != 3) {
      throw ShapeError("conv expects x[B,T,N,Cin] and kernel[k,Cin,Cout], got " +
                       shape_str(x.shape()) + " and " + shape_str(kernel.shape()));
    }
    if (dilation < 1 || kernel.dim(0) < 1) throw ContractError("conv needs k >= 1 and dilation >= 1");
    const int64_t B = x.dim(0), T = x.dim(1), N = x.dim(2), Cin = x.dim(3);
    const int64_t k = kernel.dim(0), Cout = kernel.dim(2);
    if (kernel.dim(1) != Cin) {
      throw ShapeError("conv channel mismatch: x has Cin=" + std::to_string(Cin) + ", kernel " +
                       shape_str(kernel.shape()));
    }
    Tensor out = Tensor::zeros({B, T, N, Cout});
    const double* xv = x.data();
    const double* kv = kernel.data();
    double* o = out.data();
    for (int64_t b = 0; b < B; ++b) {
      for (int64_t t = 0; t < T; ++t) {
        double* orow = o + ((b * T + t) * N) * Cout;
        for (int64_t i = 0; i < k; ++i) {
          const int64_t ts = t - (k - 1 - i) * dilation;
          if (ts < 0) continue;
          detail::gemm_acc(xv + ((b * T + ts) * N) * Cin, kv + i * Cin * Cout, orow, N, Cin, Cout);
        }
      }
    }
    if (track(out, {x, kernel})) {
      Tensor tx = x, tk = kernel, to = out;
      record(out, [tx, tk, to, B, T, N, Cin, Cout, k, dilation]() mutable {
        const double* g = to.grad().data();
        if (tx.needs_grad()) {
          double* gx = tx.ensure_grad().data();
          const double* kv2 = tk.data();
          for (int64_t b = 0; b < B; ++b) {
            for (int64_t t = 0; t < T; ++t) {
              const double* grow = g + ((b * T + t) * N) * Cout;
              for (int64_t i = 0; i < k; ++i) {
                const int64_t ts = t - (k - 1 - i) * dilation;
                if (ts < 0) continue;
                detail::gemm_abt_acc(grow, kv2 + i * Cin * Cout, gx + ((b * T + ts) * N) * Cin, N, Cout, Cin);
              }
            }
          }
        }
        if (tk.needs_grad()) {
          double* gk = tk.ensure_grad().data();
          const double* xv2 = tx.data();
          for (int64_t b = 0; b < B; ++b) {
            for (int64_t t = 0; t < T; ++t) {
              const double* grow = g + ((b * T + t) * N) * Cout;
              for (int64_t i = 0; i < k; ++i) {
                const int64_t ts = t - (k - 1 - i) * dilation;
                if (ts < 0) continue;
                detail::gemm_atb_acc(xv2 + ((b * T + ts) * N) * Cin, grow, gk + i * Cin * Cout, N, Cin, Cout);
              }
            }
          }
        }
      });
    }
    return out;
  }

  // ---- reductions / reshaping ----

  // Empty `axes` reduces over all axes.
  Tensor reduce_sum(const Tensor& x, std::vector<int> axes = {}, bool keepdims = false) {
    return reduce(x, std::move(axes), keepdims, false);
  }

  Tensor reduce_mean(const Tensor& x, std::vector<int> axes = {}, bool keepdims = false) {
    return reduce(x, std::move(axes), keepdims, true);
  }

  Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ContractError("concat of zero tensors");
    const int nd = parts[0].ndim();
    if (axis < 0) axis += nd;
    if (axis < 0 || axis >= nd) throw ShapeError("concat axis out of range");
    Shape os = parts[0].shape();
    int64_t axis_total = 0;
    for (const Tensor& p : parts) {
      if (p.ndim() != nd) throw ShapeError("concat rank mismatch");
      for (int i = 0; i < nd; ++i) {
        if (i != axis && p.shape()[static_cast<size_t>(i)] != os[static_cast<size_t>(i)]) {
          throw ShapeError("concat shape mismatch: " + shape_str(p.shape()) + " vs " + shape_str(os));
        }
      }
      axis_total += p.dim(axis);
    }
    os[static_cast<size_t>(axis)] = axis_total;
    Tensor out = Tensor::zeros(os);

    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= os[static_cast<size_t>(i)];
    for (int i = axis + 1; i < nd; ++i) inner *= os[static_cast<size_t>(i)];
    const int64_t out_block = axis_total * inner;
    double* o = out.data();
    int64_t offset = 0;
    for (const Tensor& p : parts) {
      const int64_t pb = p.dim(axis) * inner;
      const double* pv = p.data();
      for (int64_t ou = 0; ou < outer; ++ou) {
        std::copy(pv + ou * pb, pv + (ou + 1) * pb, o + ou * out_block + offset);
      }
      offset += pb;
    }
    bool any = false;
    for (const Tensor& p : parts) any = any || p.needs_grad();
    if (recording_ && any) {
      out.set_needs_grad(true);
      std::vector<Tensor> tp = parts;
      Tensor to = out;
      record(out, [tp, to, outer, out_block]() mutable {
        const double* g = to.grad().data();
        int64_t offset2 = 0;
        for (Tensor& p : tp) {
          const int64_t blk = p.numel() / outer;
          if (p.needs_grad()) {
            double* gp = p.ensure_grad().data();
            for (int64_t ou = 0; ou < outer; ++ou) {
              const double* src = g + ou * out_block + offset2;
              double* dst = gp + ou * blk;
              for (int64_t i = 0; i < blk; ++i) dst[i] += src[i];
            }
          }
          offset2 += blk;
        }
      });
    }
    return out;
  }

  Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
      throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape) +
                       " changes element count");
    }
    Tensor out = Tensor::from(std::move(shape), x.values());
    if (track(out, {x})) {
      Tensor tx = x, to = out;
      record(out, [tx, to]() mutable {
        const std::vector<double>& g = to.grad();
        std::vector<double>& gx = tx.ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      });
    }
    return out;
  }

  Tensor permute(const Tensor& x, const std::vector<int>& axes) {
    const int nd = x.ndim();
    if (static_cast<int>(axes.size()) != nd) throw ShapeError("permute needs one index per axis");
    std::vector<bool> seen(static_cast<size_t>(nd), false);
    Shape os(static_cast<size_t>(nd));
    for (int i = 0; i < nd; ++i) {
      const int a = axes[static_cast<size_t>(i)];
      if (a < 0 || a >= nd || seen[static_cast<size_t>(a)]) throw ShapeError("bad permutation");
      seen[static_cast<size_t>(a)] = true;
      os[static_cast<size_t>(i)] = x.shape()[static_cast<size_t>(a)];
    }
    Tensor out = Tensor::zeros(os);
    const auto in_st = detail::row_major_strides(x.shape());
    std::vector<int64_t> st(static_cast<size_t>(nd));
    for (int i = 0; i < nd; ++i) st[static_cast<size_t>(i)] = in_st[static_cast<size_t>(axes[static_cast<size_t>(i)])];
    const double* xv = x.data();
    double* o = out.data();
    detail::for_each_strided(os, st, [&](int64_t io, int64_t ia) { o[io] = xv[ia]; });
    if (track(out, {x})) {
      Tensor tx = x, to = out;
      record(out, [tx, to, os, st]() mutable {
        const double* g = to.grad().data();
        std::vector<double>& gx = tx.ensure_grad();
        detail::for_each_strided(os, st, [&](int64_t io, int64_t ia) {
          gx[static_cast<size_t>(ia)] += g[io];
        });
      });
    }
    return out;
  }

  // ---- backward ----

  // Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. Gradients
  // accumulate across calls; callers zero parameter grads between steps.
  // Intermediate gradients are released as soon as their entry has run.
  void backward(const Tensor& loss) {
    if (loss.numel() != 1) {
      throw ContractError("backward expects a scalar loss, got shape " + shape_str(loss.shape()));
    }
    loss.impl()->grad.assign(1, 1.0);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (!it->out->grad.empty()) {
        it->fn();
      }
      if (!it->out->requires_grad) {
        it->out->grad.clear();
        it->out->grad.shrink_to_fit();
      }
    }
  }

 private:
  struct Entry {
    std::shared_ptr<detail::TensorData> out;
    std::function<void()> fn;
  };

  bool track(Tensor& out, std::initializer_list<Tensor> inputs) {
    if (!recording_) return false;
    bool any = false;
    for (const Tensor& t : inputs) any = any || t.needs_grad();
    if (any) out.set_needs_grad(true);
    return any;
  }

  void record(const Tensor& out, std::function<void()> fn) {
    entries_.push_back({out.impl(), std::move(fn)});
  }

  Tensor reduce(const Tensor& x, std::vector<int> axes, bool keepdims, bool mean) {
    const int nd = x.ndim();
    std::vector<bool> reduced(static_cast<size_t>(nd), false);
    if (axes.empty()) {
      std::fill(reduced.begin(), reduced.end(), true);
    } else {
      for (int a : axes) {
        if (a < 0) a += nd;
        if (a < 0 || a >= nd) {
          throw ShapeError("reduce axis out of range for " + shape_str(x.shape()));
        }
        reduced[static_cast<size_t>(a)] = true;
      }
    }
    Shape os;
    Shape padded(static_cast<size_t>(nd));  // output dims aligned to input rank
    int64_t count = 1;
    for (int i = 0; i < nd; ++i) {
      if (reduced[static_cast<size_t>(i)]) {
        count *= x.shape()[static_cast<size_t>(i)];
        padded[static_cast<size_t>(i)] = 1;
        if (keepdims) os.push_back(1);
      } else {
        padded[static_cast<size_t>(i)] = x.shape()[static_cast<size_t>(i)];
        os.push_back(x.shape()[static_cast<size_t>(i)]);
      }
    }
    Tensor out = Tensor::zeros(os);
    const auto st = detail::bcast_strides(padded, x.shape());
    const double* xv = x.data();
    double* o = out.data();
    detail::for_each_strided(x.shape(), st, [&](int64_t iin, int64_t iout) { o[iout] += xv[iin]; });
    if (mean) {
      const double inv = 1.0 / static_cast<double>(count);
      for (int64_t i = 0; i < out.numel(); ++i) o[i] *= inv;
    }
    if (track(out, {x})) {
      Tensor tx = x, to = out;
      const double scale = mean ? 1.0 / static_cast<double>(count) : 1.0;
      record(out, [tx, to, st, scale]() mutable {
        const double* g = to.grad().data();
        std::vector<double>& gx = tx.ensure_grad();
        detail::for_each_strided(tx.shape(), st, [&](int64_t iin, int64_t iout) {
          gx[static_cast<size_t>(iin)] += g[iout] * scale;
        });
      });
    }
    return out;
  }

  bool recording_;
  std::vector<Entry> entries_;
};

}  // namespace ahst
