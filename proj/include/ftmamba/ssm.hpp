#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "ftmamba/ops.hpp"
#include "ftmamba/tensor.hpp"

// Selective state space transform. Per channel ch and state index n:
//   h_t = exp(dt_t·A)·h_{t-1} + dt_t·B_t·x_t,   y_t = C_t·h_t + D·x_t
// with dt, B, C all computed from the input sequence itself.

namespace ftmamba {

template <typename T>
struct SsmParams {
  int channels = 0;    // c
  int state_size = 0;  // N
  int dt_rank = 0;     // r = ceil(c/16)

  Tensor<T> x_proj;     // [c, r+2N], no bias: rows of x -> (dt features, B, C)
  Tensor<T> dt_proj_w;  // [r, c]
  Tensor<T> dt_proj_b;  // [c]
  Tensor<T> A_log;      // [c, N]; A = -exp(A_log)
  Tensor<T> D;          // [c]

  static SsmParams init(int channels, int state_size, std::mt19937& rng) {
    SsmParams p;
    p.channels = channels;
    p.state_size = state_size;
    p.dt_rank = (channels + 15) / 16;
    p.x_proj = Tensor<T>::zeros({channels, p.dt_rank + 2 * state_size}, true);
    p.x_proj.fill_uniform(T(-1) / std::sqrt(T(channels)), T(1) / std::sqrt(T(channels)), rng);
    p.dt_proj_w = Tensor<T>::zeros({p.dt_rank, channels}, true);
    p.dt_proj_w.fill_uniform(T(-1) / std::sqrt(T(p.dt_rank)), T(1) / std::sqrt(T(p.dt_rank)), rng);
    // bias chosen so softplus(bias) lands in [1e-3, 1e-1]
    p.dt_proj_b = Tensor<T>::zeros({channels}, true);
    std::uniform_real_distribution<double> logdt(std::log(1e-3), std::log(1e-1));
    for (int ch = 0; ch < channels; ++ch) {
      const double dt = std::exp(logdt(rng));
      (*p.dt_proj_b.data)[ch] = static_cast<T>(std::log(std::expm1(dt)));
    }
    // -A spans 1..N on every channel
    p.A_log = Tensor<T>::zeros({channels, state_size}, true);
    for (int ch = 0; ch < channels; ++ch) {
      for (int n = 0; n < state_size; ++n) p.A_log.at(ch, n) = std::log(T(n + 1));
    }
    p.D = Tensor<T>::zeros({channels}, true);
    p.D.fill(T(1));
    return p;
  }

  std::vector<Tensor<T>> parameters() const { return {x_proj, dt_proj_w, dt_proj_b, A_log, D}; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const Tensor<T>& p : parameters()) n += p.numel();
    return n;
  }
};

// One-timestep discretization: abar[ch,n] = exp(dt[ch]·A[ch,n]),
// bbar[ch,n] = dt[ch]·B[n]. Forward-only helper.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> discretize(const Tensor<T>& A, const Tensor<T>& B_t,
                                           const Tensor<T>& dt_t) {
  if (A.rank() != 2 || static_cast<int>(dt_t.numel()) != A.shape[0] ||
      static_cast<int>(B_t.numel()) != A.shape[1]) {
    throw std::invalid_argument("discretize: A " + shape_str(A.shape) + ", B_t " +
                                shape_str(B_t.shape) + ", dt_t " + shape_str(dt_t.shape));
  }
  const int c = A.shape[0], N = A.shape[1];
  Tensor<T> abar = Tensor<T>::zeros({c, N});
  Tensor<T> bbar = Tensor<T>::zeros({c, N});
  for (int ch = 0; ch < c; ++ch) {
    const T dt = (*dt_t.data)[ch];
    if (!(dt > T(0))) {
      throw std::invalid_argument("discretize: dt must be positive (softplus upstream)");
    }
    for (int n = 0; n < N; ++n) {
      abar.at(ch, n) = std::exp(dt * A.at(ch, n));
      bbar.at(ch, n) = dt * (*B_t.data)[n];
    }
  }
  return {abar, bbar};
}

// Pair representing the affine state update h -> a·h + b.
template <typename T>
struct ScanPair {
  T a, b;
};

// Composition "p then q": h -> q.a·(p.a·h + p.b) + q.b.
template <typename T>
inline ScanPair<T> scan_combine(const ScanPair<T>& p, const ScanPair<T>& q) {
  return {q.a * p.a, q.a * p.b + q.b};
}

// Runs the recurrence for explicitly supplied per-step coefficients
// abar, bbar: [L, c, N]; C: [L, N]; D: [c]; x: [L, c]. Forward only.
template <typename T>
Tensor<T> scan_explicit(const Tensor<T>& abar, const Tensor<T>& bbar, const Tensor<T>& C,
                        const Tensor<T>& D, const Tensor<T>& x) {
  if (x.rank() != 2 || abar.rank() != 3 || abar.shape != bbar.shape ||
      abar.shape[0] != x.shape[0] || abar.shape[1] != x.shape[1] ||
      C.shape != std::vector<int>{x.shape[0], abar.shape[2]} ||
      static_cast<int>(D.numel()) != x.shape[1]) {
    throw std::invalid_argument("scan_explicit: abar " + shape_str(abar.shape) + ", x " +
                                shape_str(x.shape) + ", C " + shape_str(C.shape));
  }
  const int L = x.shape[0], c = x.shape[1], N = abar.shape[2];
  Tensor<T> y = Tensor<T>::zeros({L, c});
  std::vector<T> h(static_cast<std::size_t>(c) * N, T(0));
  for (int t = 0; t < L; ++t) {
    const T* at = abar.data->data() + static_cast<std::size_t>(t) * c * N;
    const T* bt = bbar.data->data() + static_cast<std::size_t>(t) * c * N;
    const T* ct = C.data->data() + static_cast<std::size_t>(t) * N;
    for (int ch = 0; ch < c; ++ch) {
      const T xt = x.at(t, ch);
      T acc = 0;
      T* hch = h.data() + static_cast<std::size_t>(ch) * N;
      for (int n = 0; n < N; ++n) {
        hch[n] = at[ch * N + n] * hch[n] + bt[ch * N + n] * xt;
        acc += ct[n] * hch[n];
      }
      y.at(t, ch) = acc + (*D.data)[ch] * xt;
    }
  }
  return y;
}

// Fused differentiable scan. Computing the recurrence as one taped operation
// keeps the tape short; the pull closure replays the recurrence in reverse
// using the saved state trajectory.
template <typename T>
Tensor<T> ssm_scan(const Tensor<T>& x, const Tensor<T>& dt, const Tensor<T>& B,
                   const Tensor<T>& C, const Tensor<T>& A, const Tensor<T>& D,
                   Tape<T>* tape = nullptr) {
  const int L = x.shape[0], c = x.shape[1];
  const int N = A.shape[1];
  if (dt.shape != x.shape || B.shape != std::vector<int>{L, N} || C.shape != B.shape ||
      A.shape != std::vector<int>{c, N} || static_cast<int>(D.numel()) != c) {
    throw std::invalid_argument("ssm_scan: x " + shape_str(x.shape) + ", dt " +
                                shape_str(dt.shape) + ", B " + shape_str(B.shape) + ", A " +
                                shape_str(A.shape));
  }
  const bool tracked = detail::track(tape, {&x, &dt, &B, &C, &A, &D});
  Tensor<T> y = Tensor<T>::zeros({L, c}, tracked);

  std::shared_ptr<std::vector<T>> h_all;
  std::vector<T> h(static_cast<std::size_t>(c) * N, T(0));
  if (tracked) h_all = std::make_shared<std::vector<T>>(static_cast<std::size_t>(L) * c * N);

  for (int t = 0; t < L; ++t) {
    const T* bt = B.data->data() + static_cast<std::size_t>(t) * N;
    const T* ct = C.data->data() + static_cast<std::size_t>(t) * N;
    for (int ch = 0; ch < c; ++ch) {
      const T xt = x.at(t, ch);
      const T dtt = dt.at(t, ch);
      const T* ach = A.data->data() + static_cast<std::size_t>(ch) * N;
      T* hch = h.data() + static_cast<std::size_t>(ch) * N;
      T acc = 0;
      for (int n = 0; n < N; ++n) {
        hch[n] = std::exp(dtt * ach[n]) * hch[n] + dtt * bt[n] * xt;
        acc += ct[n] * hch[n];
      }
      y.at(t, ch) = acc + (*D.data)[ch] * xt;
    }
    if (tracked) {
      std::copy(h.begin(), h.end(),
                h_all->begin() + static_cast<std::size_t>(t) * c * N);
    }
  }

  if (tracked) {
    tape->record(y.grad, [x, dt, B, C, A, D, y, h_all, L, c, N]() {
      std::vector<T> gh(static_cast<std::size_t>(c) * N, T(0));
      for (int t = L - 1; t >= 0; --t) {
        const T* gy = y.grad->data() + static_cast<std::size_t>(t) * c;
        const T* ht = h_all->data() + static_cast<std::size_t>(t) * c * N;
        const T* hprev = t > 0 ? h_all->data() + static_cast<std::size_t>(t - 1) * c * N : nullptr;
        const T* bt = B.data->data() + static_cast<std::size_t>(t) * N;
        const T* ct = C.data->data() + static_cast<std::size_t>(t) * N;
        for (int ch = 0; ch < c; ++ch) {
          const T g = gy[ch];
          const T xt = x.at(t, ch);
          const T dtt = dt.at(t, ch);
          const T* ach = A.data->data() + static_cast<std::size_t>(ch) * N;
          T* ghch = gh.data() + static_cast<std::size_t>(ch) * N;
          // y_t = C_t·h_t + D·x_t
          if (D.grad) (*D.grad)[ch] += g * xt;
          T gx_acc = g * (*D.data)[ch];
          T gdt_acc = 0;
          for (int n = 0; n < N; ++n) {
            const std::size_t hi = static_cast<std::size_t>(ch) * N + n;
            T ghn = ghch[n] + g * ct[n];
            if (C.grad) (*C.grad)[static_cast<std::size_t>(t) * N + n] += g * ht[hi];
            // h_t = abar·h_{t-1} + dt·B_t·x_t
            const T abar = std::exp(dtt * ach[n]);
            const T hp = hprev ? hprev[hi] : T(0);
            const T d_abar = ghn * hp;
            if (A.grad) (*A.grad)[hi] += d_abar * abar * dtt;
            gdt_acc += d_abar * abar * ach[n] + ghn * bt[n] * xt;
            if (B.grad) (*B.grad)[static_cast<std::size_t>(t) * N + n] += ghn * dtt * xt;
            gx_acc += ghn * dtt * bt[n];
            ghch[n] = ghn * abar;  // flows to h_{t-1}
          }
          if (dt.grad) (*dt.grad)[static_cast<std::size_t>(t) * c + ch] += gdt_acc;
          if (x.grad) (*x.grad)[static_cast<std::size_t>(t) * c + ch] += gx_acc;
        }
      }
    });
  }
  return y;
}

template <typename T>
struct SsmProjected {
  Tensor<T> dt;  // [L, c], already softplus'd
  Tensor<T> B;   // [L, N]
  Tensor<T> C;   // [L, N]
  Tensor<T> A;   // [c, N], negative
};

template <typename T>
SsmProjected<T> ssm_project(const SsmParams<T>& p, const Tensor<T>& x, Tape<T>* tape = nullptr) {
  if (x.rank() != 2 || x.shape[1] != p.channels) {
    throw std::invalid_argument("ssm_project: x " + shape_str(x.shape) + " vs channels " +
                                std::to_string(p.channels));
  }
  const int r = p.dt_rank, N = p.state_size;
  Tensor<T> proj = matmul(x, p.x_proj, tape);
  Tensor<T> dt_feat = slice_cols(proj, 0, r, tape);
  Tensor<T> B = slice_cols(proj, r, r + N, tape);
  Tensor<T> C = slice_cols(proj, r + N, r + 2 * N, tape);
  Tensor<T> dt = softplus(add(matmul(dt_feat, p.dt_proj_w, tape), p.dt_proj_b, tape), tape);
  Tensor<T> A = mul_scalar(exp_op(p.A_log, tape), T(-1), tape);
  return {dt, B, C, A};
}

// Differentiable linear-time scan over the projected inputs.
template <typename T>
Tensor<T> scan_sequential(const SsmParams<T>& p, const Tensor<T>& x, Tape<T>* tape = nullptr) {
  SsmProjected<T> in = ssm_project(p, x, tape);
  return ssm_scan(x, in.dt, in.B, in.C, in.A, p.D, tape);
}

namespace detail {

template <typename T>
void blelloch_inclusive(std::vector<ScanPair<T>>& seq) {
  const std::size_t L = seq.size();
  std::size_t n = 1;
  while (n < L) n <<= 1;
  std::vector<ScanPair<T>> tree(n, ScanPair<T>{T(1), T(0)});
  std::copy(seq.begin(), seq.end(), tree.begin());
  for (std::size_t stride = 1; stride < n; stride <<= 1) {
    for (std::size_t k = 0; k + 2 * stride <= n; k += 2 * stride) {
      tree[k + 2 * stride - 1] = scan_combine(tree[k + stride - 1], tree[k + 2 * stride - 1]);
    }
  }
  tree[n - 1] = ScanPair<T>{T(1), T(0)};
  for (std::size_t stride = n >> 1; stride >= 1; stride >>= 1) {
    for (std::size_t k = 0; k + 2 * stride <= n; k += 2 * stride) {
      const ScanPair<T> left = tree[k + stride - 1];
      const ScanPair<T> excl = tree[k + 2 * stride - 1];
      tree[k + stride - 1] = excl;                           // left child: parent's prefix
      tree[k + 2 * stride - 1] = scan_combine(excl, left);   // right child: prefix then left span
    }
    if (stride == 1) break;
  }
  for (std::size_t t = 0; t < L; ++t) seq[t] = scan_combine(tree[t], seq[t]);
}

}  // namespace detail

// Same outputs as scan_sequential via a work-efficient prefix scan over the
// associative update pairs. Forward only: this is the inference/benchmark
// path, so it never touches a tape.
template <typename T>
Tensor<T> scan_parallel(const SsmParams<T>& p, const Tensor<T>& x) {
  SsmProjected<T> in = ssm_project<T>(p, x, nullptr);
  const int L = x.shape[0], c = p.channels, N = p.state_size;
  Tensor<T> y = Tensor<T>::zeros({L, c});
  for (int ch = 0; ch < c; ++ch) {
    const T* ach = in.A.data->data() + static_cast<std::size_t>(ch) * N;
    for (int n = 0; n < N; ++n) {
      std::vector<ScanPair<T>> seq(L);
      for (int t = 0; t < L; ++t) {
        const T dtt = in.dt.at(t, ch);
        seq[t].a = std::exp(dtt * ach[n]);
        seq[t].b = dtt * in.B.at(t, n) * x.at(t, ch);
      }
      detail::blelloch_inclusive(seq);
      // zero initial state, so h_t is just the additive part of the prefix
      for (int t = 0; t < L; ++t) y.at(t, ch) += in.C.at(t, n) * seq[t].b;
    }
  }
  for (int t = 0; t < L; ++t) {
    for (int ch = 0; ch < c; ++ch) y.at(t, ch) += (*p.D.data)[ch] * x.at(t, ch);
  }
  return y;
}

}  // namespace ftmamba
