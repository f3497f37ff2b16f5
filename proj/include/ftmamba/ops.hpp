#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "ftmamba/tensor.hpp"

// Differentiable tensor ops. Every op takes an optional tape as its last
// argument; when the tape is active and an input requires grad, the output
// gets a grad buffer and a pull closure is recorded. With a null tape the
// ops are plain forward computations.

namespace ftmamba {
namespace detail {

template <typename T>
inline bool track(const Tape<T>* tape, std::initializer_list<const Tensor<T>*> ins) {
  if (!tape) return false;
  for (const Tensor<T>* t : ins) {
    if (t->requires_grad) return true;
  }
  return false;
}

// Broadcast of b onto a: identical shape, a suffix of a's shape, or scalar.
// Returns the flat length of b's block (elements of a map to i % block).
template <typename T>
inline std::size_t broadcast_block(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (b.shape == a.shape) return b.numel();
  if (b.numel() == 1) return 1;
  const int ra = a.rank(), rb = b.rank();
  bool suffix = rb <= ra;
  for (int i = 0; suffix && i < rb; ++i) {
    if (b.shape[rb - 1 - i] != a.shape[ra - 1 - i]) suffix = false;
  }
  if (!suffix) {
    throw std::invalid_argument(std::string(op) + ": cannot broadcast " + shape_str(b.shape) +
                                " onto " + shape_str(a.shape));
  }
  return b.numel();
}

}  // namespace detail

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0]) {
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape) + " and " +
                                shape_str(b.shape));
  }
  const int m = a.shape[0], k = a.shape[1], n = b.shape[1];
  Tensor<T> out = Tensor<T>::zeros({m, n}, detail::track(tape, {&a, &b}));
  const T* pa = a.data->data();
  const T* pb = b.data->data();
  T* po = out.data->data();
  for (int i = 0; i < m; ++i) {
    for (int kk = 0; kk < k; ++kk) {
      const T aik = pa[i * k + kk];
      const T* brow = pb + kk * n;
      T* orow = po + i * n;
      for (int j = 0; j < n; ++j) orow[j] += aik * brow[j];
    }
  }
  if (out.requires_grad) {
    tape->record(out.grad, [a, b, out, m, k, n]() {
      const T* g = out.grad->data();
      if (a.grad) {
        T* ga = a.grad->data();
        const T* pb2 = b.data->data();
        for (int i = 0; i < m; ++i) {
          for (int j = 0; j < n; ++j) {
            const T gij = g[i * n + j];
            const T* brow = pb2 + j;  // b[kk][j] strided
            for (int kk = 0; kk < k; ++kk) ga[i * k + kk] += gij * brow[kk * n];
          }
        }
      }
      if (b.grad) {
        T* gb = b.grad->data();
        const T* pa2 = a.data->data();
        for (int kk = 0; kk < k; ++kk) {
          for (int i = 0; i < m; ++i) {
            const T aik = pa2[i * k + kk];
            const T* grow = g + i * n;
            T* brow = gb + kk * n;
            for (int j = 0; j < n; ++j) brow[j] += aik * grow[j];
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
  const std::size_t block = detail::broadcast_block(a, b, "add");
  Tensor<T> out = Tensor<T>::zeros(a.shape, detail::track(tape, {&a, &b}));
  const T* pa = a.data->data();
  const T* pb = b.data->data();
  T* po = out.data->data();
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i % block];
  if (out.requires_grad) {
    tape->record(out.grad, [a, b, out, block, n]() {
      const T* g = out.grad->data();
      if (a.grad) {
        T* ga = a.grad->data();
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (b.grad) {
        T* gb = b.grad->data();
        for (std::size_t i = 0; i < n; ++i) gb[i % block] += g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
  const std::size_t block = detail::broadcast_block(a, b, "sub");
  Tensor<T> out = Tensor<T>::zeros(a.shape, detail::track(tape, {&a, &b}));
  const T* pa = a.data->data();
  const T* pb = b.data->data();
  T* po = out.data->data();
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i % block];
  if (out.requires_grad) {
    tape->record(out.grad, [a, b, out, block, n]() {
      const T* g = out.grad->data();
      if (a.grad) {
        T* ga = a.grad->data();
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (b.grad) {
        T* gb = b.grad->data();
        for (std::size_t i = 0; i < n; ++i) gb[i % block] -= g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
  const std::size_t block = detail::broadcast_block(a, b, "mul");
  Tensor<T> out = Tensor<T>::zeros(a.shape, detail::track(tape, {&a, &b}));
  const T* pa = a.data->data();
  const T* pb = b.data->data();
  T* po = out.data->data();
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i % block];
  if (out.requires_grad) {
    tape->record(out.grad, [a, b, out, block, n]() {
      const T* g = out.grad->data();
      const T* pa2 = a.data->data();
      const T* pb2 = b.data->data();
      if (a.grad) {
        T* ga = a.grad->data();
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * pb2[i % block];
      }
      if (b.grad) {
        T* gb = b.grad->data();
        for (std::size_t i = 0; i < n; ++i) gb[i % block] += g[i] * pa2[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s, Tape<T>* tape = nullptr) {
  Tensor<T> out = Tensor<T>::zeros(a.shape, detail::track(tape, {&a}));
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] + s;
  if (out.requires_grad) {
    tape->record(out.grad, [a, out, n]() {
      if (!a.grad) return;
      for (std::size_t i = 0; i < n; ++i) (*a.grad)[i] += (*out.grad)[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s, Tape<T>* tape = nullptr) {
  Tensor<T> out = Tensor<T>::zeros(a.shape, detail::track(tape, {&a}));
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] * s;
  if (out.requires_grad) {
    tape->record(out.grad, [a, out, s, n]() {
      if (!a.grad) return;
      for (std::size_t i = 0; i < n; ++i) (*a.grad)[i] += (*out.grad)[i] * s;
    });
  }
  return out;
}

namespace detail {

template <typename T, typename Fwd, typename Dfwd>
Tensor<T> unary(const Tensor<T>& a, Tape<T>* tape, Fwd f, Dfwd df) {
  Tensor<T> out = Tensor<T>::zeros(a.shape, track(tape, {&a}));
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = f((*a.data)[i]);
  if (out.requires_grad) {
    tape->record(out.grad, [a, out, df, n]() {
      if (!a.grad) return;
      for (std::size_t i = 0; i < n; ++i) {
        (*a.grad)[i] += (*out.grad)[i] * df((*a.data)[i], (*out.data)[i]);
      }
    });
  }
  return out;
}

template <typename T>
inline T sigmoid_val(T x) {
  if (x >= T(0)) {
    const T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace detail

template <typename T>
Tensor<T> relu(const Tensor<T>& a, Tape<T>* tape = nullptr) {
  return detail::unary(
      a, tape, [](T x) { return x > T(0) ? x : T(0); },
      [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a, Tape<T>* tape = nullptr) {
  return detail::unary(
      a, tape, [](T x) { return detail::sigmoid_val(x); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& a, Tape<T>* tape = nullptr) {
  return detail::unary(
      a, tape, [](T x) { return x * detail::sigmoid_val(x); },
      [](T x, T) {
        const T s = detail::sigmoid_val(x);
        return s * (T(1) + x * (T(1) - s));
      });
}

template <typename T>
Tensor<T> exp_op(const Tensor<T>& a, Tape<T>* tape = nullptr) {
  return detail::unary(
      a, tape, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

// softplus(x) = log(1 + exp(x)), computed in the overflow-safe form.
template <typename T>
Tensor<T> softplus(const Tensor<T>& a, Tape<T>* tape = nullptr) {
  return detail::unary(
      a, tape,
      [](T x) { return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x))); },
      [](T x, T) { return detail::sigmoid_val(x); });
}

// Row-wise layer norm over the last axis of a 2-d input, with learned gain
// and bias of length n.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     Tape<T>* tape = nullptr, T eps = T(1e-5)) {
  if (x.rank() != 2) {
    throw std::invalid_argument("layer_norm: want a 2-d input, got " + shape_str(x.shape));
  }
  const int m = x.shape[0], n = x.shape[1];
  if (static_cast<int>(gain.numel()) != n || static_cast<int>(bias.numel()) != n) {
    throw std::invalid_argument("layer_norm: gain " + shape_str(gain.shape) + " / bias " +
                                shape_str(bias.shape) + " do not match width " + std::to_string(n));
  }
  Tensor<T> out = Tensor<T>::zeros({m, n}, detail::track(tape, {&x, &gain, &bias}));
  // xhat and 1/std are cheap to keep for the backward pass.
  auto xhat = std::make_shared<std::vector<T>>(static_cast<std::size_t>(m) * n);
  auto inv_std = std::make_shared<std::vector<T>>(m);
  for (int i = 0; i < m; ++i) {
    const T* row = x.data->data() + static_cast<std::size_t>(i) * n;
    T mean = 0;
    for (int j = 0; j < n; ++j) mean += row[j];
    mean /= T(n);
    T var = 0;
    for (int j = 0; j < n; ++j) {
      const T d = row[j] - mean;
      var += d * d;
    }
    var /= T(n);
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (int j = 0; j < n; ++j) {
      const T xh = (row[j] - mean) * is;
      (*xhat)[static_cast<std::size_t>(i) * n + j] = xh;
      out.at(i, j) = xh * (*gain.data)[j] + (*bias.data)[j];
    }
  }
  if (out.requires_grad) {
    tape->record(out.grad, [x, gain, bias, out, xhat, inv_std, m, n]() {
      for (int i = 0; i < m; ++i) {
        const T* g = out.grad->data() + static_cast<std::size_t>(i) * n;
        const T* xh = xhat->data() + static_cast<std::size_t>(i) * n;
        if (gain.grad) {
          for (int j = 0; j < n; ++j) (*gain.grad)[j] += g[j] * xh[j];
        }
        if (bias.grad) {
          for (int j = 0; j < n; ++j) (*bias.grad)[j] += g[j];
        }
        if (x.grad) {
          T mean_dxh = 0, mean_dxh_xh = 0;
          for (int j = 0; j < n; ++j) {
            const T dxh = g[j] * (*gain.data)[j];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh[j];
          }
          mean_dxh /= T(n);
          mean_dxh_xh /= T(n);
          T* gx = x.grad->data() + static_cast<std::size_t>(i) * n;
          for (int j = 0; j < n; ++j) {
            const T dxh = g[j] * (*gain.data)[j];
            gx[j] += (*inv_std)[i] * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
          }
        }
      }
    });
  }
  return out;
}

// Numerically stable softmax over the last axis of a 2-d input.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x, Tape<T>* tape = nullptr) {
  if (x.rank() != 2) {
    throw std::invalid_argument("softmax_rows: want a 2-d input, got " + shape_str(x.shape));
  }
  const int m = x.shape[0], n = x.shape[1];
  Tensor<T> out = Tensor<T>::zeros({m, n}, detail::track(tape, {&x}));
  for (int i = 0; i < m; ++i) {
    const T* row = x.data->data() + static_cast<std::size_t>(i) * n;
    T mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    T sum = 0;
    for (int j = 0; j < n; ++j) {
      const T e = std::exp(row[j] - mx);
      out.at(i, j) = e;
      sum += e;
    }
    for (int j = 0; j < n; ++j) out.at(i, j) /= sum;
  }
  if (out.requires_grad) {
    tape->record(out.grad, [x, out, m, n]() {
      if (!x.grad) return;
      for (int i = 0; i < m; ++i) {
        const T* g = out.grad->data() + static_cast<std::size_t>(i) * n;
        const T* y = out.data->data() + static_cast<std::size_t>(i) * n;
        T dot = 0;
        for (int j = 0; j < n; ++j) dot += g[j] * y[j];
        T* gx = x.grad->data() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) gx[j] += y[j] * (g[j] - dot);
      }
    });
  }
  return out;
}

// Depthwise causal conv over a [L, c] sequence with kernel [c, w] and bias
// [c]. The last kernel tap multiplies the current step; the w-1 steps before
// the sequence read as zero.
template <typename T>
Tensor<T> causal_conv1d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias,
                        Tape<T>* tape = nullptr) {
  if (x.rank() != 2 || kernel.rank() != 2 || x.shape[1] != kernel.shape[0] ||
      static_cast<int>(bias.numel()) != x.shape[1]) {
    throw std::invalid_argument("causal_conv1d: x " + shape_str(x.shape) + ", kernel " +
                                shape_str(kernel.shape) + ", bias " + shape_str(bias.shape));
  }
  const int L = x.shape[0], c = x.shape[1], w = kernel.shape[1];
  Tensor<T> out = Tensor<T>::zeros({L, c}, detail::track(tape, {&x, &kernel, &bias}));
  for (int t = 0; t < L; ++t) {
    for (int ch = 0; ch < c; ++ch) {
      T acc = (*bias.data)[ch];
      for (int i = 0; i < w; ++i) {
        const int src = t - (w - 1) + i;
        if (src >= 0) acc += kernel.at(ch, i) * x.at(src, ch);
      }
      out.at(t, ch) = acc;
    }
  }
  if (out.requires_grad) {
    tape->record(out.grad, [x, kernel, bias, out, L, c, w]() {
      for (int t = 0; t < L; ++t) {
        for (int ch = 0; ch < c; ++ch) {
          const T g = (*out.grad)[static_cast<std::size_t>(t) * c + ch];
          if (bias.grad) (*bias.grad)[ch] += g;
          for (int i = 0; i < w; ++i) {
            const int src = t - (w - 1) + i;
            if (src < 0) continue;
            if (kernel.grad) (*kernel.grad)[static_cast<std::size_t>(ch) * w + i] += g * x.at(src, ch);
            if (x.grad) (*x.grad)[static_cast<std::size_t>(src) * c + ch] += g * kernel.at(ch, i);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a, Tape<T>* tape = nullptr) {
  if (a.rank() != 2) {
    throw std::invalid_argument("transpose: want a 2-d input, got " + shape_str(a.shape));
  }
  const int m = a.shape[0], n = a.shape[1];
  Tensor<T> out = Tensor<T>::zeros({n, m}, detail::track(tape, {&a}));
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
  }
  if (out.requires_grad) {
    tape->record(out.grad, [a, out, m, n]() {
      if (!a.grad) return;
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
          (*a.grad)[static_cast<std::size_t>(i) * n + j] += (*out.grad)[static_cast<std::size_t>(j) * m + i];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, int c0, int c1, Tape<T>* tape = nullptr) {
  if (a.rank() != 2 || c0 < 0 || c1 > a.shape[1] || c0 >= c1) {
    throw std::invalid_argument("slice_cols: [" + std::to_string(c0) + "," + std::to_string(c1) +
                                ") of " + shape_str(a.shape));
  }
  const int m = a.shape[0], n = a.shape[1], k = c1 - c0;
  Tensor<T> out = Tensor<T>::zeros({m, k}, detail::track(tape, {&a}));
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < k; ++j) out.at(i, j) = a.at(i, c0 + j);
  }
  if (out.requires_grad) {
    tape->record(out.grad, [a, out, c0, m, n, k]() {
      if (!a.grad) return;
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < k; ++j) {
          (*a.grad)[static_cast<std::size_t>(i) * n + c0 + j] += (*out.grad)[static_cast<std::size_t>(i) * k + j];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape[0] != b.shape[0]) {
    throw std::invalid_argument("concat_cols: " + shape_str(a.shape) + " and " + shape_str(b.shape));
  }
  const int m = a.shape[0], na = a.shape[1], nb = b.shape[1];
  Tensor<T> out = Tensor<T>::zeros({m, na + nb}, detail::track(tape, {&a, &b}));
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < na; ++j) out.at(i, j) = a.at(i, j);
    for (int j = 0; j < nb; ++j) out.at(i, na + j) = b.at(i, j);
  }
  if (out.requires_grad) {
    tape->record(out.grad, [a, b, out, m, na, nb]() {
      for (int i = 0; i < m; ++i) {
        if (a.grad) {
          for (int j = 0; j < na; ++j) {
            (*a.grad)[static_cast<std::size_t>(i) * na + j] += (*out.grad)[static_cast<std::size_t>(i) * (na + nb) + j];
          }
        }
        if (b.grad) {
          for (int j = 0; j < nb; ++j) {
            (*b.grad)[static_cast<std::size_t>(i) * nb + j] += (*out.grad)[static_cast<std::size_t>(i) * (na + nb) + na + j];
          }
        }
      }
    });
  }
  return out;
}

// Copies row i of a 2-d tensor out as a [1, n] tensor.
template <typename T>
Tensor<T> take_row(const Tensor<T>& a, int i, Tape<T>* tape = nullptr) {
  if (a.rank() != 2 || i < 0 || i >= a.shape[0]) {
    throw std::invalid_argument("take_row: row " + std::to_string(i) + " of " + shape_str(a.shape));
  }
  const int n = a.shape[1];
  Tensor<T> out = Tensor<T>::zeros({1, n}, detail::track(tape, {&a}));
  for (int j = 0; j < n; ++j) out.at(0, j) = a.at(i, j);
  if (out.requires_grad) {
    tape->record(out.grad, [a, out, i, n]() {
      if (!a.grad) return;
      for (int j = 0; j < n; ++j) (*a.grad)[static_cast<std::size_t>(i) * n + j] += (*out.grad)[j];
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, std::vector<int> shape, Tape<T>* tape = nullptr) {
  if (shape_numel(shape) != a.numel()) {
    throw std::invalid_argument("reshape: " + shape_str(a.shape) + " to " + shape_str(shape));
  }
  Tensor<T> out = Tensor<T>::zeros(std::move(shape), detail::track(tape, {&a}));
  *out.data = *a.data;
  if (out.requires_grad) {
    tape->record(out.grad, [a, out]() {
      if (!a.grad) return;
      for (std::size_t i = 0; i < a.numel(); ++i) (*a.grad)[i] += (*out.grad)[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a, Tape<T>* tape = nullptr) {
  Tensor<T> out = Tensor<T>::zeros({1}, detail::track(tape, {&a}));
  T acc = 0;
  for (const T v : *a.data) acc += v;
  (*out.data)[0] = acc;
  if (out.requires_grad) {
    tape->record(out.grad, [a, out]() {
      if (!a.grad) return;
      const T g = (*out.grad)[0];
      for (T& v : *a.grad) v += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a, Tape<T>* tape = nullptr) {
  Tensor<T> s = sum_all(a, tape);
  return mul_scalar(s, T(1) / T(a.numel()), tape);
}

// Mean squared error against a constant target: mean((pred - target)^2).
template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target, Tape<T>* tape = nullptr) {
  if (pred.shape != target.shape) {
    throw std::invalid_argument("mse_loss: pred " + shape_str(pred.shape) + " vs target " +
                                shape_str(target.shape));
  }
  Tensor<T> d = sub(pred, target, tape);
  Tensor<T> sq = mul(d, d, tape);
  return mean_all(sq, tape);
}

}  // namespace ftmamba
