#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ftmamba {

inline std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

inline std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int e : shape) {
    if (e <= 0) {
      throw std::invalid_argument("tensor: nonpositive extent in shape " + shape_str(shape));
    }
    n *= static_cast<std::size_t>(e);
  }
  return n;
}

// Dense row-major tensor. Copies are shallow handles: they share the same
// storage. grad is allocated (zero-filled) iff requires_grad.
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::shared_ptr<std::vector<T>> data;
  std::shared_ptr<std::vector<T>> grad;
  bool requires_grad = false;

  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    Tensor t;
    const std::size_t n = shape_numel(shape);
    t.shape = std::move(shape);
    t.data = std::make_shared<std::vector<T>>(n, T(0));
    t.requires_grad = requires_grad;
    if (requires_grad) {
      t.grad = std::make_shared<std::vector<T>>(n, T(0));
    }
    return t;
  }

  static Tensor from(std::vector<int> shape, std::vector<T> values, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    if (values.size() != n) {
      throw std::invalid_argument("tensor: " + std::to_string(values.size()) +
                                  " values for shape " + shape_str(shape));
    }
    Tensor t = zeros(std::move(shape), requires_grad);
    *t.data = std::move(values);
    return t;
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  std::size_t numel() const { return data ? data->size() : 0; }
  int rank() const { return static_cast<int>(shape.size()); }

  int rows() const {
    require_rank(2, "rows");
    return shape[0];
  }
  int cols() const {
    require_rank(2, "cols");
    return shape[1];
  }

  T& at(int i) { return (*data)[static_cast<std::size_t>(i)]; }
  T at(int i) const { return (*data)[static_cast<std::size_t>(i)]; }
  T& at(int i, int j) { return (*data)[static_cast<std::size_t>(i) * shape.back() + j]; }
  T at(int i, int j) const { return (*data)[static_cast<std::size_t>(i) * shape.back() + j]; }

  T value() const {
    if (numel() != 1) {
      throw std::logic_error("tensor: value() on non-scalar of shape " + shape_str(shape));
    }
    return (*data)[0];
  }

  void zero_grad() {
    if (grad) std::fill(grad->begin(), grad->end(), T(0));
  }

  void fill(T v) { std::fill(data->begin(), data->end(), v); }

  void fill_uniform(T lo, T hi, std::mt19937& rng) {
    std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
    for (T& v : *data) v = static_cast<T>(dist(rng));
  }

 private:
  void require_rank(int r, const char* what) const {
    if (rank() != r) {
      throw std::logic_error(std::string("tensor: ") + what + " on shape " + shape_str(shape));
    }
  }
};

// Ordered record of executed operations. Ops append an entry holding the
// output's grad buffer and a closure that pulls that grad into the input
// grads; execution order is a topological order by construction, so one
// reverse sweep visits every operation exactly once.
//
// A tape belongs to a single training thread and must not be shared.
template <typename T>
class Tape {
 public:
  void record(std::shared_ptr<std::vector<T>> out_grad, std::function<void()> pull) {
    entries_.push_back(Entry{std::move(out_grad), std::move(pull)});
  }

  // Seeds d(loss)/d(loss) = 1 and sweeps the record in reverse. Grads of
  // recorded outputs are reset first; leaf grads are left alone, so repeated
  // calls accumulate into leaves.
  void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1) {
      throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(loss.shape));
    }
    if (!loss.grad) {
      throw std::invalid_argument("backward: loss was not produced on an active tape");
    }
    for (Entry& e : entries_) {
      std::fill(e.out_grad->begin(), e.out_grad->end(), T(0));
    }
    (*loss.grad)[0] = T(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      it->pull();
    }
  }

  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

 private:
  struct Entry {
    std::shared_ptr<std::vector<T>> out_grad;
    std::function<void()> pull;
  };
  std::vector<Entry> entries_;
};

}  // namespace ftmamba
