#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "ftmamba/ops.hpp"
#include "ftmamba/tensor.hpp"

// Feature tokenizer: one tabular row -> (k+1) x d token matrix. Numeric
// feature j contributes x_j*w_j + b_j, categorical j contributes W_j[x_j] +
// b_j, and a constant [CLS] pseudo-feature (numeric input fixed at 1) is
// appended as the last row.

namespace ftmamba {

enum class FeatureKind { numeric, categorical };

struct FeatureSpec {
  FeatureKind kind = FeatureKind::numeric;
  int cardinality = 0;  // categorical only, K_j >= 1
  std::string name;
};

struct FeatureSchema {
  std::vector<FeatureSpec> features;
  int token_dim = 0;  // d

  int feature_count() const { return static_cast<int>(features.size()); }
  int sequence_length() const { return feature_count() + 1; }

  std::size_t tokenizer_param_count() const {
    std::size_t units = 2;  // [CLS] w and b
    for (const FeatureSpec& f : features) {
      units += f.kind == FeatureKind::numeric ? 2 : static_cast<std::size_t>(f.cardinality) + 1;
    }
    return units * static_cast<std::size_t>(token_dim);
  }
};

// A row is stored as doubles; categorical slots must hold exact indices.
using FeatureRow = std::vector<double>;

inline int categorical_index(double v, int cardinality, int feature) {
  const long long idx = std::llround(v);
  if (static_cast<double>(idx) != v || idx < 0 || idx >= cardinality) {
    throw std::out_of_range("tokenize: value " + std::to_string(v) + " outside vocabulary [0," +
                            std::to_string(cardinality) + ") for feature " +
                            std::to_string(feature));
  }
  return static_cast<int>(idx);
}

template <typename T>
struct TokenizerParams {
  // weights[j] is [d] for numeric, [K_j, d] for categorical; biases[j] is [d].
  // Index feature_count() holds the [CLS] pair.
  std::vector<Tensor<T>> weights;
  std::vector<Tensor<T>> biases;

  static TokenizerParams init(const FeatureSchema& schema, std::mt19937& rng) {
    TokenizerParams p;
    const int d = schema.token_dim;
    const T bound = T(1) / std::sqrt(T(d));
    auto fresh = [&](std::vector<int> shape) {
      Tensor<T> t = Tensor<T>::zeros(std::move(shape), true);
      t.fill_uniform(-bound, bound, rng);
      return t;
    };
    for (const FeatureSpec& f : schema.features) {
      if (f.kind == FeatureKind::numeric) {
        p.weights.push_back(fresh({d}));
      } else {
        if (f.cardinality < 1) {
          throw std::invalid_argument("tokenizer: categorical cardinality must be >= 1");
        }
        p.weights.push_back(fresh({f.cardinality, d}));
      }
      p.biases.push_back(fresh({d}));
    }
    p.weights.push_back(fresh({d}));  // [CLS]
    p.biases.push_back(fresh({d}));
    return p;
  }

  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out;
    out.reserve(weights.size() + biases.size());
    for (const Tensor<T>& w : weights) out.push_back(w);
    for (const Tensor<T>& b : biases) out.push_back(b);
    return out;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const Tensor<T>& w : weights) n += w.numel();
    for (const Tensor<T>& b : biases) n += b.numel();
    return n;
  }
};

// Fused lookup/affine over the whole row; one tape entry per call.
template <typename T>
Tensor<T> tokenize(const FeatureSchema& schema, const TokenizerParams<T>& params,
                   const FeatureRow& row, Tape<T>* tape = nullptr) {
  const int k = schema.feature_count();
  const int d = schema.token_dim;
  if (static_cast<int>(row.size()) != k) {
    throw std::invalid_argument("tokenize: row has " + std::to_string(row.size()) +
                                " values, schema has " + std::to_string(k) + " features");
  }
  // resolve categorical indices up front so errors precede any work
  std::vector<int> cat_idx(k, -1);
  for (int j = 0; j < k; ++j) {
    if (schema.features[j].kind == FeatureKind::categorical) {
      cat_idx[j] = categorical_index(row[j], schema.features[j].cardinality, j);
    }
  }
  bool track = false;
  if (tape) {
    for (const Tensor<T>& w : params.weights) track = track || w.requires_grad;
    for (const Tensor<T>& b : params.biases) track = track || b.requires_grad;
  }
  Tensor<T> out = Tensor<T>::zeros({k + 1, d}, track);
  for (int j = 0; j < k; ++j) {
    const Tensor<T>& w = params.weights[j];
    const Tensor<T>& b = params.biases[j];
    if (schema.features[j].kind == FeatureKind::numeric) {
      const T x = static_cast<T>(row[j]);
      for (int i = 0; i < d; ++i) out.at(j, i) = x * (*w.data)[i] + (*b.data)[i];
    } else {
      const T* wrow = w.data->data() + static_cast<std::size_t>(cat_idx[j]) * d;
      for (int i = 0; i < d; ++i) out.at(j, i) = wrow[i] + (*b.data)[i];
    }
  }
  for (int i = 0; i < d; ++i) {
    out.at(k, i) = (*params.weights[k].data)[i] + (*params.biases[k].data)[i];
  }

  if (track) {
    const FeatureSchema schema_copy = schema;
    tape->record(out.grad, [schema_copy, params, row, cat_idx, out, k, d]() {
      for (int j = 0; j <= k; ++j) {
        const T* g = out.grad->data() + static_cast<std::size_t>(j) * d;
        const Tensor<T>& w = params.weights[j];
        const Tensor<T>& b = params.biases[j];
        if (b.grad) {
          for (int i = 0; i < d; ++i) (*b.grad)[i] += g[i];
        }
        if (!w.grad) continue;
        if (j == k || schema_copy.features[j].kind == FeatureKind::numeric) {
          const T x = j == k ? T(1) : static_cast<T>(row[j]);
          for (int i = 0; i < d; ++i) (*w.grad)[i] += x * g[i];
        } else {
          T* wg = w.grad->data() + static_cast<std::size_t>(cat_idx[j]) * d;
          for (int i = 0; i < d; ++i) wg[i] += g[i];
        }
      }
    });
  }
  return out;
}

}  // namespace ftmamba
