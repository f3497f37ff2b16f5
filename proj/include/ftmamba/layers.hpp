#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "ftmamba/ops.hpp"
#include "ftmamba/ssm.hpp"
#include "ftmamba/tensor.hpp"

// The two interchangeable sequence layers plus stacking. Both map
// [L, d] -> [L, d] for any L >= 1.

namespace ftmamba {

namespace detail {

template <typename T>
Tensor<T> linear_init(int rows, int cols, std::mt19937& rng) {
  Tensor<T> t = Tensor<T>::zeros({rows, cols}, true);
  const T bound = T(1) / std::sqrt(T(rows));
  t.fill_uniform(-bound, bound, rng);
  return t;
}

template <typename T>
Tensor<T> bias_init(int n) {
  return Tensor<T>::zeros({n}, true);
}

}  // namespace detail

struct MambaConfig {
  int d = 0;
  int expand = 2;
  int conv_width = 16;
  int state_size = 16;
  int layers = 1;

  int channels() const { return expand * d; }
};

struct TransformerConfig {
  int d = 0;
  int heads = 2;
  int ffn_hidden = 0;
  int layers = 1;
  // head dropout is fixed at 0; kept here so the config echo is explicit
  double dropout = 0.0;
};

// Fig-style Mamba block: right branch expand -> causal depthwise conv ->
// SiLU -> selective scan; left branch expand -> SiLU gate; elementwise gate,
// contract, trailing LayerNorm. No residual.
template <typename T>
struct MambaLayerParams {
  Tensor<T> in_proj_gate;  // [d, c], no bias
  Tensor<T> in_proj_ssm;   // [d, c], no bias
  Tensor<T> conv_k;        // [c, w]
  Tensor<T> conv_b;        // [c]
  SsmParams<T> ssm;
  Tensor<T> out_proj;  // [c, d], no bias
  Tensor<T> ln_gain;   // [d]
  Tensor<T> ln_bias;   // [d]

  static MambaLayerParams init(const MambaConfig& cfg, std::mt19937& rng) {
    const int d = cfg.d, c = cfg.channels();
    MambaLayerParams p;
    p.in_proj_gate = detail::linear_init<T>(d, c, rng);
    p.in_proj_ssm = detail::linear_init<T>(d, c, rng);
    p.conv_k = Tensor<T>::zeros({c, cfg.conv_width}, true);
    const T cb = T(1) / std::sqrt(T(cfg.conv_width));
    p.conv_k.fill_uniform(-cb, cb, rng);
    p.conv_b = detail::bias_init<T>(c);
    p.ssm = SsmParams<T>::init(c, cfg.state_size, rng);
    p.out_proj = detail::linear_init<T>(c, d, rng);
    p.ln_gain = Tensor<T>::zeros({d}, true);
    p.ln_gain.fill(T(1));
    p.ln_bias = detail::bias_init<T>(d);
    return p;
  }

  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out = {in_proj_gate, in_proj_ssm, conv_k, conv_b};
    for (const Tensor<T>& t : ssm.parameters()) out.push_back(t);
    out.push_back(out_proj);
    out.push_back(ln_gain);
    out.push_back(ln_bias);
    return out;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const Tensor<T>& t : parameters()) n += t.numel();
    return n;
  }
};

template <typename T>
Tensor<T> mamba_layer_forward(const MambaLayerParams<T>& p, const Tensor<T>& x,
                              Tape<T>* tape = nullptr) {
  Tensor<T> right = matmul(x, p.in_proj_ssm, tape);
  right = causal_conv1d(right, p.conv_k, p.conv_b, tape);
  right = silu(right, tape);
  right = scan_sequential(p.ssm, right, tape);
  Tensor<T> gate = silu(matmul(x, p.in_proj_gate, tape), tape);
  Tensor<T> gated = mul(right, gate, tape);
  Tensor<T> y = matmul(gated, p.out_proj, tape);
  return layer_norm(y, p.ln_gain, p.ln_bias, tape);
}

// Post-norm Transformer block: bidirectional multi-head self-attention,
// residual + LayerNorm, ReLU FFN, residual + LayerNorm. No positions, no
// dropout (rate pinned to 0).
template <typename T>
struct TransformerLayerParams {
  int heads = 0;
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;  // all [d,d] / [d]
  Tensor<T> ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  Tensor<T> ffn_w1, ffn_b1, ffn_w2, ffn_b2;  // d->f->d

  static TransformerLayerParams init(const TransformerConfig& cfg, std::mt19937& rng) {
    const int d = cfg.d, f = cfg.ffn_hidden;
    if (cfg.heads < 1 || d % cfg.heads != 0) {
      throw std::invalid_argument("transformer: heads " + std::to_string(cfg.heads) +
                                  " must divide d " + std::to_string(d));
    }
    TransformerLayerParams p;
    p.heads = cfg.heads;
    p.wq = detail::linear_init<T>(d, d, rng);
    p.bq = detail::bias_init<T>(d);
    p.wk = detail::linear_init<T>(d, d, rng);
    p.bk = detail::bias_init<T>(d);
    p.wv = detail::linear_init<T>(d, d, rng);
    p.bv = detail::bias_init<T>(d);
    p.wo = detail::linear_init<T>(d, d, rng);
    p.bo = detail::bias_init<T>(d);
    p.ln1_gain = Tensor<T>::zeros({d}, true);
    p.ln1_gain.fill(T(1));
    p.ln1_bias = detail::bias_init<T>(d);
    p.ln2_gain = Tensor<T>::zeros({d}, true);
    p.ln2_gain.fill(T(1));
    p.ln2_bias = detail::bias_init<T>(d);
    p.ffn_w1 = detail::linear_init<T>(d, f, rng);
    p.ffn_b1 = detail::bias_init<T>(f);
    p.ffn_w2 = detail::linear_init<T>(f, d, rng);
    p.ffn_b2 = detail::bias_init<T>(d);
    return p;
  }

  std::vector<Tensor<T>> parameters() const {
    return {wq, bq, wk, bk, wv, bv, wo, bo, ln1_gain, ln1_bias, ln2_gain, ln2_bias,
            ffn_w1, ffn_b1, ffn_w2, ffn_b2};
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const Tensor<T>& t : parameters()) n += t.numel();
    return n;
  }
};

// Multi-head self-attention including the output projection (pre-residual).
// When attn_out is supplied, the per-head attention matrices are copied into
// it (forward-only introspection for tests).
template <typename T>
Tensor<T> attention_forward(const TransformerLayerParams<T>& p, const Tensor<T>& x,
                            Tape<T>* tape = nullptr,
                            std::vector<Tensor<T>>* attn_out = nullptr) {
  const int d = x.shape[1];
  const int h = p.heads;
  const int dh = d / h;
  Tensor<T> q = add(matmul(x, p.wq, tape), p.bq, tape);
  Tensor<T> k = add(matmul(x, p.wk, tape), p.bk, tape);
  Tensor<T> v = add(matmul(x, p.wv, tape), p.bv, tape);
  Tensor<T> ctx;
  for (int i = 0; i < h; ++i) {
    Tensor<T> qh = slice_cols(q, i * dh, (i + 1) * dh, tape);
    Tensor<T> kh = slice_cols(k, i * dh, (i + 1) * dh, tape);
    Tensor<T> vh = slice_cols(v, i * dh, (i + 1) * dh, tape);
    Tensor<T> scores = mul_scalar(matmul(qh, transpose(kh, tape), tape),
                                  T(1) / std::sqrt(T(dh)), tape);
    Tensor<T> attn = softmax_rows(scores, tape);
    if (attn_out) attn_out->push_back(attn);
    Tensor<T> ch = matmul(attn, vh, tape);
    ctx = i == 0 ? ch : concat_cols(ctx, ch, tape);
  }
  return add(matmul(ctx, p.wo, tape), p.bo, tape);
}

template <typename T>
Tensor<T> transformer_layer_forward(const TransformerLayerParams<T>& p, const Tensor<T>& x,
                                    Tape<T>* tape = nullptr) {
  Tensor<T> attn = attention_forward(p, x, tape);
  Tensor<T> x1 = layer_norm(add(x, attn, tape), p.ln1_gain, p.ln1_bias, tape);
  Tensor<T> hidden = relu(add(matmul(x1, p.ffn_w1, tape), p.ffn_b1, tape), tape);
  Tensor<T> ffn = add(matmul(hidden, p.ffn_w2, tape), p.ffn_b2, tape);
  return layer_norm(add(x1, ffn, tape), p.ln2_gain, p.ln2_bias, tape);
}

enum class EmbedderKind { mamba, transformer };

inline const char* embedder_kind_name(EmbedderKind k) {
  return k == EmbedderKind::mamba ? "mamba" : "transformer";
}

// Plain sequential composition of identical-d layers. embed() returns the
// final sequence position (the [CLS] row) after all layers.
template <typename T>
struct EmbedderStack {
  EmbedderKind kind = EmbedderKind::mamba;
  int d = 0;
  std::vector<MambaLayerParams<T>> mamba_layers;
  std::vector<TransformerLayerParams<T>> transformer_layers;

  static EmbedderStack make_mamba(const MambaConfig& cfg, std::mt19937& rng) {
    EmbedderStack s;
    s.kind = EmbedderKind::mamba;
    s.d = cfg.d;
    for (int i = 0; i < cfg.layers; ++i) s.mamba_layers.push_back(MambaLayerParams<T>::init(cfg, rng));
    return s;
  }

  static EmbedderStack make_transformer(const TransformerConfig& cfg, std::mt19937& rng) {
    EmbedderStack s;
    s.kind = EmbedderKind::transformer;
    s.d = cfg.d;
    for (int i = 0; i < cfg.layers; ++i) {
      s.transformer_layers.push_back(TransformerLayerParams<T>::init(cfg, rng));
    }
    return s;
  }

  Tensor<T> forward(const Tensor<T>& tokens, Tape<T>* tape = nullptr) const {
    Tensor<T> x = tokens;
    if (kind == EmbedderKind::mamba) {
      for (const MambaLayerParams<T>& layer : mamba_layers) {
        x = mamba_layer_forward(layer, x, tape);
      }
    } else {
      for (const TransformerLayerParams<T>& layer : transformer_layers) {
        x = transformer_layer_forward(layer, x, tape);
      }
    }
    return x;
  }

  // [1, d] final-position embedding
  Tensor<T> embed(const Tensor<T>& tokens, Tape<T>* tape = nullptr) const {
    Tensor<T> x = forward(tokens, tape);
    return take_row(x, x.shape[0] - 1, tape);
  }

  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out;
    for (const MambaLayerParams<T>& l : mamba_layers) {
      for (const Tensor<T>& t : l.parameters()) out.push_back(t);
    }
    for (const TransformerLayerParams<T>& l : transformer_layers) {
      for (const Tensor<T>& t : l.parameters()) out.push_back(t);
    }
    return out;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const Tensor<T>& t : parameters()) n += t.numel();
    return n;
  }
};

}  // namespace ftmamba
