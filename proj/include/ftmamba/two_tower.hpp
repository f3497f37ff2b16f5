#pragma once

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "ftmamba/layers.hpp"
#include "ftmamba/ops.hpp"
#include "ftmamba/tokenizer.hpp"

// Two-Tower model: per tower tokenizer -> embedder stack -> FFN head
// (hidden 64 ReLU, output 32 ReLU); prediction = inner product of the two
// head outputs.

namespace ftmamba {

struct ModelConfig {
  int token_dim = 192;
  EmbedderKind kind = EmbedderKind::mamba;
  // mamba stack
  int mamba_layers = 4;
  int expand = 2;
  int conv_width = 16;
  int state_size = 16;
  // transformer stack
  int transformer_layers = 2;
  int heads = 2;
  int ffn_hidden = 3072;
  // head
  int head_hidden = 64;
  int head_out = 32;

  MambaConfig mamba_config() const {
    MambaConfig c;
    c.d = token_dim;
    c.expand = expand;
    c.conv_width = conv_width;
    c.state_size = state_size;
    c.layers = mamba_layers;
    return c;
  }

  TransformerConfig transformer_config() const {
    TransformerConfig c;
    c.d = token_dim;
    c.heads = heads;
    c.ffn_hidden = ffn_hidden;
    c.layers = transformer_layers;
    return c;
  }
};

template <typename T>
struct FfnHead {
  Tensor<T> w1, b1, w2, b2;

  static FfnHead init(int d, int hidden, int out, std::mt19937& rng) {
    FfnHead h;
    h.w1 = detail::linear_init<T>(d, hidden, rng);
    h.b1 = detail::bias_init<T>(hidden);
    h.w2 = detail::linear_init<T>(hidden, out, rng);
    h.b2 = detail::bias_init<T>(out);
    return h;
  }

  Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape = nullptr) const {
    Tensor<T> hidden = relu(add(matmul(x, w1, tape), b1, tape), tape);
    return relu(add(matmul(hidden, w2, tape), b2, tape), tape);
  }

  std::vector<Tensor<T>> parameters() const { return {w1, b1, w2, b2}; }

  std::size_t param_count() const { return w1.numel() + b1.numel() + w2.numel() + b2.numel(); }
};

template <typename T>
struct Tower {
  FeatureSchema schema;
  TokenizerParams<T> tokenizer;
  EmbedderStack<T> stack;
  FfnHead<T> head;

  static Tower init(FeatureSchema schema, const ModelConfig& cfg, std::mt19937& rng) {
    Tower t;
    schema.token_dim = cfg.token_dim;
    t.schema = std::move(schema);
    t.tokenizer = TokenizerParams<T>::init(t.schema, rng);
    t.stack = cfg.kind == EmbedderKind::mamba
                  ? EmbedderStack<T>::make_mamba(cfg.mamba_config(), rng)
                  : EmbedderStack<T>::make_transformer(cfg.transformer_config(), rng);
    t.head = FfnHead<T>::init(cfg.token_dim, cfg.head_hidden, cfg.head_out, rng);
    return t;
  }

  // [1, head_out] representation of one row
  Tensor<T> represent(const FeatureRow& row, Tape<T>* tape = nullptr) const {
    Tensor<T> tokens = tokenize(schema, tokenizer, row, tape);
    return head.forward(stack.embed(tokens, tape), tape);
  }

  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out = tokenizer.parameters();
    for (const Tensor<T>& t : stack.parameters()) out.push_back(t);
    for (const Tensor<T>& t : head.parameters()) out.push_back(t);
    return out;
  }
};

struct ParamBreakdown {
  std::size_t tokenizer = 0, embedder = 0, head = 0;
  std::size_t total() const { return tokenizer + embedder + head; }
};

template <typename T>
struct TwoTowerModel {
  ModelConfig config;
  unsigned seed = 0;
  Tower<T> user, content;

  static TwoTowerModel init(const FeatureSchema& user_schema, const FeatureSchema& content_schema,
                            const ModelConfig& cfg, unsigned seed) {
    TwoTowerModel m;
    m.config = cfg;
    m.seed = seed;
    std::mt19937 rng(seed);
    m.user = Tower<T>::init(user_schema, cfg, rng);
    m.content = Tower<T>::init(content_schema, cfg, rng);
    return m;
  }

  Tensor<T> score(const FeatureRow& user_row, const FeatureRow& content_row,
                  Tape<T>* tape = nullptr) const {
    Tensor<T> u = user.represent(user_row, tape);
    Tensor<T> c = content.represent(content_row, tape);
    return matmul(u, transpose(c, tape), tape);  // [1,1]
  }

  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out = user.parameters();
    for (const Tensor<T>& t : content.parameters()) out.push_back(t);
    return out;
  }

  ParamBreakdown tower_param_count(const Tower<T>& t) const {
    ParamBreakdown b;
    b.tokenizer = t.tokenizer.param_count();
    b.embedder = t.stack.param_count();
    b.head = t.head.param_count();
    return b;
  }

  ParamBreakdown user_param_count() const { return tower_param_count(user); }
  ParamBreakdown content_param_count() const { return tower_param_count(content); }
};

// Highest-scoring item indices, descending score, ties broken by ascending
// index. Content representations are computed once per item.
template <typename T>
std::vector<int> rank_items(const TwoTowerModel<T>& model, const FeatureRow& user_row,
                            const std::vector<FeatureRow>& content_rows, int k) {
  if (content_rows.empty()) throw std::invalid_argument("rank_items: empty item set");
  k = std::min<int>(k, static_cast<int>(content_rows.size()));
  Tensor<T> u = model.user.represent(user_row);
  std::vector<T> scores(content_rows.size());
  for (std::size_t i = 0; i < content_rows.size(); ++i) {
    Tensor<T> c = model.content.represent(content_rows[i]);
    T dot = 0;
    for (int j = 0; j < c.shape[1]; ++j) dot += u.at(0, j) * c.at(0, j);
    scores[i] = dot;
  }
  std::vector<int> idx(content_rows.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  idx.resize(k);
  return idx;
}

// ---- checkpoint serialization ----

inline nlohmann::json schema_to_json(const FeatureSchema& s) {
  nlohmann::json j;
  j["token_dim"] = s.token_dim;
  j["features"] = nlohmann::json::array();
  for (const FeatureSpec& f : s.features) {
    j["features"].push_back({{"kind", f.kind == FeatureKind::numeric ? "numeric" : "categorical"},
                             {"cardinality", f.cardinality},
                             {"name", f.name}});
  }
  return j;
}

inline FeatureSchema schema_from_json(const nlohmann::json& j) {
  FeatureSchema s;
  s.token_dim = j.at("token_dim").get<int>();
  for (const nlohmann::json& f : j.at("features")) {
    FeatureSpec spec;
    spec.kind = f.at("kind").get<std::string>() == "numeric" ? FeatureKind::numeric
                                                             : FeatureKind::categorical;
    spec.cardinality = f.at("cardinality").get<int>();
    spec.name = f.value("name", "");
    s.features.push_back(spec);
  }
  return s;
}

inline nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"token_dim", c.token_dim},
          {"kind", embedder_kind_name(c.kind)},
          {"mamba_layers", c.mamba_layers},
          {"expand", c.expand},
          {"conv_width", c.conv_width},
          {"state_size", c.state_size},
          {"transformer_layers", c.transformer_layers},
          {"heads", c.heads},
          {"ffn_hidden", c.ffn_hidden},
          {"head_hidden", c.head_hidden},
          {"head_out", c.head_out}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.token_dim = j.at("token_dim").get<int>();
  c.kind = j.at("kind").get<std::string>() == "mamba" ? EmbedderKind::mamba
                                                      : EmbedderKind::transformer;
  c.mamba_layers = j.at("mamba_layers").get<int>();
  c.expand = j.at("expand").get<int>();
  c.conv_width = j.at("conv_width").get<int>();
  c.state_size = j.at("state_size").get<int>();
  c.transformer_layers = j.at("transformer_layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.ffn_hidden = j.at("ffn_hidden").get<int>();
  c.head_hidden = j.at("head_hidden").get<int>();
  c.head_out = j.at("head_out").get<int>();
  return c;
}

template <typename T>
nlohmann::json model_to_json(const TwoTowerModel<T>& m) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["seed"] = m.seed;
  j["config"] = config_to_json(m.config);
  j["user_schema"] = schema_to_json(m.user.schema);
  j["content_schema"] = schema_to_json(m.content.schema);
  j["tensors"] = nlohmann::json::array();
  for (const Tensor<T>& t : m.parameters()) {
    nlohmann::json tj;
    tj["shape"] = t.shape;
    tj["data"] = nlohmann::json::array();
    for (const T v : *t.data) tj["data"].push_back(static_cast<double>(v));
    j["tensors"].push_back(std::move(tj));
  }
  return j;
}

template <typename T>
TwoTowerModel<T> model_from_json(const nlohmann::json& j) {
  if (j.at("format_version").get<int>() != 1) {
    throw std::runtime_error("checkpoint: unsupported format_version");
  }
  TwoTowerModel<T> m = TwoTowerModel<T>::init(schema_from_json(j.at("user_schema")),
                                              schema_from_json(j.at("content_schema")),
                                              config_from_json(j.at("config")),
                                              j.at("seed").get<unsigned>());
  std::vector<Tensor<T>> params = m.parameters();
  const nlohmann::json& tensors = j.at("tensors");
  if (tensors.size() != params.size()) {
    throw std::runtime_error("checkpoint: expected " + std::to_string(params.size()) +
                             " tensors, found " + std::to_string(tensors.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::vector<int> shape = tensors[i].at("shape").get<std::vector<int>>();
    if (shape != params[i].shape) {
      throw std::runtime_error("checkpoint: tensor " + std::to_string(i) + " shape " +
                               shape_str(shape) + " does not match model " +
                               shape_str(params[i].shape));
    }
    const nlohmann::json& data = tensors[i].at("data");
    for (std::size_t v = 0; v < params[i].numel(); ++v) {
      (*params[i].data)[v] = static_cast<T>(data[v].get<double>());
    }
  }
  return m;
}

template <typename T>
void save_model(const TwoTowerModel<T>& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_model: cannot open " + path);
  out << model_to_json(m).dump();
}

template <typename T>
TwoTowerModel<T> load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_model: cannot open " + path);
  nlohmann::json j;
  in >> j;
  return model_from_json<T>(j);
}

}  // namespace ftmamba
