#include "ftmamba/envs.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

#include "ftmamba/kmeans.hpp"

namespace ftmamba {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Spotify-style environment

namespace {

double nearest_rank_percentile(std::vector<double>& sorted_pool, double q) {
  const std::size_t n = sorted_pool.size();
  std::size_t idx = static_cast<std::size_t>(std::ceil(q / 100.0 * n));
  if (idx > 0) --idx;
  return sorted_pool[idx];
}

FeatureRow random_user_bits(int genres, std::mt19937& rng) {
  std::bernoulli_distribution coin(0.5);
  FeatureRow u(genres);
  for (int g = 0; g < genres; ++g) u[g] = coin(rng) ? 1.0 : 0.0;
  return u;
}

}  // namespace

SpotifyEnv spotify_make_env(unsigned seed) {
  SpotifyEnv env;
  env.seed = seed;
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> attr(0.0, 1.0);
  env.G.assign(env.genres, std::vector<double>(env.attributes));
  for (auto& row : env.G) {
    for (double& v : row) v = attr(rng);
  }
  env.S.assign(env.songs, std::vector<double>(env.attributes));
  for (auto& row : env.S) {
    for (double& v : row) v = attr(rng);
  }

  // calibrate thresholds on a 10,000-user probe so "like" is the top quintile
  const int probe_users = 10000;
  std::vector<double> pool;
  pool.reserve(static_cast<std::size_t>(probe_users) * env.songs);
  for (int i = 0; i < probe_users; ++i) {
    FeatureRow u = random_user_bits(env.genres, rng);
    std::vector<double> p = spotify_preferences(env, u);
    pool.insert(pool.end(), p.begin(), p.end());
  }
  std::sort(pool.begin(), pool.end());
  env.theta_lo = nearest_rank_percentile(pool, 50.0);
  env.theta_hi = nearest_rank_percentile(pool, 80.0);
  return env;
}

std::vector<double> spotify_preferences(const SpotifyEnv& env, const FeatureRow& user) {
  if (static_cast<int>(user.size()) != env.genres) {
    throw std::invalid_argument("spotify_preferences: user vector has " +
                                std::to_string(user.size()) + " entries, expected " +
                                std::to_string(env.genres));
  }
  std::vector<double> taste(env.attributes, 0.0);  // u * G
  for (int g = 0; g < env.genres; ++g) {
    if (user[g] == 0.0) continue;
    for (int a = 0; a < env.attributes; ++a) taste[a] += user[g] * env.G[g][a];
  }
  std::vector<double> p(env.songs, 0.0);  // (u * G) * S^T
  for (int s = 0; s < env.songs; ++s) {
    double acc = 0.0;
    for (int a = 0; a < env.attributes; ++a) acc += taste[a] * env.S[s][a];
    p[s] = acc;
  }
  return p;
}

int spotify_bucketize(const SpotifyEnv& env, double affinity) {
  if (affinity < env.theta_lo) return -1;
  if (affinity < env.theta_hi) return 0;
  return 1;
}

InteractionSet spotify_generate(const SpotifyEnv& env, int n_train, int n_test_users,
                                unsigned seed) {
  InteractionSet set;
  for (int g = 0; g < env.genres; ++g) {
    set.user_schema.features.push_back(
        {FeatureKind::numeric, 0, "genre" + std::to_string(g)});
  }
  set.content_schema.features.push_back({FeatureKind::categorical, env.songs, "song"});

  std::mt19937 rng(seed);
  std::uniform_int_distribution<int> song(0, env.songs - 1);

  set.train_user.reserve(n_train);
  set.train_content.reserve(n_train);
  set.train_target.reserve(n_train);
  for (int i = 0; i < n_train; ++i) {
    FeatureRow u = random_user_bits(env.genres, rng);
    const int s = song(rng);
    const double affinity = spotify_preferences(env, u)[s];
    set.train_user.push_back(std::move(u));
    set.train_content.push_back({static_cast<double>(s)});
    set.train_target.push_back(static_cast<double>(spotify_bucketize(env, affinity)));
  }

  for (int s = 0; s < env.songs; ++s) set.eval_items.push_back({static_cast<double>(s)});
  while (static_cast<int>(set.eval_users.size()) < n_test_users) {
    FeatureRow u = random_user_bits(env.genres, rng);
    std::vector<double> p = spotify_preferences(env, u);
    std::unordered_set<int> likes;
    for (int s = 0; s < env.songs; ++s) {
      if (spotify_bucketize(env, p[s]) == 1) likes.insert(s);
    }
    if (likes.empty()) continue;  // every evaluation user must have >=1 like
    set.eval_users.push_back(std::move(u));
    set.eval_relevant.push_back(std::move(likes));
  }
  return set;
}

// ---------------------------------------------------------------------------
// Messaging environment

const std::vector<int> kMessagingCardinalities = {3, 4, 5, 3, 6, 4, 6};

namespace {

// age (already scaled to [0,1]) stays one column; categoricals are one-hot
std::vector<double> one_hot_user(const FeatureRow& user) {
  std::vector<double> out;
  out.push_back(user[0]);
  for (std::size_t f = 0; f < kMessagingCardinalities.size(); ++f) {
    std::vector<double> block(kMessagingCardinalities[f], 0.0);
    block[static_cast<int>(user[f + 1])] = 1.0;
    out.insert(out.end(), block.begin(), block.end());
  }
  return out;
}

}  // namespace

MessagingEnv messaging_make_env(int clusters, int message_count, int user_count, unsigned seed) {
  if (clusters < 1) throw std::invalid_argument("messaging_make_env: clusters must be >= 1");
  if (message_count < clusters) {
    throw std::invalid_argument("messaging_make_env: need at least one message per cluster (m=" +
                                std::to_string(message_count) + " < k=" +
                                std::to_string(clusters) + ")");
  }
  MessagingEnv env;
  env.clusters = clusters;
  env.message_count = message_count;
  env.user_count = user_count;
  env.seed = seed;

  std::mt19937 rng(seed);
  std::uniform_int_distribution<int> age(18, 90);
  env.users.reserve(user_count);
  for (int i = 0; i < user_count; ++i) {
    FeatureRow u;
    u.push_back((age(rng) - 18) / 72.0);
    for (int card : kMessagingCardinalities) {
      std::uniform_int_distribution<int> cat(0, card - 1);
      u.push_back(static_cast<double>(cat(rng)));
    }
    env.users.push_back(std::move(u));
  }

  // messages: k latent centers in R^32, each message scattered around the
  // center it cycles onto
  const int dim = 32;
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<std::vector<double>> centers(clusters, std::vector<double>(dim));
  for (auto& c : centers) {
    for (double& v : c) v = gauss(rng);
  }
  env.message_vectors.assign(message_count, std::vector<double>(dim));
  for (int i = 0; i < message_count; ++i) {
    const auto& c = centers[i % clusters];
    for (int j = 0; j < dim; ++j) env.message_vectors[i][j] = c[j] + 0.25 * gauss(rng);
  }

  std::vector<std::vector<double>> user_points;
  user_points.reserve(user_count);
  for (const FeatureRow& u : env.users) user_points.push_back(one_hot_user(u));
  env.user_cluster = kmeans(user_points, clusters, seed + 1).assignment;
  env.message_cluster = kmeans(env.message_vectors, clusters, seed + 2).assignment;
  return env;
}

InteractionSet messaging_generate(const MessagingEnv& env, int n_train, int n_test_users,
                                  unsigned seed) {
  InteractionSet set;
  set.user_schema.features.push_back({FeatureKind::numeric, 0, "age"});
  const char* names[] = {"gender",    "progression", "education", "insurance",
                         "race",      "language",    "religion"};
  for (std::size_t f = 0; f < kMessagingCardinalities.size(); ++f) {
    set.user_schema.features.push_back(
        {FeatureKind::categorical, kMessagingCardinalities[f], names[f]});
  }
  set.content_schema.features.push_back(
      {FeatureKind::categorical, env.message_count, "message"});

  std::vector<std::vector<int>> cluster_messages(env.clusters);
  for (int i = 0; i < env.message_count; ++i) {
    cluster_messages[env.message_cluster[i]].push_back(i);
  }

  std::mt19937 rng(seed);
  std::uniform_int_distribution<int> pick_user(0, env.user_count - 1);
  std::uniform_int_distribution<int> pick_msg(0, env.message_count - 1);

  set.train_user.reserve(n_train);
  set.train_content.reserve(n_train);
  set.train_target.reserve(n_train);
  for (int i = 0; i < n_train; ++i) {
    const int u = pick_user(rng);
    const int msg = pick_msg(rng);
    set.train_user.push_back(env.users[u]);
    set.train_content.push_back({static_cast<double>(msg)});
    set.train_target.push_back(env.user_cluster[u] == env.message_cluster[msg] ? 1.0 : 0.0);
  }

  for (int i = 0; i < env.message_count; ++i) set.eval_items.push_back({static_cast<double>(i)});
  long attempts = 0;
  const long max_attempts = 1000L * std::max(n_test_users, 1);
  while (static_cast<int>(set.eval_users.size()) < n_test_users) {
    if (++attempts > max_attempts) {
      throw std::runtime_error("messaging_generate: could not find test users whose cluster "
                               "has a message");
    }
    const int u = pick_user(rng);
    const auto& msgs = cluster_messages[env.user_cluster[u]];
    if (msgs.empty()) continue;  // resample
    set.eval_users.push_back(env.users[u]);
    set.eval_relevant.push_back(std::unordered_set<int>(msgs.begin(), msgs.end()));
  }
  return set;
}

// ---------------------------------------------------------------------------
// CSV transaction loader

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

// string category -> dense index, in first-appearance order
struct Vocabulary {
  std::unordered_map<std::string, int> index;
  int lookup(const std::string& value) {
    auto it = index.find(value);
    if (it != index.end()) return it->second;
    const int id = static_cast<int>(index.size());
    index.emplace(value, id);
    return id;
  }
};

double parse_numeric(const std::string& value, const std::string& column) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("csv_load_interactions: cannot parse '" + value +
                                "' in numeric column '" + column + "'");
  }
}

}  // namespace

InteractionSet csv_load_interactions(const std::string& path, const CsvSchemaMap& map,
                                     double nontransaction_ratio, unsigned seed) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("csv_load_interactions: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) {
    throw std::invalid_argument("csv_load_interactions: empty file (header is mandatory)");
  }
  const std::vector<std::string> header = split_csv_line(line);
  std::unordered_map<std::string, int> col_index;
  for (std::size_t i = 0; i < header.size(); ++i) col_index[header[i]] = static_cast<int>(i);

  auto require_column = [&](const std::string& name) {
    auto it = col_index.find(name);
    if (it == col_index.end()) {
      throw std::invalid_argument("csv_load_interactions: unknown column '" + name + "'");
    }
    return it->second;
  };

  const int user_col = require_column(map.user_id_column);
  const int item_col = require_column(map.item_id_column);
  std::vector<int> user_feat_cols, item_feat_cols;
  for (const CsvColumnSpec& s : map.user_features) user_feat_cols.push_back(require_column(s.column));
  for (const CsvColumnSpec& s : map.item_features) item_feat_cols.push_back(require_column(s.column));

  Vocabulary user_ids, item_ids;
  std::vector<Vocabulary> user_vocab(map.user_features.size());
  std::vector<Vocabulary> item_vocab(map.item_features.size());

  // transactions as (user, item) index pairs; feature rows captured at first
  // appearance of each user / item
  std::vector<std::pair<int, int>> transactions;
  std::vector<FeatureRow> user_rows, item_rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw std::invalid_argument("csv_load_interactions: line " + std::to_string(line_no) +
                                  " has " + std::to_string(fields.size()) + " fields, header has " +
                                  std::to_string(header.size()));
    }
    const int u = user_ids.lookup(fields[user_col]);
    if (u == static_cast<int>(user_rows.size())) {
      FeatureRow row;
      for (std::size_t f = 0; f < map.user_features.size(); ++f) {
        const std::string& raw = fields[user_feat_cols[f]];
        row.push_back(map.user_features[f].kind == FeatureKind::numeric
                          ? parse_numeric(raw, map.user_features[f].column)
                          : static_cast<double>(user_vocab[f].lookup(raw)));
      }
      user_rows.push_back(std::move(row));
    }
    const int it = item_ids.lookup(fields[item_col]);
    if (it == static_cast<int>(item_rows.size())) {
      FeatureRow row;
      for (std::size_t f = 0; f < map.item_features.size(); ++f) {
        const std::string& raw = fields[item_feat_cols[f]];
        row.push_back(map.item_features[f].kind == FeatureKind::numeric
                          ? parse_numeric(raw, map.item_features[f].column)
                          : static_cast<double>(item_vocab[f].lookup(raw)));
      }
      item_rows.push_back(std::move(row));  // may be empty when only the id is used
    }
    transactions.emplace_back(u, it);
  }
  if (transactions.empty()) {
    throw std::invalid_argument("csv_load_interactions: no transaction rows");
  }

  const int n_users = static_cast<int>(user_rows.size());
  const int n_items = static_cast<int>(item_rows.size());

  InteractionSet set;
  for (std::size_t f = 0; f < map.user_features.size(); ++f) {
    const CsvColumnSpec& s = map.user_features[f];
    set.user_schema.features.push_back(
        {s.kind, s.kind == FeatureKind::categorical
                     ? static_cast<int>(user_vocab[f].index.size())
                     : 0,
         s.column});
  }
  if (map.item_features.empty()) {
    set.content_schema.features.push_back({FeatureKind::categorical, n_items, map.item_id_column});
    for (int i = 0; i < n_items; ++i) item_rows[i] = {static_cast<double>(i)};
  } else {
    for (std::size_t f = 0; f < map.item_features.size(); ++f) {
      const CsvColumnSpec& s = map.item_features[f];
      set.content_schema.features.push_back(
          {s.kind, s.kind == FeatureKind::categorical
                       ? static_cast<int>(item_vocab[f].index.size())
                       : 0,
           s.column});
    }
  }

  std::vector<std::unordered_set<int>> purchased(n_users);
  std::vector<int> positive_rows(n_users, 0);
  for (const auto& [u, it] : transactions) {
    purchased[u].insert(it);
    ++positive_rows[u];
  }

  std::mt19937 rng(seed);
  std::uniform_int_distribution<int> pick_item(0, n_items - 1);
  for (const auto& [u, it] : transactions) {
    set.train_user.push_back(user_rows[u]);
    set.train_content.push_back(item_rows[it]);
    set.train_target.push_back(1.0);
  }
  // map user index back to its id string for error messages
  std::vector<std::string> user_names(n_users);
  for (const auto& [name, idx] : user_ids.index) user_names[idx] = name;
  for (int u = 0; u < n_users; ++u) {
    const long n_neg = std::lround(nontransaction_ratio * positive_rows[u]);
    if (n_neg == 0) continue;
    if (static_cast<int>(purchased[u].size()) == n_items) {
      throw std::runtime_error("csv_load_interactions: user '" + user_names[u] +
                               "' purchased every item; cannot sample a non-transaction");
    }
    for (long i = 0; i < n_neg; ++i) {
      int candidate = pick_item(rng);
      while (purchased[u].count(candidate)) candidate = pick_item(rng);
      set.train_user.push_back(user_rows[u]);
      set.train_content.push_back(item_rows[candidate]);
      set.train_target.push_back(0.0);
    }
  }
  // positives arrive grouped by file order and negatives by user; shuffle so
  // sequential batches are well mixed
  std::vector<std::size_t> order(set.train_target.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  InteractionSet shuffled;
  shuffled.user_schema = set.user_schema;
  shuffled.content_schema = set.content_schema;
  for (std::size_t i : order) {
    shuffled.train_user.push_back(std::move(set.train_user[i]));
    shuffled.train_content.push_back(std::move(set.train_content[i]));
    shuffled.train_target.push_back(set.train_target[i]);
  }

  std::vector<int> eligible;
  for (int u = 0; u < n_users; ++u) {
    if (positive_rows[u] >= map.min_test_positives) eligible.push_back(u);
  }
  if (map.max_test_users > 0 && static_cast<int>(eligible.size()) > map.max_test_users) {
    std::shuffle(eligible.begin(), eligible.end(), rng);
    eligible.resize(map.max_test_users);
    std::sort(eligible.begin(), eligible.end());
  }
  shuffled.eval_items = item_rows;
  for (int u : eligible) {
    shuffled.eval_users.push_back(user_rows[u]);
    shuffled.eval_relevant.push_back(purchased[u]);
  }
  return shuffled;
}

// ---------------------------------------------------------------------------
// On-disk format

namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

json schema_json(const FeatureSchema& schema) {
  json feats = json::array();
  for (const FeatureSpec& f : schema.features) {
    feats.push_back({{"kind", f.kind == FeatureKind::numeric ? "numeric" : "categorical"},
                     {"cardinality", f.cardinality},
                     {"name", f.name}});
  }
  return feats;
}

FeatureSchema schema_from(const json& feats) {
  FeatureSchema schema;
  for (const json& f : feats) {
    FeatureSpec spec;
    spec.kind = f.at("kind") == "numeric" ? FeatureKind::numeric : FeatureKind::categorical;
    spec.cardinality = f.at("cardinality");
    spec.name = f.at("name");
    schema.features.push_back(spec);
  }
  return schema;
}

}  // namespace

void save_interactions(const InteractionSet& set, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  json manifest;
  manifest["format_version"] = 1;
  manifest["user_schema"] = schema_json(set.user_schema);
  manifest["content_schema"] = schema_json(set.content_schema);
  manifest["train_rows"] = set.train_size();
  manifest["eval_users"] = set.eval_users.size();
  manifest["eval_items"] = set.eval_items.size();
  manifest["train_file"] = "train.csv";
  manifest["eval_file"] = "eval.json";
  {
    std::ofstream out(fs::path(dir) / "dataset.json");
    out << manifest.dump(2) << "\n";
  }

  {
    std::ofstream out(fs::path(dir) / "train.csv");
    for (const FeatureSpec& f : set.user_schema.features) out << "user." << f.name << ",";
    for (const FeatureSpec& f : set.content_schema.features) out << "content." << f.name << ",";
    out << "target\n";
    for (std::size_t i = 0; i < set.train_size(); ++i) {
      for (double v : set.train_user[i]) out << format_double(v) << ",";
      for (double v : set.train_content[i]) out << format_double(v) << ",";
      out << format_double(set.train_target[i]) << "\n";
    }
  }

  {
    json eval;
    eval["format_version"] = 1;
    eval["items"] = set.eval_items;
    json users = json::array();
    for (std::size_t i = 0; i < set.eval_users.size(); ++i) {
      std::vector<int> rel(set.eval_relevant[i].begin(), set.eval_relevant[i].end());
      std::sort(rel.begin(), rel.end());
      users.push_back({{"features", set.eval_users[i]}, {"relevant", rel}});
    }
    eval["users"] = users;
    std::ofstream out(fs::path(dir) / "eval.json");
    out << eval.dump(2) << "\n";
  }
}

InteractionSet load_interactions(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream mf(fs::path(dir) / "dataset.json");
  if (!mf) throw std::runtime_error("load_interactions: missing dataset.json in " + dir);
  json manifest = json::parse(mf);
  if (manifest.at("format_version") != 1) {
    throw std::runtime_error("load_interactions: unsupported format_version");
  }
  InteractionSet set;
  set.user_schema = schema_from(manifest.at("user_schema"));
  set.content_schema = schema_from(manifest.at("content_schema"));

  std::ifstream tf(fs::path(dir) / manifest.at("train_file").get<std::string>());
  if (!tf) throw std::runtime_error("load_interactions: missing train file");
  std::string line;
  std::getline(tf, line);  // header
  const std::size_t nu = set.user_schema.features.size();
  const std::size_t nc = set.content_schema.features.size();
  while (std::getline(tf, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_csv_line(line);
    if (fields.size() != nu + nc + 1) {
      throw std::runtime_error("load_interactions: malformed train row");
    }
    FeatureRow u, c;
    for (std::size_t i = 0; i < nu; ++i) u.push_back(std::stod(fields[i]));
    for (std::size_t i = 0; i < nc; ++i) c.push_back(std::stod(fields[nu + i]));
    set.train_user.push_back(std::move(u));
    set.train_content.push_back(std::move(c));
    set.train_target.push_back(std::stod(fields[nu + nc]));
  }

  std::ifstream ef(fs::path(dir) / manifest.at("eval_file").get<std::string>());
  if (!ef) throw std::runtime_error("load_interactions: missing eval file");
  json eval = json::parse(ef);
  set.eval_items = eval.at("items").get<std::vector<FeatureRow>>();
  for (const json& u : eval.at("users")) {
    set.eval_users.push_back(u.at("features").get<FeatureRow>());
    const auto rel = u.at("relevant").get<std::vector<int>>();
    set.eval_relevant.push_back(std::unordered_set<int>(rel.begin(), rel.end()));
  }
  return set;
}

}  // namespace ftmamba
