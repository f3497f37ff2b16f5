#pragma once

#include <string>
#include <unordered_set>
#include <vector>

#include "ftmamba/tokenizer.hpp"

namespace ftmamba {

// A generated or loaded interaction dataset: training triples plus an
// evaluation block where each test user is ranked against every item.
struct InteractionSet {
  FeatureSchema user_schema;
  FeatureSchema content_schema;

  std::vector<FeatureRow> train_user;
  std::vector<FeatureRow> train_content;
  std::vector<double> train_target;

  std::vector<FeatureRow> eval_users;
  std::vector<std::unordered_set<int>> eval_relevant;  // indices into eval_items
  std::vector<FeatureRow> eval_items;

  std::size_t train_size() const { return train_target.size(); }
};

// ---------------------------------------------------------------------------
// Spotify-style music environment: 20 binary genre tastes per user, 50 songs with latent
// attribute vectors.  Affinity p(u) = u * G * S^T; bucketized into
// dislike/neutral/like by thresholds calibrated on a large user probe.

struct SpotifyEnv {
  int genres = 20;
  int songs = 50;
  int attributes = 10;
  std::vector<std::vector<double>> G;  // genres x attributes
  std::vector<std::vector<double>> S;  // songs x attributes
  double theta_lo = 0.0;  // 50th percentile of probed affinities
  double theta_hi = 0.0;  // 80th percentile: "like" is the top quintile
  unsigned seed = 0;
};

SpotifyEnv spotify_make_env(unsigned seed);

// Affinity of one binary user vector for every song.
std::vector<double> spotify_preferences(const SpotifyEnv& env, const FeatureRow& user);

// -1 below theta_lo, 0 below theta_hi, +1 at or above.
int spotify_bucketize(const SpotifyEnv& env, double affinity);

// Training pairs sample (user, song) uniformly; the evaluation block is
// n_test_users users (each with >=1 like) crossed with all songs.
InteractionSet spotify_generate(const SpotifyEnv& env, int n_train, int n_test_users, unsigned seed);

// ---------------------------------------------------------------------------
// Messaging environment: a population of demographic users and m synthetic
// message vectors, each clustered separately into k groups; the target of a
// (user, message) pair is the same-cluster indicator.

struct MessagingEnv {
  int clusters = 25;       // k
  int message_count = 25;  // m
  int user_count = 50000;
  std::vector<FeatureRow> users;                      // age (scaled) + 7 categorical codes
  std::vector<std::vector<double>> message_vectors;   // m x 32
  std::vector<int> user_cluster;
  std::vector<int> message_cluster;
  unsigned seed = 0;
};

// Cardinalities of the seven categorical user features.
extern const std::vector<int> kMessagingCardinalities;

MessagingEnv messaging_make_env(int clusters, int message_count, int user_count, unsigned seed);

// Training pairs sample (user, message) with replacement; content feature is
// the message index.  Test users are resampled until their cluster has at
// least one message.
InteractionSet messaging_generate(const MessagingEnv& env, int n_train, int n_test_users,
                                  unsigned seed);

// ---------------------------------------------------------------------------
// Generic CSV transaction loader ("one row = one purchase").

struct CsvColumnSpec {
  std::string column;
  FeatureKind kind = FeatureKind::numeric;
};

struct CsvSchemaMap {
  std::string user_id_column;
  std::string item_id_column;
  std::vector<CsvColumnSpec> user_features;
  // Optional item feature columns; when empty the item id itself becomes a
  // single categorical feature.
  std::vector<CsvColumnSpec> item_features;
  int max_test_users = 100;  // 0 = no cap
  int min_test_positives = 5;
};

// Loads transactions, labels them 1, and samples round(ratio * positives)
// unseen items per user as 0-labeled non-transactions.  Test users are those
// with at least min_test_positives purchases.  Training rows are shuffled.
InteractionSet csv_load_interactions(const std::string& path, const CsvSchemaMap& map,
                                     double nontransaction_ratio, unsigned seed);

// ---------------------------------------------------------------------------
// On-disk dataset format: dataset.json (schemas + counts), train.csv,
// eval.json.  Writing the same InteractionSet twice produces identical bytes.

void save_interactions(const InteractionSet& set, const std::string& dir);
InteractionSet load_interactions(const std::string& dir);

}  // namespace ftmamba
