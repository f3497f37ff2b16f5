#include "ftmamba/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "ftmamba/adam.hpp"

namespace ftmamba {

using json = nlohmann::json;

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

double grad_norm(const std::vector<Tensor<double>>& params) {
  double s = 0;
  for (const Tensor<double>& p : params) {
    if (!p.grad) continue;
    for (double g : *p.grad) s += g * g;
  }
  return std::sqrt(s);
}

void check_schema_match(const FeatureSchema& model_side, const FeatureSchema& data_side,
                        const char* which) {
  if (model_side.features.size() != data_side.features.size()) {
    throw std::invalid_argument(std::string("evaluate: ") + which + " schema has " +
                                std::to_string(data_side.features.size()) +
                                " features, model expects " +
                                std::to_string(model_side.features.size()));
  }
  for (std::size_t i = 0; i < model_side.features.size(); ++i) {
    const FeatureSpec& a = model_side.features[i];
    const FeatureSpec& b = data_side.features[i];
    if (a.kind != b.kind || a.cardinality != b.cardinality) {
      throw std::invalid_argument(std::string("evaluate: ") + which + " feature " +
                                  std::to_string(i) + " ('" + b.name +
                                  "') does not match the model schema");
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Training

TrainResult train(const TrainConfig& cfg, const InteractionSet& data) {
  if (data.train_size() == 0) throw std::invalid_argument("train: empty training set");
  if (cfg.batch_size < 1 || cfg.steps < 1) {
    throw std::invalid_argument("train: steps and batch_size must be positive");
  }

  TrainResult result;
  result.model = TwoTowerModel<double>::init(data.user_schema, data.content_schema, cfg.model,
                                             cfg.seed);
  TwoTowerModel<double>& model = result.model;
  Adam<double> opt(model.parameters(), cfg.lr);

  const std::size_t n = data.train_size();
  const double inv_batch = 0.5 / cfg.batch_size;

  // forward-only loss of one batch (used for the step-0 trajectory point)
  auto batch_loss_only = [&](int step) {
    double total = 0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const std::size_t i = (static_cast<std::size_t>(step) * cfg.batch_size + b) % n;
      Tensor<double> s = model.score(data.train_user[i], data.train_content[i]);
      const double d = s.value() - data.train_target[i];
      total += d * d * inv_batch;
    }
    return total;
  };

  // loss of the untrained model, averaged over the batches the first logging
  // window will consume -- a single batch is too noisy to anchor descent checks
  auto init_window_loss = [&]() {
    const int w = std::min(cfg.steps, cfg.eval_cadence);
    double total = 0;
    for (int j = 0; j < w; ++j) total += batch_loss_only(j);
    return total / w;
  };

  auto eval_hr = [&]() {
    EvalResult ev = evaluate(model, data, cfg.eval_ks);
    std::vector<double> hr;
    for (int k : cfg.eval_ks) {
      for (const MetricRow& row : ev.metrics.rows) {
        if (row.metric == "HR" && row.k == k) hr.push_back(row.value);
      }
    }
    return hr;
  };

  result.initial_loss = init_window_loss();
  result.trajectory.push_back({0, result.initial_loss, eval_hr()});

  double window_loss = 0;
  int window_steps = 0;
  for (int step = 1; step <= cfg.steps; ++step) {
    opt.zero_grad();
    double batch_loss = 0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const std::size_t i =
          (static_cast<std::size_t>(step - 1) * cfg.batch_size + b) % n;
      Tape<double> tape;
      Tensor<double> s = model.score(data.train_user[i], data.train_content[i], &tape);
      Tensor<double> target = Tensor<double>::from({1, 1}, {data.train_target[i]});
      Tensor<double> loss = mul_scalar(mse_loss(s, target, &tape), inv_batch, &tape);
      batch_loss += loss.value();
      tape.backward(loss);
    }
    if (!std::isfinite(batch_loss)) {
      throw std::runtime_error(
          "train: non-finite loss at step " + std::to_string(step) + " (lr=" + fmt17(cfg.lr) +
          ", user tower grad norm=" + fmt17(grad_norm(model.user.parameters())) +
          ", content tower grad norm=" + fmt17(grad_norm(model.content.parameters())) + ")");
    }
    opt.step();
    window_loss += batch_loss;
    ++window_steps;

    if (step % cfg.eval_cadence == 0 || step == cfg.steps) {
      TrajectoryPoint pt;
      pt.step = step;
      pt.loss = window_loss / window_steps;
      pt.hr = eval_hr();
      result.trajectory.push_back(pt);
      if (cfg.verbose) {
        std::printf("step %5d  loss %.5f  HR@1 %.3f\n", step, pt.loss,
                    pt.hr.empty() ? 0.0 : pt.hr.front());
        std::fflush(stdout);
      }
      window_loss = 0;
      window_steps = 0;
    }
  }
  result.final_loss = result.trajectory.back().loss;
  return result;
}

void write_trajectory_csv(const std::string& path, const std::vector<TrajectoryPoint>& traj,
                          const std::vector<int>& ks) {
  std::ofstream out(path);
  out << "# format_version 1\n";
  out << "step,loss";
  for (int k : ks) out << ",HR@" << k;
  out << "\n";
  for (const TrajectoryPoint& p : traj) {
    out << p.step << "," << fmt17(p.loss);
    for (double v : p.hr) out << "," << fmt17(v);
    out << "\n";
  }
}

double dataset_loss(const TwoTowerModel<double>& model, const InteractionSet& data,
                    std::size_t begin, std::size_t count) {
  if (count == 0 || begin + count > data.train_size()) {
    throw std::invalid_argument("dataset_loss: row range out of bounds");
  }
  double total = 0;
  for (std::size_t i = begin; i < begin + count; ++i) {
    Tensor<double> s = model.score(data.train_user[i], data.train_content[i]);
    const double d = s.value() - data.train_target[i];
    total += 0.5 * d * d;
  }
  return total / count;
}

// ---------------------------------------------------------------------------
// Evaluation

EvalResult evaluate_scores(const std::vector<std::vector<double>>& scores,
                           const InteractionSet& data, const std::vector<int>& ks) {
  if (data.eval_items.empty()) throw std::invalid_argument("evaluate: no eval items");
  if (scores.size() != data.eval_users.size()) {
    throw std::invalid_argument("evaluate: score matrix has " + std::to_string(scores.size()) +
                                " rows for " + std::to_string(data.eval_users.size()) + " users");
  }
  const int n_items = static_cast<int>(data.eval_items.size());
  EvalResult result;
  std::vector<RankedUser> users;
  users.reserve(scores.size());
  for (std::size_t u = 0; u < scores.size(); ++u) {
    if (static_cast<int>(scores[u].size()) != n_items) {
      throw std::invalid_argument("evaluate: score row size mismatch");
    }
    std::vector<int> order(n_items);
    for (int i = 0; i < n_items; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return scores[u][a] > scores[u][b]; });
    users.push_back({order, data.eval_relevant[u]});
    result.rankings.push_back(std::move(order));
  }
  result.metrics = aggregate_metrics(users, ks);
  return result;
}

EvalResult evaluate(const TwoTowerModel<double>& model, const InteractionSet& data,
                    const std::vector<int>& ks) {
  check_schema_match(model.user.schema, data.user_schema, "user");
  check_schema_match(model.content.schema, data.content_schema, "content");
  if (data.eval_items.empty()) throw std::invalid_argument("evaluate: no eval items");

  const int n_items = static_cast<int>(data.eval_items.size());
  std::vector<Tensor<double>> item_vecs;
  item_vecs.reserve(n_items);
  for (const FeatureRow& row : data.eval_items) item_vecs.push_back(model.content.represent(row));

  std::vector<std::vector<double>> scores(data.eval_users.size(),
                                          std::vector<double>(n_items, 0.0));
  for (std::size_t u = 0; u < data.eval_users.size(); ++u) {
    Tensor<double> uvec = model.user.represent(data.eval_users[u]);
    for (int i = 0; i < n_items; ++i) {
      double dot = 0;
      for (std::size_t j = 0; j < uvec.numel(); ++j) {
        dot += (*uvec.data)[j] * (*item_vecs[i].data)[j];
      }
      scores[u][i] = dot;
    }
  }
  return evaluate_scores(scores, data, ks);
}

SeedRecommendations recommendations_from(const EvalResult& eval, const InteractionSet& data) {
  SeedRecommendations rec;
  rec.item_count = static_cast<int>(data.eval_items.size());
  for (std::size_t u = 0; u < eval.rankings.size(); ++u) {
    std::vector<int> liked(data.eval_relevant[u].begin(), data.eval_relevant[u].end());
    std::sort(liked.begin(), liked.end());
    const std::size_t count = liked.size();
    std::vector<int> recommended(eval.rankings[u].begin(), eval.rankings[u].begin() + count);
    rec.liked.push_back(std::move(liked));
    rec.recommended.push_back(std::move(recommended));
  }
  return rec;
}

// ---------------------------------------------------------------------------
// Scaling benchmark

namespace {

double time_reps(const std::function<void()>& fn, long reps) {
  const auto t0 = std::chrono::steady_clock::now();
  for (long r = 0; r < reps; ++r) fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double>(t1 - t0).count();
}

}  // namespace

BenchmarkReport benchmark_scaling(const std::string& kind, int d, const std::vector<int>& lengths,
                                  int trials, unsigned seed) {
  if (lengths.size() < 5) {
    throw std::invalid_argument("benchmark_scaling: need at least 5 lengths");
  }
  if (!std::is_sorted(lengths.begin(), lengths.end())) {
    throw std::invalid_argument("benchmark_scaling: lengths must be ascending");
  }
  if (trials < 1) throw std::invalid_argument("benchmark_scaling: trials must be positive");

  std::mt19937 rng(seed);
  MambaLayerParams<double> mamba;
  TransformerLayerParams<double> transformer;
  if (kind == "mamba") {
    MambaConfig cfg;
    cfg.d = d;
    cfg.layers = 1;
    mamba = MambaLayerParams<double>::init(cfg, rng);
  } else if (kind == "transformer") {
    TransformerConfig cfg;
    cfg.d = d;
    cfg.ffn_hidden = 16 * d;
    cfg.layers = 1;
    transformer = TransformerLayerParams<double>::init(cfg, rng);
  } else if (kind != "copy" && kind != "attention-core") {
    throw std::invalid_argument("benchmark_scaling: unknown kind '" + kind + "'");
  }

  BenchmarkReport report;
  report.kind = kind;
  report.d = d;

  volatile double sink = 0;  // keep forwards observable
  for (int L : lengths) {
    Tensor<double> x = Tensor<double>::zeros({L, d});
    x.fill_uniform(-1.0, 1.0, rng);
    std::function<void()> run;
    if (kind == "mamba") {
      run = [&] {
        Tensor<double> y = mamba_layer_forward(mamba, x);
        sink = sink + (*y.data)[0];
      };
    } else if (kind == "transformer") {
      run = [&] {
        Tensor<double> y = transformer_layer_forward(transformer, x);
        sink = sink + (*y.data)[0];
      };
    } else if (kind == "attention-core") {
      run = [&] {
        Tensor<double> scores = matmul(x, transpose(x));
        Tensor<double> y = matmul(softmax_rows(mul_scalar(scores, 1.0 / std::sqrt(d))), x);
        sink = sink + (*y.data)[0];
      };
    } else {  // copy
      run = [&] {
        std::vector<double> out(*x.data);
        sink = sink + out[0];
      };
    }

    run();  // warmup
    long reps = 1;
    double elapsed = time_reps(run, reps);
    while (elapsed < 0.02) {  // grow until well above timer resolution
      reps *= 2;
      elapsed = time_reps(run, reps);
    }
    std::vector<double> samples;
    samples.reserve(trials);
    for (int t = 0; t < trials; ++t) samples.push_back(time_reps(run, reps) / reps);
    std::sort(samples.begin(), samples.end());
    const double median = samples.size() % 2 == 1
                              ? samples[samples.size() / 2]
                              : 0.5 * (samples[samples.size() / 2 - 1] +
                                       samples[samples.size() / 2]);
    report.points.push_back({L, median});
  }

  // least-squares slope of log(time) on log(L)
  const std::size_t n = report.points.size();
  double mx = 0, my = 0;
  for (const BenchmarkPoint& p : report.points) {
    mx += std::log(p.length);
    my += std::log(p.seconds);
  }
  mx /= n;
  my /= n;
  double num = 0, den = 0;
  for (const BenchmarkPoint& p : report.points) {
    const double dx = std::log(p.length) - mx;
    num += dx * (std::log(p.seconds) - my);
    den += dx * dx;
  }
  report.slope = num / den;
  return report;
}

// ---------------------------------------------------------------------------
// Presets

TrainConfig desk_config(EmbedderKind kind, const std::string& family) {
  TrainConfig cfg;
  cfg.model.kind = kind;
  cfg.model.token_dim = 64;
  cfg.model.mamba_layers = 2;
  cfg.model.transformer_layers = 1;
  cfg.model.ffn_hidden = 256;
  cfg.steps = 2000;
  // per-family rates, calibrated at this scale: the messaging task needs a
  // hotter rate to fit within 2,000 steps
  cfg.lr = family == "messaging" ? 2e-4 : 1e-4;
  return cfg;
}

TrainConfig full_config(EmbedderKind kind, const std::string& family) {
  TrainConfig cfg;
  cfg.model.kind = kind;  // remaining model fields default to the full-size setup
  cfg.steps = 5000;
  cfg.lr = family == "messaging" ? 1e-5 : 1e-4;
  return cfg;
}

// ---------------------------------------------------------------------------
// reproduce

const std::vector<std::string> kExperimentNames = {
    "spotify",         "messaging-25x25",  "messaging-25x50", "messaging-25x100",
    "messaging-50x50", "messaging-50x100", "messaging-100x100", "scaling"};

InteractionSet experiment_dataset(const std::string& experiment, int n_train, int n_test_users,
                                  unsigned seed) {
  // decorrelate the generation stream from the env-construction stream
  const unsigned gen_seed = 0x9e3779b9u ^ (seed * 0x85ebca6bu + 1u);
  if (experiment == "spotify") {
    SpotifyEnv env = spotify_make_env(seed);
    return spotify_generate(env, n_train, n_test_users, gen_seed);
  }
  // messaging-KxM
  const std::size_t dash = experiment.find('-');
  const std::size_t x = experiment.find('x', dash);
  if (dash == std::string::npos || x == std::string::npos) {
    throw std::invalid_argument("experiment_dataset: unknown experiment '" + experiment + "'");
  }
  const int k = std::stoi(experiment.substr(dash + 1, x - dash - 1));
  const int m = std::stoi(experiment.substr(x + 1));
  MessagingEnv env = messaging_make_env(k, m, 50000, seed);
  return messaging_generate(env, n_train, n_test_users, gen_seed);
}

namespace {

namespace fs = std::filesystem;

json config_echo(const ReproduceOptions& opts, const TrainConfig& cfg) {
  json j;
  j["format_version"] = 1;
  j["experiment"] = opts.experiment;
  j["preset"] = opts.preset;
  j["seeds"] = opts.seeds;
  j["out_dir"] = opts.out_dir;
  j["train"] = {{"steps", cfg.steps},
                {"batch_size", cfg.batch_size},
                {"lr", cfg.lr},
                {"eval_cadence", cfg.eval_cadence},
                {"eval_ks", cfg.eval_ks}};
  j["model"] = config_to_json(cfg.model);
  j["model"].erase("kind");  // both kinds run
  return j;
}

void write_diff_profile_csv(const fs::path& path, const std::vector<double>& profile) {
  std::ofstream out(path);
  out << "# format_version 1\n";
  out << "rank,mean_diff\n";
  for (std::size_t r = 0; r < profile.size(); ++r) {
    out << (r + 1) << "," << fmt17(profile[r]) << "\n";
  }
}

struct SeedOutcome {
  unsigned seed = 0;
  std::string model;  // "mamba" | "transformer"
  std::vector<MetricRow> rows;
};

void reproduce_training(const ReproduceOptions& opts) {
  const std::string family =
      opts.experiment.rfind("messaging", 0) == 0 ? "messaging" : "spotify";
  TrainConfig base = opts.preset == "full" ? full_config(EmbedderKind::mamba, family)
                                            : desk_config(EmbedderKind::mamba, family);
  base.verbose = opts.verbose;

  fs::create_directories(opts.out_dir);
  {
    std::ofstream out(fs::path(opts.out_dir) / "config.json");
    out << config_echo(opts, base).dump(2) << "\n";
  }

  const std::vector<EmbedderKind> kinds = {EmbedderKind::mamba, EmbedderKind::transformer};
  std::vector<SeedOutcome> outcomes;
  std::map<std::string, std::vector<SeedRecommendations>> rec_by_kind;

  for (unsigned seed : opts.seeds) {
    InteractionSet data =
        experiment_dataset(opts.experiment, base.steps * base.batch_size, 100, seed);
    for (EmbedderKind kind : kinds) {
      TrainConfig cfg = base;
      cfg.model.kind = kind;
      cfg.seed = seed;
      const std::string kind_name = embedder_kind_name(kind);
      if (opts.verbose) {
        std::printf("[%s] seed %u %s\n", opts.experiment.c_str(), seed, kind_name.c_str());
        std::fflush(stdout);
      }
      TrainResult run = train(cfg, data);
      EvalResult ev = evaluate(run.model, data, cfg.eval_ks);

      SeedOutcome outcome;
      outcome.seed = seed;
      outcome.model = kind_name;
      outcome.rows = ev.metrics.rows;
      outcomes.push_back(std::move(outcome));
      rec_by_kind[kind_name].push_back(recommendations_from(ev, data));

      const std::string tag = kind_name + "_seed" + std::to_string(seed);
      write_trajectory_csv((fs::path(opts.out_dir) / ("trajectory_" + tag + ".csv")).string(),
                           run.trajectory, cfg.eval_ks);
      save_model(run.model, (fs::path(opts.out_dir) / ("model_" + tag + ".json")).string());
    }
  }

  {
    std::ofstream out(fs::path(opts.out_dir) / "metrics.csv");
    out << "# format_version 1\n";
    out << "seed,model,metric,k,value\n";
    for (const SeedOutcome& o : outcomes) {
      for (const MetricRow& r : o.rows) {
        out << o.seed << "," << o.model << "," << r.metric << "," << r.k << ","
            << fmt17(r.value) << "\n";
      }
    }
  }

  // summary.json: mean/std/count per model x metric@k
  {
    std::map<std::string, std::map<std::string, std::vector<double>>> samples;
    for (const SeedOutcome& o : outcomes) {
      for (const MetricRow& r : o.rows) {
        samples[o.model][r.metric + "@" + std::to_string(r.k)].push_back(r.value);
      }
    }
    json j;
    j["format_version"] = 1;
    j["experiment"] = opts.experiment;
    for (const auto& [model, metrics] : samples) {
      for (const auto& [name, vals] : metrics) {
        double mean = 0;
        for (double v : vals) mean += v;
        mean /= vals.size();
        double var = 0;
        for (double v : vals) var += (v - mean) * (v - mean);
        const double stdev = vals.size() > 1 ? std::sqrt(var / (vals.size() - 1)) : 0.0;
        j["models"][model][name] = {{"mean", mean}, {"std", stdev},
                                    {"count", vals.size()}};
      }
    }
    std::ofstream out(fs::path(opts.out_dir) / "summary.json");
    out << j.dump(2) << "\n";
  }

  // table.csv: one row per embedder kind, means over seeds
  {
    const std::vector<std::pair<std::string, int>> columns = {
        {"P", 5},  {"P", 10},  {"R", 5},  {"R", 10}, {"MRR", 5},
        {"MRR", 10}, {"HR", 1}, {"HR", 5}, {"HR", 10}};
    std::ofstream out(fs::path(opts.out_dir) / "table.csv");
    out << "# format_version 1\n";
    out << "model";
    for (const auto& [m, k] : columns) out << "," << m << "@" << k;
    out << "\n";
    for (const EmbedderKind kind : kinds) {
      const std::string name = embedder_kind_name(kind);
      out << name;
      for (const auto& [m, k] : columns) {
        double mean = 0;
        int count = 0;
        for (const SeedOutcome& o : outcomes) {
          if (o.model != name) continue;
          for (const MetricRow& r : o.rows) {
            if (r.metric == m && r.k == k) {
              mean += r.value;
              ++count;
            }
          }
        }
        out << "," << fmt4(count ? mean / count : 0.0);
      }
      out << "\n";
    }
  }

  for (const auto& [kind_name, recs] : rec_by_kind) {
    write_diff_profile_csv(fs::path(opts.out_dir) / ("diff_profile_" + kind_name + ".csv"),
                           diff_profile(recs));
  }
}

void reproduce_scaling(const ReproduceOptions& opts) {
  fs::create_directories(opts.out_dir);
  const std::vector<int> lengths = {64, 128, 256, 512, 1024, 2048, 4096};
  const int d = 192;

  json slopes;
  slopes["format_version"] = 1;
  slopes["d"] = d;
  slopes["lengths"] = lengths;
  std::ofstream csv(fs::path(opts.out_dir) / "benchmark.csv");
  csv << "# format_version 1\n";
  csv << "kind,L,median_seconds\n";
  for (const std::string kind : {"copy", "mamba", "transformer", "attention-core"}) {
    if (opts.verbose) {
      std::printf("[scaling] %s\n", kind.c_str());
      std::fflush(stdout);
    }
    BenchmarkReport report = benchmark_scaling(kind, d, lengths, opts.benchmark_trials,
                                               opts.seeds.empty() ? 0 : opts.seeds.front());
    for (const BenchmarkPoint& p : report.points) {
      csv << kind << "," << p.length << "," << fmt17(p.seconds) << "\n";
    }
    slopes["slopes"][kind] = report.slope;
  }
  std::ofstream out(fs::path(opts.out_dir) / "slopes.json");
  out << slopes.dump(2) << "\n";
}

}  // namespace

void reproduce(const ReproduceOptions& opts) {
  if (std::find(kExperimentNames.begin(), kExperimentNames.end(), opts.experiment) ==
      kExperimentNames.end()) {
    std::string valid;
    for (const std::string& n : kExperimentNames) valid += (valid.empty() ? "" : ", ") + n;
    throw std::invalid_argument("reproduce: unknown experiment '" + opts.experiment +
                                "' (expected one of: " + valid + ")");
  }
  if (opts.preset != "desk" && opts.preset != "full") {
    throw std::invalid_argument("reproduce: preset must be 'desk' or 'full'");
  }
  if (opts.experiment == "scaling") {
    reproduce_scaling(opts);
  } else {
    if (opts.seeds.empty()) throw std::invalid_argument("reproduce: need at least one seed");
    reproduce_training(opts);
  }
}

}  // namespace ftmamba
