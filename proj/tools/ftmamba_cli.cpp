// Command-line front end: dataset generation, training, evaluation, scaling
// benchmarks, and one-shot experiment reproduction.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ftmamba/train.hpp"

using namespace ftmamba;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kConfigHelp =
    "JSON config file; keys match the long option names without dashes "
    "(e.g. {\"lr\":1e-4,\"steps\":2000}). Explicit flags win over the file.";

// Applies file values for options the user did not set on the command line.
class JsonOverride {
 public:
  explicit JsonOverride(const std::string& path) {
    if (path.empty()) return;
    std::ifstream in(path);
    if (!in) throw CLI::ValidationError("--config", "cannot open " + path);
    in >> j_;
  }

  template <typename T>
  void apply(const CLI::Option* opt, const std::string& key, T& value) const {
    if (j_.is_null() || opt->count() > 0) return;
    if (j_.contains(key)) value = j_.at(key).get<T>();
  }

 private:
  json j_;
};

std::vector<unsigned> parse_seeds(const std::vector<int>& raw) {
  std::vector<unsigned> seeds;
  for (int s : raw) {
    if (s < 0) throw CLI::ValidationError("--seeds", "seeds must be nonnegative");
    seeds.push_back(static_cast<unsigned>(s));
  }
  return seeds;
}

struct HyperFlags {
  int d = 0;
  int mamba_layers = 0, transformer_layers = 0, heads = 0, ffn_hidden = 0;
  int expand = 0, conv_width = 0, state_size = 0;
  int head_hidden = 0, head_out = 0;
  int steps = 0, batch_size = 0, eval_cadence = 0;
  double lr = 0;

  // every option stays "unset" unless the user (or config file) provides it
  std::vector<std::pair<CLI::Option*, std::string>> opts;

  void attach(CLI::App* cmd) {
    auto add = [&](const char* flag, auto& field, const char* help) {
      CLI::Option* o = cmd->add_option(flag, field, help);
      std::string key = flag + 2;  // strip "--"
      for (char& c : key) {
        if (c == '-') c = '_';
      }
      opts.push_back({o, key});
    };
    add("--d", d, "token dimension");
    add("--mamba-layers", mamba_layers, "mamba stack depth");
    add("--transformer-layers", transformer_layers, "transformer stack depth");
    add("--heads", heads, "attention heads");
    add("--ffn-hidden", ffn_hidden, "transformer FFN hidden width");
    add("--expand", expand, "mamba linear expansion factor");
    add("--conv-width", conv_width, "mamba convolution width");
    add("--state-size", state_size, "SSM state size");
    add("--head-hidden", head_hidden, "tower head hidden width");
    add("--head-out", head_out, "tower head output width");
    add("--steps", steps, "training steps");
    add("--batch-size", batch_size, "batch size");
    add("--eval-cadence", eval_cadence, "steps between trajectory evaluations");
    add("--lr", lr, "learning rate");
  }

  void fold_into(TrainConfig& cfg, const JsonOverride& file) {
    // config-file values fill flags the user left unset; a field stays 0
    // ("keep preset value") unless either source provides it
    for (auto& [opt, key] : opts) {
      if (key == "lr") {
        file.apply(opt, key, lr);
      } else {
        file.apply(opt, key, *field_for(key));
      }
    }
    if (lr > 0) cfg.lr = lr;
    auto set = [](int v, int& dst) {
      if (v > 0) dst = v;
    };
    set(d, cfg.model.token_dim);
    set(steps, cfg.steps);
    set(batch_size, cfg.batch_size);
    set(eval_cadence, cfg.eval_cadence);
    set(mamba_layers, cfg.model.mamba_layers);
    set(transformer_layers, cfg.model.transformer_layers);
    set(heads, cfg.model.heads);
    set(ffn_hidden, cfg.model.ffn_hidden);
    set(expand, cfg.model.expand);
    set(conv_width, cfg.model.conv_width);
    set(state_size, cfg.model.state_size);
    set(head_hidden, cfg.model.head_hidden);
    set(head_out, cfg.model.head_out);
  }

 private:
  int* field_for(const std::string& key) {
    if (key == "d") return &d;
    if (key == "mamba_layers") return &mamba_layers;
    if (key == "transformer_layers") return &transformer_layers;
    if (key == "heads") return &heads;
    if (key == "ffn_hidden") return &ffn_hidden;
    if (key == "expand") return &expand;
    if (key == "conv_width") return &conv_width;
    if (key == "state_size") return &state_size;
    if (key == "head_hidden") return &head_hidden;
    if (key == "head_out") return &head_out;
    if (key == "steps") return &steps;
    if (key == "batch_size") return &batch_size;
    if (key == "eval_cadence") return &eval_cadence;
    throw std::logic_error("unmapped hyperparameter key " + key);
  }
};

void print_metrics(const AggregateResult& agg) {
  std::printf("%-6s %4s %10s\n", "metric", "k", "value");
  for (const MetricRow& r : agg.rows) {
    std::printf("%-6s %4d %10.4f\n", r.metric.c_str(), r.k, r.value);
  }
  std::printf("(%d users evaluated, %d excluded with no relevant items)\n",
              agg.included_users, agg.excluded_users);
}

void write_metrics_csv(const std::string& path, const AggregateResult& agg) {
  std::ofstream out(path);
  out << "# format_version 1\n";
  out << "metric,k,value\n";
  char buf[64];
  for (const MetricRow& r : agg.rows) {
    std::snprintf(buf, sizeof(buf), "%.17g", r.value);
    out << r.metric << "," << r.k << "," << buf << "\n";
  }
}

InteractionSet generate_for_cli(const std::string& env, int n_train, int test_users,
                                unsigned seed) {
  if (env == "spotify") {
    SpotifyEnv e = spotify_make_env(seed);
    return spotify_generate(e, n_train, test_users, seed + 1);
  }
  if (env.rfind("messaging-", 0) == 0) {
    const std::size_t x = env.find('x', 10);
    if (x == std::string::npos) {
      throw CLI::ValidationError("--env", "messaging envs are named messaging-KxM");
    }
    const int k = std::stoi(env.substr(10, x - 10));
    const int m = std::stoi(env.substr(x + 1));
    MessagingEnv e = messaging_make_env(k, m, 50000, seed);
    return messaging_generate(e, n_train, test_users, seed + 1);
  }
  throw CLI::ValidationError("--env", "unknown environment '" + env + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ftmamba: two-tower recommenders with mamba/transformer embedders"};
  app.require_subcommand(1);

  // ---- gen-data ----
  auto* gen = app.add_subcommand("gen-data", "generate (or import) a dataset directory");
  std::string gen_env, gen_out, gen_csv;
  std::string gen_user_id, gen_item_id;
  std::vector<std::string> gen_user_num, gen_user_cat, gen_item_num, gen_item_cat;
  int gen_n_train = 160000, gen_test_users = 100;
  int gen_min_test_pos = 5, gen_max_test_users = 100;
  double gen_neg_ratio = 1.0;
  unsigned gen_seed = 0;
  gen->add_option("--env", gen_env,
                  "spotify | messaging-KxM (e.g. messaging-25x25) | csv")
      ->required();
  gen->add_option("--out-dir", gen_out, "dataset directory to create")->required();
  gen->add_option("--seed", gen_seed, "generation seed");
  gen->add_option("--n-train", gen_n_train, "training pairs to sample");
  gen->add_option("--test-users", gen_test_users, "test users to sample");
  gen->add_option("--csv", gen_csv, "interaction CSV (env=csv)");
  gen->add_option("--user-id", gen_user_id, "user id column (env=csv)");
  gen->add_option("--item-id", gen_item_id, "item id column (env=csv)");
  gen->add_option("--user-num", gen_user_num, "numeric user feature column (repeatable)");
  gen->add_option("--user-cat", gen_user_cat, "categorical user feature column (repeatable)");
  gen->add_option("--item-num", gen_item_num, "numeric item feature column (repeatable)");
  gen->add_option("--item-cat", gen_item_cat, "categorical item feature column (repeatable)");
  gen->add_option("--negatives-ratio", gen_neg_ratio,
                  "sampled non-interactions per positive (env=csv)");
  gen->add_option("--min-test-positives", gen_min_test_pos,
                  "positives required for eval eligibility (env=csv)");
  gen->add_option("--max-test-users", gen_max_test_users, "eval user cap (env=csv)");

  // ---- train ----
  auto* tr = app.add_subcommand("train", "train one model on a dataset directory");
  std::string tr_data, tr_out, tr_model = "mamba", tr_preset = "desk", tr_config;
  unsigned tr_seed = 0;
  bool tr_verbose = false;
  HyperFlags tr_hp;
  tr->add_option("--data", tr_data, "dataset directory (from gen-data)")->required();
  tr->add_option("--out-dir", tr_out, "run output directory")->required();
  tr->add_option("--model", tr_model, "mamba | transformer")
      ->check(CLI::IsMember({"mamba", "transformer"}));
  tr->add_option("--preset", tr_preset, "desk | full hyperparameter baseline")
      ->check(CLI::IsMember({"desk", "full"}));
  tr->add_option("--seed", tr_seed, "training seed");
  tr->add_option("--config", tr_config, kConfigHelp);
  tr->add_flag("--verbose", tr_verbose, "log every trajectory point");
  tr_hp.attach(tr);

  // ---- evaluate ----
  auto* ev = app.add_subcommand("evaluate", "rank eval items with a checkpoint");
  std::string ev_data, ev_ckpt, ev_out;
  std::vector<int> ev_ks = {1, 5, 10};
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--checkpoint", ev_ckpt, "model checkpoint JSON")->required();
  ev->add_option("--ks", ev_ks, "truncation values")->delimiter(',');
  ev->add_option("--out", ev_out, "metrics CSV path (otherwise print only)");

  // ---- benchmark ----
  auto* bm = app.add_subcommand("benchmark", "forward-pass scaling in sequence length");
  std::vector<std::string> bm_kinds = {"copy", "mamba", "transformer", "attention-core"};
  std::vector<int> bm_lengths = {64, 128, 256, 512, 1024, 2048, 4096};
  std::string bm_out;
  int bm_d = 192, bm_trials = 3;
  unsigned bm_seed = 0;
  bm->add_option("--kind", bm_kinds, "layer kinds to time (repeatable)")
      ->check(CLI::IsMember({"copy", "mamba", "transformer", "attention-core"}));
  bm->add_option("--d", bm_d, "token dimension");
  bm->add_option("--lengths", bm_lengths, "sequence lengths (sorted, >= 5)")->delimiter(',');
  bm->add_option("--trials", bm_trials, "trials per length (median taken)");
  bm->add_option("--seed", bm_seed, "input seed");
  bm->add_option("--out-dir", bm_out, "write benchmark.csv + slopes.json here");

  // ---- reproduce ----
  auto* rp = app.add_subcommand("reproduce", "end-to-end experiment with both embedders");
  std::string rp_experiment, rp_out = "out", rp_preset = "desk";
  std::vector<int> rp_seeds = {0, 1, 2, 3, 4};
  int rp_trials = 3;
  bool rp_verbose = false;
  rp->add_option("--experiment", rp_experiment,
                 "spotify | messaging-KxM (K in {25,50,100}) | scaling")
      ->required();
  rp->add_option("--seeds", rp_seeds, "seed list")->delimiter(',');
  rp->add_option("--out-dir", rp_out, "artifact directory");
  rp->add_option("--preset", rp_preset, "desk | full")
      ->check(CLI::IsMember({"desk", "full"}));
  rp->add_option("--trials", rp_trials, "benchmark trials (scaling only)");
  rp->add_flag("--verbose", rp_verbose, "log training progress");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      InteractionSet data;
      if (gen_env == "csv") {
        if (gen_csv.empty() || gen_user_id.empty() || gen_item_id.empty()) {
          throw std::invalid_argument("env=csv needs --csv, --user-id and --item-id");
        }
        CsvSchemaMap map;
        map.user_id_column = gen_user_id;
        map.item_id_column = gen_item_id;
        for (const std::string& c : gen_user_num) map.user_features.push_back({c, FeatureKind::numeric});
        for (const std::string& c : gen_user_cat) map.user_features.push_back({c, FeatureKind::categorical});
        for (const std::string& c : gen_item_num) map.item_features.push_back({c, FeatureKind::numeric});
        for (const std::string& c : gen_item_cat) map.item_features.push_back({c, FeatureKind::categorical});
        map.min_test_positives = gen_min_test_pos;
        map.max_test_users = gen_max_test_users;
        data = csv_load_interactions(gen_csv, map, gen_neg_ratio, gen_seed);
      } else {
        data = generate_for_cli(gen_env, gen_n_train, gen_test_users, gen_seed);
      }
      save_interactions(data, gen_out);
      std::printf("wrote %s: %zu train rows, %zu eval users, %zu eval items\n",
                  gen_out.c_str(), data.train_size(), data.eval_users.size(),
                  data.eval_items.size());
    } else if (tr->parsed()) {
      InteractionSet data = load_interactions(tr_data);
      const std::string family =
          data.content_schema.features.size() == 1 &&
                  data.content_schema.features[0].name == "message"
              ? "messaging"
              : "spotify";
      EmbedderKind kind =
          tr_model == "mamba" ? EmbedderKind::mamba : EmbedderKind::transformer;
      TrainConfig cfg = tr_preset == "full" ? full_config(kind, family)
                                             : desk_config(kind, family);
      cfg.seed = tr_seed;
      cfg.verbose = tr_verbose;
      JsonOverride file(tr_config);
      tr_hp.fold_into(cfg, file);

      fs::create_directories(tr_out);
      {
        json echo;
        echo["format_version"] = 1;
        echo["data"] = tr_data;
        echo["preset"] = tr_preset;
        echo["seed"] = cfg.seed;
        echo["train"] = {{"steps", cfg.steps},
                         {"batch_size", cfg.batch_size},
                         {"lr", cfg.lr},
                         {"eval_cadence", cfg.eval_cadence},
                         {"eval_ks", cfg.eval_ks}};
        echo["model"] = config_to_json(cfg.model);
        std::ofstream out(fs::path(tr_out) / "config.json");
        out << echo.dump(2) << "\n";
      }
      TrainResult run = train(cfg, data);
      write_trajectory_csv((fs::path(tr_out) / "trajectory.csv").string(), run.trajectory,
                           cfg.eval_ks);
      save_model(run.model, (fs::path(tr_out) / "model.json").string());
      EvalResult result = evaluate(run.model, data, cfg.eval_ks);
      write_metrics_csv((fs::path(tr_out) / "metrics.csv").string(), result.metrics);
      std::printf("train loss %.5f -> %.5f\n", run.initial_loss, run.final_loss);
      print_metrics(result.metrics);
      std::printf("artifacts in %s: config.json, trajectory.csv, model.json, metrics.csv\n",
                  tr_out.c_str());
    } else if (ev->parsed()) {
      InteractionSet data = load_interactions(ev_data);
      TwoTowerModel<double> model = load_model<double>(ev_ckpt);
      EvalResult result = evaluate(model, data, ev_ks);
      if (!ev_out.empty()) write_metrics_csv(ev_out, result.metrics);
      print_metrics(result.metrics);
    } else if (bm->parsed()) {
      std::vector<BenchmarkReport> reports;
      for (const std::string& kind : bm_kinds) {
        reports.push_back(benchmark_scaling(kind, bm_d, bm_lengths, bm_trials, bm_seed));
        const BenchmarkReport& r = reports.back();
        std::printf("%-15s slope %.3f\n", r.kind.c_str(), r.slope);
        for (const BenchmarkPoint& p : r.points) {
          std::printf("  L=%5d  %.6f s\n", p.length, p.seconds);
        }
      }
      if (!bm_out.empty()) {
        fs::create_directories(bm_out);
        std::ofstream csv(fs::path(bm_out) / "benchmark.csv");
        csv << "# format_version 1\nkind,d,length,seconds\n";
        char buf[64];
        json slopes;
        slopes["format_version"] = 1;
        for (const BenchmarkReport& r : reports) {
          for (const BenchmarkPoint& p : r.points) {
            std::snprintf(buf, sizeof(buf), "%.17g", p.seconds);
            csv << r.kind << "," << r.d << "," << p.length << "," << buf << "\n";
          }
          slopes["slopes"][r.kind] = r.slope;
        }
        std::ofstream js(fs::path(bm_out) / "slopes.json");
        js << slopes.dump(2) << "\n";
      }
    } else if (rp->parsed()) {
      ReproduceOptions opts;
      opts.experiment = rp_experiment;
      opts.seeds = parse_seeds(rp_seeds);
      opts.out_dir = rp_out;
      opts.preset = rp_preset;
      opts.benchmark_trials = rp_trials;
      opts.verbose = rp_verbose;
      reproduce(opts);
      std::printf("artifacts in %s\n", rp_out.c_str());
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
