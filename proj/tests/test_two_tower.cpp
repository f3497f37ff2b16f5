#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <random>
#include <set>

#include "ftmamba/adam.hpp"
#include "ftmamba/two_tower.hpp"
#include "support/gradcheck.hpp"

using namespace ftmamba;
using ftmamba::testing::gradcheck;

namespace {

FeatureSchema user_schema() {
  FeatureSchema s;
  s.features = {{FeatureKind::numeric, 0, "a"},
                {FeatureKind::numeric, 0, "b"},
                {FeatureKind::categorical, 3, "c"}};
  return s;
}

FeatureSchema content_schema() {
  FeatureSchema s;
  s.features = {{FeatureKind::categorical, 5, "item"}};
  return s;
}

ModelConfig tiny_config(EmbedderKind kind) {
  ModelConfig c;
  c.token_dim = 8;
  c.kind = kind;
  c.mamba_layers = 1;
  c.expand = 2;
  c.conv_width = 2;
  c.state_size = 2;
  c.transformer_layers = 1;
  c.heads = 2;
  c.ffn_hidden = 16;
  c.head_hidden = 6;
  c.head_out = 5;
  return c;
}

}  // namespace

TEST_CASE("zeroed content head gives score 0 for every user") {
  auto m = TwoTowerModel<double>::init(user_schema(), content_schema(),
                                       tiny_config(EmbedderKind::mamba), 7);
  m.content.head.w2.fill(0.0);
  m.content.head.b2.fill(0.0);
  std::mt19937 rng(1);
  std::uniform_real_distribution<double> d(-2.0, 2.0);
  for (int trial = 0; trial < 5; ++trial) {
    FeatureRow u = {d(rng), d(rng), static_cast<double>(trial % 3)};
    CHECK(m.score(u, {static_cast<double>(trial % 5)}).value() == 0.0);
  }
}

TEST_CASE("score is linear in either head's output scale") {
  auto m = TwoTowerModel<double>::init(user_schema(), content_schema(),
                                       tiny_config(EmbedderKind::transformer), 8);
  FeatureRow u = {0.3, -1.1, 2.0};
  FeatureRow c = {4.0};
  const double base = m.score(u, c).value();
  const double alpha = 3.5;  // positive, so ReLU(alpha z) = alpha ReLU(z)
  for (double& v : *m.user.head.w2.data) v *= alpha;
  for (double& v : *m.user.head.b2.data) v *= alpha;
  CHECK(m.score(u, c).value() == doctest::Approx(alpha * base).epsilon(1e-12));
}

TEST_CASE("score equals the dot product of the two tower representations") {
  auto m = TwoTowerModel<double>::init(user_schema(), content_schema(),
                                       tiny_config(EmbedderKind::mamba), 9);
  FeatureRow u = {1.2, 0.4, 1.0};
  FeatureRow c = {2.0};
  Tensor<double> ru = m.user.represent(u);
  Tensor<double> rc = m.content.represent(c);
  double dot = 0;
  for (int j = 0; j < 5; ++j) dot += ru.at(0, j) * rc.at(0, j);
  CHECK(m.score(u, c).value() == doctest::Approx(dot).epsilon(1e-14));
  for (int j = 0; j < 5; ++j) CHECK(ru.at(0, j) >= 0.0);  // ReLU output head
}

TEST_CASE("rank_items tie rule, dominance, and sort-oracle agreement") {
  auto m = TwoTowerModel<double>::init(user_schema(), content_schema(),
                                       tiny_config(EmbedderKind::mamba), 10);
  std::vector<FeatureRow> items;
  for (int i = 0; i < 5; ++i) items.push_back({static_cast<double>(i)});
  FeatureRow u = {0.5, 0.5, 0.0};

  {  // all scores equal: zero the user head -> every score 0
    auto mz = m;
    mz.user.head.w2 = Tensor<double>::zeros({6, 5}, true);
    mz.user.head.b2 = Tensor<double>::zeros({5}, true);
    std::vector<int> top = rank_items(mz, u, items, 3);
    CHECK(top == std::vector<int>{0, 1, 2});
  }

  {  // strictly dominant item comes first
    std::vector<double> scores;
    for (const FeatureRow& it : items) scores.push_back(m.score(u, it).value());
    const int best = static_cast<int>(std::max_element(scores.begin(), scores.end()) -
                                      scores.begin());
    CHECK(rank_items(m, u, items, 1)[0] == best);

    // full-k ranking matches an explicit sort oracle
    std::vector<int> idx = {0, 1, 2, 3, 4};
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
      if (scores[a] != scores[b]) return scores[a] > scores[b];
      return a < b;
    });
    CHECK(rank_items(m, u, items, 5) == idx);
  }

  CHECK_THROWS_AS(rank_items(m, u, {}, 1), std::invalid_argument);
}

TEST_CASE("parameter counts by component, including the 14432-parameter head") {
  ModelConfig cfg;  // defaults: d=192, mamba 4 layers, head 64/32
  FeatureSchema us;
  for (int i = 0; i < 20; ++i) us.features.push_back({FeatureKind::numeric, 0, ""});
  FeatureSchema cs;
  cs.features = {{FeatureKind::categorical, 50, "song"}};
  auto m = TwoTowerModel<double>::init(us, cs, cfg, 11);

  ParamBreakdown ub = m.user_param_count();
  CHECK(ub.head == 14432);
  CHECK(ub.tokenizer == 8064);
  CHECK(ub.embedder == 1062912);
  CHECK(ub.total() == ub.tokenizer + ub.embedder + ub.head);

  cfg.kind = EmbedderKind::transformer;
  auto mt = TwoTowerModel<double>::init(us, cs, cfg, 11);
  ParamBreakdown tb = mt.user_param_count();
  CHECK(tb.head == 14432);
  CHECK(tb.embedder == 2663808);
  const double ratio = static_cast<double>(ub.embedder) / tb.embedder;
  CHECK(ratio > 0.30);
  CHECK(ratio < 0.50);

  cfg.kind = EmbedderKind::mamba;
  cfg.mamba_layers = 0;
  auto m0 = TwoTowerModel<double>::init(us, cs, cfg, 11);
  CHECK(m0.user_param_count().embedder == 0);
}

TEST_CASE("every parameter tensor is owned exactly once") {
  auto m = TwoTowerModel<double>::init(user_schema(), content_schema(),
                                       tiny_config(EmbedderKind::transformer), 12);
  std::set<const void*> seen;
  for (const Tensor<double>& t : m.parameters()) {
    CHECK(t.requires_grad);
    CHECK(seen.insert(t.data.get()).second);
  }
}

TEST_CASE("identical seed and config reproduce scores bitwise") {
  for (EmbedderKind kind : {EmbedderKind::mamba, EmbedderKind::transformer}) {
    auto a = TwoTowerModel<double>::init(user_schema(), content_schema(), tiny_config(kind), 99);
    auto b = TwoTowerModel<double>::init(user_schema(), content_schema(), tiny_config(kind), 99);
    auto c = TwoTowerModel<double>::init(user_schema(), content_schema(), tiny_config(kind), 100);
    FeatureRow u = {0.1, -0.7, 2.0};
    FeatureRow it = {3.0};
    CHECK(a.score(u, it).value() == b.score(u, it).value());
    CHECK(a.score(u, it).value() != c.score(u, it).value());
  }
}

TEST_CASE("one training step moves parameters in both towers") {
  for (EmbedderKind kind : {EmbedderKind::mamba, EmbedderKind::transformer}) {
    auto m = TwoTowerModel<double>::init(user_schema(), content_schema(), tiny_config(kind), 13);
    std::vector<double> user_before = *m.user.parameters()[0].data;
    std::vector<double> content_before = *m.content.parameters()[0].data;

    Adam<double> opt(m.parameters(), 1e-2);
    Tape<double> tape;
    Tensor<double> s = m.score({0.5, 0.5, 1.0}, {2.0}, &tape);
    Tensor<double> target = Tensor<double>::from({1, 1}, {1.0});
    Tensor<double> loss = mse_loss(s, target, &tape);
    opt.zero_grad();
    tape.backward(loss);
    opt.step();

    auto changed = [](const std::vector<double>& before, const std::vector<double>& after) {
      for (std::size_t i = 0; i < before.size(); ++i) {
        if (before[i] != after[i]) return true;
      }
      return false;
    };
    CHECK(changed(user_before, *m.user.parameters()[0].data));
    CHECK(changed(content_before, *m.content.parameters()[0].data));
  }
}

TEST_CASE("full model gradients on a 2-sample MSE batch match finite differences") {
  for (EmbedderKind kind : {EmbedderKind::mamba, EmbedderKind::transformer}) {
    auto m = TwoTowerModel<double>::init(user_schema(), content_schema(), tiny_config(kind), 14);
    const std::vector<FeatureRow> users = {{0.5, -0.3, 1.0}, {-1.0, 0.8, 2.0}};
    const std::vector<FeatureRow> items = {{2.0}, {4.0}};
    const std::vector<double> targets = {1.0, -1.0};
    auto build = [&](Tape<double>* tape) {
      Tensor<double> acc;
      for (int i = 0; i < 2; ++i) {
        Tensor<double> s = m.score(users[i], items[i], tape);
        Tensor<double> t = Tensor<double>::from({1, 1}, {targets[i]});
        Tensor<double> sq = mse_loss(s, t, tape);
        acc = i == 0 ? sq : add(acc, sq, tape);
      }
      return mul_scalar(acc, 0.25, tape);  // 0.5 * mean over the 2 samples
    };
    auto rep = gradcheck(build, m.parameters());
    INFO(embedder_kind_name(kind), ": checked ", rep.checked, ", worst ", rep.worst);
    CHECK(rep.max_rel_err < 1e-4);
  }
}

TEST_CASE("checkpoint round-trip reproduces scores exactly") {
  const std::string path = "two_tower_roundtrip.json";
  for (EmbedderKind kind : {EmbedderKind::mamba, EmbedderKind::transformer}) {
    auto m = TwoTowerModel<float>::init(user_schema(), content_schema(), tiny_config(kind), 15);
    // move off the init values so the load path is actually exercised
    for (Tensor<float>& p : m.parameters()) {
      for (float& v : *p.data) v *= 1.0625f;
    }
    save_model(m, path);
    auto loaded = load_model<float>(path);
    CHECK(loaded.config.kind == kind);
    for (int trial = 0; trial < 3; ++trial) {
      FeatureRow u = {0.25 * trial, -0.5, static_cast<double>(trial % 3)};
      FeatureRow it = {static_cast<double>(trial % 5)};
      CHECK(m.score(u, it).value() == loaded.score(u, it).value());
    }
  }
  std::remove(path.c_str());
}
