#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "ftmamba/ssm.hpp"
#include "support/gradcheck.hpp"

using namespace ftmamba;
using ftmamba::testing::gradcheck;

namespace {

template <typename T>
Tensor<T> random_tensor(std::vector<int> shape, std::mt19937& rng, bool rg = false,
                        double lo = -1.0, double hi = 1.0) {
  Tensor<T> t = Tensor<T>::zeros(std::move(shape), rg);
  t.fill_uniform(static_cast<T>(lo), static_cast<T>(hi), rng);
  return t;
}

}  // namespace

TEST_CASE("discretize limits: frozen state at dt->0 and exact half-life") {
  Tensor<double> A = Tensor<double>::from({1, 1}, {-1.0});
  Tensor<double> B = Tensor<double>::from({1}, {2.0});

  Tensor<double> tiny = Tensor<double>::from({1}, {1e-12});
  auto [abar0, bbar0] = discretize(A, B, tiny);
  CHECK(abar0.value() == doctest::Approx(1.0));
  CHECK(bbar0.value() == doctest::Approx(0.0));

  Tensor<double> ln2 = Tensor<double>::from({1}, {std::log(2.0)});
  auto [abar1, bbar1] = discretize(A, B, ln2);
  CHECK(abar1.value() == doctest::Approx(0.5));
  CHECK(bbar1.value() == doctest::Approx(2.0 * std::log(2.0)));

  Tensor<double> bad = Tensor<double>::from({1}, {-0.5});
  CHECK_THROWS_AS(discretize(A, B, bad), std::invalid_argument);
}

TEST_CASE("discretize matches scalar-by-scalar recomputation") {
  std::mt19937 rng(21);
  const int c = 3, N = 4;
  Tensor<double> A = random_tensor<double>({c, N}, rng, false, -2.0, -0.1);
  Tensor<double> B = random_tensor<double>({N}, rng);
  Tensor<double> dt = random_tensor<double>({c}, rng, false, 0.01, 0.5);
  auto [abar, bbar] = discretize(A, B, dt);
  for (int ch = 0; ch < c; ++ch) {
    for (int n = 0; n < N; ++n) {
      CHECK(abar.at(ch, n) == std::exp((*dt.data)[ch] * A.at(ch, n)));
      CHECK(bbar.at(ch, n) == (*dt.data)[ch] * (*B.data)[n]);
    }
  }
}

TEST_CASE("explicit-coefficient scan: cumulative sum and memoryless cases") {
  const int L = 3, c = 1, N = 2;
  Tensor<double> abar = Tensor<double>::zeros({L, c, N});
  abar.fill(1.0);
  Tensor<double> bbar = Tensor<double>::zeros({L, c, N});
  bbar.fill(1.0);
  Tensor<double> C = Tensor<double>::zeros({L, N});
  for (int t = 0; t < L; ++t) C.at(t, 0) = 1.0;  // read first state component
  Tensor<double> D = Tensor<double>::zeros({c});
  Tensor<double> x = Tensor<double>::from({L, c}, {1, 1, 1});
  Tensor<double> y = scan_explicit(abar, bbar, C, D, x);
  CHECK(y.at(0, 0) == doctest::Approx(1.0));
  CHECK(y.at(1, 0) == doctest::Approx(2.0));
  CHECK(y.at(2, 0) == doctest::Approx(3.0));

  // abar == 0: every output depends on its own timestep only
  std::mt19937 rng(22);
  Tensor<double> zero_a = Tensor<double>::zeros({L, c, N});
  Tensor<double> rb = random_tensor<double>({L, c, N}, rng);
  Tensor<double> rc = random_tensor<double>({L, N}, rng);
  Tensor<double> rd = random_tensor<double>({c}, rng);
  Tensor<double> x1 = random_tensor<double>({L, c}, rng);
  Tensor<double> x2 = x1;
  x2.data = std::make_shared<std::vector<double>>(*x1.data);
  x2.at(0, 0) += 0.5;
  Tensor<double> y1 = scan_explicit(zero_a, rb, rc, rd, x1);
  Tensor<double> y2 = scan_explicit(zero_a, rb, rc, rd, x2);
  CHECK(y1.at(0, 0) != y2.at(0, 0));
  for (int t = 1; t < L; ++t) CHECK(y1.at(t, 0) == y2.at(t, 0));
}

TEST_CASE("sequential scan equals a per-timestep discretize oracle") {
  std::mt19937 rng(23);
  const int L = 7, c = 2, N = 4;
  SsmParams<double> p = SsmParams<double>::init(c, N, rng);
  // shake the deterministic A_log/D defaults so the oracle sees generic values
  p.A_log.fill_uniform(-1.0, 0.5, rng);
  p.D.fill_uniform(-0.5, 1.5, rng);
  Tensor<double> x = random_tensor<double>({L, c}, rng);

  Tensor<double> y = scan_sequential(p, x);

  SsmProjected<double> in = ssm_project<double>(p, x, nullptr);
  std::vector<double> h(c * N, 0.0);
  for (int t = 0; t < L; ++t) {
    Tensor<double> B_t = Tensor<double>::zeros({N});
    Tensor<double> dt_t = Tensor<double>::zeros({c});
    for (int n = 0; n < N; ++n) (*B_t.data)[n] = in.B.at(t, n);
    for (int ch = 0; ch < c; ++ch) (*dt_t.data)[ch] = in.dt.at(t, ch);
    auto [abar, bbar] = discretize(in.A, B_t, dt_t);
    for (int ch = 0; ch < c; ++ch) {
      double acc = 0;
      for (int n = 0; n < N; ++n) {
        h[ch * N + n] = abar.at(ch, n) * h[ch * N + n] + bbar.at(ch, n) * x.at(t, ch);
        acc += in.C.at(t, n) * h[ch * N + n];
      }
      acc += (*p.D.data)[ch] * x.at(t, ch);
      CHECK(std::abs(y.at(t, ch) - acc) < 1e-10);
    }
  }
}

TEST_CASE("scan combine is associative") {
  std::mt19937 rng(24);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    ScanPair<double> p{d(rng), d(rng)}, q{d(rng), d(rng)}, r{d(rng), d(rng)};
    ScanPair<double> lhs = scan_combine(scan_combine(p, q), r);
    ScanPair<double> rhs = scan_combine(p, scan_combine(q, r));
    CHECK(std::abs(lhs.a - rhs.a) < 1e-12);
    CHECK(std::abs(lhs.b - rhs.b) < 1e-12);
  }
}

TEST_CASE("parallel scan equals sequential scan") {
  std::mt19937 rng(25);

  {  // L = 1
    SsmParams<double> p = SsmParams<double>::init(3, 4, rng);
    Tensor<double> x = random_tensor<double>({1, 3}, rng);
    Tensor<double> ys = scan_sequential(p, x);
    Tensor<double> yp = scan_parallel(p, x);
    for (std::size_t i = 0; i < ys.numel(); ++i) {
      CHECK(std::abs((*ys.data)[i] - (*yp.data)[i]) < 1e-12);
    }
  }

  {  // 64-bit, generic lengths incl. non-powers of two
    for (int L : {2, 5, 17, 64}) {
      SsmParams<double> p = SsmParams<double>::init(4, 8, rng);
      Tensor<double> x = random_tensor<double>({L, 4}, rng);
      Tensor<double> ys = scan_sequential(p, x);
      Tensor<double> yp = scan_parallel(p, x);
      double worst = 0;
      for (std::size_t i = 0; i < ys.numel(); ++i) {
        worst = std::max(worst, std::abs((*ys.data)[i] - (*yp.data)[i]));
      }
      CHECK(worst < 1e-10);
    }
  }

  {  // 32-bit, L = 64
    SsmParams<float> p = SsmParams<float>::init(4, 8, rng);
    Tensor<float> x = random_tensor<float>({64, 4}, rng);
    Tensor<float> ys = scan_sequential(p, x);
    Tensor<float> yp = scan_parallel(p, x);
    float worst = 0;
    for (std::size_t i = 0; i < ys.numel(); ++i) {
      worst = std::max(worst, std::abs((*ys.data)[i] - (*yp.data)[i]));
    }
    CHECK(worst < 1e-6f);
  }
}

TEST_CASE("scan output is causal in its input") {
  std::mt19937 rng(26);
  const int L = 6, c = 3;
  SsmParams<double> p = SsmParams<double>::init(c, 4, rng);
  Tensor<double> x = random_tensor<double>({L, c}, rng);
  Tensor<double> base = scan_sequential(p, x);
  for (int t = 0; t < L; ++t) {
    Tensor<double> xp = x;
    xp.data = std::make_shared<std::vector<double>>(*x.data);
    xp.at(t, 1) += 0.25;
    Tensor<double> yp = scan_sequential(p, xp);
    for (int s = 0; s < t; ++s) {
      for (int ch = 0; ch < c; ++ch) CHECK(yp.at(s, ch) == base.at(s, ch));
    }
    bool changed = false;
    for (int s = t; s < L; ++s) {
      for (int ch = 0; ch < c; ++ch) changed |= yp.at(s, ch) != base.at(s, ch);
    }
    CHECK(changed);
  }
}

TEST_CASE("state decays: discretized abar lies strictly inside (0,1)") {
  std::mt19937 rng(27);
  SsmParams<double> p = SsmParams<double>::init(5, 16, rng);
  Tensor<double> x = random_tensor<double>({8, 5}, rng, false, -2.0, 2.0);
  SsmProjected<double> in = ssm_project<double>(p, x, nullptr);
  for (int ch = 0; ch < 5; ++ch) {
    for (int n = 0; n < 16; ++n) CHECK(in.A.at(ch, n) < 0.0);
  }
  for (int t = 0; t < 8; ++t) {
    Tensor<double> B_t = Tensor<double>::zeros({16});
    Tensor<double> dt_t = Tensor<double>::zeros({5});
    for (int n = 0; n < 16; ++n) (*B_t.data)[n] = in.B.at(t, n);
    for (int ch = 0; ch < 5; ++ch) (*dt_t.data)[ch] = in.dt.at(t, ch);
    auto [abar, bbar] = discretize(in.A, B_t, dt_t);
    for (int ch = 0; ch < 5; ++ch) {
      CHECK((*dt_t.data)[ch] > 0.0);
      for (int n = 0; n < 16; ++n) {
        CHECK(abar.at(ch, n) > 0.0);
        CHECK(abar.at(ch, n) < 1.0);
      }
    }
  }
}

TEST_CASE("selectivity: discretized transition varies with the input") {
  std::mt19937 rng(28);
  SsmParams<double> p = SsmParams<double>::init(3, 4, rng);
  Tensor<double> x = Tensor<double>::from({2, 3}, {0.9, -0.3, 0.4, -1.2, 0.8, 0.1});
  SsmProjected<double> in = ssm_project<double>(p, x, nullptr);
  // dt differs across timesteps, so abar does too
  bool varies = false;
  for (int ch = 0; ch < 3; ++ch) {
    if (std::abs(in.dt.at(0, ch) - in.dt.at(1, ch)) > 1e-9) varies = true;
  }
  CHECK(varies);
}

TEST_CASE("sequential scan gradients match finite differences") {
  std::mt19937 rng(29);
  const int L = 5, c = 3, N = 3;
  SsmParams<double> p = SsmParams<double>::init(c, N, rng);
  Tensor<double> x = random_tensor<double>({L, c}, rng, true);
  Tensor<double> w = random_tensor<double>({L, c}, rng);
  auto build = [&](Tape<double>* tape) {
    Tensor<double> y = scan_sequential(p, x, tape);
    return sum_all(mul(y, w, tape), tape);
  };
  std::vector<Tensor<double>> params = p.parameters();
  params.push_back(x);
  auto rep = gradcheck(build, params);
  INFO(rep.worst);
  CHECK(rep.checked > 40);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("ssm parameter count follows the field inventory") {
  std::mt19937 rng(30);
  const int c = 20, N = 16;
  SsmParams<double> p = SsmParams<double>::init(c, N, rng);
  const int r = (c + 15) / 16;
  CHECK(p.dt_rank == r);
  const std::size_t expect = static_cast<std::size_t>(c) * (r + 2 * N)  // x_proj
                             + static_cast<std::size_t>(r) * c + c      // dt_proj
                             + static_cast<std::size_t>(c) * N          // A_log
                             + c;                                       // D
  CHECK(p.param_count() == expect);
}
