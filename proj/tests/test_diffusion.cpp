#include "doctest_torch.hpp"

#include <cmath>
#include <random>

#include <limits>

#include "test_support.hpp"
#include "ugdiml/diffusion.hpp"
#include "ugdiml/errors.hpp"

using namespace ugdiml;
using ugdiml::testing::max_abs_diff;

namespace {

// Independent references, written from the formulas without touching the
// library's internals.
long double alpha_bar_oracle(int t, int steps, long double b0, long double b1) {
  long double prod = 1.0L;
  for (int i = 1; i <= t; ++i) {
    const long double beta =
        steps == 1 ? b0 : b0 + (b1 - b0) * static_cast<long double>(i - 1) / (steps - 1);
    prod *= 1.0L - beta;
  }
  return prod;
}

torch::Tensor rand64(std::initializer_list<int64_t> shape, uint64_t seed) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  return torch::randn(shape, gen, torch::kDouble);
}

}  // namespace

TEST_CASE("linear schedule starts at beta_start") {
  const auto s = NoiseSchedule::linear(1000, 1e-4, 0.02);
  CHECK(s.steps() == 1000);
  CHECK(s.beta(1) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(s.alpha(1) == doctest::Approx(0.9999).epsilon(1e-12));
  CHECK(s.alpha_bar(1) == doctest::Approx(0.9999).epsilon(1e-12));
  CHECK(s.beta(1000) == doctest::Approx(0.02).epsilon(1e-12));
}

TEST_CASE("single-step schedule") {
  const auto s = NoiseSchedule::linear(1, 0.5, 0.5);
  REQUIRE(s.alpha_bars().size() == 1);
  CHECK(s.alpha_bars()[0] == 0.5);
}

TEST_CASE("alpha_bar agrees with an extended-precision product") {
  const auto s = NoiseSchedule::linear(1000, 1e-4, 0.02);
  for (int t : {1, 2, 10, 250, 500, 999, 1000}) {
    const auto oracle = alpha_bar_oracle(t, 1000, 1e-4L, 0.02L);
    CHECK(std::abs(static_cast<long double>(s.alpha_bar(t)) - oracle) / oracle < 1e-12L);
  }
}

TEST_CASE("schedule invariants hold for random valid ranges") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> steps(1, 2000);
  std::uniform_real_distribution<double> unit(1e-6, 0.5);
  for (int trial = 0; trial < 50; ++trial) {
    double a = unit(rng), b = unit(rng);
    if (a > b) std::swap(a, b);
    const auto s = NoiseSchedule::linear(steps(rng), a, b);
    CHECK(s.alpha_bar(1) == doctest::Approx(1.0 - s.beta(1)).epsilon(1e-15));
    for (int t = 1; t <= s.steps(); ++t) {
      REQUIRE(s.beta(t) > 0.0);
      REQUIRE(s.beta(t) < 1.0);
      REQUIRE(s.alpha(t) == 1.0 - s.beta(t));
      if (t > 1) {
        // strict while representable; long products of large betas underflow
        if (s.alpha_bar(t - 1) > std::numeric_limits<double>::min())
          REQUIRE(s.alpha_bar(t) < s.alpha_bar(t - 1));
        else
          REQUIRE(s.alpha_bar(t) <= s.alpha_bar(t - 1));
        REQUIRE(s.alpha_bar(t) ==
                doctest::Approx(s.alpha_bar(t - 1) * s.alpha(t)).epsilon(1e-14));
      }
    }
  }
}

TEST_CASE("alpha_bar at zero is one") {
  CHECK(NoiseSchedule::linear(10, 0.1, 0.2).alpha_bar(0) == 1.0);
}

TEST_CASE("schedule rejects invalid ranges") {
  CHECK_THROWS_AS(NoiseSchedule::linear(0, 1e-4, 0.02), RangeError);
  CHECK_THROWS_AS(NoiseSchedule::linear(10, 0.0, 0.02), RangeError);
  CHECK_THROWS_AS(NoiseSchedule::linear(10, 0.03, 0.02), RangeError);
  CHECK_THROWS_AS(NoiseSchedule::linear(10, 1e-4, 1.0), RangeError);
  CHECK_THROWS_AS(NoiseSchedule::from_betas({0.1, 1.5}), RangeError);
  const auto s = NoiseSchedule::linear(10, 0.1, 0.2);
  CHECK_THROWS_AS(s.beta(11), RangeError);
  CHECK_THROWS_AS(s.beta(0), RangeError);
}

TEST_CASE("sigma modes") {
  const auto beta = NoiseSchedule::linear(100, 1e-3, 0.05, SigmaMode::Beta);
  const auto post = NoiseSchedule::linear(100, 1e-3, 0.05, SigmaMode::Posterior);
  for (int t : {1, 50, 100}) {
    CHECK(beta.sigma(t) == beta.beta(t));
    const double expected =
        (1.0 - post.alpha(t)) / std::sqrt(1.0 - post.alpha_bar(t)) * post.beta(t);
    CHECK(post.sigma(t) == doctest::Approx(expected).epsilon(1e-14));
  }
}

TEST_CASE("q_sample with zero noise scales x0") {
  const auto s = NoiseSchedule::linear(1000, 1e-4, 0.02);
  const auto x0 = rand64({2, 4, 3, 3}, 1);
  const auto out = q_sample(x0, 300, torch::zeros_like(x0), s);
  CHECK(out.timestep == 300);
  CHECK(max_abs_diff(out.values, std::sqrt(s.alpha_bar(300)) * x0) == 0.0);
}

TEST_CASE("q_sample identity limit") {
  const auto s = NoiseSchedule::from_betas({1e-300});
  const auto x0 = rand64({1, 2, 2, 2}, 2);
  const auto out = q_sample(x0, 1, rand64({1, 2, 2, 2}, 3), s);
  CHECK(max_abs_diff(out.values, x0) < 1e-12);
}

TEST_CASE("q_sample on ones at t=500 matches the schedule oracle") {
  const auto s = NoiseSchedule::linear(1000, 1e-4, 0.02);
  const auto x0 = torch::ones({1, 3, 4, 4}, torch::kDouble);
  const auto out = q_sample(x0, 500, torch::ones_like(x0), s);
  const auto ab = alpha_bar_oracle(500, 1000, 1e-4L, 0.02L);
  const double expected = static_cast<double>(std::sqrt(ab) + std::sqrt(1.0L - ab));
  CHECK(std::abs(out.values.max().item<double>() - expected) < 1e-12);
  CHECK(std::abs(out.values.min().item<double>() - expected) < 1e-12);
}

TEST_CASE("q_sample inverts exactly given the same noise") {
  const auto s = NoiseSchedule::linear(1000, 1e-4, 0.02);
  const auto x0 = rand64({2, 8, 4, 4}, 4);
  const auto eps = rand64({2, 8, 4, 4}, 5);
  for (int t = 1; t <= 1000; t += 37) {
    const auto xt = q_sample(x0, t, eps, s).values;
    const auto back =
        (xt - std::sqrt(1.0 - s.alpha_bar(t)) * eps) / std::sqrt(s.alpha_bar(t));
    REQUIRE(max_abs_diff(back, x0) < 1e-5);
  }
}

TEST_CASE("q_sample errors") {
  const auto s = NoiseSchedule::linear(10, 0.1, 0.2);
  const auto x0 = torch::zeros({1, 2, 2, 2});
  CHECK_THROWS_AS(q_sample(x0, 1, torch::zeros({1, 2, 2, 3}), s), ShapeError);
  CHECK_THROWS_AS(q_sample(x0, 0, torch::zeros_like(x0), s), RangeError);
  CHECK_THROWS_AS(q_sample(x0, 11, torch::zeros_like(x0), s), RangeError);
}

TEST_CASE("batched q_sample applies per-sample timesteps") {
  const auto s = NoiseSchedule::linear(1000, 1e-4, 0.02);
  const auto x0 = rand64({3, 4, 2, 2}, 6);
  const auto eps = rand64({3, 4, 2, 2}, 7);
  const std::vector<int> ts{1, 500, 1000};
  const auto out = q_sample(x0, ts, eps, s);
  for (int i = 0; i < 3; ++i) {
    const auto single = q_sample(x0[i], ts[i], eps[i], s).values;
    CHECK(max_abs_diff(out[i], single) < 1e-12);
  }
  CHECK_THROWS_AS(q_sample(x0, std::vector<int>{1, 2}, eps, s), ShapeError);
}

TEST_CASE("ddpm step special cases") {
  const auto s = NoiseSchedule::linear(100, 1e-3, 0.05);
  const auto x = rand64({1, 4, 3, 3}, 8);
  const NoisyState state{x, 40};
  const auto out = ddpm_step(state, torch::zeros_like(x), s, torch::zeros_like(x));
  CHECK(out.timestep == 39);
  CHECK(max_abs_diff(out.values, x / std::sqrt(s.alpha(40))) < 1e-14);

  const auto flat = NoiseSchedule::from_betas({1e-300, 1e-300});
  const auto z = rand64({1, 4, 3, 3}, 9);
  const auto eps = rand64({1, 4, 3, 3}, 10);
  const auto out2 = ddpm_step(NoisyState{x, 2}, eps, flat, z);
  CHECK(max_abs_diff(out2.values, x + flat.sigma(2) * z) < 1e-12);

  CHECK_THROWS_AS(ddpm_step(NoisyState{x, 0}, eps, s, z), RangeError);
}

TEST_CASE("ddpm step matches a line-by-line oracle") {
  const auto s = NoiseSchedule::linear(1000, 1e-4, 0.02, SigmaMode::Posterior);
  const auto x = rand64({2, 3, 4, 4}, 11);
  const auto eps = rand64({2, 3, 4, 4}, 12);
  const auto z = rand64({2, 3, 4, 4}, 13);
  for (int t : {1, 17, 640, 1000}) {
    const auto out = ddpm_step(NoisyState{x, t}, eps, s, z).values;
    auto xa = x.accessor<double, 4>();
    auto ea = eps.accessor<double, 4>();
    auto za = z.accessor<double, 4>();
    auto oa = out.accessor<double, 4>();
    const long double ab = alpha_bar_oracle(t, 1000, 1e-4L, 0.02L);
    const long double beta = 1e-4L + (0.02L - 1e-4L) * (t - 1) / 999.0L;
    const long double alpha = 1.0L - beta;
    const long double sigma = (1.0L - alpha) / std::sqrt(1.0L - ab) * beta;
    double worst = 0.0;
    for (int b = 0; b < 2; ++b)
      for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 4; ++i)
          for (int j = 0; j < 4; ++j) {
            const long double ref =
                (xa[b][c][i][j] - (1.0L - alpha) / std::sqrt(1.0L - ab) * ea[b][c][i][j]) /
                    std::sqrt(alpha) +
                sigma * za[b][c][i][j];
            worst = std::max(worst, static_cast<double>(std::abs(ref - oa[b][c][i][j])));
          }
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("ddim final step collapses to the estimate") {
  const auto s = NoiseSchedule::linear(1000, 1e-4, 0.02);
  const auto x = rand64({1, 4, 3, 3}, 14);
  const auto x0 = rand64({1, 4, 3, 3}, 15);
  const auto out = ddim_step(NoisyState{x, 700}, x0, 700, 0, s);
  CHECK(out.timestep == 0);
  CHECK(max_abs_diff(out.values, x0) < 1e-15);
}

TEST_CASE("ddim noise-free substitution identity") {
  const auto s = NoiseSchedule::linear(1000, 1e-4, 0.02);
  const auto x0 = rand64({1, 4, 3, 3}, 16);
  const auto x = std::sqrt(s.alpha_bar(800)) * x0;
  const auto out = ddim_step(NoisyState{x, 800}, x0, 800, 300, s);
  CHECK(max_abs_diff(out.values, std::sqrt(s.alpha_bar(300)) * x0) < 1e-12);
}

TEST_CASE("ddim step matches a line-by-line oracle") {
  const auto s = NoiseSchedule::linear(1000, 1e-4, 0.02);
  const auto x = rand64({2, 3, 4, 4}, 17);
  const auto x0 = rand64({2, 3, 4, 4}, 18);
  for (auto [ts, tp] : {std::pair{1000, 750}, std::pair{500, 499}, std::pair{2, 1}}) {
    const auto out = ddim_step(NoisyState{x, ts}, x0, ts, tp, s).values;
    const long double ab_s = alpha_bar_oracle(ts, 1000, 1e-4L, 0.02L);
    const long double ab_p = alpha_bar_oracle(tp, 1000, 1e-4L, 0.02L);
    auto xa = x.accessor<double, 4>();
    auto x0a = x0.accessor<double, 4>();
    auto oa = out.accessor<double, 4>();
    double worst = 0.0;
    for (int b = 0; b < 2; ++b)
      for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 4; ++i)
          for (int j = 0; j < 4; ++j) {
            const long double ref =
                std::sqrt(ab_p) * x0a[b][c][i][j] +
                std::sqrt(1.0L - ab_p) / std::sqrt(1.0L - ab_s) *
                    (xa[b][c][i][j] - std::sqrt(ab_s) * x0a[b][c][i][j]);
            worst = std::max(worst, static_cast<double>(std::abs(ref - oa[b][c][i][j])));
          }
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("ddim is bit-deterministic") {
  const auto s = NoiseSchedule::linear(1000, 1e-4, 0.02);
  const auto x = rand64({2, 4, 5, 5}, 19);
  const auto x0 = rand64({2, 4, 5, 5}, 20);
  const auto a = ddim_step(NoisyState{x, 900}, x0, 900, 450, s).values;
  const auto b = ddim_step(NoisyState{x, 900}, x0, 900, 450, s).values;
  CHECK(torch::equal(a, b));
}

TEST_CASE("chained ddim with a perfect oracle lands on x0") {
  const auto s = NoiseSchedule::linear(1000, 1e-4, 0.02);
  const auto x0 = rand64({1, 8, 4, 4}, 21);
  for (int steps : {1, 2, 3, 5, 10, 50}) {
    const auto taus = make_subsequence(1000, steps).taus;
    NoisyState state{rand64({1, 8, 4, 4}, 22), taus.back()};
    for (int i = steps - 1; i >= 0; --i) {
      const int prev = i > 0 ? taus[i - 1] : 0;
      state = ddim_step(state, x0, taus[i], prev, s);
    }
    CHECK(state.timestep == 0);
    CHECK(max_abs_diff(state.values, x0) < 1e-5);
  }
}

TEST_CASE("ddim ordering errors") {
  const auto s = NoiseSchedule::linear(100, 1e-3, 0.05);
  const auto x = torch::zeros({1, 2, 2, 2}, torch::kDouble);
  CHECK_THROWS_AS(ddim_step(NoisyState{x, 50}, x, 50, 50, s), OrderingError);
  CHECK_THROWS_AS(ddim_step(NoisyState{x, 50}, x, 50, 60, s), OrderingError);
  CHECK_THROWS_AS(ddim_step(NoisyState{x, 40}, x, 50, 10, s), OrderingError);
}

TEST_CASE("subsequence spacing") {
  CHECK(make_subsequence(1000, 1).taus == std::vector<int>{1000});
  CHECK(make_subsequence(1000, 4).taus == std::vector<int>{250, 500, 750, 1000});
  CHECK(make_subsequence(1000, 3).taus == std::vector<int>{334, 667, 1000});
  std::vector<int> full(10);
  std::iota(full.begin(), full.end(), 1);
  CHECK(make_subsequence(10, 10).taus == full);
  for (int steps : {1, 7, 100, 1000}) {
    for (int count = 1; count <= std::min(steps, 60); ++count) {
      const auto taus = make_subsequence(steps, count).taus;
      REQUIRE(static_cast<int>(taus.size()) == count);
      REQUIRE(taus.back() == steps);
      REQUIRE(taus.front() >= 1);
      for (std::size_t i = 1; i < taus.size(); ++i) REQUIRE(taus[i] > taus[i - 1]);
    }
  }
  CHECK_THROWS_AS(make_subsequence(10, 0), RangeError);
  CHECK_THROWS_AS(make_subsequence(10, 11), RangeError);
}
