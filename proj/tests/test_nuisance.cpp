#include <cmath>

#include "doctest.h"
#include "ope/mdp_core.hpp"
#include "ope/nuisance.hpp"
#include "ope/sampling.hpp"
#include "test_util.hpp"

using namespace ope;
using namespace ope_test;

TEST_CASE("tabular feature map is one-hot") {
  FeatureMap fm = FeatureMap::tabular(3, 2);
  CHECK(fm.state_feats.rows() == 3);
  CHECK(fm.state_feats.cols() == 3);
  CHECK(fm.sa_feats.rows() == 6);
  CHECK(fm.sa_feats.cols() == 6);
  CHECK(fm.state_feats == MatrixXd::Identity(3, 3));
  CHECK(fm.sa_feats == MatrixXd::Identity(6, 6));
}

TEST_CASE("exact-moment w fit recovers the oracle ratio") {
  for (uint64_t seed : {61u, 62u, 63u, 64u}) {
    TabularMdp m = random_mdp(seed, 5, 3);
    Policy pi_e = random_policy(seed + 10, 5, 3);
    Policy pi_b = random_policy(seed + 20, 5, 3);
    double gamma = 0.9;
    VectorXd stat = stationary_distribution(m, pi_b);
    FeatureMap fm = FeatureMap::tabular(5, 3);
    WFitResult fit = fit_w_linear_exact(m, pi_e, pi_b, stat, fm, gamma);
    WTable w_star = oracle_w(m, pi_e, pi_b, gamma, WDenominator::StationaryDist);
    for (int s = 0; s < 5; ++s)
      CHECK(fit.w(s) == doctest::Approx(w_star(s)).epsilon(1e-8));
    CHECK_FALSE(fit.ridged);
    CHECK(fit.rcond > 1e-12);
  }
}

TEST_CASE("exact-moment lstdq recovers the oracle action values") {
  for (uint64_t seed : {71u, 72u, 73u}) {
    TabularMdp m = random_mdp(seed, 4, 3);
    Policy pi_e = random_policy(seed + 10, 4, 3);
    Policy pi_b = random_policy(seed + 20, 4, 3);
    double gamma = 0.85;
    VectorXd stat = stationary_distribution(m, pi_b);
    FeatureMap fm = FeatureMap::tabular(4, 3);
    QFitResult fit = fit_q_lstdq_exact(m, pi_e, pi_b, stat, fm, gamma);
    QTable q_star = exact_q(m, pi_e, gamma);
    for (int s = 0; s < 4; ++s)
      for (int a = 0; a < 3; ++a)
        CHECK(fit.q(s, a) == doctest::Approx(q_star(s, a)).epsilon(1e-8));
  }
}

TEST_CASE("sampled fits converge toward the oracle tables") {
  TabularMdp m = random_mdp(81, 4, 2);
  m.reward_var.setConstant(0.01);
  Policy pi_e = random_policy(82, 4, 2);
  Policy pi_b = random_policy(83, 4, 2);
  double gamma = 0.9;
  VectorXd stat = stationary_distribution(m, pi_b);
  MatrixXd eta = density_ratio_eta(pi_e, pi_b);
  FeatureMap fm = FeatureMap::tabular(4, 2);

  TransitionDataset data = sample_transitions(m, pi_b, stat, 200000, 404);

  WFitResult wfit = fit_w_linear(data, fm, eta, pi_e.initial, gamma);
  WTable w_star = oracle_w(m, pi_e, pi_b, gamma, WDenominator::StationaryDist);
  for (int s = 0; s < 4; ++s) CHECK(wfit.w(s) == doctest::Approx(w_star(s)).epsilon(0.05));

  QFitResult qfit = fit_q_lstdq(data, fm, pi_e, gamma);
  QTable q_star = exact_q(m, pi_e, gamma);
  for (int s = 0; s < 4; ++s)
    for (int a = 0; a < 2; ++a)
      CHECK(qfit.q(s, a) == doctest::Approx(q_star(s, a)).epsilon(0.05));

  ModelBasedQ mb = fit_q_model_based(data, 4, 2, pi_e, gamma, m.r_max);
  CHECK(mb.imputed == 0);
  for (int s = 0; s < 4; ++s)
    for (int a = 0; a < 2; ++a)
      CHECK(mb.q(s, a) == doctest::Approx(q_star(s, a)).epsilon(0.05));
}

TEST_CASE("model-based fit on exhaustive deterministic data is exact") {
  TabularMdp m = two_state_mdp();
  m.noise = RewardNoise::None;
  Policy pi_e = always_action(0, 2, 2);
  double gamma = 0.5;
  // One noiseless sample of every (s,a) pair identifies the deterministic MDP.
  TransitionDataset data;
  for (int s = 0; s < 2; ++s)
    for (int a = 0; a < 2; ++a) {
      int s_next = (a == 0) ? 0 : 1;
      data.items.push_back({s * 2 + a, 0, s, a, m.reward_mean(s, a), s_next});
    }
  ModelBasedQ mb = fit_q_model_based(data, 2, 2, pi_e, gamma, m.r_max);
  CHECK(mb.imputed == 0);
  QTable q_star = exact_q(m, pi_e, gamma);
  for (int s = 0; s < 2; ++s)
    for (int a = 0; a < 2; ++a)
      CHECK(mb.q(s, a) == doctest::Approx(q_star(s, a)).epsilon(1e-12));

  ModelBasedQSeq seq = fit_q_model_based_truncated(data, 2, 2, pi_e, gamma, m.r_max, 60);
  REQUIRE(seq.q_by_t.size() == 61);
  CHECK(seq.imputed == 0);
  for (int s = 0; s < 2; ++s)
    for (int a = 0; a < 2; ++a) {
      CHECK(seq.q_by_t[60](s, a) == doctest::Approx(m.reward_mean(s, a)));
      CHECK(seq.q_by_t[0](s, a) == doctest::Approx(q_star(s, a)).epsilon(1e-9));
    }
}

TEST_CASE("unvisited pairs are imputed and counted") {
  TransitionDataset data;
  data.items.push_back({0, 0, 0, 0, 1.0, 0});  // only (s0, a0) observed
  Policy pi_e = always_action(0, 2, 2);
  ModelBasedQ mb = fit_q_model_based(data, 2, 2, pi_e, 0.5, 1.0);
  CHECK(mb.imputed == 3);
  // (s0, a0) self-loops with reward 1: q = 1/(1-gamma).
  CHECK(mb.q(0, 0) == doctest::Approx(2.0).epsilon(1e-12));
  // Imputed pairs self-loop with reward r_max/2 and then follow pi_e = a0.
  CHECK(mb.q(1, 0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("v_from_q averages with the policy") {
  QTable q(2, 2);
  q << 1.0, 3.0, 2.0, 4.0;
  Policy pi = uniform_policy(2, 2);
  VectorXd v = v_from_q(q, pi);
  CHECK(v(0) == doctest::Approx(2.0));
  CHECK(v(1) == doctest::Approx(3.0));
}

TEST_CASE("corruption is reproducible, shifts by the mean, and clips") {
  MatrixXd table = MatrixXd::Constant(3, 2, 0.5);
  int clipped = -1;
  MatrixXd a = corrupt_table(table, 1.0, 0.0, 0.0, 10.0, 42, &clipped);
  CHECK(clipped == 0);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) CHECK(a(i, j) == doctest::Approx(1.5).epsilon(1e-15));

  MatrixXd b = corrupt_table(table, 0.0, 1.0, 0.0, 10.0, 42);
  MatrixXd c = corrupt_table(table, 0.0, 1.0, 0.0, 10.0, 42);
  MatrixXd d = corrupt_table(table, 0.0, 1.0, 0.0, 10.0, 43);
  CHECK((b - c).cwiseAbs().maxCoeff() == 0.0);
  CHECK((b - d).cwiseAbs().maxCoeff() > 0.0);

  MatrixXd e = corrupt_table(table, 0.0, 1.0, 0.4, 0.6, 42, &clipped);
  CHECK(clipped > 0);
  CHECK(e.minCoeff() >= 0.4);
  CHECK(e.maxCoeff() <= 0.6);
}

TEST_CASE("balance residuals vanish at the oracle ratio") {
  for (uint64_t seed : {91u, 92u}) {
    TabularMdp m = random_mdp(seed, 5, 2);
    Policy pi_e = random_policy(seed + 10, 5, 2);
    Policy pi_b = random_policy(seed + 20, 5, 2);
    double gamma = 0.9;
    VectorXd stat = stationary_distribution(m, pi_b);
    WTable w_star = oracle_w(m, pi_e, pi_b, gamma, WDenominator::StationaryDist);
    Rng rng(seed + 1000);
    MatrixXd f(5, 8);
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 8; ++j) f(i, j) = rng.gaussian();
    VectorXd res = residual_l_exact(m, pi_e, pi_b, stat, w_star, f, gamma);
    for (int j = 0; j < 8; ++j) CHECK(std::abs(res(j)) < 1e-10);

    // A wrong ratio must leave visible residual mass.
    WTable w_bad = w_star;
    w_bad(0) += 0.5;
    VectorXd res_bad = residual_l_exact(m, pi_e, pi_b, stat, w_bad, f, gamma);
    CHECK(res_bad.cwiseAbs().maxCoeff() > 1e-4);
  }
}

TEST_CASE("sampled residuals at the oracle ratio shrink with n") {
  TabularMdp m = random_mdp(95, 4, 2);
  Policy pi_e = random_policy(96, 4, 2);
  Policy pi_b = random_policy(97, 4, 2);
  double gamma = 0.9;
  VectorXd stat = stationary_distribution(m, pi_b);
  MatrixXd eta = density_ratio_eta(pi_e, pi_b);
  WTable w_star = oracle_w(m, pi_e, pi_b, gamma, WDenominator::StationaryDist);
  MatrixXd f = MatrixXd::Identity(4, 4);
  TransitionDataset data = sample_transitions(m, pi_b, stat, 300000, 606);
  VectorXd res = residual_l(data, w_star, f, eta, pi_e.initial, gamma);
  for (int j = 0; j < 4; ++j) CHECK(std::abs(res(j)) < 0.01);
}

TEST_CASE("singular moment systems are refused unless ridge is allowed") {
  TabularMdp m = random_mdp(99, 3, 2);
  Policy pi_e = random_policy(100, 3, 2);
  Policy pi_b = random_policy(101, 3, 2);
  // State 2 never appears in the data: its one-hot column is identically zero.
  TransitionDataset data;
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    int s = static_cast<int>(rng.uniform() * 2);
    int a = static_cast<int>(rng.uniform() * 2);
    int s2 = static_cast<int>(rng.uniform() * 2);
    data.items.push_back({i, 0, s, a, rng.uniform(), s2});
  }
  FeatureMap fm = FeatureMap::tabular(3, 2);
  MatrixXd eta = density_ratio_eta(pi_e, pi_b);
  CHECK_THROWS_AS(fit_w_linear(data, fm, eta, pi_e.initial, 0.9), NumericsError);
  FitOptions opts;
  opts.allow_ridge = true;
  WFitResult fit = fit_w_linear(data, fm, eta, pi_e.initial, 0.9, opts);
  CHECK(fit.ridged);
}
