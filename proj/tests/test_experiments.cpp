#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "ope/experiments.hpp"
#include "ope/mdp_core.hpp"
#include "ope/serialize.hpp"
#include "test_util.hpp"

using namespace ope;
using namespace ope_test;
namespace fs = std::filesystem;

namespace {

bool same_value(double a, double b) {
  if (std::isnan(a) && std::isnan(b)) return true;
  return a == b;
}

bool rows_equal(const MseRow& a, const MseRow& b) {
  return a.estimator == b.estimator && a.N == b.N && a.T == b.T && a.setting == b.setting &&
         same_value(a.mse, b.mse) && same_value(a.bias2, b.bias2) &&
         same_value(a.variance, b.variance) && same_value(a.coverage, b.coverage) &&
         a.replications == b.replications && a.skipped == b.skipped &&
         a.skip_reason == b.skip_reason;
}

ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.grid.width = 2;
  cfg.grid.height = 2;
  cfg.grid.gamma = 0.9;
  cfg.n_list = {2};
  cfg.t_list = {64};
  cfg.estimators = {"is", "dm", "mis", "drl3"};
  cfg.settings = {Setting::BothCorrect, Setting::OnlyWCorrect, Setting::OnlyQCorrect};
  cfg.replications = 8;
  cfg.master_seed = 424242;
  cfg.burn_in = 100;
  return cfg;
}

}  // namespace

TEST_CASE("gridworld structure") {
  GridSpec spec;
  TabularMdp m = make_gridworld(spec);
  CHECK(m.n_states == 16);
  CHECK(m.n_actions == 4);
  CHECK(m.gamma == 0.98);
  CHECK(m.r_max == 1.0);
  for (int row = 0; row < 64; ++row) {
    CHECK(m.trans.row(row).sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(m.trans.row(row).minCoeff() >= 0.0);
  }
  // Goal cell rewards every action; other cells pay the step reward.
  for (int a = 0; a < 4; ++a) {
    CHECK(m.reward_mean(15, a) == 1.0);
    CHECK(m.reward_mean(5, a) == 0.1);
    CHECK(m.reward_var(5, a) == doctest::Approx(0.09));
  }
}

TEST_CASE("gridworld moves with no slip are deterministic neighbors") {
  GridSpec spec;
  spec.slip = 0.0;
  TabularMdp m = make_gridworld(spec);
  std::set<int> targets;
  for (int a = 0; a < 4; ++a) {
    auto row = m.trans.row(5 * 4 + a);  // an interior cell
    int hits = 0;
    for (int s2 = 0; s2 < 16; ++s2)
      if (row(s2) == 1.0) {
        targets.insert(s2);
        ++hits;
      }
    CHECK(hits == 1);
  }
  CHECK(targets == std::set<int>{1, 4, 6, 9});
}

TEST_CASE("gridworld slip spreads to the perpendicular neighbors") {
  GridSpec spec;
  spec.slip = 0.2;
  TabularMdp m = make_gridworld(spec);
  for (int a = 0; a < 4; ++a) {
    auto row = m.trans.row(5 * 4 + a);
    int n_nonzero = 0;
    bool has_main = false;
    for (int s2 = 0; s2 < 16; ++s2) {
      if (row(s2) == 0.0) continue;
      ++n_nonzero;
      if (row(s2) == doctest::Approx(0.8)) has_main = true;
      CHECK((row(s2) == doctest::Approx(0.8) || row(s2) == doctest::Approx(0.1)));
    }
    CHECK(n_nonzero == 3);
    CHECK(has_main);
  }
}

TEST_CASE("walls keep the walker on the grid, and a 1x1 grid self-loops") {
  GridSpec one;
  one.width = 1;
  one.height = 1;
  one.slip = 0.0;
  TabularMdp m = make_gridworld(one);
  CHECK(m.n_states == 1);
  for (int a = 0; a < 4; ++a) CHECK(m.trans(a, 0) == 1.0);
  CHECK(m.reward_mean(0, 0) == 1.0);  // the lone cell is the goal
}

TEST_CASE("policy pair mixes the target with the weaker anchor") {
  GridSpec spec;
  TabularMdp m = make_gridworld(spec);
  PolicyPair full = make_policy_pair(m, spec.gamma, 1.0);
  CHECK((full.pi_b.probs - full.pi_e.probs).cwiseAbs().maxCoeff() < 1e-15);

  PolicyPair anchor = make_policy_pair(m, spec.gamma, 0.0);
  PolicyPair mixed = make_policy_pair(m, spec.gamma, 0.4);
  CHECK((mixed.pi_e.probs - full.pi_e.probs).cwiseAbs().maxCoeff() < 1e-15);
  MatrixXd expect = 0.4 * full.pi_e.probs + 0.6 * anchor.pi_b.probs;
  CHECK((mixed.pi_b.probs - expect).cwiseAbs().maxCoeff() < 1e-15);

  // Softening keeps every action probability strictly positive.
  CHECK(mixed.pi_e.probs.minCoeff() >= 0.05 / 4 - 1e-15);
  CHECK(mixed.pi_b.probs.minCoeff() >= 0.05 / 4 - 1e-15);
  for (int s = 0; s < 16; ++s)
    CHECK(mixed.pi_b.probs.row(s).sum() == doctest::Approx(1.0).epsilon(1e-12));

  // The two policies must actually disagree for off-policy evaluation to bite.
  CHECK((mixed.pi_e.probs - mixed.pi_b.probs).cwiseAbs().maxCoeff() > 0.1);
}

TEST_CASE("setting names round-trip and accept numerals") {
  for (Setting s : {Setting::BothCorrect, Setting::OnlyWCorrect, Setting::OnlyQCorrect})
    CHECK(setting_from_name(setting_name(s)) == s);
  CHECK(setting_from_name("2") == Setting::OnlyWCorrect);
  CHECK_THROWS_AS(setting_from_name("nope"), std::invalid_argument);
}

TEST_CASE("settings corrupt exactly the advertised table") {
  NuisancePair pair;
  pair.q = QTable::Constant(4, 2, 1.0);
  pair.w = WTable::Constant(4, 2.0);

  NuisancePair same = apply_setting(pair, Setting::BothCorrect, 7);
  CHECK((same.q - pair.q).cwiseAbs().maxCoeff() == 0.0);
  CHECK((same.w - pair.w).cwiseAbs().maxCoeff() == 0.0);

  NuisancePair qc = apply_setting(pair, Setting::OnlyWCorrect, 7);
  CHECK((qc.w - pair.w).cwiseAbs().maxCoeff() == 0.0);
  CHECK((qc.q - pair.q).cwiseAbs().maxCoeff() > 0.0);

  NuisancePair wc = apply_setting(pair, Setting::OnlyQCorrect, 7);
  CHECK((wc.q - pair.q).cwiseAbs().maxCoeff() == 0.0);
  CHECK((wc.w - pair.w).cwiseAbs().maxCoeff() > 0.0);
  CHECK(wc.w.minCoeff() >= 0.0);

  NuisancePair wc2 = apply_setting(pair, Setting::OnlyQCorrect, 7);
  CHECK((wc2.w - wc.w).cwiseAbs().maxCoeff() == 0.0);
  NuisancePair wc3 = apply_setting(pair, Setting::OnlyQCorrect, 8);
  CHECK((wc3.w - wc.w).cwiseAbs().maxCoeff() > 0.0);

  CorruptSpec cs;
  cs.mean = 1.0;
  cs.sd = 0.0;
  NuisancePair shifted = apply_setting(pair, Setting::OnlyWCorrect, 7, cs);
  CHECK((shifted.q.array() - 2.0).abs().maxCoeff() < 1e-15);

  cs.sd = 50.0;
  cs.w_hi = 3.0;
  NuisancePair capped = apply_setting(pair, Setting::OnlyQCorrect, 7, cs);
  CHECK(capped.w.maxCoeff() <= 3.0);
  CHECK(capped.w.minCoeff() >= 0.0);
}

TEST_CASE("effective horizon") {
  CHECK(effective_horizon(0.5, 0.1, 1000) == 4);  // 0.5^4 = 0.0625 < 0.1
  CHECK(effective_horizon(0.99, 1e-3, 50) == 50);
  CHECK(effective_horizon(0.9, 1.5, 1000) == 1);  // tolerance above 1 floors at one step
}

TEST_CASE("experiment config round-trips through its text format") {
  ExperimentConfig cfg;
  cfg.grid.width = 3;
  cfg.grid.height = 5;
  cfg.grid.slip = 0.2;
  cfg.grid.goal_x = 1;
  cfg.grid.goal_y = 4;
  cfg.grid.goal_reward = 2.0;
  cfg.grid.step_reward = 0.05;
  cfg.grid.reward_sd = 0.7;
  cfg.grid.gamma = 0.9;
  cfg.alpha_mix = 0.25;
  cfg.vi_sweeps = 60;
  cfg.soften = 0.1;
  cfg.n_list = {1, 4};
  cfg.t_list = {128, 256};
  cfg.estimators = {"is", "snis", "drl3:cross-time"};
  cfg.settings = {Setting::OnlyQCorrect, Setting::BothCorrect};
  cfg.replications = 17;
  cfg.master_seed = 31337;
  cfg.workers = 2;
  cfg.alpha_ci = 0.1;
  cfg.init = InitRegime::StationaryInit;
  cfg.burn_in = 123;
  cfg.omega = 9;
  cfg.horizon = 100;
  cfg.corrupt_mean = 0.5;
  cfg.corrupt_sd = 2.0;
  cfg.w_cap = 25.0;
  cfg.allow_ridge = false;

  std::string path = "/tmp/ope_test_config.cfg";
  save_experiment_config(path, cfg);
  ExperimentConfig back = load_experiment_config(path);
  CHECK(back.grid.width == 3);
  CHECK(back.grid.height == 5);
  CHECK(back.grid.slip == 0.2);
  CHECK(back.grid.goal_x == 1);
  CHECK(back.grid.goal_y == 4);
  CHECK(back.grid.goal_reward == 2.0);
  CHECK(back.grid.step_reward == 0.05);
  CHECK(back.grid.reward_sd == 0.7);
  CHECK(back.grid.gamma == 0.9);
  CHECK(back.alpha_mix == 0.25);
  CHECK(back.vi_sweeps == 60);
  CHECK(back.soften == 0.1);
  CHECK(back.n_list == std::vector<int>{1, 4});
  CHECK(back.t_list == std::vector<int>{128, 256});
  CHECK(back.estimators == std::vector<std::string>{"is", "snis", "drl3:cross-time"});
  CHECK(back.settings == std::vector<Setting>{Setting::OnlyQCorrect, Setting::BothCorrect});
  CHECK(back.replications == 17);
  CHECK(back.master_seed == 31337);
  CHECK(back.workers == 2);
  CHECK(back.alpha_ci == 0.1);
  CHECK(back.init == InitRegime::StationaryInit);
  CHECK(back.burn_in == 123);
  CHECK(back.omega == 9);
  CHECK(back.horizon == 100);
  CHECK(back.corrupt_mean == 0.5);
  CHECK(back.corrupt_sd == 2.0);
  CHECK(back.w_cap == 25.0);
  CHECK(back.allow_ridge == false);
}

TEST_CASE("config parser flags unknown keys and bad values with line numbers") {
  std::string path = "/tmp/ope_test_bad.cfg";
  {
    std::ofstream out(path);
    out << "# comment\nreplications = 5\nbogus_key = 1\n";
  }
  CHECK_THROWS_AS(load_experiment_config(path), ParseError);
  try {
    load_experiment_config(path);
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("3") != std::string::npos);
  }
  {
    std::ofstream out(path);
    out << "settings = both,never\n";
  }
  CHECK_THROWS_AS(load_experiment_config(path), ParseError);
}

TEST_CASE("the cell plan marks infeasible combinations without running") {
  ExperimentConfig cfg = tiny_config();
  cfg.n_list = {1};
  cfg.estimators = {"is", "drl1:cross-time", "drl2:cross-trajectory"};
  cfg.settings = {Setting::BothCorrect};
  auto plan = plan_cells(cfg);
  REQUIRE(plan.size() == 3);
  CHECK(plan[0].feasible);
  CHECK_FALSE(plan[1].feasible);
  CHECK(plan[1].reason.find("cross-time") != std::string::npos);
  CHECK_FALSE(plan[2].feasible);  // two trajectory folds need N >= 2
}

TEST_CASE("replication study covers every cell with consistent accounting") {
  ExperimentConfig cfg = tiny_config();
  MseTable table = run_replications(cfg);
  REQUIRE(table.rows.size() == 4 * 3);

  std::set<std::string> seen;
  for (const MseRow& row : table.rows) {
    seen.insert(row.estimator + "/" + std::to_string(row.setting));
    CHECK(row.N == 2);
    CHECK(row.T == 64);
    REQUIRE_FALSE(row.skipped);
    CHECK(row.replications == 8);
    CHECK(std::isfinite(row.mse));
    CHECK(row.mse >= 0.0);
    CHECK(row.mse == doctest::Approx(row.bias2 + row.variance).epsilon(1e-9));
    CHECK(std::isfinite(row.rho_oracle));
    if (row.estimator == "dm") {
      CHECK(std::isnan(row.coverage));
    } else {
      CHECK(row.coverage >= 0.0);
      CHECK(row.coverage <= 1.0);
    }
  }
  CHECK(seen.size() == 12);

  // The pure importance-sampling rows ignore the nuisance setting entirely.
  double is_mse[3] = {0, 0, 0};
  for (const MseRow& row : table.rows)
    if (row.estimator == "is") is_mse[row.setting - 1] = row.mse;
  CHECK(is_mse[0] == is_mse[1]);
  CHECK(is_mse[0] == is_mse[2]);
}

TEST_CASE("results do not depend on the worker count and reruns are identical") {
  ExperimentConfig cfg = tiny_config();
  cfg.settings = {Setting::BothCorrect};
  MseTable one = run_replications(cfg);
  cfg.workers = 3;
  MseTable three = run_replications(cfg);
  MseTable again = run_replications(cfg);
  REQUIRE(one.rows.size() == three.rows.size());
  for (std::size_t i = 0; i < one.rows.size(); ++i) {
    CHECK(rows_equal(one.rows[i], three.rows[i]));
    CHECK(rows_equal(three.rows[i], again.rows[i]));
  }
}

TEST_CASE("infeasible cells are reported as skips, not dropped") {
  ExperimentConfig cfg = tiny_config();
  cfg.n_list = {1};
  cfg.settings = {Setting::BothCorrect};
  cfg.estimators = {"is", "drl1:cross-time", "drl2:cross-trajectory"};
  MseTable table = run_replications(cfg);
  REQUIRE(table.rows.size() == 3);
  CHECK_FALSE(table.rows[0].skipped);
  CHECK(table.rows[1].skipped);
  CHECK(table.rows[1].skip_reason.find("cross-time") != std::string::npos);
  CHECK(std::isnan(table.rows[1].mse));
  CHECK(table.rows[1].replications == 0);
  CHECK(table.rows[2].skipped);
}

TEST_CASE("coverage study keeps only interval-reporting estimators") {
  ExperimentConfig cfg = tiny_config();
  cfg.settings = {Setting::BothCorrect};
  cfg.estimators = {"is", "dm", "snis", "drl3"};
  MseTable table = run_coverage(cfg);
  REQUIRE(table.rows.size() == 2);
  for (const MseRow& row : table.rows) {
    CHECK((row.estimator == "is" || row.estimator == "drl3"));
    CHECK(row.coverage >= 0.0);
    CHECK(row.coverage <= 1.0);
  }
}

TEST_CASE("mse table serializes with empty fields for missing values") {
  MseTable table;
  MseRow a;
  a.estimator = "is";
  a.N = 1;
  a.T = 8;
  a.setting = 1;
  a.mse = 0.25;
  a.bias2 = 0.05;
  a.variance = 0.2;
  a.coverage = 0.94;
  a.replications = 100;
  MseRow b;
  b.estimator = "drl1:cross-time";
  b.N = 1;
  b.T = 8;
  b.setting = 2;
  b.skipped = true;
  b.skip_reason = "folds, by time, break cumulative weights";
  table.rows = {a, b};
  std::string path = "/tmp/ope_test_mse.csv";
  save_mse_csv(path, table);
  std::ifstream in(path);
  std::string header, r1, r2;
  std::getline(in, header);
  std::getline(in, r1);
  std::getline(in, r2);
  CHECK(header ==
        "estimator,N,T,setting,mse,bias2,variance,coverage,replications,skipped,skip_reason");
  CHECK(r1.find("is,1,8,1,") == 0);
  CHECK(r2.find(",,") != std::string::npos);          // NaN fields are empty
  CHECK(r2.find("folds; by time;") != std::string::npos);  // commas sanitized
}

TEST_CASE("plot files carry one curve point per sample size") {
  ExperimentConfig cfg = tiny_config();
  cfg.settings = {Setting::BothCorrect};
  cfg.estimators = {"drl3"};
  cfg.t_list = {32, 64};
  cfg.replications = 4;
  MseTable table = run_replications(cfg);
  std::string dir = "/tmp/ope_test_plots";
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_plot_data(dir, table);
  std::ifstream in(dir + "/plot_drl3_setting1.csv");
  REQUIRE(in.good());
  std::string header, l1, l2;
  std::getline(in, header);
  std::getline(in, l1);
  std::getline(in, l2);
  CHECK(header == "x,y,ci_low,ci_high");
  CHECK(l1.substr(0, 3) == "64,");   // x = N * T = 2 * 32
  CHECK(l2.substr(0, 4) == "128,");
}
