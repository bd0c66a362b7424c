#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "ope/estimators.hpp"
#include "ope/mdp_core.hpp"
#include "ope/sampling.hpp"
#include "ope/types.hpp"

namespace ope {

// Gridworld (width x height, 4 actions: up/right/down/left). The intended move
// happens with probability 1 - slip; each perpendicular direction gets slip/2.
// Walking into a wall stays put. Reward mean is goal_reward at the goal cell
// (any action) and step_reward elsewhere, with Gaussian noise of sd reward_sd.
struct GridSpec {
  int width = 4;
  int height = 4;
  double slip = 0.1;
  int goal_x = -1;  // default: bottom-right corner
  int goal_y = -1;
  double goal_reward = 1.0;
  double step_reward = 0.1;
  double reward_sd = 0.3;
  double gamma = 0.98;
};
TabularMdp make_gridworld(const GridSpec& spec);

// Target policy: greedy from sweeps rounds of q-iteration, softened with a
// soften-fraction uniform mixture. Behavior: pi_b = alpha pi_e + (1-alpha)
// pi_plus where pi_plus is the softened greedy policy after ceil(sweeps/6)
// rounds. seed only breaks exact argmax ties. Both policies carry a uniform
// initial distribution; the harness overrides it per init regime.
struct PolicyPair {
  Policy pi_e;
  Policy pi_b;
};
PolicyPair make_policy_pair(const TabularMdp& mdp, double gamma, double alpha_mix,
                            uint64_t seed = 0, int sweeps = 1000, double soften = 0.05);

// Which fitted nuisance keeps its fit: OnlyWCorrect corrupts the q table,
// OnlyQCorrect corrupts the w table, BothCorrect touches neither.
enum class Setting { BothCorrect = 1, OnlyWCorrect = 2, OnlyQCorrect = 3 };
std::string setting_name(Setting s);
Setting setting_from_name(const std::string& token);

struct CorruptSpec {
  double mean = 1.0;
  double sd = 1.0;
  double q_lo = 0.0;
  double q_hi = std::numeric_limits<double>::infinity();
  double w_lo = 0.0;
  double w_hi = std::numeric_limits<double>::infinity();
};

// Elementwise Gaussian noise on the table named by the setting, clipped into
// the configured bounds afterwards. BothCorrect returns the pair untouched.
NuisancePair apply_setting(const NuisancePair& pair, Setting setting, uint64_t seed,
                           const CorruptSpec& cs = {});

struct ExperimentConfig {
  GridSpec grid;
  double alpha_mix = 0.4;
  int vi_sweeps = 1000;
  double soften = 0.05;
  std::vector<int> n_list{1};
  std::vector<int> t_list{512};
  // tokens: is, snis, dm, mis, drl1, drl2, drl3, optionally with :scheme
  // (adaptive, cross-trajectory, cross-time, oracle) for the drl family
  std::vector<std::string> estimators{"is", "dm", "mis", "drl3"};
  std::vector<Setting> settings{Setting::BothCorrect};
  int replications = 200;
  uint64_t master_seed = 20260819;
  int workers = 1;
  double alpha_ci = 0.05;
  InitRegime init = InitRegime::ErgodicBurnIn;
  int burn_in = 1000;
  int omega = -1;    // -1: effective horizon for the configured gamma
  int horizon = -1;  // -1: all T transitions
  double corrupt_mean = 1.0;
  double corrupt_sd = 1.0;
  double w_cap = 100.0;  // upper clip for corrupted w tables
  // On by default here (only here): concentrated behavior policies leave
  // never-visited states whose one-hot columns make the moment matrix exactly
  // singular; the tiny ridge resolves them to clipped-to-zero ratios that no
  // scoring term ever reads.
  bool allow_ridge = true;
};

// Flat key = value text format; '#' comments. Unknown keys are errors.
ExperimentConfig load_experiment_config(const std::string& path);
void save_experiment_config(const std::string& path, const ExperimentConfig& cfg);

struct MseRow {
  std::string estimator;  // token, including scheme suffix if any
  int N = 0;
  int T = 0;
  int setting = 1;
  double mse = std::numeric_limits<double>::quiet_NaN();
  double bias2 = std::numeric_limits<double>::quiet_NaN();
  double variance = std::numeric_limits<double>::quiet_NaN();
  double coverage = std::numeric_limits<double>::quiet_NaN();  // NaN: no CI
  int replications = 0;
  bool skipped = false;
  std::string skip_reason;
  double mse_se = std::numeric_limits<double>::quiet_NaN();  // plot error bars
  double rho_oracle = std::numeric_limits<double>::quiet_NaN();
};

struct MseTable {
  std::vector<MseRow> rows;
};

// CSV: estimator,N,T,setting,mse,bias2,variance,coverage,replications,
//      skipped,skip_reason
void save_mse_csv(const std::string& path, const MseTable& table);
// One x,y,ci_low,ci_high file per estimator x setting (x = N*T, y = mse).
void write_plot_data(const std::string& dir, const MseTable& table);

// The (estimator, N, T, setting) grid with static feasibility, evaluated
// without running anything.
struct PlanRow {
  std::string estimator;
  int N = 0;
  int T = 0;
  int setting = 1;
  bool feasible = true;
  std::string reason;
};
std::vector<PlanRow> plan_cells(const ExperimentConfig& cfg);

// Monte-Carlo replication study on the configured gridworld, or on an
// explicitly supplied MDP and policy pair. Every planned cell appears exactly
// once in the result, as data or as a skip with reason.
MseTable run_replications(const ExperimentConfig& cfg);
MseTable run_replications(const ExperimentConfig& cfg, const TabularMdp& mdp,
                          const PolicyPair& pair);

// Same machinery restricted to estimators that report confidence intervals.
MseTable run_coverage(const ExperimentConfig& cfg);
MseTable run_coverage(const ExperimentConfig& cfg, const TabularMdp& mdp,
                      const PolicyPair& pair);

// Smallest t with gamma^t < tol, capped at cap (cap also covers gamma = 0..1
// edge cases).
int effective_horizon(double gamma, double tol, int cap);

}  // namespace ope
