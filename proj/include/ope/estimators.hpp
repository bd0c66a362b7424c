#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ope/types.hpp"

namespace ope {

// How nuisances are fitted relative to the data they score.
enum class FitScheme { Adaptive, CrossTrajectory2, CrossTime4, OracleNuisance };
std::string scheme_name(FitScheme s);
FitScheme scheme_from_name(const std::string& name);

// Deterministic fold layout. CrossTrajectory2 splits trajectories into two
// contiguous halves (the earlier half takes any extra element) and scores each
// half with the other's fit. CrossTime4 splits the time axis into contiguous
// quarters (earlier quarters take extras) and scores quarter j with the fit
// from quarter (j+2) mod 4, skipping the adjacent quarters.
struct FoldAssignment {
  FitScheme scheme = FitScheme::Adaptive;
  int n_folds = 1;
  std::vector<int> traj_fold;                    // CrossTrajectory2: per trajectory
  std::vector<std::pair<int, int>> time_ranges;  // CrossTime4: [begin, end) per fold

  int fold_of(int traj_id, int t) const;
  int fit_fold_for(int eval_fold) const;
};
FoldAssignment make_folds(int N, int T, FitScheme scheme);
FoldAssignment make_folds(const TrajectoryDataset& data, FitScheme scheme);

struct EstimateReport {
  std::string estimator;
  FitScheme scheme = FitScheme::Adaptive;
  int N = 0;
  int T = 0;
  long n = 0;  // observations behind rho_hat (trajectories or transitions)
  double rho_hat = 0.0;
  std::optional<double> variance_hat;  // per-observation asymptotic variance
  std::optional<double> ci_low;
  std::optional<double> ci_high;
  double alpha = 0.05;
  uint64_t seed = 0;
  double wall_ms = 0.0;
  std::map<std::string, double> diagnostics;
};

// CSV header: estimator,scheme,N,T,n,rho_hat,var_hat,ci_low,ci_high,seed,wall_ms
void save_reports_csv(const std::string& path, const std::vector<EstimateReport>& reports);

// Two-sided normal interval rho_hat +- z_{1-alpha/2} sqrt(variance_hat / n).
std::pair<double, double> confidence_interval(double rho_hat, double variance_hat,
                                              long n, double alpha);

// Summation with a fixed pairwise tree so results do not depend on worker
// count or accumulation order.
double pairwise_sum(std::span<const double> xs);
double pairwise_mean(std::span<const double> xs);

// Default truncation horizon ceil((ln(N+2))^1.5), capped at T-1.
int default_omega(int N, int T);

// Cumulative-ratio importance sampling over t = 0..horizon (inclusive),
// normalized by 1/sum gamma^t. horizon must be <= T-1.
EstimateReport estimate_is(const TrajectoryDataset& data, const MatrixXd& eta,
                           double gamma, int horizon, double alpha = 0.05);

// Same with each step's weights normalized by their empirical mean. Exactly
// reproduces the on-policy discounted average when pi_e = pi_b.
EstimateReport estimate_snis(const TrajectoryDataset& data, const MatrixXd& eta,
                             double gamma, int horizon, double alpha = 0.05);

// Plug-in (1-gamma) E_{p0_e}[v_hat(s_0)] with the outer expectation exact.
EstimateReport estimate_dm(const QTable& q_hat, const Policy& pi_e, double gamma);

// Per-decision doubly-robust estimator with cumulative ratios:
//   c_omega(gamma) P_N[ sum_t gamma^t ( nu_t (r_t - q_t(s_t,a_t)) + nu_{t-1} v_t(s_t) ) ]
// q_by_fold[f][t] for t = 0..omega are the fitted horizon-truncated q tables.
EstimateReport estimate_drl_m1(const TrajectoryDataset& data, const MatrixXd& eta,
                               const Policy& pi_e, double gamma, int omega,
                               const std::vector<std::vector<QTable>>& q_by_fold,
                               const FoldAssignment& folds, double alpha = 0.05);

// Same structure with marginal ratios: mu_t(s_t,a_t) replaces nu_t and
// mu_{t-1}(s_{t-1},a_{t-1}) replaces nu_{t-1} (mu at t=-1 is 1).
EstimateReport estimate_drl_m2(const TrajectoryDataset& data,
                               const std::vector<std::vector<MatrixXd>>& mu_by_fold,
                               const Policy& pi_e, double gamma, int omega,
                               const std::vector<std::vector<QTable>>& q_by_fold,
                               const FoldAssignment& folds, double alpha = 0.05);

// Stationary-ratio estimating function for one logged transition.
double psi_eval(const Transition& tr, const WTable& w, const QTable& q,
                const VectorXd& v, const MatrixXd& eta, double dm_term, double gamma);

// Nuisance fitters for the cross-fitted stationary estimator. fit_tag is the
// fold index, available for seed derivation inside the closure.
using WFitter = std::function<WTable(const TransitionDataset&, uint64_t fit_tag)>;
using QFitter = std::function<QTable(const TransitionDataset&, uint64_t fit_tag)>;

// Stationary doubly-robust estimator: mean of psi over all transitions, with
// nuisances fitted per scheme. For OracleNuisance pass the tables in oracle;
// fitters may be empty in that case.
EstimateReport estimate_drl_m3(const TransitionDataset& data, int N, int T,
                               const Policy& pi_e, const MatrixXd& eta, double gamma,
                               FitScheme scheme, const WFitter& w_fitter,
                               const QFitter& q_fitter,
                               const NuisancePair* oracle = nullptr,
                               double alpha = 0.05);

// Marginalized importance sampling P_n[eta(s,a) w_hat(s) r].
EstimateReport estimate_mis(const TransitionDataset& data, const WTable& w_hat,
                            const MatrixXd& eta, double alpha = 0.05);

}  // namespace ope
