#pragma once

#include <cstdint>

#include "ope/types.hpp"

namespace ope {

// Feature maps for the linear fitters. Tabular one-hot features recover the
// exact tables; anything low-dimensional gives a projected fit.
struct FeatureMap {
  MatrixXd state_feats;  // (S, d_w), row s = psi(s)
  MatrixXd sa_feats;     // (S*A, d_q), row s*A+a = phi(s,a)

  static FeatureMap tabular(int n_states, int n_actions);
};

struct FitOptions {
  double rcond_min = 1e-12;  // below this the moment system is refused
  bool allow_ridge = false;  // opt-in: add 1e-8 |trace|/dim to the diagonal
};

struct WFitResult {
  WTable w;        // pointwise evaluation on states, negatives clipped at 0
  VectorXd beta;   // coefficients in the feature basis
  int clipped = 0;
  double rcond = 0.0;
  bool ridged = false;
};

struct QFitResult {
  QTable q;
  VectorXd beta;
  double rcond = 0.0;
  bool ridged = false;
};

// Linear stationary-ratio fit: solve, over the feature basis psi,
//   P_n[(gamma eta(s,a) psi(s') - psi(s)) psi(s)^T] beta = -(1-gamma) E_{p0_e}[psi].
// Every test feature gives one balance equation; with tabular features and the
// exact moments this system's solution is the oracle ratio itself.
WFitResult fit_w_linear(const TransitionDataset& data, const FeatureMap& fm,
                        const MatrixXd& eta, const VectorXd& p0_e, double gamma,
                        const FitOptions& opts = {});

// Same system with expectations taken exactly under (state_dist, pi_b, P).
WFitResult fit_w_linear_exact(const TabularMdp& mdp, const Policy& pi_e,
                              const Policy& pi_b, const VectorXd& state_dist,
                              const FeatureMap& fm, double gamma,
                              const FitOptions& opts = {});

// Least-squares temporal-difference fit of q under the target policy:
//   P_n[phi(s,a)(phi(s,a) - gamma phibar_e(s'))^T] beta = P_n[r phi(s,a)],
// phibar_e(s') = sum_a' pi_e(a'|s') phi(s',a').
QFitResult fit_q_lstdq(const TransitionDataset& data, const FeatureMap& fm,
                       const Policy& pi_e, double gamma, const FitOptions& opts = {});

QFitResult fit_q_lstdq_exact(const TabularMdp& mdp, const Policy& pi_e,
                             const Policy& pi_b, const VectorXd& state_dist,
                             const FeatureMap& fm, double gamma,
                             const FitOptions& opts = {});

// Build the empirical MDP (transition counts, mean rewards) and solve its
// Bellman equations under pi_e. Unvisited (s,a) pairs become self-loops with
// reward r_max/2; imputed_count reports how many.
struct ModelBasedQ {
  QTable q;
  int imputed = 0;
};
ModelBasedQ fit_q_model_based(const TransitionDataset& data, int n_states, int n_actions,
                              const Policy& pi_e, double gamma, double r_max);

// Horizon-truncated q tables (t = 0..omega) on the same empirical MDP.
struct ModelBasedQSeq {
  std::vector<QTable> q_by_t;
  int imputed = 0;
};
ModelBasedQSeq fit_q_model_based_truncated(const TransitionDataset& data, int n_states,
                                           int n_actions, const Policy& pi_e,
                                           double gamma, double r_max, int omega);

// v(s) = sum_a pi_e(a|s) q(s,a).
VectorXd v_from_q(const QTable& q, const Policy& pi_e);

// Add elementwise N(mean, sd^2) noise, then clip into [lo, hi]. Clipping is
// applied after the noise; *clipped counts affected entries.
MatrixXd corrupt_table(const MatrixXd& table, double mean, double sd, double lo,
                       double hi, uint64_t seed, int* clipped = nullptr);

// Balance-equation residuals of a candidate ratio w against test functions
// f (columns of f_states): L(w, f) should vanish at the true ratio.
VectorXd residual_l(const TransitionDataset& data, const WTable& w,
                    const MatrixXd& f_states, const MatrixXd& eta,
                    const VectorXd& p0_e, double gamma);

VectorXd residual_l_exact(const TabularMdp& mdp, const Policy& pi_e, const Policy& pi_b,
                          const VectorXd& state_dist, const WTable& w,
                          const MatrixXd& f_states, double gamma);

}  // namespace ope
