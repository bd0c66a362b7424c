#pragma once

#include <vector>

#include "ope/types.hpp"

namespace ope {

// Denominator of the stationary density ratio w: the distribution the logged
// states are assumed to be drawn from.
enum class WDenominator { InitialDist, StationaryDist };

// State-to-state kernel under pi: P_pi(s, s') = sum_a pi(a|s) P(s'|s,a).
MatrixXd policy_transition(const TabularMdp& mdp, const Policy& pi);

// Fixed points of the Bellman equations, by dense LU solve.
VectorXd exact_v(const TabularMdp& mdp, const Policy& pi, double gamma);
QTable exact_q(const TabularMdp& mdp, const Policy& pi, double gamma);

// Normalized discounted value rho = (1-gamma) E_{p0}[v(s_0)].
double exact_policy_value(const TabularMdp& mdp, const Policy& pi, double gamma);

// Normalized discounted state-visitation distribution
// d(s) = (1-gamma) sum_t gamma^t Pr[s_t = s]; solves the flow equations.
VectorXd discounted_visitation(const TabularMdp& mdp, const Policy& pi, double gamma);

// Stationary distribution of the chain induced by pi. Requires the induced
// chain to be irreducible and aperiodic; diagnoses the failure otherwise.
VectorXd stationary_distribution(const TabularMdp& mdp, const Policy& pi);

// Per-step ratio eta(s,a) = pi_e(a|s) / pi_b(a|s). Support violations
// (pi_b = 0 < pi_e) raise IdentifiabilityError naming the pair.
MatrixXd density_ratio_eta(const Policy& pi_e, const Policy& pi_b);

// Stationary density ratio w(s) = d_{pi_e,gamma}(s) / denom(s) where denom is
// the behavior initial distribution or the behavior stationary distribution.
WTable oracle_w(const TabularMdp& mdp, const Policy& pi_e, const Policy& pi_b,
                double gamma, WDenominator denom);

// Marginal state-action ratios mu_t = p_e^{(t)}(s,a) / p_b^{(t)}(s,a) for
// t = 0..t_max, by forward DP from each policy's own initial distribution.
std::vector<MatrixXd> marginal_ratio_mu(const TabularMdp& mdp, const Policy& pi_e,
                                        const Policy& pi_b, int t_max);

// Cumulative products nu_t = prod_{k<=t} eta(s_k, a_k) along each trajectory.
std::vector<std::vector<double>> cumulative_ratio_nu(const TrajectoryDataset& data,
                                                     const MatrixXd& eta);

// 1 / sum_{t=0}^{t_max} gamma^t, the finite-horizon normalizer.
double discount_normalizer(double gamma, int t_max);

// Horizon-truncated action values q[t] for t = 0..omega under pi:
//   q[omega] = rbar,  q[t] = rbar + gamma P (sum_a' pi(a'|.) q[t+1]).
std::vector<QTable> truncated_q(const TabularMdp& mdp, const Policy& pi, double gamma,
                                int omega);

// Expected immediate reward under pi: r_pi(s) = sum_a pi(a|s) rbar(s,a).
VectorXd expected_reward(const TabularMdp& mdp, const Policy& pi);

}  // namespace ope
