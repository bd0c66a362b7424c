#pragma once

#include <vector>

#include "ope/mdp_core.hpp"
#include "ope/types.hpp"

namespace ope {

enum class BoundVerdict { Finite, Divergent };

// A series-valued bound: partial sum, divergence verdict from the growth of
// the underlying recursion, and a geometric bound on the truncated tail.
struct SeriesBound {
  double value = 0.0;    // +inf when divergent
  BoundVerdict verdict = BoundVerdict::Finite;
  int truncation_k = 0;  // number of series terms accumulated
  double tail_bound = 0.0;
  double growth = 0.0;   // gamma^2 x estimated growth factor of the recursion
};

// Asymptotic variance floor for estimators that exploit full stationarity:
//   E[w(s)^2 eta(s,a)^2 var(r + gamma v(s') | s,a)]
// with the expectation over denom-distributed states and behavior actions.
double eb_m3(const TabularMdp& mdp, const Policy& pi_e, const Policy& pi_b,
             double gamma, WDenominator denom);

// Variance floor with no Markov assumption (cumulative-ratio series) and with
// time-varying Markov structure (marginal-ratio series). Both are
//   (1-gamma)^2 sum_{k>=1} gamma^{2(k-1)} E[ratio_{k-1}^2 var(r + gamma v(s_k) | s,a)],
// ratio = nu for the first, mu for the second.
SeriesBound eb_m1(const TabularMdp& mdp, const Policy& pi_e, const Policy& pi_b,
                  double gamma, double tol = 1e-10, int max_k = 200000);
SeriesBound eb_m2(const TabularMdp& mdp, const Policy& pi_e, const Policy& pi_b,
                  double gamma, double tol = 1e-10, int max_k = 200000);

// First k_max series terms (k = 1..k_max), for cross-checks against direct
// path enumeration.
std::vector<double> eb_m1_terms(const TabularMdp& mdp, const Policy& pi_e,
                                const Policy& pi_b, double gamma, int k_max);
std::vector<double> eb_m2_terms(const TabularMdp& mdp, const Policy& pi_e,
                                const Policy& pi_b, double gamma, int k_max);

// Average, over behavior-stationary states with target-policy action draws, of
// log eta; at or above -log(gamma) the cumulative-ratio bound cannot converge.
struct CurseDiagnostic {
  double log_eta_mean = 0.0;  // E_{s~stationary(pi_b), a~pi_e}[log eta(s,a)]
  double neg_log_gamma = 0.0;
  bool horizon_curse = false;
};
CurseDiagnostic curse_diagnostic(const TabularMdp& mdp, const Policy& pi_e,
                                 const Policy& pi_b, double gamma);

struct BoundReport {
  double rho = 0.0;  // oracle policy value, for reference
  double eb_m3 = 0.0;
  SeriesBound m1;
  SeriesBound m2;
  CurseDiagnostic curse;
};
BoundReport efficiency_bounds(const TabularMdp& mdp, const Policy& pi_e,
                              const Policy& pi_b, double gamma, WDenominator denom,
                              double tol = 1e-10);

}  // namespace ope
