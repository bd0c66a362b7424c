#include "ope/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace ope {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
// growth this close to 1 (or above) is treated as non-contracting
constexpr double kGrowthEps = 1e-6;
constexpr int kPowerIters = 200;

// Conditional variance of the one-step return increment:
//   c(s,a) = var(r + gamma v(s') | s,a) = var_r(s,a) + gamma^2 var_P(v(s')|s,a)
// (reward noise and the next-state draw are independent given (s,a)).
MatrixXd step_variance(const TabularMdp& mdp, const VectorXd& v, double gamma) {
  const int S = mdp.n_states, A = mdp.n_actions;
  MatrixXd c(S, A);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) {
      auto row = mdp.trans.row(s * A + a);
      double ev = row.dot(v);
      double ev2 = row.dot(v.cwiseProduct(v));
      c(s, a) = mdp.reward_var(s, a) + gamma * gamma * std::max(ev2 - ev * ev, 0.0);
    }
  return c;
}

// One step of the squared-cumulative-ratio recursion:
//   out(s,a) = eta(s,a)^2 pi_b(a|s) sum_{s-,a-} P(s | s-,a-) m(s-,a-).
MatrixXd nu2_step(const TabularMdp& mdp, const Policy& pi_b, const MatrixXd& eta,
                  const MatrixXd& m) {
  const int S = mdp.n_states, A = mdp.n_actions;
  VectorXd inflow = VectorXd::Zero(S);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) {
      double mass = m(s, a);
      if (mass != 0.0) inflow += mass * mdp.trans.row(s * A + a).transpose();
    }
  MatrixXd out(S, A);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) {
      double e = eta(s, a);
      out(s, a) = e * e * pi_b.probs(s, a) * inflow(s);
    }
  return out;
}

MatrixXd nu2_initial(const Policy& pi_b, const MatrixXd& eta) {
  MatrixXd m = pi_b.probs;
  for (int s = 0; s < m.rows(); ++s)
    for (int a = 0; a < m.cols(); ++a) m(s, a) *= pi_b.initial(s) * eta(s, a) * eta(s, a);
  return m;
}

// Dominant growth factor of the recursion, by normalized power iteration
// seeded at the actual initial table (so unreachable modes do not inflate it).
double power_growth(const TabularMdp& mdp, const Policy& pi_b, const MatrixXd& eta) {
  MatrixXd m = nu2_initial(pi_b, eta);
  double s0 = m.sum();
  if (s0 <= 0.0) return 0.0;
  m /= s0;
  double ratio = 0.0;
  for (int it = 0; it < kPowerIters; ++it) {
    m = nu2_step(mdp, pi_b, eta, m);
    double s = m.sum();
    if (s <= 0.0) return 0.0;
    ratio = s;
    m /= s;
  }
  return ratio;
}

}  // namespace

double eb_m3(const TabularMdp& mdp, const Policy& pi_e, const Policy& pi_b,
             double gamma, WDenominator denom) {
  MatrixXd eta = density_ratio_eta(pi_e, pi_b);
  VectorXd v = exact_v(mdp, pi_e, gamma);
  MatrixXd c = step_variance(mdp, v, gamma);
  WTable w = oracle_w(mdp, pi_e, pi_b, gamma, denom);
  VectorXd d = denom == WDenominator::InitialDist ? pi_b.initial
                                                  : stationary_distribution(mdp, pi_b);
  double total = 0.0;
  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < mdp.n_actions; ++a) {
      double mass = d(s) * pi_b.probs(s, a);
      if (mass == 0.0) continue;
      double we = w(s) * eta(s, a);
      total += mass * we * we * c(s, a);
    }
  return total;
}

namespace {

// Shared series driver. weigh() must return the fully discounted k-th summand
// gamma^{2(k-1)} E[ratio_{k-1}^2 c] (scaling folded into the closures so no
// intermediate overflows); step() advances to the next k.
template <typename Step, typename Weigh>
SeriesBound run_series(double gamma, double tol, int max_k, double growth,
                       Step step, Weigh weigh) {
  SeriesBound out;
  out.growth = gamma * gamma * growth;
  if (out.growth >= 1.0 - kGrowthEps) {
    out.verdict = BoundVerdict::Divergent;
    out.value = kInf;
    out.tail_bound = kInf;
    return out;
  }
  double norm = (1.0 - gamma) * (1.0 - gamma);
  double prev_term = -1.0;
  for (int k = 1; k <= max_k; ++k) {
    double term = norm * weigh();
    if (!std::isfinite(term)) {
      out.verdict = BoundVerdict::Divergent;
      out.value = kInf;
      out.tail_bound = kInf;
      return out;
    }
    out.value += term;
    out.truncation_k = k;
    double obs = prev_term > 0.0 ? term / prev_term : 0.0;
    double rho = std::max(out.growth, std::min(obs, 1.0 - kGrowthEps));
    out.tail_bound = rho < 1.0 ? term * rho / (1.0 - rho) : kInf;
    if (term <= tol * std::max(out.value, 1e-300) &&
        out.tail_bound <= tol * std::max(out.value, 1e-300)) {
      return out;
    }
    prev_term = term;
    step();
  }
  return out;  // hit max_k; tail_bound reports the remaining gap
}

}  // namespace

SeriesBound eb_m1(const TabularMdp& mdp, const Policy& pi_e, const Policy& pi_b,
                  double gamma, double tol, int max_k) {
  MatrixXd eta = density_ratio_eta(pi_e, pi_b);
  VectorXd v = exact_v(mdp, pi_e, gamma);
  MatrixXd c = step_variance(mdp, v, gamma);
  double growth = power_growth(mdp, pi_b, eta);

  MatrixXd m = nu2_initial(pi_b, eta);
  double scale = 1.0;  // gamma^{2(k-1)} x accumulated table mass
  auto weigh = [&]() { return scale * (m.cwiseProduct(c)).sum(); };
  auto step = [&]() {
    m = nu2_step(mdp, pi_b, eta, m);
    double s = m.sum();
    scale *= gamma * gamma;
    if (s > 0.0) {
      scale *= s;
      m /= s;
    }
  };
  return run_series(gamma, tol, max_k, growth, step, weigh);
}

SeriesBound eb_m2(const TabularMdp& mdp, const Policy& pi_e, const Policy& pi_b,
                  double gamma, double tol, int max_k) {
  MatrixXd eta = density_ratio_eta(pi_e, pi_b);
  VectorXd v = exact_v(mdp, pi_e, gamma);
  MatrixXd c = step_variance(mdp, v, gamma);
  MatrixXd Pe = policy_transition(mdp, pi_e);
  MatrixXd Pb = policy_transition(mdp, pi_b);

  VectorXd de = pi_e.initial, db = pi_b.initial;
  int t = 0;
  double coef = 1.0;  // gamma^{2t}
  // gamma^{2t} E[mu_t^2 c], E[mu_t^2 c] = sum_{s,a} p_e^{(t)}(s,a)^2 / p_b^{(t)}(s,a) c(s,a)
  auto weigh = [&]() {
    double acc = 0.0;
    for (int s = 0; s < mdp.n_states; ++s)
      for (int a = 0; a < mdp.n_actions; ++a) {
        double pe = de(s) * pi_e.probs(s, a);
        double pb = db(s) * pi_b.probs(s, a);
        if (pb <= 1e-300) {
          if (pe > 1e-15)
            throw IdentifiabilityError(
                "eb_m2: target marginal escapes behavior support at t=" + std::to_string(t));
          continue;
        }
        acc += coef * (pe * pe / pb) * c(s, a);
      }
    return acc;
  };
  auto step = [&]() {
    de = (Pe.transpose() * de).eval();
    db = (Pb.transpose() * db).eval();
    coef *= gamma * gamma;
    ++t;
  };

  // growth probe: gamma^2 x asymptotic ratio of consecutive E[mu^2 c] terms
  double growth = 0.0;
  {
    VectorXd de2 = pi_e.initial, db2 = pi_b.initial;
    double prev = 0.0;
    for (int it = 0; it <= kPowerIters; ++it) {
      double cur = 0.0;
      for (int s = 0; s < mdp.n_states; ++s)
        for (int a = 0; a < mdp.n_actions; ++a) {
          double pe = de2(s) * pi_e.probs(s, a);
          double pb = db2(s) * pi_b.probs(s, a);
          if (pb > 1e-300) cur += pe * pe / pb * std::max(c(s, a), 1e-300);
        }
      if (it == kPowerIters && prev > 0.0) growth = cur / prev;
      prev = cur;
      de2 = (Pe.transpose() * de2).eval();
      db2 = (Pb.transpose() * db2).eval();
    }
  }
  return run_series(gamma, tol, max_k, growth, step, weigh);
}

std::vector<double> eb_m1_terms(const TabularMdp& mdp, const Policy& pi_e,
                                const Policy& pi_b, double gamma, int k_max) {
  MatrixXd eta = density_ratio_eta(pi_e, pi_b);
  VectorXd v = exact_v(mdp, pi_e, gamma);
  MatrixXd c = step_variance(mdp, v, gamma);
  double norm = (1.0 - gamma) * (1.0 - gamma);
  MatrixXd m = nu2_initial(pi_b, eta);
  std::vector<double> terms;
  double coef = 1.0;
  for (int k = 1; k <= k_max; ++k) {
    terms.push_back(norm * coef * (m.cwiseProduct(c)).sum());
    m = nu2_step(mdp, pi_b, eta, m);
    coef *= gamma * gamma;
  }
  return terms;
}

std::vector<double> eb_m2_terms(const TabularMdp& mdp, const Policy& pi_e,
                                const Policy& pi_b, double gamma, int k_max) {
  MatrixXd eta = density_ratio_eta(pi_e, pi_b);
  VectorXd v = exact_v(mdp, pi_e, gamma);
  MatrixXd c = step_variance(mdp, v, gamma);
  MatrixXd Pe = policy_transition(mdp, pi_e);
  MatrixXd Pb = policy_transition(mdp, pi_b);
  double norm = (1.0 - gamma) * (1.0 - gamma);
  VectorXd de = pi_e.initial, db = pi_b.initial;
  std::vector<double> terms;
  double coef = 1.0;
  for (int k = 1; k <= k_max; ++k) {
    double acc = 0.0;
    for (int s = 0; s < mdp.n_states; ++s)
      for (int a = 0; a < mdp.n_actions; ++a) {
        double pe = de(s) * pi_e.probs(s, a);
        double pb = db(s) * pi_b.probs(s, a);
        if (pb <= 1e-300) {
          if (pe > 1e-15)
            throw IdentifiabilityError(
                "eb_m2_terms: target marginal escapes behavior support at k=" +
                std::to_string(k - 1));
          continue;
        }
        acc += pe * pe / pb * c(s, a);
      }
    terms.push_back(norm * coef * acc);
    de = (Pe.transpose() * de).eval();
    db = (Pb.transpose() * db).eval();
    coef *= gamma * gamma;
  }
  return terms;
}

CurseDiagnostic curse_diagnostic(const TabularMdp& mdp, const Policy& pi_e,
                                 const Policy& pi_b, double gamma) {
  MatrixXd eta = density_ratio_eta(pi_e, pi_b);
  VectorXd d = stationary_distribution(mdp, pi_b);
  CurseDiagnostic out;
  out.neg_log_gamma = -std::log(gamma);
  double acc = 0.0;
  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < mdp.n_actions; ++a) {
      double pe = pi_e.probs(s, a);
      if (pe > 0.0) acc += d(s) * pe * std::log(eta(s, a));
    }
  out.log_eta_mean = acc;
  out.horizon_curse = acc >= out.neg_log_gamma;
  return out;
}

BoundReport efficiency_bounds(const TabularMdp& mdp, const Policy& pi_e,
                              const Policy& pi_b, double gamma, WDenominator denom,
                              double tol) {
  BoundReport rep;
  rep.rho = exact_policy_value(mdp, pi_e, gamma);
  rep.eb_m3 = eb_m3(mdp, pi_e, pi_b, gamma, denom);
  rep.m1 = eb_m1(mdp, pi_e, pi_b, gamma, tol);
  rep.m2 = eb_m2(mdp, pi_e, pi_b, gamma, tol);
  rep.curse = curse_diagnostic(mdp, pi_e, pi_b, gamma);
  return rep;
}

}  // namespace ope
