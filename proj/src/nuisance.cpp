#include "ope/nuisance.hpp"

#include <cmath>
#include <sstream>
#include <vector>

#include "ope/mdp_core.hpp"
#include "ope/rng.hpp"

namespace ope {

namespace {

struct SolveOut {
  VectorXd x;
  double rcond = 0.0;
  bool ridged = false;
};

// Partial-pivot LU with a reciprocal-condition gate; optional single ridge
// retry sized 1e-8 |trace| / dim when the caller opted in.
SolveOut gated_solve(MatrixXd M, const VectorXd& b, const FitOptions& opts,
                     const char* what) {
  SolveOut out;
  Eigen::PartialPivLU<MatrixXd> lu(M);
  out.rcond = lu.rcond();
  bool bad = !std::isfinite(out.rcond) || out.rcond < opts.rcond_min;
  if (!bad) {
    out.x = lu.solve(b);
    // An exactly singular matrix (zero row and column for a state the sample
    // never touches) can slip past the rcond estimate with a zero pivot, so
    // the solution itself is the last gate.
    bad = !out.x.allFinite();
  }
  if (bad) {
    if (!opts.allow_ridge) {
      std::ostringstream os;
      os << what << ": moment matrix is singular or ill-conditioned (rcond = "
         << out.rcond << ", floor " << opts.rcond_min
         << "); enable ridge or change features";
      throw NumericsError(os.str());
    }
    double lam = 1e-8 * std::abs(M.trace()) / static_cast<double>(M.rows());
    if (lam <= 0.0) lam = 1e-8;
    M.diagonal().array() += lam;
    out.ridged = true;
    lu.compute(M);
    out.rcond = lu.rcond();
    if (!std::isfinite(out.rcond) || out.rcond < opts.rcond_min) {
      std::ostringstream os;
      os << what << ": still ill-conditioned after ridge (rcond = " << out.rcond << ")";
      throw NumericsError(os.str());
    }
    out.x = lu.solve(b);
    if (!out.x.allFinite()) {
      std::ostringstream os;
      os << what << ": solve produced non-finite coefficients after ridge";
      throw NumericsError(os.str());
    }
  }
  return out;
}

WFitResult finish_w_fit(const FeatureMap& fm, SolveOut so) {
  WFitResult res;
  res.beta = std::move(so.x);
  res.rcond = so.rcond;
  res.ridged = so.ridged;
  res.w = fm.state_feats * res.beta;
  for (int s = 0; s < res.w.size(); ++s)
    if (res.w(s) < 0.0) {
      res.w(s) = 0.0;
      ++res.clipped;
    }
  return res;
}

void check_gamma(double gamma) {
  if (!(gamma >= 0.0 && gamma < 1.0))
    throw std::invalid_argument("gamma must lie in [0, 1)");
}

}  // namespace

FeatureMap FeatureMap::tabular(int n_states, int n_actions) {
  FeatureMap fm;
  fm.state_feats = MatrixXd::Identity(n_states, n_states);
  fm.sa_feats = MatrixXd::Identity(n_states * n_actions, n_states * n_actions);
  return fm;
}

WFitResult fit_w_linear(const TransitionDataset& data, const FeatureMap& fm,
                        const MatrixXd& eta, const VectorXd& p0_e, double gamma,
                        const FitOptions& opts) {
  check_gamma(gamma);
  if (data.items.empty()) throw std::invalid_argument("fit_w_linear: empty dataset");
  const int d = static_cast<int>(fm.state_feats.cols());
  MatrixXd M = MatrixXd::Zero(d, d);
  for (const Transition& tr : data.items) {
    VectorXd ps = fm.state_feats.row(tr.s).transpose();
    VectorXd pn = fm.state_feats.row(tr.s_next).transpose();
    M.noalias() += (gamma * eta(tr.s, tr.a) * pn - ps) * ps.transpose();
  }
  M /= static_cast<double>(data.items.size());
  VectorXd rhs = -(1.0 - gamma) * (fm.state_feats.transpose() * p0_e);
  return finish_w_fit(fm, gated_solve(std::move(M), rhs, opts, "fit_w_linear"));
}

WFitResult fit_w_linear_exact(const TabularMdp& mdp, const Policy& pi_e,
                              const Policy& pi_b, const VectorXd& state_dist,
                              const FeatureMap& fm, double gamma,
                              const FitOptions& opts) {
  check_gamma(gamma);
  density_ratio_eta(pi_e, pi_b);  // surface support violations first
  const int d = static_cast<int>(fm.state_feats.cols());
  const int S = mdp.n_states;
  MatrixXd Pe = policy_transition(mdp, pi_e);
  MatrixXd M = MatrixXd::Zero(d, d);
  for (int s = 0; s < S; ++s) {
    VectorXd ps = fm.state_feats.row(s).transpose();
    VectorXd next = VectorXd::Zero(d);
    for (int s2 = 0; s2 < S; ++s2)
      if (Pe(s, s2) != 0.0) next += Pe(s, s2) * fm.state_feats.row(s2).transpose();
    M.noalias() += state_dist(s) * (gamma * next - ps) * ps.transpose();
  }
  VectorXd rhs = -(1.0 - gamma) * (fm.state_feats.transpose() * pi_e.initial);
  return finish_w_fit(fm, gated_solve(std::move(M), rhs, opts, "fit_w_linear_exact"));
}

namespace {

QFitResult finish_q_fit(const FeatureMap& fm, int n_states, int n_actions, SolveOut so) {
  QFitResult res;
  res.beta = std::move(so.x);
  res.rcond = so.rcond;
  res.ridged = so.ridged;
  VectorXd flat = fm.sa_feats * res.beta;
  res.q = QTable(n_states, n_actions);
  for (int s = 0; s < n_states; ++s)
    for (int a = 0; a < n_actions; ++a) res.q(s, a) = flat(s * n_actions + a);
  return res;
}

}  // namespace

QFitResult fit_q_lstdq(const TransitionDataset& data, const FeatureMap& fm,
                       const Policy& pi_e, double gamma, const FitOptions& opts) {
  check_gamma(gamma);
  if (data.items.empty()) throw std::invalid_argument("fit_q_lstdq: empty dataset");
  const int A = static_cast<int>(pi_e.probs.cols());
  const int d = static_cast<int>(fm.sa_feats.cols());
  MatrixXd M = MatrixXd::Zero(d, d);
  VectorXd b = VectorXd::Zero(d);
  for (const Transition& tr : data.items) {
    VectorXd phi = fm.sa_feats.row(tr.s * A + tr.a).transpose();
    VectorXd phibar = VectorXd::Zero(d);
    for (int a2 = 0; a2 < A; ++a2) {
      double p = pi_e.probs(tr.s_next, a2);
      if (p != 0.0) phibar += p * fm.sa_feats.row(tr.s_next * A + a2).transpose();
    }
    M.noalias() += phi * (phi - gamma * phibar).transpose();
    b += tr.r * phi;
  }
  M /= static_cast<double>(data.items.size());
  b /= static_cast<double>(data.items.size());
  return finish_q_fit(fm, static_cast<int>(pi_e.probs.rows()), A,
                      gated_solve(std::move(M), b, opts, "fit_q_lstdq"));
}

QFitResult fit_q_lstdq_exact(const TabularMdp& mdp, const Policy& pi_e,
                             const Policy& pi_b, const VectorXd& state_dist,
                             const FeatureMap& fm, double gamma, const FitOptions& opts) {
  check_gamma(gamma);
  const int S = mdp.n_states, A = mdp.n_actions;
  const int d = static_cast<int>(fm.sa_feats.cols());
  // phibar_e for every state, reused across (s,a)
  MatrixXd phibar(S, d);
  for (int s2 = 0; s2 < S; ++s2) {
    VectorXd acc = VectorXd::Zero(d);
    for (int a2 = 0; a2 < A; ++a2) {
      double p = pi_e.probs(s2, a2);
      if (p != 0.0) acc += p * fm.sa_feats.row(s2 * A + a2).transpose();
    }
    phibar.row(s2) = acc.transpose();
  }
  MatrixXd M = MatrixXd::Zero(d, d);
  VectorXd b = VectorXd::Zero(d);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) {
      double mass = state_dist(s) * pi_b.probs(s, a);
      if (mass == 0.0) continue;
      VectorXd phi = fm.sa_feats.row(s * A + a).transpose();
      VectorXd next = VectorXd::Zero(d);
      for (int s2 = 0; s2 < S; ++s2) {
        double p = mdp.trans(s * A + a, s2);
        if (p != 0.0) next += p * phibar.row(s2).transpose();
      }
      M.noalias() += mass * phi * (phi - gamma * next).transpose();
      b += mass * mdp.reward_mean(s, a) * phi;
    }
  return finish_q_fit(fm, S, A, gated_solve(std::move(M), b, opts, "fit_q_lstdq_exact"));
}

namespace {

// Empirical MDP from counts; unvisited (s,a) become self-loops with reward
// r_max/2. Never validate()d: empirical means of noisy rewards may leave
// [0, r_max].
TabularMdp empirical_mdp(const TransitionDataset& data, int S, int A, double gamma,
                         double r_max, int* imputed) {
  MatrixXd counts = MatrixXd::Zero(S * A, S);
  VectorXd totals = VectorXd::Zero(S * A);
  VectorXd rew_sum = VectorXd::Zero(S * A);
  for (const Transition& tr : data.items) {
    int row = tr.s * A + tr.a;
    counts(row, tr.s_next) += 1.0;
    totals(row) += 1.0;
    rew_sum(row) += tr.r;
  }
  TabularMdp hat;
  hat.n_states = S;
  hat.n_actions = A;
  hat.gamma = gamma;
  hat.r_max = r_max;
  hat.noise = RewardNoise::None;
  hat.trans = MatrixXd::Zero(S * A, S);
  hat.reward_mean = MatrixXd::Zero(S, A);
  hat.reward_var = MatrixXd::Zero(S, A);
  int n_imputed = 0;
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) {
      int row = s * A + a;
      if (totals(row) > 0.0) {
        hat.trans.row(row) = counts.row(row) / totals(row);
        hat.reward_mean(s, a) = rew_sum(row) / totals(row);
      } else {
        hat.trans(row, s) = 1.0;
        hat.reward_mean(s, a) = r_max / 2.0;
        ++n_imputed;
      }
    }
  if (imputed) *imputed = n_imputed;
  return hat;
}

}  // namespace

ModelBasedQ fit_q_model_based(const TransitionDataset& data, int n_states, int n_actions,
                              const Policy& pi_e, double gamma, double r_max) {
  check_gamma(gamma);
  if (data.items.empty()) throw std::invalid_argument("fit_q_model_based: empty dataset");
  ModelBasedQ out;
  TabularMdp hat = empirical_mdp(data, n_states, n_actions, gamma, r_max, &out.imputed);
  out.q = exact_q(hat, pi_e, gamma);
  return out;
}

ModelBasedQSeq fit_q_model_based_truncated(const TransitionDataset& data, int n_states,
                                           int n_actions, const Policy& pi_e,
                                           double gamma, double r_max, int omega) {
  check_gamma(gamma);
  if (data.items.empty())
    throw std::invalid_argument("fit_q_model_based_truncated: empty dataset");
  ModelBasedQSeq out;
  TabularMdp hat = empirical_mdp(data, n_states, n_actions, gamma, r_max, &out.imputed);
  out.q_by_t = truncated_q(hat, pi_e, gamma, omega);
  return out;
}

VectorXd v_from_q(const QTable& q, const Policy& pi_e) {
  if (q.rows() != pi_e.probs.rows() || q.cols() != pi_e.probs.cols())
    throw std::invalid_argument("v_from_q: q and policy shapes differ");
  return (q.cwiseProduct(pi_e.probs)).rowwise().sum();
}

MatrixXd corrupt_table(const MatrixXd& table, double mean, double sd, double lo,
                       double hi, uint64_t seed, int* clipped) {
  if (!(hi >= lo)) throw std::invalid_argument("corrupt_table: hi < lo");
  Rng rng(seed);
  MatrixXd out = table;
  int n_clip = 0;
  for (int i = 0; i < out.rows(); ++i)
    for (int j = 0; j < out.cols(); ++j) {
      out(i, j) += mean + sd * rng.gaussian();
      if (out(i, j) < lo) {
        out(i, j) = lo;
        ++n_clip;
      } else if (out(i, j) > hi) {
        out(i, j) = hi;
        ++n_clip;
      }
    }
  if (clipped) *clipped = n_clip;
  return out;
}

VectorXd residual_l(const TransitionDataset& data, const WTable& w,
                    const MatrixXd& f_states, const MatrixXd& eta,
                    const VectorXd& p0_e, double gamma) {
  check_gamma(gamma);
  if (data.items.empty()) throw std::invalid_argument("residual_l: empty dataset");
  const int k = static_cast<int>(f_states.cols());
  VectorXd acc = VectorXd::Zero(k);
  for (const Transition& tr : data.items)
    acc += gamma * w(tr.s) * eta(tr.s, tr.a) * f_states.row(tr.s_next).transpose() -
           w(tr.s) * f_states.row(tr.s).transpose();
  acc /= static_cast<double>(data.items.size());
  acc += (1.0 - gamma) * (f_states.transpose() * p0_e);
  return acc;
}

VectorXd residual_l_exact(const TabularMdp& mdp, const Policy& pi_e, const Policy& pi_b,
                          const VectorXd& state_dist, const WTable& w,
                          const MatrixXd& f_states, double gamma) {
  check_gamma(gamma);
  density_ratio_eta(pi_e, pi_b);
  const int S = mdp.n_states;
  MatrixXd Pe = policy_transition(mdp, pi_e);
  // E[gamma w(s) eta f(s') - w(s) f(s)] over s ~ state_dist, a ~ pi_b, s' ~ P:
  // the eta factor turns the action draw into pi_e, leaving Pe.
  VectorXd m = VectorXd::Zero(S);  // signed state weights hitting f
  VectorXd dw = state_dist.cwiseProduct(w);
  m += gamma * (Pe.transpose() * dw) - dw;
  m += (1.0 - gamma) * pi_e.initial;
  return f_states.transpose() * m;
}

}  // namespace ope
