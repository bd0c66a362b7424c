#include "ope/estimators.hpp"

#include <boost/math/distributions/normal.hpp>
#include <chrono>
#include <cmath>
#include <sstream>

#include "ope/mdp_core.hpp"
#include "ope/serialize.hpp"

namespace ope {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

// bias^2-free two-pass variance about a known center
double mean_sq_about(std::span<const double> xs, double center) {
  std::vector<double> sq(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    double d = xs[i] - center;
    sq[i] = d * d;
  }
  return pairwise_mean(sq);
}

void check_horizon(int horizon, int T, const char* what) {
  if (horizon < 0) throw std::invalid_argument(std::string(what) + ": horizon < 0");
  if (horizon > T - 1) {
    std::ostringstream os;
    os << what << ": horizon " << horizon << " exceeds the last observed step " << T - 1;
    throw std::invalid_argument(os.str());
  }
}

void finish_ci(EstimateReport& rep) {
  if (rep.variance_hat && rep.n > 0) {
    auto [lo, hi] = confidence_interval(rep.rho_hat, *rep.variance_hat, rep.n, rep.alpha);
    rep.ci_low = lo;
    rep.ci_high = hi;
  }
}

}  // namespace

std::string scheme_name(FitScheme s) {
  switch (s) {
    case FitScheme::Adaptive: return "adaptive";
    case FitScheme::CrossTrajectory2: return "cross-trajectory";
    case FitScheme::CrossTime4: return "cross-time";
    case FitScheme::OracleNuisance: return "oracle";
  }
  return "adaptive";
}

FitScheme scheme_from_name(const std::string& name) {
  if (name == "adaptive") return FitScheme::Adaptive;
  if (name == "cross-trajectory") return FitScheme::CrossTrajectory2;
  if (name == "cross-time") return FitScheme::CrossTime4;
  if (name == "oracle") return FitScheme::OracleNuisance;
  throw std::invalid_argument("unknown fitting scheme '" + name +
                              "' (want adaptive, cross-trajectory, cross-time or oracle)");
}

int FoldAssignment::fold_of(int traj_id, int t) const {
  switch (scheme) {
    case FitScheme::Adaptive:
    case FitScheme::OracleNuisance:
      return 0;
    case FitScheme::CrossTrajectory2:
      return traj_fold.at(traj_id);
    case FitScheme::CrossTime4:
      for (int f = 0; f < n_folds; ++f)
        if (t >= time_ranges[f].first && t < time_ranges[f].second) return f;
      throw std::out_of_range("FoldAssignment: t outside every time range");
  }
  return 0;
}

int FoldAssignment::fit_fold_for(int eval_fold) const {
  switch (scheme) {
    case FitScheme::Adaptive:
    case FitScheme::OracleNuisance:
      return 0;
    case FitScheme::CrossTrajectory2:
      return 1 - eval_fold;
    case FitScheme::CrossTime4:
      return (eval_fold + 2) % 4;
  }
  return 0;
}

FoldAssignment make_folds(int N, int T, FitScheme scheme) {
  FoldAssignment fa;
  fa.scheme = scheme;
  switch (scheme) {
    case FitScheme::Adaptive:
    case FitScheme::OracleNuisance:
      fa.n_folds = 1;
      break;
    case FitScheme::CrossTrajectory2: {
      if (N < 2)
        throw InfeasibleSchemeError(
            "cross-trajectory fitting needs at least 2 trajectories, got " +
            std::to_string(N));
      fa.n_folds = 2;
      int first = (N + 1) / 2;  // earlier fold takes the extra element
      fa.traj_fold.resize(N);
      for (int i = 0; i < N; ++i) fa.traj_fold[i] = i < first ? 0 : 1;
      break;
    }
    case FitScheme::CrossTime4: {
      if (T < 8)
        throw InfeasibleSchemeError(
            "cross-time fitting needs at least 8 transitions per trajectory, got T=" +
            std::to_string(T));
      fa.n_folds = 4;
      int base = T / 4, extra = T % 4;
      int begin = 0;
      for (int f = 0; f < 4; ++f) {
        int len = base + (f < extra ? 1 : 0);
        fa.time_ranges.emplace_back(begin, begin + len);
        begin += len;
      }
      break;
    }
  }
  return fa;
}

FoldAssignment make_folds(const TrajectoryDataset& data, FitScheme scheme) {
  return make_folds(data.N(), data.T(), scheme);
}

double pairwise_sum(std::span<const double> xs) {
  if (xs.size() <= 32) {
    double acc = 0.0;
    for (double x : xs) acc += x;
    return acc;
  }
  std::size_t half = xs.size() / 2;
  return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

double pairwise_mean(std::span<const double> xs) {
  if (xs.empty()) throw std::invalid_argument("pairwise_mean: empty");
  return pairwise_sum(xs) / static_cast<double>(xs.size());
}

int default_omega(int N, int T) {
  double raw = std::ceil(std::pow(std::log(static_cast<double>(N) + 2.0), 1.5));
  return std::min(T - 1, static_cast<int>(raw));
}

std::pair<double, double> confidence_interval(double rho_hat, double variance_hat,
                                              long n, double alpha) {
  if (n <= 0) throw std::invalid_argument("confidence_interval: n must be positive");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw std::invalid_argument("confidence_interval: alpha must lie in (0, 1)");
  if (variance_hat < 0.0)
    throw std::invalid_argument("confidence_interval: negative variance");
  boost::math::normal_distribution<double> norm;
  double z = boost::math::quantile(norm, 1.0 - alpha / 2.0);
  double half = z * std::sqrt(variance_hat / static_cast<double>(n));
  return {rho_hat - half, rho_hat + half};
}

EstimateReport estimate_is(const TrajectoryDataset& data, const MatrixXd& eta,
                           double gamma, int horizon, double alpha) {
  auto t0 = Clock::now();
  const int N = data.N(), T = data.T();
  check_horizon(horizon, T, "estimate_is");
  double c = discount_normalizer(gamma, horizon);
  std::vector<double> per_traj(N);
  for (int i = 0; i < N; ++i) {
    const Trajectory& tr = data.trajs[i];
    double nu = 1.0, disc = 1.0, acc = 0.0;
    for (int t = 0; t <= horizon; ++t) {
      nu *= eta(tr.states[t], tr.actions[t]);
      acc += disc * nu * tr.rewards[t];
      disc *= gamma;
    }
    per_traj[i] = c * acc;
  }
  EstimateReport rep;
  rep.estimator = "is";
  rep.scheme = FitScheme::OracleNuisance;  // per-step weights are exact
  rep.N = N;
  rep.T = T;
  rep.n = N;
  rep.alpha = alpha;
  rep.rho_hat = pairwise_mean(per_traj);
  rep.variance_hat = mean_sq_about(per_traj, rep.rho_hat);
  rep.diagnostics["horizon"] = horizon;
  finish_ci(rep);
  rep.wall_ms = elapsed_ms(t0);
  return rep;
}

EstimateReport estimate_snis(const TrajectoryDataset& data, const MatrixXd& eta,
                             double gamma, int horizon, double alpha) {
  auto t0 = Clock::now();
  const int N = data.N(), T = data.T();
  check_horizon(horizon, T, "estimate_snis");
  double c = discount_normalizer(gamma, horizon);
  // running nu per trajectory, advanced one step at a time
  std::vector<double> nu(N, 1.0);
  std::vector<double> wr(N), wsum(N);
  double total = 0.0, disc = 1.0;
  for (int t = 0; t <= horizon; ++t) {
    for (int i = 0; i < N; ++i) {
      const Trajectory& tr = data.trajs[i];
      nu[i] *= eta(tr.states[t], tr.actions[t]);
      wr[i] = nu[i] * tr.rewards[t];
      wsum[i] = nu[i];
    }
    double denom = pairwise_mean(wsum);
    if (denom == 0.0)
      throw NumericsError("estimate_snis: all importance weights vanish at t=" +
                          std::to_string(t) + "; cannot self-normalize");
    total += disc * pairwise_mean(wr) / denom;
    disc *= gamma;
  }
  EstimateReport rep;
  rep.estimator = "snis";
  rep.scheme = FitScheme::OracleNuisance;
  rep.N = N;
  rep.T = T;
  rep.n = N;
  rep.alpha = alpha;
  rep.rho_hat = c * total;
  rep.diagnostics["horizon"] = horizon;
  rep.wall_ms = elapsed_ms(t0);
  return rep;  // self-normalized: no plug-in variance reported
}

EstimateReport estimate_dm(const QTable& q_hat, const Policy& pi_e, double gamma) {
  auto t0 = Clock::now();
  VectorXd v = (q_hat.cwiseProduct(pi_e.probs)).rowwise().sum();
  EstimateReport rep;
  rep.estimator = "dm";
  rep.scheme = FitScheme::Adaptive;
  rep.rho_hat = (1.0 - gamma) * pi_e.initial.dot(v);
  rep.wall_ms = elapsed_ms(t0);
  return rep;  // deterministic given q_hat: no sampling variance attached
}

namespace {

// shared M1/M2 per-decision driver; weight_at(i, t) supplies the ratio used
// with (r_t - q_t) and lag_weight_at(i, t) the ratio used with v_t
template <typename WeightAt, typename LagAt>
EstimateReport drl_per_decision(const char* name, const TrajectoryDataset& data,
                                const Policy& pi_e, double gamma, int omega,
                                const std::vector<std::vector<QTable>>& q_by_fold,
                                const FoldAssignment& folds, double alpha,
                                WeightAt weight_at, LagAt lag_weight_at) {
  auto t0 = Clock::now();
  const int N = data.N(), T = data.T();
  check_horizon(omega, T, name);
  if (q_by_fold.empty()) throw std::invalid_argument(std::string(name) + ": no q tables");
  for (const auto& qs : q_by_fold)
    if (static_cast<int>(qs.size()) < omega + 1)
      throw std::invalid_argument(std::string(name) +
                                  ": need q tables for every t = 0..omega");
  if (folds.scheme == FitScheme::CrossTime4)
    throw InfeasibleSchemeError(std::string(name) +
                                ": time-split fitting is incompatible with "
                                "cumulative per-decision weights");
  double c = discount_normalizer(gamma, omega);
  std::vector<double> per_traj(N);
  for (int i = 0; i < N; ++i) {
    const Trajectory& tr = data.trajs[i];
    int fit = folds.fit_fold_for(folds.fold_of(i, 0));
    const auto& qs = q_by_fold.at(fit);
    double disc = 1.0, acc = 0.0;
    for (int t = 0; t <= omega; ++t) {
      int s = tr.states[t], a = tr.actions[t];
      const QTable& qt = qs[t];
      double v_t = 0.0;
      for (int a2 = 0; a2 < qt.cols(); ++a2) v_t += pi_e.probs(s, a2) * qt(s, a2);
      acc += disc * (weight_at(i, t) * (tr.rewards[t] - qt(s, a)) +
                     lag_weight_at(i, t) * v_t);
      disc *= gamma;
    }
    per_traj[i] = c * acc;
  }
  EstimateReport rep;
  rep.estimator = name;
  rep.scheme = folds.scheme;
  rep.N = N;
  rep.T = T;
  rep.n = N;
  rep.alpha = alpha;
  rep.rho_hat = pairwise_mean(per_traj);
  rep.variance_hat = mean_sq_about(per_traj, rep.rho_hat);
  rep.diagnostics["omega"] = omega;
  finish_ci(rep);
  rep.wall_ms = elapsed_ms(t0);
  return rep;
}

}  // namespace

EstimateReport estimate_drl_m1(const TrajectoryDataset& data, const MatrixXd& eta,
                               const Policy& pi_e, double gamma, int omega,
                               const std::vector<std::vector<QTable>>& q_by_fold,
                               const FoldAssignment& folds, double alpha) {
  // cumulative ratios per trajectory, computed once
  auto nu = cumulative_ratio_nu(data, eta);
  auto weight = [&](int i, int t) { return nu[i][t]; };
  auto lag = [&](int i, int t) { return t == 0 ? 1.0 : nu[i][t - 1]; };
  return drl_per_decision("drl1", data, pi_e, gamma, omega, q_by_fold, folds, alpha,
                          weight, lag);
}

EstimateReport estimate_drl_m2(const TrajectoryDataset& data,
                               const std::vector<std::vector<MatrixXd>>& mu_by_fold,
                               const Policy& pi_e, double gamma, int omega,
                               const std::vector<std::vector<QTable>>& q_by_fold,
                               const FoldAssignment& folds, double alpha) {
  for (const auto& ms : mu_by_fold)
    if (static_cast<int>(ms.size()) < omega + 1)
      throw std::invalid_argument("drl2: need mu tables for every t = 0..omega");
  auto weight = [&](int i, int t) {
    const Trajectory& tr = data.trajs[i];
    int fit = folds.fit_fold_for(folds.fold_of(i, 0));
    return mu_by_fold.at(fit)[t](tr.states[t], tr.actions[t]);
  };
  auto lag = [&](int i, int t) {
    if (t == 0) return 1.0;
    const Trajectory& tr = data.trajs[i];
    int fit = folds.fit_fold_for(folds.fold_of(i, 0));
    return mu_by_fold.at(fit)[t - 1](tr.states[t - 1], tr.actions[t - 1]);
  };
  return drl_per_decision("drl2", data, pi_e, gamma, omega, q_by_fold, folds, alpha,
                          weight, lag);
}

double psi_eval(const Transition& tr, const WTable& w, const QTable& q,
                const VectorXd& v, const MatrixXd& eta, double dm_term, double gamma) {
  return dm_term +
         w(tr.s) * eta(tr.s, tr.a) * (tr.r + gamma * v(tr.s_next) - q(tr.s, tr.a));
}

EstimateReport estimate_drl_m3(const TransitionDataset& data, int N, int T,
                               const Policy& pi_e, const MatrixXd& eta, double gamma,
                               FitScheme scheme, const WFitter& w_fitter,
                               const QFitter& q_fitter, const NuisancePair* oracle,
                               double alpha) {
  auto t0 = Clock::now();
  if (data.items.empty()) throw std::invalid_argument("drl3: empty dataset");
  FoldAssignment folds = make_folds(N, T, scheme);

  struct FoldFit {
    WTable w;
    QTable q;
    VectorXd v;
    double dm = 0.0;
  };
  std::vector<FoldFit> fits(folds.n_folds);

  if (scheme == FitScheme::OracleNuisance) {
    if (!oracle) throw std::invalid_argument("drl3: oracle scheme without tables");
    fits[0].w = oracle->w;
    fits[0].q = oracle->q;
  } else {
    if (!w_fitter || !q_fitter)
      throw std::invalid_argument("drl3: missing nuisance fitters");
    if (folds.n_folds == 1) {
      fits[0].w = w_fitter(data, 0);
      fits[0].q = q_fitter(data, 0);
    } else {
      std::vector<TransitionDataset> subsets(folds.n_folds);
      for (const Transition& tr : data.items)
        subsets[folds.fold_of(tr.traj_id, tr.t)].items.push_back(tr);
      for (int f = 0; f < folds.n_folds; ++f) {
        if (subsets[f].items.empty())
          throw InfeasibleSchemeError("drl3: fold " + std::to_string(f) +
                                      " holds no transitions");
        fits[f].w = w_fitter(subsets[f], static_cast<uint64_t>(f));
        fits[f].q = q_fitter(subsets[f], static_cast<uint64_t>(f));
      }
    }
  }
  for (auto& ff : fits) {
    ff.v = (ff.q.cwiseProduct(pi_e.probs)).rowwise().sum();
    ff.dm = (1.0 - gamma) * pi_e.initial.dot(ff.v);
  }

  std::vector<double> psi(data.items.size());
  for (std::size_t i = 0; i < data.items.size(); ++i) {
    const Transition& tr = data.items[i];
    const FoldFit& ff = fits[folds.fit_fold_for(folds.fold_of(tr.traj_id, tr.t))];
    psi[i] = psi_eval(tr, ff.w, ff.q, ff.v, eta, ff.dm, gamma);
  }

  EstimateReport rep;
  rep.estimator = "drl3";
  rep.scheme = scheme;
  rep.N = N;
  rep.T = T;
  rep.n = static_cast<long>(psi.size());
  rep.alpha = alpha;
  rep.rho_hat = pairwise_mean(psi);
  rep.variance_hat = mean_sq_about(psi, rep.rho_hat);
  rep.diagnostics["folds"] = folds.n_folds;
  finish_ci(rep);
  rep.wall_ms = elapsed_ms(t0);
  return rep;
}

EstimateReport estimate_mis(const TransitionDataset& data, const WTable& w_hat,
                            const MatrixXd& eta, double alpha) {
  auto t0 = Clock::now();
  if (data.items.empty()) throw std::invalid_argument("mis: empty dataset");
  std::vector<double> vals(data.items.size());
  for (std::size_t i = 0; i < data.items.size(); ++i) {
    const Transition& tr = data.items[i];
    vals[i] = eta(tr.s, tr.a) * w_hat(tr.s) * tr.r;
  }
  EstimateReport rep;
  rep.estimator = "mis";
  rep.scheme = FitScheme::Adaptive;
  rep.n = static_cast<long>(vals.size());
  rep.alpha = alpha;
  rep.rho_hat = pairwise_mean(vals);
  rep.variance_hat = mean_sq_about(vals, rep.rho_hat);
  finish_ci(rep);
  rep.wall_ms = elapsed_ms(t0);
  return rep;
}

void save_reports_csv(const std::string& path, const std::vector<EstimateReport>& reports) {
  std::ostringstream os;
  os << "estimator,scheme,N,T,n,rho_hat,var_hat,ci_low,ci_high,seed,wall_ms\n";
  for (const auto& r : reports) {
    os << r.estimator << "," << scheme_name(r.scheme) << "," << r.N << "," << r.T << ","
       << r.n << "," << fmt_double(r.rho_hat) << ",";
    if (r.variance_hat) os << fmt_double(*r.variance_hat);
    os << ",";
    if (r.ci_low) os << fmt_double(*r.ci_low);
    os << ",";
    if (r.ci_high) os << fmt_double(*r.ci_high);
    os << "," << r.seed << "," << fmt_double(r.wall_ms) << "\n";
  }
  atomic_write(path, os.str());
}

}  // namespace ope
