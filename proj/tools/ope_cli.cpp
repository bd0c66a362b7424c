#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ope/estimators.hpp"
#include "ope/experiments.hpp"
#include "ope/mdp_core.hpp"
#include "ope/nuisance.hpp"
#include "ope/oracle.hpp"
#include "ope/rng.hpp"
#include "ope/sampling.hpp"
#include "ope/serialize.hpp"
#include "ope/types.hpp"

namespace {

using namespace ope;

WDenominator denom_from(const std::string& tok) {
  if (tok == "stationary") return WDenominator::StationaryDist;
  if (tok == "initial") return WDenominator::InitialDist;
  throw ParseError("denominator must be 'stationary' or 'initial', got '" + tok + "'");
}

InitRegime init_from(const std::string& tok) {
  if (tok == "arbitrary") return InitRegime::ArbitraryInit;
  if (tok == "burnin") return InitRegime::ErgodicBurnIn;
  if (tok == "stationary") return InitRegime::StationaryInit;
  throw ParseError("init must be one of arbitrary, burnin, stationary; got '" + tok + "'");
}

std::vector<std::string> split_tokens(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, ',')) {
    while (!cur.empty() && (cur.front() == ' ' || cur.front() == '\t')) cur.erase(cur.begin());
    while (!cur.empty() && (cur.back() == ' ' || cur.back() == '\t')) cur.pop_back();
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

void check_policy_shape(const char* which, int s, int a, const TabularMdp& mdp) {
  if (s != mdp.n_states || a != mdp.n_actions)
    throw ParseError(std::string(which) + ": policy shape (" + std::to_string(s) + "," +
                     std::to_string(a) + ") does not match the MDP (" +
                     std::to_string(mdp.n_states) + "," + std::to_string(mdp.n_actions) +
                     ")");
}

struct OracleArgs {
  std::string mdp_path, pi_e_path, pi_b_path, out_path;
  double gamma = -1.0;  // <0: use the MDP's
  std::string denom = "stationary";
  double tol = 1e-10;
};

int run_oracle(const OracleArgs& a) {
  TabularMdp mdp = load_mdp(a.mdp_path);
  if (a.gamma >= 0.0) {
    if (a.gamma >= 1.0) throw ParseError("--gamma must be in [0,1)");
    mdp.gamma = a.gamma;
  }
  int s_e = 0, a_e = 0, s_b = 0, a_b = 0;
  const Policy pi_e = load_policy(a.pi_e_path, &s_e, &a_e);
  const Policy pi_b = load_policy(a.pi_b_path, &s_b, &a_b);
  check_policy_shape("--pi-e", s_e, a_e, mdp);
  check_policy_shape("--pi-b", s_b, a_b, mdp);

  const BoundReport rep =
      efficiency_bounds(mdp, pi_e, pi_b, mdp.gamma, denom_from(a.denom), a.tol);

  auto series_line = [](const char* name, const SeriesBound& sb) {
    std::ostringstream o;
    o << name << " = ";
    if (sb.verdict == BoundVerdict::Divergent)
      o << "divergent (growth " << fmt_double(sb.growth) << ")";
    else
      o << fmt_double(sb.value) << " (k=" << sb.truncation_k
        << ", tail<=" << fmt_double(sb.tail_bound) << ")";
    return o.str();
  };
  std::cout << "rho = " << fmt_double(rep.rho) << "\n";
  std::cout << "eb_m3 = " << fmt_double(rep.eb_m3) << "\n";
  std::cout << series_line("eb_m1", rep.m1) << "\n";
  std::cout << series_line("eb_m2", rep.m2) << "\n";
  std::cout << "curse: log_eta_mean = " << fmt_double(rep.curse.log_eta_mean)
            << ", neg_log_gamma = " << fmt_double(rep.curse.neg_log_gamma)
            << ", horizon_curse = " << (rep.curse.horizon_curse ? "yes" : "no") << "\n";

  if (!a.out_path.empty()) {
    std::ostringstream csv;
    csv << "quantity,value,verdict,truncation_k,tail_bound,growth\n";
    csv << "rho," << fmt_double(rep.rho) << ",,,,\n";
    csv << "eb_m3," << fmt_double(rep.eb_m3) << ",,,,\n";
    auto series_row = [&](const char* name, const SeriesBound& sb) {
      csv << name << ',' << fmt_double(sb.value) << ','
          << (sb.verdict == BoundVerdict::Divergent ? "divergent" : "finite") << ','
          << sb.truncation_k << ',' << fmt_double(sb.tail_bound) << ','
          << fmt_double(sb.growth) << "\n";
    };
    series_row("eb_m1", rep.m1);
    series_row("eb_m2", rep.m2);
    csv << "log_eta_mean," << fmt_double(rep.curse.log_eta_mean) << ",,,,\n";
    csv << "neg_log_gamma," << fmt_double(rep.curse.neg_log_gamma) << ",,,,\n";
    csv << "horizon_curse," << (rep.curse.horizon_curse ? 1 : 0) << ",,,,\n";
    atomic_write(a.out_path, csv.str());
  }
  return 0;
}

struct SimulateArgs {
  std::string mdp_path, pi_b_path, out_path;
  int n_traj = 1;
  int horizon = 0;
  std::string init = "burnin";
  int burn_in = 1000;
  uint64_t seed = 0;
};

int run_simulate(const SimulateArgs& a) {
  const TabularMdp mdp = load_mdp(a.mdp_path);
  int s_b = 0, a_b = 0;
  const Policy pi_b = load_policy(a.pi_b_path, &s_b, &a_b);
  check_policy_shape("--pi-b", s_b, a_b, mdp);
  if (a.horizon < 1) throw ParseError("--horizon must be >= 1 (transitions per trajectory)");
  if (a.n_traj < 1) throw ParseError("--n-traj must be >= 1");
  SampleConfig sc;
  sc.N = a.n_traj;
  sc.T = a.horizon;
  sc.init = init_from(a.init);
  sc.burn_in = a.burn_in;
  sc.seed = a.seed;
  const TrajectoryDataset data = sample_trajectories(mdp, pi_b, sc);
  save_trajectories_csv(a.out_path, data);
  std::cout << "wrote " << data.N() << " trajectories x " << data.T()
            << " transitions to " << a.out_path << "\n";
  return 0;
}

struct EstimateArgs {
  std::string mdp_path, pi_e_path, pi_b_path, data_path, out_path;
  std::string estimators = "is,snis,dm,mis,drl3";
  std::string scheme = "adaptive";
  std::string w_source = "fitted";
  std::string q_source = "fitted";
  std::string denom = "stationary";
  double gamma = -1.0;
  uint64_t seed = 0;
  double alpha_ci = 0.05;
  int omega = -1;
  int horizon = -1;
};

int run_estimate(const EstimateArgs& a) {
  TabularMdp mdp = load_mdp(a.mdp_path);
  if (a.gamma >= 0.0) {
    if (a.gamma >= 1.0) throw ParseError("--gamma must be in [0,1)");
    mdp.gamma = a.gamma;
  }
  const double gamma = mdp.gamma;
  int s_e = 0, a_e = 0, s_b = 0, a_b = 0;
  const Policy pi_e = load_policy(a.pi_e_path, &s_e, &a_e);
  const Policy pi_b = load_policy(a.pi_b_path, &s_b, &a_b);
  check_policy_shape("--pi-e", s_e, a_e, mdp);
  check_policy_shape("--pi-b", s_b, a_b, mdp);
  if (a.w_source != "fitted" && a.w_source != "oracle")
    throw ParseError("--w must be 'fitted' or 'oracle'");
  if (a.q_source != "fitted" && a.q_source != "oracle")
    throw ParseError("--q must be 'fitted' or 'oracle'");

  const TrajectoryDataset data = load_trajectories_csv(a.data_path);
  const int N = data.N(), T = data.T();
  const TransitionDataset flat = trajectory_to_transitions(data);
  const MatrixXd eta = density_ratio_eta(pi_e, pi_b);
  const WDenominator denom = denom_from(a.denom);
  const int S = mdp.n_states, A = mdp.n_actions;
  const FeatureMap fm = FeatureMap::tabular(S, A);
  const int omega = a.omega >= 0 ? std::min(a.omega, T - 1) : default_omega(N, T);
  const int horizon = a.horizon >= 0 ? std::min(a.horizon, T - 1) : T - 1;

  // lazily shared tables
  std::optional<WTable> w_tab;
  std::optional<QTable> q_tab;
  auto get_w = [&]() -> const WTable& {
    if (!w_tab)
      w_tab = a.w_source == "oracle"
                  ? oracle_w(mdp, pi_e, pi_b, gamma, denom)
                  : fit_w_linear(flat, fm, eta, pi_e.initial, gamma).w;
    return *w_tab;
  };
  auto get_q = [&]() -> const QTable& {
    if (!q_tab)
      q_tab = a.q_source == "oracle"
                  ? exact_q(mdp, pi_e, gamma)
                  : fit_q_model_based(flat, S, A, pi_e, gamma, mdp.r_max).q;
    return *q_tab;
  };

  std::vector<EstimateReport> reports;
  for (const std::string& token : split_tokens(a.estimators)) {
    std::string name = token, suffix = a.scheme;
    const auto colon = token.find(':');
    if (colon != std::string::npos) {
      name = token.substr(0, colon);
      suffix = token.substr(colon + 1);
    }
    const bool drl = name == "drl1" || name == "drl2" || name == "drl3";
    if (colon != std::string::npos && !drl)
      throw ParseError("scheme suffix only applies to the drl estimators: " + token);
    FitScheme scheme = FitScheme::Adaptive;
    if (drl) {
      try {
        scheme = scheme_from_name(suffix);
      } catch (const std::exception& e) {
        throw ParseError(std::string("bad scheme '") + suffix + "': " + e.what());
      }
    }

    EstimateReport rep;
    if (name == "is") {
      rep = estimate_is(data, eta, gamma, horizon, a.alpha_ci);
    } else if (name == "snis") {
      rep = estimate_snis(data, eta, gamma, horizon, a.alpha_ci);
    } else if (name == "dm") {
      rep = estimate_dm(get_q(), pi_e, gamma);
      rep.N = N;
      rep.T = T;
    } else if (name == "mis") {
      rep = estimate_mis(flat, get_w(), eta, a.alpha_ci);
      rep.N = N;
      rep.T = T;
    } else if (name == "drl1" || name == "drl2") {
      const FitScheme eff = scheme == FitScheme::OracleNuisance ? FitScheme::Adaptive
                                                                : scheme;
      const FoldAssignment folds = make_folds(N, T, eff);
      std::vector<std::vector<QTable>> q_by_fold;
      if (scheme == FitScheme::OracleNuisance || a.q_source == "oracle") {
        q_by_fold.assign(static_cast<size_t>(folds.n_folds),
                         truncated_q(mdp, pi_e, gamma, omega));
      } else if (eff == FitScheme::Adaptive) {
        q_by_fold.push_back(
            fit_q_model_based_truncated(flat, S, A, pi_e, gamma, mdp.r_max, omega).q_by_t);
      } else {
        std::vector<TransitionDataset> subs(static_cast<size_t>(folds.n_folds));
        for (const Transition& tr : flat.items)
          subs[static_cast<size_t>(folds.fold_of(tr.traj_id, tr.t))].items.push_back(tr);
        for (const auto& sub : subs)
          q_by_fold.push_back(
              fit_q_model_based_truncated(sub, S, A, pi_e, gamma, mdp.r_max, omega).q_by_t);
      }
      if (name == "drl1") {
        rep = estimate_drl_m1(data, eta, pi_e, gamma, omega, q_by_fold, folds, a.alpha_ci);
      } else {
        const std::vector<std::vector<MatrixXd>> mu_by_fold(
            static_cast<size_t>(folds.n_folds), marginal_ratio_mu(mdp, pi_e, pi_b, omega));
        rep = estimate_drl_m2(data, mu_by_fold, pi_e, gamma, omega, q_by_fold, folds,
                              a.alpha_ci);
      }
    } else if (name == "drl3") {
      if (scheme == FitScheme::OracleNuisance) {
        NuisancePair pair;
        pair.q = exact_q(mdp, pi_e, gamma);
        pair.w = oracle_w(mdp, pi_e, pi_b, gamma, denom);
        pair.provenance["source"] = "oracle tables";
        rep = estimate_drl_m3(flat, N, T, pi_e, eta, gamma, scheme, {}, {}, &pair,
                              a.alpha_ci);
      } else {
        WFitter wf = [&](const TransitionDataset& sub, uint64_t) {
          return a.w_source == "oracle" ? oracle_w(mdp, pi_e, pi_b, gamma, denom)
                                        : fit_w_linear(sub, fm, eta, pi_e.initial, gamma).w;
        };
        QFitter qf = [&](const TransitionDataset& sub, uint64_t) {
          return a.q_source == "oracle"
                     ? exact_q(mdp, pi_e, gamma)
                     : fit_q_model_based(sub, S, A, pi_e, gamma, mdp.r_max).q;
        };
        rep = estimate_drl_m3(flat, N, T, pi_e, eta, gamma, scheme, wf, qf, nullptr,
                              a.alpha_ci);
      }
    } else {
      throw ParseError("unknown estimator token: " + token);
    }
    rep.estimator = token;
    rep.seed = a.seed;
    reports.push_back(rep);

    std::ostringstream line;
    line << token << " (" << scheme_name(rep.scheme) << "): rho_hat = "
         << fmt_double(rep.rho_hat);
    if (rep.ci_low && rep.ci_high)
      line << "  ci" << (1.0 - a.alpha_ci) * 100 << "% = [" << fmt_double(*rep.ci_low)
           << ", " << fmt_double(*rep.ci_high) << "]";
    std::cout << line.str() << "\n";
  }
  if (!a.out_path.empty()) save_reports_csv(a.out_path, reports);
  return 0;
}

struct ExperimentArgs {
  std::string config_path, out_path, plot_dir;
  int workers = 0;       // 0: keep config value
  long long seed = -1;   // <0: keep config value
  bool dry_run = false;
  bool coverage = false;
};

int run_experiment(const ExperimentArgs& a) {
  ExperimentConfig cfg = load_experiment_config(a.config_path);
  if (a.workers > 0) cfg.workers = a.workers;
  if (a.seed >= 0) cfg.master_seed = static_cast<uint64_t>(a.seed);

  if (a.dry_run) {
    const auto plan = plan_cells(cfg);
    std::cout << "estimator,N,T,setting,feasible,reason\n";
    for (const auto& r : plan)
      std::cout << r.estimator << ',' << r.N << ',' << r.T << ',' << r.setting << ','
                << (r.feasible ? 1 : 0) << ',' << r.reason << "\n";
    return 0;
  }
  if (a.out_path.empty()) throw ParseError("--out is required unless --dry-run is given");

  const MseTable table = a.coverage ? run_coverage(cfg) : run_replications(cfg);
  save_mse_csv(a.out_path, table);
  if (!a.plot_dir.empty()) {
    std::filesystem::create_directories(a.plot_dir);
    write_plot_data(a.plot_dir, table);
  }
  int hard_failures = 0;
  for (const auto& r : table.rows)
    if (r.skipped && r.skip_reason.rfind("all replications failed", 0) == 0) {
      ++hard_failures;
      std::cerr << "cell " << r.estimator << " N=" << r.N << " T=" << r.T
                << " setting=" << r.setting << ": " << r.skip_reason << "\n";
    }
  std::cout << "wrote " << table.rows.size() << " rows to " << a.out_path << "\n";
  return hard_failures > 0 ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tabular off-policy evaluation: oracle bounds, estimators, experiments"};
  app.require_subcommand(1);

  OracleArgs oa;
  CLI::App* oracle_cmd =
      app.add_subcommand("oracle", "Exact policy value, efficiency bounds, curse diagnostic");
  oracle_cmd->add_option("--mdp", oa.mdp_path, "MDP file")->required();
  oracle_cmd->add_option("--pi-e", oa.pi_e_path, "target policy file")->required();
  oracle_cmd->add_option("--pi-b", oa.pi_b_path, "behavior policy file")->required();
  oracle_cmd->add_option("--gamma", oa.gamma, "discount override");
  oracle_cmd->add_option("--denominator", oa.denom, "w denominator: stationary|initial");
  oracle_cmd->add_option("--tol", oa.tol, "series tail tolerance");
  oracle_cmd->add_option("--out", oa.out_path, "write the report as CSV");

  SimulateArgs sa;
  CLI::App* sim_cmd = app.add_subcommand("simulate", "Roll out the behavior policy");
  sim_cmd->add_option("--mdp", sa.mdp_path, "MDP file")->required();
  sim_cmd->add_option("--pi-b", sa.pi_b_path, "behavior policy file")->required();
  sim_cmd->add_option("--n-traj", sa.n_traj, "number of trajectories");
  sim_cmd->add_option("--horizon", sa.horizon, "transitions per trajectory")->required();
  sim_cmd->add_option("--init", sa.init, "s0 regime: arbitrary|burnin|stationary");
  sim_cmd->add_option("--burn-in", sa.burn_in, "burn-in steps for the burnin regime");
  sim_cmd->add_option("--seed", sa.seed, "master seed");
  sim_cmd->add_option("--out", sa.out_path, "output CSV")->required();

  EstimateArgs ea;
  CLI::App* est_cmd = app.add_subcommand("estimate", "Run estimators on logged data");
  est_cmd->add_option("--mdp", ea.mdp_path, "MDP file")->required();
  est_cmd->add_option("--pi-e", ea.pi_e_path, "target policy file")->required();
  est_cmd->add_option("--pi-b", ea.pi_b_path, "behavior policy file")->required();
  est_cmd->add_option("--data", ea.data_path, "trajectory CSV")->required();
  est_cmd->add_option("--estimators", ea.estimators, "comma list of estimator tokens");
  est_cmd->add_option("--scheme", ea.scheme,
                      "fitting scheme for drl tokens without a suffix");
  est_cmd->add_option("--w", ea.w_source, "w table source: fitted|oracle");
  est_cmd->add_option("--q", ea.q_source, "q table source: fitted|oracle");
  est_cmd->add_option("--denominator", ea.denom, "oracle w denominator");
  est_cmd->add_option("--gamma", ea.gamma, "discount override");
  est_cmd->add_option("--seed", ea.seed, "seed recorded in reports");
  est_cmd->add_option("--alpha-ci", ea.alpha_ci, "two-sided interval level");
  est_cmd->add_option("--omega", ea.omega, "drl truncation horizon (default: adaptive)");
  est_cmd->add_option("--horizon", ea.horizon, "is/snis horizon (default: T-1)");
  est_cmd->add_option("--out", ea.out_path, "write reports CSV");

  ExperimentArgs xa;
  CLI::App* exp_cmd = app.add_subcommand("experiment", "Monte-Carlo replication study");
  exp_cmd->add_option("--config", xa.config_path, "experiment config file")->required();
  exp_cmd->add_option("--out", xa.out_path, "results CSV");
  exp_cmd->add_option("--plot-dir", xa.plot_dir, "directory for plot-data files");
  exp_cmd->add_option("--workers", xa.workers, "worker thread override");
  exp_cmd->add_option("--seed", xa.seed, "master seed override");
  exp_cmd->add_flag("--dry-run", xa.dry_run, "print the cell grid without running");

  ExperimentArgs ca;
  CLI::App* cov_cmd =
      app.add_subcommand("coverage", "Replication study restricted to CI estimators");
  cov_cmd->add_option("--config", ca.config_path, "experiment config file")->required();
  cov_cmd->add_option("--out", ca.out_path, "results CSV");
  cov_cmd->add_option("--workers", ca.workers, "worker thread override");
  cov_cmd->add_option("--seed", ca.seed, "master seed override");
  cov_cmd->add_flag("--dry-run", ca.dry_run, "print the cell grid without running");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*oracle_cmd) return run_oracle(oa);
    if (*sim_cmd) return run_simulate(sa);
    if (*est_cmd) return run_estimate(ea);
    if (*exp_cmd) return run_experiment(xa);
    if (*cov_cmd) {
      ca.coverage = true;
      return run_experiment(ca);
    }
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const IdentifiabilityError& e) {
    std::cerr << "identifiability error: " << e.what() << "\n";
    return 3;
  } catch (const InfeasibleSchemeError& e) {
    std::cerr << "infeasible scheme: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
