#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "ope/estimators.hpp"
#include "ope/experiments.hpp"
#include "ope/mdp_core.hpp"
#include "ope/nuisance.hpp"
#include "ope/oracle.hpp"
#include "ope/rng.hpp"
#include "ope/sampling.hpp"
#include "ope/serialize.hpp"
#include "ope/types.hpp"

namespace py = pybind11;
using namespace ope;

PYBIND11_MODULE(_core, m) {
  m.doc() = "Tabular off-policy evaluation: estimators, nuisances, exact bounds";

  py::register_exception<IdentifiabilityError>(m, "IdentifiabilityError");
  py::register_exception<InfeasibleSchemeError>(m, "InfeasibleSchemeError");
  py::register_exception<NumericsError>(m, "NumericsError");
  py::register_exception<ParseError>(m, "FormatError");

  py::enum_<RewardNoise>(m, "RewardNoise")
      .value("none", RewardNoise::None)
      .value("gaussian", RewardNoise::Gaussian)
      .value("uniform", RewardNoise::Uniform);
  py::enum_<WDenominator>(m, "WDenominator")
      .value("initial", WDenominator::InitialDist)
      .value("stationary", WDenominator::StationaryDist);
  py::enum_<InitRegime>(m, "InitRegime")
      .value("arbitrary", InitRegime::ArbitraryInit)
      .value("burnin", InitRegime::ErgodicBurnIn)
      .value("stationary", InitRegime::StationaryInit);
  py::enum_<FitScheme>(m, "FitScheme")
      .value("adaptive", FitScheme::Adaptive)
      .value("cross_trajectory", FitScheme::CrossTrajectory2)
      .value("cross_time", FitScheme::CrossTime4)
      .value("oracle", FitScheme::OracleNuisance);
  py::enum_<Setting>(m, "Setting")
      .value("both_correct", Setting::BothCorrect)
      .value("only_w_correct", Setting::OnlyWCorrect)
      .value("only_q_correct", Setting::OnlyQCorrect);
  py::enum_<BoundVerdict>(m, "BoundVerdict")
      .value("finite", BoundVerdict::Finite)
      .value("divergent", BoundVerdict::Divergent);

  py::class_<TabularMdp>(m, "TabularMdp")
      .def(py::init<>())
      .def_readwrite("n_states", &TabularMdp::n_states)
      .def_readwrite("n_actions", &TabularMdp::n_actions)
      .def_readwrite("trans", &TabularMdp::trans)
      .def_readwrite("reward_mean", &TabularMdp::reward_mean)
      .def_readwrite("reward_var", &TabularMdp::reward_var)
      .def_readwrite("gamma", &TabularMdp::gamma)
      .def_readwrite("r_max", &TabularMdp::r_max)
      .def_readwrite("noise", &TabularMdp::noise)
      .def("validate", &TabularMdp::validate);

  py::class_<Policy>(m, "Policy")
      .def(py::init<>())
      .def_readwrite("probs", &Policy::probs)
      .def_readwrite("initial", &Policy::initial)
      .def("validate", &Policy::validate, py::arg("n_states"), py::arg("n_actions"));

  py::class_<Trajectory>(m, "Trajectory")
      .def(py::init<>())
      .def_readwrite("states", &Trajectory::states)
      .def_readwrite("actions", &Trajectory::actions)
      .def_readwrite("rewards", &Trajectory::rewards)
      .def("T", &Trajectory::T);

  py::class_<TrajectoryDataset>(m, "TrajectoryDataset")
      .def(py::init<>())
      .def_readwrite("trajs", &TrajectoryDataset::trajs)
      .def("N", &TrajectoryDataset::N)
      .def("T", &TrajectoryDataset::T);

  py::class_<Transition>(m, "Transition")
      .def(py::init<>())
      .def_readwrite("traj_id", &Transition::traj_id)
      .def_readwrite("t", &Transition::t)
      .def_readwrite("s", &Transition::s)
      .def_readwrite("a", &Transition::a)
      .def_readwrite("r", &Transition::r)
      .def_readwrite("s_next", &Transition::s_next);

  py::class_<TransitionDataset>(m, "TransitionDataset")
      .def(py::init<>())
      .def_readwrite("items", &TransitionDataset::items)
      .def("size", &TransitionDataset::size);

  py::class_<NuisancePair>(m, "NuisancePair")
      .def(py::init<>())
      .def_readwrite("q", &NuisancePair::q)
      .def_readwrite("w", &NuisancePair::w)
      .def_readwrite("provenance", &NuisancePair::provenance);

  py::class_<SampleConfig>(m, "SampleConfig")
      .def(py::init<>())
      .def_readwrite("N", &SampleConfig::N)
      .def_readwrite("T", &SampleConfig::T)
      .def_readwrite("init", &SampleConfig::init)
      .def_readwrite("burn_in", &SampleConfig::burn_in)
      .def_readwrite("seed", &SampleConfig::seed);

  py::class_<FoldAssignment>(m, "FoldAssignment")
      .def_readonly("scheme", &FoldAssignment::scheme)
      .def_readonly("n_folds", &FoldAssignment::n_folds)
      .def("fold_of", &FoldAssignment::fold_of, py::arg("traj_id"), py::arg("t"))
      .def("fit_fold_for", &FoldAssignment::fit_fold_for, py::arg("eval_fold"));

  py::class_<EstimateReport>(m, "EstimateReport")
      .def_readonly("estimator", &EstimateReport::estimator)
      .def_readonly("scheme", &EstimateReport::scheme)
      .def_readonly("N", &EstimateReport::N)
      .def_readonly("T", &EstimateReport::T)
      .def_readonly("n", &EstimateReport::n)
      .def_readonly("rho_hat", &EstimateReport::rho_hat)
      .def_readonly("variance_hat", &EstimateReport::variance_hat)
      .def_readonly("ci_low", &EstimateReport::ci_low)
      .def_readonly("ci_high", &EstimateReport::ci_high)
      .def_readonly("alpha", &EstimateReport::alpha)
      .def_readonly("seed", &EstimateReport::seed)
      .def_readonly("wall_ms", &EstimateReport::wall_ms)
      .def_readonly("diagnostics", &EstimateReport::diagnostics);

  py::class_<FeatureMap>(m, "FeatureMap")
      .def(py::init<>())
      .def_readwrite("state_feats", &FeatureMap::state_feats)
      .def_readwrite("sa_feats", &FeatureMap::sa_feats)
      .def_static("tabular", &FeatureMap::tabular, py::arg("n_states"), py::arg("n_actions"));

  py::class_<FitOptions>(m, "FitOptions")
      .def(py::init<>())
      .def_readwrite("rcond_min", &FitOptions::rcond_min)
      .def_readwrite("allow_ridge", &FitOptions::allow_ridge);

  py::class_<WFitResult>(m, "WFitResult")
      .def_readonly("w", &WFitResult::w)
      .def_readonly("beta", &WFitResult::beta)
      .def_readonly("clipped", &WFitResult::clipped)
      .def_readonly("rcond", &WFitResult::rcond)
      .def_readonly("ridged", &WFitResult::ridged);

  py::class_<QFitResult>(m, "QFitResult")
      .def_readonly("q", &QFitResult::q)
      .def_readonly("beta", &QFitResult::beta)
      .def_readonly("rcond", &QFitResult::rcond)
      .def_readonly("ridged", &QFitResult::ridged);

  py::class_<ModelBasedQ>(m, "ModelBasedQ")
      .def_readonly("q", &ModelBasedQ::q)
      .def_readonly("imputed", &ModelBasedQ::imputed);

  py::class_<SeriesBound>(m, "SeriesBound")
      .def_readonly("value", &SeriesBound::value)
      .def_readonly("verdict", &SeriesBound::verdict)
      .def_readonly("truncation_k", &SeriesBound::truncation_k)
      .def_readonly("tail_bound", &SeriesBound::tail_bound)
      .def_readonly("growth", &SeriesBound::growth);

  py::class_<CurseDiagnostic>(m, "CurseDiagnostic")
      .def_readonly("log_eta_mean", &CurseDiagnostic::log_eta_mean)
      .def_readonly("neg_log_gamma", &CurseDiagnostic::neg_log_gamma)
      .def_readonly("horizon_curse", &CurseDiagnostic::horizon_curse);

  py::class_<BoundReport>(m, "BoundReport")
      .def_readonly("rho", &BoundReport::rho)
      .def_readonly("eb_m3", &BoundReport::eb_m3)
      .def_readonly("m1", &BoundReport::m1)
      .def_readonly("m2", &BoundReport::m2)
      .def_readonly("curse", &BoundReport::curse);

  py::class_<GridSpec>(m, "GridSpec")
      .def(py::init<>())
      .def_readwrite("width", &GridSpec::width)
      .def_readwrite("height", &GridSpec::height)
      .def_readwrite("slip", &GridSpec::slip)
      .def_readwrite("goal_x", &GridSpec::goal_x)
      .def_readwrite("goal_y", &GridSpec::goal_y)
      .def_readwrite("goal_reward", &GridSpec::goal_reward)
      .def_readwrite("step_reward", &GridSpec::step_reward)
      .def_readwrite("reward_sd", &GridSpec::reward_sd)
      .def_readwrite("gamma", &GridSpec::gamma);

  py::class_<PolicyPair>(m, "PolicyPair")
      .def(py::init<>())
      .def_readwrite("pi_e", &PolicyPair::pi_e)
      .def_readwrite("pi_b", &PolicyPair::pi_b);

  py::class_<ExperimentConfig>(m, "ExperimentConfig")
      .def(py::init<>())
      .def_readwrite("grid", &ExperimentConfig::grid)
      .def_readwrite("alpha_mix", &ExperimentConfig::alpha_mix)
      .def_readwrite("vi_sweeps", &ExperimentConfig::vi_sweeps)
      .def_readwrite("soften", &ExperimentConfig::soften)
      .def_readwrite("n_list", &ExperimentConfig::n_list)
      .def_readwrite("t_list", &ExperimentConfig::t_list)
      .def_readwrite("estimators", &ExperimentConfig::estimators)
      .def_readwrite("settings", &ExperimentConfig::settings)
      .def_readwrite("replications", &ExperimentConfig::replications)
      .def_readwrite("master_seed", &ExperimentConfig::master_seed)
      .def_readwrite("workers", &ExperimentConfig::workers)
      .def_readwrite("alpha_ci", &ExperimentConfig::alpha_ci)
      .def_readwrite("init", &ExperimentConfig::init)
      .def_readwrite("burn_in", &ExperimentConfig::burn_in)
      .def_readwrite("omega", &ExperimentConfig::omega)
      .def_readwrite("horizon", &ExperimentConfig::horizon)
      .def_readwrite("corrupt_mean", &ExperimentConfig::corrupt_mean)
      .def_readwrite("corrupt_sd", &ExperimentConfig::corrupt_sd)
      .def_readwrite("w_cap", &ExperimentConfig::w_cap)
      .def_readwrite("allow_ridge", &ExperimentConfig::allow_ridge);

  py::class_<MseRow>(m, "MseRow")
      .def_readonly("estimator", &MseRow::estimator)
      .def_readonly("N", &MseRow::N)
      .def_readonly("T", &MseRow::T)
      .def_readonly("setting", &MseRow::setting)
      .def_readonly("mse", &MseRow::mse)
      .def_readonly("bias2", &MseRow::bias2)
      .def_readonly("variance", &MseRow::variance)
      .def_readonly("coverage", &MseRow::coverage)
      .def_readonly("replications", &MseRow::replications)
      .def_readonly("skipped", &MseRow::skipped)
      .def_readonly("skip_reason", &MseRow::skip_reason)
      .def_readonly("mse_se", &MseRow::mse_se)
      .def_readonly("rho_oracle", &MseRow::rho_oracle);

  py::class_<MseTable>(m, "MseTable").def_readonly("rows", &MseTable::rows);

  // file formats
  m.def("load_mdp", &load_mdp, py::arg("path"));
  m.def("save_mdp", &save_mdp, py::arg("path"), py::arg("mdp"));
  m.def(
      "load_policy",
      [](const std::string& path) {
        int s = 0, a = 0;
        Policy pi = load_policy(path, &s, &a);
        return py::make_tuple(pi, s, a);
      },
      py::arg("path"));
  m.def("save_policy", &save_policy, py::arg("path"), py::arg("policy"),
        py::arg("n_states"), py::arg("n_actions"));
  m.def("load_trajectories_csv", &load_trajectories_csv, py::arg("path"));
  m.def("save_trajectories_csv", &save_trajectories_csv, py::arg("path"), py::arg("data"));
  m.def("load_transitions_csv", &load_transitions_csv, py::arg("path"));
  m.def("save_transitions_csv", &save_transitions_csv, py::arg("path"), py::arg("data"));

  // exact quantities
  m.def("policy_transition", &policy_transition, py::arg("mdp"), py::arg("pi"));
  m.def("exact_v", &exact_v, py::arg("mdp"), py::arg("pi"), py::arg("gamma"));
  m.def("exact_q", &exact_q, py::arg("mdp"), py::arg("pi"), py::arg("gamma"));
  m.def("exact_policy_value", &exact_policy_value, py::arg("mdp"), py::arg("pi"),
        py::arg("gamma"));
  m.def("discounted_visitation", &discounted_visitation, py::arg("mdp"), py::arg("pi"),
        py::arg("gamma"));
  m.def("stationary_distribution", &stationary_distribution, py::arg("mdp"), py::arg("pi"));
  m.def("density_ratio_eta", &density_ratio_eta, py::arg("pi_e"), py::arg("pi_b"));
  m.def("oracle_w", &oracle_w, py::arg("mdp"), py::arg("pi_e"), py::arg("pi_b"),
        py::arg("gamma"), py::arg("denominator"));
  m.def("marginal_ratio_mu", &marginal_ratio_mu, py::arg("mdp"), py::arg("pi_e"),
        py::arg("pi_b"), py::arg("t_max"));
  m.def("truncated_q", &truncated_q, py::arg("mdp"), py::arg("pi"), py::arg("gamma"),
        py::arg("omega"));
  m.def("discount_normalizer", &discount_normalizer, py::arg("gamma"), py::arg("t_max"));
  m.def("expected_reward", &expected_reward, py::arg("mdp"), py::arg("pi"));

  // sampling
  m.def("sample_trajectories", &sample_trajectories, py::arg("mdp"), py::arg("behavior"),
        py::arg("config"));
  m.def("sample_transitions", &sample_transitions, py::arg("mdp"), py::arg("behavior"),
        py::arg("state_dist"), py::arg("n"), py::arg("seed"));
  m.def("trajectory_to_transitions", &trajectory_to_transitions, py::arg("data"));

  // nuisances
  m.def("fit_w_linear", &fit_w_linear, py::arg("data"), py::arg("features"),
        py::arg("eta"), py::arg("p0_e"), py::arg("gamma"), py::arg("options") = FitOptions{});
  m.def("fit_w_linear_exact", &fit_w_linear_exact, py::arg("mdp"), py::arg("pi_e"),
        py::arg("pi_b"), py::arg("state_dist"), py::arg("features"), py::arg("gamma"),
        py::arg("options") = FitOptions{});
  m.def("fit_q_lstdq", &fit_q_lstdq, py::arg("data"), py::arg("features"), py::arg("pi_e"),
        py::arg("gamma"), py::arg("options") = FitOptions{});
  m.def("fit_q_lstdq_exact", &fit_q_lstdq_exact, py::arg("mdp"), py::arg("pi_e"),
        py::arg("pi_b"), py::arg("state_dist"), py::arg("features"), py::arg("gamma"),
        py::arg("options") = FitOptions{});
  m.def("fit_q_model_based", &fit_q_model_based, py::arg("data"), py::arg("n_states"),
        py::arg("n_actions"), py::arg("pi_e"), py::arg("gamma"), py::arg("r_max"));
  m.def("v_from_q", &v_from_q, py::arg("q"), py::arg("pi_e"));
  m.def(
      "corrupt_table",
      [](const MatrixXd& table, double mean, double sd, double lo, double hi,
         uint64_t seed) {
        int clipped = 0;
        MatrixXd out = corrupt_table(table, mean, sd, lo, hi, seed, &clipped);
        return py::make_tuple(out, clipped);
      },
      py::arg("table"), py::arg("mean"), py::arg("sd"), py::arg("lo"), py::arg("hi"),
      py::arg("seed"));
  m.def("residual_l", &residual_l, py::arg("data"), py::arg("w"), py::arg("f_states"),
        py::arg("eta"), py::arg("p0_e"), py::arg("gamma"));
  m.def("residual_l_exact", &residual_l_exact, py::arg("mdp"), py::arg("pi_e"),
        py::arg("pi_b"), py::arg("state_dist"), py::arg("w"), py::arg("f_states"),
        py::arg("gamma"));

  // estimators
  m.def("make_folds", py::overload_cast<int, int, FitScheme>(&make_folds), py::arg("N"),
        py::arg("T"), py::arg("scheme"));
  m.def("default_omega", &default_omega, py::arg("N"), py::arg("T"));
  m.def("estimate_is", &estimate_is, py::arg("data"), py::arg("eta"), py::arg("gamma"),
        py::arg("horizon"), py::arg("alpha") = 0.05);
  m.def("estimate_snis", &estimate_snis, py::arg("data"), py::arg("eta"), py::arg("gamma"),
        py::arg("horizon"), py::arg("alpha") = 0.05);
  m.def("estimate_dm", &estimate_dm, py::arg("q_hat"), py::arg("pi_e"), py::arg("gamma"));
  m.def("estimate_mis", &estimate_mis, py::arg("data"), py::arg("w_hat"), py::arg("eta"),
        py::arg("alpha") = 0.05);
  m.def("estimate_drl_m1", &estimate_drl_m1, py::arg("data"), py::arg("eta"),
        py::arg("pi_e"), py::arg("gamma"), py::arg("omega"), py::arg("q_by_fold"),
        py::arg("folds"), py::arg("alpha") = 0.05);
  m.def("estimate_drl_m2", &estimate_drl_m2, py::arg("data"), py::arg("mu_by_fold"),
        py::arg("pi_e"), py::arg("gamma"), py::arg("omega"), py::arg("q_by_fold"),
        py::arg("folds"), py::arg("alpha") = 0.05);
  m.def(
      "estimate_drl_m3",
      [](const TransitionDataset& data, int N, int T, const Policy& pi_e,
         const MatrixXd& eta, double gamma, FitScheme scheme, const WFitter& wf,
         const QFitter& qf, const NuisancePair* oracle, double alpha) {
        return estimate_drl_m3(data, N, T, pi_e, eta, gamma, scheme, wf, qf, oracle,
                               alpha);
      },
      py::arg("data"), py::arg("N"), py::arg("T"), py::arg("pi_e"), py::arg("eta"),
      py::arg("gamma"), py::arg("scheme"), py::arg("w_fitter") = nullptr,
      py::arg("q_fitter") = nullptr, py::arg("oracle") = nullptr, py::arg("alpha") = 0.05);
  m.def(
      "estimate_drl_m3_fitted",
      [](const TransitionDataset& data, int N, int T, const Policy& pi_e,
         const MatrixXd& eta, double gamma, FitScheme scheme, int n_states, int n_actions,
         double r_max, double alpha) {
        const FeatureMap fm = FeatureMap::tabular(n_states, n_actions);
        WFitter wf = [&, fm](const TransitionDataset& sub, uint64_t) {
          return fit_w_linear(sub, fm, eta, pi_e.initial, gamma).w;
        };
        QFitter qf = [&](const TransitionDataset& sub, uint64_t) {
          return fit_q_model_based(sub, n_states, n_actions, pi_e, gamma, r_max).q;
        };
        return estimate_drl_m3(data, N, T, pi_e, eta, gamma, scheme, wf, qf, nullptr,
                               alpha);
      },
      py::arg("data"), py::arg("N"), py::arg("T"), py::arg("pi_e"), py::arg("eta"),
      py::arg("gamma"), py::arg("scheme"), py::arg("n_states"), py::arg("n_actions"),
      py::arg("r_max") = 1.0, py::arg("alpha") = 0.05);
  m.def("psi_eval", &psi_eval, py::arg("transition"), py::arg("w"), py::arg("q"),
        py::arg("v"), py::arg("eta"), py::arg("dm_term"), py::arg("gamma"));
  m.def("confidence_interval", &confidence_interval, py::arg("rho_hat"),
        py::arg("variance_hat"), py::arg("n"), py::arg("alpha"));

  // bounds
  m.def("eb_m3", &eb_m3, py::arg("mdp"), py::arg("pi_e"), py::arg("pi_b"), py::arg("gamma"),
        py::arg("denominator"));
  m.def("eb_m1", &eb_m1, py::arg("mdp"), py::arg("pi_e"), py::arg("pi_b"), py::arg("gamma"),
        py::arg("tol") = 1e-10, py::arg("max_k") = 200000);
  m.def("eb_m2", &eb_m2, py::arg("mdp"), py::arg("pi_e"), py::arg("pi_b"), py::arg("gamma"),
        py::arg("tol") = 1e-10, py::arg("max_k") = 200000);
  m.def("curse_diagnostic", &curse_diagnostic, py::arg("mdp"), py::arg("pi_e"),
        py::arg("pi_b"), py::arg("gamma"));
  m.def("efficiency_bounds", &efficiency_bounds, py::arg("mdp"), py::arg("pi_e"),
        py::arg("pi_b"), py::arg("gamma"), py::arg("denominator"),
        py::arg("tol") = 1e-10);

  py::class_<CorruptSpec>(m, "CorruptSpec")
      .def(py::init<>())
      .def_readwrite("mean", &CorruptSpec::mean)
      .def_readwrite("sd", &CorruptSpec::sd)
      .def_readwrite("q_lo", &CorruptSpec::q_lo)
      .def_readwrite("q_hi", &CorruptSpec::q_hi)
      .def_readwrite("w_lo", &CorruptSpec::w_lo)
      .def_readwrite("w_hi", &CorruptSpec::w_hi);

  // experiment harness
  m.def("make_gridworld", &make_gridworld, py::arg("spec"));
  m.def("make_policy_pair", &make_policy_pair, py::arg("mdp"), py::arg("gamma"),
        py::arg("alpha_mix"), py::arg("seed") = 0, py::arg("sweeps") = 1000,
        py::arg("soften") = 0.05);
  m.def("apply_setting", &apply_setting, py::arg("pair"), py::arg("setting"),
        py::arg("seed"), py::arg("corrupt") = CorruptSpec{});
  m.def("run_replications",
        py::overload_cast<const ExperimentConfig&>(&run_replications), py::arg("config"));
  m.def("run_coverage", py::overload_cast<const ExperimentConfig&>(&run_coverage),
        py::arg("config"));
  m.def("load_experiment_config", &load_experiment_config, py::arg("path"));
  m.def("save_experiment_config", &save_experiment_config, py::arg("path"),
        py::arg("config"));
  m.def("save_mse_csv", &save_mse_csv, py::arg("path"), py::arg("table"));
  m.def("effective_horizon", &effective_horizon, py::arg("gamma"), py::arg("tol"),
        py::arg("cap"));
  m.def("derive_seed", [](uint64_t master, const std::vector<uint64_t>& path) {
    uint64_t s = mix64(master ^ 0xd1b54a32d192ed03ull);
    for (uint64_t p : path) s = mix64(s ^ mix64(p + 0x632be59bd9b4e019ull));
    return s;
  });
}
