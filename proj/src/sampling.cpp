#include "ope/sampling.hpp"

#include <cmath>
#include <span>
#include <vector>

#include "ope/mdp_core.hpp"
#include "ope/rng.hpp"

namespace ope {

namespace {

// Eigen is column-major, so rows are staged in a scratch buffer before the
// inverse-CDF draw.
int draw_row(Rng& rng, const MatrixXd& m, int row) {
  thread_local std::vector<double> buf;
  buf.resize(m.cols());
  for (int j = 0; j < m.cols(); ++j) buf[j] = m(row, j);
  return rng.categorical(std::span<const double>(buf.data(), buf.size()));
}

double draw_reward(Rng& rng, const TabularMdp& mdp, int s, int a) {
  double mean = mdp.reward_mean(s, a);
  double var = mdp.reward_var(s, a);
  switch (mdp.noise) {
    case RewardNoise::None:
      return mean;
    case RewardNoise::Gaussian:
      return mean + std::sqrt(var) * rng.gaussian();
    case RewardNoise::Uniform:
      // matching variance: half-width sqrt(3 var)
      return mean + std::sqrt(3.0 * var) * (2.0 * rng.uniform() - 1.0);
  }
  return mean;
}

}  // namespace

TrajectoryDataset sample_trajectories(const TabularMdp& mdp, const Policy& behavior,
                                      const SampleConfig& cfg) {
  mdp.validate();
  behavior.validate(mdp.n_states, mdp.n_actions);
  if (cfg.N < 1) throw std::invalid_argument("sample_trajectories: N must be >= 1");
  if (cfg.T < 1) throw std::invalid_argument("sample_trajectories: T must be >= 1");
  if (cfg.burn_in < 0) throw std::invalid_argument("sample_trajectories: burn_in < 0");

  const int A = mdp.n_actions;
  VectorXd stat;
  if (cfg.init == InitRegime::StationaryInit)
    stat = stationary_distribution(mdp, behavior);

  // row views used by the categorical sampler
  auto draw_initial = [&](Rng& rng) {
    const VectorXd& p0 = cfg.init == InitRegime::StationaryInit ? stat : behavior.initial;
    return rng.categorical(std::span<const double>(p0.data(), p0.size()));
  };

  TrajectoryDataset data;
  data.trajs.resize(cfg.N);
  for (int i = 0; i < cfg.N; ++i) {
    Rng rng(derive_seed(cfg.seed, {kStreamTrajectory, static_cast<uint64_t>(i)}));
    int s = draw_initial(rng);
    if (cfg.init == InitRegime::ErgodicBurnIn) {
      for (int k = 0; k < cfg.burn_in; ++k) {
        int a = draw_row(rng, behavior.probs, s);
        s = draw_row(rng, mdp.trans, s * A + a);
      }
    }
    Trajectory& tr = data.trajs[i];
    tr.states.reserve(cfg.T + 1);
    tr.actions.reserve(cfg.T);
    tr.rewards.reserve(cfg.T);
    tr.states.push_back(s);
    for (int t = 0; t < cfg.T; ++t) {
      int a = draw_row(rng, behavior.probs, s);
      double r = draw_reward(rng, mdp, s, a);
      int s2 = draw_row(rng, mdp.trans, s * A + a);
      tr.actions.push_back(a);
      tr.rewards.push_back(r);
      tr.states.push_back(s2);
      s = s2;
    }
  }
  return data;
}

TransitionDataset sample_transitions(const TabularMdp& mdp, const Policy& behavior,
                                     const VectorXd& state_dist, int n, uint64_t seed) {
  mdp.validate();
  behavior.validate(mdp.n_states, mdp.n_actions);
  if (n < 1) throw std::invalid_argument("sample_transitions: n must be >= 1");
  if (state_dist.size() != mdp.n_states)
    throw std::invalid_argument("sample_transitions: state_dist has wrong length");
  double total = 0.0;
  for (int s = 0; s < state_dist.size(); ++s) {
    if (state_dist(s) < 0.0)
      throw std::invalid_argument("sample_transitions: negative state_dist entry");
    total += state_dist(s);
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw std::invalid_argument("sample_transitions: state_dist must sum to 1");

  const int A = mdp.n_actions;
  TransitionDataset data;
  data.items.resize(n);
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, {kStreamTransition, static_cast<uint64_t>(i)}));
    Transition& tr = data.items[i];
    tr.traj_id = i;
    tr.t = 0;
    tr.s = rng.categorical(std::span<const double>(state_dist.data(), state_dist.size()));
    tr.a = draw_row(rng, behavior.probs, tr.s);
    tr.r = draw_reward(rng, mdp, tr.s, tr.a);
    tr.s_next = draw_row(rng, mdp.trans, tr.s * A + tr.a);
  }
  return data;
}

TransitionDataset trajectory_to_transitions(const TrajectoryDataset& data) {
  TransitionDataset out;
  std::size_t n = 0;
  for (const auto& tr : data.trajs) n += tr.T();
  out.items.reserve(n);
  for (std::size_t i = 0; i < data.trajs.size(); ++i) {
    const Trajectory& tr = data.trajs[i];
    for (int t = 0; t < tr.T(); ++t)
      out.items.push_back({static_cast<int>(i), t, tr.states[t], tr.actions[t],
                           tr.rewards[t], tr.states[t + 1]});
  }
  return out;
}

}  // namespace ope
