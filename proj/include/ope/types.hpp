#pragma once

#include <Eigen/Dense>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace ope {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Errors with a dedicated CLI exit code.
struct IdentifiabilityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InfeasibleSchemeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// Raised by solvers on non-finite input or unusably ill-conditioned systems.
struct NumericsError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class RewardNoise { None, Gaussian, Uniform };

// Finite MDP with state-action reward means and conditional reward variances.
// trans.row(s * n_actions + a) holds the next-state distribution for (s,a).
struct TabularMdp {
  int n_states = 0;
  int n_actions = 0;
  MatrixXd trans;        // (S*A, S)
  MatrixXd reward_mean;  // (S, A), entries in [0, r_max]
  MatrixXd reward_var;   // (S, A), var of r given (s,a); independent of s'
  double gamma = 0.9;    // default discount carried with the instance
  double r_max = 1.0;
  RewardNoise noise = RewardNoise::Gaussian;

  int sa() const { return n_states * n_actions; }
  auto next_dist(int s, int a) const { return trans.row(s * n_actions + a); }
  void validate() const;
};

// Stationary Markov policy plus its initial state distribution.
struct Policy {
  MatrixXd probs;    // (S, A)
  VectorXd initial;  // (S)

  void validate(int n_states, int n_actions) const;
};

// q-values are (S, A) matrices, state weight functions are length-S vectors.
using QTable = MatrixXd;
using WTable = VectorXd;

// One logged step. traj_id/t keep provenance for cross-fitting.
struct Transition {
  int traj_id = 0;
  int t = 0;
  int s = 0;
  int a = 0;
  double r = 0.0;
  int s_next = 0;
};

struct TransitionDataset {
  std::vector<Transition> items;

  std::size_t size() const { return items.size(); }
};

// One behavior-policy rollout: states s_0..s_T, actions/rewards for t=0..T-1,
// i.e. T transitions and the final next-state kept.
struct Trajectory {
  std::vector<int> states;
  std::vector<int> actions;
  std::vector<double> rewards;

  int T() const { return static_cast<int>(actions.size()); }
  void validate(int n_states, int n_actions) const;
};

struct TrajectoryDataset {
  std::vector<Trajectory> trajs;

  int N() const { return static_cast<int>(trajs.size()); }
  // Common per-trajectory transition count; throws if ragged or empty.
  int T() const;
  void validate(int n_states, int n_actions) const;
};

// Fitted or oracle nuisance pair for the stationary-ratio estimators.
struct NuisancePair {
  QTable q;
  WTable w;
  std::map<std::string, std::string> provenance;
};

}  // namespace ope
