#pragma once

#include <string>

#include "ope/types.hpp"

namespace ope {

// Parse failures in any of the text formats below.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// All writers are atomic: content goes to a temp file in the target directory
// which is then renamed over the destination.
void atomic_write(const std::string& path, const std::string& content);

// Doubles are printed with 17 significant digits so that load(save(x))
// reproduces x bit for bit.
std::string fmt_double(double v);

// MDP text format:
//   tabular-mdp v1
//   n_states S / n_actions A / gamma g / r_max m / reward_noise kind
//   transitions   (S*A rows of S probabilities, (s,a) in s-major order)
//   reward_mean   (S rows of A)
//   reward_var    (S rows of A)
// '#' starts a comment anywhere; blank lines are ignored.
void save_mdp(const std::string& path, const TabularMdp& mdp);
TabularMdp load_mdp(const std::string& path);

// Policy text format: tabular-policy v1, sizes, 'probs' (S rows of A),
// 'initial' (one row of S).
void save_policy(const std::string& path, const Policy& pi, int n_states, int n_actions);
Policy load_policy(const std::string& path, int* n_states = nullptr, int* n_actions = nullptr);

// Nuisance tables share the matrix format, tagged with a kind (q or w) and a
// free-text provenance line describing how the table was produced.
void save_nuisance_q(const std::string& path, const QTable& q, const std::string& provenance);
void save_nuisance_w(const std::string& path, const WTable& w, const std::string& provenance);
QTable load_nuisance_q(const std::string& path, std::string* provenance = nullptr);
WTable load_nuisance_w(const std::string& path, std::string* provenance = nullptr);

// Logged-data CSV: header traj_id,t,s,a,r,s_next; rewards at 17 significant
// digits; rows grouped by trajectory in time order.
void save_trajectories_csv(const std::string& path, const TrajectoryDataset& data);
TrajectoryDataset load_trajectories_csv(const std::string& path);
void save_transitions_csv(const std::string& path, const TransitionDataset& data);
TransitionDataset load_transitions_csv(const std::string& path);

}  // namespace ope
