#pragma once

#include <cstdint>

#include "ope/types.hpp"

namespace ope {

// How s_0 is drawn for logged rollouts. ErgodicBurnIn runs the behavior chain
// for burn_in unrecorded steps from the initial distribution; StationaryInit
// draws s_0 from the exact stationary distribution (chain must be ergodic).
enum class InitRegime { ArbitraryInit, ErgodicBurnIn, StationaryInit };

struct SampleConfig {
  int N = 1;
  int T = 1;               // transitions per trajectory
  InitRegime init = InitRegime::ErgodicBurnIn;
  int burn_in = 1000;
  uint64_t seed = 0;
};

// N independent behavior-policy rollouts of T transitions each. Trajectory i
// uses its own derived stream, so the result is independent of worker count
// and of N (trajectory i is the same in an N=10 and an N=100 run).
TrajectoryDataset sample_trajectories(const TabularMdp& mdp, const Policy& behavior,
                                      const SampleConfig& cfg);

// n i.i.d. transitions with s ~ state_dist, a ~ behavior(.|s), r and s_next
// from the MDP. traj_id is the draw index, t = 0.
TransitionDataset sample_transitions(const TabularMdp& mdp, const Policy& behavior,
                                     const VectorXd& state_dist, int n, uint64_t seed);

// Flatten rollouts to (s,a,r,s') rows in trajectory-major, time-major order.
TransitionDataset trajectory_to_transitions(const TrajectoryDataset& data);

}  // namespace ope
