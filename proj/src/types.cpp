#include "ope/types.hpp"

#include <cmath>
#include <sstream>

namespace ope {

namespace {

void check_dist_rows(const MatrixXd& m, double tol, const char* what) {
  for (int i = 0; i < m.rows(); ++i) {
    double row_sum = 0.0;
    for (int j = 0; j < m.cols(); ++j) {
      double v = m(i, j);
      if (!std::isfinite(v) || v < 0.0) {
        std::ostringstream os;
        os << what << ": entry (" << i << "," << j << ") = " << v
           << " is negative or non-finite";
        throw std::invalid_argument(os.str());
      }
      row_sum += v;
    }
    if (std::abs(row_sum - 1.0) > tol) {
      std::ostringstream os;
      os << what << ": row " << i << " sums to " << row_sum << ", expected 1";
      throw std::invalid_argument(os.str());
    }
  }
}

}  // namespace

void TabularMdp::validate() const {
  if (n_states <= 0 || n_actions <= 0)
    throw std::invalid_argument("TabularMdp: n_states and n_actions must be positive");
  if (trans.rows() != sa() || trans.cols() != n_states)
    throw std::invalid_argument("TabularMdp: transition matrix must be (S*A, S)");
  if (reward_mean.rows() != n_states || reward_mean.cols() != n_actions)
    throw std::invalid_argument("TabularMdp: reward_mean must be (S, A)");
  if (reward_var.rows() != n_states || reward_var.cols() != n_actions)
    throw std::invalid_argument("TabularMdp: reward_var must be (S, A)");
  if (!(r_max > 0.0) || !std::isfinite(r_max))
    throw std::invalid_argument("TabularMdp: r_max must be positive and finite");
  if (!(gamma >= 0.0 && gamma < 1.0))
    throw std::invalid_argument("TabularMdp: gamma must lie in [0, 1)");
  check_dist_rows(trans, 1e-12, "TabularMdp transitions");
  for (int s = 0; s < n_states; ++s)
    for (int a = 0; a < n_actions; ++a) {
      double m = reward_mean(s, a), v = reward_var(s, a);
      if (!std::isfinite(m) || m < 0.0 || m > r_max) {
        std::ostringstream os;
        os << "TabularMdp: reward_mean(" << s << "," << a << ") = " << m
           << " outside [0, r_max=" << r_max << "]";
        throw std::invalid_argument(os.str());
      }
      if (!std::isfinite(v) || v < 0.0) {
        std::ostringstream os;
        os << "TabularMdp: reward_var(" << s << "," << a << ") = " << v << " is negative";
        throw std::invalid_argument(os.str());
      }
    }
}

void Policy::validate(int n_states, int n_actions) const {
  if (probs.rows() != n_states || probs.cols() != n_actions)
    throw std::invalid_argument("Policy: probs must be (S, A)");
  if (initial.size() != n_states)
    throw std::invalid_argument("Policy: initial must have length S");
  check_dist_rows(probs, 1e-12, "Policy probs");
  check_dist_rows(initial.transpose(), 1e-12, "Policy initial");
}

void Trajectory::validate(int n_states, int n_actions) const {
  if (actions.empty()) throw std::invalid_argument("Trajectory: no transitions");
  if (states.size() != actions.size() + 1)
    throw std::invalid_argument("Trajectory: states must have length T+1");
  if (rewards.size() != actions.size())
    throw std::invalid_argument("Trajectory: rewards must have length T");
  for (int s : states)
    if (s < 0 || s >= n_states) throw std::invalid_argument("Trajectory: state out of range");
  for (int a : actions)
    if (a < 0 || a >= n_actions) throw std::invalid_argument("Trajectory: action out of range");
  for (double r : rewards)
    if (!std::isfinite(r)) throw std::invalid_argument("Trajectory: non-finite reward");
}

int TrajectoryDataset::T() const {
  if (trajs.empty()) throw std::invalid_argument("TrajectoryDataset: empty");
  int T0 = trajs.front().T();
  for (std::size_t i = 1; i < trajs.size(); ++i)
    if (trajs[i].T() != T0) {
      std::ostringstream os;
      os << "TrajectoryDataset: ragged lengths (trajectory 0 has T=" << T0
         << ", trajectory " << i << " has T=" << trajs[i].T() << ")";
      throw std::invalid_argument(os.str());
    }
  return T0;
}

void TrajectoryDataset::validate(int n_states, int n_actions) const {
  T();
  for (const auto& tr : trajs) tr.validate(n_states, n_actions);
}

}  // namespace ope
