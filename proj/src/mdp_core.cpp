#include "ope/mdp_core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace ope {

namespace {

// Dense LU solve with partial pivoting; refuses unusably conditioned systems.
VectorXd lu_solve(const MatrixXd& A, const VectorXd& b, const char* what) {
  Eigen::PartialPivLU<MatrixXd> lu(A);
  double rc = lu.rcond();
  if (!std::isfinite(rc) || rc < 1e-12) {
    std::ostringstream os;
    os << what << ": system is numerically singular (rcond = " << rc << ")";
    throw NumericsError(os.str());
  }
  VectorXd x = lu.solve(b);
  double resid = (A * x - b).cwiseAbs().maxCoeff();
  double scale = std::max(1.0, b.cwiseAbs().maxCoeff());
  if (!(resid <= 1e-10 * scale)) {
    std::ostringstream os;
    os << what << ": solve residual " << resid << " exceeds tolerance";
    throw NumericsError(os.str());
  }
  return x;
}

void check_gamma(double gamma) {
  if (!(gamma >= 0.0 && gamma < 1.0))
    throw std::invalid_argument("gamma must lie in [0, 1)");
}

// Strongly connected components, Kosaraju with iterative DFS.
std::vector<int> scc_labels(const std::vector<std::vector<int>>& adj) {
  int n = static_cast<int>(adj.size());
  std::vector<std::vector<int>> radj(n);
  for (int u = 0; u < n; ++u)
    for (int v : adj[u]) radj[v].push_back(u);

  std::vector<int> order;
  order.reserve(n);
  std::vector<char> seen(n, 0);
  for (int s = 0; s < n; ++s) {
    if (seen[s]) continue;
    std::vector<std::pair<int, int>> stack{{s, 0}};
    seen[s] = 1;
    while (!stack.empty()) {
      auto& [u, i] = stack.back();
      if (i < static_cast<int>(adj[u].size())) {
        int v = adj[u][i++];
        if (!seen[v]) {
          seen[v] = 1;
          stack.emplace_back(v, 0);
        }
      } else {
        order.push_back(u);
        stack.pop_back();
      }
    }
  }
  std::vector<int> label(n, -1);
  int c = 0;
  for (int k = n - 1; k >= 0; --k) {
    int s = order[k];
    if (label[s] != -1) continue;
    std::vector<int> stack{s};
    label[s] = c;
    while (!stack.empty()) {
      int u = stack.back();
      stack.pop_back();
      for (int v : radj[u])
        if (label[v] == -1) {
          label[v] = c;
          stack.push_back(v);
        }
    }
    ++c;
  }
  return label;
}

// Period of an irreducible chain: gcd over edges of (level[u] + 1 - level[v]).
int chain_period(const std::vector<std::vector<int>>& adj) {
  int n = static_cast<int>(adj.size());
  std::vector<int> level(n, -1);
  std::vector<int> queue{0};
  level[0] = 0;
  for (std::size_t h = 0; h < queue.size(); ++h) {
    int u = queue[h];
    for (int v : adj[u])
      if (level[v] == -1) {
        level[v] = level[u] + 1;
        queue.push_back(v);
      }
  }
  int g = 0;
  for (int u = 0; u < n; ++u)
    for (int v : adj[u]) g = std::gcd(g, std::abs(level[u] + 1 - level[v]));
  return g == 0 ? 1 : g;
}

}  // namespace

double discount_normalizer(double gamma, int t_max) {
  if (t_max < 0) throw std::invalid_argument("discount_normalizer: t_max < 0");
  if (gamma == 1.0) return 1.0 / (t_max + 1);
  return (1.0 - gamma) / (1.0 - std::pow(gamma, t_max + 1));
}

MatrixXd policy_transition(const TabularMdp& mdp, const Policy& pi) {
  const int S = mdp.n_states, A = mdp.n_actions;
  MatrixXd P(S, S);
  for (int s = 0; s < S; ++s) {
    P.row(s).setZero();
    for (int a = 0; a < A; ++a) P.row(s) += pi.probs(s, a) * mdp.trans.row(s * A + a);
  }
  return P;
}

VectorXd expected_reward(const TabularMdp& mdp, const Policy& pi) {
  return (pi.probs.cwiseProduct(mdp.reward_mean)).rowwise().sum();
}

VectorXd exact_v(const TabularMdp& mdp, const Policy& pi, double gamma) {
  check_gamma(gamma);
  const int S = mdp.n_states;
  MatrixXd A = MatrixXd::Identity(S, S) - gamma * policy_transition(mdp, pi);
  return lu_solve(A, expected_reward(mdp, pi), "exact_v");
}

QTable exact_q(const TabularMdp& mdp, const Policy& pi, double gamma) {
  VectorXd v = exact_v(mdp, pi, gamma);
  const int S = mdp.n_states, A = mdp.n_actions;
  QTable q(S, A);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a)
      q(s, a) = mdp.reward_mean(s, a) + gamma * mdp.trans.row(s * A + a).dot(v);
  return q;
}

double exact_policy_value(const TabularMdp& mdp, const Policy& pi, double gamma) {
  return (1.0 - gamma) * pi.initial.dot(exact_v(mdp, pi, gamma));
}

VectorXd discounted_visitation(const TabularMdp& mdp, const Policy& pi, double gamma) {
  check_gamma(gamma);
  const int S = mdp.n_states;
  MatrixXd A = MatrixXd::Identity(S, S) - gamma * policy_transition(mdp, pi).transpose();
  VectorXd d = lu_solve(A, ((1.0 - gamma) * pi.initial).eval(), "discounted_visitation");
  // flow solution is a distribution up to roundoff; scrub tiny negatives
  for (int s = 0; s < S; ++s) {
    if (d(s) < -1e-10) throw NumericsError("discounted_visitation: negative mass");
    d(s) = std::max(d(s), 0.0);
  }
  d /= d.sum();
  return d;
}

VectorXd stationary_distribution(const TabularMdp& mdp, const Policy& pi) {
  const int S = mdp.n_states;
  MatrixXd P = policy_transition(mdp, pi);

  std::vector<std::vector<int>> adj(S);
  for (int s = 0; s < S; ++s)
    for (int s2 = 0; s2 < S; ++s2)
      if (P(s, s2) > 0.0) adj[s].push_back(s2);

  std::vector<int> label = scc_labels(adj);
  int n_comp = *std::max_element(label.begin(), label.end()) + 1;
  if (n_comp > 1) {
    std::ostringstream os;
    os << "stationary_distribution: chain is reducible (" << n_comp
       << " communicating classes; representatives:";
    std::vector<int> rep(n_comp, -1);
    for (int s = 0; s < S; ++s)
      if (rep[label[s]] == -1) rep[label[s]] = s;
    for (int c = 0; c < n_comp; ++c) os << " state " << rep[c] << (c + 1 < n_comp ? "," : "");
    os << ")";
    throw IdentifiabilityError(os.str());
  }
  int period = chain_period(adj);
  if (period > 1) {
    std::ostringstream os;
    os << "stationary_distribution: chain is periodic with period " << period;
    throw IdentifiabilityError(os.str());
  }

  // (P' - I) d = 0 with the last equation replaced by sum(d) = 1.
  MatrixXd A = P.transpose() - MatrixXd::Identity(S, S);
  A.row(S - 1).setOnes();
  VectorXd b = VectorXd::Zero(S);
  b(S - 1) = 1.0;
  VectorXd d = lu_solve(A, b, "stationary_distribution");
  for (int s = 0; s < S; ++s) {
    if (d(s) < -1e-10) throw NumericsError("stationary_distribution: negative mass");
    d(s) = std::max(d(s), 0.0);
  }
  d /= d.sum();
  return d;
}

MatrixXd density_ratio_eta(const Policy& pi_e, const Policy& pi_b) {
  if (pi_e.probs.rows() != pi_b.probs.rows() || pi_e.probs.cols() != pi_b.probs.cols())
    throw std::invalid_argument("density_ratio_eta: policy shapes differ");
  const int S = static_cast<int>(pi_e.probs.rows());
  const int A = static_cast<int>(pi_e.probs.cols());
  MatrixXd eta(S, A);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) {
      double pb = pi_b.probs(s, a), pe = pi_e.probs(s, a);
      if (pb == 0.0) {
        if (pe > 0.0) {
          std::ostringstream os;
          os << "density_ratio_eta: target policy puts mass " << pe << " on (s=" << s
             << ", a=" << a << ") where behavior policy puts none";
          throw IdentifiabilityError(os.str());
        }
        eta(s, a) = 0.0;
      } else {
        eta(s, a) = pe / pb;
      }
    }
  return eta;
}

WTable oracle_w(const TabularMdp& mdp, const Policy& pi_e, const Policy& pi_b,
                double gamma, WDenominator denom) {
  VectorXd num = discounted_visitation(mdp, pi_e, gamma);
  VectorXd den = denom == WDenominator::InitialDist ? pi_b.initial
                                                    : stationary_distribution(mdp, pi_b);
  const int S = mdp.n_states;
  WTable w(S);
  for (int s = 0; s < S; ++s) {
    if (den(s) <= 0.0) {
      if (num(s) > 1e-15) {
        std::ostringstream os;
        os << "oracle_w: target visits state " << s << " (mass " << num(s)
           << ") that the behavior state distribution never covers";
        throw IdentifiabilityError(os.str());
      }
      w(s) = 0.0;
    } else {
      w(s) = num(s) / den(s);
    }
  }
  return w;
}

std::vector<MatrixXd> marginal_ratio_mu(const TabularMdp& mdp, const Policy& pi_e,
                                        const Policy& pi_b, int t_max) {
  if (t_max < 0) throw std::invalid_argument("marginal_ratio_mu: t_max < 0");
  const int S = mdp.n_states, A = mdp.n_actions;
  MatrixXd Pe = policy_transition(mdp, pi_e);
  MatrixXd Pb = policy_transition(mdp, pi_b);
  VectorXd de = pi_e.initial, db = pi_b.initial;
  std::vector<MatrixXd> mu;
  mu.reserve(t_max + 1);
  for (int t = 0; t <= t_max; ++t) {
    MatrixXd m(S, A);
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a) {
        double pb = db(s) * pi_b.probs(s, a);
        double pe = de(s) * pi_e.probs(s, a);
        if (pb <= 1e-300) {
          if (pe > 1e-15) {
            std::ostringstream os;
            os << "marginal_ratio_mu: at t=" << t << " target marginal puts mass " << pe
               << " on (s=" << s << ", a=" << a << ") where behavior marginal is zero";
            throw IdentifiabilityError(os.str());
          }
          m(s, a) = 0.0;
        } else {
          m(s, a) = pe / pb;
        }
      }
    mu.push_back(std::move(m));
    if (t < t_max) {
      de = (Pe.transpose() * de).eval();
      db = (Pb.transpose() * db).eval();
    }
  }
  return mu;
}

std::vector<QTable> truncated_q(const TabularMdp& mdp, const Policy& pi, double gamma,
                                int omega) {
  check_gamma(gamma);
  if (omega < 0) throw std::invalid_argument("truncated_q: omega < 0");
  const int S = mdp.n_states, A = mdp.n_actions;
  std::vector<QTable> q(omega + 1);
  q[omega] = mdp.reward_mean;
  for (int t = omega - 1; t >= 0; --t) {
    VectorXd v_next = (q[t + 1].cwiseProduct(pi.probs)).rowwise().sum();
    q[t] = QTable(S, A);
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a)
        q[t](s, a) = mdp.reward_mean(s, a) + gamma * mdp.trans.row(s * A + a).dot(v_next);
  }
  return q;
}

std::vector<std::vector<double>> cumulative_ratio_nu(const TrajectoryDataset& data,
                                                     const MatrixXd& eta) {
  std::vector<std::vector<double>> nu(data.trajs.size());
  for (std::size_t i = 0; i < data.trajs.size(); ++i) {
    const Trajectory& tr = data.trajs[i];
    nu[i].resize(tr.T());
    double acc = 1.0;
    for (int t = 0; t < tr.T(); ++t) {
      acc *= eta(tr.states[t], tr.actions[t]);
      nu[i][t] = acc;
    }
  }
  return nu;
}

}  // namespace ope
