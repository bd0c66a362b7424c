#include "ope/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "ope/nuisance.hpp"
#include "ope/rng.hpp"
#include "ope/serialize.hpp"

namespace ope {

TabularMdp make_gridworld(const GridSpec& g) {
  if (g.width < 1 || g.height < 1)
    throw std::invalid_argument("gridworld: width and height must be >= 1");
  if (static_cast<long>(g.width) * g.height > 400)
    throw std::invalid_argument("gridworld: at most 400 cells");
  if (g.slip < 0.0 || g.slip > 1.0)
    throw std::invalid_argument("gridworld: slip must be in [0,1]");
  if (g.reward_sd < 0.0) throw std::invalid_argument("gridworld: reward_sd must be >= 0");
  const int W = g.width, H = g.height, S = W * H, A = 4;
  const int gx = g.goal_x < 0 ? W - 1 : g.goal_x;
  const int gy = g.goal_y < 0 ? H - 1 : g.goal_y;
  if (gx >= W || gy >= H) throw std::invalid_argument("gridworld: goal outside the grid");

  // actions: 0 up, 1 right, 2 down, 3 left; walls bounce back
  const int dx[4] = {0, 1, 0, -1};
  const int dy[4] = {-1, 0, 1, 0};
  auto step = [&](int s, int dir) {
    int x = s % W, y = s / W;
    int nx = x + dx[dir], ny = y + dy[dir];
    if (nx < 0 || nx >= W || ny < 0 || ny >= H) return s;
    return ny * W + nx;
  };

  TabularMdp m;
  m.n_states = S;
  m.n_actions = A;
  m.trans = MatrixXd::Zero(S * A, S);
  m.reward_mean = MatrixXd::Zero(S, A);
  m.reward_var = MatrixXd::Constant(S, A, g.reward_sd * g.reward_sd);
  m.gamma = g.gamma;
  m.noise = g.reward_sd > 0.0 ? RewardNoise::Gaussian : RewardNoise::None;
  const int goal = gy * W + gx;
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < A; ++a) {
      const int row = s * A + a;
      m.trans(row, step(s, a)) += 1.0 - g.slip;
      m.trans(row, step(s, (a + 1) % 4)) += g.slip / 2.0;
      m.trans(row, step(s, (a + 3) % 4)) += g.slip / 2.0;
      m.reward_mean(s, a) = s == goal ? g.goal_reward : g.step_reward;
    }
  }
  m.r_max = std::max(std::abs(g.goal_reward), std::abs(g.step_reward));
  if (m.r_max == 0.0) m.r_max = 1.0;
  m.validate();
  return m;
}

namespace {

MatrixXd q_iterate(const TabularMdp& m, double gamma, int sweeps) {
  const int S = m.n_states, A = m.n_actions;
  MatrixXd q = MatrixXd::Zero(S, A);
  VectorXd vmax = VectorXd::Zero(S);
  for (int k = 0; k < sweeps; ++k) {
    for (int s = 0; s < S; ++s) vmax(s) = q.row(s).maxCoeff();
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a)
        q(s, a) = m.reward_mean(s, a) + gamma * m.trans.row(s * A + a).dot(vmax);
  }
  return q;
}

MatrixXd greedy_soft(const MatrixXd& q, double soften, uint64_t seed) {
  const int S = static_cast<int>(q.rows()), A = static_cast<int>(q.cols());
  MatrixXd probs = MatrixXd::Constant(S, A, soften / A);
  for (int s = 0; s < S; ++s) {
    const double best = q.row(s).maxCoeff();
    int pick = -1;
    uint64_t pick_key = 0;
    for (int a = 0; a < A; ++a) {
      if (q(s, a) == best) {
        uint64_t key = (static_cast<uint64_t>(a) + seed) % static_cast<uint64_t>(A);
        if (pick < 0 || key < pick_key) {
          pick = a;
          pick_key = key;
        }
      }
    }
    probs(s, pick) += 1.0 - soften;
  }
  return probs;
}

}  // namespace

PolicyPair make_policy_pair(const TabularMdp& mdp, double gamma, double alpha_mix,
                            uint64_t seed, int sweeps, double soften) {
  if (alpha_mix < 0.0 || alpha_mix > 1.0)
    throw std::invalid_argument("alpha_mix must be in [0,1]");
  if (sweeps < 1) throw std::invalid_argument("sweeps must be >= 1");
  if (soften <= 0.0 || soften >= 1.0)
    throw std::invalid_argument("soften must be in (0,1)");
  const int S = mdp.n_states, A = mdp.n_actions;
  const MatrixXd q_star = q_iterate(mdp, gamma, sweeps);
  const MatrixXd q_plus = q_iterate(mdp, gamma, (sweeps + 5) / 6);
  PolicyPair out;
  out.pi_e.probs = greedy_soft(q_star, soften, seed);
  out.pi_b.probs = alpha_mix * out.pi_e.probs + (1.0 - alpha_mix) * greedy_soft(q_plus, soften, seed);
  out.pi_e.initial = VectorXd::Constant(S, 1.0 / S);
  out.pi_b.initial = out.pi_e.initial;
  out.pi_e.validate(S, A);
  out.pi_b.validate(S, A);
  return out;
}

std::string setting_name(Setting s) {
  switch (s) {
    case Setting::BothCorrect: return "both";
    case Setting::OnlyWCorrect: return "only-w";
    case Setting::OnlyQCorrect: return "only-q";
  }
  return "both";
}

Setting setting_from_name(const std::string& token) {
  if (token == "both" || token == "1") return Setting::BothCorrect;
  if (token == "only-w" || token == "2") return Setting::OnlyWCorrect;
  if (token == "only-q" || token == "3") return Setting::OnlyQCorrect;
  throw std::invalid_argument("unknown setting token: " + token +
                              " (expected both, only-w, only-q or 1, 2, 3)");
}

NuisancePair apply_setting(const NuisancePair& pair, Setting setting, uint64_t seed,
                           const CorruptSpec& cs) {
  NuisancePair out = pair;
  if (setting == Setting::OnlyWCorrect) {
    out.q = corrupt_table(pair.q, cs.mean, cs.sd, cs.q_lo, cs.q_hi,
                          derive_seed(seed, {kStreamCorruptQ}));
    out.provenance["setting"] = "q corrupted";
  } else if (setting == Setting::OnlyQCorrect) {
    out.w = corrupt_table(pair.w, cs.mean, cs.sd, cs.w_lo, cs.w_hi,
                          derive_seed(seed, {kStreamCorruptW}))
                .col(0);
    out.provenance["setting"] = "w corrupted";
  }
  return out;
}

// ---------------------------------------------------------------------------
// config file

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, ',')) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

long parse_long_or(const std::string& key, const std::string& val, int line) {
  try {
    size_t pos = 0;
    long v = std::stol(val, &pos);
    if (pos != val.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ParseError("config line " + std::to_string(line) + ": key '" + key +
                     "' expects an integer, got '" + val + "'");
  }
}

double parse_real_or(const std::string& key, const std::string& val, int line) {
  try {
    size_t pos = 0;
    double v = std::stod(val, &pos);
    if (pos != val.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ParseError("config line " + std::to_string(line) + ": key '" + key +
                     "' expects a real number, got '" + val + "'");
  }
}

std::vector<int> parse_int_list(const std::string& key, const std::string& val, int line) {
  std::vector<int> out;
  for (const auto& tok : split_list(val))
    out.push_back(static_cast<int>(parse_long_or(key, tok, line)));
  if (out.empty())
    throw ParseError("config line " + std::to_string(line) + ": key '" + key +
                     "' expects a nonempty comma list");
  return out;
}

enum class Base { Is, Snis, Dm, Mis, Drl1, Drl2, Drl3 };

struct Combo {
  std::string token;
  Base base = Base::Is;
  FitScheme scheme = FitScheme::Adaptive;
  bool has_ci = true;
};

Combo parse_estimator_token(const std::string& token) {
  std::string name = token, suffix;
  const auto colon = token.find(':');
  if (colon != std::string::npos) {
    name = token.substr(0, colon);
    suffix = token.substr(colon + 1);
  }
  static const std::map<std::string, Base> bases = {
      {"is", Base::Is},     {"snis", Base::Snis}, {"dm", Base::Dm},  {"mis", Base::Mis},
      {"drl1", Base::Drl1}, {"drl2", Base::Drl2}, {"drl3", Base::Drl3}};
  const auto it = bases.find(name);
  if (it == bases.end()) throw ParseError("unknown estimator token: " + token);
  Combo c;
  c.token = token;
  c.base = it->second;
  const bool drl = c.base == Base::Drl1 || c.base == Base::Drl2 || c.base == Base::Drl3;
  if (!suffix.empty()) {
    if (!drl)
      throw ParseError("scheme suffix only applies to the drl estimators: " + token);
    try {
      c.scheme = scheme_from_name(suffix);
    } catch (const std::exception& e) {
      throw ParseError(std::string("bad scheme in estimator token '") + token +
                       "': " + e.what());
    }
  }
  c.has_ci = c.base != Base::Dm && c.base != Base::Snis;
  return c;
}

void check_config(const ExperimentConfig& cfg) {
  if (cfg.replications < 1) throw std::invalid_argument("replications must be >= 1");
  if (cfg.n_list.empty() || cfg.t_list.empty())
    throw std::invalid_argument("N_list and T_list must be nonempty");
  for (int n : cfg.n_list)
    if (n < 1) throw std::invalid_argument("N_list entries must be >= 1");
  for (int t : cfg.t_list)
    if (t < 1) throw std::invalid_argument("T_list entries must be >= 1");
  if (!(cfg.alpha_ci > 0.0 && cfg.alpha_ci < 1.0))
    throw std::invalid_argument("alpha_ci must be in (0,1)");
  if (cfg.workers < 1) throw std::invalid_argument("workers must be >= 1");
  if (cfg.burn_in < 0) throw std::invalid_argument("burn_in must be >= 0");
  if (cfg.estimators.empty()) throw std::invalid_argument("estimators list is empty");
  if (cfg.settings.empty()) throw std::invalid_argument("settings list is empty");
  if (cfg.corrupt_sd < 0.0) throw std::invalid_argument("corrupt_sd must be >= 0");
  if (cfg.w_cap <= 0.0) throw std::invalid_argument("w_cap must be > 0");
  for (const auto& tok : cfg.estimators) parse_estimator_token(tok);
}

std::string init_name(InitRegime r) {
  switch (r) {
    case InitRegime::ArbitraryInit: return "arbitrary";
    case InitRegime::ErgodicBurnIn: return "burnin";
    case InitRegime::StationaryInit: return "stationary";
  }
  return "burnin";
}

InitRegime init_from_name(const std::string& token, int line) {
  if (token == "arbitrary") return InitRegime::ArbitraryInit;
  if (token == "burnin") return InitRegime::ErgodicBurnIn;
  if (token == "stationary") return InitRegime::StationaryInit;
  throw ParseError("config line " + std::to_string(line) + ": init must be one of " +
                   "arbitrary, burnin, stationary");
}

}  // namespace

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open config file: " + path);
  ExperimentConfig cfg;
  std::string line;
  int ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError("config line " + std::to_string(ln) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key.empty() || val.empty())
      throw ParseError("config line " + std::to_string(ln) + ": empty key or value");

    if (key == "grid_width") cfg.grid.width = static_cast<int>(parse_long_or(key, val, ln));
    else if (key == "grid_height") cfg.grid.height = static_cast<int>(parse_long_or(key, val, ln));
    else if (key == "slip") cfg.grid.slip = parse_real_or(key, val, ln);
    else if (key == "goal_x") cfg.grid.goal_x = static_cast<int>(parse_long_or(key, val, ln));
    else if (key == "goal_y") cfg.grid.goal_y = static_cast<int>(parse_long_or(key, val, ln));
    else if (key == "goal_reward") cfg.grid.goal_reward = parse_real_or(key, val, ln);
    else if (key == "step_reward") cfg.grid.step_reward = parse_real_or(key, val, ln);
    else if (key == "reward_sd") cfg.grid.reward_sd = parse_real_or(key, val, ln);
    else if (key == "gamma") cfg.grid.gamma = parse_real_or(key, val, ln);
    else if (key == "alpha_mix") cfg.alpha_mix = parse_real_or(key, val, ln);
    else if (key == "vi_sweeps") cfg.vi_sweeps = static_cast<int>(parse_long_or(key, val, ln));
    else if (key == "soften") cfg.soften = parse_real_or(key, val, ln);
    else if (key == "N_list") cfg.n_list = parse_int_list(key, val, ln);
    else if (key == "T_list") cfg.t_list = parse_int_list(key, val, ln);
    else if (key == "estimators") cfg.estimators = split_list(val);
    else if (key == "settings") {
      cfg.settings.clear();
      for (const auto& tok : split_list(val)) {
        try {
          cfg.settings.push_back(setting_from_name(tok));
        } catch (const std::exception& e) {
          throw ParseError("config line " + std::to_string(ln) + ": " + e.what());
        }
      }
    } else if (key == "replications")
      cfg.replications = static_cast<int>(parse_long_or(key, val, ln));
    else if (key == "master_seed")
      cfg.master_seed = static_cast<uint64_t>(parse_long_or(key, val, ln));
    else if (key == "workers") cfg.workers = static_cast<int>(parse_long_or(key, val, ln));
    else if (key == "alpha_ci") cfg.alpha_ci = parse_real_or(key, val, ln);
    else if (key == "init") cfg.init = init_from_name(val, ln);
    else if (key == "burn_in") cfg.burn_in = static_cast<int>(parse_long_or(key, val, ln));
    else if (key == "omega") cfg.omega = static_cast<int>(parse_long_or(key, val, ln));
    else if (key == "horizon") cfg.horizon = static_cast<int>(parse_long_or(key, val, ln));
    else if (key == "corrupt_mean") cfg.corrupt_mean = parse_real_or(key, val, ln);
    else if (key == "corrupt_sd") cfg.corrupt_sd = parse_real_or(key, val, ln);
    else if (key == "w_cap") cfg.w_cap = parse_real_or(key, val, ln);
    else if (key == "ridge") cfg.allow_ridge = parse_long_or(key, val, ln) != 0;
    else
      throw ParseError("config line " + std::to_string(ln) + ": unknown key '" + key + "'");
  }
  try {
    check_config(cfg);
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  return cfg;
}

void save_experiment_config(const std::string& path, const ExperimentConfig& cfg) {
  std::ostringstream out;
  auto list_int = [](const std::vector<int>& xs) {
    std::string s;
    for (size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + std::to_string(xs[i]);
    return s;
  };
  out << "grid_width = " << cfg.grid.width << "\n";
  out << "grid_height = " << cfg.grid.height << "\n";
  out << "slip = " << fmt_double(cfg.grid.slip) << "\n";
  out << "goal_x = " << cfg.grid.goal_x << "\n";
  out << "goal_y = " << cfg.grid.goal_y << "\n";
  out << "goal_reward = " << fmt_double(cfg.grid.goal_reward) << "\n";
  out << "step_reward = " << fmt_double(cfg.grid.step_reward) << "\n";
  out << "reward_sd = " << fmt_double(cfg.grid.reward_sd) << "\n";
  out << "gamma = " << fmt_double(cfg.grid.gamma) << "\n";
  out << "alpha_mix = " << fmt_double(cfg.alpha_mix) << "\n";
  out << "vi_sweeps = " << cfg.vi_sweeps << "\n";
  out << "soften = " << fmt_double(cfg.soften) << "\n";
  out << "N_list = " << list_int(cfg.n_list) << "\n";
  out << "T_list = " << list_int(cfg.t_list) << "\n";
  std::string est;
  for (size_t i = 0; i < cfg.estimators.size(); ++i) est += (i ? "," : "") + cfg.estimators[i];
  out << "estimators = " << est << "\n";
  std::string sett;
  for (size_t i = 0; i < cfg.settings.size(); ++i)
    sett += (i ? "," : "") + setting_name(cfg.settings[i]);
  out << "settings = " << sett << "\n";
  out << "replications = " << cfg.replications << "\n";
  out << "master_seed = " << cfg.master_seed << "\n";
  out << "workers = " << cfg.workers << "\n";
  out << "alpha_ci = " << fmt_double(cfg.alpha_ci) << "\n";
  out << "init = " << init_name(cfg.init) << "\n";
  out << "burn_in = " << cfg.burn_in << "\n";
  out << "omega = " << cfg.omega << "\n";
  out << "horizon = " << cfg.horizon << "\n";
  out << "corrupt_mean = " << fmt_double(cfg.corrupt_mean) << "\n";
  out << "corrupt_sd = " << fmt_double(cfg.corrupt_sd) << "\n";
  out << "w_cap = " << fmt_double(cfg.w_cap) << "\n";
  out << "ridge = " << (cfg.allow_ridge ? 1 : 0) << "\n";
  atomic_write(path, out.str());
}

// ---------------------------------------------------------------------------
// tables

namespace {

std::string csv_field(double v) {
  if (std::isnan(v)) return "";
  return fmt_double(v);
}

std::string csv_text(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n') c = ';';
  return s;
}

}  // namespace

void save_mse_csv(const std::string& path, const MseTable& table) {
  std::ostringstream out;
  out << "estimator,N,T,setting,mse,bias2,variance,coverage,replications,skipped,skip_reason\n";
  for (const auto& r : table.rows) {
    out << r.estimator << ',' << r.N << ',' << r.T << ',' << r.setting << ','
        << csv_field(r.mse) << ',' << csv_field(r.bias2) << ',' << csv_field(r.variance)
        << ',' << csv_field(r.coverage) << ',' << r.replications << ','
        << (r.skipped ? 1 : 0) << ',' << csv_text(r.skip_reason) << '\n';
  }
  atomic_write(path, out.str());
}

void write_plot_data(const std::string& dir, const MseTable& table) {
  std::map<std::pair<std::string, int>, std::vector<const MseRow*>> groups;
  for (const auto& r : table.rows)
    if (!r.skipped) groups[{r.estimator, r.setting}].push_back(&r);
  for (auto& [key, rows] : groups) {
    std::sort(rows.begin(), rows.end(), [](const MseRow* a, const MseRow* b) {
      return static_cast<double>(a->N) * a->T < static_cast<double>(b->N) * b->T;
    });
    std::ostringstream out;
    out << "x,y,ci_low,ci_high\n";
    for (const MseRow* r : rows) {
      const double x = static_cast<double>(r->N) * r->T;
      const double se = std::isnan(r->mse_se) ? 0.0 : r->mse_se;
      const double z = 1.959963984540054;
      out << fmt_double(x) << ',' << fmt_double(r->mse) << ','
          << fmt_double(std::max(0.0, r->mse - z * se)) << ','
          << fmt_double(r->mse + z * se) << '\n';
    }
    std::string token = key.first;
    for (char& c : token)
      if (c == ':') c = '-';
    atomic_write(dir + "/plot_" + token + "_setting" + std::to_string(key.second) + ".csv",
                 out.str());
  }
}

// ---------------------------------------------------------------------------
// replication harness

namespace {

std::string infeasible_reason(const Combo& c, int N, int T) {
  const bool cumulative = c.base == Base::Drl1 || c.base == Base::Drl2;
  if (cumulative && c.scheme == FitScheme::CrossTime4)
    return "cross-time folds break cumulative weights";
  if (c.scheme == FitScheme::CrossTrajectory2 && N < 2)
    return "cross-trajectory needs N >= 2";
  if (c.scheme == FitScheme::CrossTime4 && T < 8) return "cross-time needs T >= 8";
  return "";
}

struct RepOut {
  double rho = std::numeric_limits<double>::quiet_NaN();
  bool ok = false;
  bool has_ci = false;
  double lo = 0.0;
  double hi = 0.0;
  std::string error;
};

struct CellContext {
  int N = 0;
  int T = 0;
  int omega = 0;
  int horizon = 0;
  const TabularMdp* mdp = nullptr;
  const Policy* pi_e = nullptr;  // effective-start versions
  const Policy* pi_b = nullptr;
  const MatrixXd* eta = nullptr;
  const ExperimentConfig* cfg = nullptr;
  const WTable* w_oracle = nullptr;
  const QTable* q_oracle = nullptr;
  const std::vector<MatrixXd>* mu_oracle = nullptr;
};

void run_one_rep(const CellContext& cc, const std::vector<Combo>& combos, int rep,
                 std::vector<std::vector<RepOut>>& slot) {
  const ExperimentConfig& cfg = *cc.cfg;
  const TabularMdp& mdp = *cc.mdp;
  const int S = mdp.n_states, A = mdp.n_actions;
  const double gamma = mdp.gamma;
  const uint64_t N64 = static_cast<uint64_t>(cc.N), T64 = static_cast<uint64_t>(cc.T);
  const uint64_t rep64 = static_cast<uint64_t>(rep);

  TrajectoryDataset trajs;
  TransitionDataset flat;
  try {
    SampleConfig sc;
    sc.N = cc.N;
    sc.T = cc.T;
    sc.init = cfg.init;
    sc.burn_in = cfg.burn_in;
    sc.seed = derive_seed(cfg.master_seed, {kStreamData, N64, T64, rep64});
    trajs = sample_trajectories(mdp, *cc.pi_b, sc);
    flat = trajectory_to_transitions(trajs);
  } catch (const std::exception& e) {
    for (auto& per_setting : slot)
      for (auto& r : per_setting) r.error = e.what();
    return;
  }

  const FeatureMap fm = FeatureMap::tabular(S, A);
  FitOptions fo;
  fo.allow_ridge = cfg.allow_ridge;
  CorruptSpec cs;
  cs.mean = cfg.corrupt_mean;
  cs.sd = cfg.corrupt_sd;
  cs.q_hi = mdp.r_max / (1.0 - gamma);
  cs.w_hi = cfg.w_cap;

  // full-data fits, shared across estimators and settings
  std::optional<WTable> w_fit;
  std::optional<QTable> q_fit;
  std::optional<std::vector<QTable>> q_seq;
  auto get_w_fit = [&]() -> const WTable& {
    if (!w_fit) w_fit = fit_w_linear(flat, fm, *cc.eta, cc.pi_e->initial, gamma, fo).w;
    return *w_fit;
  };
  auto get_q_fit = [&]() -> const QTable& {
    if (!q_fit) q_fit = fit_q_model_based(flat, S, A, *cc.pi_e, gamma, mdp.r_max).q;
    return *q_fit;
  };
  auto get_q_seq = [&]() -> const std::vector<QTable>& {
    if (!q_seq)
      q_seq = fit_q_model_based_truncated(flat, S, A, *cc.pi_e, gamma, mdp.r_max, cc.omega)
                  .q_by_t;
    return *q_seq;
  };

  auto st64 = [](Setting st) { return static_cast<uint64_t>(static_cast<int>(st)); };
  auto seed_q = [&](Setting st, uint64_t extra) {
    return derive_seed(cfg.master_seed, {kStreamCorruptQ, N64, T64, rep64, st64(st), extra});
  };
  auto seed_w = [&](Setting st, uint64_t extra) {
    return derive_seed(cfg.master_seed, {kStreamCorruptW, N64, T64, rep64, st64(st), extra});
  };
  auto resolve_q = [&](const QTable& q, Setting st, uint64_t tag) -> QTable {
    if (st != Setting::OnlyWCorrect) return q;
    return corrupt_table(q, cs.mean, cs.sd, cs.q_lo, cs.q_hi, seed_q(st, tag));
  };
  auto resolve_w = [&](const WTable& w, Setting st, uint64_t tag) -> WTable {
    if (st != Setting::OnlyQCorrect) return w;
    return corrupt_table(w, cs.mean, cs.sd, cs.w_lo, cs.w_hi, seed_w(st, tag)).col(0);
  };
  auto resolve_seq = [&](const std::vector<QTable>& qs, Setting st,
                         uint64_t tag) -> std::vector<QTable> {
    if (st != Setting::OnlyWCorrect) return qs;
    std::vector<QTable> out;
    out.reserve(qs.size());
    for (size_t t = 0; t < qs.size(); ++t)
      out.push_back(corrupt_table(qs[t], cs.mean, cs.sd, cs.q_lo, cs.q_hi,
                                  seed_q(st, 1000000 + tag * 10000000ull + t)));
    return out;
  };

  auto dispatch = [&](const Combo& c, Setting st) -> EstimateReport {
    switch (c.base) {
      case Base::Is:
        return estimate_is(trajs, *cc.eta, gamma, cc.horizon, cfg.alpha_ci);
      case Base::Snis:
        return estimate_snis(trajs, *cc.eta, gamma, cc.horizon, cfg.alpha_ci);
      case Base::Dm:
        return estimate_dm(resolve_q(get_q_fit(), st, 0), *cc.pi_e, gamma);
      case Base::Mis:
        return estimate_mis(flat, resolve_w(get_w_fit(), st, 0), *cc.eta, cfg.alpha_ci);
      case Base::Drl1:
      case Base::Drl2: {
        const FitScheme eff =
            c.scheme == FitScheme::OracleNuisance ? FitScheme::Adaptive : c.scheme;
        const FoldAssignment folds = make_folds(cc.N, cc.T, eff);
        std::vector<std::vector<QTable>> q_by_fold;
        if (c.scheme == FitScheme::OracleNuisance) {
          q_by_fold.push_back(
              resolve_seq(truncated_q(mdp, *cc.pi_e, gamma, cc.omega), st, 0));
        } else if (c.scheme == FitScheme::Adaptive) {
          q_by_fold.push_back(resolve_seq(get_q_seq(), st, 0));
        } else {  // CrossTrajectory2
          std::vector<TransitionDataset> subs(folds.n_folds);
          for (const Transition& tr : flat.items)
            subs[folds.traj_fold.at(tr.traj_id)].items.push_back(tr);
          for (int f = 0; f < folds.n_folds; ++f) {
            auto fitted = fit_q_model_based_truncated(subs[f], S, A, *cc.pi_e, gamma,
                                                      mdp.r_max, cc.omega)
                              .q_by_t;
            q_by_fold.push_back(resolve_seq(fitted, st, static_cast<uint64_t>(f + 1)));
          }
        }
        if (c.base == Base::Drl1)
          return estimate_drl_m1(trajs, *cc.eta, *cc.pi_e, gamma, cc.omega, q_by_fold,
                                 folds, cfg.alpha_ci);
        std::vector<std::vector<MatrixXd>> mu_by_fold(
            static_cast<size_t>(folds.n_folds), *cc.mu_oracle);
        return estimate_drl_m2(trajs, mu_by_fold, *cc.pi_e, gamma, cc.omega, q_by_fold,
                               folds, cfg.alpha_ci);
      }
      case Base::Drl3: {
        if (c.scheme == FitScheme::OracleNuisance) {
          NuisancePair pair;
          pair.q = resolve_q(*cc.q_oracle, st, 0);
          pair.w = resolve_w(*cc.w_oracle, st, 0);
          pair.provenance["source"] = "oracle tables";
          return estimate_drl_m3(flat, cc.N, cc.T, *cc.pi_e, *cc.eta, gamma,
                                 FitScheme::OracleNuisance, {}, {}, &pair, cfg.alpha_ci);
        }
        const bool adaptive = c.scheme == FitScheme::Adaptive;
        WFitter wf = [&, st, adaptive](const TransitionDataset& sub, uint64_t tag) {
          WTable w = adaptive ? get_w_fit() : fit_w_linear(sub, fm, *cc.eta,
                                                           cc.pi_e->initial, gamma, fo)
                                                  .w;
          return resolve_w(w, st, adaptive ? 0 : tag + 1);
        };
        QFitter qf = [&, st, adaptive](const TransitionDataset& sub, uint64_t tag) {
          QTable q = adaptive
                         ? get_q_fit()
                         : fit_q_model_based(sub, S, A, *cc.pi_e, gamma, mdp.r_max).q;
          return resolve_q(q, st, adaptive ? 0 : tag + 1);
        };
        return estimate_drl_m3(flat, cc.N, cc.T, *cc.pi_e, *cc.eta, gamma, c.scheme, wf,
                               qf, nullptr, cfg.alpha_ci);
      }
    }
    throw std::logic_error("unhandled estimator");
  };

  for (size_t ci = 0; ci < combos.size(); ++ci) {
    const Combo& c = combos[ci];
    if (!infeasible_reason(c, cc.N, cc.T).empty()) continue;
    const bool setting_free = c.base == Base::Is || c.base == Base::Snis;
    for (size_t si = 0; si < cfg.settings.size(); ++si) {
      if (setting_free && si > 0) {
        slot[ci][si] = slot[ci][0];
        continue;
      }
      RepOut& out = slot[ci][si];
      try {
        const EstimateReport er = dispatch(c, cfg.settings[si]);
        if (!std::isfinite(er.rho_hat)) throw NumericsError("estimate is not finite");
        out.rho = er.rho_hat;
        out.ok = true;
        if (er.ci_low && er.ci_high) {
          out.has_ci = true;
          out.lo = *er.ci_low;
          out.hi = *er.ci_high;
        }
      } catch (const std::exception& e) {
        out.ok = false;
        out.error = e.what();
      }
    }
  }
}

double sample_sd_of(const std::vector<double>& xs, double mean) {
  if (xs.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  std::vector<double> sq(xs.size());
  for (size_t i = 0; i < xs.size(); ++i) sq[i] = (xs[i] - mean) * (xs[i] - mean);
  const double var =
      pairwise_sum(sq) / static_cast<double>(xs.size() - 1);
  return std::sqrt(std::max(0.0, var));
}

}  // namespace

MseTable run_replications(const ExperimentConfig& cfg, const TabularMdp& mdp,
                          const PolicyPair& pair0) {
  check_config(cfg);
  std::vector<Combo> combos;
  combos.reserve(cfg.estimators.size());
  for (const auto& tok : cfg.estimators) combos.push_back(parse_estimator_token(tok));

  PolicyPair pair = pair0;
  if (cfg.init != InitRegime::ArbitraryInit) {
    const VectorXd st = stationary_distribution(mdp, pair.pi_b);
    pair.pi_e.initial = st;
    pair.pi_b.initial = st;
  }
  const double gamma = mdp.gamma;
  const double rho_star = exact_policy_value(mdp, pair.pi_e, gamma);
  const MatrixXd eta = density_ratio_eta(pair.pi_e, pair.pi_b);
  const WDenominator denom = cfg.init == InitRegime::ArbitraryInit
                                 ? WDenominator::InitialDist
                                 : WDenominator::StationaryDist;
  const WTable w_oracle = oracle_w(mdp, pair.pi_e, pair.pi_b, gamma, denom);
  const QTable q_oracle = exact_q(mdp, pair.pi_e, gamma);

  const size_t n_set = cfg.settings.size();
  MseTable table;
  table.rows.resize(combos.size() * cfg.n_list.size() * cfg.t_list.size() * n_set);
  auto row_index = [&](size_t ci, size_t ni, size_t ti, size_t si) {
    return ((ci * cfg.n_list.size() + ni) * cfg.t_list.size() + ti) * n_set + si;
  };

  for (size_t ni = 0; ni < cfg.n_list.size(); ++ni) {
    for (size_t ti = 0; ti < cfg.t_list.size(); ++ti) {
      const int N = cfg.n_list[ni], T = cfg.t_list[ti];
      const auto t0 = std::chrono::steady_clock::now();

      CellContext cc;
      cc.N = N;
      cc.T = T;
      cc.omega = cfg.omega >= 0 ? std::min(cfg.omega, T - 1)
                                : effective_horizon(gamma, 1e-10, T - 1);
      cc.horizon = cfg.horizon >= 0 ? std::min(cfg.horizon, T - 1) : T - 1;
      cc.mdp = &mdp;
      cc.pi_e = &pair.pi_e;
      cc.pi_b = &pair.pi_b;
      cc.eta = &eta;
      cc.cfg = &cfg;
      cc.w_oracle = &w_oracle;
      cc.q_oracle = &q_oracle;
      std::vector<MatrixXd> mu;
      bool need_mu = false;
      for (const Combo& c : combos)
        if (c.base == Base::Drl2 && infeasible_reason(c, N, T).empty()) need_mu = true;
      if (need_mu) {
        mu = marginal_ratio_mu(mdp, pair.pi_e, pair.pi_b, cc.omega);
        cc.mu_oracle = &mu;
      }

      std::vector<std::vector<std::vector<RepOut>>> slots(
          static_cast<size_t>(cfg.replications),
          std::vector<std::vector<RepOut>>(combos.size(), std::vector<RepOut>(n_set)));
      std::atomic<int> next{0};
      auto work = [&]() {
        for (;;) {
          const int r = next.fetch_add(1);
          if (r >= cfg.replications) break;
          run_one_rep(cc, combos, r, slots[static_cast<size_t>(r)]);
        }
      };
      if (cfg.workers == 1) {
        work();
      } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<size_t>(cfg.workers));
        for (int i = 0; i < cfg.workers; ++i) pool.emplace_back(work);
        for (auto& th : pool) th.join();
      }

      for (size_t ci = 0; ci < combos.size(); ++ci) {
        for (size_t si = 0; si < n_set; ++si) {
          MseRow row;
          row.estimator = combos[ci].token;
          row.N = N;
          row.T = T;
          row.setting = static_cast<int>(cfg.settings[si]);
          row.rho_oracle = rho_star;
          const std::string why = infeasible_reason(combos[ci], N, T);
          if (!why.empty()) {
            row.skipped = true;
            row.skip_reason = why;
            table.rows[row_index(ci, ni, ti, si)] = row;
            continue;
          }
          std::vector<double> errs, sq;
          std::vector<double> covered;
          std::string first_error;
          for (int r = 0; r < cfg.replications; ++r) {
            const RepOut& o = slots[static_cast<size_t>(r)][ci][si];
            if (!o.ok) {
              if (first_error.empty() && !o.error.empty()) first_error = o.error;
              continue;
            }
            const double e = o.rho - rho_star;
            errs.push_back(e);
            sq.push_back(e * e);
            if (o.has_ci) covered.push_back(o.lo <= rho_star && rho_star <= o.hi ? 1.0 : 0.0);
          }
          if (errs.empty()) {
            row.skipped = true;
            row.skip_reason = "all replications failed: " +
                              (first_error.empty() ? std::string("unknown") : first_error);
            table.rows[row_index(ci, ni, ti, si)] = row;
            continue;
          }
          const double bias = pairwise_mean(errs);
          std::vector<double> centered(errs.size());
          for (size_t i = 0; i < errs.size(); ++i)
            centered[i] = (errs[i] - bias) * (errs[i] - bias);
          row.mse = pairwise_mean(sq);
          row.bias2 = bias * bias;
          row.variance = pairwise_mean(centered);
          row.replications = static_cast<int>(errs.size());
          const double sd_sq = sample_sd_of(sq, row.mse);
          row.mse_se = std::isnan(sd_sq)
                           ? std::numeric_limits<double>::quiet_NaN()
                           : sd_sq / std::sqrt(static_cast<double>(sq.size()));
          if (!covered.empty()) row.coverage = pairwise_mean(covered);
          table.rows[row_index(ci, ni, ti, si)] = row;
        }
      }
      const auto t1 = std::chrono::steady_clock::now();
      std::cerr << "cell N=" << N << " T=" << T << ": "
                << std::chrono::duration_cast<std::chrono::milliseconds>(t1 - t0).count()
                << " ms\n";
    }
  }
  return table;
}

MseTable run_replications(const ExperimentConfig& cfg) {
  const TabularMdp mdp = make_gridworld(cfg.grid);
  const PolicyPair pair =
      make_policy_pair(mdp, mdp.gamma, cfg.alpha_mix,
                       derive_seed(cfg.master_seed, {kStreamPolicyTies}), cfg.vi_sweeps,
                       cfg.soften);
  return run_replications(cfg, mdp, pair);
}

MseTable run_coverage(const ExperimentConfig& cfg, const TabularMdp& mdp,
                      const PolicyPair& pair) {
  ExperimentConfig filtered = cfg;
  filtered.estimators.clear();
  for (const auto& tok : cfg.estimators)
    if (parse_estimator_token(tok).has_ci) filtered.estimators.push_back(tok);
  if (filtered.estimators.empty())
    throw std::invalid_argument("coverage run needs at least one interval-reporting estimator");
  return run_replications(filtered, mdp, pair);
}

MseTable run_coverage(const ExperimentConfig& cfg) {
  const TabularMdp mdp = make_gridworld(cfg.grid);
  const PolicyPair pair =
      make_policy_pair(mdp, mdp.gamma, cfg.alpha_mix,
                       derive_seed(cfg.master_seed, {kStreamPolicyTies}), cfg.vi_sweeps,
                       cfg.soften);
  return run_coverage(cfg, mdp, pair);
}

std::vector<PlanRow> plan_cells(const ExperimentConfig& cfg) {
  check_config(cfg);
  std::vector<PlanRow> rows;
  for (const auto& tok : cfg.estimators) {
    const Combo c = parse_estimator_token(tok);
    for (int N : cfg.n_list) {
      for (int T : cfg.t_list) {
        for (Setting s : cfg.settings) {
          PlanRow r;
          r.estimator = tok;
          r.N = N;
          r.T = T;
          r.setting = static_cast<int>(s);
          const std::string why = infeasible_reason(c, N, T);
          if (!why.empty()) {
            r.feasible = false;
            r.reason = why;
          }
          rows.push_back(r);
        }
      }
    }
  }
  return rows;
}

int effective_horizon(double gamma, double tol, int cap) {
  if (cap < 0) cap = 0;
  if (gamma <= 0.0) return std::min(cap, 1);
  if (gamma >= 1.0 || tol <= 0.0) return cap;
  const double t = std::ceil(std::log(tol) / std::log(gamma));
  if (!(t >= 1.0)) return std::min(cap, 1);
  if (t >= static_cast<double>(cap)) return cap;
  return static_cast<int>(t);
}

}  // namespace ope
