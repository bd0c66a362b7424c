#include "ope/serialize.hpp"

#include <cerrno>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace ope {

void atomic_write(const std::string& path, const std::string& content) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("atomic_write: cannot open " + tmp);
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("atomic_write: write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    std::remove(tmp.c_str());
    throw std::runtime_error("atomic_write: rename to " + path + " failed: " +
                             std::strerror(errno));
  }
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace {

// Token stream over the text formats; strips '#' comments.
class Tokens {
 public:
  Tokens(const std::string& path) : path_(path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    std::string line;
    while (std::getline(in, line)) {
      auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      std::istringstream ls(line);
      std::string tok;
      while (ls >> tok) toks_.push_back(tok);
    }
  }

  std::string next(const char* what) {
    if (pos_ >= toks_.size())
      throw ParseError(path_ + ": unexpected end of file, expected " + what);
    return toks_[pos_++];
  }

  void expect(const std::string& lit) {
    std::string t = next(lit.c_str());
    if (t != lit) throw ParseError(path_ + ": expected '" + lit + "', got '" + t + "'");
  }

  long next_int(const char* what) {
    std::string t = next(what);
    char* end = nullptr;
    long v = std::strtol(t.c_str(), &end, 10);
    if (end == t.c_str() || *end != '\0')
      throw ParseError(path_ + ": expected integer for " + what + ", got '" + t + "'");
    return v;
  }

  double next_double(const char* what) {
    std::string t = next(what);
    char* end = nullptr;
    double v = std::strtod(t.c_str(), &end);
    if (end == t.c_str() || *end != '\0')
      throw ParseError(path_ + ": expected number for " + what + ", got '" + t + "'");
    return v;
  }

  bool done() const { return pos_ >= toks_.size(); }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::vector<std::string> toks_;
  std::size_t pos_ = 0;
};

void write_matrix(std::ostringstream& os, const MatrixXd& m) {
  for (int i = 0; i < m.rows(); ++i) {
    for (int j = 0; j < m.cols(); ++j) os << (j ? " " : "") << fmt_double(m(i, j));
    os << "\n";
  }
}

MatrixXd read_matrix(Tokens& tk, int rows, int cols, const char* what) {
  MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = tk.next_double(what);
  return m;
}

const std::map<std::string, RewardNoise> kNoiseNames = {
    {"none", RewardNoise::None},
    {"gaussian", RewardNoise::Gaussian},
    {"uniform", RewardNoise::Uniform},
};

std::string noise_name(RewardNoise n) {
  for (const auto& [k, v] : kNoiseNames)
    if (v == n) return k;
  return "gaussian";
}

}  // namespace

void save_mdp(const std::string& path, const TabularMdp& mdp) {
  std::ostringstream os;
  os << "tabular-mdp v1\n";
  os << "n_states " << mdp.n_states << "\n";
  os << "n_actions " << mdp.n_actions << "\n";
  os << "gamma " << fmt_double(mdp.gamma) << "\n";
  os << "r_max " << fmt_double(mdp.r_max) << "\n";
  os << "reward_noise " << noise_name(mdp.noise) << "\n";
  os << "transitions\n";
  write_matrix(os, mdp.trans);
  os << "reward_mean\n";
  write_matrix(os, mdp.reward_mean);
  os << "reward_var\n";
  write_matrix(os, mdp.reward_var);
  atomic_write(path, os.str());
}

TabularMdp load_mdp(const std::string& path) {
  Tokens tk(path);
  tk.expect("tabular-mdp");
  tk.expect("v1");
  TabularMdp mdp;
  tk.expect("n_states");
  mdp.n_states = static_cast<int>(tk.next_int("n_states"));
  tk.expect("n_actions");
  mdp.n_actions = static_cast<int>(tk.next_int("n_actions"));
  tk.expect("gamma");
  mdp.gamma = tk.next_double("gamma");
  tk.expect("r_max");
  mdp.r_max = tk.next_double("r_max");
  tk.expect("reward_noise");
  std::string noise = tk.next("reward_noise");
  auto it = kNoiseNames.find(noise);
  if (it == kNoiseNames.end())
    throw ParseError(path + ": unknown reward_noise '" + noise + "'");
  mdp.noise = it->second;
  if (mdp.n_states <= 0 || mdp.n_actions <= 0)
    throw ParseError(path + ": sizes must be positive");
  tk.expect("transitions");
  mdp.trans = read_matrix(tk, mdp.n_states * mdp.n_actions, mdp.n_states, "transitions");
  tk.expect("reward_mean");
  mdp.reward_mean = read_matrix(tk, mdp.n_states, mdp.n_actions, "reward_mean");
  tk.expect("reward_var");
  mdp.reward_var = read_matrix(tk, mdp.n_states, mdp.n_actions, "reward_var");
  if (!tk.done()) throw ParseError(path + ": trailing content");
  mdp.validate();
  return mdp;
}

void save_policy(const std::string& path, const Policy& pi, int n_states, int n_actions) {
  pi.validate(n_states, n_actions);
  std::ostringstream os;
  os << "tabular-policy v1\n";
  os << "n_states " << n_states << "\n";
  os << "n_actions " << n_actions << "\n";
  os << "probs\n";
  write_matrix(os, pi.probs);
  os << "initial\n";
  write_matrix(os, pi.initial.transpose());
  atomic_write(path, os.str());
}

Policy load_policy(const std::string& path, int* n_states, int* n_actions) {
  Tokens tk(path);
  tk.expect("tabular-policy");
  tk.expect("v1");
  tk.expect("n_states");
  int S = static_cast<int>(tk.next_int("n_states"));
  tk.expect("n_actions");
  int A = static_cast<int>(tk.next_int("n_actions"));
  if (S <= 0 || A <= 0) throw ParseError(path + ": sizes must be positive");
  Policy pi;
  tk.expect("probs");
  pi.probs = read_matrix(tk, S, A, "probs");
  tk.expect("initial");
  pi.initial = read_matrix(tk, 1, S, "initial").transpose();
  if (!tk.done()) throw ParseError(path + ": trailing content");
  pi.validate(S, A);
  if (n_states) *n_states = S;
  if (n_actions) *n_actions = A;
  return pi;
}

namespace {

void save_nuisance(const std::string& path, const MatrixXd& table, const std::string& kind,
                   const std::string& provenance) {
  std::ostringstream os;
  os << "tabular-nuisance v1\n";
  os << "kind " << kind << "\n";
  // provenance is free text; keep it on one line
  std::string prov = provenance;
  for (char& c : prov)
    if (c == '\n') c = ' ';
  os << "provenance " << (prov.empty() ? "unspecified" : prov) << "\n";
  os << "rows " << table.rows() << "\n";
  os << "cols " << table.cols() << "\n";
  os << "values\n";
  write_matrix(os, table);
  atomic_write(path, os.str());
}

MatrixXd load_nuisance(const std::string& path, const std::string& kind,
                       std::string* provenance) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  std::string line;
  std::string prov;
  std::vector<std::string> body;
  bool first = true;
  while (std::getline(in, line)) {
    if (first) {
      first = false;
      if (line.rfind("tabular-nuisance v1", 0) != 0)
        throw ParseError(path + ": not a tabular-nuisance v1 file");
      continue;
    }
    if (line.rfind("provenance ", 0) == 0) {
      prov = line.substr(11);
      continue;
    }
    body.push_back(line);
  }
  std::ostringstream rebuilt;
  for (const auto& l : body) rebuilt << l << "\n";
  std::istringstream is(rebuilt.str());
  std::string tok;
  long rows = -1, cols = -1;
  std::string got_kind;
  is >> tok;
  if (tok != "kind") throw ParseError(path + ": expected 'kind'");
  is >> got_kind;
  if (got_kind != kind)
    throw ParseError(path + ": expected kind '" + kind + "', found '" + got_kind + "'");
  is >> tok;
  if (tok != "rows") throw ParseError(path + ": expected 'rows'");
  is >> rows;
  is >> tok;
  if (tok != "cols") throw ParseError(path + ": expected 'cols'");
  is >> cols;
  is >> tok;
  if (tok != "values") throw ParseError(path + ": expected 'values'");
  if (rows <= 0 || cols <= 0) throw ParseError(path + ": bad table shape");
  MatrixXd m(rows, cols);
  for (long i = 0; i < rows; ++i)
    for (long j = 0; j < cols; ++j)
      if (!(is >> m(i, j))) throw ParseError(path + ": truncated values");
  if (provenance) *provenance = prov;
  return m;
}

}  // namespace

void save_nuisance_q(const std::string& path, const QTable& q, const std::string& provenance) {
  save_nuisance(path, q, "q", provenance);
}

void save_nuisance_w(const std::string& path, const WTable& w, const std::string& provenance) {
  save_nuisance(path, w, "w", provenance);
}

QTable load_nuisance_q(const std::string& path, std::string* provenance) {
  return load_nuisance(path, "q", provenance);
}

WTable load_nuisance_w(const std::string& path, std::string* provenance) {
  MatrixXd m = load_nuisance(path, "w", provenance);
  if (m.cols() != 1) throw ParseError(path + ": w table must have one column");
  return m.col(0);
}

void save_transitions_csv(const std::string& path, const TransitionDataset& data) {
  std::ostringstream os;
  os << "traj_id,t,s,a,r,s_next\n";
  for (const Transition& tr : data.items)
    os << tr.traj_id << "," << tr.t << "," << tr.s << "," << tr.a << ","
       << fmt_double(tr.r) << "," << tr.s_next << "\n";
  atomic_write(path, os.str());
}

void save_trajectories_csv(const std::string& path, const TrajectoryDataset& data) {
  std::ostringstream os;
  os << "traj_id,t,s,a,r,s_next\n";
  for (std::size_t i = 0; i < data.trajs.size(); ++i) {
    const Trajectory& tr = data.trajs[i];
    for (int t = 0; t < tr.T(); ++t)
      os << i << "," << t << "," << tr.states[t] << "," << tr.actions[t] << ","
         << fmt_double(tr.rewards[t]) << "," << tr.states[t + 1] << "\n";
  }
  atomic_write(path, os.str());
}

TransitionDataset load_transitions_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": empty file");
  if (line != "traj_id,t,s,a,r,s_next")
    throw ParseError(path + ": bad header '" + line + "'");
  TransitionDataset data;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    Transition tr;
    char* p = line.data();
    char* end = nullptr;
    auto take_long = [&](const char* what) {
      long v = std::strtol(p, &end, 10);
      if (end == p)
        throw ParseError(path + ":" + std::to_string(line_no) + ": bad " + what);
      p = end;
      if (*p == ',') ++p;
      return v;
    };
    tr.traj_id = static_cast<int>(take_long("traj_id"));
    tr.t = static_cast<int>(take_long("t"));
    tr.s = static_cast<int>(take_long("s"));
    tr.a = static_cast<int>(take_long("a"));
    tr.r = std::strtod(p, &end);
    if (end == p) throw ParseError(path + ":" + std::to_string(line_no) + ": bad r");
    p = end;
    if (*p == ',') ++p;
    tr.s_next = static_cast<int>(take_long("s_next"));
    data.items.push_back(tr);
  }
  return data;
}

TrajectoryDataset load_trajectories_csv(const std::string& path) {
  TransitionDataset flat = load_transitions_csv(path);
  // group by traj_id, demanding contiguous time order and chained states
  std::map<int, std::vector<const Transition*>> by_id;
  for (const Transition& tr : flat.items) by_id[tr.traj_id].push_back(&tr);
  TrajectoryDataset data;
  for (auto& [id, rows] : by_id) {
    Trajectory tr;
    for (std::size_t t = 0; t < rows.size(); ++t) {
      const Transition* r = rows[t];
      if (r->t != static_cast<int>(t))
        throw ParseError(path + ": trajectory " + std::to_string(id) +
                         " is not contiguous in t (found t=" + std::to_string(r->t) +
                         " at position " + std::to_string(t) + ")");
      if (t == 0)
        tr.states.push_back(r->s);
      else if (tr.states.back() != r->s)
        throw ParseError(path + ": trajectory " + std::to_string(id) + " at t=" +
                         std::to_string(t) + ": s does not chain from previous s_next");
      tr.actions.push_back(r->a);
      tr.rewards.push_back(r->r);
      tr.states.push_back(r->s_next);
    }
    data.trajs.push_back(std::move(tr));
  }
  if (data.trajs.empty()) throw ParseError(path + ": no rows");
  data.T();  // reject ragged lengths
  return data;
}

}  // namespace ope
