#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "ope/serialize.hpp"
#include "test_util.hpp"

using namespace ope;
using namespace ope_test;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path dir;
  TempDir() {
    dir = fs::temp_directory_path() / ("ope_serialize_" + std::to_string(::getpid()));
    fs::create_directories(dir);
  }
  ~TempDir() { fs::remove_all(dir); }
  std::string operator/(const std::string& name) const { return (dir / name).string(); }
};

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  out << content;
}

}  // namespace

TEST_CASE("fmt_double round-trips awkward values") {
  for (double v : {1.0 / 3.0, 0.1, 1e-300, 12345.6789, -2.5e17, 0.0}) {
    CHECK(std::stod(fmt_double(v)) == v);
  }
}

TEST_CASE("mdp save/load is bit exact") {
  TempDir tmp;
  TabularMdp m = random_mdp(7, 4, 3, 0.93);
  m.noise = RewardNoise::Uniform;
  m.r_max = 2.5;
  std::string path = tmp / "m.mdp";
  save_mdp(path, m);
  TabularMdp back = load_mdp(path);
  CHECK(back.n_states == 4);
  CHECK(back.n_actions == 3);
  CHECK(back.gamma == m.gamma);
  CHECK(back.r_max == m.r_max);
  CHECK(back.noise == RewardNoise::Uniform);
  CHECK((back.trans - m.trans).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.reward_mean - m.reward_mean).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.reward_var - m.reward_var).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("policy save/load is bit exact and reports sizes") {
  TempDir tmp;
  Policy pi = random_policy(9, 5, 2);
  std::string path = tmp / "p.policy";
  save_policy(path, pi, 5, 2);
  int S = 0, A = 0;
  Policy back = load_policy(path, &S, &A);
  CHECK(S == 5);
  CHECK(A == 2);
  CHECK((back.probs - pi.probs).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.initial - pi.initial).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("nuisance tables keep values and provenance") {
  TempDir tmp;
  QTable q(2, 3);
  q << 0.1, 1.0 / 3.0, -2.0, 4.5, 0.0, 1e-9;
  std::string qp = tmp / "t.q";
  save_nuisance_q(qp, q, "fitted on fold 2");
  std::string prov;
  QTable q2 = load_nuisance_q(qp, &prov);
  CHECK(prov == "fitted on fold 2");
  CHECK((q2 - q).cwiseAbs().maxCoeff() == 0.0);

  WTable w(3);
  w << 1.5, 0.5, 1.0 / 7.0;
  std::string wp = tmp / "t.w";
  save_nuisance_w(wp, w, "oracle");
  WTable w2 = load_nuisance_w(wp, &prov);
  CHECK(prov == "oracle");
  CHECK((w2 - w).cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(load_nuisance_w(qp), ParseError);
  CHECK_THROWS_AS(load_nuisance_q(wp), ParseError);
}

TEST_CASE("trajectory csv round-trips") {
  TempDir tmp;
  TrajectoryDataset data;
  Trajectory t1;
  t1.states = {0, 1, 0};
  t1.actions = {1, 0};
  t1.rewards = {0.25, 1.0 / 3.0};
  Trajectory t2;
  t2.states = {1, 1, 1};
  t2.actions = {0, 1};
  t2.rewards = {-0.5, 0.0};
  data.trajs = {t1, t2};
  std::string path = tmp / "d.csv";
  save_trajectories_csv(path, data);
  TrajectoryDataset back = load_trajectories_csv(path);
  REQUIRE(back.N() == 2);
  CHECK(back.T() == 2);
  for (int i = 0; i < 2; ++i) {
    CHECK(back.trajs[i].states == data.trajs[i].states);
    CHECK(back.trajs[i].actions == data.trajs[i].actions);
    for (int t = 0; t < 2; ++t) CHECK(back.trajs[i].rewards[t] == data.trajs[i].rewards[t]);
  }
}

TEST_CASE("transition csv round-trips") {
  TempDir tmp;
  TransitionDataset data;
  data.items.push_back({0, 0, 2, 1, 0.75, 3});
  data.items.push_back({0, 1, 3, 0, 1.0 / 3.0, 2});
  data.items.push_back({5, 0, 0, 0, -1.25, 0});
  std::string path = tmp / "tr.csv";
  save_transitions_csv(path, data);
  TransitionDataset back = load_transitions_csv(path);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.items[i].traj_id == data.items[i].traj_id);
    CHECK(back.items[i].t == data.items[i].t);
    CHECK(back.items[i].s == data.items[i].s);
    CHECK(back.items[i].a == data.items[i].a);
    CHECK(back.items[i].r == data.items[i].r);
    CHECK(back.items[i].s_next == data.items[i].s_next);
  }
}

TEST_CASE("comments and blank lines are ignored, junk is rejected") {
  TempDir tmp;
  TabularMdp m = two_state_mdp();
  std::string path = tmp / "c.mdp";
  save_mdp(path, m);

  std::ifstream in(path);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  std::string commented = "# leading comment\n\n" + content + "\n# trailing comment\n";
  std::string path2 = tmp / "c2.mdp";
  write_text(path2, commented);
  TabularMdp back = load_mdp(path2);
  CHECK((back.trans - m.trans).cwiseAbs().maxCoeff() == 0.0);

  SUBCASE("wrong magic line") {
    std::string bad = tmp / "bad1.mdp";
    write_text(bad, "something-else v1\n" + content);
    CHECK_THROWS_AS(load_mdp(bad), ParseError);
  }
  SUBCASE("truncated file") {
    std::string bad = tmp / "bad2.mdp";
    write_text(bad, content.substr(0, content.size() / 2));
    CHECK_THROWS_AS(load_mdp(bad), ParseError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_mdp(tmp / "nope.mdp"), ParseError); }
}

TEST_CASE("csv loader rejects malformed rows") {
  TempDir tmp;
  SUBCASE("bad header") {
    std::string p = tmp / "h.csv";
    write_text(p, "a,b,c\n0,0,0,0,0,0\n");
    CHECK_THROWS_AS(load_trajectories_csv(p), ParseError);
  }
  SUBCASE("non-numeric field") {
    std::string p = tmp / "f.csv";
    write_text(p, "traj_id,t,s,a,r,s_next\n0,0,1,zero,0.5,1\n");
    CHECK_THROWS_AS(load_trajectories_csv(p), ParseError);
  }
  SUBCASE("ragged trajectories are rejected") {
    std::string p = tmp / "r.csv";
    write_text(p,
               "traj_id,t,s,a,r,s_next\n"
               "0,0,0,0,0.5,1\n"
               "0,1,1,0,0.5,0\n"
               "1,0,0,1,0.25,1\n");
    CHECK_THROWS(load_trajectories_csv(p));
  }
}

TEST_CASE("atomic_write replaces content and leaves no temp files") {
  TempDir tmp;
  std::string path = tmp / "out.txt";
  atomic_write(path, "first");
  atomic_write(path, "second");
  std::ifstream in(path);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(content == "second");
  int n_entries = 0;
  for (auto& e : fs::directory_iterator(tmp.dir)) {
    (void)e;
    ++n_entries;
  }
  CHECK(n_entries == 1);
}
