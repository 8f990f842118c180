#include <cmath>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "gas/critic.hpp"
#include "gas/reward.hpp"
#include "gas/search.hpp"
#include "support.hpp"

using namespace gas;
namespace fs = std::filesystem;

namespace {

sim::RewardComponents components(double value, double cost, double perf, int wins) {
  sim::RewardComponents rc;
  rc.value_won = value;
  rc.constraint_cost = {cost};
  rc.constraint_perf = {perf};
  rc.wins = wins;
  return rc;
}

CriticMember train_member(const data::Dataset& ds, const IqlConfig& cfg, std::uint64_t seed) {
  CriticMember m(cfg, seed);
  const auto scaling = data::compute_scaling(ds);
  Rng rng(mix_seed(seed, 7));
  for (int s = 0; s < cfg.steps; ++s) iql_update(m, scaling, data::sample_batch(ds, cfg.batch, cfg.seq_len, rng), cfg);
  return m;
}

/// One-step episodes with actions uniform in [0, 2] and reward r(a).
template <class F>
data::Dataset bandit_dataset(int n, std::uint64_t seed, F reward) {
  data::Dataset ds;
  ds.env_config.period_length = 1;
  Rng rng(seed);
  std::vector<std::vector<double>> rewards;
  for (int i = 0; i < n; ++i) {
    data::Trajectory traj;
    data::Transition tr;
    tr.period_id = i;
    tr.state[0] = 1.0;
    tr.action = uniform(rng, 0.0, 2.0);
    tr.done = true;
    traj.transitions.push_back(tr);
    ds.trajectories.push_back(traj);
    rewards.push_back({reward(tr.action)});
  }
  data::apply_rewards(ds, rewards, 0.99);
  return ds;
}

IqlConfig small_config() {
  IqlConfig cfg;
  cfg.net.hidden = 16;
  cfg.net.n_layers = 1;
  cfg.net.n_heads = 1;
  cfg.net.max_timestep = 8;
  cfg.reward_scale = 1.0;
  cfg.lr = 1e-3;
  cfg.weight_decay = 0.0;
  return cfg;
}

}  // namespace

TEST_CASE("preference reward worked examples") {
  const std::vector<sim::Constraint> c{{8.0, sim::IndicatorKind::conversion}};
  PreferenceSpec value_only{PreferenceKind::value_only};
  CHECK(preference_reward(value_only, components(0.7, 5.0, 1.0, 3), c) == doctest::Approx(0.7));

  PreferenceSpec product;
  // CPA exactly at the bound keeps the full value.
  CHECK(preference_reward(product, components(1.0, 8.0, 1.0, 2), c) == doctest::Approx(1.0));
  // CPA twice the bound with beta 2 keeps a quarter.
  CHECK(preference_reward(product, components(1.0, 16.0, 1.0, 2), c) == doctest::Approx(0.25));
  // No wins gives zero regardless of the penalty.
  CHECK(preference_reward(product, components(0.0, 0.0, 0.0, 0), c) == 0.0);

  PreferenceSpec weighted{PreferenceKind::weighted_sum, 2.0, 0.5};
  CHECK(preference_reward(weighted, components(1.0, 16.0, 1.0, 2), c) == doctest::Approx(1.125));
}

TEST_CASE("constraint penalty stays in (0, 1] on random inputs") {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double p = constraint_penalty(uniform(rng, 0, 100), uniform(rng, 0, 10), uniform(rng, 0.1, 20), 2.0);
    CHECK(p > 0.0);
    CHECK(p <= 1.0);
  }
  CHECK(constraint_penalty(5.0, 0.0, 1.0, 2.0) == 1.0);
}

TEST_CASE("expectile loss examples and identities") {
  CHECK(expectile_loss(2.0, 0.7) == doctest::Approx(2.8));
  CHECK(expectile_loss(-2.0, 0.7) == doctest::Approx(1.2));
  for (double u = -3.0; u <= 3.0; u += 0.25) {
    CHECK(expectile_loss(u, 0.5) == doctest::Approx(0.5 * u * u));
    CHECK(expectile_loss(u, 0.7) >= 0.0);
    const double h = 1e-6;
    if (std::abs(u) > 1e-3)
      CHECK(expectile_grad(u, 0.7) ==
            doctest::Approx((expectile_loss(u + h, 0.7) - expectile_loss(u - h, 0.7)) / (2 * h)).epsilon(1e-6));
  }
}

TEST_CASE("Bellman targets at terminal steps are the reward alone") {
  IqlConfig cfg = small_config();
  cfg.reward_scale = 2.0;
  data::Window w;
  const int L = 4;
  w.states = data::StateRows::Zero(L, sim::kStateDim);
  w.actions = Eigen::VectorXd::Zero(L);
  w.rewards = Eigen::VectorXd::LinSpaced(L, 1.0, 4.0);
  w.rtg = Eigen::VectorXd::Zero(L);
  w.timesteps = Eigen::VectorXi::LinSpaced(L, 0, L - 1);
  w.mask = Eigen::VectorXd::Ones(L);
  w.done = Eigen::VectorXi::Ones(L);
  nn::Matrix<double> v_out = nn::Matrix<double>::Constant(2 * L, 1, 100.0);
  auto b = bellman_targets(v_out, w, cfg);
  for (int k = 0; k < L; ++k) {
    CHECK(b.target[k] == w.rewards[k] / 2.0);
    CHECK(b.weight[k] == 1.0);
  }

  w.done.setZero();
  for (int k = 0; k < 2 * L; ++k) v_out(k, 0) = k;
  b = bellman_targets(v_out, w, cfg);
  for (int k = 0; k + 1 < L; ++k) CHECK(b.target[k] == w.rewards[k] / 2.0 + cfg.gamma * (2 * (k + 1)));
  // The last position has no next state inside the window.
  CHECK(b.weight[L - 1] == 0.0);
  // Left padding carries no target.
  w.mask[0] = 0.0;
  CHECK(bellman_targets(v_out, w, cfg).weight[0] == 0.0);
}

TEST_CASE("Bellman targets regenerate bit-identically") {
  const auto ds = testing::ChainMdp::dataset(20, 5, 0.99);
  IqlConfig cfg = small_config();
  cfg.seq_len = 5;
  CriticMember m(cfg, 11);
  const auto scaling = data::compute_scaling(ds);
  const auto batch = data::sample_batch(ds, 8, cfg.seq_len, std::uint64_t{4});
  for (const auto& w : batch.windows) {
    const auto in = critic_input(SequenceContext::from_window(w), scaling);
    const auto a = bellman_targets(m.v.forward(in), w, cfg);
    const auto b = bellman_targets(m.v.forward(in), w, cfg);
    CHECK(a.target == b.target);
    CHECK(a.weight == b.weight);
  }
}

TEST_CASE("constant terminal reward drives Q to that reward") {
  const auto ds = bandit_dataset(64, 2, [](double) { return 1.0; });
  IqlConfig cfg = small_config();
  cfg.seq_len = 1;
  cfg.steps = 600;
  const auto m = train_member(ds, cfg, 9);
  const auto scaling = data::compute_scaling(ds);
  for (int i = 0; i < 8; ++i) {
    const auto ctx = SequenceContext::from_window(data::make_window(ds, i, 0, 1));
    CHECK(qt_forward(m, scaling, ctx, ctx.actions[0], cfg.reward_scale) == doctest::Approx(1.0).epsilon(1e-2));
  }
}

TEST_CASE("one-step bandit Q recovers the reward curve") {
  const auto r = [](double a) { return 1.0 - (a - 1.0) * (a - 1.0); };
  const auto ds = bandit_dataset(256, 3, r);
  IqlConfig cfg = small_config();
  cfg.seq_len = 1;
  cfg.steps = 1500;
  const auto m = train_member(ds, cfg, 10);
  const auto scaling = data::compute_scaling(ds);
  const auto ctx = SequenceContext::from_window(data::make_window(ds, 0, 0, 1));
  double worst = 0.0;
  for (double a = 0.2; a <= 1.8; a += 0.2) worst = std::max(worst, std::abs(qt_forward(m, scaling, ctx, a, 1.0) - r(a)));
  // Reward range over [0, 2] is 1.
  CHECK(worst < 0.05);
}

TEST_CASE("five-state chain matches tabular IQL within 5%") {
  const double gamma = 0.9;
  const auto ds = testing::ChainMdp::dataset(200, 21, gamma);
  IqlConfig cfg = small_config();
  cfg.gamma = gamma;
  cfg.seq_len = 5;
  cfg.steps = 4000;
  cfg.lr = 5e-4;
  const auto m = train_member(ds, cfg, 12);
  const auto scaling = data::compute_scaling(ds);
  const auto oracle = testing::ChainMdp::tabular_q(gamma, cfg.expectile);
  for (int s = 0; s < testing::ChainMdp::kStates; ++s)
    for (int a = 0; a < 2; ++a) {
      const auto ctx = testing::ChainMdp::context(ds, 0, s, cfg.seq_len);
      const double q = qt_forward(m, scaling, ctx, a, 1.0);
      INFO("s=", s, " a=", a, " q=", q, " oracle=", oracle[s][a]);
      CHECK(std::abs(q - oracle[s][a]) <= 0.05 * std::abs(oracle[s][a]));
    }
}

TEST_CASE("ensemble members differ and survive a save/load round trip") {
  sim::EnvConfig env;
  env.impressions_per_step = 100;
  env.period_length = 6;
  env.budget = 3000;
  std::vector<std::unique_ptr<BiddingAgent>> pols;
  pols.push_back(make_scripted_agent("noisy_pacing"));
  const auto ds = data::collect_dataset(pols, env, 4, 1);
  IqlConfig cfg;
  cfg.net.hidden = 8;
  cfg.net.n_layers = 1;
  cfg.net.n_heads = 1;
  cfg.steps = 3;
  cfg.batch = 4;
  cfg.seq_len = 4;
  int calls = 0;
  const auto ens = train_critics(ds, PreferenceSpec{}, 3, cfg, 5, [&](int, int, const IqlLosses&) { ++calls; });
  CHECK(calls == 9);
  std::set<std::uint64_t> hashes;
  for (const auto& m : ens.members) hashes.insert(nn::parameter_hash(m.q.params()));
  CHECK(hashes.size() == 3);

  const fs::path dir = fs::temp_directory_path() / "gas_test_critics";
  fs::remove_all(dir);
  save_ensemble(ens, dir);
  CHECK(fs::exists(dir / "ensemble.json"));
  CHECK(fs::exists(dir / critic_filename(ens.preference, ens.members[0].seed)));
  const auto back = load_ensemble(dir);
  REQUIRE(back.size() == 3);
  const auto ctx = SequenceContext::from_window(data::make_window(ds, 0, 3, cfg.seq_len));
  const std::vector<double> cands{0.0, 1.5, -2.0};
  CHECK(EnsembleEvaluator(ens).q_values(ctx, cands) == EnsembleEvaluator(back).q_values(ctx, cands));

  // A corrupted member file fails the hash check.
  {
    const auto path = dir / critic_filename(ens.preference, ens.members[1].seed);
    auto other = dir / critic_filename(ens.preference, ens.members[2].seed);
    fs::copy_file(other, path, fs::copy_options::overwrite_existing);
  }
  CHECK_THROWS(load_ensemble(dir));
  fs::remove_all(dir);
}

TEST_CASE("joint and separate candidate evaluation agree") {
  const auto ds = testing::ChainMdp::dataset(10, 5, 0.99);
  CriticEnsemble ens;
  ens.config = small_config();
  ens.config.seq_len = 5;
  ens.scaling = data::compute_scaling(ds);
  for (int k = 0; k < 2; ++k) ens.members.emplace_back(ens.config, mix_seed(1, k));
  const EnsembleEvaluator eval(ens);
  const auto ctx = testing::ChainMdp::context(ds, 3, 4, 5);
  const std::vector<double> cands{0.1, 0.7, 1.3, -0.4};
  const auto joint = eval.q_values(ctx, cands);
  for (std::size_t i = 0; i < cands.size(); ++i) {
    const auto single = eval.q_values(ctx, std::span<const double>(&cands[i], 1));
    for (int m = 0; m < 2; ++m) CHECK(single(m, 0) == joint(m, static_cast<Eigen::Index>(i)));
  }
  // The candidate only enters at the last position.
  CHECK(joint(0, 0) != joint(0, 1));
}
