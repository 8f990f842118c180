#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "gas/sim.hpp"

using namespace gas;
using namespace gas::sim;

namespace {

EnvConfig small_config(int impressions = 200) {
  EnvConfig cfg;
  cfg.impressions_per_step = impressions;
  return cfg;
}

ImpressionOpportunity make_imp(double value, std::vector<double> competitors, std::vector<double> perf = {}) {
  ImpressionOpportunity imp;
  imp.value = value;
  imp.competitor_bids = std::move(competitors);
  imp.perf_indicators = std::move(perf);
  imp.conversion_draw = 0.5;
  return imp;
}

// Independent straight-line replay of an episode at constant lambda: same
// impression stream, own auction and budget arithmetic.
double replay_constant_lambda(EnvState env, double lambda) {
  double spent = 0.0, value = 0.0;
  for (;;) {
    bool forfeited = false;
    for (const auto& imp : env.current) {
      double price = 0.0;
      for (double b : imp.competitor_bids) price = std::max(price, b);
      const double bid = lambda * imp.value;
      if (bid <= price) continue;
      if (price > env.profile.budget - spent) {
        forfeited = true;
        continue;
      }
      spent += price;
      value += imp.value;
    }
    env.step += 1;
    if (forfeited || spent >= env.profile.budget || env.step >= env.horizon()) break;
    env.current = generate_impressions(env);
  }
  return value;
}

}  // namespace

TEST_CASE("reset gives a fresh deterministic state") {
  const auto cfg = small_config();
  const auto a = reset(cfg.profile(), cfg, 7);
  CHECK(a.step == 0);
  CHECK(a.budget_spent == 0.0);
  CHECK(a.logs.empty());
  CHECK(a.value_won == 0.0);
  const auto b = reset(cfg.profile(), cfg, 7);
  CHECK(a.rng_state() == b.rng_state());
  REQUIRE(a.current.size() == b.current.size());
  for (std::size_t i = 0; i < a.current.size(); ++i) {
    CHECK(a.current[i].value == b.current[i].value);
    CHECK(a.current[i].competitor_bids == b.current[i].competitor_bids);
  }
  const auto c = reset(cfg.profile(), cfg, 8);
  CHECK(a.rng_state() != c.rng_state());
}

TEST_CASE("reset rejects a non-positive budget") {
  const auto cfg = small_config();
  auto profile = cfg.profile();
  profile.budget = 0.0;
  CHECK_THROWS_AS(reset(profile, cfg, 1), ConfigError);
  auto bad = cfg;
  bad.budget = -5.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("generate_impressions length, determinism and value law") {
  auto cfg = small_config(1000);
  auto env = reset(cfg.profile(), cfg, 3);
  CHECK(env.current.size() == 1000);
  for (const auto& imp : env.current) {
    CHECK(imp.value >= 0.0);
    CHECK(imp.value <= 1.0);
    CHECK(!imp.competitor_bids.empty());
    CHECK(imp.perf_indicators.size() == env.profile.constraints.size());
  }
  double sum = 0.0;
  for (int rep = 0; rep < 100; ++rep)
    for (const auto& imp : generate_impressions(env)) sum += imp.value;
  const double mean = sum / 1e5;
  CHECK(mean >= 0.15);
  CHECK(mean <= 0.25);

  auto e1 = reset(cfg.profile(), cfg, 11);
  auto e2 = reset(cfg.profile(), cfg, 11);
  const auto i1 = generate_impressions(e1);
  const auto i2 = generate_impressions(e2);
  for (std::size_t i = 0; i < i1.size(); ++i) CHECK(i1[i].competitor_bids == i2[i].competitor_bids);
}

TEST_CASE("generate_impressions after the episode ends is an error") {
  auto cfg = small_config(50);
  cfg.period_length = 2;
  auto env = reset(cfg.profile(), cfg, 1);
  env_step(env, 1.0);
  env_step(env, 0.0);
  CHECK(env.finished);
  CHECK_THROWS_AS(generate_impressions(env), OutOfEpisodeError);
  CHECK_THROWS_AS(env_step(env, 0.0), OutOfEpisodeError);
}

TEST_CASE("compute_bid follows the linear bid form") {
  const auto imp = make_imp(0.5, {1.0});
  CHECK(compute_bid(std::vector<double>{1.0}, imp, {}) == doctest::Approx(0.5));

  const auto imp1 = make_imp(0.5, {1.0}, {1.0});
  const std::vector<Constraint> cons = {{10.0, IndicatorKind::conversion}};
  CHECK(compute_bid(std::vector<double>{1.0, 2.0}, imp1, cons) == doctest::Approx(20.5));
  CHECK(compute_bid(std::vector<double>{0.0, 0.0}, imp1, cons) == 0.0);
  CHECK_THROWS_AS(compute_bid(std::vector<double>{1.0}, imp1, cons), ContractViolation);
}

TEST_CASE("run_auction is a second-price auction with strict wins") {
  auto out = run_auction(5.0, make_imp(0.5, {3.0, 2.0}), 100.0);
  CHECK(out.won);
  CHECK(out.cost == 3.0);
  out = run_auction(2.0, make_imp(0.5, {3.0}), 100.0);
  CHECK_FALSE(out.won);
  CHECK(out.cost == 0.0);
  out = run_auction(3.0, make_imp(0.5, {3.0}), 100.0);
  CHECK_FALSE(out.won);  // tie loses
  out = run_auction(5.0, make_imp(0.5, {3.0}), 2.0);
  CHECK_FALSE(out.won);  // unaffordable second price
  CHECK(out.unaffordable);
  CHECK(out.cost == 0.0);
}

TEST_CASE("run_auction matches a brute-force oracle on random instances") {
  Rng rng(99);
  for (int n = 0; n < 10000; ++n) {
    const int k = 1 + static_cast<int>(rng() % 6);
    std::vector<double> comps(static_cast<std::size_t>(k));
    for (auto& c : comps) c = uniform(rng, 0.0, 10.0);
    const double bid = uniform(rng, 0.0, 12.0);
    const double budget = uniform(rng, 0.0, 12.0);
    const auto imp = make_imp(uniform01(rng), comps);
    const auto out = run_auction(bid, imp, budget);
    double top = 0.0;
    for (double c : comps) top = c > top ? c : top;
    const bool expect_win = bid > top && top <= budget;
    REQUIRE(out.won == expect_win);
    REQUIRE(out.cost == (expect_win ? top : 0.0));
    if (out.won) REQUIRE(out.cost <= bid);
  }
}

TEST_CASE("env_step with zero lambda wins nothing") {
  auto cfg = small_config();
  auto env = reset(cfg.profile(), cfg, 5);
  const auto r = env_step(env, 0.0);
  CHECK(r.reward.wins == 0);
  CHECK(r.reward.value_won == 0.0);
  CHECK(env.lambda == 0.0);
}

TEST_CASE("budget exhaustion ends the episode without overspending") {
  auto cfg = small_config(1000);
  cfg.budget = 50.0;
  auto env = reset(cfg.profile(), cfg, 5);
  const auto r = env_step(env, 100.0);
  CHECK(r.done);
  CHECK(env.budget_spent <= cfg.budget);
  CHECK(env.finished);
}

TEST_CASE("lambda is clamped to [0, lambda_max]") {
  auto cfg = small_config();
  auto env = reset(cfg.profile(), cfg, 5);
  env_step(env, -10.0);
  CHECK(env.lambda == 0.0);
  env_step(env, 1e6);
  CHECK(env.lambda == cfg.lambda_max);
}

TEST_CASE("full rollout matches the straight-line replay") {
  auto cfg = small_config(500);
  for (double lambda : {6.0, 9.0, 14.0}) {
    for (double budget : {3000.0, 30000.0}) {
      cfg.budget = budget;
      auto env = reset(cfg.profile(), cfg, 21);
      const double expected = replay_constant_lambda(env, lambda);
      env_step(env, lambda);
      while (!env.finished) env_step(env, 0.0);
      CHECK(env.value_won == doctest::Approx(expected).epsilon(1e-12));
    }
  }
}

TEST_CASE("winning set is monotone in lambda within a step") {
  auto cfg = small_config(500);
  cfg.budget = 1e9;
  const auto env = reset(cfg.profile(), cfg, 17);
  const std::vector<Constraint> cons = env.profile.constraints;
  for (double lo : {2.0, 5.0, 8.0}) {
    const double hi = lo * 1.3;
    for (const auto& imp : env.current) {
      const auto a = run_auction(compute_bid(std::vector<double>{lo, 0.0}, imp, cons), imp, 1e9);
      const auto b = run_auction(compute_bid(std::vector<double>{hi, 0.0}, imp, cons), imp, 1e9);
      if (a.won) CHECK(b.won);
    }
  }
}

TEST_CASE("state features on a fresh env") {
  auto cfg = small_config();
  const auto env = reset(cfg.profile(), cfg, 1);
  const auto s = build_state_features(env);
  CHECK(s[0] == 1.0);
  CHECK(s[1] == 1.0);
  for (int i : {2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 14, 15}) CHECK(s[i] == 0.0);
  CHECK(s[13] == cfg.impressions_per_step);
  CHECK(s[12] > 0.0);
}

TEST_CASE("state features from three bid logs") {
  std::vector<StepLog> logs(3);
  logs[0].bid_mean = 1.0;
  logs[1].bid_mean = 2.0;
  logs[2].bid_mean = 3.0;
  const auto s = features_from_logs(logs, 0.2, 100, 3, 48, 10.0, 0.0);
  CHECK(s[2] == doctest::Approx(2.0));
  CHECK(s[3] == doctest::Approx(2.0));
}

TEST_CASE("state features match a hand-computed five-step log") {
  // bid, lwc, pvalue, conversions, win_rate, pv_num
  const std::vector<StepLog> logs = {
      {1.0, 2.0, 0.10, 4.0, 0.5, 100},  {3.0, 4.0, 0.20, 0.0, 0.25, 200}, {5.0, 6.0, 0.30, 2.0, 0.0, 300},
      {7.0, 8.0, 0.40, 6.0, 1.0, 400}, {9.0, 10.0, 0.50, 8.0, 0.75, 500},
  };
  const auto s = features_from_logs(logs, 0.33, 600, 5, 48, 200.0, 50.0);
  CHECK(s[0] == doctest::Approx(43.0 / 48.0));
  CHECK(s[1] == doctest::Approx(0.75));
  CHECK(s[2] == doctest::Approx(5.0));   // (1+3+5+7+9)/5
  CHECK(s[3] == doctest::Approx(7.0));   // (5+7+9)/3
  CHECK(s[4] == doctest::Approx(6.0));   // (2+4+6+8+10)/5
  CHECK(s[5] == doctest::Approx(0.30));  // (.1+.2+.3+.4+.5)/5
  CHECK(s[6] == doctest::Approx(4.0));   // (4+0+2+6+8)/5
  CHECK(s[7] == doctest::Approx(0.5));   // (.5+.25+0+1+.75)/5
  CHECK(s[8] == doctest::Approx(8.0));
  CHECK(s[9] == doctest::Approx(0.40));
  CHECK(s[10] == doctest::Approx(16.0 / 3.0));
  CHECK(s[11] == doctest::Approx(1.75 / 3.0));
  CHECK(s[12] == doctest::Approx(0.33));
  CHECK(s[13] == 600.0);
  CHECK(s[14] == 1200.0);
  CHECK(s[15] == 1500.0);
}

TEST_CASE("budget, second-price and feature-bound invariants over random episodes") {
  auto cfg = small_config(200);
  Rng rng(1234);
  for (int ep = 0; ep < 40; ++ep) {
    cfg.budget = uniform(rng, 100.0, 8000.0);
    auto env = reset(cfg.profile(), cfg, rng());
    while (!env.finished) {
      const auto r = env_step(env, uniform(rng, -4.0, 6.0));
      REQUIRE(env.budget_spent <= env.profile.budget);
      REQUIRE(r.next_state[0] >= 0.0);
      REQUIRE(r.next_state[0] <= 1.0);
      REQUIRE(r.next_state[1] >= 0.0);
      REQUIRE(r.next_state[1] <= 1.0);
      REQUIRE(r.next_state.allFinite());
      for (int i : {13, 14, 15}) REQUIRE(r.next_state[i] >= 0.0);
    }
  }
}

TEST_CASE("EnvConfig file keys are exact") {
  const std::string text =
      "impressions_per_step = 100\nperiod_length = 48\nvalue_dist.beta_a = 2\nvalue_dist.beta_b = 8\n"
      "opponent_mix = constant:3,pacing:1\nbudget = 1000\ncpa_constraint = 8\nseed = 5\n";
  const auto cfg = EnvConfig::parse(text);
  CHECK(cfg.impressions_per_step == 100);
  CHECK(cfg.opponent_mix.constant == 3);
  CHECK(cfg.opponent_mix.pacing == 1);
  CHECK(EnvConfig::parse(cfg.serialize()).serialize() == cfg.serialize());
  CHECK_THROWS_AS(EnvConfig::parse(text + "extra = 1\n"), ConfigError);
  CHECK_THROWS_AS(EnvConfig::parse("budget = 5\n"), ConfigError);
  CHECK_THROWS_AS(EnvConfig::parse(text.substr(0, text.find("budget")) + "budget = 0\ncpa_constraint = 8\nseed = 5\n"),
                  ConfigError);
}
