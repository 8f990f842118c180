#include "gas/verify.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "gas/critic.hpp"
#include "gas/policy.hpp"
#include "gas/search.hpp"
#include "gas/sim.hpp"

namespace gas {

namespace {

std::string fmt(double x) {
  std::ostringstream os;
  os.precision(6);
  os << x;
  return os.str();
}

nn::SequenceInput<double> random_input(const nn::NetworkSpec& spec, int padding, Rng& rng) {
  const int L = spec.context_tokens;
  nn::SequenceInput<double> in;
  for (const auto& [name, dim] : spec.inputs) {
    nn::Matrix<double> x(L, dim);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = uniform(rng, -1.0, 1.0);
    x.topRows(padding).setZero();
    in.modalities.push_back(x);
  }
  in.timesteps = Eigen::VectorXi::Zero(L);
  in.mask = Eigen::VectorXd::Ones(L);
  const int start = static_cast<int>(rng() % static_cast<std::uint64_t>(spec.max_timestep - (L - padding) + 1));
  for (int k = 0; k < L; ++k) {
    if (k < padding) {
      in.mask[k] = 0.0;
    } else {
      in.timesteps[k] = start + k - padding;
    }
  }
  return in;
}

nn::GradCheckResult check_network(const nn::NetworkSpec& spec, std::uint64_t seed) {
  nn::SequenceModel<double> model(spec, seed);
  // The small-gain head init leaves gradients near the absolute floor of the
  // relative error; a larger head keeps the check informative.
  model.params().tensor(model.params().find("head.w")) *= 100.0;
  Rng rng(mix_seed(seed, 17));
  const auto in = random_input(spec, 2, rng);
  nn::Matrix<double> w(in.length() * spec.modalities(), spec.output_dim);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = uniform(rng, -1.0, 1.0);
  return nn::check_gradients(model, in, w, 1e-4, 40, mix_seed(seed, 18));
}

}  // namespace

CheckResult verify_voting_math(std::uint64_t seed, long long trials) {
  CheckResult r{"voting_math", true, ""};
  const std::vector<double> p{0.4, 0.3, 0.3};
  const auto maj = majority_winrate(p, 3);
  const auto single = single_winrate(p);
  const auto sim = simulate_majority(p, 3, trials, seed);
  const double sim_rate = sim[0] / (sim[1] + sim[2]);
  r.pass = std::abs(maj.win_rate[0] - 0.8148) <= 1e-3 && std::abs(single[0] - 0.6667) <= 1e-3 &&
           std::abs(sim_rate - maj.win_rate[0]) <= 0.005;
  for (std::size_t i = 0; i < p.size(); ++i) r.pass = r.pass && std::abs(sim[i] - maj.majority[i]) <= 0.005;
  // Condorcet improvement for a unique plurality leader.
  int grid_failures = 0;
  for (double a = 0.35; a < 0.95; a += 0.05)
    for (double b = 0.05; b < a && a + b < 1.0; b += 0.05) {
      const std::vector<double> q{a, b, 1.0 - a - b};
      if (q[2] >= a) continue;
      if (!(majority_winrate(q, 3).win_rate[0] > single_winrate(q)[0])) ++grid_failures;
    }
  r.pass = r.pass && grid_failures == 0;
  r.detail = "R13=" + fmt(maj.win_rate[0]) + " Rk=" + fmt(single[0]) + " mc=" + fmt(sim_rate) +
             " grid_failures=" + std::to_string(grid_failures);
  return r;
}

CheckResult verify_expectile_identities() {
  CheckResult r{"expectile_identities", true, ""};
  double worst = 0.0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const double u = -5.0 + 10.0 * i / (n - 1);
    const double tau = 0.01 + 0.98 * ((i * 7919) % n) / (n - 1.0);
    worst = std::max(worst, std::abs(expectile_loss(u, 0.5) - 0.5 * u * u));
    worst = std::max(worst, std::abs(expectile_loss(u, tau) - expectile_loss(-u, 1.0 - tau)));
    worst = std::max(worst, std::abs(expectile_loss(0.0, tau)));
  }
  r.pass = worst <= 1e-12;
  r.detail = "max_abs_error=" + fmt(worst);
  return r;
}

CheckResult verify_gradients(std::uint64_t seed, int n_seeds) {
  CheckResult r{"gradient_check", true, ""};
  const IqlConfig iql;
  const PolicyTrainConfig pol;
  double worst = 0.0;
  int checked = 0, skipped = 0;
  for (int k = 0; k < n_seeds; ++k) {
    const auto s = mix_seed(seed, static_cast<std::uint64_t>(k));
    for (const auto& spec : {critic_spec(iql, false), critic_spec(iql, true), policy_spec(pol, 48)}) {
      const auto res = check_network(spec, s);
      worst = std::max(worst, res.max_rel_error);
      checked += res.checked;
      skipped += res.skipped_kinks;
    }
  }
  r.pass = worst < 1e-4 && checked > 0;
  r.detail = "max_rel_error=" + fmt(worst) + " checked=" + std::to_string(checked) +
             " skipped_kinks=" + std::to_string(skipped);
  return r;
}

CheckResult verify_auction(std::uint64_t seed, int n_auctions, int n_episodes) {
  CheckResult r{"auction_oracle", true, ""};
  Rng rng(seed);
  int mismatches = 0;
  for (int n = 0; n < n_auctions; ++n) {
    sim::ImpressionOpportunity imp;
    imp.value = uniform01(rng);
    imp.conversion_draw = uniform01(rng);
    const int k = 1 + static_cast<int>(rng() % 8);
    for (int i = 0; i < k; ++i) imp.competitor_bids.push_back(uniform(rng, 0.0, 10.0));
    // Occasional exact ties exercise the strict-win rule.
    const double bid = n % 10 == 0 ? imp.competitor_bids[0] : uniform(rng, 0.0, 12.0);
    const double budget = uniform(rng, 0.0, 12.0);
    const auto out = sim::run_auction(bid, imp, budget);
    double top = 0.0;
    for (double c : imp.competitor_bids) top = std::max(top, c);
    const bool win = bid > top && top <= budget;
    const bool ok = out.won == win && out.cost == (win ? top : 0.0) &&
                    out.conversion == (win && imp.conversion_draw < imp.value) &&
                    out.unaffordable == (bid > top && top > budget);
    mismatches += ok ? 0 : 1;
  }
  int violations = 0;
  for (int e = 0; e < n_episodes; ++e) {
    sim::EnvConfig cfg;
    cfg.impressions_per_step = 50 + static_cast<int>(rng() % 100);
    cfg.period_length = 4 + static_cast<int>(rng() % 20);
    cfg.budget = uniform(rng, 50.0, 5000.0);
    cfg.cpa_constraint = uniform(rng, 2.0, 20.0);
    auto env = sim::reset(cfg.profile(), cfg, rng());
    double spent = 0.0;
    while (!env.finished) {
      const auto step = sim::env_step(env, uniform(rng, -3.0, 5.0));
      spent += step.reward.constraint_cost.empty() ? 0.0 : step.reward.constraint_cost[0];
      if (env.budget_spent > env.profile.budget) ++violations;
    }
    if (std::abs(spent - env.budget_spent) > 1e-9 * std::max(1.0, spent)) ++violations;
  }
  r.pass = mismatches == 0 && violations == 0;
  r.detail = "auction_mismatches=" + std::to_string(mismatches) + "/" + std::to_string(n_auctions) +
             " budget_violations=" + std::to_string(violations) + "/" + std::to_string(n_episodes);
  return r;
}

std::vector<CheckResult> run_verify_suite(std::uint64_t seed) {
  return {verify_voting_math(mix_seed(seed, 1)), verify_expectile_identities(), verify_gradients(mix_seed(seed, 2)),
          verify_auction(mix_seed(seed, 3))};
}

}  // namespace gas
