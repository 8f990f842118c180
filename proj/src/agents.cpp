#include "gas/agents.hpp"

#include <algorithm>
#include <limits>
#include <cmath>

#include <boost/random/normal_distribution.hpp>

namespace gas {

void ConstantLambdaPolicy::begin_episode(const sim::EnvState& env, std::uint64_t seed) {
  Rng rng(seed);
  level_ = env.config.cpa_constraint * uniform(rng, low_, high_);
}

void NoisyPacingPolicy::begin_episode(const sim::EnvState& env, std::uint64_t seed) {
  rng_.seed(seed);
  budget_gain_ = uniform(rng_, 0.2, 0.8);
  cpa_gain_ = uniform(rng_, 0.2, 0.8);
  const double start = env.config.cpa_constraint * uniform(rng_, 0.7, 1.3);
  lambda_budget_ = start;
  lambda_cpa_ = start * uniform(rng_, 1.0, 1.5);
}

double NoisyPacingPolicy::act(const sim::EnvState& env) {
  const int t = env.step;
  if (t > 0) {
    const double spent_frac = env.budget_spent / env.profile.budget;
    const double desired = static_cast<double>(t) / env.horizon();
    const double budget_step = -budget_gain_ * std::log((spent_frac + 1e-6) / desired);
    lambda_budget_ *= std::exp(std::clamp(budget_step, -0.3, 0.3));
    if (!env.constraint_perf_sums.empty() && env.constraint_perf_sums[0] > 0.0 &&
        env.last_reward.wins > 0) {
      const double cpa = env.constraint_cost_sums[0] / env.constraint_perf_sums[0];
      const double cpa_step = -cpa_gain_ * std::log(cpa / env.profile.constraints[0].bound);
      lambda_cpa_ *= std::exp(std::clamp(cpa_step, -0.3, 0.3));
    }
  }
  boost::random::normal_distribution<double> noise(0.0, noise_);
  const double target = std::min(lambda_budget_, lambda_cpa_) * std::exp(noise(rng_));
  return std::clamp(target, 0.0, env.config.lambda_max) - env.lambda;
}

double OraclePacingPolicy::act(const sim::EnvState& env) {
  const int steps_left = env.horizon() - env.step;
  const double target_spend = spend_slack_ * env.remaining_budget() / steps_left;
  const double cpa_cap = env.profile.constraints.empty()
                             ? std::numeric_limits<double>::infinity()
                             : cpa_margin_ * env.profile.constraints[0].bound;
  const auto feasible = [&](double lambda) {
    double spend = 0.0, expected_conv = 0.0;
    for (const auto& imp : env.current) {
      const double price = imp.highest_competitor();
      if (lambda * imp.value > price) {
        spend += price;
        expected_conv += imp.value;
      }
    }
    if (spend > target_spend) return false;
    return expected_conv <= 0.0 || spend <= cpa_cap * expected_conv;
  };
  double lo = 0.0, hi = env.config.lambda_max;
  if (feasible(hi)) return hi - env.lambda;
  for (int it = 0; it < 40; ++it) {
    const double mid = 0.5 * (lo + hi);
    (feasible(mid) ? lo : hi) = mid;
  }
  return lo - env.lambda;
}

std::unique_ptr<BiddingAgent> make_scripted_agent(const std::string& name) {
  if (name == "constant") return std::make_unique<ConstantLambdaPolicy>(0.5, 2.0);
  if (name == "noisy_pacing") return std::make_unique<NoisyPacingPolicy>();
  if (name == "oracle_pacing") return std::make_unique<OraclePacingPolicy>();
  if (name == "zero_bid") return std::make_unique<ZeroBidAgent>();
  throw ConfigError("unknown scripted agent '" + name + "'");
}

}  // namespace gas
