#include "gas/reward.hpp"

#include <algorithm>
#include <cmath>

namespace gas {

void PreferenceSpec::validate() const {
  require(beta > 1.0, "PreferenceSpec: beta must be > 1");
  require(w >= 0.0, "PreferenceSpec: w must be >= 0");
}

std::string PreferenceSpec::name() const {
  switch (kind) {
    case PreferenceKind::value_only: return "value_only";
    case PreferenceKind::score_product: return "score_product";
    case PreferenceKind::weighted_sum: return "weighted_sum";
  }
  return "unknown";
}

PreferenceKind PreferenceSpec::parse_kind(std::string_view text) {
  if (text == "value_only") return PreferenceKind::value_only;
  if (text == "score_product") return PreferenceKind::score_product;
  if (text == "weighted_sum") return PreferenceKind::weighted_sum;
  throw ConfigError("unknown preference '" + std::string(text) + "'");
}

double constraint_penalty(double cost, double perf, double bound, double beta) {
  if (perf <= 0.0) return 1.0;
  const double x = cost / perf;
  if (x <= bound) return 1.0;
  return std::min(std::pow(bound / x, beta), 1.0);
}

double preference_reward(const PreferenceSpec& spec, const sim::RewardComponents& rc,
                         std::span<const sim::Constraint> constraints) {
  const double value = rc.wins > 0 ? rc.value_won : 0.0;
  if (spec.kind == PreferenceKind::value_only) return value;
  double penalty = 0.0;
  for (std::size_t j = 0; j < constraints.size(); ++j) {
    const bool degenerate = rc.wins == 0 || j >= rc.constraint_perf.size();
    penalty += degenerate ? 1.0
                          : constraint_penalty(rc.constraint_cost[j], rc.constraint_perf[j], constraints[j].bound,
                                               spec.beta);
  }
  penalty = constraints.empty() ? 1.0 : penalty / static_cast<double>(constraints.size());
  if (spec.kind == PreferenceKind::score_product) return value * penalty;
  return value + spec.w * penalty;
}

std::vector<std::vector<double>> preference_rewards(const data::Dataset& dataset, const PreferenceSpec& spec) {
  spec.validate();
  const auto constraints = dataset.constraints();
  std::vector<std::vector<double>> out;
  out.reserve(dataset.trajectories.size());
  for (const auto& traj : dataset.trajectories) {
    std::vector<double> r;
    r.reserve(traj.transitions.size());
    for (const auto& tr : traj.transitions) r.push_back(preference_reward(spec, tr.reward, constraints));
    out.push_back(std::move(r));
  }
  return out;
}

double mean_step_value(const data::Dataset& dataset) {
  double sum = 0.0;
  long long n = 0;
  for (const auto& traj : dataset.trajectories)
    for (const auto& tr : traj.transitions) {
      sum += tr.reward.value_won;
      ++n;
    }
  return n ? sum / static_cast<double>(n) : 0.0;
}

}  // namespace gas
