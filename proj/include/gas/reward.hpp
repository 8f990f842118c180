#pragma once

// Preference-specific step rewards shared by the policy's return-to-go and the
// critic targets.

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gas/data.hpp"
#include "gas/sim.hpp"

namespace gas {

enum class PreferenceKind { value_only, score_product, weighted_sum };

struct PreferenceSpec {
  PreferenceKind kind = PreferenceKind::score_product;
  double beta = 2.0;
  double w = 0.0;  // weighted_sum only

  void validate() const;
  std::string name() const;
  /// "value_only", "score_product" or "weighted_sum".
  static PreferenceKind parse_kind(std::string_view text);
};

/// min{(C / x)^beta, 1} with x = cost / perf; 1 when perf is 0 (no evidence of
/// a violation) or x <= C.
double constraint_penalty(double cost, double perf, double bound, double beta);

double preference_reward(const PreferenceSpec& spec, const sim::RewardComponents& rc,
                         std::span<const sim::Constraint> constraints);

/// Per-trajectory preference rewards for `apply_rewards`.
std::vector<std::vector<double>> preference_rewards(const data::Dataset& dataset, const PreferenceSpec& spec);

/// Mean per-step won value; the default weight for weighted_sum.
double mean_step_value(const data::Dataset& dataset);

}  // namespace gas
