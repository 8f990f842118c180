#pragma once

// Synthetic constrained second-price auction environment. One episode
// (advertising period) is `period_length` decision steps; each step carries
// `impressions_per_step` impression opportunities contested against scripted
// opponents. The agent controls a single bid coefficient lambda through
// additive adjustments.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "gas/common.hpp"
#include "gas/config.hpp"

namespace gas::sim {

inline constexpr int kStateDim = 16;
using StateVector = Eigen::Matrix<double, kStateDim, 1>;

/// Feature names in StateVector order.
extern const std::array<std::string_view, kStateDim> kFeatureNames;

enum class IndicatorKind { conversion, constant };

/// One KPI constraint: the ratio sum(cost) / sum(indicator) must stay <= bound.
/// `conversion` makes it a CPA constraint, `constant` a cost-per-impression one.
struct Constraint {
  double bound = 1.0;
  IndicatorKind kind = IndicatorKind::conversion;
};

struct AdvertiserProfile {
  double budget = 1.0;
  std::vector<Constraint> constraints;
  int period_length = 48;

  void validate() const;
};

struct OpponentMix {
  int constant = 4;
  int pacing = 2;

  /// Parses "constant:4,pacing:2".
  static OpponentMix parse(std::string_view text);
  std::string to_string() const;
  int total() const { return constant + pacing; }
};

struct EnvConfig {
  int impressions_per_step = 1000;
  int period_length = 48;
  double beta_a = 2.0;
  double beta_b = 8.0;
  OpponentMix opponent_mix;
  double budget = 30000.0;
  double cpa_constraint = 8.0;
  std::uint64_t seed = 0;
  // Upper clamp for lambda. Not a file key.
  double lambda_max = 500.0;

  /// All file keys are required and unknown keys are rejected.
  static EnvConfig from_key_values(const KeyValues& kv);
  static EnvConfig parse(std::string_view text);
  static EnvConfig load(const std::filesystem::path& path);
  KeyValues to_key_values() const;
  std::string serialize() const;

  void validate() const;
  /// Profile with one CPA constraint and the budget scaled by `budget_frac`.
  AdvertiserProfile profile(double budget_frac = 1.0) const;
  /// FNV-1a over the canonical serialization.
  std::uint64_t fingerprint() const;
};

struct ImpressionOpportunity {
  int index = 0;
  double value = 0.0;  // also the conversion probability
  std::vector<double> competitor_bids;
  std::vector<double> perf_indicators;  // expected p_ij per constraint
  double conversion_draw = 1.0;         // U(0,1); converts iff won && draw < value

  double highest_competitor() const;
};

struct AuctionOutcome {
  bool won = false;
  double cost = 0.0;
  bool conversion = false;
  // Bid was highest but the second price did not fit the remaining budget.
  bool unaffordable = false;
};

struct RewardComponents {
  double value_won = 0.0;
  std::vector<double> constraint_cost;
  std::vector<double> constraint_perf;
  int wins = 0;
};

/// Per-step aggregates kept for the state features.
struct StepLog {
  double bid_mean = 0.0;
  double least_winning_cost_mean = 0.0;
  double pvalue_mean = 0.0;
  double conversions = 0.0;
  double win_rate = 0.0;
  int pv_num = 0;
};

struct Opponent {
  enum class Kind { constant, pacing } kind = Kind::constant;
  double lambda = 0.0;
  double base_spend = 0.0;  // pacing only, notional spend at step 0
  double phase = 0.0;       // pacing only
};

struct EnvState {
  EnvConfig config;
  AdvertiserProfile profile;
  int step = 0;
  double budget_spent = 0.0;
  int wins = 0;
  double value_won = 0.0;
  std::vector<double> constraint_cost_sums;
  std::vector<double> constraint_perf_sums;
  std::vector<StepLog> logs;
  double lambda = 0.0;
  bool finished = false;
  std::vector<Opponent> opponents;
  std::vector<ImpressionOpportunity> current;  // impressions of `step`
  RewardComponents last_reward;
  Rng rng;

  int horizon() const { return profile.period_length; }
  double remaining_budget() const { return profile.budget - budget_spent; }
  /// Textual dump of the generator state.
  std::string rng_state() const;
};

struct StepResult {
  StateVector next_state;
  RewardComponents reward;
  bool done = false;
};

/// Fresh episode; the first step's impressions are generated immediately.
EnvState reset(const AdvertiserProfile& profile, const EnvConfig& config, std::uint64_t seed);

/// Draws the impressions for `env.step` and advances the pacing opponents.
std::vector<ImpressionOpportunity> generate_impressions(EnvState& env);

/// b = coeffs[0]*v + sum_j coeffs[j+1] * p_ij * C_j, floored at 0.
double compute_bid(std::span<const double> coeffs, const ImpressionOpportunity& imp,
                   std::span<const Constraint> constraints);

AuctionOutcome run_auction(double my_bid, const ImpressionOpportunity& imp, double remaining_budget);

/// Applies lambda <- clamp(lambda + action, 0, lambda_max) and runs every
/// impression of the current step.
StepResult env_step(EnvState& env, double action);

StateVector build_state_features(const EnvState& env);

/// Feature construction from raw logs; `build_state_features` forwards here.
StateVector features_from_logs(std::span<const StepLog> past, double current_pvalue_mean,
                               int current_pv_num, int step, int horizon, double budget,
                               double budget_spent);

}  // namespace gas::sim
