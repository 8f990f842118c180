#pragma once

// Episode metrics (Value, ER, Score), paired-seed experiments over budget
// levels and search ablations, with CSV reports.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gas/agents.hpp"
#include "gas/policy.hpp"
#include "gas/search.hpp"
#include "gas/sim.hpp"

namespace gas {

struct EpisodeResult {
  double value = 0.0;
  double budget = 0.0;
  double budget_spent = 0.0;
  int wins = 0;
  std::vector<double> cost_sums;
  std::vector<double> perf_sums;
  std::vector<double> constraint_ratios;  // NaN when the denominator is 0
};

EpisodeResult episode_result(const sim::EnvState& env);

/// Runs one episode to completion; the agent sees `agent_seed`.
EpisodeResult run_episode(BiddingAgent& agent, const sim::EnvConfig& cfg, double budget_frac, std::uint64_t env_seed,
                          std::uint64_t agent_seed);

double metric_value(const EpisodeResult& ep);
/// Per-constraint exceeded flags; undefined ratios are not exceeded.
std::vector<bool> exceeded_flags(const EpisodeResult& ep, std::span<const sim::Constraint> constraints);
/// Mean over episodes of the number of exceeded constraints.
double metric_er(std::span<const EpisodeResult> results, std::span<const sim::Constraint> constraints);
/// value * min_j min{(C_j / x_j)^beta, 1}.
double metric_score(const EpisodeResult& ep, std::span<const sim::Constraint> constraints, double beta = 2.0);

struct EpisodeRow {
  std::string agent;
  double budget_frac = 1.0;
  std::uint64_t seed = 0;
  int period = 0;
  bool failed = false;
  std::string error;
  EpisodeResult result;
  double score = 0.0;
  std::vector<bool> er_flags;
};

struct AggregateRow {
  std::string agent;
  double budget_frac = 1.0;
  int n = 0;
  int failed = 0;
  double mean_value = 0.0;
  double mean_score = 0.0;
  double er = 0.0;
};

struct PairedStat {
  std::string agent_a, agent_b;
  std::string budget;  // a fraction or "all"
  int n = 0;
  double mean_diff = 0.0;  // a - b on Score
  double std_diff = 0.0;
  double t = 0.0;
  double p_two_sided = 1.0;
  double p_greater = 1.0;  // H1: a > b
};

struct ExperimentReport {
  std::uint64_t config_fingerprint = 0;
  std::vector<EpisodeRow> rows;
  std::vector<AggregateRow> aggregates;
  std::vector<PairedStat> paired;
};

struct ExperimentConfig {
  sim::EnvConfig env;
  std::vector<double> budgets = {1.0};
  int n_periods = 50;
  std::uint64_t seed = 0;
  double beta = 2.0;
};

/// Every agent runs every (budget, period) cell on the env seed
/// mix_seed(seed, budget index, period). A throwing agent marks its cell failed.
/// Paired Score statistics are reported for every ordered agent pair.
ExperimentReport run_experiment(std::span<BiddingAgent* const> agents, const ExperimentConfig& cfg);

/// Paired t statistics of a - b on Score over matching successful cells.
PairedStat paired_score_stat(const ExperimentReport& report, std::string_view a, std::string_view b,
                             double budget_frac = -1.0);

void write_episodes_csv(const ExperimentReport& report, const std::filesystem::path& path);
void write_aggregates_csv(const ExperimentReport& report, const std::filesystem::path& path);
void write_paired_csv(const ExperimentReport& report, const std::filesystem::path& path);
/// episodes.csv, aggregates.csv and paired.csv under `dir`.
void write_report(const ExperimentReport& report, const std::filesystem::path& dir);

enum class AblationKind { search_budget, n_critics, search_range };
AblationKind parse_ablation_kind(std::string_view text);
std::string_view to_string(AblationKind k);

struct AblationSetup {
  const PolicyModel* policy = nullptr;
  /// Evaluator limited to m critics.
  std::function<std::unique_ptr<QEvaluator>(int m)> evaluator;
  SearchConfig search;
  ExperimentConfig experiment;
};

struct AblationRow {
  std::string kind;
  double param = 0.0;
  int n = 0;
  double mean_score = 0.0;
  double mean_value = 0.0;
  double er = 0.0;
};

/// Sweeps one search parameter over `grid` with everything else fixed.
std::vector<AblationRow> ablation_suite(AblationKind kind, std::span<const double> grid, const AblationSetup& setup);
void write_ablation_csv(std::span<const AblationRow> rows, const std::filesystem::path& path);

}  // namespace gas
