#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "doctest.h"
#include "gas/eval.hpp"
#include "support.hpp"

using namespace gas;
namespace fs = std::filesystem;

namespace {

const std::vector<sim::Constraint> kCpa8{{8.0, sim::IndicatorKind::conversion}};

EpisodeResult result(double value, double cost, double perf) {
  EpisodeResult ep;
  ep.value = value;
  ep.cost_sums = {cost};
  ep.perf_sums = {perf};
  ep.constraint_ratios = {perf > 0.0 ? cost / perf : std::numeric_limits<double>::quiet_NaN()};
  return ep;
}

sim::EnvConfig small_env() {
  sim::EnvConfig env;
  env.impressions_per_step = 100;
  env.period_length = 8;
  env.budget = 2000;
  return env;
}

class Throwing : public BiddingAgent {
 public:
  std::string name() const override { return "throwing"; }
  void begin_episode(const sim::EnvState&, std::uint64_t) override {}
  double act(const sim::EnvState& env) override {
    if (env.step == 3) throw TrainingError("boom");
    return 1.0;
  }
};

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

}  // namespace

TEST_CASE("score worked examples") {
  // CPA 1.25x the bound with beta 2 keeps 64%.
  CHECK(metric_score(result(100.0, 10.0, 1.0), kCpa8) == doctest::Approx(64.0));
  CHECK(metric_score(result(100.0, 8.0, 1.0), kCpa8) == doctest::Approx(100.0));
  CHECK(metric_score(result(100.0, 5.0, 0.0), kCpa8) == doctest::Approx(100.0));
  CHECK(metric_score(result(100.0, 16.0, 1.0), kCpa8, 1.0) == doctest::Approx(50.0));
  CHECK(metric_value(result(42.0, 1.0, 1.0)) == 42.0);
}

TEST_CASE("score never exceeds value and matches a direct recomputation") {
  Rng rng(1);
  for (int i = 0; i < 500; ++i) {
    const auto ep = result(uniform(rng, 0, 100), uniform(rng, 0, 50), uniform(rng, 0, 5));
    const double x = ep.constraint_ratios[0];
    const double expect = std::isnan(x) || x <= 8.0 ? ep.value : ep.value * std::pow(8.0 / x, 2.0);
    CHECK(metric_score(ep, kCpa8) == doctest::Approx(expect));
    CHECK(metric_score(ep, kCpa8) <= ep.value);
  }
}

TEST_CASE("exceed rate counts exceeded constraints per episode") {
  const std::vector<EpisodeResult> half{result(1, 10, 1), result(1, 4, 1), result(1, 9, 1), result(1, 0, 0)};
  CHECK(metric_er(half, kCpa8) == doctest::Approx(0.5));
  const std::vector<EpisodeResult> none{result(1, 4, 1), result(1, 8, 1)};
  CHECK(metric_er(none, kCpa8) == 0.0);

  Rng rng(2);
  std::vector<EpisodeResult> eps;
  int exceeded = 0;
  for (int i = 0; i < 300; ++i) {
    eps.push_back(result(1.0, uniform(rng, 0, 16), 1.0));
    exceeded += eps.back().constraint_ratios[0] > 8.0;
  }
  CHECK(metric_er(eps, kCpa8) == doctest::Approx(exceeded / 300.0));
}

TEST_CASE("episode value equals the sum of per-step won value") {
  const auto env_cfg = small_env();
  auto env = sim::reset(env_cfg.profile(), env_cfg, 9);
  auto agent = make_scripted_agent("noisy_pacing");
  agent->begin_episode(env, 9);
  double sum = 0.0, cost = 0.0, perf = 0.0;
  while (!env.finished) {
    const auto step = sim::env_step(env, agent->act(env));
    sum += step.reward.value_won;
    cost += step.reward.constraint_cost[0];
    perf += step.reward.constraint_perf[0];
  }
  const auto ep = episode_result(env);
  CHECK(metric_value(ep) == doctest::Approx(sum).epsilon(1e-12));
  CHECK(ep.constraint_ratios[0] == doctest::Approx(cost / perf).epsilon(1e-12));
  CHECK(ep.budget_spent <= ep.budget);
}

TEST_CASE("identical agents give a zero paired difference") {
  auto a = make_scripted_agent("noisy_pacing");
  auto b = make_scripted_agent("noisy_pacing");
  ExperimentConfig cfg;
  cfg.env = small_env();
  cfg.n_periods = 6;
  BiddingAgent* agents[] = {a.get(), b.get()};
  const auto report = run_experiment(agents, cfg);
  REQUIRE(report.rows.size() == 12);
  for (int p = 0; p < 6; ++p) CHECK(report.rows[static_cast<std::size_t>(p)].score == report.rows[6 + static_cast<std::size_t>(p)].score);
  const auto s = paired_score_stat(report, "noisy_pacing", "noisy_pacing");
  CHECK(s.mean_diff == 0.0);
  CHECK(s.p_two_sided == 1.0);
}

TEST_CASE("oracle pacing beats zero bidding in every cell") {
  auto oracle = make_scripted_agent("oracle_pacing");
  auto zero = make_scripted_agent("zero_bid");
  ExperimentConfig cfg;
  cfg.env = small_env();
  cfg.budgets = {0.5, 1.0, 1.5};
  cfg.n_periods = 4;
  BiddingAgent* agents[] = {oracle.get(), zero.get()};
  const auto report = run_experiment(agents, cfg);
  CHECK(report.rows.size() == 2 * 3 * 4);
  CHECK(report.aggregates.size() == 2 * 3);
  for (const auto& ra : report.rows) {
    if (ra.agent != "oracle_pacing") continue;
    for (const auto& rb : report.rows)
      if (rb.agent == "zero_bid" && rb.budget_frac == ra.budget_frac && rb.period == ra.period) {
        CHECK(ra.result.value > rb.result.value);
        CHECK(ra.seed == rb.seed);
      }
  }
  const auto s = paired_score_stat(report, "oracle_pacing", "zero_bid");
  CHECK(s.n == 12);
  CHECK(s.mean_diff > 0.0);
  CHECK(s.p_greater < 0.01);
  CHECK(paired_score_stat(report, "oracle_pacing", "zero_bid", 0.5).n == 4);

  const fs::path dir = fs::temp_directory_path() / "gas_test_report";
  fs::remove_all(dir);
  write_report(report, dir);
  CHECK(count_lines(dir / "episodes.csv") == 1 + report.rows.size());
  CHECK(count_lines(dir / "aggregates.csv") == 1 + report.aggregates.size());
  CHECK(count_lines(dir / "paired.csv") == 1 + report.paired.size());
  fs::remove_all(dir);
}

TEST_CASE("a failing agent marks its cells failed and the run continues") {
  Throwing bad;
  auto good = make_scripted_agent("noisy_pacing");
  ExperimentConfig cfg;
  cfg.env = small_env();
  cfg.n_periods = 3;
  BiddingAgent* agents[] = {&bad, good.get()};
  const auto report = run_experiment(agents, cfg);
  int failed = 0, ok = 0;
  for (const auto& r : report.rows) (r.failed ? failed : ok) += 1;
  CHECK(failed == 3);
  CHECK(ok == 3);
  for (const auto& a : report.aggregates)
    if (a.agent == "throwing") CHECK(a.failed == 3);
}

TEST_CASE("ablations emit one row per grid value and N = 1 equals the base policy") {
  std::vector<std::unique_ptr<BiddingAgent>> pols;
  pols.push_back(make_scripted_agent("noisy_pacing"));
  const auto ds = data::collect_dataset(pols, small_env(), 3, 1);
  PolicyTrainConfig pcfg;
  pcfg.net.hidden = 8;
  pcfg.net.n_layers = 1;
  pcfg.net.n_heads = 1;
  pcfg.seq_len = 4;
  const auto policy = make_policy(ds, PreferenceSpec{}, pcfg, 3);

  AblationSetup setup;
  setup.policy = &policy;
  setup.evaluator = [](int m) { return std::make_unique<testing::RelativePeakOracle>(1.05, m); };
  setup.experiment.env = small_env();
  setup.experiment.n_periods = 3;
  const std::vector<double> grid{1, 3, 5, 7};
  const auto rows = ablation_suite(AblationKind::search_budget, grid, setup);
  REQUIRE(rows.size() == 4);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].param == grid[i]);
    CHECK(rows[i].n == 3);
  }

  DtAgent dt(policy);
  BiddingAgent* agents[] = {&dt};
  const auto base = run_experiment(agents, setup.experiment);
  double mean = 0.0;
  for (const auto& r : base.rows) mean += r.score / 3.0;
  CHECK(rows[0].mean_score == doctest::Approx(mean).epsilon(1e-12));

  const std::vector<double> ms{1, 3};
  CHECK(ablation_suite(AblationKind::n_critics, ms, setup).size() == 2);
  const std::vector<double> ranges{0.05, 0.1, 0.2};
  CHECK(ablation_suite(AblationKind::search_range, ranges, setup).size() == 3);
  CHECK(parse_ablation_kind("search_range") == AblationKind::search_range);
  CHECK_THROWS_AS(parse_ablation_kind("nope"), ConfigError);

  const fs::path path = fs::temp_directory_path() / "gas_test_ablation.csv";
  write_ablation_csv(rows, path);
  CHECK(count_lines(path) == 5);
  fs::remove(path);
}
