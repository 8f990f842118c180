#include "gas/eval.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include <boost/math/distributions/students_t.hpp>

#include "gas/config.hpp"

namespace gas {

EpisodeResult episode_result(const sim::EnvState& env) {
  EpisodeResult ep;
  ep.value = env.value_won;
  ep.budget = env.profile.budget;
  ep.budget_spent = env.budget_spent;
  ep.wins = env.wins;
  ep.cost_sums = env.constraint_cost_sums;
  ep.perf_sums = env.constraint_perf_sums;
  for (std::size_t j = 0; j < ep.cost_sums.size(); ++j)
    ep.constraint_ratios.push_back(ep.perf_sums[j] > 0.0 ? ep.cost_sums[j] / ep.perf_sums[j]
                                                          : std::numeric_limits<double>::quiet_NaN());
  return ep;
}

EpisodeResult run_episode(BiddingAgent& agent, const sim::EnvConfig& cfg, double budget_frac, std::uint64_t env_seed,
                          std::uint64_t agent_seed) {
  auto env = sim::reset(cfg.profile(budget_frac), cfg, env_seed);
  agent.begin_episode(env, agent_seed);
  while (!env.finished) sim::env_step(env, agent.act(env));
  return episode_result(env);
}

double metric_value(const EpisodeResult& ep) { return ep.value; }

std::vector<bool> exceeded_flags(const EpisodeResult& ep, std::span<const sim::Constraint> constraints) {
  require(ep.constraint_ratios.size() == constraints.size(), "exceeded_flags: constraint count mismatch");
  std::vector<bool> flags;
  for (std::size_t j = 0; j < constraints.size(); ++j) {
    const double x = ep.constraint_ratios[j];
    flags.push_back(!std::isnan(x) && x > constraints[j].bound);
  }
  return flags;
}

double metric_er(std::span<const EpisodeResult> results, std::span<const sim::Constraint> constraints) {
  require(!results.empty(), "metric_er: no episodes");
  double count = 0.0;
  for (const auto& ep : results)
    for (bool f : exceeded_flags(ep, constraints)) count += f ? 1.0 : 0.0;
  return count / static_cast<double>(results.size());
}

double metric_score(const EpisodeResult& ep, std::span<const sim::Constraint> constraints, double beta) {
  require(ep.constraint_ratios.size() == constraints.size(), "metric_score: constraint count mismatch");
  double penalty = 1.0;
  for (std::size_t j = 0; j < constraints.size(); ++j) {
    const double x = ep.constraint_ratios[j];
    if (std::isnan(x) || x <= constraints[j].bound) continue;
    penalty = std::min(penalty, std::pow(constraints[j].bound / x, beta));
  }
  return ep.value * penalty;
}

namespace {

PairedStat t_test(std::vector<double> diffs) {
  PairedStat s;
  s.n = static_cast<int>(diffs.size());
  if (s.n == 0) return s;
  double sum = 0.0;
  for (double d : diffs) sum += d;
  s.mean_diff = sum / s.n;
  if (s.n < 2) return s;
  double ss = 0.0;
  for (double d : diffs) ss += (d - s.mean_diff) * (d - s.mean_diff);
  s.std_diff = std::sqrt(ss / (s.n - 1));
  if (s.std_diff == 0.0) {
    if (s.mean_diff == 0.0) return s;
    s.t = s.mean_diff > 0.0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    s.p_two_sided = 0.0;
    s.p_greater = s.mean_diff > 0.0 ? 0.0 : 1.0;
    return s;
  }
  s.t = s.mean_diff / (s.std_diff / std::sqrt(static_cast<double>(s.n)));
  const boost::math::students_t dist(s.n - 1);
  s.p_greater = boost::math::cdf(boost::math::complement(dist, s.t));
  s.p_two_sided = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(s.t)));
  return s;
}

}  // namespace

PairedStat paired_score_stat(const ExperimentReport& report, std::string_view a, std::string_view b,
                             double budget_frac) {
  std::vector<double> diffs;
  for (const auto& ra : report.rows) {
    if (ra.agent != a || ra.failed || (budget_frac >= 0.0 && ra.budget_frac != budget_frac)) continue;
    for (const auto& rb : report.rows)
      if (rb.agent == b && !rb.failed && rb.budget_frac == ra.budget_frac && rb.period == ra.period) {
        diffs.push_back(ra.score - rb.score);
        break;
      }
  }
  auto s = t_test(std::move(diffs));
  s.agent_a = std::string(a);
  s.agent_b = std::string(b);
  s.budget = budget_frac >= 0.0 ? format_double(budget_frac) : "all";
  return s;
}

ExperimentReport run_experiment(std::span<BiddingAgent* const> agents, const ExperimentConfig& cfg) {
  require(!agents.empty(), "run_experiment: no agents");
  require(!cfg.budgets.empty() && cfg.n_periods >= 1, "run_experiment: need budgets and periods");
  const auto constraints = cfg.env.profile().constraints;
  ExperimentReport report;
  report.config_fingerprint = cfg.env.fingerprint();
  for (auto* agent : agents) {
    for (std::size_t b = 0; b < cfg.budgets.size(); ++b) {
      AggregateRow agg;
      agg.agent = agent->name();
      agg.budget_frac = cfg.budgets[b];
      std::vector<EpisodeResult> ok;
      for (int p = 0; p < cfg.n_periods; ++p) {
        EpisodeRow row;
        row.agent = agent->name();
        row.budget_frac = cfg.budgets[b];
        row.period = p;
        row.seed = mix_seed(cfg.seed, b, static_cast<std::uint64_t>(p));
        try {
          row.result = run_episode(*agent, cfg.env, row.budget_frac, row.seed, row.seed);
          row.score = metric_score(row.result, constraints, cfg.beta);
          row.er_flags = exceeded_flags(row.result, constraints);
          ok.push_back(row.result);
          agg.mean_value += row.result.value;
          agg.mean_score += row.score;
        } catch (const std::exception& e) {
          row.failed = true;
          row.error = e.what();
          ++agg.failed;
        }
        report.rows.push_back(std::move(row));
      }
      agg.n = static_cast<int>(ok.size());
      if (agg.n > 0) {
        agg.mean_value /= agg.n;
        agg.mean_score /= agg.n;
        agg.er = metric_er(ok, constraints);
      }
      report.aggregates.push_back(agg);
    }
  }
  for (std::size_t i = 0; i < agents.size(); ++i)
    for (std::size_t j = i + 1; j < agents.size(); ++j) {
      report.paired.push_back(paired_score_stat(report, agents[j]->name(), agents[i]->name()));
      for (double frac : cfg.budgets)
        report.paired.push_back(paired_score_stat(report, agents[j]->name(), agents[i]->name(), frac));
    }
  return report;
}

namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DatasetError("cannot write " + path.string());
  return out;
}

std::string fmt(double x) { return std::isnan(x) ? "nan" : std::isinf(x) ? (x > 0 ? "inf" : "-inf") : format_double(x); }

std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

}  // namespace

void write_episodes_csv(const ExperimentReport& report, const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "agent,budget_frac,seed,period,value,score,er_flags,constraint_ratios,budget_spent,wins,status\n";
  for (const auto& r : report.rows) {
    std::string flags, ratios;
    for (std::size_t j = 0; j < r.er_flags.size(); ++j) flags += (j ? ";" : "") + std::string(r.er_flags[j] ? "1" : "0");
    for (std::size_t j = 0; j < r.result.constraint_ratios.size(); ++j)
      ratios += (j ? ";" : "") + fmt(r.result.constraint_ratios[j]);
    out << r.agent << ',' << fmt(r.budget_frac) << ',' << r.seed << ',' << r.period << ',' << fmt(r.result.value)
        << ',' << fmt(r.score) << ',' << flags << ',' << ratios << ',' << fmt(r.result.budget_spent) << ','
        << r.result.wins << ',' << (r.failed ? "failed:" + csv_quote(r.error) : std::string("ok")) << '\n';
  }
}

void write_aggregates_csv(const ExperimentReport& report, const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "agent,budget_frac,n,failed,mean_value,mean_score,er\n";
  for (const auto& a : report.aggregates)
    out << a.agent << ',' << fmt(a.budget_frac) << ',' << a.n << ',' << a.failed << ',' << fmt(a.mean_value) << ','
        << fmt(a.mean_score) << ',' << fmt(a.er) << '\n';
}

void write_paired_csv(const ExperimentReport& report, const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "agent_a,agent_b,budget_frac,n,mean_diff,std_diff,t,p_two_sided,p_greater\n";
  for (const auto& s : report.paired)
    out << s.agent_a << ',' << s.agent_b << ',' << s.budget << ',' << s.n << ',' << fmt(s.mean_diff) << ','
        << fmt(s.std_diff) << ',' << fmt(s.t) << ',' << fmt(s.p_two_sided) << ',' << fmt(s.p_greater) << '\n';
}

void write_report(const ExperimentReport& report, const std::filesystem::path& dir) {
  write_episodes_csv(report, dir / "episodes.csv");
  write_aggregates_csv(report, dir / "aggregates.csv");
  write_paired_csv(report, dir / "paired.csv");
}

AblationKind parse_ablation_kind(std::string_view text) {
  if (text == "search_budget") return AblationKind::search_budget;
  if (text == "n_critics") return AblationKind::n_critics;
  if (text == "search_range") return AblationKind::search_range;
  throw ConfigError("unknown ablation kind '" + std::string(text) + "'");
}

std::string_view to_string(AblationKind k) {
  switch (k) {
    case AblationKind::search_budget: return "search_budget";
    case AblationKind::n_critics: return "n_critics";
    case AblationKind::search_range: return "search_range";
  }
  return "unknown";
}

std::vector<AblationRow> ablation_suite(AblationKind kind, std::span<const double> grid, const AblationSetup& setup) {
  require(setup.policy && setup.evaluator, "ablation_suite: policy and evaluator factory are required");
  require(!grid.empty(), "ablation_suite: empty grid");
  std::vector<AblationRow> rows;
  for (double param : grid) {
    SearchConfig search = setup.search;
    switch (kind) {
      case AblationKind::search_budget: search.n_proposals = static_cast<int>(std::lround(param)); break;
      case AblationKind::n_critics: search.m_critics = static_cast<int>(std::lround(param)); break;
      case AblationKind::search_range: search.set_range(param); break;
    }
    const auto evaluator = setup.evaluator(search.m_critics);
    GasInferAgent agent(*setup.policy, *evaluator, search);
    BiddingAgent* agents[] = {&agent};
    const auto report = run_experiment(agents, setup.experiment);
    AblationRow row;
    row.kind = std::string(to_string(kind));
    row.param = param;
    std::vector<EpisodeResult> ok;
    for (const auto& r : report.rows)
      if (!r.failed) {
        ok.push_back(r.result);
        row.mean_score += r.score;
        row.mean_value += r.result.value;
      }
    row.n = static_cast<int>(ok.size());
    if (row.n > 0) {
      row.mean_score /= row.n;
      row.mean_value /= row.n;
      row.er = metric_er(ok, setup.experiment.env.profile().constraints);
    }
    rows.push_back(row);
  }
  return rows;
}

void write_ablation_csv(std::span<const AblationRow> rows, const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "kind,param,n,mean_score,mean_value,er\n";
  for (const auto& r : rows)
    out << r.kind << ',' << fmt(r.param) << ',' << r.n << ',' << fmt(r.mean_score) << ',' << fmt(r.mean_value) << ','
        << fmt(r.er) << '\n';
}

}  // namespace gas
