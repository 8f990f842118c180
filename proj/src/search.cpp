#include "gas/search.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <boost/math/special_functions/binomial.hpp>
#include <boost/random/discrete_distribution.hpp>
#include <boost/random/uniform_int_distribution.hpp>

namespace gas {

TieBreak parse_tie_break(std::string_view text) {
  if (text == "prefer_base") return TieBreak::prefer_base;
  if (text == "lowest_index") return TieBreak::lowest_index;
  throw ConfigError("unknown tie-break '" + std::string(text) + "'");
}

std::string_view to_string(TieBreak t) { return t == TieBreak::prefer_base ? "prefer_base" : "lowest_index"; }

void SearchConfig::validate() const {
  require(n_proposals >= 1, "SearchConfig: n_proposals must be >= 1");
  require(perturb_low > 0.0 && perturb_low <= 1.0 && perturb_high >= 1.0,
          "SearchConfig: need 0 < perturb_low <= 1 <= perturb_high");
  require(m_critics >= 1, "SearchConfig: m_critics must be >= 1");
  require(temperature > 0.0, "SearchConfig: temperature must be positive");
}

void SearchConfig::set_range(double r) {
  require(r >= 0.0 && r < 1.0, "SearchConfig: range must be in [0, 1)");
  perturb_low = 1.0 - r;
  perturb_high = 1.0 + r;
}

ActionProposalSet propose_actions(double base_action, const SearchConfig& cfg, Rng& rng) {
  cfg.validate();
  require(std::isfinite(base_action), "propose_actions: base action must be finite");
  const auto clamp = [&](double a) { return std::clamp(a, -cfg.action_bound, cfg.action_bound); };
  ActionProposalSet set;
  set.base_action = clamp(base_action);
  set.proposals.reserve(static_cast<std::size_t>(cfg.n_proposals));
  for (int i = 0; i + 1 < cfg.n_proposals; ++i)
    set.proposals.push_back(clamp(base_action * uniform(rng, cfg.perturb_low, cfg.perturb_high)));
  set.proposals.push_back(set.base_action);
  set.base_index = cfg.n_proposals - 1;
  return set;
}

Eigen::VectorXd qvote_single(const Eigen::Ref<const Eigen::VectorXd>& q) {
  require(q.size() >= 1, "qvote_single: empty Q vector");
  const double lo = q.minCoeff(), hi = q.maxCoeff();
  if (!(hi > lo)) return Eigen::VectorXd::Zero(q.size());
  return (q.array() - lo) / (hi - lo);
}

VoteTally qvote_ensemble(const Eigen::Ref<const Eigen::MatrixXd>& per_critic_q, int base_index, TieBreak tie_break) {
  const auto M = per_critic_q.rows(), N = per_critic_q.cols();
  require(M >= 1 && N >= 1, "qvote_ensemble: empty Q matrix");
  require(base_index >= 0 && base_index < N, "qvote_ensemble: base index out of range");
  require(per_critic_q.allFinite(), "qvote_ensemble: non-finite Q value");
  VoteTally tally;
  tally.per_critic_votes.resize(M, N);
  for (Eigen::Index m = 0; m < M; ++m) tally.per_critic_votes.row(m) = qvote_single(per_critic_q.row(m).transpose()).transpose();
  tally.total_votes = tally.per_critic_votes.colwise().sum().transpose();
  const double best = tally.total_votes.maxCoeff();
  if (tie_break == TieBreak::prefer_base && tally.total_votes[base_index] == best) {
    tally.selected_index = base_index;
  } else {
    Eigen::Index i = 0;
    while (tally.total_votes[i] != best) ++i;
    tally.selected_index = static_cast<int>(i);
  }
  return tally;
}

int sample_vote(const Eigen::VectorXd& total_votes, double temperature, Rng& rng) {
  require(temperature > 0.0, "sample_vote: temperature must be positive");
  const double mx = total_votes.maxCoeff();
  std::vector<double> w(static_cast<std::size_t>(total_votes.size()));
  for (Eigen::Index i = 0; i < total_votes.size(); ++i)
    w[static_cast<std::size_t>(i)] = std::exp((total_votes[i] - mx) / temperature);
  boost::random::discrete_distribution<int, double> dist(w.begin(), w.end());
  return dist(rng);
}

namespace {

void check_distribution(std::span<const double> p) {
  require(!p.empty(), "vote distribution is empty");
  double sum = 0.0;
  for (double x : p) {
    require(x >= 0.0, "vote distribution has a negative entry");
    sum += x;
  }
  require(std::abs(sum - 1.0) <= 1e-9, "vote distribution must sum to 1");
}

std::vector<double> ratios(const std::vector<double>& x) {
  const double total = std::accumulate(x.begin(), x.end(), 0.0);
  std::vector<double> r;
  for (double xi : x) {
    const double others = total - xi;
    r.push_back(others > 0.0 ? xi / others : std::numeric_limits<double>::max());
  }
  return r;
}

}  // namespace

MajorityWinrate majority_winrate(std::span<const double> p, int M) {
  check_distribution(p);
  require(M >= 1 && M % 2 == 1, "majority_winrate: M must be a positive odd integer");
  MajorityWinrate out;
  for (double pi : p) {
    double prob = 0.0;
    for (int l = M / 2 + 1; l <= M; ++l)
      prob += boost::math::binomial_coefficient<double>(static_cast<unsigned>(M), static_cast<unsigned>(l)) *
              std::pow(pi, l) * std::pow(1.0 - pi, M - l);
    out.majority.push_back(prob);
  }
  out.win_rate = ratios(out.majority);
  return out;
}

std::vector<double> single_winrate(std::span<const double> p) {
  check_distribution(p);
  return ratios(std::vector<double>(p.begin(), p.end()));
}

std::vector<double> simulate_majority(std::span<const double> p, int M, long long trials, std::uint64_t seed) {
  check_distribution(p);
  require(M >= 1 && trials >= 1, "simulate_majority: M and trials must be positive");
  Rng rng(seed);
  boost::random::discrete_distribution<int, double> vote(p.begin(), p.end());
  std::vector<long long> wins(p.size(), 0);
  std::vector<int> counts(p.size());
  for (long long t = 0; t < trials; ++t) {
    std::fill(counts.begin(), counts.end(), 0);
    for (int m = 0; m < M; ++m) ++counts[static_cast<std::size_t>(vote(rng))];
    for (std::size_t i = 0; i < counts.size(); ++i)
      if (2 * counts[i] > M) ++wins[i];
  }
  std::vector<double> freq;
  for (long long w : wins) freq.push_back(static_cast<double>(w) / static_cast<double>(trials));
  return freq;
}

EnsembleEvaluator::EnsembleEvaluator(const CriticEnsemble& ensemble, int m)
    : ensemble_(ensemble), m_(m <= 0 ? ensemble.size() : m) {
  require(m_ >= 1 && m_ <= ensemble.size(), "EnsembleEvaluator: ensemble has " + std::to_string(ensemble.size()) +
                                                 " members, " + std::to_string(m_) + " requested");
}

Eigen::MatrixXd EnsembleEvaluator::q_values(const SequenceContext& ctx, std::span<const double> candidates) const {
  const auto c = ctx.tail(ensemble_.config.seq_len);
  Eigen::MatrixXd q(m_, static_cast<Eigen::Index>(candidates.size()));
  for (int m = 0; m < m_; ++m)
    for (std::size_t i = 0; i < candidates.size(); ++i)
      q(m, static_cast<Eigen::Index>(i)) = qt_forward(ensemble_.members[static_cast<std::size_t>(m)],
                                                      ensemble_.scaling, c, candidates[i],
                                                      ensemble_.config.reward_scale);
  return q;
}

SearchResult search_action(double base, const QEvaluator& evaluator, const SequenceContext& ctx,
                           const SearchConfig& cfg, Rng& rng) {
  SearchResult r;
  r.proposals = propose_actions(base, cfg, rng);
  if (cfg.n_proposals == 1) {
    r.tally.per_critic_votes = Eigen::MatrixXd::Zero(evaluator.members(), 1);
    r.tally.total_votes = Eigen::VectorXd::Zero(1);
    r.tally.selected_index = 0;
  } else {
    r.tally = qvote_ensemble(evaluator.q_values(ctx, r.proposals.proposals), r.proposals.base_index, cfg.tie_break);
    if (cfg.stochastic) r.tally.selected_index = sample_vote(r.tally.total_votes, cfg.temperature, rng);
  }
  r.action = r.proposals.proposals[static_cast<std::size_t>(r.tally.selected_index)];
  return r;
}

SearchResult gas_infer_step(const PolicyModel& policy, const QEvaluator& evaluator, const SequenceContext& ctx,
                            const SearchConfig& cfg, Rng& rng) {
  return search_action(policy_act(policy, ctx), evaluator, ctx, cfg, rng);
}

std::vector<RefinedPair> gas_sft_refine(const data::Dataset& dataset, const QEvaluator& evaluator,
                                        const RefineConfig& cfg) {
  std::vector<std::pair<int, int>> sites;
  for (std::size_t i = 0; i < dataset.trajectories.size(); ++i)
    for (int t = 0; t < dataset.trajectories[i].size(); ++t) sites.emplace_back(static_cast<int>(i), t);
  Rng rng(mix_seed(cfg.search.seed, 0x5f7ULL));
  if (cfg.max_transitions > 0 && sites.size() > static_cast<std::size_t>(cfg.max_transitions)) {
    // Partial Fisher-Yates, then restore dataset order.
    for (std::size_t i = 0; i < static_cast<std::size_t>(cfg.max_transitions); ++i) {
      boost::random::uniform_int_distribution<std::size_t> pick(i, sites.size() - 1);
      std::swap(sites[i], sites[pick(rng)]);
    }
    sites.resize(static_cast<std::size_t>(cfg.max_transitions));
    std::sort(sites.begin(), sites.end());
  }
  std::vector<RefinedPair> pairs;
  for (const auto& [traj, t] : sites) {
    const auto ctx = SequenceContext::from_window(data::make_window(dataset, traj, t, cfg.seq_len));
    const auto r = search_action(ctx.actions[ctx.length() - 1], evaluator, ctx, cfg.search, rng);
    const bool improved = r.tally.total_votes[r.tally.selected_index] > r.tally.total_votes[r.proposals.base_index];
    if (improved || !cfg.strict_improvement) pairs.push_back({ctx, r.action});
  }
  return pairs;
}

GasInferAgent::GasInferAgent(const PolicyModel& model, const QEvaluator& evaluator, SearchConfig cfg,
                             std::string name)
    : DtAgent(model, std::move(name)), evaluator_(evaluator), cfg_(std::move(cfg)) {
  cfg_.validate();
}

void GasInferAgent::begin_episode(const sim::EnvState& env, std::uint64_t seed) {
  DtAgent::begin_episode(env, seed);
  rng_.seed(mix_seed(cfg_.seed, seed));
}

double GasInferAgent::choose(const SequenceContext& ctx, double base) {
  return search_action(base, evaluator_, ctx, cfg_, rng_).action;
}

}  // namespace gas
