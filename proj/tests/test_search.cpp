#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "gas/search.hpp"
#include "support.hpp"

using namespace gas;

namespace {

SearchConfig config(int n, int m = 3) {
  SearchConfig cfg;
  cfg.n_proposals = n;
  cfg.m_critics = m;
  return cfg;
}

/// Brute-force reference for qvote_ensemble.
int brute_force_winner(const Eigen::MatrixXd& q, int base, TieBreak tie) {
  std::vector<double> total(static_cast<std::size_t>(q.cols()), 0.0);
  for (Eigen::Index m = 0; m < q.rows(); ++m) {
    const double lo = q.row(m).minCoeff(), hi = q.row(m).maxCoeff();
    for (Eigen::Index i = 0; i < q.cols(); ++i)
      total[static_cast<std::size_t>(i)] += hi > lo ? (q(m, i) - lo) / (hi - lo) : 0.0;
  }
  const double best = *std::max_element(total.begin(), total.end());
  if (tie == TieBreak::prefer_base && total[static_cast<std::size_t>(base)] == best) return base;
  return static_cast<int>(std::find(total.begin(), total.end(), best) - total.begin());
}

SequenceContext dummy_context(double last_action = 1.0) {
  SequenceContext ctx;
  ctx.states = data::StateRows::Zero(1, sim::kStateDim);
  ctx.actions = Eigen::VectorXd::Constant(1, last_action);
  ctx.rtg = Eigen::VectorXd::Zero(1);
  ctx.timesteps = Eigen::VectorXi::Zero(1);
  ctx.mask = Eigen::VectorXd::Ones(1);
  return ctx;
}

}  // namespace

TEST_CASE("proposals stay inside the perturbation band and keep the base last") {
  Rng rng(1);
  for (int n : {1, 2, 5, 9}) {
    const auto set = propose_actions(10.0, config(n), rng);
    REQUIRE(static_cast<int>(set.proposals.size()) == n);
    CHECK(set.base_index == n - 1);
    CHECK(set.proposals.back() == 10.0);
    for (double a : set.proposals) {
      CHECK(a >= 9.0);
      CHECK(a <= 11.0);
    }
  }
  const auto zero = propose_actions(0.0, config(5), rng);
  for (double a : zero.proposals) CHECK(a == 0.0);
  // Negative bases scale the same way.
  for (double a : propose_actions(-10.0, config(5), rng).proposals) CHECK((a >= -11.0 && a <= -9.0));
  // Clamped to the action bound.
  auto cfg = config(5);
  cfg.action_bound = 10.5;
  for (double a : propose_actions(10.4, cfg, rng).proposals) CHECK(a <= 10.5);
}

TEST_CASE("perturbation factors are uniform over the band") {
  Rng rng(2);
  const auto cfg = config(2);
  const int n = 100000;
  double sum = 0.0, lo = 2.0, hi = 0.0;
  for (int i = 0; i < n; ++i) {
    const double e = propose_actions(1.0, cfg, rng).proposals[0];
    sum += e;
    lo = std::min(lo, e);
    hi = std::max(hi, e);
  }
  CHECK(sum / n == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(lo >= 0.9);
  CHECK(hi <= 1.1);
  CHECK(lo < 0.901);
  CHECK(hi > 1.099);
}

TEST_CASE("proposals are a pure function of the generator state") {
  Rng a(5), b(5);
  CHECK(propose_actions(3.0, config(7), a).proposals == propose_actions(3.0, config(7), b).proposals);
}

TEST_CASE("single-critic votes are min-max normalized") {
  Eigen::VectorXd q(3);
  q << 2, 5, 8;
  const auto v = qvote_single(q);
  CHECK(v[0] == 0.0);
  CHECK(v[1] == doctest::Approx(0.5));
  CHECK(v[2] == 1.0);
  CHECK(qvote_single(Eigen::VectorXd::Constant(4, 3.0)).isZero());
  // Invariant to positive affine maps.
  const Eigen::VectorXd mapped = (q.array() * 7.5 - 3.0).matrix();
  CHECK((qvote_single(mapped) - v).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("ensemble vote reduces to the single critic's argmax for M = 1") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    Eigen::MatrixXd q = Eigen::MatrixXd::NullaryExpr(1, 6, [&] { return uniform(rng, -1, 1); });
    Eigen::Index arg;
    q.row(0).maxCoeff(&arg);
    CHECK(qvote_ensemble(q, 5, TieBreak::lowest_index).selected_index == arg);
  }
}

TEST_CASE("unanimous critics pick their shared argmax") {
  Eigen::MatrixXd q(3, 4);
  q << 0, 1, 3, 2,  //
      10, 20, 90, 30,  //
      -5, -4, -1, -2;
  CHECK(qvote_ensemble(q, 3, TieBreak::prefer_base).selected_index == 2);
}

TEST_CASE("ensemble tallies match a brute-force count") {
  Rng rng(4);
  for (int trial = 0; trial < 500; ++trial) {
    // Coarse values make exact ties common.
    Eigen::MatrixXd q = Eigen::MatrixXd::NullaryExpr(3, 5, [&] { return std::floor(uniform(rng, 0, 3)); });
    for (TieBreak tie : {TieBreak::prefer_base, TieBreak::lowest_index}) {
      const auto tally = qvote_ensemble(q, 4, tie);
      CHECK(tally.selected_index == brute_force_winner(q, 4, tie));
      CHECK(tally.total_votes[tally.selected_index] >= tally.total_votes[4]);
    }
  }
}

TEST_CASE("degenerate critics fall back to the base action") {
  const Eigen::MatrixXd q = Eigen::MatrixXd::Constant(3, 5, 2.0);
  CHECK(qvote_ensemble(q, 4, TieBreak::prefer_base).selected_index == 4);
  CHECK(qvote_ensemble(q, 4, TieBreak::lowest_index).selected_index == 0);
  CHECK_THROWS_AS(qvote_ensemble(q, 5, TieBreak::prefer_base), ContractViolation);
  Eigen::MatrixXd bad = q;
  bad(0, 0) = std::nan("");
  CHECK_THROWS_AS(qvote_ensemble(bad, 4, TieBreak::prefer_base), ContractViolation);
}

TEST_CASE("selection is invariant to the order of proposals") {
  Rng rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    Eigen::MatrixXd q = Eigen::MatrixXd::NullaryExpr(3, 5, [&] { return uniform(rng, 0, 1); });
    std::vector<int> perm(5);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Eigen::MatrixXd shuffled(3, 5);
    for (int i = 0; i < 5; ++i) shuffled.col(i) = q.col(perm[static_cast<std::size_t>(i)]);
    const int base = static_cast<int>(std::find(perm.begin(), perm.end(), 4) - perm.begin());
    const int a = qvote_ensemble(q, 4, TieBreak::prefer_base).selected_index;
    const int b = qvote_ensemble(shuffled, base, TieBreak::prefer_base).selected_index;
    CHECK(perm[static_cast<std::size_t>(b)] == a);
  }
}

TEST_CASE("majority win rates match the closed form") {
  const std::vector<double> p{0.4, 0.3, 0.3};
  const auto single = single_winrate(p);
  CHECK(single[0] == doctest::Approx(0.6667).epsilon(1e-3));
  const auto maj = majority_winrate(p, 3);
  CHECK(maj.majority[0] == doctest::Approx(0.352));
  CHECK(maj.majority[1] == doctest::Approx(0.216));
  CHECK(maj.win_rate[0] == doctest::Approx(0.8148).epsilon(1e-3));
  CHECK(maj.win_rate[0] > single[0]);

  const std::vector<double> sure{1.0, 0.0, 0.0};
  CHECK(majority_winrate(sure, 3).win_rate[0] == std::numeric_limits<double>::max());

  CHECK_THROWS_AS(majority_winrate(std::vector<double>{0.5, 0.4}, 3), ContractViolation);
  CHECK_THROWS_AS(majority_winrate(p, 4), ContractViolation);
}

TEST_CASE("simulated majorities agree with the closed form") {
  const std::vector<double> p{0.45, 0.35, 0.2};
  const auto exact = majority_winrate(p, 5).majority;
  const auto sim = simulate_majority(p, 5, 200000, 7);
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(std::abs(sim[i] - exact[i]) < 0.005);
}

TEST_CASE("the plurality leader's majority win rate grows with M") {
  for (double lead : {0.4, 0.5, 0.6}) {
    const std::vector<double> p{lead, (1 - lead) / 2, (1 - lead) / 2};
    double prev = 0.0;
    for (int M = 1; M <= 9; M += 2) {
      const double w = majority_winrate(p, M).win_rate[0];
      CHECK(w >= prev);
      prev = w;
    }
  }
}

TEST_CASE("stochastic selection follows the softmax of the tallies") {
  Eigen::VectorXd votes(3);
  votes << 0.0, 1.0, 2.0;
  Rng rng(8);
  std::vector<int> counts(3, 0);
  const int n = 60000;
  for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(sample_vote(votes, 1.0, rng))];
  const double z = 1 + std::exp(1.0) + std::exp(2.0);
  CHECK(counts[2] / double(n) == doctest::Approx(std::exp(2.0) / z).epsilon(0.02));
  CHECK(counts[0] / double(n) == doctest::Approx(1.0 / z).epsilon(0.05));
}

TEST_CASE("a single proposal returns the base action") {
  testing::PeakOracle oracle;
  oracle.a_star = 3.0;
  Rng rng(9);
  const auto r = search_action(5.0, oracle, dummy_context(), config(1), rng);
  CHECK(r.action == 5.0);
}

TEST_CASE("search picks the proposal nearest a concave oracle's peak") {
  testing::PeakOracle oracle;
  Rng rng(10);
  for (int trial = 0; trial < 300; ++trial) {
    const double base = uniform(rng, 1.0, 20.0);
    oracle.a_star = base * uniform(rng, 0.85, 1.15);
    const auto r = search_action(base, oracle, dummy_context(), config(5), rng);
    for (double a : r.proposals.proposals) CHECK(std::abs(r.action - oracle.a_star) <= std::abs(a - oracle.a_star));
  }
}

TEST_CASE("search quality never drops as nested proposal sets grow") {
  testing::PeakOracle oracle;
  Rng draw(11);
  for (int trial = 0; trial < 300; ++trial) {
    const double base = uniform(draw, 1.0, 20.0);
    oracle.a_star = base * uniform(draw, 0.9, 1.1);
    double prev = -1e300;
    for (int n : {1, 3, 5, 7}) {
      Rng rng(static_cast<std::uint64_t>(trial));
      const double q = oracle.value(search_action(base, oracle, dummy_context(), config(n), rng).action);
      CHECK(q >= prev);
      prev = q;
    }
  }
}

TEST_CASE("refinement moves logged actions toward the oracle peak") {
  const auto ds = testing::ChainMdp::dataset(400, 3, 0.99);
  // Peak 8% above every logged action; logged zeros stay put.
  const testing::RelativePeakOracle oracle(1.08);
  RefineConfig cfg;
  cfg.seq_len = 5;
  const auto pairs = gas_sft_refine(ds, oracle, cfg);
  int nonzero = 0;
  for (const auto& t : ds.trajectories)
    for (const auto& tr : t.transitions) nonzero += tr.action != 0.0;
  CHECK(static_cast<int>(pairs.size()) <= static_cast<int>(ds.n_transitions()));
  int toward = 0;
  for (const auto& p : pairs) {
    const double logged = p.context.actions[p.context.length() - 1];
    toward += std::abs(p.refined_action - 1.08 * logged) < std::abs(logged - 1.08 * logged);
  }
  CHECK(toward >= 0.95 * static_cast<double>(pairs.size()));
  // Each logged action has a 1 - 0.5^4 chance that some proposal beats it.
  CHECK(pairs.size() >= 0.9 * nonzero);

  cfg.strict_improvement = false;
  CHECK(static_cast<long long>(gas_sft_refine(ds, oracle, cfg).size()) == ds.n_transitions());
  cfg.max_transitions = 17;
  const auto subset = gas_sft_refine(ds, oracle, cfg);
  CHECK(subset.size() == 17);
  const auto again = gas_sft_refine(ds, oracle, cfg);
  for (std::size_t i = 0; i < subset.size(); ++i) CHECK(subset[i].refined_action == again[i].refined_action);
}

TEST_CASE("refinement keeps nothing when the logged action already wins") {
  const auto ds = testing::ChainMdp::dataset(10, 3, 0.99);
  const testing::RelativePeakOracle oracle(1.0);
  RefineConfig cfg;
  cfg.seq_len = 5;
  CHECK(gas_sft_refine(ds, oracle, cfg).empty());
}
