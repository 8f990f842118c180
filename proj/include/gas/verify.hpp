#pragma once

// Analytic and oracle checks run by `gas verify` and the acceptance suite.

#include <cstdint>
#include <string>
#include <vector>

namespace gas {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

/// Closed-form majority win rates for p = (0.4, 0.3, 0.3), M = 3, a Monte Carlo
/// cross-check and the Condorcet improvement over a grid of p.
CheckResult verify_voting_math(std::uint64_t seed, long long trials = 1000000);

/// L(u, 0.5) = 0.5 u^2, L(u, tau) = L(-u, 1 - tau) and L(0, tau) = 0 on a grid.
CheckResult verify_expectile_identities();

/// Central differences on the default-size critic and policy networks.
CheckResult verify_gradients(std::uint64_t seed, int n_seeds = 3);

/// Random auctions against a brute-force winner/cost oracle and the budget
/// invariant over random episodes.
CheckResult verify_auction(std::uint64_t seed, int n_auctions = 10000, int n_episodes = 1000);

std::vector<CheckResult> run_verify_suite(std::uint64_t seed);

}  // namespace gas
