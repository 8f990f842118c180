#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "gas/sim.hpp"

namespace gas {

/// Anything that can bid through an episode. `act` returns the lambda
/// increment for the current step of `env`.
class BiddingAgent {
 public:
  virtual ~BiddingAgent() = default;
  virtual std::string name() const = 0;
  virtual void begin_episode(const sim::EnvState& env, std::uint64_t seed) = 0;
  virtual double act(const sim::EnvState& env) = 0;
};

/// Holds lambda at a level drawn once per episode: cpa * U(low, high).
class ConstantLambdaPolicy : public BiddingAgent {
 public:
  ConstantLambdaPolicy(double low, double high) : low_(low), high_(high) {}
  std::string name() const override { return "constant"; }
  void begin_episode(const sim::EnvState& env, std::uint64_t seed) override;
  double act(const sim::EnvState& env) override { return level_ - env.lambda; }

 private:
  double low_, high_;
  double level_ = 0.0;
};

/// Feedback pacing on realized spend and CPA with multiplicative noise.
/// Gains are drawn per episode, so quality varies from run to run.
class NoisyPacingPolicy : public BiddingAgent {
 public:
  explicit NoisyPacingPolicy(double noise = 0.15) : noise_(noise) {}
  std::string name() const override { return "noisy_pacing"; }
  void begin_episode(const sim::EnvState& env, std::uint64_t seed) override;
  double act(const sim::EnvState& env) override;

 private:
  double noise_;
  double budget_gain_ = 0.0, cpa_gain_ = 0.0;
  double lambda_budget_ = 0.0, lambda_cpa_ = 0.0;
  Rng rng_;
};

/// Peeks at the current step's impressions and picks, by bisection, the
/// largest lambda whose step spend fits an even split of the remaining budget
/// and whose expected CPA (cost over expected conversions) stays under
/// `cpa_margin` times the bound.
class OraclePacingPolicy : public BiddingAgent {
 public:
  explicit OraclePacingPolicy(double cpa_margin = 0.95, double spend_slack = 1.0)
      : cpa_margin_(cpa_margin), spend_slack_(spend_slack) {}
  std::string name() const override { return "oracle_pacing"; }
  void begin_episode(const sim::EnvState&, std::uint64_t) override {}
  double act(const sim::EnvState& env) override;

 private:
  double cpa_margin_, spend_slack_;
};

class ZeroBidAgent : public BiddingAgent {
 public:
  std::string name() const override { return "zero_bid"; }
  void begin_episode(const sim::EnvState&, std::uint64_t) override {}
  double act(const sim::EnvState& env) override { return -env.lambda; }
};

/// Builds one of the scripted agents by name: constant, noisy_pacing,
/// oracle_pacing, zero_bid.
std::unique_ptr<BiddingAgent> make_scripted_agent(const std::string& name);

}  // namespace gas
