#pragma once

// Return-conditioned sequence policy trained by behavior cloning, its
// supervised fine-tuning on search-refined actions and the bidding agent
// that runs it.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "gas/agents.hpp"
#include "gas/context.hpp"
#include "gas/data.hpp"
#include "gas/nn.hpp"
#include "gas/reward.hpp"

namespace gas {

struct PolicyTrainConfig {
  int steps = 3000;
  int batch = 32;
  int seq_len = 10;
  double lr = 1e-4;
  double weight_decay = 1e-2;
  double gamma = 0.99;
  double rtg_scale = 2000.0;
  double target_percentile = 0.9;
  double holdout_frac = 0.1;
  int holdout_windows = 256;
  nn::NetworkSpec net = default_net();

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static PolicyTrainConfig from_json(const nlohmann::json& j);
  static nn::NetworkSpec default_net();
};

struct PolicyModel {
  nn::SequenceModel<double> net;
  data::FeatureScaling scaling;
  PreferenceSpec preference;
  double rtg_scale = 2000.0;
  double gamma = 0.99;
  double target_return = 0.0;  // initial return-to-go at deployment
  double action_bound = 500.0;
  int seq_len = 10;
};

/// Network layout: (rtg, state, action) tokens, scalar action head.
nn::NetworkSpec policy_spec(const PolicyTrainConfig& cfg, int period_length);

/// Deterministic head output at the last state token, clipped to
/// [-action_bound, action_bound].
double policy_act(const PolicyModel& model, const SequenceContext& ctx);

struct RefinedPair {
  SequenceContext context;
  double refined_action = 0.0;
};

struct TrainLog {
  std::vector<double> loss;  // per step
  double initial_holdout_mse = 0.0;
  double final_holdout_mse = 0.0;
};

/// Fresh model whose scaling and deployment target come from `dataset`.
PolicyModel make_policy(const data::Dataset& dataset, const PreferenceSpec& preference,
                        const PolicyTrainConfig& cfg, std::uint64_t seed);

/// Masked MSE between predicted and logged actions (in action_scale units).
PolicyModel train_policy_bc(const data::Dataset& dataset, const PreferenceSpec& preference,
                            const PolicyTrainConfig& cfg, std::uint64_t seed, TrainLog* log = nullptr);

/// Mean squared normalized action error over the windows.
double policy_mse(const PolicyModel& model, std::span<const data::Window> windows);

struct SftConfig {
  double lr = 1e-5;
  int steps = 500;
  int batch = 32;
  double weight_decay = 1e-2;
};

/// Minimizes mse(policy_act(context), refined_action) over the pairs.
void finetune_sft(PolicyModel& model, std::span<const RefinedPair> pairs, const SftConfig& cfg,
                  std::uint64_t seed, TrainLog* log = nullptr);

void save_policy(const PolicyModel& model, const std::filesystem::path& path);
PolicyModel load_policy(const std::filesystem::path& path);

/// Builds contexts from the live episode: states, own past actions and a
/// return-to-go that starts at `target_return` and drops by each realized
/// preference reward.
class SequenceTracker {
 public:
  void begin(double target_return);
  /// Records the reward of the previous step (if any) and the current state.
  void observe(const sim::EnvState& env, const PreferenceSpec& preference);
  void commit(double action) { history_.set_last_action(action); }
  SequenceContext context(int seq_len) const { return history_.context(seq_len); }

 private:
  EpisodeHistory history_;
  double rtg_ = 0.0;
};

/// The base generative policy as a bidding agent.
class DtAgent : public BiddingAgent {
 public:
  explicit DtAgent(const PolicyModel& model, std::string name = "dt") : model_(model), name_(std::move(name)) {}
  std::string name() const override { return name_; }
  void begin_episode(const sim::EnvState& env, std::uint64_t seed) override;
  double act(const sim::EnvState& env) override;

 protected:
  /// Picks the executed action given the context and the policy's proposal.
  virtual double choose(const SequenceContext&, double base) { return base; }

  const PolicyModel& model_;
  std::string name_;
  SequenceTracker tracker_;
};

}  // namespace gas
