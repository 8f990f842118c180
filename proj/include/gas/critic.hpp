#pragma once

// History-conditioned Q critics ("QT") trained with implicit Q-learning:
// an expectile value net regressed on a target Q, and Q regressed on one-step
// Bellman targets through that value net.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "gas/context.hpp"
#include "gas/data.hpp"
#include "gas/nn.hpp"
#include "gas/reward.hpp"

namespace gas {

struct IqlConfig {
  double gamma = 0.99;
  double tau_soft = 0.01;
  double expectile = 0.7;
  double lr = 1e-4;
  double weight_decay = 1e-2;
  int batch = 32;
  int steps = 3000;
  int seq_len = 10;
  double reward_scale = 2000.0;
  // Plain-state value net instead of the history-conditioned one.
  bool plain_state_v = false;
  nn::NetworkSpec net = default_net();

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static IqlConfig from_json(const nlohmann::json& j);
  static nn::NetworkSpec default_net();
};

/// Network layout of a Q or V net: (state, action) tokens, scalar head.
nn::NetworkSpec critic_spec(const IqlConfig& cfg, bool history_free);

/// |tau - 1(u < 0)| * u^2.
double expectile_loss(double u, double tau);
/// d expectile_loss / du.
double expectile_grad(double u, double tau);

struct CriticMember {
  std::uint64_t seed = 0;
  nn::SequenceModel<double> q, q_target, v;
  nn::OptimizerState<double> q_opt, v_opt;

  CriticMember() = default;
  CriticMember(const IqlConfig& cfg, std::uint64_t seed);
};

/// Q of `candidate` at the last timestep of `ctx`, in reward units.
double qt_forward(const CriticMember& member, const data::FeatureScaling& scaling, const SequenceContext& ctx,
                  double candidate, double reward_scale);

struct BellmanTargets {
  Eigen::VectorXd target;  // scaled reward + gamma * V(s') (0 at terminal steps)
  Eigen::VectorXd weight;  // 1 where the target is defined
};

/// Targets for every window position whose next state is inside the window or
/// whose transition is terminal. `v_out` is the value head per position.
BellmanTargets bellman_targets(const nn::Matrix<double>& v_out, const data::Window& w, const IqlConfig& cfg);

struct IqlLosses {
  double loss_v = 0.0;
  double loss_q = 0.0;
};

/// One optimizer step on V and Q, then a soft update of the target Q.
/// Window rewards must be the preference rewards.
IqlLosses iql_update(CriticMember& member, const data::FeatureScaling& scaling, const data::Batch& batch,
                     const IqlConfig& cfg);

struct CriticEnsemble {
  PreferenceSpec preference;
  IqlConfig config;
  data::FeatureScaling scaling;
  std::vector<CriticMember> members;

  int size() const { return static_cast<int>(members.size()); }
};

using LossCallback = std::function<void(int member, int step, const IqlLosses&)>;

/// Trains M members from seeds mix_seed(seed, k) on one shared batch stream.
CriticEnsemble train_critics(const data::Dataset& dataset, const PreferenceSpec& preference, int M,
                             const IqlConfig& cfg, std::uint64_t seed, const LossCallback& on_loss = {});

/// Writes critic_{preference}_{seed}.ckpt per member plus ensemble.json.
void save_ensemble(const CriticEnsemble& ensemble, const std::filesystem::path& dir);
CriticEnsemble load_ensemble(const std::filesystem::path& dir);
std::string critic_filename(const PreferenceSpec& preference, std::uint64_t seed);

nlohmann::ordered_json scaling_to_json(const data::FeatureScaling& s);
data::FeatureScaling scaling_from_json(const nlohmann::json& j);
nlohmann::ordered_json preference_to_json(const PreferenceSpec& p);
PreferenceSpec preference_from_json(const nlohmann::json& j);

}  // namespace gas
