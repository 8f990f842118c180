#pragma once

// Offline trajectory storage: logged transitions, return-to-go, the on-disk
// line-record format and window sampling for sequence models.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "gas/agents.hpp"
#include "gas/sim.hpp"

namespace gas::data {

inline constexpr std::string_view kSchemaVersion = "gas-v1";

struct Transition {
  int period_id = 0;
  int advertiser_id = 0;
  int t = 0;
  sim::StateVector state = sim::StateVector::Zero();
  double action = 0.0;
  sim::RewardComponents reward;
  bool done = false;
};

struct Trajectory {
  std::vector<Transition> transitions;
  // Filled by `apply_rewards`; never stored on disk.
  std::vector<double> rewards;
  std::vector<double> rtg;

  int size() const { return static_cast<int>(transitions.size()); }
};

struct DatasetManifest {
  long long n_trajectories = 0;
  long long n_transitions = 0;
  std::uint64_t seed = 0;
  std::uint64_t env_config_hash = 0;
  std::string schema_version{kSchemaVersion};
};

struct Dataset {
  DatasetManifest manifest;
  sim::EnvConfig env_config;
  std::vector<Trajectory> trajectories;

  long long n_transitions() const;
  std::vector<sim::Constraint> constraints() const { return env_config.profile().constraints; }
};

/// rtg[t] = sum_{i>=t} gamma^{i-t} r_i.
std::vector<double> compute_rtg(std::span<const double> rewards, double gamma);

/// Stores per-step rewards (one vector per trajectory) and their rtg.
void apply_rewards(Dataset& dataset, const std::vector<std::vector<double>>& rewards, double gamma);

/// Runs every policy for every period. Period p uses the same impression
/// stream for all policies; `budget_fracs` cycles over periods.
Dataset collect_dataset(std::span<const std::unique_ptr<BiddingAgent>> policies,
                        const sim::EnvConfig& env_config, int n_periods, std::uint64_t seed,
                        std::span<const double> budget_fracs = {});

/// Writes transitions.jsonl, manifest.json and env.cfg under `dir`.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

/// Per-feature standardization and the action scale shared by every model
/// trained on a dataset.
struct FeatureScaling {
  sim::StateVector mean = sim::StateVector::Zero();
  sim::StateVector inv_std = sim::StateVector::Ones();
  double action_scale = 1.0;

  sim::StateVector apply(const sim::StateVector& s) const {
    return (s - mean).cwiseProduct(inv_std);
  }
};

FeatureScaling compute_scaling(const Dataset& dataset);

using StateRows = Eigen::Matrix<double, Eigen::Dynamic, sim::kStateDim, Eigen::RowMajor>;

/// A left-padded slice of one trajectory ending at `end_t`.
struct Window {
  StateRows states;
  Eigen::VectorXd actions;
  Eigen::VectorXd rewards;
  Eigen::VectorXd rtg;
  Eigen::VectorXi timesteps;
  Eigen::VectorXd mask;  // 1 for real positions
  Eigen::VectorXi done;
  int trajectory = 0;
  int end_t = 0;

  int length() const { return static_cast<int>(mask.size()); }
  int padding() const;
};

struct Batch {
  std::vector<Window> windows;
};

Window make_window(const Dataset& dataset, int trajectory, int end_t, int seq_len);

/// Uniform trajectory, then uniform end step within it. Rewards/rtg are
/// taken from `apply_rewards` and left zero if it was never called.
Batch sample_batch(const Dataset& dataset, int batch_size, int seq_len, Rng& rng);
Batch sample_batch(const Dataset& dataset, int batch_size, int seq_len, std::uint64_t seed);

}  // namespace gas::data
