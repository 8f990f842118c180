#pragma once

// Left-padded per-timestep history shared by the policy and the critics, and
// the running episode record agents keep while bidding.

#include <vector>

#include <Eigen/Dense>

#include "gas/data.hpp"
#include "gas/nn.hpp"

namespace gas {

/// Last K timesteps. `actions[K-1]` is the action being decided: the policy
/// never sees it and the critics put the candidate there.
struct SequenceContext {
  data::StateRows states;
  Eigen::VectorXd actions;
  Eigen::VectorXd rtg;  // unscaled
  Eigen::VectorXi timesteps;
  Eigen::VectorXd mask;

  int length() const { return static_cast<int>(mask.size()); }
  /// Throws ContractViolation on misaligned fields or a missing current state.
  void validate() const;
  static SequenceContext from_window(const data::Window& w);
  /// The last `len` positions, left-padded when the context is shorter.
  SequenceContext tail(int len) const;
};

/// Normalized model inputs: rtg / rtg_scale, standardized states and
/// actions / action_scale; padded rows are zero.
nn::SequenceInput<double> policy_input(const SequenceContext& ctx, const data::FeatureScaling& scaling,
                                       double rtg_scale);
nn::SequenceInput<double> critic_input(const SequenceContext& ctx, const data::FeatureScaling& scaling);

class EpisodeHistory {
 public:
  void clear();
  /// Appends timestep t with its state and return-to-go; the action is set later.
  void push(const sim::StateVector& state, double rtg, int t);
  void set_last_action(double action);
  int size() const { return static_cast<int>(states_.size()); }
  SequenceContext context(int seq_len) const;

 private:
  std::vector<sim::StateVector> states_;
  std::vector<double> actions_, rtg_;
  std::vector<int> timesteps_;
};

}  // namespace gas
