#pragma once

// Fixtures shared by the unit tests and the acceptance binary.

#include <array>
#include <cmath>
#include <vector>

#include "gas/critic.hpp"
#include "gas/data.hpp"
#include "gas/search.hpp"

namespace gas::testing {

/// Five-state deterministic chain s0 -> s1 -> ... -> s4 (terminal). Actions
/// are 0 or 1 with equal probability and do not affect transitions.
struct ChainMdp {
  static constexpr int kStates = 5;
  static double reward(int s, int a) { return 0.1 * (s + 1) + 0.5 * a - 0.3 * a * (s % 2); }

  /// Dataset with one-hot states in the first five features and rewards
  /// already applied (gamma only affects the stored rtg).
  static data::Dataset dataset(int n_traj, std::uint64_t seed, double gamma) {
    data::Dataset ds;
    ds.env_config.period_length = kStates;
    Rng rng(seed);
    std::vector<std::vector<double>> rewards;
    for (int i = 0; i < n_traj; ++i) {
      data::Trajectory traj;
      std::vector<double> r;
      for (int s = 0; s < kStates; ++s) {
        data::Transition tr;
        tr.period_id = i;
        tr.t = s;
        tr.state[s] = 1.0;
        const int a = uniform01(rng) < 0.5 ? 0 : 1;
        tr.action = a;
        tr.done = s == kStates - 1;
        traj.transitions.push_back(tr);
        r.push_back(reward(s, a));
      }
      ds.trajectories.push_back(traj);
      rewards.push_back(r);
    }
    ds.manifest.n_trajectories = n_traj;
    ds.manifest.n_transitions = static_cast<long long>(n_traj) * kStates;
    data::apply_rewards(ds, rewards, gamma);
    return ds;
  }

  /// Tabular expectile-IQL fixed point under uniform behavior actions.
  static std::array<std::array<double, 2>, kStates> tabular_q(double gamma, double tau) {
    std::array<std::array<double, 2>, kStates> q{};
    double v_next = 0.0;
    for (int s = kStates - 1; s >= 0; --s) {
      for (int a = 0; a < 2; ++a) q[s][a] = reward(s, a) + gamma * v_next;
      // Expectile of two equally likely values, solved by reweighting.
      double v = 0.5 * (q[s][0] + q[s][1]);
      for (int it = 0; it < 200; ++it) {
        double num = 0.0, den = 0.0;
        for (int a = 0; a < 2; ++a) {
          const double w = q[s][a] < v ? 1.0 - tau : tau;
          num += w * q[s][a];
          den += w;
        }
        v = num / den;
      }
      v_next = v;
    }
    return q;
  }

  /// Logged-history context ending at state s with candidate action `a`.
  static SequenceContext context(const data::Dataset& ds, int traj, int s, int seq_len) {
    return SequenceContext::from_window(data::make_window(ds, traj, s, seq_len));
  }
};

/// Q(a) = -(a - a_star)^2 for every member.
class PeakOracle : public QEvaluator {
 public:
  explicit PeakOracle(int m = 3) : m_(m) {}
  double a_star = 0.0;
  int members() const override { return m_; }
  Eigen::MatrixXd q_values(const SequenceContext&, std::span<const double> candidates) const override {
    Eigen::MatrixXd q(m_, static_cast<Eigen::Index>(candidates.size()));
    for (int k = 0; k < m_; ++k)
      for (std::size_t i = 0; i < candidates.size(); ++i)
        q(k, static_cast<Eigen::Index>(i)) = value(candidates[i]);
    return q;
  }
  double value(double a) const { return -(a - a_star) * (a - a_star); }

 private:
  int m_;
};

/// Peak at a fixed multiple of the logged action of the context's last step.
class RelativePeakOracle : public QEvaluator {
 public:
  RelativePeakOracle(double factor, int m = 3) : factor_(factor), m_(m) {}
  int members() const override { return m_; }
  Eigen::MatrixXd q_values(const SequenceContext& ctx, std::span<const double> candidates) const override {
    const double peak = factor_ * ctx.actions[ctx.length() - 1];
    Eigen::MatrixXd q(m_, static_cast<Eigen::Index>(candidates.size()));
    for (int k = 0; k < m_; ++k)
      for (std::size_t i = 0; i < candidates.size(); ++i)
        q(k, static_cast<Eigen::Index>(i)) = -(candidates[i] - peak) * (candidates[i] - peak);
    return q;
  }

 private:
  double factor_;
  int m_;
};

}  // namespace gas::testing
