#include "gas/context.hpp"

#include <algorithm>

namespace gas {

void SequenceContext::validate() const {
  const auto n = mask.size();
  require(n >= 1, "SequenceContext: empty context");
  require(states.rows() == n && actions.size() == n && rtg.size() == n && timesteps.size() == n,
          "SequenceContext: misaligned fields");
  require(mask[n - 1] == 1.0, "SequenceContext: no current state");
  require(rtg.allFinite() && states.allFinite(), "SequenceContext: non-finite entries");
}

SequenceContext SequenceContext::from_window(const data::Window& w) {
  return {w.states, w.actions, w.rtg, w.timesteps, w.mask};
}

SequenceContext SequenceContext::tail(int len) const {
  require(len >= 1, "SequenceContext::tail: len must be >= 1");
  const int n = length();
  if (len == n) return *this;
  SequenceContext out;
  out.states = data::StateRows::Zero(len, sim::kStateDim);
  out.actions = Eigen::VectorXd::Zero(len);
  out.rtg = Eigen::VectorXd::Zero(len);
  out.timesteps = Eigen::VectorXi::Zero(len);
  out.mask = Eigen::VectorXd::Zero(len);
  const int take = std::min(n, len);
  out.states.bottomRows(take) = states.bottomRows(take);
  out.actions.tail(take) = actions.tail(take);
  out.rtg.tail(take) = rtg.tail(take);
  out.timesteps.tail(take) = timesteps.tail(take);
  out.mask.tail(take) = mask.tail(take);
  return out;
}

namespace {

nn::Matrix<double> masked(const Eigen::VectorXd& v, const Eigen::VectorXd& mask, double scale) {
  return (v.cwiseProduct(mask) / scale).eval();
}

nn::Matrix<double> scaled_states(const SequenceContext& ctx, const data::FeatureScaling& scaling) {
  nn::Matrix<double> states = nn::Matrix<double>::Zero(ctx.length(), sim::kStateDim);
  for (int k = 0; k < ctx.length(); ++k)
    if (ctx.mask[k] > 0.0) states.row(k) = scaling.apply(ctx.states.row(k).transpose()).transpose();
  return states;
}

}  // namespace

nn::SequenceInput<double> policy_input(const SequenceContext& ctx, const data::FeatureScaling& scaling,
                                       double rtg_scale) {
  ctx.validate();
  const int L = ctx.length();
  nn::SequenceInput<double> in;
  nn::Matrix<double> states = scaled_states(ctx, scaling);
  // The current action is unknown to the policy; causality already hides it.
  Eigen::VectorXd actions = ctx.actions;
  actions[L - 1] = 0.0;
  in.modalities = {masked(ctx.rtg, ctx.mask, rtg_scale), std::move(states),
                   masked(actions, ctx.mask, scaling.action_scale)};
  in.timesteps = ctx.timesteps;
  in.mask = ctx.mask;
  return in;
}

nn::SequenceInput<double> critic_input(const SequenceContext& ctx, const data::FeatureScaling& scaling) {
  ctx.validate();
  nn::SequenceInput<double> in;
  in.modalities = {scaled_states(ctx, scaling), masked(ctx.actions, ctx.mask, scaling.action_scale)};
  in.timesteps = ctx.timesteps;
  in.mask = ctx.mask;
  return in;
}

void EpisodeHistory::clear() {
  states_.clear();
  actions_.clear();
  rtg_.clear();
  timesteps_.clear();
}

void EpisodeHistory::push(const sim::StateVector& state, double rtg, int t) {
  states_.push_back(state);
  actions_.push_back(0.0);
  rtg_.push_back(rtg);
  timesteps_.push_back(t);
}

void EpisodeHistory::set_last_action(double action) {
  require(!actions_.empty(), "EpisodeHistory: no timestep to set");
  actions_.back() = action;
}

SequenceContext EpisodeHistory::context(int seq_len) const {
  require(seq_len >= 1, "EpisodeHistory: seq_len must be >= 1");
  require(!states_.empty(), "EpisodeHistory: empty history");
  const int n = size();
  const int take = std::min(n, seq_len);
  const int pad = seq_len - take;
  SequenceContext ctx;
  ctx.states = data::StateRows::Zero(seq_len, sim::kStateDim);
  ctx.actions = Eigen::VectorXd::Zero(seq_len);
  ctx.rtg = Eigen::VectorXd::Zero(seq_len);
  ctx.timesteps = Eigen::VectorXi::Zero(seq_len);
  ctx.mask = Eigen::VectorXd::Zero(seq_len);
  for (int k = 0; k < take; ++k) {
    const auto i = static_cast<std::size_t>(n - take + k);
    ctx.states.row(pad + k) = states_[i].transpose();
    ctx.actions[pad + k] = actions_[i];
    ctx.rtg[pad + k] = rtg_[i];
    ctx.timesteps[pad + k] = timesteps_[i];
    ctx.mask[pad + k] = 1.0;
  }
  return ctx;
}

}  // namespace gas
