#include "gas/policy.hpp"

#include <algorithm>
#include <cmath>

#include <boost/random/uniform_int_distribution.hpp>

#include "gas/critic.hpp"

namespace gas {

using nlohmann::ordered_json;

nn::NetworkSpec PolicyTrainConfig::default_net() {
  nn::NetworkSpec s;
  s.n_layers = 2;
  s.n_heads = 2;
  s.hidden = 32;
  s.ffn_mult = 4;
  s.max_timestep = 48;
  return s;
}

void PolicyTrainConfig::validate() const {
  require(steps >= 0 && batch >= 1 && seq_len >= 1, "PolicyTrainConfig: steps, batch and seq_len must be positive");
  require(lr > 0.0 && rtg_scale > 0.0, "PolicyTrainConfig: lr and rtg_scale must be positive");
  require(gamma > 0.0 && gamma <= 1.0, "PolicyTrainConfig: gamma must be in (0, 1]");
  require(target_percentile >= 0.0 && target_percentile <= 1.0, "PolicyTrainConfig: percentile must be in [0, 1]");
  require(holdout_frac >= 0.0 && holdout_frac < 1.0, "PolicyTrainConfig: holdout_frac must be in [0, 1)");
}

ordered_json PolicyTrainConfig::to_json() const {
  ordered_json j;
  j["steps"] = steps;
  j["batch"] = batch;
  j["seq_len"] = seq_len;
  j["lr"] = lr;
  j["weight_decay"] = weight_decay;
  j["gamma"] = gamma;
  j["rtg_scale"] = rtg_scale;
  j["target_percentile"] = target_percentile;
  j["holdout_frac"] = holdout_frac;
  j["holdout_windows"] = holdout_windows;
  j["net"] = net.to_json();
  return j;
}

PolicyTrainConfig PolicyTrainConfig::from_json(const nlohmann::json& j) {
  PolicyTrainConfig c;
  c.steps = j.at("steps").get<int>();
  c.batch = j.at("batch").get<int>();
  c.seq_len = j.at("seq_len").get<int>();
  c.lr = j.at("lr").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.gamma = j.at("gamma").get<double>();
  c.rtg_scale = j.at("rtg_scale").get<double>();
  c.target_percentile = j.at("target_percentile").get<double>();
  c.holdout_frac = j.at("holdout_frac").get<double>();
  c.holdout_windows = j.at("holdout_windows").get<int>();
  c.net = nn::NetworkSpec::from_json(j.at("net"), false);
  return c;
}

nn::NetworkSpec policy_spec(const PolicyTrainConfig& cfg, int period_length) {
  nn::NetworkSpec spec = cfg.net;
  spec.inputs = {{"rtg", 1}, {"state", sim::kStateDim}, {"action", 1}};
  spec.context_tokens = cfg.seq_len;
  spec.max_timestep = std::max(spec.max_timestep, period_length);
  spec.output_dim = 1;
  return spec;
}

double policy_act(const PolicyModel& model, const SequenceContext& ctx) {
  const auto out = model.net.forward(policy_input(ctx, model.scaling, model.rtg_scale));
  const double a = out(3 * (ctx.length() - 1) + 1, 0) * model.scaling.action_scale;
  if (!std::isfinite(a)) throw TrainingError("policy produced a non-finite action");
  return std::clamp(a, -model.action_bound, model.action_bound);
}

namespace {

nn::AdamWConfig adamw(double lr, double wd) {
  nn::AdamWConfig a;
  a.lr = lr;
  a.weight_decay = wd;
  return a;
}

data::Dataset subset(const data::Dataset& ds, bool holdout, int stride) {
  data::Dataset out;
  out.manifest = ds.manifest;
  out.env_config = ds.env_config;
  for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
    const bool is_holdout = stride > 0 && static_cast<int>(i % static_cast<std::size_t>(stride)) == stride - 1;
    if (is_holdout == holdout) out.trajectories.push_back(ds.trajectories[i]);
  }
  return out;
}

double percentile(std::vector<double> xs, double q) {
  std::sort(xs.begin(), xs.end());
  const double pos = q * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, xs.size() - 1);
  return xs[lo] + (pos - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

/// Accumulates gradients of the masked action MSE over one window and
/// returns its sum of squared errors.
double bc_window(const PolicyModel& model, const data::Window& w, double norm, nn::ParameterSet<double>& grads) {
  nn::SequenceModel<double>::Cache cache;
  const auto out = model.net.forward(policy_input(SequenceContext::from_window(w), model.scaling, model.rtg_scale),
                                     &cache);
  const int L = w.length();
  nn::Matrix<double> d = nn::Matrix<double>::Zero(3 * L, 1);
  double sse = 0.0;
  for (int k = 0; k < L; ++k) {
    if (w.mask[k] == 0.0) continue;
    const double err = out(3 * k + 1, 0) - w.actions[k] / model.scaling.action_scale;
    sse += err * err;
    d(3 * k + 1, 0) = 2.0 * err / norm;
  }
  model.net.backward(cache, d, grads);
  return sse;
}

}  // namespace

PolicyModel make_policy(const data::Dataset& dataset, const PreferenceSpec& preference,
                        const PolicyTrainConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  preference.validate();
  require(dataset.n_transitions() > 0, "make_policy: empty dataset");
  PolicyModel model;
  model.net = nn::SequenceModel<double>(policy_spec(cfg, dataset.env_config.period_length), seed);
  model.scaling = data::compute_scaling(dataset);
  model.preference = preference;
  model.rtg_scale = cfg.rtg_scale;
  model.gamma = cfg.gamma;
  model.action_bound = dataset.env_config.lambda_max;
  model.seq_len = cfg.seq_len;
  std::vector<double> returns;
  for (const auto& r : preference_rewards(dataset, preference))
    returns.push_back(r.empty() ? 0.0 : data::compute_rtg(r, cfg.gamma).front());
  model.target_return = percentile(returns, cfg.target_percentile);
  return model;
}

double policy_mse(const PolicyModel& model, std::span<const data::Window> windows) {
  double sse = 0.0, n = 0.0;
  for (const auto& w : windows) {
    const auto out =
        model.net.forward(policy_input(SequenceContext::from_window(w), model.scaling, model.rtg_scale));
    for (int k = 0; k < w.length(); ++k) {
      if (w.mask[k] == 0.0) continue;
      const double err = out(3 * k + 1, 0) - w.actions[k] / model.scaling.action_scale;
      sse += err * err;
      n += 1.0;
    }
  }
  return n > 0.0 ? sse / n : 0.0;
}

PolicyModel train_policy_bc(const data::Dataset& dataset, const PreferenceSpec& preference,
                            const PolicyTrainConfig& cfg, std::uint64_t seed, TrainLog* log) {
  PolicyModel model = make_policy(dataset, preference, cfg, mix_seed(seed, 1));
  data::Dataset ds = dataset;
  data::apply_rewards(ds, preference_rewards(ds, preference), cfg.gamma);

  const int stride = cfg.holdout_frac > 0.0 ? static_cast<int>(std::lround(1.0 / cfg.holdout_frac)) : 0;
  data::Dataset train = stride > 0 && ds.trajectories.size() >= static_cast<std::size_t>(stride) ? subset(ds, false, stride) : ds;
  std::vector<data::Window> holdout;
  if (stride > 0 && ds.trajectories.size() >= static_cast<std::size_t>(stride))
    holdout = data::sample_batch(subset(ds, true, stride), cfg.holdout_windows, cfg.seq_len, mix_seed(seed, 2)).windows;
  if (log) {
    log->loss.clear();
    log->initial_holdout_mse = policy_mse(model, holdout);
  }

  auto opt = nn::OptimizerState<double>::for_params(model.net.params(), adamw(cfg.lr, cfg.weight_decay));
  Rng rng(mix_seed(seed, 3));
  for (int step = 0; step < cfg.steps; ++step) {
    const auto batch = data::sample_batch(train, cfg.batch, cfg.seq_len, rng);
    double n = 0.0;
    for (const auto& w : batch.windows) n += w.mask.sum();
    auto grads = model.net.params().zeros_like();
    double sse = 0.0;
    for (const auto& w : batch.windows) sse += bc_window(model, w, n, grads);
    const double loss = sse / n;
    if (!std::isfinite(loss)) throw TrainingError("policy loss is not finite at step " + std::to_string(step));
    nn::optimizer_step(model.net.params(), grads, opt);
    if (log) log->loss.push_back(loss);
  }
  if (log) log->final_holdout_mse = policy_mse(model, holdout);
  return model;
}

void finetune_sft(PolicyModel& model, std::span<const RefinedPair> pairs, const SftConfig& cfg, std::uint64_t seed,
                  TrainLog* log) {
  require(!pairs.empty(), "finetune_sft: no refined pairs");
  require(cfg.lr > 0.0 && cfg.batch >= 1 && cfg.steps >= 0, "finetune_sft: invalid config");
  auto opt = nn::OptimizerState<double>::for_params(model.net.params(), adamw(cfg.lr, cfg.weight_decay));
  Rng rng(mix_seed(seed, 4));
  boost::random::uniform_int_distribution<std::size_t> pick(0, pairs.size() - 1);
  const int batch = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(cfg.batch), pairs.size()));
  if (log) log->loss.clear();
  for (int step = 0; step < cfg.steps; ++step) {
    auto grads = model.net.params().zeros_like();
    double loss = 0.0;
    for (int b = 0; b < batch; ++b) {
      const auto& pair = pairs[pairs.size() == static_cast<std::size_t>(batch) ? static_cast<std::size_t>(b) : pick(rng)];
      nn::SequenceModel<double>::Cache cache;
      const auto out = model.net.forward(policy_input(pair.context, model.scaling, model.rtg_scale), &cache);
      const int last = 3 * (pair.context.length() - 1) + 1;
      const double err = out(last, 0) - pair.refined_action / model.scaling.action_scale;
      loss += err * err / batch;
      nn::Matrix<double> d = nn::Matrix<double>::Zero(out.rows(), 1);
      d(last, 0) = 2.0 * err / batch;
      model.net.backward(cache, d, grads);
    }
    if (!std::isfinite(loss)) throw TrainingError("sft loss is not finite at step " + std::to_string(step));
    nn::optimizer_step(model.net.params(), grads, opt);
    if (log) log->loss.push_back(loss);
  }
}

void save_policy(const PolicyModel& model, const std::filesystem::path& path) {
  nn::Checkpoint ckpt;
  ckpt.header["kind"] = "policy";
  ckpt.header["spec"] = model.net.spec().to_json();
  ckpt.header["scaling"] = scaling_to_json(model.scaling);
  ckpt.header["preference"] = preference_to_json(model.preference);
  ckpt.header["rtg_scale"] = model.rtg_scale;
  ckpt.header["gamma"] = model.gamma;
  ckpt.header["target_return"] = model.target_return;
  ckpt.header["action_bound"] = model.action_bound;
  ckpt.header["seq_len"] = model.seq_len;
  ckpt.groups.emplace_back("policy", model.net.params());
  nn::save_checkpoint(path, ckpt);
}

PolicyModel load_policy(const std::filesystem::path& path) {
  const auto ckpt = nn::load_checkpoint(path);
  const auto& h = ckpt.header;
  if (h.value("kind", "") != "policy") throw DatasetError(path.string() + " is not a policy checkpoint");
  PolicyModel model;
  model.net = nn::SequenceModel<double>(nn::NetworkSpec::from_json(h.at("spec")), ckpt.group("policy"));
  model.scaling = scaling_from_json(h.at("scaling"));
  model.preference = preference_from_json(h.at("preference"));
  model.rtg_scale = h.at("rtg_scale").get<double>();
  model.gamma = h.at("gamma").get<double>();
  model.target_return = h.at("target_return").get<double>();
  model.action_bound = h.at("action_bound").get<double>();
  model.seq_len = h.at("seq_len").get<int>();
  return model;
}

void SequenceTracker::begin(double target_return) {
  history_.clear();
  rtg_ = target_return;
}

void SequenceTracker::observe(const sim::EnvState& env, const PreferenceSpec& preference) {
  if (history_.size() > 0) rtg_ -= preference_reward(preference, env.last_reward, env.profile.constraints);
  history_.push(sim::build_state_features(env), rtg_, env.step);
}

void DtAgent::begin_episode(const sim::EnvState&, std::uint64_t) { tracker_.begin(model_.target_return); }

double DtAgent::act(const sim::EnvState& env) {
  tracker_.observe(env, model_.preference);
  const auto ctx = tracker_.context(model_.seq_len);
  const double action = choose(ctx, policy_act(model_, ctx));
  tracker_.commit(action);
  return action;
}

}  // namespace gas
