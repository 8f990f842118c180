#include "gas/critic.hpp"

#include <fstream>

#include "gas/config.hpp"

namespace gas {

using nlohmann::ordered_json;

nn::NetworkSpec IqlConfig::default_net() {
  nn::NetworkSpec s;
  s.n_layers = 2;
  s.n_heads = 2;
  s.hidden = 32;
  s.ffn_mult = 4;
  s.max_timestep = 48;
  return s;
}

void IqlConfig::validate() const {
  require(gamma > 0.0 && gamma <= 1.0, "IqlConfig: gamma must be in (0, 1]");
  require(expectile > 0.0 && expectile < 1.0, "IqlConfig: expectile must be in (0, 1)");
  require(tau_soft > 0.0 && tau_soft <= 1.0, "IqlConfig: tau_soft must be in (0, 1]");
  require(lr > 0.0 && batch >= 1 && steps >= 0 && seq_len >= 1 && reward_scale > 0.0,
          "IqlConfig: lr, batch, seq_len and reward_scale must be positive");
}

ordered_json IqlConfig::to_json() const {
  ordered_json j;
  j["gamma"] = gamma;
  j["tau_soft"] = tau_soft;
  j["expectile"] = expectile;
  j["lr"] = lr;
  j["weight_decay"] = weight_decay;
  j["batch"] = batch;
  j["steps"] = steps;
  j["seq_len"] = seq_len;
  j["reward_scale"] = reward_scale;
  j["plain_state_v"] = plain_state_v;
  j["net"] = net.to_json();
  return j;
}

IqlConfig IqlConfig::from_json(const nlohmann::json& j) {
  IqlConfig c;
  c.gamma = j.at("gamma").get<double>();
  c.tau_soft = j.at("tau_soft").get<double>();
  c.expectile = j.at("expectile").get<double>();
  c.lr = j.at("lr").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.batch = j.at("batch").get<int>();
  c.steps = j.at("steps").get<int>();
  c.seq_len = j.at("seq_len").get<int>();
  c.reward_scale = j.at("reward_scale").get<double>();
  c.plain_state_v = j.at("plain_state_v").get<bool>();
  c.net = nn::NetworkSpec::from_json(j.at("net"), false);
  return c;
}

double expectile_loss(double u, double tau) {
  const double w = u < 0.0 ? 1.0 - tau : tau;
  return w * u * u;
}

double expectile_grad(double u, double tau) {
  const double w = u < 0.0 ? 1.0 - tau : tau;
  return 2.0 * w * u;
}

nn::NetworkSpec critic_spec(const IqlConfig& cfg, bool history_free) {
  nn::NetworkSpec s = cfg.net;
  s.inputs = {{"state", sim::kStateDim}, {"action", 1}};
  s.context_tokens = cfg.seq_len;
  s.output_dim = 1;
  s.history_free = history_free;
  return s;
}

namespace {

nn::AdamWConfig adamw(const IqlConfig& cfg) {
  nn::AdamWConfig a;
  a.lr = cfg.lr;
  a.weight_decay = cfg.weight_decay;
  return a;
}

}  // namespace

CriticMember::CriticMember(const IqlConfig& cfg, std::uint64_t member_seed)
    : seed(member_seed),
      q(critic_spec(cfg, false), mix_seed(member_seed, 1)),
      q_target(q),
      v(critic_spec(cfg, cfg.plain_state_v), mix_seed(member_seed, 2)),
      q_opt(nn::OptimizerState<double>::for_params(q.params(), adamw(cfg))),
      v_opt(nn::OptimizerState<double>::for_params(v.params(), adamw(cfg))) {}

double qt_forward(const CriticMember& member, const data::FeatureScaling& scaling, const SequenceContext& ctx,
                  double candidate, double reward_scale) {
  require(std::isfinite(candidate), "qt_forward: candidate must be finite");
  SequenceContext c = ctx;
  c.actions[c.length() - 1] = candidate;
  const auto out = member.q.forward(critic_input(c, scaling));
  return out(2 * c.length() - 1, 0) * reward_scale;
}

BellmanTargets bellman_targets(const nn::Matrix<double>& v_out, const data::Window& w, const IqlConfig& cfg) {
  const int L = w.length();
  require(v_out.rows() == 2 * L, "bellman_targets: value output does not match the window");
  BellmanTargets b{Eigen::VectorXd::Zero(L), Eigen::VectorXd::Zero(L)};
  for (int k = 0; k < L; ++k) {
    if (w.mask[k] == 0.0) continue;
    const double r = w.rewards[k] / cfg.reward_scale;
    if (w.done[k]) {
      b.target[k] = r;
    } else if (k + 1 < L) {
      b.target[k] = r + cfg.gamma * v_out(2 * (k + 1), 0);
    } else {
      continue;
    }
    b.weight[k] = 1.0;
  }
  return b;
}

IqlLosses iql_update(CriticMember& member, const data::FeatureScaling& scaling, const data::Batch& batch,
                     const IqlConfig& cfg) {
  using Model = nn::SequenceModel<double>;
  const std::size_t B = batch.windows.size();
  require(B > 0, "iql_update: empty batch");
  std::vector<Model::Cache> q_cache(B), v_cache(B);
  std::vector<nn::Matrix<double>> q_out(B), v_out(B), qt_out(B);
  std::vector<BellmanTargets> targets(B);
  double n_v = 0.0, n_q = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    const auto& w = batch.windows[b];
    const auto in = critic_input(SequenceContext::from_window(w), scaling);
    q_out[b] = member.q.forward(in, &q_cache[b]);
    v_out[b] = member.v.forward(in, &v_cache[b]);
    qt_out[b] = member.q_target.forward(in);
    targets[b] = bellman_targets(v_out[b], w, cfg);
    n_v += w.mask.sum();
    n_q += targets[b].weight.sum();
  }

  IqlLosses losses;
  auto q_grads = member.q.params().zeros_like();
  auto v_grads = member.v.params().zeros_like();
  for (std::size_t b = 0; b < B; ++b) {
    const auto& w = batch.windows[b];
    const int L = w.length();
    nn::Matrix<double> dv = nn::Matrix<double>::Zero(2 * L, 1);
    nn::Matrix<double> dq = nn::Matrix<double>::Zero(2 * L, 1);
    for (int k = 0; k < L; ++k) {
      if (w.mask[k] == 0.0) continue;
      const double u = qt_out[b](2 * k + 1, 0) - v_out[b](2 * k, 0);
      losses.loss_v += expectile_loss(u, cfg.expectile) / n_v;
      dv(2 * k, 0) = -expectile_grad(u, cfg.expectile) / n_v;
      if (targets[b].weight[k] > 0.0 && n_q > 0.0) {
        const double err = q_out[b](2 * k + 1, 0) - targets[b].target[k];
        losses.loss_q += err * err / n_q;
        dq(2 * k + 1, 0) = 2.0 * err / n_q;
      }
    }
    member.v.backward(v_cache[b], dv, v_grads);
    member.q.backward(q_cache[b], dq, q_grads);
  }
  if (!std::isfinite(losses.loss_v) || !std::isfinite(losses.loss_q))
    throw TrainingError("critic loss is not finite at step " + std::to_string(member.q_opt.step));
  nn::optimizer_step(member.v.params(), v_grads, member.v_opt);
  nn::optimizer_step(member.q.params(), q_grads, member.q_opt);
  nn::soft_update(member.q_target.params(), member.q.params(), cfg.tau_soft);
  return losses;
}

CriticEnsemble train_critics(const data::Dataset& dataset, const PreferenceSpec& preference, int M,
                             const IqlConfig& cfg, std::uint64_t seed, const LossCallback& on_loss) {
  require(M >= 1, "train_critics: M must be >= 1");
  cfg.validate();
  preference.validate();
  data::Dataset ds = dataset;
  data::apply_rewards(ds, preference_rewards(ds, preference), cfg.gamma);

  CriticEnsemble ens;
  ens.preference = preference;
  ens.config = cfg;
  ens.scaling = data::compute_scaling(ds);
  for (int k = 0; k < M; ++k) ens.members.emplace_back(cfg, mix_seed(seed, static_cast<std::uint64_t>(k)));

  Rng rng(mix_seed(seed, 0xba7c4ULL));
  for (int step = 0; step < cfg.steps; ++step) {
    const auto batch = data::sample_batch(ds, cfg.batch, cfg.seq_len, rng);
    for (int k = 0; k < M; ++k) {
      const auto losses = iql_update(ens.members[static_cast<std::size_t>(k)], ens.scaling, batch, cfg);
      if (on_loss) on_loss(k, step, losses);
    }
  }
  return ens;
}

ordered_json scaling_to_json(const data::FeatureScaling& s) {
  ordered_json j;
  j["mean"] = std::vector<double>(s.mean.data(), s.mean.data() + sim::kStateDim);
  j["inv_std"] = std::vector<double>(s.inv_std.data(), s.inv_std.data() + sim::kStateDim);
  j["action_scale"] = s.action_scale;
  return j;
}

data::FeatureScaling scaling_from_json(const nlohmann::json& j) {
  data::FeatureScaling s;
  const auto mean = j.at("mean").get<std::vector<double>>();
  const auto inv = j.at("inv_std").get<std::vector<double>>();
  if (mean.size() != sim::kStateDim || inv.size() != sim::kStateDim)
    throw DatasetError("feature scaling must have 16 entries");
  for (int i = 0; i < sim::kStateDim; ++i) {
    s.mean[i] = mean[static_cast<std::size_t>(i)];
    s.inv_std[i] = inv[static_cast<std::size_t>(i)];
  }
  s.action_scale = j.at("action_scale").get<double>();
  return s;
}

ordered_json preference_to_json(const PreferenceSpec& p) {
  ordered_json j;
  j["kind"] = p.name();
  j["beta"] = p.beta;
  j["w"] = p.w;
  return j;
}

PreferenceSpec preference_from_json(const nlohmann::json& j) {
  PreferenceSpec p;
  p.kind = PreferenceSpec::parse_kind(j.at("kind").get<std::string>());
  p.beta = j.at("beta").get<double>();
  p.w = j.at("w").get<double>();
  p.validate();
  return p;
}

std::string critic_filename(const PreferenceSpec& preference, std::uint64_t seed) {
  return "critic_" + preference.name() + "_" + std::to_string(seed) + ".ckpt";
}

void save_ensemble(const CriticEnsemble& ens, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  ordered_json manifest;
  manifest["schema_version"] = "gas-critics-v1";
  manifest["preference"] = preference_to_json(ens.preference);
  manifest["config"] = ens.config.to_json();
  manifest["scaling"] = scaling_to_json(ens.scaling);
  manifest["members"] = ordered_json::array();
  for (const auto& m : ens.members) {
    nn::Checkpoint ckpt;
    ckpt.header["kind"] = "critic";
    ckpt.header["seed"] = m.seed;
    ckpt.header["preference"] = preference_to_json(ens.preference);
    ckpt.header["q_spec"] = m.q.spec().to_json();
    ckpt.header["v_spec"] = m.v.spec().to_json();
    ckpt.header["steps"] = m.q_opt.step;
    ckpt.groups.emplace_back("q", m.q.params());
    ckpt.groups.emplace_back("q_target", m.q_target.params());
    ckpt.groups.emplace_back("v", m.v.params());
    const auto file = critic_filename(ens.preference, m.seed);
    nn::save_checkpoint(dir / file, ckpt);
    ordered_json entry;
    entry["seed"] = m.seed;
    entry["file"] = file;
    entry["q_hash"] = nn::parameter_hash(m.q.params());
    manifest["members"].push_back(entry);
  }
  std::ofstream out(dir / "ensemble.json", std::ios::binary);
  if (!out) throw DatasetError("cannot write " + (dir / "ensemble.json").string());
  out << manifest.dump(2) << '\n';
}

CriticEnsemble load_ensemble(const std::filesystem::path& dir) {
  std::ifstream in(dir / "ensemble.json");
  if (!in) throw DatasetError("missing ensemble manifest in " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError("bad ensemble manifest: " + std::string(e.what()));
  }
  if (manifest.value("schema_version", "") != "gas-critics-v1")
    throw DatasetError("unsupported ensemble schema in " + dir.string());
  CriticEnsemble ens;
  ens.preference = preference_from_json(manifest.at("preference"));
  ens.config = IqlConfig::from_json(manifest.at("config"));
  ens.scaling = scaling_from_json(manifest.at("scaling"));
  for (const auto& entry : manifest.at("members")) {
    const auto ckpt = nn::load_checkpoint(dir / entry.at("file").get<std::string>());
    CriticMember m;
    m.seed = entry.at("seed").get<std::uint64_t>();
    const auto q_spec = nn::NetworkSpec::from_json(ckpt.header.at("q_spec"));
    m.q = nn::SequenceModel<double>(q_spec, ckpt.group("q"));
    m.q_target = nn::SequenceModel<double>(q_spec, ckpt.group("q_target"));
    m.v = nn::SequenceModel<double>(nn::NetworkSpec::from_json(ckpt.header.at("v_spec")), ckpt.group("v"));
    if (nn::parameter_hash(m.q.params()) != entry.at("q_hash").get<std::uint64_t>())
      throw DatasetError("critic checkpoint hash mismatch for " + entry.at("file").get<std::string>());
    ens.members.push_back(std::move(m));
  }
  require(!ens.members.empty(), "load_ensemble: no members");
  return ens;
}

}  // namespace gas
