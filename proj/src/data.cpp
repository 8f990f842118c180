#include "gas/data.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <boost/random/uniform_int_distribution.hpp>

#include "json.hpp"

namespace gas::data {
namespace {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

constexpr const char* kTransitionsFile = "transitions.jsonl";
constexpr const char* kManifestFile = "manifest.json";
constexpr const char* kEnvFile = "env.cfg";

json transition_record(const Transition& tr) {
  json state = json::array();
  for (int i = 0; i < sim::kStateDim; ++i) state.push_back(tr.state[i]);
  return json::array({tr.period_id, tr.advertiser_id, tr.t, state, tr.action, tr.reward.value_won,
                      tr.reward.constraint_cost, tr.reward.constraint_perf, tr.reward.wins,
                      tr.done ? 1 : 0});
}

Transition parse_record(const json& rec) {
  if (!rec.is_array() || rec.size() != 10) throw DatasetError("malformed transition record");
  Transition tr;
  tr.period_id = rec[0].get<int>();
  tr.advertiser_id = rec[1].get<int>();
  tr.t = rec[2].get<int>();
  const auto& state = rec[3];
  if (!state.is_array() || state.size() != sim::kStateDim)
    throw DatasetError("state must have 16 entries");
  for (int i = 0; i < sim::kStateDim; ++i) tr.state[i] = state[i].get<double>();
  tr.action = rec[4].get<double>();
  tr.reward.value_won = rec[5].get<double>();
  tr.reward.constraint_cost = rec[6].get<std::vector<double>>();
  tr.reward.constraint_perf = rec[7].get<std::vector<double>>();
  tr.reward.wins = rec[8].get<int>();
  tr.done = rec[9].get<int>() != 0;
  return tr;
}

}  // namespace

long long Dataset::n_transitions() const {
  long long n = 0;
  for (const auto& tr : trajectories) n += tr.size();
  return n;
}

std::vector<double> compute_rtg(std::span<const double> rewards, double gamma) {
  require(gamma > 0.0 && gamma <= 1.0, "compute_rtg: gamma must be in (0, 1]");
  std::vector<double> rtg(rewards.size());
  double acc = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    acc = rewards[i] + gamma * acc;
    rtg[i] = acc;
  }
  return rtg;
}

void apply_rewards(Dataset& dataset, const std::vector<std::vector<double>>& rewards, double gamma) {
  require(rewards.size() == dataset.trajectories.size(), "apply_rewards: trajectory count mismatch");
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    auto& traj = dataset.trajectories[i];
    require(static_cast<int>(rewards[i].size()) == traj.size(), "apply_rewards: length mismatch");
    traj.rewards = rewards[i];
    traj.rtg = compute_rtg(rewards[i], gamma);
  }
}

Dataset collect_dataset(std::span<const std::unique_ptr<BiddingAgent>> policies,
                        const sim::EnvConfig& env_config, int n_periods, std::uint64_t seed,
                        std::span<const double> budget_fracs) {
  require(!policies.empty(), "collect_dataset: at least one behavior policy is required");
  require(n_periods >= 1, "collect_dataset: n_periods must be >= 1");
  Dataset ds;
  ds.env_config = env_config;
  for (int p = 0; p < n_periods; ++p) {
    const double frac = budget_fracs.empty() ? 1.0 : budget_fracs[p % budget_fracs.size()];
    const auto profile = env_config.profile(frac);
    const std::uint64_t env_seed = mix_seed(seed, static_cast<std::uint64_t>(p));
    for (std::size_t a = 0; a < policies.size(); ++a) {
      auto& policy = *policies[a];
      auto env = sim::reset(profile, env_config, env_seed);
      policy.begin_episode(env, mix_seed(seed, static_cast<std::uint64_t>(p), a + 1));
      Trajectory traj;
      auto state = sim::build_state_features(env);
      while (!env.finished) {
        Transition tr;
        tr.period_id = p;
        tr.advertiser_id = static_cast<int>(a);
        tr.t = env.step;
        tr.state = state;
        tr.action = policy.act(env);
        auto step = sim::env_step(env, tr.action);
        tr.reward = std::move(step.reward);
        tr.done = step.done;
        state = step.next_state;
        traj.transitions.push_back(std::move(tr));
      }
      ds.trajectories.push_back(std::move(traj));
    }
  }
  ds.manifest.n_trajectories = static_cast<long long>(ds.trajectories.size());
  ds.manifest.n_transitions = ds.n_transitions();
  ds.manifest.seed = seed;
  ds.manifest.env_config_hash = env_config.fingerprint();
  return ds;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DatasetError("cannot create " + dir.string() + ": " + ec.message());

  const auto tpath = dir / kTransitionsFile;
  std::ofstream out(tpath, std::ios::binary);
  if (!out) throw DatasetError("cannot write " + tpath.string());
  ordered_json header;
  header["schema_version"] = kSchemaVersion;
  header["fields"] = {"period_id", "advertiser_id", "t", "state", "action", "value_won",
                      "constraint_cost", "constraint_perf", "wins", "done"};
  out << header.dump() << '\n';
  for (const auto& traj : dataset.trajectories)
    for (const auto& tr : traj.transitions) out << transition_record(tr).dump() << '\n';
  if (!out) throw DatasetError("write failed: " + tpath.string());

  ordered_json manifest;
  manifest["schema_version"] = dataset.manifest.schema_version;
  manifest["n_trajectories"] = dataset.trajectories.size();
  manifest["n_transitions"] = dataset.n_transitions();
  manifest["seed"] = dataset.manifest.seed;
  manifest["env_config_hash"] = dataset.env_config.fingerprint();
  const auto mpath = dir / kManifestFile;
  std::ofstream mout(mpath, std::ios::binary);
  if (!mout) throw DatasetError("cannot write " + mpath.string());
  mout << manifest.dump(2) << '\n';

  const auto epath = dir / kEnvFile;
  std::ofstream eout(epath, std::ios::binary);
  if (!eout) throw DatasetError("cannot write " + epath.string());
  eout << dataset.env_config.serialize();
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  try {
    ds.env_config = sim::EnvConfig::load(dir / kEnvFile);
  } catch (const ConfigError& e) {
    throw DatasetError((dir / kEnvFile).string() + ": " + e.what());
  }
  const auto mpath = dir / kManifestFile;
  std::ifstream min(mpath);
  if (!min) throw DatasetError("cannot open " + mpath.string());
  json manifest;
  try {
    manifest = json::parse(min);
    ds.manifest.schema_version = manifest.at("schema_version").get<std::string>();
    ds.manifest.n_trajectories = manifest.at("n_trajectories").get<long long>();
    ds.manifest.n_transitions = manifest.at("n_transitions").get<long long>();
    ds.manifest.seed = manifest.at("seed").get<std::uint64_t>();
    ds.manifest.env_config_hash = manifest.at("env_config_hash").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw DatasetError(mpath.string() + ": " + e.what());
  }
  if (ds.manifest.schema_version != kSchemaVersion)
    throw DatasetError(mpath.string() + ": unsupported schema " + ds.manifest.schema_version);

  const auto tpath = dir / kTransitionsFile;
  std::ifstream in(tpath);
  if (!in) throw DatasetError("cannot open " + tpath.string());
  std::string line;
  long long lineno = 0;
  try {
    if (!std::getline(in, line)) throw DatasetError(tpath.string() + ": missing header");
    ++lineno;
    if (json::parse(line).at("schema_version").get<std::string>() != kSchemaVersion)
      throw DatasetError(tpath.string() + ": schema mismatch");
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      auto tr = parse_record(json::parse(line));
      if (tr.t == 0 || ds.trajectories.empty()) ds.trajectories.emplace_back();
      auto& traj = ds.trajectories.back();
      if (tr.t != traj.size())
        throw DatasetError("transition out of order at t=" + std::to_string(tr.t));
      traj.transitions.push_back(std::move(tr));
    }
  } catch (const json::exception& e) {
    throw DatasetError(tpath.string() + ":" + std::to_string(lineno) + ": " + e.what());
  } catch (const DatasetError& e) {
    throw DatasetError(tpath.string() + ":" + std::to_string(lineno) + ": " + e.what());
  }
  if (static_cast<long long>(ds.trajectories.size()) != ds.manifest.n_trajectories ||
      ds.n_transitions() != ds.manifest.n_transitions)
    throw DatasetError(dir.string() + ": manifest counts do not match file contents");
  if (ds.env_config.fingerprint() != ds.manifest.env_config_hash)
    throw DatasetError(dir.string() + ": env config hash mismatch");
  return ds;
}

FeatureScaling compute_scaling(const Dataset& dataset) {
  FeatureScaling scaling;
  const double n = static_cast<double>(dataset.n_transitions());
  require(n > 0, "compute_scaling: empty dataset");
  sim::StateVector sum = sim::StateVector::Zero(), sq = sim::StateVector::Zero();
  double action_sq = 0.0;
  for (const auto& traj : dataset.trajectories)
    for (const auto& tr : traj.transitions) {
      sum += tr.state;
      action_sq += tr.action * tr.action;
    }
  scaling.mean = sum / n;
  for (const auto& traj : dataset.trajectories)
    for (const auto& tr : traj.transitions) sq += (tr.state - scaling.mean).cwiseAbs2();
  for (int i = 0; i < sim::kStateDim; ++i) {
    const double sd = std::sqrt(sq[i] / n);
    scaling.inv_std[i] = sd > 1e-9 ? 1.0 / sd : 1.0;
  }
  scaling.action_scale = std::max(std::sqrt(action_sq / n), 1e-6);
  return scaling;
}

int Window::padding() const {
  int p = 0;
  while (p < mask.size() && mask[p] == 0.0) ++p;
  return p;
}

Window make_window(const Dataset& dataset, int trajectory, int end_t, int seq_len) {
  require(seq_len >= 1, "make_window: seq_len must be >= 1");
  const auto& traj = dataset.trajectories.at(static_cast<std::size_t>(trajectory));
  require(end_t >= 0 && end_t < traj.size(), "make_window: end_t out of range");
  Window w;
  w.trajectory = trajectory;
  w.end_t = end_t;
  w.states = StateRows::Zero(seq_len, sim::kStateDim);
  w.actions = Eigen::VectorXd::Zero(seq_len);
  w.rewards = Eigen::VectorXd::Zero(seq_len);
  w.rtg = Eigen::VectorXd::Zero(seq_len);
  w.timesteps = Eigen::VectorXi::Zero(seq_len);
  w.mask = Eigen::VectorXd::Zero(seq_len);
  w.done = Eigen::VectorXi::Zero(seq_len);
  const int real = std::min(seq_len, end_t + 1);
  const int pad = seq_len - real;
  const bool has_rewards = !traj.rewards.empty();
  for (int k = 0; k < real; ++k) {
    const int t = end_t - real + 1 + k;
    const auto& tr = traj.transitions[static_cast<std::size_t>(t)];
    const int row = pad + k;
    w.states.row(row) = tr.state.transpose();
    w.actions[row] = tr.action;
    if (has_rewards) {
      w.rewards[row] = traj.rewards[static_cast<std::size_t>(t)];
      w.rtg[row] = traj.rtg[static_cast<std::size_t>(t)];
    }
    w.timesteps[row] = tr.t;
    w.mask[row] = 1.0;
    w.done[row] = tr.done ? 1 : 0;
  }
  return w;
}

Batch sample_batch(const Dataset& dataset, int batch_size, int seq_len, Rng& rng) {
  require(batch_size > 0, "sample_batch: batch_size must be positive");
  require(seq_len >= 1, "sample_batch: seq_len must be >= 1");
  require(!dataset.trajectories.empty(), "sample_batch: dataset is empty");
  Batch batch;
  batch.windows.reserve(static_cast<std::size_t>(batch_size));
  boost::random::uniform_int_distribution<int> pick_traj(
      0, static_cast<int>(dataset.trajectories.size()) - 1);
  for (int b = 0; b < batch_size; ++b) {
    const int i = pick_traj(rng);
    const int len = dataset.trajectories[static_cast<std::size_t>(i)].size();
    const int end_t = boost::random::uniform_int_distribution<int>(0, len - 1)(rng);
    batch.windows.push_back(make_window(dataset, i, end_t, seq_len));
  }
  return batch;
}

Batch sample_batch(const Dataset& dataset, int batch_size, int seq_len, std::uint64_t seed) {
  Rng rng(seed);
  return sample_batch(dataset, batch_size, seq_len, rng);
}

}  // namespace gas::data
