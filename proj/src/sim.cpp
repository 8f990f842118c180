#include "gas/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

#include <boost/random/beta_distribution.hpp>
#include <boost/random/normal_distribution.hpp>

namespace gas::sim {

const std::array<std::string_view, kStateDim> kFeatureNames = {
    "time_left",
    "budget_left",
    "historical_bid_mean",
    "last_three_bid_mean",
    "historical_LeastWinningCost_mean",
    "historical_pValues_mean",
    "historical_conversion_mean",
    "historical_xi_mean",
    "last_three_LeastWinningCost_mean",
    "last_three_pValues_mean",
    "last_three_conversion_mean",
    "last_three_xi_mean",
    "current_pValues_mean",
    "current_pv_num",
    "last_three_pv_num_total",
    "historical_pv_num_total",
};

namespace {

// Log-normal spread of an opponent's value estimate around the true value.
constexpr double kOpponentValueSigma = 0.35;
// Amplitude of the pacing opponents' time-of-day spend target.
constexpr double kPacingAmplitude = 0.5;

const std::set<std::string> kEnvKeys = {
    "impressions_per_step", "period_length", "value_dist.beta_a", "value_dist.beta_b",
    "opponent_mix",         "budget",        "cpa_constraint",    "seed",
};

}  // namespace

void AdvertiserProfile::validate() const {
  if (!(budget > 0.0) || !std::isfinite(budget))
    throw ConfigError("budget must be positive, got " + format_double(budget));
  if (period_length < 1) throw ConfigError("period_length must be >= 1");
  for (const auto& c : constraints)
    if (!(c.bound > 0.0)) throw ConfigError("constraint bounds must be positive");
}

OpponentMix OpponentMix::parse(std::string_view text) {
  OpponentMix mix{0, 0};
  std::string s(text);
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ConfigError("opponent_mix entry '" + item + "' lacks ':'");
    std::string name = item.substr(0, colon);
    name.erase(std::remove_if(name.begin(), name.end(), ::isspace), name.end());
    const auto count = parse_int(item.substr(colon + 1));
    if (count < 0) throw ConfigError("opponent_mix counts must be non-negative");
    if (name == "constant")
      mix.constant = static_cast<int>(count);
    else if (name == "pacing")
      mix.pacing = static_cast<int>(count);
    else
      throw ConfigError("unknown opponent kind '" + name + "'");
  }
  return mix;
}

std::string OpponentMix::to_string() const {
  return "constant:" + std::to_string(constant) + ",pacing:" + std::to_string(pacing);
}

EnvConfig EnvConfig::from_key_values(const KeyValues& kv) {
  kv.require_exact_keys(kEnvKeys);
  EnvConfig cfg;
  cfg.impressions_per_step = static_cast<int>(kv.get_int("impressions_per_step"));
  cfg.period_length = static_cast<int>(kv.get_int("period_length"));
  cfg.beta_a = kv.get_double("value_dist.beta_a");
  cfg.beta_b = kv.get_double("value_dist.beta_b");
  cfg.opponent_mix = OpponentMix::parse(kv.get("opponent_mix"));
  cfg.budget = kv.get_double("budget");
  cfg.cpa_constraint = kv.get_double("cpa_constraint");
  cfg.seed = static_cast<std::uint64_t>(kv.get_int("seed"));
  cfg.validate();
  return cfg;
}

EnvConfig EnvConfig::parse(std::string_view text) { return from_key_values(KeyValues::parse(text)); }

EnvConfig EnvConfig::load(const std::filesystem::path& path) {
  return from_key_values(KeyValues::load(path));
}

KeyValues EnvConfig::to_key_values() const {
  KeyValues kv;
  kv.set("impressions_per_step", std::to_string(impressions_per_step));
  kv.set("period_length", std::to_string(period_length));
  kv.set("value_dist.beta_a", format_double(beta_a));
  kv.set("value_dist.beta_b", format_double(beta_b));
  kv.set("opponent_mix", opponent_mix.to_string());
  kv.set("budget", format_double(budget));
  kv.set("cpa_constraint", format_double(cpa_constraint));
  kv.set("seed", std::to_string(static_cast<long long>(seed)));
  return kv;
}

std::string EnvConfig::serialize() const { return to_key_values().serialize(); }

void EnvConfig::validate() const {
  if (impressions_per_step < 1) throw ConfigError("impressions_per_step must be >= 1");
  if (period_length < 1) throw ConfigError("period_length must be >= 1");
  if (!(beta_a > 0.0) || !(beta_b > 0.0)) throw ConfigError("beta parameters must be positive");
  if (opponent_mix.total() < 1) throw ConfigError("at least one opponent is required");
  if (!(budget > 0.0)) throw ConfigError("budget must be positive, got " + format_double(budget));
  if (!(cpa_constraint > 0.0)) throw ConfigError("cpa_constraint must be positive");
  if (!(lambda_max > 0.0)) throw ConfigError("lambda_max must be positive");
}

AdvertiserProfile EnvConfig::profile(double budget_frac) const {
  AdvertiserProfile p;
  p.budget = budget * budget_frac;
  p.constraints = {Constraint{cpa_constraint, IndicatorKind::conversion}};
  p.period_length = period_length;
  return p;
}

std::uint64_t EnvConfig::fingerprint() const {
  const auto text = serialize();
  return fnv1a(text.data(), text.size());
}

double ImpressionOpportunity::highest_competitor() const {
  return *std::max_element(competitor_bids.begin(), competitor_bids.end());
}

std::string EnvState::rng_state() const {
  std::ostringstream os;
  os << rng;
  return os.str();
}

EnvState reset(const AdvertiserProfile& profile, const EnvConfig& config, std::uint64_t seed) {
  config.validate();
  profile.validate();
  EnvState env;
  env.config = config;
  env.profile = profile;
  env.constraint_cost_sums.assign(profile.constraints.size(), 0.0);
  env.constraint_perf_sums.assign(profile.constraints.size(), 0.0);
  env.rng.seed(seed);

  const double cpa = config.cpa_constraint;
  for (int k = 0; k < config.opponent_mix.constant; ++k)
    env.opponents.push_back({Opponent::Kind::constant, cpa * uniform(env.rng, 0.4, 1.0), 0.0, 0.0});
  for (int k = 0; k < config.opponent_mix.pacing; ++k)
    env.opponents.push_back({Opponent::Kind::pacing, cpa * uniform(env.rng, 0.5, 0.9), 0.0,
                             uniform(env.rng, 0.0, 2.0 * std::numbers::pi)});

  env.current = generate_impressions(env);
  return env;
}

std::vector<ImpressionOpportunity> generate_impressions(EnvState& env) {
  if (env.finished || env.step >= env.horizon())
    throw OutOfEpisodeError("generate_impressions: episode finished at step " +
                            std::to_string(env.step));
  const auto& cfg = env.config;
  const std::size_t n_opp = env.opponents.size();
  const std::size_t n_con = env.profile.constraints.size();
  boost::random::beta_distribution<double> value_dist(cfg.beta_a, cfg.beta_b);
  boost::random::normal_distribution<double> noise(0.0, kOpponentValueSigma);
  const double drift = -0.5 * kOpponentValueSigma * kOpponentValueSigma;

  std::vector<ImpressionOpportunity> imps(static_cast<std::size_t>(cfg.impressions_per_step));
  std::vector<double> notional_spend(n_opp, 0.0);
  for (std::size_t i = 0; i < imps.size(); ++i) {
    auto& imp = imps[i];
    imp.index = static_cast<int>(i);
    imp.value = value_dist(env.rng);
    imp.competitor_bids.resize(n_opp);
    for (std::size_t k = 0; k < n_opp; ++k) {
      const double v_k = std::min(1.0, imp.value * std::exp(noise(env.rng) + drift));
      imp.competitor_bids[k] = env.opponents[k].lambda * v_k;
    }
    imp.perf_indicators.resize(n_con);
    for (std::size_t j = 0; j < n_con; ++j)
      imp.perf_indicators[j] =
          env.profile.constraints[j].kind == IndicatorKind::conversion ? imp.value : 1.0;
    imp.conversion_draw = uniform01(env.rng);

    // Opponents' own market, ignoring us: top opponent pays the runner-up.
    std::size_t top = 0;
    double first = -1.0, second = 0.0;
    for (std::size_t k = 0; k < n_opp; ++k) {
      const double b = imp.competitor_bids[k];
      if (b > first) {
        second = std::max(first, 0.0);
        first = b;
        top = k;
      } else if (b > second) {
        second = b;
      }
    }
    notional_spend[top] += second;
  }

  const int horizon = env.horizon();
  for (std::size_t k = 0; k < n_opp; ++k) {
    auto& opp = env.opponents[k];
    if (opp.kind != Opponent::Kind::pacing) continue;
    if (env.step == 0) opp.base_spend = std::max(notional_spend[k], 1e-9);
    const double phase = 2.0 * std::numbers::pi * (env.step + 1) / horizon + opp.phase;
    const double target = opp.base_spend * (1.0 + kPacingAmplitude * std::sin(phase));
    const double ratio = notional_spend[k] > 0.0 ? std::sqrt(target / notional_spend[k]) : 1.2;
    opp.lambda *= std::clamp(ratio, 0.85, 1.2);
  }
  return imps;
}

double compute_bid(std::span<const double> coeffs, const ImpressionOpportunity& imp,
                   std::span<const Constraint> constraints) {
  require(coeffs.size() == constraints.size() + 1,
          "compute_bid: expected " + std::to_string(constraints.size() + 1) + " coefficients, got " +
              std::to_string(coeffs.size()));
  require(imp.perf_indicators.size() == constraints.size(),
          "compute_bid: perf_indicators length mismatch");
  double bid = coeffs[0] * imp.value;
  for (std::size_t j = 0; j < constraints.size(); ++j)
    bid += coeffs[j + 1] * imp.perf_indicators[j] * constraints[j].bound;
  return std::max(bid, 0.0);
}

AuctionOutcome run_auction(double my_bid, const ImpressionOpportunity& imp, double remaining_budget) {
  AuctionOutcome out;
  const double price = imp.highest_competitor();
  if (!(my_bid > price)) return out;
  if (price > remaining_budget) {
    out.unaffordable = true;
    return out;
  }
  out.won = true;
  out.cost = price;
  out.conversion = imp.conversion_draw < imp.value;
  return out;
}

StepResult env_step(EnvState& env, double action) {
  if (env.finished || env.step >= env.horizon())
    throw OutOfEpisodeError("env_step: episode already finished");
  require(std::isfinite(action), "env_step: action must be finite");

  env.lambda = std::clamp(env.lambda + action, 0.0, env.config.lambda_max);
  const auto& constraints = env.profile.constraints;
  const std::size_t n_con = constraints.size();
  std::vector<double> coeffs(n_con + 1, 0.0);
  coeffs[0] = env.lambda;

  RewardComponents reward;
  reward.constraint_cost.assign(n_con, 0.0);
  reward.constraint_perf.assign(n_con, 0.0);
  StepLog log;
  bool exhausted = false;
  double bid_sum = 0.0, lwc_sum = 0.0, pv_sum = 0.0;
  for (const auto& imp : env.current) {
    const double bid = compute_bid(coeffs, imp, constraints);
    const auto outcome = run_auction(bid, imp, env.remaining_budget());
    bid_sum += bid;
    lwc_sum += imp.highest_competitor();
    pv_sum += imp.value;
    exhausted = exhausted || outcome.unaffordable;
    if (!outcome.won) continue;
    env.budget_spent += outcome.cost;
    reward.value_won += imp.value;
    ++reward.wins;
    for (std::size_t j = 0; j < n_con; ++j) {
      const double indicator = constraints[j].kind == IndicatorKind::conversion
                                   ? (outcome.conversion ? 1.0 : 0.0)
                                   : 1.0;
      reward.constraint_cost[j] += outcome.cost;
      reward.constraint_perf[j] += indicator;
    }
    if (outcome.conversion) log.conversions += 1.0;
  }
  const double n = static_cast<double>(env.current.size());
  log.bid_mean = bid_sum / n;
  log.least_winning_cost_mean = lwc_sum / n;
  log.pvalue_mean = pv_sum / n;
  log.win_rate = reward.wins / n;
  log.pv_num = static_cast<int>(env.current.size());
  env.logs.push_back(log);

  env.wins += reward.wins;
  env.value_won += reward.value_won;
  for (std::size_t j = 0; j < n_con; ++j) {
    env.constraint_cost_sums[j] += reward.constraint_cost[j];
    env.constraint_perf_sums[j] += reward.constraint_perf[j];
  }
  env.last_reward = reward;

  ++env.step;
  exhausted = exhausted || env.remaining_budget() <= 0.0;
  StepResult result;
  result.reward = std::move(reward);
  result.done = exhausted || env.step >= env.horizon();
  env.finished = result.done;
  if (result.done)
    env.current.clear();
  else
    env.current = generate_impressions(env);
  result.next_state = build_state_features(env);
  return result;
}

StateVector features_from_logs(std::span<const StepLog> past, double current_pvalue_mean,
                               int current_pv_num, int step, int horizon, double budget,
                               double budget_spent) {
  StateVector s = StateVector::Zero();
  s[0] = static_cast<double>(horizon - step) / horizon;
  s[1] = std::clamp((budget - budget_spent) / budget, 0.0, 1.0);

  const auto mean_of = [](std::span<const StepLog> logs, auto field) {
    if (logs.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& l : logs) sum += field(l);
    return sum / static_cast<double>(logs.size());
  };
  const auto last3 = past.subspan(past.size() > 3 ? past.size() - 3 : 0);
  const auto bid = [](const StepLog& l) { return l.bid_mean; };
  const auto lwc = [](const StepLog& l) { return l.least_winning_cost_mean; };
  const auto pv = [](const StepLog& l) { return l.pvalue_mean; };
  const auto conv = [](const StepLog& l) { return l.conversions; };
  const auto xi = [](const StepLog& l) { return l.win_rate; };

  s[2] = mean_of(past, bid);
  s[3] = mean_of(last3, bid);
  s[4] = mean_of(past, lwc);
  s[5] = mean_of(past, pv);
  s[6] = mean_of(past, conv);
  s[7] = mean_of(past, xi);
  s[8] = mean_of(last3, lwc);
  s[9] = mean_of(last3, pv);
  s[10] = mean_of(last3, conv);
  s[11] = mean_of(last3, xi);
  s[12] = current_pvalue_mean;
  s[13] = current_pv_num;
  double pv3 = 0.0, pv_all = 0.0;
  for (const auto& l : last3) pv3 += l.pv_num;
  for (const auto& l : past) pv_all += l.pv_num;
  s[14] = pv3;
  s[15] = pv_all;
  return s;
}

StateVector build_state_features(const EnvState& env) {
  double pv_mean = 0.0;
  for (const auto& imp : env.current) pv_mean += imp.value;
  if (!env.current.empty()) pv_mean /= static_cast<double>(env.current.size());
  return features_from_logs(env.logs, pv_mean, static_cast<int>(env.current.size()), env.step,
                            env.horizon(), env.profile.budget, env.budget_spent);
}

}  // namespace gas::sim
