// Command-line entry point: data generation, training, search inference,
// fine-tuning, evaluation, ablations and the verification suite.
//
// Config precedence (later wins): built-in defaults, --config file, --set
// key=value, dedicated flags (--seed, --n-proposals, --range, --m-critics,
// --tie-break). The resolved config is written to <run-dir>/config.snapshot.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gas/config.hpp"
#include "gas/critic.hpp"
#include "gas/data.hpp"
#include "gas/eval.hpp"
#include "gas/policy.hpp"
#include "gas/search.hpp"
#include "gas/verify.hpp"

namespace fs = std::filesystem;
using namespace gas;

namespace {

KeyValues default_config() {
  KeyValues kv;
  kv.set("seed", "0");
  const auto env = sim::EnvConfig{}.to_key_values();
  for (const auto& [k, v] : env.entries())
    if (k != "seed") kv.set("env." + k, v);
  kv.set("preference.kind", "score_product");
  kv.set("preference.beta", "2");
  kv.set("preference.w", "auto");
  kv.set("data.policies", "constant,noisy_pacing,oracle_pacing");
  kv.set("data.n_periods", "100");
  kv.set("data.budget_fracs", "1");

  const PolicyTrainConfig pol;
  kv.set("policy.steps", std::to_string(pol.steps));
  kv.set("policy.batch", std::to_string(pol.batch));
  kv.set("policy.seq_len", std::to_string(pol.seq_len));
  kv.set("policy.lr", format_double(pol.lr));
  kv.set("policy.weight_decay", format_double(pol.weight_decay));
  kv.set("policy.gamma", format_double(pol.gamma));
  kv.set("policy.rtg_scale", format_double(pol.rtg_scale));
  kv.set("policy.target_percentile", format_double(pol.target_percentile));
  kv.set("policy.hidden", std::to_string(pol.net.hidden));
  kv.set("policy.layers", std::to_string(pol.net.n_layers));
  kv.set("policy.heads", std::to_string(pol.net.n_heads));

  const IqlConfig iql;
  kv.set("critic.m", "3");
  kv.set("critic.steps", std::to_string(iql.steps));
  kv.set("critic.batch", std::to_string(iql.batch));
  kv.set("critic.seq_len", std::to_string(iql.seq_len));
  kv.set("critic.lr", format_double(iql.lr));
  kv.set("critic.weight_decay", format_double(iql.weight_decay));
  kv.set("critic.gamma", format_double(iql.gamma));
  kv.set("critic.expectile", format_double(iql.expectile));
  kv.set("critic.tau_soft", format_double(iql.tau_soft));
  kv.set("critic.reward_scale", format_double(iql.reward_scale));
  kv.set("critic.hidden", std::to_string(iql.net.hidden));
  kv.set("critic.layers", std::to_string(iql.net.n_layers));
  kv.set("critic.heads", std::to_string(iql.net.n_heads));

  const SearchConfig search;
  kv.set("search.n_proposals", std::to_string(search.n_proposals));
  kv.set("search.range", "0.1");
  kv.set("search.m_critics", std::to_string(search.m_critics));
  kv.set("search.tie_break", std::string(to_string(search.tie_break)));
  kv.set("search.stochastic", "false");
  kv.set("search.temperature", format_double(search.temperature));

  const SftConfig sft;
  kv.set("sft.lr", format_double(sft.lr));
  kv.set("sft.steps", std::to_string(sft.steps));
  kv.set("sft.batch", std::to_string(sft.batch));
  kv.set("sft.weight_decay", format_double(sft.weight_decay));
  kv.set("sft.max_transitions", "0");
  kv.set("sft.strict_improvement", "true");

  kv.set("eval.agents", "dt,gas_infer");
  kv.set("eval.budgets", "1");
  kv.set("eval.n_periods", "50");
  kv.set("eval.beta", "2");
  kv.set("ablate.kind", "search_budget");
  kv.set("ablate.grid", "1,3,5,7");
  return kv;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    const auto b = item.find_first_not_of(" \t"), e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

std::vector<double> split_doubles(const std::string& text) {
  std::vector<double> out;
  for (const auto& s : split_list(text)) out.push_back(parse_double(s));
  return out;
}

bool parse_bool(const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("expected true or false, got '" + text + "'");
}

int get_int(const KeyValues& kv, const std::string& key) { return static_cast<int>(kv.get_int(key)); }

/// Resolved run: paths plus the merged config.
struct Run {
  fs::path dir;
  KeyValues kv;

  std::uint64_t seed() const { return static_cast<std::uint64_t>(kv.get_int("seed")); }
  fs::path dataset_dir() const { return dir / "datasets" / "train"; }
  fs::path policy_path() const { return dir / "checkpoints" / "policy.ckpt"; }
  fs::path sft_path() const { return dir / "checkpoints" / "policy_sft.ckpt"; }
  fs::path critics_dir(const PreferenceSpec& p) const { return dir / "checkpoints" / "critics" / p.name(); }
  fs::path reports(const std::string& name) const { return dir / "reports" / name; }

  sim::EnvConfig env() const {
    KeyValues e;
    for (const auto& [k, v] : kv.entries())
      if (k.rfind("env.", 0) == 0) e.set(k.substr(4), v);
    e.set("seed", kv.get("seed"));
    return sim::EnvConfig::from_key_values(e);
  }

  PreferenceSpec preference(const data::Dataset* ds) const {
    PreferenceSpec p;
    p.kind = PreferenceSpec::parse_kind(kv.get("preference.kind"));
    p.beta = kv.get_double("preference.beta");
    const auto& w = kv.get("preference.w");
    if (p.kind == PreferenceKind::weighted_sum) {
      if (w == "auto") {
        if (!ds) throw ConfigError("preference.w = auto needs the training dataset");
        p.w = mean_step_value(*ds);
      } else {
        p.w = parse_double(w);
      }
    } else if (w != "auto") {
      p.w = parse_double(w);
    }
    p.validate();
    return p;
  }

  PolicyTrainConfig policy() const {
    PolicyTrainConfig c;
    c.steps = get_int(kv, "policy.steps");
    c.batch = get_int(kv, "policy.batch");
    c.seq_len = get_int(kv, "policy.seq_len");
    c.lr = kv.get_double("policy.lr");
    c.weight_decay = kv.get_double("policy.weight_decay");
    c.gamma = kv.get_double("policy.gamma");
    c.rtg_scale = kv.get_double("policy.rtg_scale");
    c.target_percentile = kv.get_double("policy.target_percentile");
    c.net.hidden = get_int(kv, "policy.hidden");
    c.net.n_layers = get_int(kv, "policy.layers");
    c.net.n_heads = get_int(kv, "policy.heads");
    c.net.max_timestep = env().period_length;
    c.validate();
    return c;
  }

  IqlConfig critic() const {
    IqlConfig c;
    c.steps = get_int(kv, "critic.steps");
    c.batch = get_int(kv, "critic.batch");
    c.seq_len = get_int(kv, "critic.seq_len");
    c.lr = kv.get_double("critic.lr");
    c.weight_decay = kv.get_double("critic.weight_decay");
    c.gamma = kv.get_double("critic.gamma");
    c.expectile = kv.get_double("critic.expectile");
    c.tau_soft = kv.get_double("critic.tau_soft");
    c.reward_scale = kv.get_double("critic.reward_scale");
    c.net.hidden = get_int(kv, "critic.hidden");
    c.net.n_layers = get_int(kv, "critic.layers");
    c.net.n_heads = get_int(kv, "critic.heads");
    c.net.max_timestep = env().period_length;
    c.validate();
    return c;
  }

  SearchConfig search() const {
    SearchConfig s;
    s.n_proposals = get_int(kv, "search.n_proposals");
    s.set_range(kv.get_double("search.range"));
    s.m_critics = get_int(kv, "search.m_critics");
    s.tie_break = parse_tie_break(kv.get("search.tie_break"));
    s.stochastic = parse_bool(kv.get("search.stochastic"));
    s.temperature = kv.get_double("search.temperature");
    s.seed = mix_seed(seed(), 3);
    s.action_bound = env().lambda_max;
    s.validate();
    return s;
  }

  SftConfig sft() const {
    SftConfig c;
    c.lr = kv.get_double("sft.lr");
    c.steps = get_int(kv, "sft.steps");
    c.batch = get_int(kv, "sft.batch");
    c.weight_decay = kv.get_double("sft.weight_decay");
    return c;
  }

  ExperimentConfig experiment() const {
    ExperimentConfig e;
    e.env = env();
    e.budgets = split_doubles(kv.get("eval.budgets"));
    e.n_periods = get_int(kv, "eval.n_periods");
    e.beta = kv.get_double("eval.beta");
    e.seed = mix_seed(seed(), 4);
    return e;
  }

  void write_snapshot() const {
    fs::create_directories(dir);
    kv.save(dir / "config.snapshot");
  }
};

data::Dataset load_train(const Run& run) {
  if (!fs::exists(run.dataset_dir() / "manifest.json"))
    throw DatasetError("no dataset at " + run.dataset_dir().string() + "; run gen-data first");
  return data::load_dataset(run.dataset_dir());
}

std::ofstream open_report(const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DatasetError("cannot write " + path.string());
  return out;
}

int cmd_gen_data(const Run& run) {
  const auto env = run.env();
  std::vector<std::unique_ptr<BiddingAgent>> policies;
  for (const auto& name : split_list(run.kv.get("data.policies"))) policies.push_back(make_scripted_agent(name));
  if (policies.empty()) throw ConfigError("data.policies is empty");
  const auto fracs = split_doubles(run.kv.get("data.budget_fracs"));
  const auto ds = data::collect_dataset(policies, env, get_int(run.kv, "data.n_periods"), run.seed(), fracs);
  data::save_dataset(ds, run.dataset_dir());
  std::cout << "dataset=" << run.dataset_dir().string() << " trajectories=" << ds.manifest.n_trajectories
            << " transitions=" << ds.manifest.n_transitions << '\n';
  return 0;
}

int cmd_train_policy(const Run& run) {
  const auto ds = load_train(run);
  TrainLog log;
  const auto model = train_policy_bc(ds, run.preference(&ds), run.policy(), mix_seed(run.seed(), 1), &log);
  fs::create_directories(run.policy_path().parent_path());
  save_policy(model, run.policy_path());
  auto out = open_report(run.reports("train_policy") / "loss.csv");
  out << "step,loss\n";
  for (std::size_t i = 0; i < log.loss.size(); ++i) out << i << ',' << format_double(log.loss[i]) << '\n';
  std::cout << "policy=" << run.policy_path().string() << " holdout_mse_initial=" << log.initial_holdout_mse
            << " holdout_mse_final=" << log.final_holdout_mse << " target_return=" << model.target_return << '\n';
  return 0;
}

int cmd_train_critics(const Run& run) {
  const auto ds = load_train(run);
  const auto pref = run.preference(&ds);
  const int M = get_int(run.kv, "critic.m");
  std::vector<std::string> rows;
  const auto ens = train_critics(ds, pref, M, run.critic(), mix_seed(run.seed(), 2),
                                 [&](int member, int step, const IqlLosses& l) {
                                   rows.push_back(std::to_string(member) + ',' + std::to_string(step) + ',' +
                                                  format_double(l.loss_v) + ',' + format_double(l.loss_q));
                                 });
  save_ensemble(ens, run.critics_dir(pref));
  auto out = open_report(run.reports("train_critics") / ("loss_" + pref.name() + ".csv"));
  out << "member,step,loss_v,loss_q\n";
  for (const auto& r : rows) out << r << '\n';
  std::cout << "critics=" << run.critics_dir(pref).string() << " members=" << M << '\n';
  return 0;
}

struct Models {
  data::Dataset dataset;
  PreferenceSpec preference;
  PolicyModel policy;
  CriticEnsemble critics;
};

Models load_models(const Run& run, bool need_critics) {
  Models m;
  m.dataset = load_train(run);
  m.preference = run.preference(&m.dataset);
  m.policy = load_policy(run.policy_path());
  if (need_critics) {
    m.critics = load_ensemble(run.critics_dir(m.preference));
    const auto search = run.search();
    if (search.m_critics > m.critics.size())
      throw ConfigError("search.m_critics=" + std::to_string(search.m_critics) + " but the ensemble has " +
                        std::to_string(m.critics.size()) + " members");
  }
  return m;
}

void print_aggregates(const ExperimentReport& report) {
  for (const auto& a : report.aggregates)
    std::cout << "agent=" << a.agent << " budget=" << a.budget_frac << " n=" << a.n << " failed=" << a.failed
              << " value=" << a.mean_value << " score=" << a.mean_score << " er=" << a.er << '\n';
}

int cmd_infer(const Run& run) {
  const auto m = load_models(run, true);
  const auto search = run.search();
  const EnsembleEvaluator evaluator(m.critics, search.m_critics);
  DtAgent dt(m.policy, "dt");
  GasInferAgent gas(m.policy, evaluator, search, "gas_infer");
  BiddingAgent* agents[] = {&dt, &gas};
  const auto report = run_experiment(agents, run.experiment());
  write_report(report, run.reports("infer"));
  print_aggregates(report);
  return 0;
}

int cmd_sft(const Run& run) {
  auto m = load_models(run, true);
  const auto search = run.search();
  const EnsembleEvaluator evaluator(m.critics, search.m_critics);
  data::Dataset ds = m.dataset;
  data::apply_rewards(ds, preference_rewards(ds, m.preference), m.policy.gamma);
  RefineConfig rc;
  rc.search = search;
  rc.strict_improvement = parse_bool(run.kv.get("sft.strict_improvement"));
  rc.max_transitions = get_int(run.kv, "sft.max_transitions");
  rc.seq_len = m.policy.seq_len;
  const auto pairs = gas_sft_refine(ds, evaluator, rc);
  if (pairs.empty()) throw TrainingError("search produced no refined pairs");
  TrainLog log;
  finetune_sft(m.policy, pairs, run.sft(), mix_seed(run.seed(), 5), &log);
  save_policy(m.policy, run.sft_path());
  auto out = open_report(run.reports("sft") / "loss.csv");
  out << "step,loss\n";
  for (std::size_t i = 0; i < log.loss.size(); ++i) out << i << ',' << format_double(log.loss[i]) << '\n';
  std::cout << "policy_sft=" << run.sft_path().string() << " refined_pairs=" << pairs.size()
            << " transitions=" << ds.n_transitions() << '\n';
  return 0;
}

int cmd_eval(const Run& run) {
  const auto names = split_list(run.kv.get("eval.agents"));
  if (names.empty()) throw ConfigError("eval.agents is empty");
  const bool learned = std::any_of(names.begin(), names.end(),
                                   [](const std::string& n) { return n == "dt" || n.rfind("gas", 0) == 0; });
  const bool need_critics =
      std::find(names.begin(), names.end(), "gas_infer") != names.end();
  Models m;
  if (learned) m = load_models(run, need_critics);
  std::unique_ptr<EnsembleEvaluator> evaluator;
  if (need_critics) evaluator = std::make_unique<EnsembleEvaluator>(m.critics, run.search().m_critics);
  PolicyModel sft;
  std::vector<std::unique_ptr<BiddingAgent>> owned;
  for (const auto& n : names) {
    if (n == "dt") {
      owned.push_back(std::make_unique<DtAgent>(m.policy, "dt"));
    } else if (n == "gas_infer") {
      owned.push_back(std::make_unique<GasInferAgent>(m.policy, *evaluator, run.search(), "gas_infer"));
    } else if (n == "gas_sft") {
      sft = load_policy(run.sft_path());
      owned.push_back(std::make_unique<DtAgent>(sft, "gas_sft"));
    } else {
      owned.push_back(make_scripted_agent(n));
    }
  }
  std::vector<BiddingAgent*> agents;
  for (auto& a : owned) agents.push_back(a.get());
  const auto report = run_experiment(agents, run.experiment());
  write_report(report, run.reports("eval"));
  print_aggregates(report);
  return 0;
}

int cmd_ablate(const Run& run) {
  const auto m = load_models(run, true);
  const auto kind = parse_ablation_kind(run.kv.get("ablate.kind"));
  const auto grid = split_doubles(run.kv.get("ablate.grid"));
  AblationSetup setup;
  setup.policy = &m.policy;
  setup.evaluator = [&](int k) { return std::make_unique<EnsembleEvaluator>(m.critics, k); };
  setup.search = run.search();
  setup.experiment = run.experiment();
  const auto rows = ablation_suite(kind, grid, setup);
  const auto path = run.reports("ablate") / (std::string(to_string(kind)) + ".csv");
  fs::create_directories(path.parent_path());
  write_ablation_csv(rows, path);
  for (const auto& r : rows)
    std::cout << "kind=" << r.kind << " param=" << r.param << " n=" << r.n << " score=" << r.mean_score
              << " value=" << r.mean_value << " er=" << r.er << '\n';
  return 0;
}

int cmd_verify(const Run& run) {
  const auto results = run_verify_suite(run.seed());
  bool ok = true;
  auto out = open_report(run.reports("verify") / "checks.csv");
  out << "check,pass,detail\n";
  for (const auto& r : results) {
    std::cout << (r.pass ? "PASS " : "FAIL ") << r.name << ' ' << r.detail << '\n';
    out << r.name << ',' << (r.pass ? "true" : "false") << ",\"" << r.detail << "\"\n";
    ok = ok && r.pass;
  }
  return ok ? 0 : 1;
}

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c == '\n' ? ' ' : c;
  }
  return out + '"';
}

int fail(const std::string& kind, const std::string& message, int code) {
  std::cerr << "error: kind=" << kind << " message=" << quote(message) << '\n';
  return code;
}

struct Options {
  std::string run_dir = "run";
  std::string config;
  std::vector<std::string> sets;
  long long seed = 0;
  int n_proposals = 0;
  double range = 0.0;
  int m_critics = 0;
  std::string tie_break;
};

void add_common(CLI::App* sub, Options& o) {
  sub->add_option("--run-dir", o.run_dir, "Run directory")->capture_default_str();
  sub->add_option("--config", o.config, "Key-value config file");
  sub->add_option("--set", o.sets, "Override one key: key=value (repeatable)");
  sub->add_option("--seed", o.seed, "Global seed");
  sub->add_option("--n-proposals", o.n_proposals, "Search proposals N")->check(CLI::PositiveNumber);
  sub->add_option("--range", o.range, "Search range as a fraction")->check(CLI::Range(0.0, 0.999));
  sub->add_option("--m-critics", o.m_critics, "Critics voting M")->check(CLI::PositiveNumber);
  sub->add_option("--tie-break", o.tie_break, "prefer_base or lowest_index")
      ->check(CLI::IsMember({"prefer_base", "lowest_index"}));
}

Run resolve(const CLI::App* sub, const Options& o) {
  Run run;
  run.dir = o.run_dir;
  run.kv = default_config();
  std::set<std::string> known;
  for (const auto& [k, v] : run.kv.entries()) known.insert(k);
  if (!o.config.empty()) {
    const auto file = KeyValues::load(o.config);
    file.reject_unknown_keys(known);
    run.kv.merge(file);
  }
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    KeyValues one;
    one.set(s.substr(0, eq), s.substr(eq + 1));
    one.reject_unknown_keys(known);
    run.kv.merge(one);
  }
  if (sub->count("--seed")) run.kv.set("seed", std::to_string(o.seed));
  if (sub->count("--n-proposals")) run.kv.set("search.n_proposals", std::to_string(o.n_proposals));
  if (sub->count("--range")) run.kv.set("search.range", format_double(o.range));
  if (sub->count("--m-critics")) run.kv.set("search.m_critics", std::to_string(o.m_critics));
  if (sub->count("--tie-break")) run.kv.set("search.tie_break", o.tie_break);
  // Fail early on malformed values.
  run.env().validate();
  run.search();
  return run;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generative auto-bidding with post-training search"};
  app.require_subcommand(1);
  Options opts;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"gen-data", "Collect a trajectory dataset with scripted behavior policies"},
      {"train-policy", "Behavior-clone the return-conditioned policy"},
      {"train-critics", "Train the preference-specific Q ensemble"},
      {"infer", "Evaluate the policy with and without test-time search"},
      {"sft", "Fine-tune the policy on search-refined actions"},
      {"eval", "Paired evaluation of the configured agents"},
      {"ablate", "Sweep one search parameter"},
      {"verify", "Run the analytic and oracle checks"}};
  std::vector<CLI::App*> subs;
  for (const auto& [name, desc] : commands) {
    subs.push_back(app.add_subcommand(name, desc));
    add_common(subs.back(), opts);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    for (const auto* sub : subs) {
      if (!sub->parsed()) continue;
      const Run run = resolve(sub, opts);
      run.write_snapshot();
      const auto& name = sub->get_name();
      if (name == "gen-data") return cmd_gen_data(run);
      if (name == "train-policy") return cmd_train_policy(run);
      if (name == "train-critics") return cmd_train_critics(run);
      if (name == "infer") return cmd_infer(run);
      if (name == "sft") return cmd_sft(run);
      if (name == "eval") return cmd_eval(run);
      if (name == "ablate") return cmd_ablate(run);
      if (name == "verify") return cmd_verify(run);
    }
    return fail("usage", "no subcommand", 2);
  } catch (const ConfigError& e) {
    return fail("config", e.what(), 2);
  } catch (const DatasetError& e) {
    return fail("dataset", e.what(), 3);
  } catch (const ContractViolation& e) {
    return fail("contract", e.what(), 3);
  } catch (const TrainingError& e) {
    return fail("training", e.what(), 3);
  } catch (const OutOfEpisodeError& e) {
    return fail("out_of_episode", e.what(), 3);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 3);
  }
}
