#pragma once

// Post-training search: multiplicative action proposals, per-critic min-max
// Q votes summed over an ensemble, and the refinement pass that turns logged
// actions into fine-tuning targets.

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "gas/context.hpp"
#include "gas/critic.hpp"
#include "gas/policy.hpp"

namespace gas {

enum class TieBreak { prefer_base, lowest_index };

TieBreak parse_tie_break(std::string_view text);
std::string_view to_string(TieBreak t);

struct SearchConfig {
  int n_proposals = 5;
  double perturb_low = 0.9;
  double perturb_high = 1.1;
  int m_critics = 3;
  TieBreak tie_break = TieBreak::prefer_base;
  std::uint64_t seed = 0;
  // Sample the winner from softmax(total_votes / temperature) instead of argmax.
  bool stochastic = false;
  double temperature = 1.0;
  double action_bound = 500.0;

  void validate() const;
  /// Symmetric range: perturb_low = 1 - r, perturb_high = 1 + r.
  void set_range(double r);
};

struct ActionProposalSet {
  double base_action = 0.0;
  std::vector<double> proposals;
  int base_index = 0;
};

struct VoteTally {
  Eigen::MatrixXd per_critic_votes;  // M x N
  Eigen::VectorXd total_votes;       // N
  int selected_index = 0;
};

/// N-1 copies base * eps with eps ~ U(low, high), then the base itself at
/// index N-1; all clamped to [-action_bound, action_bound].
ActionProposalSet propose_actions(double base_action, const SearchConfig& cfg, Rng& rng);

/// Min-max normalized Q; all zeros when every Q is equal.
Eigen::VectorXd qvote_single(const Eigen::Ref<const Eigen::VectorXd>& q);

/// Column sums of per-critic votes; argmax with the tie-break rule.
VoteTally qvote_ensemble(const Eigen::Ref<const Eigen::MatrixXd>& per_critic_q, int base_index,
                         TieBreak tie_break = TieBreak::prefer_base);

/// Draws an index from softmax(total_votes / temperature).
int sample_vote(const Eigen::VectorXd& total_votes, double temperature, Rng& rng);

struct MajorityWinrate {
  std::vector<double> majority;  // P(action gets a strict majority of M votes)
  std::vector<double> win_rate;  // majority[j] / sum_{i != j} majority[i]
};

/// Same per-critic vote distribution p for every critic; M odd.
MajorityWinrate majority_winrate(std::span<const double> p, int M);
/// Single-critic win rate p[j] / sum_{i != j} p[i].
std::vector<double> single_winrate(std::span<const double> p);
/// Monte Carlo estimate of `majority` by simulating M independent votes.
std::vector<double> simulate_majority(std::span<const double> p, int M, long long trials, std::uint64_t seed);

/// Source of per-critic Q values for candidate actions at the last step of a
/// context.
class QEvaluator {
 public:
  virtual ~QEvaluator() = default;
  virtual int members() const = 0;
  /// members() x candidates.size()
  virtual Eigen::MatrixXd q_values(const SequenceContext& ctx, std::span<const double> candidates) const = 0;
};

/// The first `m` members of a trained ensemble (all when m <= 0).
class EnsembleEvaluator : public QEvaluator {
 public:
  EnsembleEvaluator(const CriticEnsemble& ensemble, int m = 0);
  int members() const override { return m_; }
  Eigen::MatrixXd q_values(const SequenceContext& ctx, std::span<const double> candidates) const override;

 private:
  const CriticEnsemble& ensemble_;
  int m_;
};

struct SearchResult {
  double action = 0.0;
  ActionProposalSet proposals;
  VoteTally tally;
};

/// Votes over proposals around `base` and returns the winner.
SearchResult search_action(double base, const QEvaluator& evaluator, const SequenceContext& ctx,
                           const SearchConfig& cfg, Rng& rng);

/// policy_act, then search_action.
SearchResult gas_infer_step(const PolicyModel& policy, const QEvaluator& evaluator, const SequenceContext& ctx,
                            const SearchConfig& cfg, Rng& rng);

struct RefineConfig {
  SearchConfig search;
  bool strict_improvement = true;
  int max_transitions = 0;  // 0 = all, otherwise a seeded uniform subset
  int seq_len = 10;
};

/// Perturbs each logged action with the logged history as context and keeps
/// the vote winner. Dataset rewards and rtg must already be applied.
std::vector<RefinedPair> gas_sft_refine(const data::Dataset& dataset, const QEvaluator& evaluator,
                                        const RefineConfig& cfg);

/// The executed action is the search winner around the policy's proposal.
class GasInferAgent : public DtAgent {
 public:
  GasInferAgent(const PolicyModel& model, const QEvaluator& evaluator, SearchConfig cfg,
                std::string name = "gas_infer");
  void begin_episode(const sim::EnvState& env, std::uint64_t seed) override;

 protected:
  double choose(const SequenceContext& ctx, double base) override;

 private:
  const QEvaluator& evaluator_;
  SearchConfig cfg_;
  Rng rng_;
};

}  // namespace gas
