// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "pnlc/mlp.hpp"
#include "pnlc/trajdata.hpp"

namespace pnlc {

/// Enumerable MDP whose actions are thoughts. transition[s][a][s'] is
/// P(s'|s,a). Terminal states end the episode: nothing is reachable after
/// arriving in one.
struct TabularMDP {
  std::vector<std::string> states;   // canonical renderings
  std::vector<std::string> actions;  // thought renderings
  std::vector<std::vector<std::vector<double>>> transition;
  std::vector<double> initial;
  std::vector<bool> terminal;
  std::size_t horizon = 0;

  std::size_t num_states() const { return states.size(); }
  std::size_t num_actions() const { return actions.size(); }
  /// Rows sum to 1 within 1e-12, renderings are injective, sizes agree.
  void validate() const;
  std::size_t state_index(const std::string& rendering) const;
  std::size_t action_index(const std::string& thought) const;
};

/// probs[s][a] = pi_beta(a|s).
struct BehaviorPolicy {
  std::vector<std::vector<double>> probs;
  void validate(const TabularMDP& mdp) const;
};

/// The e with tau*sum w(x-e)+ = (1-tau)*sum w(e-x)+, by bisection on
/// [min x, max x] to 1e-12. Entries with zero weight are ignored.
double discrete_expectile(std::span<const double> values, std::span<const double> weights,
                          double tau);

/// Q indexed (s, a, g), V indexed (s, g); goals range over all states.
struct ValueTables {
  std::size_t num_states = 0;
  std::size_t num_actions = 0;
  std::vector<double> q;
  std::vector<double> v;
  std::size_t sweeps = 0;

  double Q(std::size_t s, std::size_t a, std::size_t g) const {
    return q[(s * num_actions + a) * num_states + g];
  }
  double V(std::size_t s, std::size_t g) const { return v[s * num_states + g]; }
};

struct DpOptions {
  double tolerance = 1e-10;
  std::size_t max_sweeps = 1000000;
  KernelMode kernels = KernelMode::kSerial;
};

/// Value iteration from zero of
///   Q(s,a,g) = sum_s' P(s'|s,a) [1[s'=g] + gamma (1 - 1[s'=g]) (1 - term(s')) V(s',g)]
///   V(s,g)   = tau-expectile of Q(s,.,g) under pi_beta(.|s)
/// until the sup-norm change falls below tolerance. Goals are solved
/// independently (in parallel for KernelMode::kParallel).
ValueTables dp_fixed_point(const TabularMDP& mdp, const BehaviorPolicy& beta, double tau,
                           double gamma, const DpOptions& options = {});

/// E[gamma^(k-1)] for first arrival at g after taking a in s and then
/// following `policy`; 0 if g is never reached. Absorbing-chain linear solve.
double reach_value(const TabularMDP& mdp, const BehaviorPolicy& policy, std::size_t s,
                   std::size_t a, std::size_t g, double gamma);

/// Tabular fixed point of the training objective over a sample multiset:
/// Q(s,a,g) is the mean of r + gamma (1 - terminal) V(s',g) over the samples
/// keyed (s,a,g), and V(s,g) is the tau-expectile of Q(s,.,g) weighted by the
/// empirical action counts among samples keyed (s,g). Bootstraps into an
/// (s',g) pair with no samples read V = 0 and are counted.
struct EmpiricalTables {
  struct Key {
    std::string state, thought, goal;
    auto operator<=>(const Key&) const = default;
  };
  std::map<Key, double> q;
  std::map<std::pair<std::string, std::string>, double> v;
  std::map<Key, std::size_t> counts;
  std::size_t unseen_bootstraps = 0;
  std::size_t sweeps = 0;
};

EmpiricalTables empirical_fixed_point(const std::vector<TransitionSample>& samples, double tau,
                                      double gamma, const DpOptions& options = {});

/// Empirical MDP and behavior policy estimated from trajectories: states are
/// the distinct summaries, actions the distinct thoughts, P and pi_beta are
/// visit frequencies. States without outgoing data become terminal.
std::pair<TabularMDP, BehaviorPolicy> empirical_model(const std::vector<Trajectory>& trajs);

/// CSV `state,action,goal,q`.
void write_oracle_csv(std::ostream& out, const TabularMDP& mdp, const ValueTables& tables);
void write_oracle_csv(std::ostream& out, const EmpiricalTables& tables);

}  // namespace pnlc
