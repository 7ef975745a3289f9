// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "pnlc/rng.hpp"

namespace pnlc {

class TextProvider;

/// One recorded step of an episode. The final step of a trajectory is the
/// state the episode ended in and may leave thought/env_action empty.
struct Step {
  std::string raw_state;
  std::optional<std::string> summary;
  std::string thought;
  std::string env_action;
  std::string observation;
  double env_reward = 0.0;

  bool operator==(const Step&) const = default;
};

struct Trajectory {
  std::string id;
  std::map<std::string, std::string> task_meta;
  std::vector<Step> steps;
  double final_return = 0.0;

  /// Index of the last state (steps.size() - 1).
  std::size_t horizon() const { return steps.empty() ? 0 : steps.size() - 1; }

  bool operator==(const Trajectory&) const = default;
};

/// Where a training tuple came from. goal_index is -1 for goals drawn from
/// the dataset state pool rather than from this trajectory's future.
struct SampleSource {
  std::string trajectory_id;
  std::size_t step = 0;
  long goal_index = 0;

  bool operator==(const SampleSource&) const = default;
};

struct TransitionSample {
  std::string state_text;
  std::string thought_text;
  std::string next_state_text;
  std::string goal_text;
  int reach_reward = 0;
  bool terminal = false;
  SampleSource source;

  bool operator==(const TransitionSample&) const = default;
};

/// task_meta key recording why an episode ended ("terminated" or "truncated").
inline constexpr const char* kOutcomeKey = "outcome";

/// Discounted sum of env_reward over all steps.
double discounted_return(const Trajectory& traj, double gamma);

/// Checks the Trajectory invariants; throws FormatError with `where` as prefix.
void validate_trajectory(const Trajectory& traj, double gamma, const std::string& where = "");

/// Parses line-delimited trajectory records. Blank lines are skipped.
std::vector<Trajectory> parse_trajectories(std::istream& in, double gamma);

/// Canonical single-line record (no trailing newline).
std::string serialize_trajectory(const Trajectory& traj);

void write_trajectories(std::ostream& out, const std::vector<Trajectory>& trajs);

struct SummarizeOptions {
  /// When set the trajectory is returned untouched.
  bool skip_summarize = false;
};

/// Fills missing step summaries, one provider call per step. The prompt for
/// step t sees the history of steps 0..t. Template placeholders: {history},
/// {step}.
Trajectory summarize_trajectory(const Trajectory& traj, TextProvider& provider,
                                const std::string& prompt_template,
                                const SummarizeOptions& options = {});

enum class GoalSampling { kUniform, kGeometric };

struct RelabelOptions {
  std::size_t goals_per_step = 4;
  GoalSampling sampling = GoalSampling::kUniform;
  /// Success probability of the geometric offset distribution.
  double geometric_p = 0.5;
};

/// Hindsight relabeling: for each step t < T emits min(goals_per_step, T - t)
/// samples whose goals are distinct future states u in {t+1..T}.
std::vector<TransitionSample> build_transitions(const Trajectory& traj,
                                                const RelabelOptions& options, Rng& rng);

/// Distinct summaries of every state in the dataset, in first-seen order.
std::vector<std::string> state_pool(const std::vector<Trajectory>& trajs);

/// Unreached-goal relabeling: for each step t < T draws `per_step` goals
/// uniformly from `pool`. The reach reward is 1 only when the next summary
/// equals the goal text; a transition that ends a terminated episode is
/// terminal for every goal.
std::vector<TransitionSample> build_pool_transitions(const Trajectory& traj,
                                                     const std::vector<std::string>& pool,
                                                     std::size_t per_step, Rng& rng);

struct DatasetRelabelOptions {
  RelabelOptions hindsight;
  std::size_t pool_goals_per_step = 0;
};

/// Relabels a whole dataset. Each trajectory uses its own stream derived from
/// `seed` and its position, so the result is independent of evaluation order.
std::vector<TransitionSample> build_dataset_transitions(const std::vector<Trajectory>& trajs,
                                                        const DatasetRelabelOptions& options,
                                                        std::uint64_t seed);

}  // namespace pnlc
