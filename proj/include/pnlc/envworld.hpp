// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "pnlc/oracle.hpp"
#include "pnlc/trajdata.hpp"

namespace pnlc {

/// Episode state: enumerated environment state plus elapsed turns.
struct EnvState {
  std::size_t id = 0;
  std::size_t turn = 0;
};

struct StepResult {
  EnvState next;
  std::string observation;
  double reward = 0.0;
  bool done = false;
  /// done because a terminal state was reached (false when only the horizon
  /// ran out).
  bool terminated = false;
};

/// Goals a critic would propose for a state, by polarity.
struct GoalSuggestions {
  std::vector<std::string> positive;
  std::vector<std::string> negative;
};

/// Small enumerable text environment. Thoughts are strategy texts from a
/// fixed catalog; routine() maps a thought to the concrete action in a state.
class Environment {
 public:
  virtual ~Environment() = default;

  virtual std::string name() const = 0;
  virtual std::size_t num_states() const = 0;
  virtual std::string render(std::size_t state) const = 0;
  virtual std::size_t initial_state() const = 0;
  virtual bool is_terminal(std::size_t state) const = 0;
  virtual std::size_t horizon() const = 0;

  /// Throws InvalidArgument naming the legal set for an illegal action.
  virtual StepResult step(const EnvState& state, const std::string& action) const = 0;
  virtual std::vector<std::string> legal_actions() const = 0;

  virtual const std::vector<std::string>& thoughts() const = 0;
  /// Thought the optimal routine picks in this state.
  virtual std::string optimal_thought(std::size_t state) const = 0;
  /// Thoughts the uniform-random fallback draws from.
  virtual std::vector<std::string> random_thoughts() const = 0;
  /// Concrete action text for following `thought` in `state`.
  virtual std::string routine(const std::string& thought, std::size_t state) const = 0;

  /// Goals a well-informed proposer would suggest for a state and thought.
  virtual GoalSuggestions goal_suggestions(std::size_t state, const std::string& thought) const = 0;

  /// Higher is better: success indicator or final reward.
  virtual bool success(const Trajectory& traj) const = 0;

  std::size_t state_from_render(const std::string& rendering) const;
  EnvState reset() const { return EnvState{initial_state(), 0}; }

  /// Thought-level MDP induced by routine().
  TabularMDP to_mdp() const;
};

/// Corridor of length N with a key and a locked door at N-1. State
/// (position, has_key, door_open) renders as "pos=<p> key=<0|1> door=<0|1>".
class KeyDoorEnv : public Environment {
 public:
  explicit KeyDoorEnv(std::size_t length = 5, std::size_t key_pos = 1, std::size_t horizon = 12);

  static constexpr const char* kGrabKey = "grab the key first";
  static constexpr const char* kRushDoor = "rush the door";
  static constexpr const char* kStepBack = "step back left";
  static constexpr const char* kTryHandle = "try the handle";

  struct Cell {
    std::size_t pos;
    bool key;
    bool door;
  };
  std::size_t encode(Cell c) const;
  Cell decode(std::size_t id) const;
  std::size_t length() const { return length_; }
  std::size_t key_pos() const { return key_pos_; }

  std::string name() const override { return "keydoor"; }
  std::size_t num_states() const override { return length_ * 4; }
  std::string render(std::size_t state) const override;
  std::size_t initial_state() const override { return encode({0, false, false}); }
  bool is_terminal(std::size_t state) const override { return decode(state).door; }
  std::size_t horizon() const override { return horizon_; }
  StepResult step(const EnvState& state, const std::string& action) const override;
  std::vector<std::string> legal_actions() const override;
  const std::vector<std::string>& thoughts() const override { return thoughts_; }
  std::string optimal_thought(std::size_t) const override { return kGrabKey; }
  std::vector<std::string> random_thoughts() const override;
  std::string routine(const std::string& thought, std::size_t state) const override;
  GoalSuggestions goal_suggestions(std::size_t state, const std::string& thought) const override;
  bool success(const Trajectory& traj) const override;

 private:
  std::size_t length_, key_pos_, horizon_;
  std::vector<std::string> thoughts_;
};

/// Persuasion automaton. The donor mood moves on strategy tags parsed from
/// bracketed markers in the utterance; repeating the previous tag alienates
/// the donor. State renders as "donor=<mood> last=<tag|none>".
class DonationEnv : public Environment {
 public:
  enum class Mood { kSkeptical, kCurious, kConvinced, kAlienated };
  enum class Tag { kNone, kCredibility, kEmotional, kImpact, kAddressSkepticism };

  explicit DonationEnv(std::size_t turns = 10);

  static std::string tag_name(Tag tag);
  /// First bracketed known tag in the text; kImpact when none is present.
  static Tag parse_tag(const std::string& text);

  std::size_t encode(Mood mood, Tag last) const;
  std::pair<Mood, Tag> decode(std::size_t id) const;

  std::string name() const override { return "donation"; }
  std::size_t num_states() const override { return 20; }
  std::string render(std::size_t state) const override;
  std::size_t initial_state() const override { return encode(Mood::kSkeptical, Tag::kNone); }
  bool is_terminal(std::size_t state) const override;
  std::size_t horizon() const override { return turns_; }
  StepResult step(const EnvState& state, const std::string& action) const override;
  std::vector<std::string> legal_actions() const override;
  const std::vector<std::string>& thoughts() const override { return thoughts_; }
  std::string optimal_thought(std::size_t state) const override;
  std::vector<std::string> random_thoughts() const override { return thoughts_; }
  std::string routine(const std::string& thought, std::size_t state) const override;
  GoalSuggestions goal_suggestions(std::size_t state, const std::string& thought) const override;
  bool success(const Trajectory& traj) const override;

  static double final_reward(Mood mood);

 private:
  std::size_t turns_;
  std::vector<std::string> thoughts_;
};

std::unique_ptr<Environment> make_environment(const std::string& name);

/// Mixture of the optimal routine (probability 1 - epsilon) and a uniform
/// draw over the environment's random thoughts (probability epsilon).
class ScriptedPolicy {
 public:
  ScriptedPolicy(const Environment& env, double epsilon);

  double epsilon() const { return epsilon_; }
  std::string choose(std::size_t state, Rng& rng) const;
  /// pi(thought | state) over env.thoughts().
  std::vector<double> distribution(std::size_t state) const;
  BehaviorPolicy table() const;

 private:
  const Environment& env_;
  double epsilon_;
};

/// Plays one episode. Every visited state becomes a Step whose raw_state and
/// summary are the canonical rendering; the final state is recorded as a
/// last step without thought or action.
Trajectory rollout(const Environment& env, const ScriptedPolicy& policy, std::uint64_t seed,
                   double return_gamma = 0.99);

/// `count` episodes with per-episode seeds derived from `seed`.
std::vector<Trajectory> collect(const Environment& env, double epsilon, std::size_t count,
                                std::uint64_t seed, double return_gamma = 0.99);

}  // namespace pnlc
