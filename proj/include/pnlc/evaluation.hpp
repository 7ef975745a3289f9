// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pnlc/agent.hpp"
#include "pnlc/envworld.hpp"
#include "pnlc/provider.hpp"

namespace pnlc {

/// Rule-based stand-in for the agent LLM on the synthetic environments. It
/// recognises each prompt by its instruction line and reads the labelled
/// fields (State:, Thought:, Step:) the templates provide.
///
///  - thought: a naive planner that picks a flawed thought with a fixed
///    probability, drawn from a hash of (seed, prompt);
///  - goals: the environment's suggested goals for the state and thought;
///  - refinement: REVISE when the top negative likelihood exceeds the top
///    positive one (or, for a scalar value, when it is below 0.5), choosing
///    the first catalog thought that differs from the current one;
///  - action: the environment routine for the thought;
///  - selection: the option with the best positive-minus-negative margin.
class SyntheticMockProvider : public TextProvider {
 public:
  SyntheticMockProvider(const Environment& env, std::uint64_t seed);

  /// Probability that a fresh thought is one of the naive planner's flawed picks.
  static double flawed_thought_rate(const std::string& env_name);

  std::string respond(const std::string& prompt) const;

 protected:
  std::string do_send(const std::string& prompt) override { return respond(prompt); }

 private:
  std::string propose_thought(const std::string& prompt) const;
  std::string propose_goals(const std::string& prompt) const;
  std::string refine(const std::string& prompt) const;
  std::string choose_action(const std::string& prompt) const;
  std::string select(const std::string& prompt) const;
  std::string summarize(const std::string& prompt) const;

  const Environment& env_;
  std::uint64_t seed_;
};

/// Reads "<label> value" from the first line starting with label.
std::optional<std::string> prompt_field(const std::string& prompt, const std::string& label);

struct EpisodeResult {
  Trajectory trajectory;
  std::vector<StepRecord> records;
  std::size_t provider_calls = 0;
  bool success = false;
  double final_reward = 0.0;
};

/// Plays one episode with the agent; the environment decides legality of the
/// emitted action (an illegal action surfaces as InvalidArgument).
EpisodeResult run_episode(const Environment& env, TextProvider& provider, const CriticBundle& critic,
                          const PromptTemplates& templates, const AgentConfig& config);

struct EvalMetrics {
  std::size_t episodes = 0;
  double success_rate = 0.0;
  double mean_final_reward = 0.0;
  double mean_steps = 0.0;
  double mean_calls_per_step = 0.0;
  std::size_t max_calls_per_step = 0;
  std::size_t warnings = 0;
};

struct EvalReport {
  EvalMetrics metrics;
  std::vector<std::string> episode_paths;
  std::vector<EpisodeResult> episodes;
};

using ProviderFactory = std::function<std::unique_ptr<TextProvider>(std::uint64_t episode_seed)>;

/// Runs `episodes` episodes with seeds derived from `seed`. Each episode gets
/// a fresh provider from the factory. Transcripts are written as
/// <transcript_dir>/episode_<i>.jsonl when a directory is given.
EvalReport evaluate_agent(const Environment& env, const AgentConfig& config, std::size_t episodes,
                          std::uint64_t seed, const ProviderFactory& factory,
                          const CriticBundle& critic, const PromptTemplates& templates,
                          const std::optional<std::filesystem::path>& transcript_dir = std::nullopt,
                          std::size_t jobs = 1);

/// Recomputes aggregate metrics from per-episode results.
EvalMetrics aggregate(const std::vector<EpisodeResult>& episodes);

/// Provider calls a naive search would spend: each of n candidate thoughts
/// is simulated forward for `lookahead` steps with the provider generating
/// thought and action at each simulated step.
struct SearchCost {
  std::size_t calls = 0;
  std::string chosen;
};
SearchCost simulate_best_of_n(const Environment& env, const EnvState& state, TextProvider& provider,
                              const PromptTemplates& templates, std::size_t n,
                              std::size_t lookahead);

}  // namespace pnlc
