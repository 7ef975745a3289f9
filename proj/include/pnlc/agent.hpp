// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pnlc/critic.hpp"
#include "pnlc/provider.hpp"

namespace pnlc {

/// Prompt templates. Each mirrors a three-part layout: context, instruction,
/// few-shot slot. Placeholders are written as {name}.
struct PromptTemplates {
  std::string thought;      // {state} {step} {candidate}
  std::string goal;         // {state} {thought} {polarity} {count}
  std::string refinement;   // {state} {thought} {value}
  std::string action;       // {state} {thought}
  std::string selection;    // {state} {options}
  std::string summarize;    // {history} {step}

  static PromptTemplates defaults();
  /// Loads <dir>/{thought,goal,refinement,action,selection,summarize}.txt;
  /// missing files keep the default.
  static PromptTemplates load(const std::filesystem::path& dir);
};

/// Replaces every {key} with its value; unknown placeholders are left as is.
std::string fill_template(std::string text,
                          const std::vector<std::pair<std::string, std::string>>& values);

/// One provider call; the trimmed response. Empty after one retry throws.
std::string generate_thought(const std::string& state_summary, TextProvider& provider,
                             const std::string& prompt_template, std::size_t step = 0,
                             std::size_t candidate = 1);

enum class Verdict { kKept, kRevised };

struct RefinementDecision {
  Verdict verdict = Verdict::kKept;
  std::string revised;   // set for kRevised
  bool warning = false;  // no marker found; kept by the fail-safe rule
};

/// `KEEP` -> keep, `REVISE: text` -> revise, whichever marker comes first;
/// anything else keeps with a warning.
RefinementDecision parse_refinement(const std::string& response);

enum class CriticMode { kOff, kGoals, kScalar };

struct RefinementIteration {
  std::string thought;
  NaturalLanguageValue value;
  Verdict verdict = Verdict::kKept;
  bool warning = false;
};

struct RefinementTranscript {
  std::vector<RefinementIteration> iterations;
  std::string final_thought;
};

struct RefineSettings {
  std::size_t m = 2;
  std::size_t n = 4;
  CriticMode mode = CriticMode::kGoals;
};

/// Critic-guided refinement: at most m thoughts are evaluated; a Revise at
/// the last iteration is adopted without further evaluation.
RefinementTranscript refine_loop(const std::string& state_summary, const std::string& initial_thought,
                                 const CriticBundle& critic, TextProvider& provider,
                                 const PromptTemplates& templates, const RefineSettings& settings);

/// One provider call with state and thought filled; the trimmed response.
std::string act(const std::string& state_summary, const std::string& final_thought,
                TextProvider& provider, const std::string& prompt_template);

/// Reads the first integer in the reply as a 1-based option; 0-based index,
/// or nullopt when none is in range.
std::optional<std::size_t> parse_selection(const std::string& response, std::size_t options);

struct BestOfNResult {
  std::vector<std::string> candidates;  // deduplicated, first-seen order
  std::vector<NaturalLanguageValue> values;
  std::size_t selected = 0;
  bool warning = false;
  std::string thought;
};

/// Generates n_thoughts candidates, scores each with the critic and lets the
/// provider pick one. No revision happens.
BestOfNResult best_of_n_mode(const std::string& state_summary, TextProvider& provider,
                             const CriticBundle& critic, const PromptTemplates& templates,
                             std::size_t n_thoughts, std::size_t n_goals, std::size_t step = 0);

struct AgentConfig {
  CriticMode critic = CriticMode::kGoals;
  bool best_of_n = false;
  std::size_t m = 2;
  std::size_t n = 4;
  std::size_t n_thoughts = 2;
  /// Discount used for the final_return of played episodes.
  double gamma = 0.99;
};

/// Everything the agent did at one environment step.
struct StepRecord {
  std::size_t step = 0;
  std::vector<std::string> thoughts;
  std::vector<std::string> values;
  std::vector<std::string> verdicts;
  std::string action;
  std::string observation;
  double reward = 0.0;
  std::size_t provider_calls = 0;
  std::size_t warnings = 0;
};

/// Thought, optional critic refinement or best-of-n selection, then action.
StepRecord agent_step(const std::string& state_summary, std::size_t step, TextProvider& provider,
                      const CriticBundle& critic, const PromptTemplates& templates,
                      const AgentConfig& config);

/// Transcript line {step, thoughts, values, verdicts, action, observation, reward}.
std::string transcript_line(const StepRecord& record);

}  // namespace pnlc
