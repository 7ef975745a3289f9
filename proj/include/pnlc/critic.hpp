// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "pnlc/embed.hpp"
#include "pnlc/provider.hpp"
#include "pnlc/valuefn.hpp"

namespace pnlc {

enum class Polarity { kPositive, kNegative };

std::string polarity_name(Polarity p);

struct GoalProposal {
  std::string text;
  Polarity polarity = Polarity::kPositive;
  Embedding embedding;
  double likelihood = 0.0;  // clamped to [0, 1]
};

struct NaturalLanguageValue {
  std::vector<GoalProposal> proposals;  // positives first, each block descending
  std::string rendered;
  /// Set for the goal-less ablation: a single success estimate.
  bool scalar = false;
};

using GoalText = std::pair<std::string, Polarity>;

/// Extracts items numbered 1., 2., ... in order, each running to the next
/// marker or the end of its line. Returns at most `limit` items.
std::vector<std::string> parse_numbered(const std::string& response, std::size_t limit);

/// Placeholders: {state}, {thought}, {polarity}, {count}.
std::string fill_goal_prompt(const std::string& prompt_template, const std::string& state,
                             const std::string& thought, Polarity polarity, std::size_t count);

/// One provider call per polarity, n/2 goals each, positives first. A short
/// answer is re-prompted once before failing with the raw response.
std::vector<GoalText> propose_goals(const std::string& state_summary, const std::string& thought,
                                    TextProvider& provider, std::size_t n,
                                    const std::string& prompt_template);

/// Rounds half-up to two decimals after clamping to [0, 1].
std::string format_likelihood(double likelihood);

/// One line per proposal: "[+] 0.40 — goal" / "[-] ..."; the goal-less
/// ablation renders a single "[=] 0.83 — estimated chance of success".
std::string render(const NaturalLanguageValue& value);

/// Orders proposals canonically (positives first, likelihood descending,
/// then text) and fills `rendered`.
void canonicalize(NaturalLanguageValue& value);

/// Everything the critic needs at inference.
struct CriticBundle {
  const ValueCheckpoint* checkpoint = nullptr;
  Embedder* embedder = nullptr;
  EmbeddingCache* cache = nullptr;
};

/// Scores each goal with the value function; makes no provider calls.
NaturalLanguageValue evaluate(const CriticBundle& critic, const std::string& state_summary,
                              const std::string& thought, const std::vector<GoalText>& goals);

/// Goal-less ablation: scores Q(s, tht, success) from a goal-less checkpoint.
NaturalLanguageValue evaluate_scalar(const CriticBundle& critic, const std::string& state_summary,
                                     const std::string& thought);

}  // namespace pnlc
