#include "pnlc/agent.hpp"

#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "pnlc/error.hpp"

namespace pnlc {

PromptTemplates PromptTemplates::defaults() {
  PromptTemplates t;
  t.thought =
      "You are an agent working on a task in a text environment.\n"
      "State: {state}\n"
      "Step: {step}\n"
      "Candidate: {candidate}\n"
      "\n"
      "Instruction: propose the next thought, a one-line high-level strategy for your next move.\n"
      "Reply with the thought only.\n";
  t.goal =
      "You are helping an agent judge a plan in a text environment.\n"
      "State: {state}\n"
      "Thought: {thought}\n"
      "\n"
      "Instruction: propose a future {polarity} goal the agent could end up in if it follows the "
      "thought. List {count} goals, numbered 1. 2. and so on, one per line.\n";
  t.refinement =
      "You are an agent reviewing your own plan.\n"
      "State: {state}\n"
      "Thought: {thought}\n"
      "Natural language value:\n"
      "{value}\n"
      "\n"
      "Instruction: using the likelihoods above, determine whether or not the current proposed "
      "thought will lead to success. Reply KEEP to keep it, or REVISE: <new thought> to replace it.\n";
  t.action =
      "You are an agent working on a task in a text environment.\n"
      "State: {state}\n"
      "Thought: {thought}\n"
      "\n"
      "Instruction: emit the environment action that carries out the thought. Reply with the "
      "action only.\n";
  t.selection =
      "You are an agent choosing between candidate plans.\n"
      "State: {state}\n"
      "\n"
      "{options}\n"
      "Instruction: select the most promising option. Reply with its number.\n";
  t.summarize =
      "Interaction so far:\n"
      "{history}\n"
      "Instruction: summarize the interaction up to step {step} as a compact description of the "
      "current state.\n";
  return t;
}

PromptTemplates PromptTemplates::load(const std::filesystem::path& dir) {
  PromptTemplates t = defaults();
  const std::pair<const char*, std::string*> files[] = {
      {"thought.txt", &t.thought},   {"goal.txt", &t.goal},
      {"refinement.txt", &t.refinement}, {"action.txt", &t.action},
      {"selection.txt", &t.selection},   {"summarize.txt", &t.summarize}};
  if (!std::filesystem::is_directory(dir))
    throw InvalidArgument("prompt directory " + dir.string() + " does not exist");
  for (const auto& [name, slot] : files) {
    std::ifstream in(dir / name, std::ios::binary);
    if (!in) continue;
    std::ostringstream ss;
    ss << in.rdbuf();
    *slot = ss.str();
  }
  return t;
}

std::string fill_template(std::string text,
                          const std::vector<std::pair<std::string, std::string>>& values) {
  for (const auto& [key, value] : values) {
    const std::string token = "{" + key + "}";
    for (std::size_t p = text.find(token); p != std::string::npos;
         p = text.find(token, p + value.size()))
      text.replace(p, token.size(), value);
  }
  return text;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// One call; an empty reply is retried once before failing.
std::string send_nonempty(TextProvider& provider, const std::string& prompt, const char* what) {
  for (int i = 0; i < 2; ++i) {
    std::string r = trim(provider.send(prompt));
    if (!r.empty()) return r;
  }
  throw ProviderError(std::string(what) + ": empty response after retry");
}

}  // namespace

std::string generate_thought(const std::string& state_summary, TextProvider& provider,
                             const std::string& prompt_template, std::size_t step,
                             std::size_t candidate) {
  const std::string prompt = fill_template(prompt_template, {{"state", state_summary},
                                                             {"step", std::to_string(step)},
                                                             {"candidate", std::to_string(candidate)}});
  return send_nonempty(provider, prompt, "generate_thought");
}

RefinementDecision parse_refinement(const std::string& response) {
  RefinementDecision d;
  // KEEP must stand alone as a word; REVISE needs its colon.
  std::size_t keep = std::string::npos;
  for (std::size_t p = response.find("KEEP"); p != std::string::npos; p = response.find("KEEP", p + 1)) {
    const bool left = p == 0 || !std::isalnum(static_cast<unsigned char>(response[p - 1]));
    const bool right = p + 4 >= response.size() || !std::isalnum(static_cast<unsigned char>(response[p + 4]));
    if (left && right) {
      keep = p;
      break;
    }
  }
  const std::size_t revise = response.find("REVISE:");
  if (revise != std::string::npos && (keep == std::string::npos || revise < keep)) {
    std::string rest = trim(response.substr(revise + 7));
    if (const auto nl = rest.find('\n'); nl != std::string::npos) rest = trim(rest.substr(0, nl));
    if (!rest.empty()) {
      d.verdict = Verdict::kRevised;
      d.revised = rest;
      return d;
    }
    d.warning = true;
    return d;
  }
  if (keep != std::string::npos) return d;
  d.warning = true;
  return d;
}

RefinementTranscript refine_loop(const std::string& state_summary, const std::string& initial_thought,
                                 const CriticBundle& critic, TextProvider& provider,
                                 const PromptTemplates& templates, const RefineSettings& settings) {
  if (settings.m < 1) throw InvalidArgument("refine_loop: m must be >= 1");
  if (settings.mode == CriticMode::kGoals && (settings.n < 2 || settings.n % 2 != 0))
    throw InvalidArgument("refine_loop: n must be even and >= 2");
  RefinementTranscript tr;
  std::string thought = initial_thought;
  for (std::size_t i = 0; i < settings.m; ++i) {
    RefinementIteration it;
    it.thought = thought;
    if (settings.mode == CriticMode::kScalar) {
      it.value = evaluate_scalar(critic, state_summary, thought);
    } else {
      // Goals are proposed afresh for every thought they judge.
      const auto goals = propose_goals(state_summary, thought, provider, settings.n, templates.goal);
      it.value = evaluate(critic, state_summary, thought, goals);
    }
    const std::string prompt = fill_template(
        templates.refinement, {{"state", state_summary}, {"thought", thought}, {"value", it.value.rendered}});
    const RefinementDecision d = parse_refinement(provider.send(prompt));
    it.verdict = d.verdict;
    it.warning = d.warning;
    tr.iterations.push_back(std::move(it));
    if (d.verdict == Verdict::kKept) break;
    thought = d.revised;
  }
  tr.final_thought = thought;
  return tr;
}

std::string act(const std::string& state_summary, const std::string& final_thought,
                TextProvider& provider, const std::string& prompt_template) {
  const std::string prompt =
      fill_template(prompt_template, {{"state", state_summary}, {"thought", final_thought}});
  return send_nonempty(provider, prompt, "act");
}

std::optional<std::size_t> parse_selection(const std::string& response, std::size_t options) {
  for (std::size_t i = 0; i < response.size(); ++i) {
    if (!std::isdigit(static_cast<unsigned char>(response[i]))) continue;
    std::size_t j = i;
    while (j < response.size() && std::isdigit(static_cast<unsigned char>(response[j]))) ++j;
    if (j - i > 6) return std::nullopt;
    const std::size_t k = std::stoul(response.substr(i, j - i));
    if (k >= 1 && k <= options) return k - 1;
    return std::nullopt;
  }
  return std::nullopt;
}

BestOfNResult best_of_n_mode(const std::string& state_summary, TextProvider& provider,
                             const CriticBundle& critic, const PromptTemplates& templates,
                             std::size_t n_thoughts, std::size_t n_goals, std::size_t step) {
  if (n_thoughts < 2) throw InvalidArgument("best_of_n: n_thoughts must be >= 2");
  BestOfNResult r;
  std::set<std::string> seen;
  for (std::size_t c = 1; c <= n_thoughts; ++c) {
    std::string t = generate_thought(state_summary, provider, templates.thought, step, c);
    if (seen.insert(t).second) r.candidates.push_back(std::move(t));
  }
  std::string options;
  for (std::size_t i = 0; i < r.candidates.size(); ++i) {
    const auto goals = propose_goals(state_summary, r.candidates[i], provider, n_goals, templates.goal);
    r.values.push_back(evaluate(critic, state_summary, r.candidates[i], goals));
    options += "Option " + std::to_string(i + 1) + ": " + r.candidates[i] + "\n" + r.values.back().rendered;
  }
  const std::string prompt =
      fill_template(templates.selection, {{"state", state_summary}, {"options", options}});
  const auto pick = parse_selection(provider.send(prompt), r.candidates.size());
  r.selected = pick.value_or(0);
  r.warning = !pick.has_value();
  r.thought = r.candidates[r.selected];
  return r;
}

StepRecord agent_step(const std::string& state_summary, std::size_t step, TextProvider& provider,
                      const CriticBundle& critic, const PromptTemplates& templates,
                      const AgentConfig& config) {
  StepRecord rec;
  rec.step = step;
  const std::size_t before = provider.calls();
  std::string final_thought;
  if (config.best_of_n) {
    const auto r = best_of_n_mode(state_summary, provider, critic, templates, config.n_thoughts,
                                  config.n, step);
    rec.thoughts = r.candidates;
    for (const auto& v : r.values) rec.values.push_back(v.rendered);
    rec.verdicts.push_back("selected " + std::to_string(r.selected + 1));
    if (r.warning) ++rec.warnings;
    final_thought = r.thought;
  } else {
    final_thought = generate_thought(state_summary, provider, templates.thought, step, 1);
    if (config.critic == CriticMode::kOff) {
      rec.thoughts.push_back(final_thought);
    } else {
      const auto tr = refine_loop(state_summary, final_thought, critic, provider, templates,
                                  RefineSettings{config.m, config.n, config.critic});
      for (const auto& it : tr.iterations) {
        rec.thoughts.push_back(it.thought);
        rec.values.push_back(it.value.rendered);
        rec.verdicts.push_back(it.verdict == Verdict::kKept ? "kept" : "revised");
        if (it.warning) ++rec.warnings;
      }
      // A revision adopted at the cap was never evaluated; record it too.
      if (tr.final_thought != tr.iterations.back().thought) rec.thoughts.push_back(tr.final_thought);
      final_thought = tr.final_thought;
    }
  }
  rec.action = act(state_summary, final_thought, provider, templates.action);
  rec.provider_calls = provider.calls() - before;
  return rec;
}

std::string transcript_line(const StepRecord& record) {
  nlohmann::ordered_json j;
  j["step"] = record.step;
  j["thoughts"] = record.thoughts;
  j["values"] = record.values;
  j["verdicts"] = record.verdicts;
  j["action"] = record.action;
  j["observation"] = record.observation;
  j["reward"] = record.reward;
  j["provider_calls"] = record.provider_calls;
  j["warnings"] = record.warnings;
  return j.dump();
}

}  // namespace pnlc
