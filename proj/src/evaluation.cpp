#include "pnlc/evaluation.hpp"

#include <algorithm>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "pnlc/embed.hpp"
#include "pnlc/error.hpp"

namespace pnlc {

std::optional<std::string> prompt_field(const std::string& prompt, const std::string& label) {
  std::istringstream in(prompt);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind(label, 0) != 0) continue;
    std::string v = line.substr(label.size());
    const auto b = v.find_first_not_of(" \t");
    if (b == std::string::npos) return std::string();
    const auto e = v.find_last_not_of(" \t\r");
    return v.substr(b, e - b + 1);
  }
  return std::nullopt;
}

namespace {

// Critic feedback lines as (marker, likelihood).
std::vector<std::pair<char, double>> read_value_lines(const std::string& text) {
  std::vector<std::pair<char, double>> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.size() < 8 || line[0] != '[' || line[2] != ']') continue;
    const char m = line[1];
    if (m != '+' && m != '-' && m != '=') continue;
    try {
      out.emplace_back(m, std::stod(line.substr(4, 4)));
    } catch (const std::exception&) {
    }
  }
  return out;
}

}  // namespace

SyntheticMockProvider::SyntheticMockProvider(const Environment& env, std::uint64_t seed)
    : env_(env), seed_(seed) {}

double SyntheticMockProvider::flawed_thought_rate(const std::string& env_name) {
  if (env_name == "keydoor") return 0.75;
  if (env_name == "donation") return 0.75;
  return 0.5;
}

std::string SyntheticMockProvider::respond(const std::string& prompt) const {
  // Instruction markers from the shipped templates; checked most specific first.
  if (prompt.find("determine whether or not the current proposed thought") != std::string::npos)
    return refine(prompt);
  if (prompt.find("select the most promising option") != std::string::npos) return select(prompt);
  if (prompt.find("propose a future") != std::string::npos) return propose_goals(prompt);
  if (prompt.find("emit the environment action") != std::string::npos) return choose_action(prompt);
  if (prompt.find("propose the next thought") != std::string::npos) return propose_thought(prompt);
  if (prompt.find("summarize the interaction") != std::string::npos) return summarize(prompt);
  throw Error("synthetic mock: unrecognised prompt");
}

std::string SyntheticMockProvider::propose_thought(const std::string& prompt) const {
  const std::string state = prompt_field(prompt, "State:").value_or("");
  const std::size_t s = env_.state_from_render(state);
  Rng rng(derive_seed(seed_, fnv1a64(prompt)));
  const double u = rng.uniform();
  if (env_.name() == "keydoor") {
    return u < flawed_thought_rate("keydoor") ? KeyDoorEnv::kRushDoor : KeyDoorEnv::kGrabKey;
  }
  if (env_.name() == "donation") {
    // naive persuader: leans on impact, then emotion
    const auto& t = env_.thoughts();
    if (u < 0.5) return t[3];
    if (u < 0.75) return t[2];
    return env_.optimal_thought(s);
  }
  const auto& t = env_.thoughts();
  return t[rng.below(t.size())];
}

std::string SyntheticMockProvider::propose_goals(const std::string& prompt) const {
  const std::string state = prompt_field(prompt, "State:").value_or("");
  const std::string thought = prompt_field(prompt, "Thought:").value_or("");
  const GoalSuggestions g = env_.goal_suggestions(env_.state_from_render(state), thought);
  const bool positive = prompt.find("future positive goal") != std::string::npos;
  const auto& list = positive ? g.positive : g.negative;
  std::string out;
  for (std::size_t i = 0; i < list.size(); ++i)
    out += std::to_string(i + 1) + ". " + list[i] + "\n";
  return out;
}

std::string SyntheticMockProvider::refine(const std::string& prompt) const {
  const std::string thought = prompt_field(prompt, "Thought:").value_or("");
  const auto lines = read_value_lines(prompt);
  double pos = -1.0, neg = -1.0, scalar = -1.0;
  for (const auto& [m, v] : lines) {
    if (m == '+') pos = std::max(pos, v);
    if (m == '-') neg = std::max(neg, v);
    if (m == '=') scalar = std::max(scalar, v);
  }
  const bool doubtful = scalar >= 0.0 ? scalar < 0.5 : neg > pos;
  if (!doubtful) return "KEEP";
  for (const auto& alt : env_.thoughts())
    if (alt != thought) return "REVISE: " + alt;
  return "KEEP";
}

std::string SyntheticMockProvider::choose_action(const std::string& prompt) const {
  const std::string state = prompt_field(prompt, "State:").value_or("");
  const std::string thought = prompt_field(prompt, "Thought:").value_or("");
  const std::size_t s = env_.state_from_render(state);
  try {
    return env_.routine(thought, s);
  } catch (const InvalidArgument&) {
    return env_.legal_actions().front();
  }
}

std::string SyntheticMockProvider::select(const std::string& prompt) const {
  // Options are "Option k: <thought>" followed by their value lines.
  std::istringstream in(prompt);
  std::string line;
  int current = 0, best = 1;
  double best_margin = -2.0;
  std::vector<double> pos, neg;
  auto close = [&]() {
    if (current == 0) return;
    double p = pos.empty() ? 0.0 : *std::max_element(pos.begin(), pos.end());
    double n = neg.empty() ? 0.0 : *std::max_element(neg.begin(), neg.end());
    if (p - n > best_margin) {
      best_margin = p - n;
      best = current;
    }
    pos.clear();
    neg.clear();
  };
  while (std::getline(in, line)) {
    if (line.rfind("Option ", 0) == 0) {
      close();
      current = std::atoi(line.c_str() + 7);
      continue;
    }
    for (const auto& [m, v] : read_value_lines(line)) (m == '-' ? neg : pos).push_back(v);
  }
  close();
  return "Option " + std::to_string(best) + " looks best.";
}

std::string SyntheticMockProvider::summarize(const std::string& prompt) const {
  // The newest state in the history is already a canonical summary.
  std::istringstream in(prompt);
  std::string line, last;
  while (std::getline(in, line)) {
    const auto p = line.find("state: ");
    if (line.rfind("step ", 0) == 0 && p != std::string::npos) {
      last = line.substr(p + 7);
      last = last.substr(0, last.find(" | "));
    }
  }
  return last;
}

EpisodeResult run_episode(const Environment& env, TextProvider& provider, const CriticBundle& critic,
                          const PromptTemplates& templates, const AgentConfig& config) {
  EpisodeResult res;
  Trajectory& t = res.trajectory;
  t.task_meta["env"] = env.name();
  EnvState state = env.reset();
  const std::size_t before = provider.calls();
  bool terminated = false;
  while (true) {
    const std::string summary = env.render(state.id);
    StepRecord rec = agent_step(summary, state.turn, provider, critic, templates, config);
    const StepResult r = env.step(state, rec.action);
    rec.observation = r.observation;
    rec.reward = r.reward;
    Step s;
    s.raw_state = summary;
    s.summary = summary;
    s.thought = rec.thoughts.empty() ? std::string() : rec.thoughts.back();
    s.env_action = rec.action;
    s.observation = r.observation;
    s.env_reward = r.reward;
    t.steps.push_back(std::move(s));
    res.records.push_back(std::move(rec));
    state = r.next;
    if (r.done) {
      terminated = r.terminated;
      break;
    }
  }
  Step last;
  last.raw_state = env.render(state.id);
  last.summary = last.raw_state;
  t.steps.push_back(std::move(last));
  t.task_meta[kOutcomeKey] = terminated ? "terminated" : "truncated";
  t.final_return = discounted_return(t, config.gamma);
  res.provider_calls = provider.calls() - before;
  res.success = env.success(t);
  for (const auto& s : t.steps) res.final_reward += s.env_reward;
  t.task_meta["success"] = res.success ? "1" : "0";
  return res;
}

EvalMetrics aggregate(const std::vector<EpisodeResult>& episodes) {
  EvalMetrics m;
  m.episodes = episodes.size();
  if (episodes.empty()) return m;
  std::size_t steps = 0, calls = 0, wins = 0;
  double reward = 0.0;
  for (const auto& e : episodes) {
    wins += e.success ? 1 : 0;
    reward += e.final_reward;
    steps += e.records.size();
    for (const auto& r : e.records) {
      calls += r.provider_calls;
      m.max_calls_per_step = std::max(m.max_calls_per_step, r.provider_calls);
      m.warnings += r.warnings;
    }
  }
  const double n = static_cast<double>(episodes.size());
  m.success_rate = static_cast<double>(wins) / n;
  m.mean_final_reward = reward / n;
  m.mean_steps = static_cast<double>(steps) / n;
  m.mean_calls_per_step = steps ? static_cast<double>(calls) / static_cast<double>(steps) : 0.0;
  return m;
}

EvalReport evaluate_agent(const Environment& env, const AgentConfig& config, std::size_t episodes,
                          std::uint64_t seed, const ProviderFactory& factory,
                          const CriticBundle& critic, const PromptTemplates& templates,
                          const std::optional<std::filesystem::path>& transcript_dir,
                          std::size_t jobs) {
  if (episodes == 0) throw InvalidArgument("evaluate_agent: episodes must be >= 1");
  if (transcript_dir) std::filesystem::create_directories(*transcript_dir);
  EvalReport report;
  report.episodes.resize(episodes);
  report.episode_paths.resize(transcript_dir ? episodes : 0);

  std::mutex err_mu;
  std::exception_ptr first_error;
  auto play = [&](std::size_t i) {
    try {
      auto provider = factory(derive_seed(seed, i));
      report.episodes[i] = run_episode(env, *provider, critic, templates, config);
      report.episodes[i].trajectory.id = env.name() + "-eval-" + std::to_string(i);
      if (transcript_dir) {
        const auto path = *transcript_dir / ("episode_" + std::to_string(i) + ".jsonl");
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        for (const auto& r : report.episodes[i].records) out << transcript_line(r) << '\n';
        report.episode_paths[i] = path.string();
      }
    } catch (...) {
      std::lock_guard lock(err_mu);
      if (!first_error) first_error = std::current_exception();
    }
  };

  const std::size_t width = std::max<std::size_t>(1, std::min(jobs, episodes));
  if (width == 1) {
    for (std::size_t i = 0; i < episodes; ++i) play(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < width; ++w)
      pool.emplace_back([&] {
        for (std::size_t i; (i = next++) < episodes;) play(i);
      });
    for (auto& th : pool) th.join();
  }
  if (first_error) std::rethrow_exception(first_error);
  report.metrics = aggregate(report.episodes);
  return report;
}

SearchCost simulate_best_of_n(const Environment& env, const EnvState& state, TextProvider& provider,
                              const PromptTemplates& templates, std::size_t n,
                              std::size_t lookahead) {
  SearchCost cost;
  const std::size_t before = provider.calls();
  const std::string summary = env.render(state.id);
  double best = -1.0;
  for (std::size_t c = 1; c <= n; ++c) {
    const std::string first = generate_thought(summary, provider, templates.thought, state.turn, c);
    // Roll the candidate forward, asking the provider for every simulated move.
    EnvState sim = state;
    std::string thought = first;
    double total = 0.0;
    for (std::size_t k = 0; k < lookahead; ++k) {
      const std::string here = env.render(sim.id);
      if (k > 0) thought = generate_thought(here, provider, templates.thought, sim.turn, c);
      const std::string action = act(here, thought, provider, templates.action);
      const StepResult r = env.step(sim, action);
      total += r.reward;
      sim = r.next;
      if (r.done) break;
    }
    if (total > best) {
      best = total;
      cost.chosen = first;
    }
  }
  cost.calls = provider.calls() - before;
  return cost;
}

}  // namespace pnlc
