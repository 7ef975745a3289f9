#include "pnlc/trajdata.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <unordered_map>

#include "json.hpp"
#include "pnlc/error.hpp"
#include "pnlc/provider.hpp"

namespace pnlc {

using ojson = nlohmann::ordered_json;

double discounted_return(const Trajectory& traj, double gamma) {
  double total = 0.0;
  double scale = 1.0;
  for (const auto& s : traj.steps) {
    total += scale * s.env_reward;
    scale *= gamma;
  }
  return total;
}

void validate_trajectory(const Trajectory& traj, double gamma, const std::string& where) {
  auto fail = [&](const std::string& msg) { throw FormatError(where + msg); };
  if (traj.id.empty()) fail("empty id");
  if (traj.steps.empty()) fail("trajectory " + traj.id + " has no steps");
  for (std::size_t i = 0; i < traj.steps.size(); ++i) {
    const Step& s = traj.steps[i];
    const std::string at = "step " + std::to_string(i);
    if (s.raw_state.empty()) fail(at + " empty raw_state");
    if (!std::isfinite(s.env_reward)) fail(at + " non-finite env_reward");
    if (i + 1 < traj.steps.size()) {
      if (s.thought.empty()) fail(at + " missing thought");
      if (s.env_action.empty()) fail(at + " missing env_action");
    }
  }
  if (!std::isfinite(traj.final_return)) fail("non-finite final_return");
  const double expect = discounted_return(traj, gamma);
  if (std::abs(expect - traj.final_return) > 1e-9 * std::max(1.0, std::abs(expect)))
    fail("final_return " + std::to_string(traj.final_return) + " differs from recomputed " +
         std::to_string(expect));
}

namespace {

const std::set<std::string> kTrajectoryFields = {"id", "task_meta", "steps", "final_return"};
const std::set<std::string> kStepFields = {"raw_state",  "summary",     "thought",
                                           "env_action", "observation", "env_reward"};

std::string prefix(const std::string& where) {
  return where.empty() || where.back() == ' ' ? where : where + " ";
}

std::string read_text(const ojson& obj, const char* field, const std::string& where,
                      bool required) {
  auto it = obj.find(field);
  if (it == obj.end()) {
    if (required) throw FormatError(prefix(where) + "missing " + field);
    return {};
  }
  if (!it->is_string()) throw FormatError(prefix(where) + field + " is not a string");
  return it->get<std::string>();
}

double read_real(const ojson& obj, const char* field, const std::string& where) {
  auto it = obj.find(field);
  if (it == obj.end()) throw FormatError(prefix(where) + "missing " + field);
  if (!it->is_number()) throw FormatError(prefix(where) + field + " is not a number");
  return it->get<double>();
}

Trajectory parse_record(const ojson& rec, const std::string& where) {
  if (!rec.is_object()) throw FormatError(where + "record is not an object");
  for (auto it = rec.begin(); it != rec.end(); ++it)
    if (!kTrajectoryFields.count(it.key())) throw FormatError(where + "unknown field " + it.key());

  Trajectory traj;
  traj.id = read_text(rec, "id", where, true);
  if (auto it = rec.find("task_meta"); it != rec.end()) {
    if (!it->is_object()) throw FormatError(where + "task_meta is not an object");
    for (auto kv = it->begin(); kv != it->end(); ++kv) {
      if (!kv->is_string()) throw FormatError(where + "task_meta." + kv.key() + " is not a string");
      traj.task_meta[kv.key()] = kv->get<std::string>();
    }
  } else {
    throw FormatError(where + "missing task_meta");
  }
  auto steps = rec.find("steps");
  if (steps == rec.end()) throw FormatError(where + "missing steps");
  if (!steps->is_array()) throw FormatError(where + "steps is not an array");
  const std::size_t n = steps->size();
  for (std::size_t i = 0; i < n; ++i) {
    const ojson& js = (*steps)[i];
    const std::string at = where + "step " + std::to_string(i);
    if (!js.is_object()) throw FormatError(at + " is not an object");
    for (auto it = js.begin(); it != js.end(); ++it)
      if (!kStepFields.count(it.key())) throw FormatError(at + " unknown field " + it.key());
    const bool last = i + 1 == n;
    Step s;
    s.raw_state = read_text(js, "raw_state", at, true);
    if (js.contains("summary")) s.summary = read_text(js, "summary", at, true);
    s.thought = read_text(js, "thought", at, !last);
    s.env_action = read_text(js, "env_action", at, !last);
    s.observation = read_text(js, "observation", at, false);
    s.env_reward = read_real(js, "env_reward", at);
    traj.steps.push_back(std::move(s));
  }
  traj.final_return = read_real(rec, "final_return", where);
  return traj;
}

}  // namespace

std::vector<Trajectory> parse_trajectories(std::istream& in, double gamma) {
  std::vector<Trajectory> out;
  std::set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(lineno) + ": ";
    ojson rec;
    try {
      rec = ojson::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(where + "invalid JSON (" + e.what() + ")");
    }
    Trajectory traj = parse_record(rec, where);
    validate_trajectory(traj, gamma, where);
    if (!ids.insert(traj.id).second) throw FormatError(where + "duplicate id " + traj.id);
    out.push_back(std::move(traj));
  }
  return out;
}

std::string serialize_trajectory(const Trajectory& traj) {
  ojson rec;
  rec["id"] = traj.id;
  rec["task_meta"] = ojson::object();
  for (const auto& [k, v] : traj.task_meta) rec["task_meta"][k] = v;
  rec["steps"] = ojson::array();
  for (const auto& s : traj.steps) {
    ojson js;
    js["raw_state"] = s.raw_state;
    if (s.summary) js["summary"] = *s.summary;
    js["thought"] = s.thought;
    js["env_action"] = s.env_action;
    js["observation"] = s.observation;
    js["env_reward"] = s.env_reward;
    rec["steps"].push_back(std::move(js));
  }
  rec["final_return"] = traj.final_return;
  return rec.dump();
}

void write_trajectories(std::ostream& out, const std::vector<Trajectory>& trajs) {
  for (const auto& t : trajs) out << serialize_trajectory(t) << '\n';
}

Trajectory summarize_trajectory(const Trajectory& traj, TextProvider& provider,
                                const std::string& prompt_template,
                                const SummarizeOptions& options) {
  if (options.skip_summarize) return traj;
  Trajectory out = traj;
  std::string history;
  for (std::size_t t = 0; t < out.steps.size(); ++t) {
    Step& s = out.steps[t];
    history += "step " + std::to_string(t) + ": state: " + s.raw_state;
    if (!s.thought.empty()) history += " | thought: " + s.thought;
    if (!s.env_action.empty()) history += " | action: " + s.env_action;
    if (!s.observation.empty()) history += " | observation: " + s.observation;
    history += '\n';
    if (s.summary) continue;

    std::string prompt = prompt_template;
    auto put = [&](const std::string& key, const std::string& value) {
      for (std::size_t p = prompt.find(key); p != std::string::npos;
           p = prompt.find(key, p + value.size())) {
        prompt.replace(p, key.size(), value);
      }
    };
    put("{history}", history);
    put("{step}", std::to_string(t));

    std::string reply;
    try {
      reply = provider.send(prompt);
    } catch (const ProviderError& e) {
      throw ProviderError("summarize step " + std::to_string(t) + ": " + e.what());
    }
    const auto b = reply.find_first_not_of(" \t\r\n");
    if (b == std::string::npos)
      throw ProviderError("summarize step " + std::to_string(t) + ": empty provider output");
    const auto e = reply.find_last_not_of(" \t\r\n");
    s.summary = reply.substr(b, e - b + 1);
  }
  return out;
}

namespace {

const std::string& summary_at(const Trajectory& traj, std::size_t i) {
  const auto& s = traj.steps[i].summary;
  if (!s) throw InvalidArgument("trajectory " + traj.id + ": step " + std::to_string(i) +
                                " has no summary");
  return *s;
}

}  // namespace

std::vector<TransitionSample> build_transitions(const Trajectory& traj,
                                                const RelabelOptions& options, Rng& rng) {
  if (options.goals_per_step == 0) throw InvalidArgument("goals_per_step must be >= 1");
  if (options.sampling == GoalSampling::kGeometric &&
      !(options.geometric_p > 0.0 && options.geometric_p <= 1.0))
    throw InvalidArgument("geometric_p must lie in (0, 1]");
  for (std::size_t i = 0; i < traj.steps.size(); ++i) summary_at(traj, i);

  std::vector<TransitionSample> out;
  const std::size_t T = traj.horizon();
  std::vector<std::size_t> future;
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t avail = T - t;
    const std::size_t k = std::min(options.goals_per_step, avail);
    std::vector<std::size_t> goals;
    if (options.sampling == GoalSampling::kUniform) {
      // partial Fisher-Yates over {t+1..T}
      future.resize(avail);
      for (std::size_t j = 0; j < avail; ++j) future[j] = t + 1 + j;
      for (std::size_t j = 0; j < k; ++j) {
        const std::size_t r = j + rng.below(avail - j);
        std::swap(future[j], future[r]);
        goals.push_back(future[j]);
      }
    } else {
      std::vector<bool> taken(avail, false);
      while (goals.size() < k) {
        std::size_t off = 0;
        while (rng.uniform() >= options.geometric_p) ++off;
        if (off >= avail || taken[off]) continue;
        taken[off] = true;
        goals.push_back(t + 1 + off);
      }
    }
    for (std::size_t u : goals) {
      TransitionSample s;
      s.state_text = summary_at(traj, t);
      s.thought_text = traj.steps[t].thought;
      s.next_state_text = summary_at(traj, t + 1);
      s.goal_text = summary_at(traj, u);
      s.reach_reward = (u == t + 1) ? 1 : 0;
      s.terminal = s.reach_reward == 1;
      s.source = {traj.id, t, static_cast<long>(u)};
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<std::string> state_pool(const std::vector<Trajectory>& trajs) {
  std::vector<std::string> pool;
  std::set<std::string> seen;
  for (const auto& traj : trajs)
    for (std::size_t i = 0; i < traj.steps.size(); ++i) {
      const std::string& s = summary_at(traj, i);
      if (seen.insert(s).second) pool.push_back(s);
    }
  return pool;
}

std::vector<TransitionSample> build_pool_transitions(const Trajectory& traj,
                                                     const std::vector<std::string>& pool,
                                                     std::size_t per_step, Rng& rng) {
  std::vector<TransitionSample> out;
  if (per_step == 0) return out;
  if (pool.empty()) throw InvalidArgument("empty goal pool");
  const std::size_t T = traj.horizon();
  auto outcome = traj.task_meta.find(kOutcomeKey);
  const bool terminated = outcome != traj.task_meta.end() && outcome->second == "terminated";
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t j = 0; j < per_step; ++j) {
      TransitionSample s;
      s.state_text = summary_at(traj, t);
      s.thought_text = traj.steps[t].thought;
      s.next_state_text = summary_at(traj, t + 1);
      s.goal_text = pool[rng.below(pool.size())];
      s.reach_reward = s.next_state_text == s.goal_text ? 1 : 0;
      // Nothing can be reached after the episode ends in a terminal state.
      s.terminal = s.reach_reward == 1 || (terminated && t + 1 == T);
      s.source = {traj.id, t, -1};
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<TransitionSample> build_dataset_transitions(const std::vector<Trajectory>& trajs,
                                                        const DatasetRelabelOptions& options,
                                                        std::uint64_t seed) {
  std::vector<std::string> pool;
  if (options.pool_goals_per_step > 0) pool = state_pool(trajs);
  std::vector<TransitionSample> out;
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    Rng rng(derive_seed(seed, i));
    auto h = build_transitions(trajs[i], options.hindsight, rng);
    out.insert(out.end(), std::make_move_iterator(h.begin()), std::make_move_iterator(h.end()));
    auto p = build_pool_transitions(trajs[i], pool, options.pool_goals_per_step, rng);
    out.insert(out.end(), std::make_move_iterator(p.begin()), std::make_move_iterator(p.end()));
  }
  return out;
}

}  // namespace pnlc
