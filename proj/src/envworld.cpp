#include "pnlc/envworld.hpp"

#include <algorithm>
#include <cmath>

#include "pnlc/error.hpp"

namespace pnlc {

std::size_t Environment::state_from_render(const std::string& rendering) const {
  for (std::size_t s = 0; s < num_states(); ++s)
    if (render(s) == rendering) return s;
  throw InvalidArgument(name() + ": unknown state rendering '" + rendering + "'");
}

TabularMDP Environment::to_mdp() const {
  TabularMDP m;
  const std::size_t S = num_states();
  for (std::size_t s = 0; s < S; ++s) m.states.push_back(render(s));
  m.actions = thoughts();
  const std::size_t A = m.actions.size();
  m.transition.assign(S, std::vector<std::vector<double>>(A, std::vector<double>(S, 0.0)));
  m.initial.assign(S, 0.0);
  m.initial[initial_state()] = 1.0;
  m.terminal.resize(S);
  m.horizon = horizon();
  for (std::size_t s = 0; s < S; ++s) {
    m.terminal[s] = is_terminal(s);
    for (std::size_t a = 0; a < A; ++a) {
      if (m.terminal[s]) {
        m.transition[s][a][s] = 1.0;
        continue;
      }
      // turn 0 so the horizon never cuts the one-step model
      const StepResult r = step(EnvState{s, 0}, routine(m.actions[a], s));
      m.transition[s][a][r.next.id] = 1.0;
    }
  }
  return m;
}

// ---------------------------------------------------------------- KeyDoor

KeyDoorEnv::KeyDoorEnv(std::size_t length, std::size_t key_pos, std::size_t horizon)
    : length_(length), key_pos_(key_pos), horizon_(horizon),
      thoughts_{kGrabKey, kRushDoor, kStepBack, kTryHandle} {
  if (length < 2) throw InvalidArgument("keydoor: corridor length must be >= 2");
  if (key_pos >= length - 1) throw InvalidArgument("keydoor: key must lie before the door");
  if (horizon == 0) throw InvalidArgument("keydoor: horizon must be positive");
}

std::size_t KeyDoorEnv::encode(Cell c) const {
  return (c.pos * 2 + (c.key ? 1 : 0)) * 2 + (c.door ? 1 : 0);
}

KeyDoorEnv::Cell KeyDoorEnv::decode(std::size_t id) const {
  if (id >= num_states()) throw InvalidArgument("keydoor: state id out of range");
  return Cell{id / 4, ((id / 2) % 2) == 1, (id % 2) == 1};
}

std::string KeyDoorEnv::render(std::size_t state) const {
  const Cell c = decode(state);
  return "pos=" + std::to_string(c.pos) + " key=" + (c.key ? "1" : "0") + " door=" +
         (c.door ? "1" : "0");
}

std::vector<std::string> KeyDoorEnv::legal_actions() const { return {"left", "right", "interact"}; }

StepResult KeyDoorEnv::step(const EnvState& state, const std::string& action) const {
  Cell c = decode(state.id);
  if (c.door) throw InvalidArgument("keydoor: episode already ended");
  StepResult r;
  if (action == "left") {
    if (c.pos > 0) --c.pos;
  } else if (action == "right") {
    if (c.pos + 1 < length_) ++c.pos;
  } else if (action == "interact") {
    if (c.pos == key_pos_ && !c.key) {
      c.key = true;
    } else if (c.pos == length_ - 1 && c.key) {
      c.door = true;
      r.reward = 1.0;
    }
  } else {
    throw InvalidArgument("keydoor: illegal action '" + action + "' (legal: left, right, interact)");
  }
  r.next = EnvState{encode(c), state.turn + 1};
  r.observation = render(r.next.id);
  r.terminated = c.door;
  r.done = r.terminated || r.next.turn >= horizon_;
  return r;
}

std::vector<std::string> KeyDoorEnv::random_thoughts() const {
  return {kRushDoor, kStepBack, kTryHandle};
}

std::string KeyDoorEnv::routine(const std::string& thought, std::size_t state) const {
  const Cell c = decode(state);
  const std::size_t door = length_ - 1;
  if (thought == kGrabKey) {
    if (!c.key) {
      if (c.pos > key_pos_) return "left";
      if (c.pos < key_pos_) return "right";
      return "interact";
    }
    return c.pos < door ? "right" : "interact";
  }
  if (thought == kRushDoor) return c.pos < door ? "right" : "interact";
  if (thought == kStepBack) return "left";
  if (thought == kTryHandle) return "interact";
  throw InvalidArgument("keydoor: unknown thought '" + thought + "'");
}

GoalSuggestions KeyDoorEnv::goal_suggestions(std::size_t state, const std::string&) const {
  const Cell c = decode(state);
  const std::size_t door = length_ - 1;
  GoalSuggestions g;
  g.positive = {render(encode({door, true, true})), render(encode({key_pos_, true, false}))};
  std::size_t drift = 0;
  if (!c.key && c.pos >= key_pos_) drift = std::min(c.pos + 1, door);
  if (drift == door) drift = door - 1;  // keep the two negatives distinct
  g.negative = {render(encode({door, false, false})), render(encode({drift, false, false}))};
  return g;
}

bool KeyDoorEnv::success(const Trajectory& traj) const {
  for (const auto& s : traj.steps)
    if (s.env_reward > 0.0) return true;
  return false;
}

// ---------------------------------------------------------------- Donation

namespace {

constexpr DonationEnv::Tag kTags[] = {DonationEnv::Tag::kAddressSkepticism,
                                      DonationEnv::Tag::kCredibility, DonationEnv::Tag::kEmotional,
                                      DonationEnv::Tag::kImpact};

const char* mood_name(DonationEnv::Mood m) {
  switch (m) {
    case DonationEnv::Mood::kSkeptical: return "skeptical";
    case DonationEnv::Mood::kCurious: return "curious";
    case DonationEnv::Mood::kConvinced: return "convinced";
    case DonationEnv::Mood::kAlienated: return "alienated";
  }
  return "?";
}

// Thought catalog, one per strategy tag, in kTags order.
const std::vector<std::string>& donation_thoughts() {
  static const std::vector<std::string> t = {
      "address the donor's doubts", "establish the charity's credibility",
      "appeal to the donor's emotions", "stress the impact of a donation"};
  return t;
}

const char* utterance(DonationEnv::Tag tag) {
  switch (tag) {
    case DonationEnv::Tag::kAddressSkepticism:
      return "I understand your doubts, so let me answer them directly [address-skepticism]";
    case DonationEnv::Tag::kCredibility:
      return "The charity is audited every year and rated four stars [credibility]";
    case DonationEnv::Tag::kEmotional:
      return "Imagine a child waiting for a meal tonight [emotional]";
    case DonationEnv::Tag::kImpact:
      return "Even two dollars buys a week of clean water [impact]";
    case DonationEnv::Tag::kNone: break;
  }
  return "";
}

}  // namespace

DonationEnv::DonationEnv(std::size_t turns) : turns_(turns), thoughts_(donation_thoughts()) {
  if (turns == 0) throw InvalidArgument("donation: turn budget must be positive");
}

std::string DonationEnv::tag_name(Tag tag) {
  switch (tag) {
    case Tag::kNone: return "none";
    case Tag::kCredibility: return "credibility";
    case Tag::kEmotional: return "emotional";
    case Tag::kImpact: return "impact";
    case Tag::kAddressSkepticism: return "address-skepticism";
  }
  return "none";
}

DonationEnv::Tag DonationEnv::parse_tag(const std::string& text) {
  std::size_t pos = 0;
  while ((pos = text.find('[', pos)) != std::string::npos) {
    const std::size_t end = text.find(']', pos);
    if (end == std::string::npos) break;
    const std::string inner = text.substr(pos + 1, end - pos - 1);
    for (Tag t : kTags)
      if (inner == tag_name(t)) return t;
    pos = end + 1;
  }
  return Tag::kImpact;
}

std::size_t DonationEnv::encode(Mood mood, Tag last) const {
  return static_cast<std::size_t>(mood) * 5 + static_cast<std::size_t>(last);
}

std::pair<DonationEnv::Mood, DonationEnv::Tag> DonationEnv::decode(std::size_t id) const {
  if (id >= num_states()) throw InvalidArgument("donation: state id out of range");
  return {static_cast<Mood>(id / 5), static_cast<Tag>(id % 5)};
}

std::string DonationEnv::render(std::size_t state) const {
  const auto [mood, last] = decode(state);
  return std::string("donor=") + mood_name(mood) + " last=" + tag_name(last);
}

bool DonationEnv::is_terminal(std::size_t state) const {
  const Mood m = decode(state).first;
  return m == Mood::kConvinced || m == Mood::kAlienated;
}

double DonationEnv::final_reward(Mood mood) {
  switch (mood) {
    case Mood::kConvinced: return 2.0;
    case Mood::kCurious: return 0.5;
    default: return 0.0;
  }
}

std::vector<std::string> DonationEnv::legal_actions() const {
  std::vector<std::string> out;
  for (Tag t : kTags) out.push_back(utterance(t));
  return out;
}

StepResult DonationEnv::step(const EnvState& state, const std::string& action) const {
  auto [mood, last] = decode(state.id);
  if (is_terminal(state.id)) throw InvalidArgument("donation: episode already ended");
  if (action.find_first_not_of(" \t\r\n") == std::string::npos) {
    std::string legal;
    for (const auto& a : legal_actions()) legal += "\n  " + a;
    throw InvalidArgument("donation: empty utterance; legal actions:" + legal);
  }
  const Tag tag = parse_tag(action);
  Mood next_mood = mood;
  Tag next_last = tag;
  if (tag == last) {
    next_mood = Mood::kAlienated;
  } else if (mood == Mood::kSkeptical) {
    if (tag == Tag::kAddressSkepticism) next_mood = Mood::kCurious;
  } else if (mood == Mood::kCurious) {
    if (tag == Tag::kCredibility) next_mood = Mood::kConvinced;
  }
  if (next_mood == Mood::kConvinced || next_mood == Mood::kAlienated) next_last = Tag::kNone;

  StepResult r;
  r.next = EnvState{encode(next_mood, next_last), state.turn + 1};
  r.observation = render(r.next.id);
  r.terminated = is_terminal(r.next.id);
  r.done = r.terminated || r.next.turn >= turns_;
  if (r.done) r.reward = final_reward(next_mood);
  return r;
}

std::string DonationEnv::optimal_thought(std::size_t state) const {
  return decode(state).first == Mood::kCurious ? thoughts_[1] : thoughts_[0];
}

std::string DonationEnv::routine(const std::string& thought, std::size_t) const {
  for (std::size_t i = 0; i < thoughts_.size(); ++i)
    if (thoughts_[i] == thought) return utterance(kTags[i]);
  throw InvalidArgument("donation: unknown thought '" + thought + "'");
}

GoalSuggestions DonationEnv::goal_suggestions(std::size_t, const std::string& thought) const {
  GoalSuggestions g;
  g.positive = {render(encode(Mood::kConvinced, Tag::kNone)),
                render(encode(Mood::kCurious, Tag::kAddressSkepticism))};
  Tag tag = Tag::kImpact;
  for (std::size_t i = 0; i < thoughts_.size(); ++i)
    if (thoughts_[i] == thought) tag = kTags[i];
  g.negative = {render(encode(Mood::kAlienated, Tag::kNone)),
                render(encode(Mood::kSkeptical, tag))};
  return g;
}

bool DonationEnv::success(const Trajectory& traj) const {
  if (traj.steps.empty()) return false;
  const auto& last = traj.steps.back();
  const std::string& s = last.summary ? *last.summary : last.raw_state;
  return s == render(encode(Mood::kConvinced, Tag::kNone));
}

std::unique_ptr<Environment> make_environment(const std::string& name) {
  if (name == "keydoor") return std::make_unique<KeyDoorEnv>();
  if (name == "donation") return std::make_unique<DonationEnv>();
  throw InvalidArgument("unknown environment '" + name + "' (known: keydoor, donation)");
}

// ---------------------------------------------------------------- policies

ScriptedPolicy::ScriptedPolicy(const Environment& env, double epsilon)
    : env_(env), epsilon_(epsilon) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw InvalidArgument("policy: epsilon must lie in [0, 1]");
}

std::string ScriptedPolicy::choose(std::size_t state, Rng& rng) const {
  // One uniform draw decides the branch, a second picks the random thought.
  if (rng.uniform() < epsilon_) {
    const auto pool = env_.random_thoughts();
    return pool[rng.below(pool.size())];
  }
  return env_.optimal_thought(state);
}

std::vector<double> ScriptedPolicy::distribution(std::size_t state) const {
  const auto& catalog = env_.thoughts();
  const auto pool = env_.random_thoughts();
  const std::string best = env_.optimal_thought(state);
  std::vector<double> p(catalog.size(), 0.0);
  for (std::size_t a = 0; a < catalog.size(); ++a) {
    if (catalog[a] == best) p[a] += 1.0 - epsilon_;
    if (std::find(pool.begin(), pool.end(), catalog[a]) != pool.end())
      p[a] += epsilon_ / static_cast<double>(pool.size());
  }
  return p;
}

BehaviorPolicy ScriptedPolicy::table() const {
  BehaviorPolicy b;
  for (std::size_t s = 0; s < env_.num_states(); ++s) b.probs.push_back(distribution(s));
  return b;
}

Trajectory rollout(const Environment& env, const ScriptedPolicy& policy, std::uint64_t seed,
                   double return_gamma) {
  Rng rng(seed);
  Trajectory t;
  t.id = env.name() + "-" + std::to_string(seed);
  t.task_meta["env"] = env.name();
  char eps[32];
  std::snprintf(eps, sizeof eps, "%g", policy.epsilon());
  t.task_meta["epsilon"] = eps;
  t.task_meta["seed"] = std::to_string(seed);
  EnvState state = env.reset();
  bool terminated = false;
  while (true) {
    Step s;
    s.raw_state = env.render(state.id);
    s.summary = s.raw_state;
    const std::string thought = policy.choose(state.id, rng);
    s.thought = thought;
    s.env_action = env.routine(thought, state.id);
    const StepResult r = env.step(state, s.env_action);
    s.observation = r.observation;
    s.env_reward = r.reward;
    t.steps.push_back(std::move(s));
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
  t.task_meta["success"] = env.success(t) ? "1" : "0";
  t.final_return = discounted_return(t, return_gamma);
  return t;
}

std::vector<Trajectory> collect(const Environment& env, double epsilon, std::size_t count,
                                std::uint64_t seed, double return_gamma) {
  ScriptedPolicy policy(env, epsilon);
  std::vector<Trajectory> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Trajectory t = rollout(env, policy, derive_seed(seed, i), return_gamma);
    t.id = env.name() + "-" + std::to_string(seed) + "-" + std::to_string(i);
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace pnlc
