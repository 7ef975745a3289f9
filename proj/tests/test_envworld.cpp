#include <cmath>
#include <deque>
#include <map>
#include <set>

#include "doctest.h"
#include "pnlc/envworld.hpp"
#include "pnlc/error.hpp"

using namespace pnlc;

namespace {

// Shortest primitive-action path from the start state to success, by BFS.
std::size_t shortest_success(const KeyDoorEnv& env) {
  std::map<std::size_t, std::size_t> dist{{env.initial_state(), 0}};
  std::deque<std::size_t> frontier{env.initial_state()};
  while (!frontier.empty()) {
    const std::size_t s = frontier.front();
    frontier.pop_front();
    for (const auto& a : env.legal_actions()) {
      const StepResult r = env.step(EnvState{s, 0}, a);
      if (r.reward > 0.0) return dist[s] + 1;
      if (dist.emplace(r.next.id, dist[s] + 1).second) frontier.push_back(r.next.id);
    }
  }
  return 0;
}

}  // namespace

TEST_CASE("keydoor: step table examples") {
  KeyDoorEnv env;
  const auto s0 = env.encode({0, false, false});
  const StepResult r = env.step(EnvState{s0, 0}, "right");
  CHECK(r.next.id == env.encode({1, false, false}));
  CHECK(r.reward == 0.0);
  CHECK_FALSE(r.done);
  CHECK(r.observation == "pos=1 key=0 door=0");

  const StepResult open = env.step(EnvState{env.encode({4, true, false}), 3}, "interact");
  CHECK(open.next.id == env.encode({4, true, true}));
  CHECK(open.reward == 1.0);
  CHECK(open.done);
  CHECK(open.terminated);

  // The door stays shut without the key; interacting elsewhere does nothing.
  CHECK(env.step(EnvState{env.encode({4, false, false}), 0}, "interact").next.id == env.encode({4, false, false}));
  CHECK(env.step(EnvState{env.encode({1, false, false}), 0}, "interact").next.id == env.encode({1, true, false}));
  CHECK(env.step(EnvState{s0, 0}, "left").next.id == s0);
}

TEST_CASE("keydoor: illegal actions name the legal set") {
  KeyDoorEnv env;
  try {
    env.step(env.reset(), "jump");
    FAIL("expected InvalidArgument");
  } catch (const InvalidArgument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("left") != std::string::npos);
    CHECK(msg.find("right") != std::string::npos);
    CHECK(msg.find("interact") != std::string::npos);
  }
}

TEST_CASE("keydoor: horizon truncates without termination") {
  KeyDoorEnv env;
  const StepResult r = env.step(EnvState{env.initial_state(), 11}, "left");
  CHECK(r.done);
  CHECK_FALSE(r.terminated);
}

TEST_CASE("keydoor: N x 2 x 2 states with injective renderings") {
  for (std::size_t n : {2u, 5u, 9u}) {
    KeyDoorEnv env(n, 0);
    CHECK(env.num_states() == n * 4);
    std::set<std::string> seen;
    for (std::size_t s = 0; s < env.num_states(); ++s) {
      CHECK(seen.insert(env.render(s)).second);
      CHECK(env.state_from_render(env.render(s)) == s);
      CHECK(env.encode(env.decode(s)) == s);
    }
  }
}

TEST_CASE("donation: step table examples") {
  DonationEnv env;
  using M = DonationEnv::Mood;
  using T = DonationEnv::Tag;
  const EnvState start = env.reset();
  const StepResult r =
      env.step(start, "Look, I understand your doubts [address-skepticism] and they are fair.");
  CHECK(env.decode(r.next.id).first == M::kCurious);
  CHECK(r.observation == "donor=curious last=address-skepticism");

  CHECK(env.decode(env.step(start, "It buys clean water [impact]").next.id).first == M::kSkeptical);
  // untagged text counts as impact
  CHECK(env.decode(env.step(start, "please give").next.id).second == T::kImpact);
  const StepResult convinced = env.step(EnvState{env.encode(M::kCurious, T::kAddressSkepticism), 1},
                                        "We are audited yearly [credibility]");
  CHECK(env.decode(convinced.next.id).first == M::kConvinced);
  CHECK(convinced.done);
  CHECK(convinced.reward == 2.0);
  const StepResult repeat = env.step(EnvState{env.encode(M::kSkeptical, T::kImpact), 1}, "[impact] again");
  CHECK(env.decode(repeat.next.id).first == M::kAlienated);
  CHECK(repeat.reward == 0.0);
}

TEST_CASE("donation: final reward at the turn limit") {
  DonationEnv env;
  using M = DonationEnv::Mood;
  using T = DonationEnv::Tag;
  const StepResult curious = env.step(EnvState{env.encode(M::kCurious, T::kEmotional), 9}, "[impact]");
  CHECK(curious.done);
  CHECK_FALSE(curious.terminated);
  CHECK(curious.reward == 0.5);
  const StepResult skeptical = env.step(EnvState{env.encode(M::kSkeptical, T::kEmotional), 9}, "[impact]");
  CHECK(skeptical.reward == 0.0);
  CHECK(env.step(EnvState{env.encode(M::kCurious, T::kEmotional), 3}, "[impact]").reward == 0.0);
}

TEST_CASE("donation: tag parsing") {
  using T = DonationEnv::Tag;
  CHECK(DonationEnv::parse_tag("[emotional] then [credibility]") == T::kEmotional);
  CHECK(DonationEnv::parse_tag("[unknown] [credibility]") == T::kCredibility);
  CHECK(DonationEnv::parse_tag("no markers") == T::kImpact);
  CHECK(DonationEnv::parse_tag("[address-skepticism") == T::kImpact);
}

TEST_CASE("donation: empty utterances are refused with the legal set") {
  DonationEnv env;
  try {
    env.step(env.reset(), "  ");
    FAIL("expected InvalidArgument");
  } catch (const InvalidArgument& e) {
    CHECK(std::string(e.what()).find("[credibility]") != std::string::npos);
  }
}

TEST_CASE("donation: 20 states with injective renderings") {
  DonationEnv env;
  std::set<std::string> seen;
  for (std::size_t s = 0; s < env.num_states(); ++s) CHECK(seen.insert(env.render(s)).second);
  CHECK(seen.size() == 20);
}

TEST_CASE("rollout: the optimal KeyDoor policy succeeds on the shortest path") {
  KeyDoorEnv env;
  const std::size_t best = shortest_success(env);
  // right, interact (key), right x3, interact (door)
  CHECK(best == 6);
  const Trajectory t = rollout(env, ScriptedPolicy(env, 0.0), 1);
  CHECK(t.steps.size() == best + 1);
  CHECK(t.steps[best - 1].env_reward == 1.0);
  CHECK(t.final_return == doctest::Approx(std::pow(0.99, static_cast<double>(best - 1))));
  CHECK(t.task_meta.at("success") == "1");
  CHECK(t.task_meta.at(kOutcomeKey) == "terminated");

  for (std::size_t n = 3; n <= 8; ++n)
    for (std::size_t key = 0; key + 1 < n; ++key) {
      KeyDoorEnv e(n, key, 40);
      CHECK(rollout(e, ScriptedPolicy(e, 0.0), 3).steps.size() == shortest_success(e) + 1);
    }
}

TEST_CASE("rollout: the optimal Donation policy convinces in two turns") {
  DonationEnv env;
  const Trajectory t = rollout(env, ScriptedPolicy(env, 0.0), 1);
  CHECK(t.steps.size() == 3);
  CHECK(t.steps.back().raw_state == "donor=convinced last=none");
  CHECK(t.task_meta.at("success") == "1");
}

TEST_CASE("rollout: uniform KeyDoor play succeeds 1%-20% of the time") {
  KeyDoorEnv env;
  const ScriptedPolicy uniform(env, 1.0);
  std::size_t wins = 0;
  for (std::uint64_t seed = 0; seed < 10000; ++seed) wins += env.success(rollout(env, uniform, seed));
  const double rate = static_cast<double>(wins) / 10000.0;
  MESSAGE("uniform KeyDoor success rate " << rate);
  CHECK(rate >= 0.01);
  CHECK(rate <= 0.20);
}

TEST_CASE("rollout: deterministic per seed, rewards conserved") {
  for (const char* name : {"keydoor", "donation"}) {
    const auto env = make_environment(name);
    const ScriptedPolicy pol(*env, 0.5);
    CHECK(rollout(*env, pol, 42) == rollout(*env, pol, 42));
    for (const auto& t : collect(*env, 0.5, 300, 11)) {
      CHECK_NOTHROW(validate_trajectory(t, 0.99));
      CHECK(t.final_return == doctest::Approx(discounted_return(t, 0.99)).epsilon(1e-12));
      CHECK(t.steps.size() <= env->horizon() + 1);
      for (std::size_t i = 0; i + 1 < t.steps.size(); ++i) {
        CHECK(t.steps[i].raw_state == *t.steps[i].summary);
        CHECK(t.steps[i].observation == t.steps[i + 1].raw_state);
      }
    }
  }
}

TEST_CASE("collect: episode ids are unique and seeds independent") {
  const auto env = make_environment("keydoor");
  const auto a = collect(*env, 0.5, 50, 1);
  std::set<std::string> ids;
  for (const auto& t : a) CHECK(ids.insert(t.id).second);
  CHECK(a == collect(*env, 0.5, 50, 1));
  CHECK(a != collect(*env, 0.5, 50, 2));
}

TEST_CASE("scripted policy: rows sum to 1 and match sampling frequencies") {
  for (const char* name : {"keydoor", "donation"}) {
    const auto env = make_environment(name);
    for (double eps : {0.0, 0.3, 1.0}) {
      const ScriptedPolicy pol(*env, eps);
      const BehaviorPolicy table = pol.table();
      CHECK_NOTHROW(table.validate(env->to_mdp()));
      const std::size_t s = env->initial_state();
      std::map<std::string, std::size_t> counts;
      Rng rng(5);
      const std::size_t n = 40000;
      for (std::size_t i = 0; i < n; ++i) ++counts[pol.choose(s, rng)];
      const auto& catalog = env->thoughts();
      for (std::size_t a = 0; a < catalog.size(); ++a)
        CHECK(std::abs(static_cast<double>(counts[catalog[a]]) / n - table.probs[s][a]) < 0.01);
    }
  }
  const auto env = make_environment("keydoor");
  CHECK_THROWS_AS(ScriptedPolicy(*env, 1.5), InvalidArgument);
}

TEST_CASE("to_mdp: deterministic rows, absorbing terminal states") {
  for (const char* name : {"keydoor", "donation"}) {
    const auto env = make_environment(name);
    const TabularMDP m = env->to_mdp();
    CHECK_NOTHROW(m.validate());
    CHECK(m.num_states() == env->num_states());
    for (std::size_t s = 0; s < m.num_states(); ++s) {
      CHECK(m.terminal[s] == env->is_terminal(s));
      if (m.terminal[s])
        for (std::size_t a = 0; a < m.num_actions(); ++a) CHECK(m.transition[s][a][s] == 1.0);
    }
  }
}

TEST_CASE("make_environment: unknown names are refused") {
  CHECK_THROWS_AS(make_environment("chess"), InvalidArgument);
  CHECK_THROWS_AS(KeyDoorEnv(5, 4), InvalidArgument);
}

TEST_CASE("goal_suggestions: two distinct renderings of each polarity") {
  for (const char* name : {"keydoor", "donation"}) {
    const auto env = make_environment(name);
    for (std::size_t s = 0; s < env->num_states(); ++s)
      for (const auto& t : env->thoughts()) {
        const GoalSuggestions g = env->goal_suggestions(s, t);
        REQUIRE(g.positive.size() == 2);
        REQUIRE(g.negative.size() == 2);
        CHECK(g.positive[0] != g.positive[1]);
        CHECK(g.negative[0] != g.negative[1]);
        for (const auto* list : {&g.positive, &g.negative})
          for (const auto& r : *list) CHECK(env->render(env->state_from_render(r)) == r);
      }
  }
}
