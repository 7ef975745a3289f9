#include <fstream>
#include <set>

#include "doctest.h"
#include "json.hpp"
#include "pnlc/agent.hpp"
#include "pnlc/error.hpp"
#include "pnlc/evaluation.hpp"
#include "test_support.hpp"

using namespace pnlc;

namespace {

constexpr const char* kThoughtMarker = "propose the next thought";
constexpr const char* kGoalMarker = "propose a future";
constexpr const char* kRefineMarker = "determine whether or not";
constexpr const char* kActionMarker = "emit the environment action";
constexpr const char* kSelectMarker = "select the most promising";

ValueCheckpoint constant_checkpoint(const Embedder& emb, double bias, bool goal_conditioned = true) {
  ValueNetConfig cfg;
  cfg.d = emb.dim();
  cfg.hidden1 = cfg.hidden2 = 8;
  Rng rng(1);
  ValueCheckpoint c;
  c.config = cfg;
  c.q = zeros_like(make_mlp(3 * cfg.d, 8, 8, rng));
  c.v = zeros_like(make_mlp(2 * cfg.d, 8, 8, rng));
  c.q.layers.back().bias[0] = bias;
  c.q_target = c.q;
  c.v_target = c.v;
  c.q_opt = make_adam_state(c.q);
  c.v_opt = make_adam_state(c.v);
  c.embedder_fingerprint = emb.fingerprint();
  c.goal_conditioned = goal_conditioned;
  return c;
}

// Mock with fixed goals and actions; refinement and thought rules set per test.
MockProvider& base_rules(MockProvider& p) {
  p.on(kGoalMarker, "1. g1\n2. g2").on(kActionMarker, "interact").on(kSelectMarker, "2");
  return p;
}

struct Fixture {
  HashEmbedder emb{64};
  ValueCheckpoint ckpt = constant_checkpoint(emb, 0.5);
  CriticBundle critic{&ckpt, &emb, nullptr};
  PromptTemplates templates = PromptTemplates::defaults();
};

}  // namespace

TEST_CASE("fill_template replaces known keys and leaves the rest") {
  CHECK(fill_template("{a} and {b} and {a}", {{"a", "x"}}) == "x and {b} and x");
  CHECK(fill_template("{a}", {{"a", "{a}{a}"}}) == "{a}{a}");
}

TEST_CASE("PromptTemplates::load overrides only the files present") {
  test::TempDir dir("prompts");
  std::ofstream(dir / "action.txt") << "custom {state}";
  const PromptTemplates t = PromptTemplates::load(dir.path);
  CHECK(t.action == "custom {state}");
  CHECK(t.thought == PromptTemplates::defaults().thought);
  CHECK_THROWS_AS(PromptTemplates::load(dir / "missing"), InvalidArgument);
}

TEST_CASE("generate_thought trims and retries an empty reply once") {
  Fixture f;
  MockProvider p;
  p.on(kThoughtMarker, "  grab the key first \n");
  CHECK(generate_thought("pos=0 key=0 door=0", p, f.templates.thought) == "grab the key first");
  CHECK(p.prompts()[0].find("State: pos=0 key=0 door=0") != std::string::npos);

  MockProvider late;
  late.sequence(kThoughtMarker, {"  ", "go"});
  CHECK(generate_thought("s", late, f.templates.thought) == "go");
  CHECK(late.calls() == 2);

  MockProvider mute;
  mute.on(kThoughtMarker, "\n");
  CHECK_THROWS_AS(generate_thought("s", mute, f.templates.thought), ProviderError);
}

TEST_CASE("parse_refinement: the first marker wins, anything else keeps with a warning") {
  auto d = parse_refinement("KEEP");
  CHECK(d.verdict == Verdict::kKept);
  CHECK_FALSE(d.warning);
  d = parse_refinement("I would REVISE: grab the key first\nbecause ...");
  CHECK(d.verdict == Verdict::kRevised);
  CHECK(d.revised == "grab the key first");
  CHECK(parse_refinement("KEEP it. Do not REVISE: x").verdict == Verdict::kKept);
  CHECK(parse_refinement("REVISE: x, do not KEEP").verdict == Verdict::kRevised);
  d = parse_refinement("KEEPER of keys");
  CHECK(d.verdict == Verdict::kKept);
  CHECK(d.warning);
  d = parse_refinement("REVISE:   ");
  CHECK(d.verdict == Verdict::kKept);
  CHECK(d.warning);
  CHECK(parse_refinement("no idea").warning);
}

TEST_CASE("refine_loop: KEEP at once evaluates one thought") {
  Fixture f;
  MockProvider p;
  base_rules(p).on(kRefineMarker, "KEEP");
  const auto tr = refine_loop("s", "t0", f.critic, p, f.templates, {});
  REQUIRE(tr.iterations.size() == 1);
  CHECK(tr.final_thought == "t0");
  CHECK(tr.iterations[0].value.proposals.size() == 4);
  CHECK(p.calls() == 3);  // two goal lists and one refinement
  // The refinement prompt carries the rendered value.
  CHECK(p.prompts()[2].find(tr.iterations[0].value.rendered) != std::string::npos);
}

TEST_CASE("refine_loop: REVISE then KEEP adopts the revision") {
  Fixture f;
  MockProvider p;
  base_rules(p).sequence(kRefineMarker, {"REVISE: t1", "KEEP"});
  const auto tr = refine_loop("s", "t0", f.critic, p, f.templates, {});
  REQUIRE(tr.iterations.size() == 2);
  CHECK(tr.iterations[0].verdict == Verdict::kRevised);
  CHECK(tr.iterations[1].thought == "t1");
  CHECK(tr.iterations[1].verdict == Verdict::kKept);
  CHECK(tr.final_thought == "t1");
  CHECK(p.calls() == 6);
}

TEST_CASE("refine_loop: always REVISE stops at m and adopts the last revision") {
  Fixture f;
  for (std::size_t m : {1u, 2u, 4u}) {
    MockProvider p;
    int k = 0;
    base_rules(p).on(kRefineMarker, [&k](const std::string&) { return "REVISE: r" + std::to_string(++k); });
    const auto tr = refine_loop("s", "t0", f.critic, p, f.templates, {m, 4, CriticMode::kGoals});
    CHECK(tr.iterations.size() == m);
    CHECK(tr.final_thought == "r" + std::to_string(m));
    CHECK(p.calls() == 3 * m);
  }
}

TEST_CASE("refine_loop: the scalar critic spends one call per iteration") {
  HashEmbedder emb(64);
  const ValueCheckpoint c = constant_checkpoint(emb, 0.2, false);
  MockProvider p;
  base_rules(p).sequence(kRefineMarker, {"REVISE: t1", "KEEP"});
  const auto tr = refine_loop("s", "t0", {&c, &emb, nullptr}, p, PromptTemplates::defaults(),
                              {2, 4, CriticMode::kScalar});
  CHECK(tr.iterations.size() == 2);
  CHECK(tr.iterations[0].value.scalar);
  CHECK(p.calls() == 2);
}

TEST_CASE("refine_loop: bad settings are refused") {
  Fixture f;
  MockProvider p;
  CHECK_THROWS_AS(refine_loop("s", "t", f.critic, p, f.templates, {0, 4, CriticMode::kGoals}), InvalidArgument);
  CHECK_THROWS_AS(refine_loop("s", "t", f.critic, p, f.templates, {2, 3, CriticMode::kGoals}), InvalidArgument);
}

TEST_CASE("parse_selection reads the first integer as a 1-based option") {
  CHECK(parse_selection("the best is option 2.", 3) == std::optional<std::size_t>(1));
  CHECK(parse_selection("1", 2) == std::optional<std::size_t>(0));
  CHECK_FALSE(parse_selection("option 7", 3).has_value());
  CHECK_FALSE(parse_selection("option 0", 3).has_value());
  CHECK_FALSE(parse_selection("none of them", 3).has_value());
  CHECK_FALSE(parse_selection("99999999999999999999", 3).has_value());
}

TEST_CASE("best_of_n_mode: scores each candidate and follows the selection") {
  Fixture f;
  MockProvider p;
  int k = 0;
  base_rules(p).on(kThoughtMarker, [&k](const std::string&) { return "idea " + std::to_string(++k); });
  const auto r = best_of_n_mode("s", p, f.critic, f.templates, 2, 4);
  CHECK(r.candidates == std::vector<std::string>{"idea 1", "idea 2"});
  CHECK(r.values.size() == 2);
  CHECK(r.selected == 1);
  CHECK(r.thought == "idea 2");
  CHECK_FALSE(r.warning);
  CHECK(p.calls() == 2 + 2 * 2 + 1);
  // The thought prompt numbers each candidate.
  CHECK(p.prompts()[1].find("Candidate: 2") != std::string::npos);
}

TEST_CASE("best_of_n_mode: duplicates collapse and an unreadable pick falls back to the first") {
  Fixture f;
  MockProvider p;
  p.on(kGoalMarker, "1. g1\n2. g2").on(kThoughtMarker, "same").on(kSelectMarker, "hmm");
  const auto r = best_of_n_mode("s", p, f.critic, f.templates, 3, 2);
  CHECK(r.candidates.size() == 1);
  CHECK(r.selected == 0);
  CHECK(r.warning);
  CHECK_THROWS_AS(best_of_n_mode("s", p, f.critic, f.templates, 1, 2), InvalidArgument);
}

TEST_CASE("agent_step: call budget per mode") {
  Fixture f;
  {
    MockProvider p;
    int k = 0;
    base_rules(p).on(kThoughtMarker, "t").on(kRefineMarker, [&k](const std::string&) {
      return "REVISE: u" + std::to_string(++k);
    });
    const StepRecord r = agent_step("s", 0, p, f.critic, f.templates, AgentConfig{});
    CHECK(r.provider_calls == 8);
    // the revision adopted at the cap is recorded though never evaluated
    CHECK(r.thoughts == std::vector<std::string>{"t", "u1", "u2"});
    CHECK(r.values.size() == 2);
    CHECK(r.verdicts == std::vector<std::string>{"revised", "revised"});
    CHECK(r.action == "interact");
  }
  {
    MockProvider p;
    base_rules(p).on(kThoughtMarker, "t").on(kRefineMarker, "KEEP");
    CHECK(agent_step("s", 0, p, f.critic, f.templates, AgentConfig{}).provider_calls == 5);
  }
  {
    MockProvider p;
    base_rules(p).on(kThoughtMarker, "t");
    AgentConfig off;
    off.critic = CriticMode::kOff;
    const StepRecord r = agent_step("s", 0, p, f.critic, f.templates, off);
    CHECK(r.provider_calls == 2);
    CHECK(r.values.empty());
  }
}

TEST_CASE("transcript_line has the documented fields") {
  StepRecord r;
  r.step = 3;
  r.thoughts = {"a"};
  r.action = "left";
  r.reward = 1.0;
  const auto j = nlohmann::json::parse(transcript_line(r));
  for (const char* k : {"step", "thoughts", "values", "verdicts", "action", "observation", "reward"})
    CHECK(j.contains(k));
  CHECK(j["step"] == 3);
  CHECK(j["action"] == "left");
}

TEST_CASE("synthetic mock: prompt fields and refinement rule") {
  const auto env = make_environment("keydoor");
  const SyntheticMockProvider p(*env, 1);
  CHECK(prompt_field("a\nState: pos=0 key=0 door=0 \nThought: x", "State:") ==
        std::optional<std::string>("pos=0 key=0 door=0"));
  CHECK_FALSE(prompt_field("nothing", "State:").has_value());
  const std::string tmpl = PromptTemplates::defaults().refinement;
  const std::string doubtful = fill_template(
      tmpl, {{"state", "pos=0 key=0 door=0"}, {"thought", KeyDoorEnv::kRushDoor},
             {"value", "[+] 0.20 \xE2\x80\x94 a\n[-] 0.70 \xE2\x80\x94 b\n"}});
  CHECK(p.respond(doubtful).rfind("REVISE: ", 0) == 0);
  const std::string fine = fill_template(
      tmpl, {{"state", "pos=0 key=0 door=0"}, {"thought", KeyDoorEnv::kGrabKey},
             {"value", "[+] 0.80 \xE2\x80\x94 a\n[-] 0.10 \xE2\x80\x94 b\n"}});
  CHECK(p.respond(fine) == "KEEP");
  CHECK_THROWS(p.respond("hello"));
}

TEST_CASE("evaluate_agent: aggregates match the written transcripts") {
  Fixture f;
  const auto env = make_environment("keydoor");
  test::TempDir dir("transcripts");
  const ProviderFactory factory = [&](std::uint64_t seed) {
    return std::make_unique<SyntheticMockProvider>(*env, seed);
  };
  const EvalReport r = evaluate_agent(*env, AgentConfig{}, 12, 7, factory, f.critic, f.templates, dir.path);
  REQUIRE(r.episode_paths.size() == 12);

  std::size_t steps = 0, calls = 0, max_calls = 0, wins = 0;
  for (std::size_t i = 0; i < r.episode_paths.size(); ++i) {
    std::ifstream in(r.episode_paths[i]);
    std::string line;
    double reward = 0.0;
    while (std::getline(in, line)) {
      const auto j = nlohmann::json::parse(line);
      ++steps;
      const std::size_t c = j["provider_calls"];
      calls += c;
      max_calls = std::max(max_calls, c);
      reward += j["reward"].get<double>();
    }
    wins += reward > 0.0 ? 1 : 0;
    CHECK(r.episodes[i].success == (reward > 0.0));
    CHECK_NOTHROW(validate_trajectory(r.episodes[i].trajectory, 0.99));
  }
  CHECK(r.metrics.episodes == 12);
  CHECK(r.metrics.mean_steps == doctest::Approx(steps / 12.0));
  CHECK(r.metrics.mean_calls_per_step == doctest::Approx(static_cast<double>(calls) / steps));
  CHECK(r.metrics.max_calls_per_step == max_calls);
  CHECK(max_calls <= 8);
  CHECK(r.metrics.success_rate == doctest::Approx(wins / 12.0));
  CHECK(aggregate(r.episodes).mean_calls_per_step == r.metrics.mean_calls_per_step);

  // Same seed, same episodes, whatever the worker count.
  const EvalReport again = evaluate_agent(*env, AgentConfig{}, 12, 7, factory, f.critic, f.templates,
                                          std::nullopt, 3);
  for (std::size_t i = 0; i < 12; ++i) CHECK(again.episodes[i].trajectory == r.episodes[i].trajectory);
  CHECK_THROWS_AS(evaluate_agent(*env, AgentConfig{}, 0, 7, factory, f.critic, f.templates), InvalidArgument);
}

TEST_CASE("aggregate of nothing is all zeros") {
  const EvalMetrics m = aggregate({});
  CHECK(m.episodes == 0);
  CHECK(m.success_rate == 0.0);
}

TEST_CASE("simulate_best_of_n spends at least one call per candidate step") {
  const auto env = make_environment("keydoor");
  SyntheticMockProvider p(*env, 3);
  const auto templates = PromptTemplates::defaults();
  for (std::size_t n : {2u, 4u}) {
    p.reset_counters();
    const SearchCost c = simulate_best_of_n(*env, env->reset(), p, templates, n, 3);
    CHECK(c.calls >= n);
    CHECK(c.calls <= 2 * n * 3);
    CHECK_FALSE(c.chosen.empty());
  }
}
