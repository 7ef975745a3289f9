#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "pnlc/critic.hpp"
#include "pnlc/envworld.hpp"
#include "pnlc/error.hpp"
#include "pnlc/pipeline.hpp"
#include "test_support.hpp"

using namespace pnlc;

namespace {

const std::string kTemplate = "State: {state}\nThought: {thought}\nList {count} {polarity} goals.";

// Checkpoint whose networks are all zero except the Q output bias.
ValueCheckpoint constant_checkpoint(const Embedder& emb, double bias) {
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
  return c;
}

ValueCheckpoint random_checkpoint(const Embedder& emb, std::uint64_t seed) {
  ValueCheckpoint c = constant_checkpoint(emb, 0.0);
  Rng rng(seed);
  c.q = make_mlp(3 * emb.dim(), 8, 8, rng);
  for (auto& l : c.q.layers)
    for (double& b : l.bias) b = rng.uniform(0.0, 0.5);
  return c;
}

std::vector<GoalText> four_goals() {
  return {{"pos=4 key=1 door=1", Polarity::kPositive},
          {"pos=1 key=1 door=0", Polarity::kPositive},
          {"pos=4 key=0 door=0", Polarity::kNegative},
          {"pos=0 key=0 door=0", Polarity::kNegative}};
}

}  // namespace

TEST_CASE("parse_numbered: markers inline and on separate lines") {
  CHECK(parse_numbered("1. G1\n2. G2", 2) == std::vector<std::string>{"G1", "G2"});
  CHECK(parse_numbered("intro 1. a b 2. c", 5) == std::vector<std::string>{"a b", "c"});
  CHECK(parse_numbered("1. x\n2. y\n3. z", 2).size() == 2);
  CHECK(parse_numbered("version 3.5 only", 2).empty());
  CHECK(parse_numbered("2. starts late", 2).empty());
}

TEST_CASE("fill_goal_prompt substitutes every placeholder") {
  CHECK(fill_goal_prompt(kTemplate, "S", "T", Polarity::kNegative, 3) ==
        "State: S\nThought: T\nList 3 negative goals.");
  CHECK(fill_goal_prompt("{state}{state}", "{state}", "", Polarity::kPositive, 1) == "{state}{state}");
}

TEST_CASE("propose_goals: n = 4 asks once per polarity, positives first") {
  MockProvider p;
  p.fallback([](const std::string&) { return "1. G1\n2. G2"; });
  const auto goals = propose_goals("s", "t", p, 4, kTemplate);
  const std::vector<GoalText> want = {{"G1", Polarity::kPositive},
                                      {"G2", Polarity::kPositive},
                                      {"G1", Polarity::kNegative},
                                      {"G2", Polarity::kNegative}};
  CHECK(goals == want);
  CHECK(p.calls() == 2);
  REQUIRE(p.prompts().size() == 2);
  CHECK(p.prompts()[0].find("positive") != std::string::npos);
  CHECK(p.prompts()[1].find("negative") != std::string::npos);
}

TEST_CASE("propose_goals: n = 2 yields one goal of each polarity") {
  MockProvider p;
  p.on("positive", "1. up").on("negative", "1. down");
  const auto goals = propose_goals("s", "t", p, 2, kTemplate);
  CHECK(goals == std::vector<GoalText>{{"up", Polarity::kPositive}, {"down", Polarity::kNegative}});
}

TEST_CASE("propose_goals: prose around the list is tolerated") {
  MockProvider p;
  p.fallback([](const std::string&) { return test::slurp(test::fixture("goals_prose.txt")); });
  const auto goals = propose_goals("s", "t", p, 4, kTemplate);
  REQUIRE(goals.size() == 4);
  CHECK(goals[0].first == "pos=4 key=1 door=1");
  CHECK(goals[1].first == "pos=1 key=1 door=0");
  CHECK(p.calls() == 2);
}

TEST_CASE("propose_goals: a short answer is re-prompted once") {
  MockProvider p;
  p.sequence("positive", {"only 1. one", "1. a\n2. b"}).on("negative", "1. c\n2. d");
  const auto goals = propose_goals("s", "t", p, 4, kTemplate);
  CHECK(goals.size() == 4);
  CHECK(p.calls() == 3);
  CHECK(p.prompts()[1].find("Answer with exactly 2 numbered goals") != std::string::npos);
}

TEST_CASE("propose_goals: a second short answer fails with the raw response") {
  MockProvider p;
  p.fallback([](const std::string&) { return "I cannot help with that"; });
  try {
    propose_goals("s", "t", p, 4, kTemplate);
    FAIL("expected ProviderError");
  } catch (const ProviderError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("raw response:") != std::string::npos);
    CHECK(msg.find("I cannot help with that") != std::string::npos);
  }
  CHECK(p.calls() == 2);
}

TEST_CASE("propose_goals: odd or tiny n is refused") {
  MockProvider p;
  CHECK_THROWS_AS(propose_goals("s", "t", p, 3, kTemplate), InvalidArgument);
  CHECK_THROWS_AS(propose_goals("s", "t", p, 0, kTemplate), InvalidArgument);
  CHECK(p.calls() == 0);
}

TEST_CASE("format_likelihood: clamp then round half up") {
  CHECK(format_likelihood(0.4) == "0.40");
  CHECK(format_likelihood(1.0000001) == "1.00");
  CHECK(format_likelihood(-0.2) == "0.00");
  CHECK(format_likelihood(0.125) == "0.13");
  CHECK(format_likelihood(0.994) == "0.99");
  CHECK(format_likelihood(0.995) == "1.00");
  CHECK(format_likelihood(std::nan("")) == "0.00");
}

TEST_CASE("render and canonicalize: positives first, each block descending") {
  NaturalLanguageValue v;
  auto add = [&](const std::string& t, Polarity pol, double l) {
    GoalProposal g;
    g.text = t;
    g.polarity = pol;
    g.likelihood = l;
    v.proposals.push_back(g);
  };
  add("trapped", Polarity::kNegative, 0.2);
  add("door opened", Polarity::kPositive, 0.4);
  add("lost", Polarity::kNegative, 0.7);
  add("key in hand", Polarity::kPositive, 0.9);
  canonicalize(v);
  CHECK(v.rendered ==
        "[+] 0.90 \xE2\x80\x94 key in hand\n"
        "[+] 0.40 \xE2\x80\x94 door opened\n"
        "[-] 0.70 \xE2\x80\x94 lost\n"
        "[-] 0.20 \xE2\x80\x94 trapped\n");
}

TEST_CASE("evaluate: a zero-weight network scores every goal at the clamped bias") {
  HashEmbedder emb(64);
  for (double bias : {0.4, 1.7, -0.3}) {
    const ValueCheckpoint c = constant_checkpoint(emb, bias);
    const NaturalLanguageValue v = evaluate({&c, &emb, nullptr}, "pos=0 key=0 door=0", "rush the door",
                                            four_goals());
    REQUIRE(v.proposals.size() == 4);
    for (const auto& p : v.proposals) CHECK(p.likelihood == std::clamp(bias, 0.0, 1.0));
    CHECK(v.rendered == render(v));
  }
}

TEST_CASE("evaluate: goal order does not change the rendering") {
  HashEmbedder emb(64);
  const ValueCheckpoint c = random_checkpoint(emb, 17);
  auto goals = four_goals();
  const std::string first = evaluate({&c, &emb, nullptr}, "pos=2 key=1 door=0", "rush the door", goals).rendered;
  std::sort(goals.begin(), goals.end());
  do {
    CHECK(evaluate({&c, &emb, nullptr}, "pos=2 key=1 door=0", "rush the door", goals).rendered == first);
  } while (std::next_permutation(goals.begin(), goals.end()));
}

TEST_CASE("evaluate: likelihoods equal the clamped q_value and use embeddings only") {
  HashEmbedder emb(64);
  EmbeddingCache cache(emb.fingerprint());
  const ValueCheckpoint c = random_checkpoint(emb, 5);
  MockProvider unused;
  const NaturalLanguageValue v = evaluate({&c, &emb, &cache}, "s", "t", four_goals());
  for (const auto& p : v.proposals) {
    const double q = q_value(c, hash_embed("s", 64), hash_embed("t", 64), hash_embed(p.text, 64));
    CHECK(p.likelihood == std::clamp(q, 0.0, 1.0));
    CHECK(p.embedding.values == hash_embed(p.text, 64).values);
  }
  CHECK(unused.calls() == 0);
  CHECK(cache.size() == 6);
}

TEST_CASE("evaluate: empty goals and mismatched embedders are refused") {
  HashEmbedder emb(64);
  const ValueCheckpoint c = constant_checkpoint(emb, 0.5);
  CHECK_THROWS_AS(evaluate({&c, &emb, nullptr}, "s", "t", {{"", Polarity::kPositive}}), InvalidArgument);
  HashEmbedder other(128);
  CHECK_THROWS_AS(evaluate({&c, &other, nullptr}, "s", "t", four_goals()), InvalidArgument);
  CHECK_THROWS_AS(evaluate({nullptr, &emb, nullptr}, "s", "t", four_goals()), InvalidArgument);
}

TEST_CASE("evaluate_scalar renders one success estimate") {
  HashEmbedder emb(64);
  ValueCheckpoint c = constant_checkpoint(emb, 0.83);
  c.goal_conditioned = false;
  const NaturalLanguageValue v = evaluate_scalar({&c, &emb, nullptr}, "s", "t");
  CHECK(v.scalar);
  CHECK(v.rendered == "[=] 0.83 \xE2\x80\x94 estimated chance of success\n");
}

TEST_CASE("trained KeyDoor critic: rushing the door without the key looks bad") {
  RunConfig cfg;
  cfg.preset = "avalon";
  cfg.gamma = 0.9;
  const auto env = make_environment("keydoor");
  const auto trajs = collect(*env, 0.5, 300, 1);
  const auto emb = make_embedder(cfg);
  const TrainResult r = train_from_trajectories(trajs, cfg, *emb, nullptr);

  // The exact values under the data policy are 1.0 for the negative goal
  // and 0.37 for the positive one from this state.
  const NaturalLanguageValue v =
      evaluate({&r.checkpoint, emb.get(), nullptr}, "pos=3 key=0 door=0", KeyDoorEnv::kRushDoor,
               {{"pos=4 key=1 door=1", Polarity::kPositive}, {"pos=4 key=0 door=0", Polarity::kNegative}});
  MESSAGE(v.rendered);
  REQUIRE(v.proposals.size() == 2);
  const double pos = v.proposals[0].likelihood;
  const double neg = v.proposals[1].likelihood;
  CHECK(neg > 0.5);
  CHECK(neg - pos > 0.2);
}
