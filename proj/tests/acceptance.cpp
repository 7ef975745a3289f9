// Acceptance run: one PASS/FAIL line per criterion; exit status 1 if any fail.
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "pnlc/agent.hpp"
#include "pnlc/cli.hpp"
#include "pnlc/evaluation.hpp"
#include "pnlc/pipeline.hpp"

using namespace pnlc;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double x, int prec = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(prec) << x;
  return s.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// --- 1 -----------------------------------------------------------------------

Outcome expectile_math() {
  Rng rng(1);
  double worst_mean = 0.0;
  bool monotone = true;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t k = 1 + rng.below(12);
    std::vector<double> x(k), w(k);
    double sw = 0.0, swx = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      x[j] = rng.uniform(-3.0, 3.0);
      w[j] = rng.uniform(0.01, 1.0);
      sw += w[j];
      swx += w[j] * x[j];
    }
    worst_mean = std::max(worst_mean, std::abs(discrete_expectile(x, w, 0.5) - swx / sw));
    double prev = -1e300;
    for (double tau : {0.1, 0.3, 0.5, 0.7, 0.8, 0.9, 0.99}) {
      const double e = discrete_expectile(x, w, tau);
      if (e < prev - 1e-12) monotone = false;
      prev = e;
    }
  }
  // |tau - 1[u<0]| u^2
  const bool units = expectile_loss(1.0, 0.8) == 0.8 && expectile_loss(-1.0, 0.8) == 0.19999999999999996 &&
                     expectile_loss(2.0, 0.8) == 0.8 * 4.0 && expectile_loss(0.0, 0.8) == 0.0 &&
                     expectile_loss(-2.0, 0.5) == 2.0;
  return {worst_mean <= 1e-10 && monotone && units,
          "max |expectile(0.5) - mean| " + std::to_string(worst_mean) + ", monotone " +
              (monotone ? "yes" : "no") + ", unit values " + (units ? "exact" : "differ")};
}

// --- 2 -----------------------------------------------------------------------

Outcome gradient_fidelity() {
  using namespace kernels;
  double worst = 0.0;
  std::size_t accepted = 0, redrawn = 0;
  for (std::uint64_t draw = 0; accepted < 100; ++draw) {
    Rng rng(5000 + draw);
    const std::size_t d = 8, B = 4;
    const bool q_net = draw % 2 == 0;  // L_Q: squared error, L_V: expectile
    const std::size_t in = (q_net ? 3 : 2) * d;
    MlpParams p = make_mlp(in, 16, 16, rng);
    for (auto& l : p.layers)
      for (double& b : l.bias) b = rng.uniform(-0.2, 0.2);
    Matrix x(B, in);
    for (double& v : x.data) v = rng.uniform(-1.0, 1.0);
    std::vector<double> target(B);
    for (double& t : target) t = rng.uniform(-1.0, 2.0);
    const double tau = 0.8;
    ForwardCache cache;
    forward_batch(p, x, cache, KernelMode::kSerial);
    bool kink = false;
    for (std::size_t li = 0; li + 1 < p.layers.size(); ++li)
      for (double z : cache.pre[li].data) kink = kink || std::abs(z) < 1e-3;
    for (std::size_t r = 0; r < B; ++r) kink = kink || std::abs(target[r] - cache.output[r]) < 1e-3;
    if (kink) {
      ++redrawn;
      continue;
    }
    ++accepted;
    auto loss = [&](const MlpParams& params) {
      double s = 0.0;
      for (std::size_t r = 0; r < B; ++r) {
        const double y = forward(params, std::span<const double>(x.row(r), in));
        s += q_net ? (y - target[r]) * (y - target[r]) : expectile_loss(target[r] - y, tau);
      }
      return s / static_cast<double>(B);
    };
    std::vector<double> dy(B);
    for (std::size_t r = 0; r < B; ++r)
      dy[r] = q_net ? 2.0 * (cache.output[r] - target[r]) / B
                    : -expectile_loss_grad(target[r] - cache.output[r], tau) / B;
    MlpParams g;
    backward_batch(p, cache, dy, g, KernelMode::kSerial);
    const double h = 1e-5;
    for (std::size_t li = 0; li < p.layers.size(); ++li) {
      auto check = [&](std::vector<double>& a, const std::vector<double>& ga) {
        for (std::size_t i = 0; i < a.size(); ++i) {
          const double saved = a[i];
          a[i] = saved + h;
          const double up = loss(p);
          a[i] = saved - h;
          const double down = loss(p);
          a[i] = saved;
          const double fd = (up - down) / (2 * h);
          worst = std::max(worst, std::abs(fd - ga[i]) / std::max({std::abs(fd), std::abs(ga[i]), 1e-6}));
        }
      };
      check(p.layers[li].weights, g.layers[li].weights);
      check(p.layers[li].bias, g.layers[li].bias);
    }
  }
  return {worst < 1e-4, "max relative error " + std::to_string(worst) + " over 100 draws (" +
                            std::to_string(redrawn) + " near-kink draws redrawn)"};
}

// --- 3 -----------------------------------------------------------------------

Outcome oracle_equivalence() {
  RunConfig cfg;  // default preset: tau 0.8, gamma 0.99, batch 32, 50 x 100 updates
  const auto env = make_environment("keydoor");
  const auto trajs = collect(*env, 0.5, 2000, cfg.seed);
  const auto embedder = make_embedder(cfg);
  EmbeddingCache cache(embedder->fingerprint());
  const TrainResult r = train_from_trajectories(trajs, cfg, *embedder, &cache);
  const auto v = cfg.value_config();
  const EmpiricalTables emp = empirical_fixed_point(training_samples(trajs, cfg), v.tau, v.gamma);
  const OracleComparison c = compare_empirical(r.checkpoint, emp, *embedder, &cache);
  return {c.mae <= 0.05 && c.max_abs <= 0.15,
          std::to_string(c.triples) + " triples, mean abs error " + fmt(c.mae) + " (<= 0.05), max " +
              fmt(c.max_abs) + " (<= 0.15) at " + c.worst + " oracle " + fmt(c.worst_oracle) + " model " +
              fmt(c.worst_model)};
}

// --- 4 -----------------------------------------------------------------------

// Corridor rooms 0..5 walked forward with one thought; every episode ends at
// room 5. Goals behind the walker are never reached.
std::vector<Trajectory> corridor_data() {
  std::vector<Trajectory> out;
  for (int rep = 0; rep < 40; ++rep)
    for (int start = 0; start < 5; ++start) {
      Trajectory t;
      t.id = "corridor-" + std::to_string(rep) + "-" + std::to_string(start);
      t.task_meta[kOutcomeKey] = "terminated";
      for (int i = start; i <= 5; ++i) {
        Step s;
        s.raw_state = "room=" + std::to_string(i);
        s.summary = s.raw_state;
        if (i < 5) {
          s.thought = "walk forward";
          s.env_action = "forward";
          s.observation = "room=" + std::to_string(i + 1);
          s.env_reward = i + 1 == 5 ? 1.0 : 0.0;
        }
        t.steps.push_back(s);
      }
      t.final_return = discounted_return(t, 0.99);
      out.push_back(std::move(t));
    }
  return out;
}

Outcome reach_semantics() {
  RunConfig cfg;
  const auto trajs = corridor_data();
  const auto embedder = make_embedder(cfg);
  const TrainResult r = train_from_trajectories(trajs, cfg, *embedder, nullptr);
  const double gamma = cfg.value_config().gamma;
  auto q = [&](int s, int g) {
    return q_value(r.checkpoint, hash_embed("room=" + std::to_string(s), cfg.d),
                   hash_embed("walk forward", cfg.d), hash_embed("room=" + std::to_string(g), cfg.d));
  };
  double reach_err = 0.0, unreach = 0.0;
  for (int s = 0; s < 5; ++s) {
    for (int k = 1; k <= 3 && s + k <= 5; ++k)
      reach_err = std::max(reach_err, std::abs(q(s, s + k) - std::pow(gamma, k - 1)));
    for (int g = 0; g <= s; ++g) unreach = std::max(unreach, std::abs(q(s, g)));
  }
  return {reach_err <= 0.02 && unreach <= 0.05,
          "max |Q - gamma^(k-1)| " + fmt(reach_err) + " for k = 1..3 (<= 0.02), max |Q| unreachable " +
              fmt(unreach) + " (<= 0.05)"};
}

// --- 5 -----------------------------------------------------------------------

int cli(const std::vector<std::string>& args) {
  std::istringstream in;
  std::ostringstream out, err;
  const int code = cli::run(args, in, out, err);
  if (code != 0) std::cerr << err.str();
  return code;
}

Outcome determinism(const fs::path& work) {
  const std::string data = (work / "det.jsonl").string(), ckpt = (work / "det.ckpt").string();
  std::string first_data, first_ckpt, first_metrics;
  for (int run = 0; run < 2; ++run) {
    if (cli({"collect", "--episodes", "500", "--seed", "11", "--out", data}) != 0 ||
        cli({"train", "--data", data, "--seed", "11", "--iterations", "20", "--out", ckpt}) != 0)
      return {false, "pipeline failed"};
    if (run == 0) {
      first_data = slurp(data);
      first_ckpt = slurp(ckpt);
      first_metrics = slurp(ckpt + ".metrics.csv");
    }
  }
  const bool same_data = slurp(data) == first_data, same_ckpt = slurp(ckpt) == first_ckpt,
             same_metrics = slurp(ckpt + ".metrics.csv") == first_metrics;
  return {same_data && same_ckpt && same_metrics,
          std::string("dataset ") + (same_data ? "identical" : "differs") + ", checkpoint " +
              (same_ckpt ? "identical" : "differs") + " (" + std::to_string(first_ckpt.size()) +
              " bytes), metrics " + (same_metrics ? "identical" : "differ")};
}

// --- 6 to 9 ------------------------------------------------------------------

// Critic checkpoint for an environment: avalon preset at gamma 0.9.
struct Critic {
  RunConfig cfg;
  std::unique_ptr<Embedder> embedder;
  std::unique_ptr<EmbeddingCache> cache;
  ValueCheckpoint ckpt;
  CriticBundle bundle() { return {&ckpt, embedder.get(), cache.get()}; }
};

Critic train_critic(const std::string& env_name, const std::string& critic_mode) {
  Critic c;
  c.cfg.env = env_name;
  c.cfg.preset = "avalon";
  c.cfg.gamma = 0.9;
  c.cfg.critic = critic_mode;
  const auto env = make_environment(env_name);
  const auto trajs = collect(*env, 0.5, env_name == "donation" ? 2500 : 2000, c.cfg.seed);
  c.embedder = make_embedder(c.cfg);
  c.cache = std::make_unique<EmbeddingCache>(c.embedder->fingerprint());
  c.ckpt = train_from_trajectories(trajs, c.cfg, *c.embedder, c.cache.get()).checkpoint;
  return c;
}

EvalMetrics play(const Environment& env, const AgentConfig& agent, const CriticBundle& critic,
                 std::size_t episodes = 200) {
  const ProviderFactory factory = [&env](std::uint64_t s) {
    return std::make_unique<SyntheticMockProvider>(env, s);
  };
  return evaluate_agent(env, agent, episodes, 2024, factory, critic, PromptTemplates::defaults())
      .metrics;
}

AgentConfig baseline() {
  AgentConfig a;
  a.critic = CriticMode::kOff;
  a.m = 1;
  return a;
}

AgentConfig pnlc_agent() {
  AgentConfig a;
  a.m = 2;
  a.n = 4;
  return a;
}

EvalMetrics g_keydoor_pnlc;  // shared with the call-budget criterion

Outcome critic_benefit_keydoor(Critic& critic) {
  const auto env = make_environment("keydoor");
  const EvalMetrics base = play(*env, baseline(), {});
  g_keydoor_pnlc = play(*env, pnlc_agent(), critic.bundle());
  const double gap = g_keydoor_pnlc.success_rate - base.success_rate;
  return {base.success_rate < 0.45 && g_keydoor_pnlc.success_rate > 0.80 && gap >= 0.20,
          "baseline success " + fmt(base.success_rate, 3) + " (< 0.45), PNLC " +
              fmt(g_keydoor_pnlc.success_rate, 3) + " (> 0.80), gap " + fmt(100 * gap, 1) +
              " points (>= 20)"};
}

Outcome critic_benefit_donation() {
  Critic critic = train_critic("donation", "goals");
  const auto env = make_environment("donation");
  const EvalMetrics base = play(*env, baseline(), {});
  const EvalMetrics pnlc = play(*env, pnlc_agent(), critic.bundle());
  const double lift = pnlc.mean_final_reward - base.mean_final_reward;
  return {lift >= 0.3, "mean final reward baseline " + fmt(base.mean_final_reward, 3) + ", PNLC " +
                           fmt(pnlc.mean_final_reward, 3) + ", lift " + fmt(lift, 3) + " (>= 0.3)"};
}

Outcome call_budget() {
  const auto env = make_environment("keydoor");
  SyntheticMockProvider provider(*env, 9);
  const std::size_t n = 4;
  const SearchCost naive =
      simulate_best_of_n(*env, env->reset(), provider, PromptTemplates::defaults(), n, env->horizon());
  const bool pass = g_keydoor_pnlc.episodes > 0 && g_keydoor_pnlc.max_calls_per_step <= 8 && naive.calls >= n;
  return {pass, "PNLC n=4 m=2: max " + std::to_string(g_keydoor_pnlc.max_calls_per_step) +
                    " calls/step (<= 8), mean " + fmt(g_keydoor_pnlc.mean_calls_per_step, 2) +
                    "; naive best-of-" + std::to_string(n) + " simulation: " + std::to_string(naive.calls) +
                    " calls for one decision (>= " + std::to_string(n) + ")"};
}

Outcome ablations(Critic& goals_critic) {
  const auto env = make_environment("keydoor");
  Critic scalar = train_critic("keydoor", "scalar");
  AgentConfig no_goals = pnlc_agent();
  no_goals.critic = CriticMode::kScalar;
  const EvalMetrics a = play(*env, no_goals, scalar.bundle(), 50);
  AgentConfig no_refine = pnlc_agent();
  no_refine.best_of_n = true;
  const EvalMetrics b = play(*env, no_refine, goals_critic.bundle(), 50);
  const bool pass = a.episodes == 50 && b.episodes == 50 && std::isfinite(a.success_rate) &&
                    std::isfinite(b.success_rate);
  return {pass, "w/o goals: success " + fmt(a.success_rate, 3) + ", calls/step " +
                    fmt(a.mean_calls_per_step, 2) + "; w/o refinement (best-of-n): success " +
                    fmt(b.success_rate, 3) + ", calls/step " + fmt(b.mean_calls_per_step, 2)};
}

}  // namespace

int main() {
  const fs::path work = fs::temp_directory_path() / "pnlc-acceptance";
  fs::remove_all(work);
  fs::create_directories(work);

  int failures = 0;
  auto report = [&](int id, const char* name, const std::function<Outcome()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!o.pass) ++failures;
    std::cout << "[" << (o.pass ? "PASS" : "FAIL") << "] " << id << " " << name << ": " << o.detail << " ("
              << fmt(secs, 1) << " s)" << std::endl;
  };

  report(1, "expectile math", expectile_math);
  report(2, "gradient fidelity", gradient_fidelity);
  report(3, "oracle equivalence", oracle_equivalence);
  report(4, "reach semantics", reach_semantics);
  report(5, "determinism", [&] { return determinism(work); });

  std::unique_ptr<Critic> keydoor;
  auto keydoor_critic = [&]() -> Critic& {
    if (!keydoor) keydoor = std::make_unique<Critic>(train_critic("keydoor", "goals"));
    return *keydoor;
  };
  report(6, "critic benefit (KeyDoor)", [&] { return critic_benefit_keydoor(keydoor_critic()); });
  report(7, "critic benefit (Donation)", critic_benefit_donation);
  report(8, "call budget", call_budget);
  report(9, "ablation switches", [&] { return ablations(keydoor_critic()); });

  fs::remove_all(work);
  std::cout << (failures ? std::to_string(failures) + " criteria failed" : std::string("all criteria passed"))
            << std::endl;
  return failures ? 1 : 0;
}
