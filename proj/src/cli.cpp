#include "pnlc/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "pnlc/agent.hpp"
#include "pnlc/critic.hpp"
#include "pnlc/error.hpp"
#include "pnlc/evaluation.hpp"
#include "pnlc/pipeline.hpp"

namespace pnlc::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

// Usage problems found after parsing (missing paths, bad values) exit 1.
struct UsageError : Error {
  using Error::Error;
};

const std::string& require(const std::string& value, const char* flag) {
  if (value.empty()) throw UsageError(std::string("missing required --") + flag);
  return value;
}

ordered_json echo_json(const RunConfig& cfg) { return ordered_json::parse(cfg.echo()); }

// Artifacts whose format has no room for metadata get a <path>.config.json.
void write_sidecar(const fs::path& artifact, const RunConfig& cfg) {
  std::ofstream out(artifact.string() + ".config.json", std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + artifact.string() + ".config.json");
  out << echo_json(cfg).dump(2) << '\n';
}

void write_json(const fs::path& path, const ordered_json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw Error("short write to " + path.string());
}

std::unique_ptr<EmbeddingCache> open_cache(const RunConfig& cfg, const Embedder& embedder) {
  if (cfg.cache.empty()) return nullptr;
  return EmbeddingCache::open(cfg.cache, embedder.fingerprint());
}

// Embedder matching a checkpoint: the config's kind with the checkpoint's d.
std::unique_ptr<Embedder> embedder_for(RunConfig cfg, const ValueCheckpoint& ckpt) {
  cfg.d = ckpt.config.d;
  auto e = make_embedder(cfg);
  if (e->fingerprint() != ckpt.embedder_fingerprint)
    throw UsageError("checkpoint was trained with embedder '" + ckpt.embedder_fingerprint +
                     "', the config gives '" + e->fingerprint() + "'");
  return e;
}

PromptTemplates templates_for(const RunConfig& cfg) {
  return cfg.prompts.empty() ? PromptTemplates::defaults() : PromptTemplates::load(cfg.prompts);
}

ProviderFactory provider_factory(const RunConfig& cfg, const Environment& env) {
  if (cfg.provider == "mock")
    return [&env](std::uint64_t s) { return std::make_unique<SyntheticMockProvider>(env, s); };
  RemoteEndpoint ep = RemoteEndpoint::from_env(cfg.model);
  ep.max_in_flight = cfg.jobs;
  return [ep](std::uint64_t) { return std::make_unique<RemoteChatProvider>(ep); };
}

CriticMode critic_mode(const std::string& name) {
  if (name == "goals") return CriticMode::kGoals;
  if (name == "scalar") return CriticMode::kScalar;
  return CriticMode::kOff;
}

ordered_json comparison_json(const OracleComparison& c) {
  return {{"triples", c.triples},
          {"mean_abs_error", c.mae},
          {"max_abs_error", c.max_abs},
          {"worst", {{"triple", c.worst}, {"oracle", c.worst_oracle}, {"model", c.worst_model}}}};
}

// --- subcommands -----------------------------------------------------------

int cmd_collect(const RunConfig& cfg, std::ostream& out) {
  const auto env = make_environment(cfg.env);
  const std::size_t count = cfg.episodes ? cfg.episodes : (cfg.env == "donation" ? 2500 : 2000);
  const fs::path path = require(cfg.out, "out");
  const auto trajs = collect(*env, cfg.epsilon, count, cfg.seed, cfg.return_gamma);
  write_dataset(path.string(), trajs);
  write_sidecar(path, cfg);
  std::size_t wins = 0;
  for (const auto& t : trajs) wins += env->success(t) ? 1 : 0;
  out << "collected " << trajs.size() << " episodes (" << wins << " successful) -> " << path.string()
      << '\n';
  return kOk;
}

int cmd_summarize(const RunConfig& cfg, std::ostream& out) {
  const auto env = make_environment(cfg.env);
  const auto trajs = read_dataset(require(cfg.data, "data"), cfg.return_gamma);
  const fs::path path = require(cfg.out, "out");
  const auto factory = provider_factory(cfg, *env);
  const PromptTemplates templates = templates_for(cfg);
  std::vector<Trajectory> done;
  std::size_t calls = 0;
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    auto provider = factory(derive_seed(cfg.seed, i));
    done.push_back(summarize_trajectory(trajs[i], *provider, templates.summarize));
    calls += provider->calls();
  }
  write_dataset(path.string(), done);
  write_sidecar(path, cfg);
  out << "summarized " << done.size() << " trajectories with " << calls << " provider calls -> "
      << path.string() << '\n';
  return kOk;
}

int cmd_embed(const RunConfig& cfg, std::ostream& out) {
  const auto trajs = read_dataset(require(cfg.data, "data"), cfg.return_gamma);
  require(cfg.cache, "cache");
  const auto embedder = make_embedder(cfg);
  auto cache = open_cache(cfg, *embedder);
  const auto samples = training_samples(trajs, cfg);
  std::vector<std::string> texts;
  for (const auto& s : samples)
    for (const std::string* t : {&s.state_text, &s.thought_text, &s.next_state_text, &s.goal_text})
      texts.push_back(*t);
  embed_batch(texts, *embedder, cache.get());
  write_sidecar(cfg.cache, cfg);
  out << "cache " << cfg.cache << ": " << cache->size() << " entries, " << cache->appended()
      << " added\n";
  return kOk;
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  const auto trajs = read_dataset(require(cfg.data, "data"), cfg.return_gamma);
  const fs::path path = require(cfg.out, "out");
  const auto embedder = make_embedder(cfg);
  auto cache = open_cache(cfg, *embedder);
  const TrainResult r = train_from_trajectories(trajs, cfg, *embedder, cache.get());
  save_checkpoint(r.checkpoint, path, cfg.echo());
  const fs::path metrics = cfg.metrics.empty() ? fs::path(path.string() + ".metrics.csv")
                                               : fs::path(cfg.metrics);
  {
    std::ofstream m(metrics, std::ios::binary | std::ios::trunc);
    if (!m) throw Error("cannot write " + metrics.string());
    write_metrics_csv(m, r.history);
  }
  write_sidecar(metrics, cfg);
  out << "trained on " << r.samples << " samples; final loss_q "
      << r.checkpoint.metrics_tail.loss_q << " loss_v " << r.checkpoint.metrics_tail.loss_v
      << " -> " << path.string() << '\n';
  return kOk;
}

int cmd_oracle_check(const RunConfig& cfg, std::ostream& out) {
  const ValueCheckpoint ckpt = load_checkpoint(require(cfg.ckpt, "ckpt"));
  const auto embedder = embedder_for(cfg, ckpt);
  auto cache = open_cache(cfg, *embedder);
  const auto env = make_environment(cfg.env);
  const double tau = ckpt.config.tau, gamma = ckpt.config.gamma;
  const fs::path path = cfg.out.empty() ? fs::path("oracle_report.json") : fs::path(cfg.out);

  const TabularMDP mdp = env->to_mdp();
  const BehaviorPolicy beta = ScriptedPolicy(*env, cfg.epsilon).table();
  const ValueTables exact = dp_fixed_point(mdp, beta, tau, gamma);

  ordered_json report;
  report["config"] = echo_json(cfg);
  report["tau"] = tau;
  report["gamma"] = gamma;
  report["dp_sweeps"] = exact.sweeps;

  std::vector<EmpiricalTables::Key> triples;
  if (!cfg.data.empty()) {
    const auto trajs = read_dataset(cfg.data, cfg.return_gamma);
    const EmpiricalTables emp = empirical_fixed_point(training_samples(trajs, cfg), tau, gamma);
    const OracleComparison cmp = compare_empirical(ckpt, emp, *embedder, cache.get());
    report["empirical"] = comparison_json(cmp);
    {
      std::ofstream csv(path.string() + ".errors.csv", std::ios::binary | std::ios::trunc);
      write_comparison_csv(csv, cmp);
    }
    write_sidecar(path.string() + ".errors.csv", cfg);
    report["empirical"]["unseen_bootstraps"] = emp.unseen_bootstraps;
    for (const auto& [k, q] : emp.q) triples.push_back(k);
    std::ofstream csv(path.string() + ".empirical.csv", std::ios::binary | std::ios::trunc);
    write_oracle_csv(csv, emp);
    write_sidecar(path.string() + ".empirical.csv", cfg);
  } else {
    for (std::size_t s = 0; s < mdp.num_states(); ++s) {
      if (mdp.terminal[s]) continue;
      for (const auto& a : mdp.actions)
        for (const auto& g : mdp.states) triples.push_back({mdp.states[s], a, g});
    }
  }
  if (ckpt.goal_conditioned) {
    report["exact"] = comparison_json(compare_exact(ckpt, mdp, exact, triples, *embedder, cache.get()));
  }
  {
    std::ofstream csv(path.string() + ".exact.csv", std::ios::binary | std::ios::trunc);
    write_oracle_csv(csv, mdp, exact);
  }
  write_sidecar(path.string() + ".exact.csv", cfg);
  write_json(path, report);

  for (const char* mode : {"empirical", "exact"}) {
    if (!report.contains(mode)) continue;
    const auto& m = report[mode];
    out << mode << ": triples " << m["triples"].get<std::size_t>() << " mean_abs_error "
        << m["mean_abs_error"].get<double>() << " max_abs_error "
        << m["max_abs_error"].get<double>() << '\n';
  }
  out << "report -> " << path.string() << '\n';
  return kOk;
}

int cmd_eval(const RunConfig& cfg, std::ostream& out) {
  const auto env = make_environment(cfg.env);
  AgentConfig agent;
  agent.critic = critic_mode(cfg.critic);
  agent.best_of_n = cfg.best_of_n;
  agent.m = cfg.m;
  agent.n = cfg.n;
  agent.n_thoughts = cfg.n_thoughts;
  agent.gamma = cfg.return_gamma;

  std::optional<ValueCheckpoint> ckpt;
  std::unique_ptr<Embedder> embedder;
  std::unique_ptr<EmbeddingCache> cache;
  CriticBundle critic;
  if (agent.critic != CriticMode::kOff || agent.best_of_n) {
    ckpt = load_checkpoint(require(cfg.ckpt, "ckpt"));
    if (ckpt->goal_conditioned != (agent.critic != CriticMode::kScalar))
      throw UsageError(ckpt->goal_conditioned ? "critic=scalar needs a goal-less checkpoint"
                                              : "a goal-less checkpoint needs critic=scalar");
    embedder = embedder_for(cfg, *ckpt);
    cache = open_cache(cfg, *embedder);
    critic = {&*ckpt, embedder.get(), cache.get()};
  }
  const std::size_t episodes = cfg.episodes ? cfg.episodes : 100;
  const fs::path path = cfg.out.empty() ? fs::path("eval_report.json") : fs::path(cfg.out);
  std::optional<fs::path> transcripts;
  if (!cfg.transcripts.empty()) transcripts = cfg.transcripts;

  const EvalReport r = evaluate_agent(*env, agent, episodes, cfg.seed, provider_factory(cfg, *env),
                                      critic, templates_for(cfg), transcripts, cfg.jobs);
  ordered_json report;
  report["config"] = echo_json(cfg);
  report["episodes"] = r.metrics.episodes;
  report["success_rate"] = r.metrics.success_rate;
  report["mean_final_reward"] = r.metrics.mean_final_reward;
  report["mean_steps"] = r.metrics.mean_steps;
  report["mean_calls_per_step"] = r.metrics.mean_calls_per_step;
  report["max_calls_per_step"] = r.metrics.max_calls_per_step;
  report["warnings"] = r.metrics.warnings;
  report["transcripts"] = r.episode_paths;
  write_json(path, report);
  out << "episodes " << r.metrics.episodes << " success_rate " << r.metrics.success_rate
      << " mean_final_reward " << r.metrics.mean_final_reward << " calls/step "
      << r.metrics.mean_calls_per_step << " (max " << r.metrics.max_calls_per_step << ")\n"
      << "report -> " << path.string() << '\n';
  return kOk;
}

// Reads {"state": ..., "thought": ...} or two lines (state, then thought).
std::pair<std::string, std::string> read_query(std::istream& in) {
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    try {
      const auto j = nlohmann::json::parse(text);
      return {j.at("state").get<std::string>(), j.at("thought").get<std::string>()};
    } catch (const nlohmann::json::exception& e) {
      throw UsageError(std::string("critic-inspect: bad query: ") + e.what());
    }
  }
  std::vector<std::string> lines;
  std::istringstream ls(text);
  for (std::string line; std::getline(ls, line);) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  if (lines.size() != 2)
    throw UsageError("critic-inspect: expected a state line and a thought line on stdin");
  return {lines[0], lines[1]};
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

int cmd_critic_inspect(const RunConfig& cfg, std::istream& in, std::ostream& out) {
  const ValueCheckpoint ckpt = load_checkpoint(require(cfg.ckpt, "ckpt"));
  const auto embedder = embedder_for(cfg, ckpt);
  auto cache = open_cache(cfg, *embedder);
  const CriticBundle critic{&ckpt, embedder.get(), cache.get()};
  const auto [state, thought] = read_query(in);

  NaturalLanguageValue value;
  if (!ckpt.goal_conditioned) {
    value = evaluate_scalar(critic, state, thought);
  } else {
    const auto env = make_environment(cfg.env);
    auto provider = provider_factory(cfg, *env)(cfg.seed);
    const auto goals = propose_goals(state, thought, *provider, cfg.n, templates_for(cfg).goal);
    value = evaluate(critic, state, thought, goals);
  }
  out << "polarity,likelihood,text\n";
  for (const auto& p : value.proposals)
    out << (value.scalar ? "scalar" : polarity_name(p.polarity)) << ','
        << format_likelihood(p.likelihood) << ',' << csv_field(p.text) << '\n';
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out,
        std::ostream& err) {
  CLI::App app{"Natural-language critic built on a goal-conditioned value function", "pnlc"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));

  struct Sub {
    const char* name;
    const char* help;
  };
  const std::vector<Sub> subs = {
      {"collect", "Roll out the scripted policy into a trajectory dataset"},
      {"summarize", "Fill missing step summaries with the text provider"},
      {"embed", "Warm the embedding cache for a dataset's training texts"},
      {"train", "Train the value function; writes a checkpoint and a metrics CSV"},
      {"oracle-check", "Compare a checkpoint against dynamic-programming tables"},
      {"eval", "Play agent episodes and write a report"},
      {"critic-inspect", "Score one (state, thought) read from stdin; prints CSV"},
  };
  std::string config_path;
  std::map<std::string, std::string> flags;
  for (const auto& s : subs) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    sub->add_option("--config", config_path, "key = value config file");
    for (const auto& key : RunConfig::keys()) sub->add_option("--" + key, flags[key]);
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::CallForVersion&) {
    out << kToolVersion << '\n';
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kUsage;
  }
  CLI::App* chosen = app.get_subcommands().front();

  RunConfig cfg;
  try {
    if (!config_path.empty()) cfg.load_file(config_path);
    for (const auto& key : RunConfig::keys())
      if (chosen->count("--" + key)) cfg.set(key, flags[key]);
    cfg.validate();
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }

  const std::string name = chosen->get_name();
  try {
    if (name == "collect") return cmd_collect(cfg, out);
    if (name == "summarize") return cmd_summarize(cfg, out);
    if (name == "embed") return cmd_embed(cfg, out);
    if (name == "train") return cmd_train(cfg, out);
    if (name == "oracle-check") return cmd_oracle_check(cfg, out);
    if (name == "eval") return cmd_eval(cfg, out);
    return cmd_critic_inspect(cfg, in, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n\n" << chosen->help();
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << name << ": " << e.what() << '\n';
    return kRuntime;
  }
}

}  // namespace pnlc::cli
