#include "pnlc/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <unordered_map>

#include "pnlc/error.hpp"

namespace pnlc {

std::unique_ptr<Embedder> make_embedder(const RunConfig& cfg) {
  if (cfg.embedder == "hash") return std::make_unique<HashEmbedder>(cfg.d);
  if (cfg.embedder == "remote") {
    RemoteEndpoint ep = RemoteEndpoint::from_env(cfg.embed_model);
    ep.max_in_flight = cfg.jobs;
    return std::make_unique<RemoteEmbedder>(ep, cfg.d, cfg.embed_normalize);
  }
  throw InvalidArgument("unknown embedder '" + cfg.embedder + "'");
}

DatasetRelabelOptions relabel_options(const RunConfig& cfg) {
  DatasetRelabelOptions o;
  o.hindsight.goals_per_step = cfg.goals_per_step;
  o.hindsight.sampling = cfg.goal_sampling == "geometric" ? GoalSampling::kGeometric : GoalSampling::kUniform;
  o.hindsight.geometric_p = cfg.geometric_p;
  o.pool_goals_per_step = cfg.pool_goals_per_step;
  return o;
}

std::uint64_t relabel_seed(const RunConfig& cfg) { return derive_seed(cfg.seed, 0x7265); }

std::vector<TransitionSample> build_success_transitions(const Trajectory& traj) {
  std::vector<TransitionSample> out;
  const std::size_t T = traj.horizon();
  bool success = false;
  if (auto it = traj.task_meta.find("success"); it != traj.task_meta.end()) success = it->second == "1";
  else
    for (const auto& s : traj.steps) success = success || s.env_reward > 0.0;
  auto outcome = traj.task_meta.find(kOutcomeKey);
  const bool terminated = outcome != traj.task_meta.end() && outcome->second == "terminated";
  for (std::size_t t = 0; t < T; ++t) {
    TransitionSample s;
    if (!traj.steps[t].summary || !traj.steps[t + 1].summary)
      throw InvalidArgument("trajectory " + traj.id + ": missing summary");
    s.state_text = *traj.steps[t].summary;
    s.thought_text = traj.steps[t].thought;
    s.next_state_text = *traj.steps[t + 1].summary;
    s.goal_text = kGoallessGoal;
    const bool last = t + 1 == T;
    s.reach_reward = (last && success) ? 1 : 0;
    s.terminal = last && (terminated || success);
    s.source = {traj.id, t, static_cast<long>(T)};
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<TransitionSample> training_samples(const std::vector<Trajectory>& trajs,
                                               const RunConfig& cfg) {
  if (cfg.critic == "scalar") {
    std::vector<TransitionSample> out;
    for (const auto& t : trajs) {
      auto s = build_success_transitions(t);
      out.insert(out.end(), s.begin(), s.end());
    }
    return out;
  }
  return build_dataset_transitions(trajs, relabel_options(cfg), relabel_seed(cfg));
}

TrainResult train_from_trajectories(const std::vector<Trajectory>& trajs, const RunConfig& cfg,
                                    Embedder& embedder, EmbeddingCache* cache) {
  TrainResult r;
  const auto samples = training_samples(trajs, cfg);
  r.samples = samples.size();
  const EmbeddedDataset data = embed_samples(samples, embedder, cache);
  TrainOptions opts;
  opts.kernels = cfg.kernels == "parallel" ? KernelMode::kParallel : KernelMode::kSerial;
  r.checkpoint = train_gciql(data, cfg.value_config(), opts, &r.history);
  r.checkpoint.goal_conditioned = cfg.critic != "scalar";
  return r;
}

namespace {

struct EmbeddingTable {
  std::unordered_map<std::string, Embedding> by_text;

  EmbeddingTable(const std::vector<std::string>& texts, Embedder& embedder, EmbeddingCache* cache) {
    auto embs = embed_batch(texts, embedder, cache);
    for (std::size_t i = 0; i < texts.size(); ++i) by_text.emplace(texts[i], std::move(embs[i]));
  }
  const Embedding& at(const std::string& t) const { return by_text.at(t); }
};

void accumulate(OracleComparison& c, const EmpiricalTables::Key& k, double oracle, double model) {
  const double err = std::abs(model - oracle);
  c.rows.push_back({k, oracle, model});
  c.mae += err;
  ++c.triples;
  if (err > c.max_abs || c.triples == 1) {
    c.max_abs = std::max(c.max_abs, err);
    c.worst = k.state + " | " + k.thought + " | " + k.goal;
    c.worst_oracle = oracle;
    c.worst_model = model;
  }
}

}  // namespace

OracleComparison compare_empirical(const ValueCheckpoint& ckpt, const EmpiricalTables& tables,
                                   Embedder& embedder, EmbeddingCache* cache) {
  std::vector<std::string> texts;
  for (const auto& [k, q] : tables.q) {
    texts.push_back(k.state);
    texts.push_back(k.thought);
    texts.push_back(k.goal);
  }
  EmbeddingTable emb(texts, embedder, cache);
  OracleComparison c;
  for (const auto& [k, q] : tables.q)
    accumulate(c, k, q, q_value(ckpt, emb.at(k.state), emb.at(k.thought), emb.at(k.goal)));
  if (c.triples) c.mae /= static_cast<double>(c.triples);
  return c;
}

OracleComparison compare_exact(const ValueCheckpoint& ckpt, const TabularMDP& mdp,
                               const ValueTables& tables,
                               const std::vector<EmpiricalTables::Key>& triples,
                               Embedder& embedder, EmbeddingCache* cache) {
  std::vector<std::string> texts;
  for (const auto& k : triples) {
    texts.push_back(k.state);
    texts.push_back(k.thought);
    texts.push_back(k.goal);
  }
  EmbeddingTable emb(texts, embedder, cache);
  OracleComparison c;
  for (const auto& k : triples) {
    const double oracle =
        tables.Q(mdp.state_index(k.state), mdp.action_index(k.thought), mdp.state_index(k.goal));
    accumulate(c, k, oracle, q_value(ckpt, emb.at(k.state), emb.at(k.thought), emb.at(k.goal)));
  }
  if (c.triples) c.mae /= static_cast<double>(c.triples);
  return c;
}

void write_comparison_csv(std::ostream& out, const OracleComparison& c) {
  auto field = [](const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char ch : s) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
    return q + "\"";
  };
  char buf[96];
  out << "state,action,goal,oracle,model,abs_error\n";
  for (const auto& r : c.rows) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g", r.oracle, r.model, std::abs(r.model - r.oracle));
    out << field(r.key.state) << ',' << field(r.key.thought) << ',' << field(r.key.goal) << ','
        << buf << '\n';
  }
}

std::vector<Trajectory> read_dataset(const std::string& path, double gamma) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open dataset " + path);
  return parse_trajectories(in, gamma);
}

void write_dataset(const std::string& path, const std::vector<Trajectory>& trajs) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write dataset " + path);
  write_trajectories(out, trajs);
  if (!out) throw Error("short write to " + path);
}

}  // namespace pnlc
