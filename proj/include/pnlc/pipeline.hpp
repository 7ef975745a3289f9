// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "pnlc/config.hpp"
#include "pnlc/embed.hpp"
#include "pnlc/envworld.hpp"
#include "pnlc/oracle.hpp"
#include "pnlc/trajdata.hpp"
#include "pnlc/valuefn.hpp"

namespace pnlc {

std::unique_ptr<Embedder> make_embedder(const RunConfig& cfg);

/// Relabeling settings from the config; the seed is derived from cfg.seed.
DatasetRelabelOptions relabel_options(const RunConfig& cfg);
std::uint64_t relabel_seed(const RunConfig& cfg);

/// Goal-less ablation data: every step is labelled with kGoallessGoal; the
/// reward is 1 on the transition that ends a successful episode.
std::vector<TransitionSample> build_success_transitions(const Trajectory& traj);

/// The training tuples `train` would use for this config.
std::vector<TransitionSample> training_samples(const std::vector<Trajectory>& trajs,
                                               const RunConfig& cfg);

struct TrainResult {
  ValueCheckpoint checkpoint;
  std::vector<LossPair> history;
  std::size_t samples = 0;
};

TrainResult train_from_trajectories(const std::vector<Trajectory>& trajs, const RunConfig& cfg,
                                    Embedder& embedder, EmbeddingCache* cache);

/// Error statistics of the trained Q against an oracle table.
struct OracleComparison {
  std::size_t triples = 0;
  double mae = 0.0;
  double max_abs = 0.0;
  std::string worst;  // "state | thought | goal"
  double worst_oracle = 0.0;
  double worst_model = 0.0;
  struct Row {
    EmpiricalTables::Key key;
    double oracle, model;
  };
  std::vector<Row> rows;  // every compared triple, in table order
};

/// CSV `state,action,goal,oracle,model,abs_error`.
void write_comparison_csv(std::ostream& out, const OracleComparison& c);

/// Compares q_value on every (state, thought, goal) key of the tables.
OracleComparison compare_empirical(const ValueCheckpoint& ckpt, const EmpiricalTables& tables,
                                   Embedder& embedder, EmbeddingCache* cache);

/// Compares on the given triples against the pi_beta-exact tables of `mdp`.
OracleComparison compare_exact(const ValueCheckpoint& ckpt, const TabularMDP& mdp,
                               const ValueTables& tables,
                               const std::vector<EmpiricalTables::Key>& triples,
                               Embedder& embedder, EmbeddingCache* cache);

std::vector<Trajectory> read_dataset(const std::string& path, double gamma);
void write_dataset(const std::string& path, const std::vector<Trajectory>& trajs);

}  // namespace pnlc
