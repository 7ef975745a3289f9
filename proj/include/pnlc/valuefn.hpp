// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pnlc/embed.hpp"
#include "pnlc/mlp.hpp"
#include "pnlc/trajdata.hpp"

namespace pnlc {

struct ValueNetConfig {
  std::size_t d = 256;
  std::size_t hidden1 = 64;
  std::size_t hidden2 = 64;
  double tau = 0.8;
  double gamma = 0.99;
  double lr = 4e-4;
  std::size_t batch = 32;
  double polyak_alpha = 0.005;
  std::size_t updates_per_iter = 50;
  std::size_t iterations = 100;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;

  /// Throws InvalidArgument when a field is out of range.
  void validate() const;
  bool operator==(const ValueNetConfig&) const = default;
};

/// Training presets: "webshop", "avalon", "persuasion".
ValueNetConfig value_preset(std::string_view name);
std::vector<std::string> value_preset_names();

/// |tau - 1[u<0]| * u^2
double expectile_loss(double u, double tau);
/// d/du of expectile_loss; 0 at u = 0.
double expectile_loss_grad(double u, double tau);

/// Returns a blended copy of target; see polyak_update.
MlpParams polyak(const MlpParams& target, const MlpParams& online, double alpha);

/// Mean of the last iteration's losses.
struct LossPair {
  double loss_q = 0.0;
  double loss_v = 0.0;
  bool operator==(const LossPair&) const = default;
};

struct ValueCheckpoint {
  ValueNetConfig config;
  MlpParams q, v, q_target, v_target;
  AdamState q_opt, v_opt;
  std::string embedder_fingerprint;
  LossPair metrics_tail;
  /// False for the goal-less ablation, whose goal slot always holds the
  /// embedding of kGoallessGoal.
  bool goal_conditioned = true;

  /// Shapes match the config and every entry is finite.
  void validate() const;
  bool operator==(const ValueCheckpoint&) const = default;
};

inline constexpr const char* kGoallessGoal = "task success";

/// Distinct-text embedding table plus samples referring into it.
struct EmbeddedDataset {
  struct Row {
    std::uint32_t state, thought, next_state, goal;
    double reward;
    bool terminal;
  };
  std::string fingerprint;
  std::size_t d = 0;
  std::vector<std::vector<double>> table;
  std::vector<std::string> texts;  // table[i] embeds texts[i]
  std::vector<Row> rows;
};

EmbeddedDataset embed_samples(const std::vector<TransitionSample>& samples, Embedder& embedder,
                              EmbeddingCache* cache);

struct TrainOptions {
  KernelMode kernels = KernelMode::kSerial;
  /// Called after every iteration with (iteration, mean losses).
  std::function<void(std::size_t, const LossPair&)> on_iteration;
};

/// Goal-conditioned IQL trainer. Q sees [state | thought | goal], V sees
/// [state | goal]. Each update draws a batch from an epoch-shuffled
/// permutation, regresses Q onto r + gamma * (1 - terminal) * V_target(s', g)
/// and V onto the tau-expectile of Q_target(s, a, g), applies AdamW to each
/// network and then blends both target copies.
class Trainer {
 public:
  Trainer(const EmbeddedDataset& data, ValueNetConfig config, TrainOptions options = {});

  /// One update; returns the batch losses.
  LossPair step();
  /// updates_per_iter updates; returns their mean losses.
  LossPair run_iteration();
  /// Runs all remaining iterations.
  void run();

  std::size_t updates_done() const { return updates_; }
  std::size_t iterations_done() const { return iterations_; }
  const std::vector<LossPair>& history() const { return history_; }
  const std::vector<std::size_t>& last_batch() const { return last_batch_; }

  /// When set, step() stops before the target blend (for inspection).
  void set_skip_target_update(bool skip) { skip_target_update_ = skip; }

  const ValueCheckpoint& checkpoint() const { return ckpt_; }
  ValueCheckpoint& checkpoint() { return ckpt_; }

  /// Fills batch input matrices for the given rows.
  void gather(std::span<const std::size_t> rows, Matrix& q_in, Matrix& v_in,
              Matrix& v_next_in) const;

 private:
  void next_batch();

  const EmbeddedDataset& data_;
  TrainOptions options_;
  ValueCheckpoint ckpt_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> last_batch_;
  std::size_t updates_ = 0;
  std::size_t iterations_ = 0;
  std::vector<LossPair> history_;
  bool skip_target_update_ = false;

  Matrix q_in_, v_in_, v_next_in_;
  ForwardCache q_cache_, v_cache_, scratch_;
  MlpParams q_grad_, v_grad_;
};

/// Trains from scratch; throws InvalidArgument on empty data and
/// NumericError (naming the iteration) on a non-finite loss.
ValueCheckpoint train_gciql(const EmbeddedDataset& data, const ValueNetConfig& config,
                            const TrainOptions& options = {},
                            std::vector<LossPair>* history = nullptr);

/// Raw Q(s, tht, g); throws InvalidArgument when an embedding fingerprint
/// differs from the checkpoint's.
double q_value(const ValueCheckpoint& ckpt, const Embedding& state, const Embedding& thought,
               const Embedding& goal);
double v_value(const ValueCheckpoint& ckpt, const Embedding& state, const Embedding& goal);

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const ValueCheckpoint& ckpt, const std::filesystem::path& path,
                     const std::string& config_echo = "{}");
ValueCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Per-iteration CSV: iteration,loss_q,loss_v
void write_metrics_csv(std::ostream& out, const std::vector<LossPair>& history);

}  // namespace pnlc
