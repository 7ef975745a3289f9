// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "pnlc/valuefn.hpp"

namespace pnlc {

/// Flat run configuration. Every field can be set in a `key = value` file
/// (# starts a comment) or overridden with a --key flag.
struct RunConfig {
  std::string env = "keydoor";
  std::string embedder = "hash";  // hash | remote
  std::size_t d = 256;
  std::string embed_model = "text-embedding-3-small";
  bool embed_normalize = true;
  std::string preset = "webshop";
  /// Explicit ValueNetConfig fields layered over the preset ("" = preset).
  std::map<std::string, std::string> value_overrides;
  std::size_t n = 4;
  std::size_t m = 2;
  std::size_t goals_per_step = 4;
  std::size_t pool_goals_per_step = 4;
  std::string goal_sampling = "uniform";  // uniform | geometric
  double geometric_p = 0.5;
  std::string provider = "mock";  // mock | remote
  std::string model = "gpt-4o-mini";
  std::uint64_t seed = 0;
  double epsilon = 0.5;
  std::size_t episodes = 0;  // 0: the subcommand's default
  std::string critic = "goals";  // goals | scalar | off
  bool best_of_n = false;
  std::size_t n_thoughts = 2;
  std::size_t jobs = 1;
  std::string kernels = "serial";  // serial | parallel
  double gamma = 0.99;
  /// Discount of the final_return recorded in datasets and episodes.
  double return_gamma = 0.99;
  std::string data;
  std::string ckpt;
  std::string out;
  std::string cache;
  std::string prompts;
  std::string transcripts;
  std::string metrics;

  /// Every settable key, in echo order.
  static const std::vector<std::string>& keys();
  /// Throws InvalidArgument for an unknown key or unparsable value.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  /// Applies a `key = value` file.
  void load_file(const std::filesystem::path& path);
  /// n even, m >= 1, enumerations valid.
  void validate() const;
  /// Preset plus overrides, with seed and d filled in.
  ValueNetConfig value_config() const;
  /// The resolved configuration as a JSON object, including the tool version.
  std::string echo() const;
};

inline constexpr const char* kToolVersion = "0.3.0";

}  // namespace pnlc
