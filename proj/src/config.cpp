#include "pnlc/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "json.hpp"
#include "pnlc/error.hpp"

namespace pnlc {

namespace {

const std::vector<std::string> kValueKeys = {"hidden1", "hidden2",          "tau",
                                             "lr",      "batch",            "polyak_alpha",
                                             "updates_per_iter", "iterations", "weight_decay"};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long x = 0;
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    x = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw InvalidArgument(key + ": expected a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(x);
}

double to_real(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double x = 0;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw InvalidArgument(key + ": expected a number, got '" + v + "'");
  return x;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw InvalidArgument(key + ": expected true or false, got '" + v + "'");
}

std::string fmt_real(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> v = {"env",         "embedder",   "d",         "embed_model",
                                  "embed_normalize", "preset"};
    v.insert(v.end(), kValueKeys.begin(), kValueKeys.end());
    for (const char* x : {"n", "m", "goals_per_step", "pool_goals_per_step", "goal_sampling",
                          "geometric_p", "provider", "model", "seed", "epsilon", "episodes",
                          "critic", "best_of_n", "n_thoughts", "jobs", "kernels", "gamma", "return_gamma", "data",
                          "ckpt", "out", "cache", "prompts", "transcripts", "metrics"})
      v.push_back(x);
    return v;
  }();
  return k;
}

void RunConfig::set(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  if (key == "env") env = v;
  else if (key == "embedder") embedder = v;
  else if (key == "d") d = to_size(key, v);
  else if (key == "embed_model") embed_model = v;
  else if (key == "embed_normalize") embed_normalize = to_bool(key, v);
  else if (key == "preset") preset = v;
  else if (std::find(kValueKeys.begin(), kValueKeys.end(), key) != kValueKeys.end()) {
    // an empty value falls back to the preset
    if (v.empty()) {
      value_overrides.erase(key);
      return;
    }
    if (key == "hidden1" || key == "hidden2" || key == "batch" || key == "updates_per_iter" ||
        key == "iterations")
      to_size(key, v);
    else
      to_real(key, v);
    value_overrides[key] = v;
  } else if (key == "n") n = to_size(key, v);
  else if (key == "m") m = to_size(key, v);
  else if (key == "goals_per_step") goals_per_step = to_size(key, v);
  else if (key == "pool_goals_per_step") pool_goals_per_step = to_size(key, v);
  else if (key == "goal_sampling") goal_sampling = v;
  else if (key == "geometric_p") geometric_p = to_real(key, v);
  else if (key == "provider") provider = v;
  else if (key == "model") model = v;
  else if (key == "seed") seed = to_size(key, v);
  else if (key == "epsilon") epsilon = to_real(key, v);
  else if (key == "episodes") episodes = to_size(key, v);
  else if (key == "critic") critic = v;
  else if (key == "best_of_n") best_of_n = to_bool(key, v);
  else if (key == "n_thoughts") n_thoughts = to_size(key, v);
  else if (key == "jobs") jobs = to_size(key, v);
  else if (key == "kernels") kernels = v;
  else if (key == "gamma") gamma = to_real(key, v);
  else if (key == "return_gamma") return_gamma = to_real(key, v);
  else if (key == "data") data = v;
  else if (key == "ckpt") ckpt = v;
  else if (key == "out") out = v;
  else if (key == "cache") cache = v;
  else if (key == "prompts") prompts = v;
  else if (key == "transcripts") transcripts = v;
  else if (key == "metrics") metrics = v;
  else throw InvalidArgument("unknown config key '" + key + "'");
}

std::string RunConfig::get(const std::string& key) const {
  if (key == "env") return env;
  if (key == "embedder") return embedder;
  if (key == "d") return std::to_string(d);
  if (key == "embed_model") return embed_model;
  if (key == "embed_normalize") return embed_normalize ? "true" : "false";
  if (key == "preset") return preset;
  if (std::find(kValueKeys.begin(), kValueKeys.end(), key) != kValueKeys.end()) {
    auto it = value_overrides.find(key);
    return it == value_overrides.end() ? "" : it->second;
  }
  if (key == "n") return std::to_string(n);
  if (key == "m") return std::to_string(m);
  if (key == "goals_per_step") return std::to_string(goals_per_step);
  if (key == "pool_goals_per_step") return std::to_string(pool_goals_per_step);
  if (key == "goal_sampling") return goal_sampling;
  if (key == "geometric_p") return fmt_real(geometric_p);
  if (key == "provider") return provider;
  if (key == "model") return model;
  if (key == "seed") return std::to_string(seed);
  if (key == "epsilon") return fmt_real(epsilon);
  if (key == "episodes") return std::to_string(episodes);
  if (key == "critic") return critic;
  if (key == "best_of_n") return best_of_n ? "true" : "false";
  if (key == "n_thoughts") return std::to_string(n_thoughts);
  if (key == "jobs") return std::to_string(jobs);
  if (key == "kernels") return kernels;
  if (key == "gamma") return fmt_real(gamma);
  if (key == "return_gamma") return fmt_real(return_gamma);
  if (key == "data") return data;
  if (key == "ckpt") return ckpt;
  if (key == "out") return out;
  if (key == "cache") return cache;
  if (key == "prompts") return prompts;
  if (key == "transcripts") return transcripts;
  if (key == "metrics") return metrics;
  throw InvalidArgument("unknown config key '" + key + "'");
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open config file " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw InvalidArgument(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    try {
      set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const InvalidArgument& e) {
      throw InvalidArgument(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void RunConfig::validate() const {
  auto one_of = [](const std::string& key, const std::string& v, std::set<std::string> allowed) {
    if (!allowed.count(v)) {
      std::string list;
      for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
      throw InvalidArgument(key + " must be one of {" + list + "}, got '" + v + "'");
    }
  };
  one_of("env", env, {"keydoor", "donation"});
  one_of("embedder", embedder, {"hash", "remote"});
  one_of("provider", provider, {"mock", "remote"});
  one_of("critic", critic, {"goals", "scalar", "off"});
  one_of("goal_sampling", goal_sampling, {"uniform", "geometric"});
  one_of("kernels", kernels, {"serial", "parallel"});
  if (n < 2 || n % 2 != 0) throw InvalidArgument("n must be even and >= 2");
  if (m < 1) throw InvalidArgument("m must be >= 1");
  if (goals_per_step < 1) throw InvalidArgument("goals_per_step must be >= 1");
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw InvalidArgument("epsilon must lie in [0, 1]");
  if (!(gamma > 0.0 && gamma < 1.0)) throw InvalidArgument("gamma must lie in (0, 1)");
  if (!(return_gamma > 0.0 && return_gamma <= 1.0))
    throw InvalidArgument("return_gamma must lie in (0, 1]");
  if (best_of_n && n_thoughts < 2) throw InvalidArgument("n_thoughts must be >= 2 for best_of_n");
  if (jobs < 1) throw InvalidArgument("jobs must be >= 1");
  value_config().validate();
}

ValueNetConfig RunConfig::value_config() const {
  ValueNetConfig c = value_preset(preset);
  c.d = d;
  c.seed = seed;
  c.gamma = gamma;
  for (const auto& [k, v] : value_overrides) {
    if (k == "hidden1") c.hidden1 = to_size(k, v);
    else if (k == "hidden2") c.hidden2 = to_size(k, v);
    else if (k == "tau") c.tau = to_real(k, v);
    else if (k == "lr") c.lr = to_real(k, v);
    else if (k == "batch") c.batch = to_size(k, v);
    else if (k == "polyak_alpha") c.polyak_alpha = to_real(k, v);
    else if (k == "updates_per_iter") c.updates_per_iter = to_size(k, v);
    else if (k == "iterations") c.iterations = to_size(k, v);
    else if (k == "weight_decay") c.weight_decay = to_real(k, v);
  }
  return c;
}

std::string RunConfig::echo() const {
  nlohmann::ordered_json j;
  j["tool"] = "pnlc";
  j["version"] = kToolVersion;
  nlohmann::ordered_json cfg;
  for (const auto& k : keys()) cfg[k] = get(k);
  j["config"] = cfg;
  const ValueNetConfig v = value_config();
  j["value_net"] = {{"d", v.d},
                    {"hidden", {v.hidden1, v.hidden2}},
                    {"tau", v.tau},
                    {"gamma", v.gamma},
                    {"lr", v.lr},
                    {"batch", v.batch},
                    {"polyak_alpha", v.polyak_alpha},
                    {"updates_per_iter", v.updates_per_iter},
                    {"iterations", v.iterations},
                    {"weight_decay", v.weight_decay},
                    {"seed", v.seed}};
  return j.dump();
}

}  // namespace pnlc
