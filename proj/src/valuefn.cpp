#include "pnlc/valuefn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <unordered_map>

#include "json.hpp"
#include "pnlc/error.hpp"

namespace pnlc {

void ValueNetConfig::validate() const {
  auto bad = [](const std::string& what) { throw InvalidArgument("value config: " + what); };
  if (d == 0) bad("d must be positive");
  if (hidden1 == 0 || hidden2 == 0) bad("hidden widths must be positive");
  if (!(tau >= 0.5 && tau < 1.0)) bad("tau must lie in [0.5, 1)");
  if (!(gamma > 0.0 && gamma < 1.0)) bad("gamma must lie in (0, 1)");
  if (!(lr > 0.0)) bad("lr must be positive");
  if (batch == 0) bad("batch must be positive");
  if (!(polyak_alpha > 0.0 && polyak_alpha < 1.0)) bad("polyak_alpha must lie in (0, 1)");
  if (updates_per_iter == 0 || iterations == 0) bad("update counts must be positive");
  if (!(weight_decay >= 0.0)) bad("weight_decay must be >= 0");
}

ValueNetConfig value_preset(std::string_view name) {
  ValueNetConfig c;
  if (name == "webshop") {
    c.hidden1 = c.hidden2 = 64;
    c.polyak_alpha = 0.005;
    c.lr = 4e-4;
  } else if (name == "avalon") {
    c.hidden1 = c.hidden2 = 128;
    c.polyak_alpha = 0.01;
    c.lr = 8e-4;
  } else if (name == "persuasion") {
    c.hidden1 = c.hidden2 = 128;
    c.polyak_alpha = 0.005;
    c.lr = 1e-4;
  } else {
    throw InvalidArgument("unknown value preset '" + std::string(name) +
                          "' (known: webshop, avalon, persuasion)");
  }
  return c;
}

std::vector<std::string> value_preset_names() { return {"webshop", "avalon", "persuasion"}; }

double expectile_loss(double u, double tau) {
  const double w = u < 0.0 ? 1.0 - tau : tau;
  return w * u * u;
}

double expectile_loss_grad(double u, double tau) {
  if (u == 0.0) return 0.0;
  const double w = u < 0.0 ? 1.0 - tau : tau;
  return 2.0 * w * u;
}

MlpParams polyak(const MlpParams& target, const MlpParams& online, double alpha) {
  MlpParams out = target;
  polyak_update(out, online, alpha);
  return out;
}

void ValueCheckpoint::validate() const {
  config.validate();
  const std::size_t d = config.d;
  auto check = [&](const MlpParams& p, std::size_t input, const char* name) {
    if (p.layers.size() != 3 || p.layers[0].in != input || p.layers[0].out != config.hidden1 ||
        p.layers[1].in != config.hidden1 || p.layers[1].out != config.hidden2 ||
        p.layers[2].in != config.hidden2 || p.layers[2].out != 1)
      throw FormatError(std::string("checkpoint: ") + name + " shape does not match config");
    for (const auto& l : p.layers)
      if (l.weights.size() != l.in * l.out || l.bias.size() != l.out)
        throw FormatError(std::string("checkpoint: ") + name + " array sizes are inconsistent");
    if (!p.all_finite()) throw FormatError(std::string("checkpoint: ") + name + " has non-finite entries");
  };
  check(q, 3 * d, "q");
  check(q_target, 3 * d, "q_target");
  check(v, 2 * d, "v");
  check(v_target, 2 * d, "v_target");
  check(q_opt.m, 3 * d, "q_opt.m");
  check(q_opt.v, 3 * d, "q_opt.v");
  check(v_opt.m, 2 * d, "v_opt.m");
  check(v_opt.v, 2 * d, "v_opt.v");
  if (!std::isfinite(metrics_tail.loss_q) || !std::isfinite(metrics_tail.loss_v))
    throw FormatError("checkpoint: non-finite metrics");
}

EmbeddedDataset embed_samples(const std::vector<TransitionSample>& samples, Embedder& embedder,
                              EmbeddingCache* cache) {
  EmbeddedDataset ds;
  ds.fingerprint = embedder.fingerprint();
  ds.d = embedder.dim();
  std::unordered_map<std::string, std::uint32_t> index;
  auto id = [&](const std::string& text) {
    auto [it, fresh] = index.emplace(text, static_cast<std::uint32_t>(ds.texts.size()));
    if (fresh) ds.texts.push_back(text);
    return it->second;
  };
  ds.rows.reserve(samples.size());
  for (const auto& s : samples) {
    EmbeddedDataset::Row r;
    r.state = id(s.state_text);
    r.thought = id(s.thought_text);
    r.next_state = id(s.next_state_text);
    r.goal = id(s.goal_text);
    r.reward = static_cast<double>(s.reach_reward);
    r.terminal = s.terminal;
    ds.rows.push_back(r);
  }
  auto embs = embed_batch(ds.texts, embedder, cache);
  ds.table.reserve(embs.size());
  for (auto& e : embs) {
    if (e.values.size() != ds.d) throw InvalidArgument("embedding dimension mismatch");
    ds.table.push_back(std::move(e.values));
  }
  return ds;
}

Trainer::Trainer(const EmbeddedDataset& data, ValueNetConfig config, TrainOptions options)
    : data_(data), options_(std::move(options)), rng_(derive_seed(config.seed, 1)) {
  config.validate();
  if (data.rows.empty()) throw InvalidArgument("train_gciql: empty sample list");
  if (data.d != config.d)
    throw InvalidArgument("train_gciql: embedding dimension " + std::to_string(data.d) +
                          " differs from config d " + std::to_string(config.d));
  if (data.rows.size() < config.batch)
    throw InvalidArgument("train_gciql: fewer samples (" + std::to_string(data.rows.size()) +
                          ") than one batch (" + std::to_string(config.batch) + ")");
  ckpt_.config = config;
  ckpt_.embedder_fingerprint = data.fingerprint;
  Rng init(config.seed);
  ckpt_.q = make_mlp(3 * config.d, config.hidden1, config.hidden2, init);
  ckpt_.v = make_mlp(2 * config.d, config.hidden1, config.hidden2, init);
  ckpt_.q_target = ckpt_.q;
  ckpt_.v_target = ckpt_.v;
  ckpt_.q_opt = make_adam_state(ckpt_.q);
  ckpt_.v_opt = make_adam_state(ckpt_.v);
  order_.resize(data.rows.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  cursor_ = order_.size();  // forces a shuffle before the first batch
}

void Trainer::next_batch() {
  const std::size_t B = ckpt_.config.batch;
  if (cursor_ + B > order_.size()) {
    // New epoch; a partial tail is dropped so no sample repeats within one.
    rng_.shuffle(order_);
    cursor_ = 0;
  }
  last_batch_.assign(order_.begin() + static_cast<long>(cursor_),
                     order_.begin() + static_cast<long>(cursor_ + B));
  cursor_ += B;
}

void Trainer::gather(std::span<const std::size_t> rows, Matrix& q_in, Matrix& v_in,
                     Matrix& v_next_in) const {
  const std::size_t d = data_.d;
  q_in = Matrix(rows.size(), 3 * d);
  v_in = Matrix(rows.size(), 2 * d);
  v_next_in = Matrix(rows.size(), 2 * d);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto& r = data_.rows[rows[k]];
    const auto& s = data_.table[r.state];
    const auto& a = data_.table[r.thought];
    const auto& sn = data_.table[r.next_state];
    const auto& g = data_.table[r.goal];
    std::copy(s.begin(), s.end(), q_in.row(k));
    std::copy(a.begin(), a.end(), q_in.row(k) + d);
    std::copy(g.begin(), g.end(), q_in.row(k) + 2 * d);
    std::copy(s.begin(), s.end(), v_in.row(k));
    std::copy(g.begin(), g.end(), v_in.row(k) + d);
    std::copy(sn.begin(), sn.end(), v_next_in.row(k));
    std::copy(g.begin(), g.end(), v_next_in.row(k) + d);
  }
}

LossPair Trainer::step() {
  const ValueNetConfig& c = ckpt_.config;
  const KernelMode mode = options_.kernels;
  next_batch();
  gather(last_batch_, q_in_, v_in_, v_next_in_);
  const std::size_t B = last_batch_.size();
  const double inv_b = 1.0 / static_cast<double>(B);

  // Bootstrap and expectile targets come from the target copies only.
  kernels::forward_batch(ckpt_.v_target, v_next_in_, scratch_, mode);
  std::vector<double> y(B);
  for (std::size_t k = 0; k < B; ++k) {
    const auto& r = data_.rows[last_batch_[k]];
    y[k] = r.reward + c.gamma * (r.terminal ? 0.0 : 1.0) * scratch_.output[k];
  }
  kernels::forward_batch(ckpt_.q_target, q_in_, scratch_, mode);
  const std::vector<double> q_hat = scratch_.output;

  kernels::forward_batch(ckpt_.q, q_in_, q_cache_, mode);
  std::vector<double> dq(B);
  LossPair loss;
  for (std::size_t k = 0; k < B; ++k) {
    const double diff = q_cache_.output[k] - y[k];
    loss.loss_q += diff * diff * inv_b;
    dq[k] = 2.0 * diff * inv_b;
  }

  kernels::forward_batch(ckpt_.v, v_in_, v_cache_, mode);
  std::vector<double> dv(B);
  for (std::size_t k = 0; k < B; ++k) {
    const double u = q_hat[k] - v_cache_.output[k];
    loss.loss_v += expectile_loss(u, c.tau) * inv_b;
    dv[k] = -expectile_loss_grad(u, c.tau) * inv_b;
  }
  if (!std::isfinite(loss.loss_q) || !std::isfinite(loss.loss_v))
    throw NumericError("train_gciql: non-finite loss at iteration " + std::to_string(iterations_) +
                       " (update " + std::to_string(updates_) + ")");

  kernels::backward_batch(ckpt_.q, q_cache_, dq, q_grad_, mode);
  kernels::backward_batch(ckpt_.v, v_cache_, dv, v_grad_, mode);
  AdamConfig adam{c.lr, 0.9, 0.999, 1e-8, c.weight_decay};
  adamw_step(ckpt_.q, q_grad_, ckpt_.q_opt, adam);
  adamw_step(ckpt_.v, v_grad_, ckpt_.v_opt, adam);
  if (!skip_target_update_) {
    polyak_update(ckpt_.q_target, ckpt_.q, c.polyak_alpha);
    polyak_update(ckpt_.v_target, ckpt_.v, c.polyak_alpha);
  }
  ++updates_;
  return loss;
}

LossPair Trainer::run_iteration() {
  LossPair mean;
  const std::size_t n = ckpt_.config.updates_per_iter;
  for (std::size_t i = 0; i < n; ++i) {
    const LossPair l = step();
    mean.loss_q += l.loss_q;
    mean.loss_v += l.loss_v;
  }
  mean.loss_q /= static_cast<double>(n);
  mean.loss_v /= static_cast<double>(n);
  history_.push_back(mean);
  ckpt_.metrics_tail = mean;
  ++iterations_;
  if (options_.on_iteration) options_.on_iteration(iterations_, mean);
  return mean;
}

void Trainer::run() {
  while (iterations_ < ckpt_.config.iterations) run_iteration();
}

ValueCheckpoint train_gciql(const EmbeddedDataset& data, const ValueNetConfig& config,
                            const TrainOptions& options, std::vector<LossPair>* history) {
  Trainer trainer(data, config, options);
  trainer.run();
  if (history) *history = trainer.history();
  return trainer.checkpoint();
}

namespace {

void check_fingerprint(const ValueCheckpoint& ckpt, const Embedding& e, const char* what) {
  if (e.fingerprint != ckpt.embedder_fingerprint)
    throw InvalidArgument(std::string(what) + " embedding fingerprint '" + e.fingerprint +
                          "' differs from checkpoint '" + ckpt.embedder_fingerprint + "'");
  if (e.values.size() != ckpt.config.d)
    throw InvalidArgument(std::string(what) + " embedding has wrong dimension");
}

}  // namespace

double q_value(const ValueCheckpoint& ckpt, const Embedding& state, const Embedding& thought,
               const Embedding& goal) {
  check_fingerprint(ckpt, state, "state");
  check_fingerprint(ckpt, thought, "thought");
  check_fingerprint(ckpt, goal, "goal");
  std::vector<double> x;
  x.reserve(3 * ckpt.config.d);
  x.insert(x.end(), state.values.begin(), state.values.end());
  x.insert(x.end(), thought.values.begin(), thought.values.end());
  x.insert(x.end(), goal.values.begin(), goal.values.end());
  return forward(ckpt.q, x);
}

double v_value(const ValueCheckpoint& ckpt, const Embedding& state, const Embedding& goal) {
  check_fingerprint(ckpt, state, "state");
  check_fingerprint(ckpt, goal, "goal");
  std::vector<double> x;
  x.reserve(2 * ckpt.config.d);
  x.insert(x.end(), state.values.begin(), state.values.end());
  x.insert(x.end(), goal.values.begin(), goal.values.end());
  return forward(ckpt.v, x);
}

// Checkpoint layout:
//   "PNLCCKPT" | u32 version | u64 header length | JSON header |
//   arrays as little-endian f64 in header order | SHA-256 of all preceding bytes
namespace {

constexpr char kMagic[8] = {'P', 'N', 'L', 'C', 'C', 'K', 'P', 'T'};

template <typename T>
void put_le(std::string& buf, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const std::string& buf, std::size_t& pos) {
  if (pos + sizeof(T) > buf.size()) throw FormatError("checkpoint truncated");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    v |= static_cast<T>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
  pos += sizeof(T);
  return v;
}

void put_array(std::string& buf, const std::vector<double>& a) {
  for (double x : a) {
    std::uint64_t bits;
    std::memcpy(&bits, &x, sizeof bits);
    put_le(buf, bits);
  }
}

void get_array(const std::string& buf, std::size_t& pos, std::vector<double>& a) {
  for (double& x : a) {
    const std::uint64_t bits = get_le<std::uint64_t>(buf, pos);
    std::memcpy(&x, &bits, sizeof x);
  }
}

nlohmann::ordered_json shapes(const MlpParams& p) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& l : p.layers) arr.push_back({l.out, l.in});
  return arr;
}

MlpParams from_shapes(const nlohmann::json& arr) {
  MlpParams p;
  for (const auto& s : arr) {
    DenseLayer l;
    l.out = s.at(0).get<std::size_t>();
    l.in = s.at(1).get<std::size_t>();
    if (l.out > (1u << 20) || l.in > (1u << 20)) throw FormatError("checkpoint: implausible shape");
    l.weights.resize(l.in * l.out);
    l.bias.resize(l.out);
    p.layers.push_back(std::move(l));
  }
  return p;
}

std::string digest_bytes(const std::string& data) {
  const std::string hex = sha256_hex(data);
  std::string raw;
  for (std::size_t i = 0; i < hex.size(); i += 2)
    raw.push_back(static_cast<char>(std::stoi(hex.substr(i, 2), nullptr, 16)));
  return raw;
}

nlohmann::ordered_json config_json(const ValueNetConfig& c) {
  nlohmann::ordered_json j;
  j["d"] = c.d;
  j["hidden"] = {c.hidden1, c.hidden2};
  j["tau"] = c.tau;
  j["gamma"] = c.gamma;
  j["lr"] = c.lr;
  j["batch"] = c.batch;
  j["polyak_alpha"] = c.polyak_alpha;
  j["updates_per_iter"] = c.updates_per_iter;
  j["iterations"] = c.iterations;
  j["weight_decay"] = c.weight_decay;
  j["seed"] = c.seed;
  return j;
}

ValueNetConfig config_from_json(const nlohmann::json& j) {
  ValueNetConfig c;
  c.d = j.at("d").get<std::size_t>();
  c.hidden1 = j.at("hidden").at(0).get<std::size_t>();
  c.hidden2 = j.at("hidden").at(1).get<std::size_t>();
  c.tau = j.at("tau").get<double>();
  c.gamma = j.at("gamma").get<double>();
  c.lr = j.at("lr").get<double>();
  c.batch = j.at("batch").get<std::size_t>();
  c.polyak_alpha = j.at("polyak_alpha").get<double>();
  c.updates_per_iter = j.at("updates_per_iter").get<std::size_t>();
  c.iterations = j.at("iterations").get<std::size_t>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

template <typename F>
void for_each_network(const ValueCheckpoint& c, F&& f) {
  f("q", c.q);
  f("v", c.v);
  f("q_target", c.q_target);
  f("v_target", c.v_target);
  f("q_opt.m", c.q_opt.m);
  f("q_opt.v", c.q_opt.v);
  f("v_opt.m", c.v_opt.m);
  f("v_opt.v", c.v_opt.v);
}

}  // namespace

void save_checkpoint(const ValueCheckpoint& ckpt, const std::filesystem::path& path,
                     const std::string& config_echo) {
  ckpt.validate();
  nlohmann::ordered_json h;
  h["format"] = "pnlc-value-checkpoint";
  h["version"] = kCheckpointVersion;
  h["config"] = config_json(ckpt.config);
  h["embedder_fingerprint"] = ckpt.embedder_fingerprint;
  h["goal_conditioned"] = ckpt.goal_conditioned;
  h["metrics_tail"] = {{"loss_q", ckpt.metrics_tail.loss_q}, {"loss_v", ckpt.metrics_tail.loss_v}};
  h["optimizer_steps"] = {{"q", ckpt.q_opt.step}, {"v", ckpt.v_opt.step}};
  h["arrays"] = nlohmann::ordered_json::object();
  for_each_network(ckpt, [&](const char* name, const MlpParams& p) { h["arrays"][name] = shapes(p); });
  try {
    h["config_echo"] = nlohmann::ordered_json::parse(config_echo);
  } catch (const nlohmann::json::exception&) {
    h["config_echo"] = config_echo;
  }
  const std::string header = h.dump();

  std::string buf(kMagic, sizeof kMagic);
  put_le<std::uint32_t>(buf, kCheckpointVersion);
  put_le<std::uint64_t>(buf, header.size());
  buf += header;
  for_each_network(ckpt, [&](const char*, const MlpParams& p) {
    p.for_each_array([&](const std::vector<double>& a) { put_array(buf, a); });
  });
  // The loss tail goes in binary too so it round-trips bit for bit.
  for (double x : {ckpt.metrics_tail.loss_q, ckpt.metrics_tail.loss_v}) put_array(buf, {x});
  buf += digest_bytes(buf);

  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint " + tmp.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw Error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

ValueCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = "checkpoint " + path.string() + ": ";

  if (buf.size() < sizeof kMagic || std::memcmp(buf.data(), kMagic, sizeof kMagic) != 0)
    throw FormatError(where + "not a checkpoint file");
  std::size_t pos = sizeof kMagic;
  try {
    const auto version = get_le<std::uint32_t>(buf, pos);
    if (version != kCheckpointVersion)
      throw FormatError("unsupported format version " + std::to_string(version) + " (expected " +
                        std::to_string(kCheckpointVersion) + ")");
    const auto header_len = get_le<std::uint64_t>(buf, pos);
    if (header_len > buf.size() - pos) throw FormatError("checkpoint truncated");
    if (buf.size() < 32) throw FormatError("checkpoint truncated");
    const std::string body = buf.substr(0, buf.size() - 32);
    if (digest_bytes(body) != buf.substr(buf.size() - 32))
      throw FormatError("integrity check failed (truncated or corrupted file)");

    const auto h = nlohmann::json::parse(buf.substr(pos, header_len));
    pos += header_len;
    ValueCheckpoint c;
    c.config = config_from_json(h.at("config"));
    c.embedder_fingerprint = h.at("embedder_fingerprint").get<std::string>();
    c.goal_conditioned = h.at("goal_conditioned").get<bool>();
    const auto& arrays = h.at("arrays");
    c.q = from_shapes(arrays.at("q"));
    c.v = from_shapes(arrays.at("v"));
    c.q_target = from_shapes(arrays.at("q_target"));
    c.v_target = from_shapes(arrays.at("v_target"));
    c.q_opt.m = from_shapes(arrays.at("q_opt.m"));
    c.q_opt.v = from_shapes(arrays.at("q_opt.v"));
    c.v_opt.m = from_shapes(arrays.at("v_opt.m"));
    c.v_opt.v = from_shapes(arrays.at("v_opt.v"));
    c.q_opt.step = h.at("optimizer_steps").at("q").get<std::size_t>();
    c.v_opt.step = h.at("optimizer_steps").at("v").get<std::size_t>();

    std::size_t expected = 0;
    for_each_network(c, [&](const char*, const MlpParams& p) { expected += p.parameter_count(); });
    if (pos + 8 * (expected + 2) != body.size()) throw FormatError("array section has wrong size");
    for (MlpParams* p : {&c.q, &c.v, &c.q_target, &c.v_target, &c.q_opt.m, &c.q_opt.v, &c.v_opt.m,
                         &c.v_opt.v})
      p->for_each_array([&](std::vector<double>& a) { get_array(body, pos, a); });
    std::vector<double> tail(2);
    get_array(body, pos, tail);
    c.metrics_tail = {tail[0], tail[1]};
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(where + "bad header: " + e.what());
  } catch (const FormatError& e) {
    throw FormatError(where + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError(where + e.what());
  }
}

void write_metrics_csv(std::ostream& out, const std::vector<LossPair>& history) {
  out << "iteration,loss_q,loss_v\n";
  char line[96];
  for (std::size_t i = 0; i < history.size(); ++i) {
    std::snprintf(line, sizeof line, "%zu,%.17g,%.17g\n", i + 1, history[i].loss_q,
                  history[i].loss_v);
    out << line;
  }
}

}  // namespace pnlc
