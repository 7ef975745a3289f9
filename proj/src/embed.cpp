#include "pnlc/embed.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <future>
#include <thread>
#include <unordered_map>

#include "json.hpp"
#include "pnlc/error.hpp"

namespace pnlc {

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (unsigned char c : text) {
    if (c < 128 && std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

Embedding hash_embed(std::string_view text, std::size_t d) {
  if (d < 8 || (d & (d - 1)) != 0) throw InvalidArgument("hash_embed: d must be a power of two >= 8");
  Embedding e;
  e.fingerprint = hash_fingerprint(d);
  e.values.assign(d, 0.0);
  const auto tokens = tokenize(text);
  auto add = [&](const std::string& feature) {
    const std::uint64_t h = fnv1a64(feature);
    e.values[h % d] += (h >> 63) ? -1.0 : 1.0;
  };
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    add(tokens[i]);
    if (i + 1 < tokens.size()) add(tokens[i] + " " + tokens[i + 1]);
  }
  double norm = 0.0;
  for (double v : e.values) norm += v * v;
  norm = std::sqrt(norm);
  // Colliding features can cancel exactly; the vector then stays zero.
  if (norm > 0.0)
    for (double& v : e.values) v /= norm;
  return e;
}

std::string hash_fingerprint(std::size_t d) { return "hash-fnv1a64-uni+bi/d=" + std::to_string(d); }

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidArgument("cosine: length mismatch");
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

std::string sha256_hex(std::string_view text) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(text.data(), text.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error("SHA-256 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 15]);
  }
  return out;
}

HashEmbedder::HashEmbedder(std::size_t d) : d_(d) {
  if (d < 8 || (d & (d - 1)) != 0) throw InvalidArgument("hash embedder: d must be a power of two >= 8");
}

std::vector<std::vector<double>> HashEmbedder::embed(std::span<const std::string> texts) {
  std::vector<std::vector<double>> out(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) out[i] = hash_embed(texts[i], d_).values;
  computed_ += texts.size();
  return out;
}

RemoteEmbedder::RemoteEmbedder(RemoteEndpoint endpoint, std::size_t d, bool normalize,
                               std::size_t chunk, int max_retries)
    : endpoint_(std::move(endpoint)),
      d_(d),
      normalize_(normalize),
      chunk_(std::max<std::size_t>(1, chunk)),
      max_retries_(max_retries) {
  if (d == 0) throw InvalidArgument("remote embedder: d must be positive");
}

std::string RemoteEmbedder::fingerprint() const {
  return "remote:" + endpoint_.model + "/d=" + std::to_string(d_) + (normalize_ ? "/l2" : "/raw");
}

std::string RemoteEmbedder::request_body(const std::string& model,
                                         std::span<const std::string> texts) {
  nlohmann::ordered_json j;
  j["model"] = model;
  j["input"] = nlohmann::ordered_json::array();
  for (const auto& t : texts) j["input"].push_back(t);
  return j.dump();
}

std::vector<std::vector<double>> RemoteEmbedder::parse_response(const std::string& body,
                                                                std::size_t expected) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw ProviderError(std::string("embedding response is not JSON: ") + e.what());
  }
  if (!j.contains("data") || !j["data"].is_array())
    throw ProviderError("embedding response lacks data[]");
  const auto& data = j["data"];
  if (data.size() != expected)
    throw ProviderError("embedding response has " + std::to_string(data.size()) +
                        " items, expected " + std::to_string(expected));
  std::vector<std::vector<double>> out(expected);
  for (std::size_t i = 0; i < expected; ++i) {
    const auto& item = data[i];
    // Servers may reorder items; honour an explicit index when present.
    std::size_t slot = item.contains("index") ? item["index"].get<std::size_t>() : i;
    if (slot >= expected || !out[slot].empty())
      throw ProviderError("embedding response has a bad index at item " + std::to_string(i));
    if (!item.contains("embedding") || !item["embedding"].is_array())
      throw ProviderError("embedding response item " + std::to_string(i) + " lacks embedding");
    out[slot] = item["embedding"].get<std::vector<double>>();
  }
  return out;
}

std::vector<std::vector<double>> RemoteEmbedder::embed(std::span<const std::string> texts) {
  const std::size_t chunks = (texts.size() + chunk_ - 1) / chunk_;
  std::vector<std::vector<double>> out(texts.size());
  std::vector<std::string> errors(chunks);

  auto run_chunk = [&](std::size_t c) {
    const std::size_t lo = c * chunk_;
    const std::size_t hi = std::min(texts.size(), lo + chunk_);
    const auto slice = texts.subspan(lo, hi - lo);
    const std::string body = request_body(endpoint_.model, slice);
    for (int attempt = 0; attempt <= max_retries_; ++attempt) {
      if (attempt > 0)
        std::this_thread::sleep_for(endpoint_.backoff * (1 << std::min(attempt - 1, 6)));
      try {
        ++requests_;
        auto vecs = parse_response(post_json(endpoint_, "/embeddings", body), slice.size());
        for (std::size_t i = 0; i < vecs.size(); ++i) {
          auto& v = vecs[i];
          if (v.size() != d_)
            throw ProviderError("embedding of length " + std::to_string(v.size()) + ", expected " +
                                std::to_string(d_));
          for (double x : v)
            if (!std::isfinite(x)) throw ProviderError("non-finite embedding entry");
          if (normalize_) {
            double n = 0;
            for (double x : v) n += x * x;
            n = std::sqrt(n);
            if (n > 0)
              for (double& x : v) x /= n;
          }
          out[lo + i] = std::move(v);
        }
        errors[c].clear();
        return;
      } catch (const ProviderError& e) {
        errors[c] = e.what();
      }
    }
  };

  // At most max_in_flight chunks are outstanding at any time.
  const std::size_t width = std::max<std::size_t>(1, endpoint_.max_in_flight);
  for (std::size_t base = 0; base < chunks; base += width) {
    std::vector<std::future<void>> wave;
    for (std::size_t c = base; c < std::min(chunks, base + width); ++c)
      wave.push_back(std::async(std::launch::async, run_chunk, c));
    for (auto& f : wave) f.get();
  }

  std::string failed;
  std::string first_error;
  for (std::size_t c = 0; c < chunks; ++c) {
    if (errors[c].empty()) continue;
    if (first_error.empty()) first_error = errors[c];
    for (std::size_t i = c * chunk_; i < std::min(texts.size(), (c + 1) * chunk_); ++i)
      failed += (failed.empty() ? "" : ",") + std::to_string(i);
  }
  if (!failed.empty())
    throw ProviderError("embedding failed for indices [" + failed + "]: " + first_error);
  computed_ += texts.size();
  return out;
}

EmbeddingCache::EmbeddingCache(std::string fingerprint) : fingerprint_(std::move(fingerprint)) {}

EmbeddingCache::EmbeddingCache(std::string fingerprint, const std::filesystem::path& path)
    : fingerprint_(std::move(fingerprint)), path_(path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return;
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  std::size_t pos = 0;
  std::size_t good_end = 0;
  std::size_t lineno = 0;
  while (pos < content.size()) {
    const std::size_t nl = content.find('\n', pos);
    const bool complete = nl != std::string::npos;
    const std::string line = content.substr(pos, (complete ? nl : content.size()) - pos);
    ++lineno;
    try {
      if (!complete) throw FormatError("unterminated record");
      auto j = nlohmann::json::parse(line);
      const std::string fp = j.at("fingerprint").get<std::string>();
      auto values = j.at("values").get<std::vector<double>>();
      if (fp == fingerprint_) entries_[j.at("key").get<std::string>()] = std::move(values);
    } catch (const std::exception& e) {
      if (complete && nl + 1 < content.size())
        throw FormatError(path.string() + ": line " + std::to_string(lineno) +
                          ": corrupt cache record");
      // A torn last record from an interrupted run: drop it so appends
      // start on a clean line.
      std::filesystem::resize_file(path, good_end);
      break;
    }
    pos = nl + 1;
    good_end = pos;
  }
}

std::unique_ptr<EmbeddingCache> EmbeddingCache::open(const std::filesystem::path& path,
                                                     std::string fingerprint) {
  return std::unique_ptr<EmbeddingCache>(new EmbeddingCache(std::move(fingerprint), path));
}

std::optional<std::vector<double>> EmbeddingCache::find(const std::string& text) const {
  const std::string key = sha256_hex(text);
  std::lock_guard lock(mu_);
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void EmbeddingCache::insert(const std::string& text, std::vector<double> values) {
  const std::string key = sha256_hex(text);
  std::lock_guard lock(mu_);
  if (entries_.count(key)) return;
  if (path_) {
    nlohmann::ordered_json j;
    j["key"] = key;
    j["fingerprint"] = fingerprint_;
    j["values"] = values;
    std::ofstream out(*path_, std::ios::app | std::ios::binary);
    if (!out) throw Error("cannot append to cache file " + path_->string());
    out << j.dump() << '\n';
    out.flush();
    ++appended_;
  }
  entries_.emplace(key, std::move(values));
}

std::size_t EmbeddingCache::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

std::vector<Embedding> embed_batch(std::span<const std::string> texts, Embedder& embedder,
                                   EmbeddingCache* cache) {
  const std::string fp = embedder.fingerprint();
  if (cache && cache->fingerprint() != fp)
    throw InvalidArgument("embedder fingerprint " + fp + " does not match cache fingerprint " +
                          cache->fingerprint());
  std::vector<Embedding> out(texts.size());
  std::unordered_map<std::string, std::size_t> miss_slot;
  std::vector<std::string> misses;
  std::vector<std::vector<std::size_t>> miss_users;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    out[i].fingerprint = fp;
    if (cache) {
      if (auto hit = cache->find(texts[i])) {
        out[i].values = std::move(*hit);
        continue;
      }
    }
    auto [it, fresh] = miss_slot.emplace(texts[i], misses.size());
    if (fresh) {
      misses.push_back(texts[i]);
      miss_users.emplace_back();
    }
    miss_users[it->second].push_back(i);
  }
  if (misses.empty()) return out;

  std::vector<std::vector<double>> fetched;
  try {
    fetched = embedder.embed(misses);
  } catch (const ProviderError& e) {
    std::string idx;
    for (const auto& users : miss_users)
      for (std::size_t i : users) idx += (idx.empty() ? "" : ",") + std::to_string(i);
    throw ProviderError("embed_batch: inputs [" + idx + "] not embedded: " + e.what());
  }
  for (std::size_t m = 0; m < misses.size(); ++m) {
    for (std::size_t i : miss_users[m]) out[i].values = fetched[m];
    if (cache) cache->insert(misses[m], std::move(fetched[m]));
  }
  return out;
}

}  // namespace pnlc
