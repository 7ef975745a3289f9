// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pnlc/provider.hpp"

namespace pnlc {

struct Embedding {
  std::vector<double> values;
  std::string fingerprint;

  std::size_t dim() const { return values.size(); }
  bool operator==(const Embedding&) const = default;
};

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes);

/// Lowercased alphanumeric tokens.
std::vector<std::string> tokenize(std::string_view text);

/// Signed feature hashing over unigrams and adjacent bigrams, L2-normalized.
/// Empty token sets give the zero vector. d must be a power of two >= 8.
Embedding hash_embed(std::string_view text, std::size_t d);

std::string hash_fingerprint(std::size_t d);

double cosine(std::span<const double> a, std::span<const double> b);

/// Lowercase hex SHA-256 of the text.
std::string sha256_hex(std::string_view text);

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::string fingerprint() const = 0;
  virtual std::size_t dim() const = 0;
  /// Embeds every text; output order matches input order.
  virtual std::vector<std::vector<double>> embed(std::span<const std::string> texts) = 0;

  /// Number of texts passed to embed() so far.
  std::size_t computed() const { return computed_.load(); }

 protected:
  std::atomic<std::size_t> computed_{0};
};

class HashEmbedder : public Embedder {
 public:
  explicit HashEmbedder(std::size_t d);
  std::string fingerprint() const override { return hash_fingerprint(d_); }
  std::size_t dim() const override { return d_; }
  std::vector<std::vector<double>> embed(std::span<const std::string> texts) override;

 private:
  std::size_t d_;
};

/// OpenAI-compatible embeddings client. Requests are chunked and issued with
/// at most endpoint.max_in_flight concurrently; each chunk is retried with
/// exponential backoff.
class RemoteEmbedder : public Embedder {
 public:
  RemoteEmbedder(RemoteEndpoint endpoint, std::size_t d, bool normalize = true,
                 std::size_t chunk = 64, int max_retries = 3);
  std::string fingerprint() const override;
  std::size_t dim() const override { return d_; }
  std::vector<std::vector<double>> embed(std::span<const std::string> texts) override;

  static std::string request_body(const std::string& model, std::span<const std::string> texts);
  /// Reads data[i].embedding for i in [0, expected).
  static std::vector<std::vector<double>> parse_response(const std::string& body,
                                                         std::size_t expected);

  std::size_t requests() const { return requests_.load(); }

 private:
  RemoteEndpoint endpoint_;
  std::size_t d_;
  bool normalize_;
  std::size_t chunk_;
  int max_retries_;
  std::atomic<std::size_t> requests_{0};
};

/// Embedding cache keyed by (fingerprint, SHA-256 of text). Optionally
/// backed by an append-only line file of {key, fingerprint, values}
/// records; a torn final line from an interrupted run is ignored on load.
class EmbeddingCache {
 public:
  explicit EmbeddingCache(std::string fingerprint);
  /// Loads the backing file (creating it on first insert).
  static std::unique_ptr<EmbeddingCache> open(const std::filesystem::path& path,
                                              std::string fingerprint);

  const std::string& fingerprint() const { return fingerprint_; }
  std::optional<std::vector<double>> find(const std::string& text) const;
  void insert(const std::string& text, std::vector<double> values);
  std::size_t size() const;
  /// Records appended to the backing file during this session.
  std::size_t appended() const { return appended_; }

 private:
  EmbeddingCache(std::string fingerprint, const std::filesystem::path& path);

  std::string fingerprint_;
  std::optional<std::filesystem::path> path_;
  mutable std::mutex mu_;
  std::map<std::string, std::vector<double>> entries_;
  std::size_t appended_ = 0;
};

/// Serves cache hits without calling the embedder, computes each distinct
/// miss once and inserts it. Throws InvalidArgument on fingerprint mismatch.
std::vector<Embedding> embed_batch(std::span<const std::string> texts, Embedder& embedder,
                                   EmbeddingCache* cache);

}  // namespace pnlc
