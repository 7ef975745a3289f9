// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

namespace pnlc {

/// Text-in/text-out model endpoint. send() counts one logical call and
/// retries transient failures (ProviderError from do_send) up to
/// max_retries additional attempts.
class TextProvider {
 public:
  virtual ~TextProvider() = default;

  std::string send(const std::string& prompt);

  std::size_t calls() const { return calls_.load(); }
  std::size_t attempts() const { return attempts_.load(); }
  void reset_counters() {
    calls_ = 0;
    attempts_ = 0;
  }

  void set_max_retries(int retries) { max_retries_ = retries; }
  int max_retries() const { return max_retries_; }

 protected:
  virtual std::string do_send(const std::string& prompt) = 0;
  /// Called before retry number `retry` (1-based) of one send().
  virtual void before_retry(int /*retry*/) {}

 private:
  std::atomic<std::size_t> calls_{0};
  std::atomic<std::size_t> attempts_{0};
  int max_retries_ = 2;
};

/// Deterministic mock: the first rule whose marker occurs in the prompt
/// answers. Rules may carry a fixed response or a function of the prompt.
/// Every prompt is captured for inspection.
class MockProvider : public TextProvider {
 public:
  using Responder = std::function<std::string(const std::string& prompt)>;

  MockProvider& on(std::string marker, std::string response);
  MockProvider& on(std::string marker, Responder responder);
  /// Responses returned in order for prompts containing `marker`; the last
  /// one repeats once the queue is drained.
  MockProvider& sequence(std::string marker, std::vector<std::string> responses);
  MockProvider& fallback(Responder responder);

  const std::vector<std::string>& prompts() const { return prompts_; }

 protected:
  std::string do_send(const std::string& prompt) override;

 private:
  struct Rule {
    std::string marker;
    Responder responder;
    std::deque<std::string> queue;
    bool queued = false;
  };
  std::mutex mu_;
  std::vector<Rule> rules_;
  Responder fallback_;
  std::vector<std::string> prompts_;
};

/// Endpoint settings shared by the remote chat and embedding clients.
struct RemoteEndpoint {
  std::string base_url;  // e.g. https://api.example.com/v1
  std::string api_key;
  std::string model;
  std::chrono::milliseconds timeout{60000};
  std::chrono::milliseconds backoff{500};
  std::size_t max_in_flight = 4;

  /// Reads PNLC_API_BASE / PNLC_API_KEY; model is left as given.
  static RemoteEndpoint from_env(std::string model);
};

/// Splits "scheme://host[:port]/prefix" into ("scheme://host[:port]", "/prefix").
std::pair<std::string, std::string> split_base_url(const std::string& base_url);

/// POSTs a JSON body to {base}{path} and returns the response body. Throws
/// ProviderError on transport failures and non-2xx statuses.
std::string post_json(const RemoteEndpoint& endpoint, const std::string& path,
                      const std::string& body);

/// OpenAI-compatible chat completions client.
class RemoteChatProvider : public TextProvider {
 public:
  explicit RemoteChatProvider(RemoteEndpoint endpoint);
  ~RemoteChatProvider() override;

  static std::string request_body(const std::string& model, const std::string& prompt);
  /// Extracts choices[0].message.content; throws ProviderError when absent.
  static std::string parse_response(const std::string& body);

 protected:
  std::string do_send(const std::string& prompt) override;
  void before_retry(int retry) override;

 private:
  RemoteEndpoint endpoint_;
  struct Gate;
  std::unique_ptr<Gate> gate_;
};

}  // namespace pnlc
