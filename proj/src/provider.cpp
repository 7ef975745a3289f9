#include "pnlc/provider.hpp"

#include <condition_variable>
#include <cstdlib>
#include <thread>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"
#include "json.hpp"
#include "pnlc/error.hpp"

namespace pnlc {

std::string TextProvider::send(const std::string& prompt) {
  ++calls_;
  std::string last_error;
  for (int attempt = 0; attempt <= max_retries_; ++attempt) {
    ++attempts_;
    if (attempt > 0) before_retry(attempt);
    try {
      return do_send(prompt);
    } catch (const ProviderError& e) {
      last_error = e.what();
    }
  }
  throw ProviderError("provider failed after " + std::to_string(max_retries_ + 1) +
                      " attempts: " + last_error);
}

MockProvider& MockProvider::on(std::string marker, std::string response) {
  return on(std::move(marker), Responder([r = std::move(response)](const std::string&) { return r; }));
}

MockProvider& MockProvider::on(std::string marker, Responder responder) {
  std::lock_guard lock(mu_);
  rules_.push_back(Rule{std::move(marker), std::move(responder), {}, false});
  return *this;
}

MockProvider& MockProvider::sequence(std::string marker, std::vector<std::string> responses) {
  if (responses.empty()) throw InvalidArgument("mock sequence needs at least one response");
  std::lock_guard lock(mu_);
  Rule rule{std::move(marker), nullptr, {}, true};
  rule.queue.assign(responses.begin(), responses.end());
  rules_.push_back(std::move(rule));
  return *this;
}

MockProvider& MockProvider::fallback(Responder responder) {
  std::lock_guard lock(mu_);
  fallback_ = std::move(responder);
  return *this;
}

std::string MockProvider::do_send(const std::string& prompt) {
  std::lock_guard lock(mu_);
  prompts_.push_back(prompt);
  for (auto& rule : rules_) {
    if (prompt.find(rule.marker) == std::string::npos) continue;
    if (!rule.queued) return rule.responder(prompt);
    std::string r = rule.queue.front();
    if (rule.queue.size() > 1) rule.queue.pop_front();
    return r;
  }
  if (fallback_) return fallback_(prompt);
  // Not a transient failure, so not a ProviderError: retrying cannot help.
  throw Error("mock provider: no rule matches prompt: " + prompt.substr(0, 120));
}

RemoteEndpoint RemoteEndpoint::from_env(std::string model) {
  RemoteEndpoint e;
  if (const char* b = std::getenv("PNLC_API_BASE")) e.base_url = b;
  if (const char* k = std::getenv("PNLC_API_KEY")) e.api_key = k;
  e.model = std::move(model);
  return e;
}

std::pair<std::string, std::string> split_base_url(const std::string& base_url) {
  const auto scheme = base_url.find("://");
  if (scheme == std::string::npos) throw InvalidArgument("base url lacks a scheme: " + base_url);
  const auto slash = base_url.find('/', scheme + 3);
  if (slash == std::string::npos) return {base_url, ""};
  std::string prefix = base_url.substr(slash);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {base_url.substr(0, slash), prefix};
}

std::string post_json(const RemoteEndpoint& endpoint, const std::string& path,
                      const std::string& body) {
  if (endpoint.base_url.empty()) throw ProviderError("PNLC_API_BASE is not set");
  auto [host, prefix] = split_base_url(endpoint.base_url);
  httplib::Client cli(host);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(endpoint.timeout);
  cli.set_connection_timeout(secs);
  cli.set_read_timeout(secs);
  cli.set_write_timeout(secs);
  httplib::Headers headers;
  if (!endpoint.api_key.empty()) headers.emplace("Authorization", "Bearer " + endpoint.api_key);
  auto res = cli.Post(prefix + path, headers, body, "application/json");
  if (!res) throw ProviderError("POST " + prefix + path + ": " + httplib::to_string(res.error()));
  if (res->status < 200 || res->status >= 300)
    throw ProviderError("POST " + prefix + path + ": HTTP " + std::to_string(res->status) + ": " +
                        res->body.substr(0, 200));
  return res->body;
}

// Bounds the number of requests in flight across threads.
struct RemoteChatProvider::Gate {
  std::mutex mu;
  std::condition_variable cv;
  std::size_t in_flight = 0;
  std::size_t limit = 1;
};

RemoteChatProvider::RemoteChatProvider(RemoteEndpoint endpoint)
    : endpoint_(std::move(endpoint)), gate_(std::make_unique<Gate>()) {
  gate_->limit = std::max<std::size_t>(1, endpoint_.max_in_flight);
}

RemoteChatProvider::~RemoteChatProvider() = default;

std::string RemoteChatProvider::request_body(const std::string& model, const std::string& prompt) {
  nlohmann::ordered_json j;
  j["model"] = model;
  j["messages"] = nlohmann::ordered_json::array({{{"role", "user"}, {"content", prompt}}});
  return j.dump();
}

std::string RemoteChatProvider::parse_response(const std::string& body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw ProviderError(std::string("chat response is not JSON: ") + e.what());
  }
  const auto* content = [&]() -> const nlohmann::json* {
    if (!j.contains("choices") || !j["choices"].is_array() || j["choices"].empty()) return nullptr;
    const auto& c = j["choices"][0];
    if (!c.contains("message") || !c["message"].contains("content")) return nullptr;
    return &c["message"]["content"];
  }();
  if (!content || !content->is_string())
    throw ProviderError("chat response lacks choices[0].message.content: " + body.substr(0, 200));
  return content->get<std::string>();
}

std::string RemoteChatProvider::do_send(const std::string& prompt) {
  {
    std::unique_lock lock(gate_->mu);
    gate_->cv.wait(lock, [&] { return gate_->in_flight < gate_->limit; });
    ++gate_->in_flight;
  }
  struct Release {
    Gate& g;
    ~Release() {
      {
        std::lock_guard lock(g.mu);
        --g.in_flight;
      }
      g.cv.notify_one();
    }
  } release{*gate_};

  return parse_response(post_json(endpoint_, "/chat/completions", request_body(endpoint_.model, prompt)));
}

void RemoteChatProvider::before_retry(int retry) {
  std::this_thread::sleep_for(endpoint_.backoff * (1 << std::min(retry - 1, 6)));
}

}  // namespace pnlc
