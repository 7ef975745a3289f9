#include "pnlc/critic.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>

#include "pnlc/error.hpp"

namespace pnlc {

std::string polarity_name(Polarity p) { return p == Polarity::kPositive ? "positive" : "negative"; }

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// Position of marker "<k>." at a line start or after whitespace and
// followed by whitespace, searching from `from`; npos when absent.
std::size_t find_marker(const std::string& text, std::size_t k, std::size_t from, std::size_t& len) {
  const std::string m = std::to_string(k) + ".";
  for (std::size_t p = text.find(m, from); p != std::string::npos; p = text.find(m, p + 1)) {
    const bool start_ok = p == 0 || std::isspace(static_cast<unsigned char>(text[p - 1]));
    const std::size_t after = p + m.size();
    const bool end_ok = after < text.size() && std::isspace(static_cast<unsigned char>(text[after]));
    if (start_ok && end_ok) {
      len = m.size();
      return p;
    }
  }
  return std::string::npos;
}

}  // namespace

std::vector<std::string> parse_numbered(const std::string& response, std::size_t limit) {
  std::vector<std::string> items;
  std::size_t len = 0;
  std::size_t pos = find_marker(response, 1, 0, len);
  for (std::size_t k = 1; pos != std::string::npos && items.size() < limit; ++k) {
    const std::size_t body = pos + len;
    std::size_t next_len = 0;
    const std::size_t next = find_marker(response, k + 1, body, next_len);
    std::size_t end = response.find('\n', body);
    if (end == std::string::npos) end = response.size();
    if (next != std::string::npos) end = std::min(end, next);
    std::string item = trim(response.substr(body, end - body));
    if (item.empty()) break;
    items.push_back(std::move(item));
    pos = next;
    len = next_len;
  }
  return items;
}

std::string fill_goal_prompt(const std::string& prompt_template, const std::string& state,
                             const std::string& thought, Polarity polarity, std::size_t count) {
  std::string out = prompt_template;
  const std::pair<std::string, std::string> subs[] = {{"{state}", state},
                                                      {"{thought}", thought},
                                                      {"{polarity}", polarity_name(polarity)},
                                                      {"{count}", std::to_string(count)}};
  for (const auto& [key, value] : subs)
    for (std::size_t p = out.find(key); p != std::string::npos; p = out.find(key, p + value.size()))
      out.replace(p, key.size(), value);
  return out;
}

std::vector<GoalText> propose_goals(const std::string& state_summary, const std::string& thought,
                                    TextProvider& provider, std::size_t n,
                                    const std::string& prompt_template) {
  if (n < 2 || n % 2 != 0) throw InvalidArgument("propose_goals: n must be even and >= 2");
  const std::size_t half = n / 2;
  std::vector<GoalText> out;
  for (Polarity pol : {Polarity::kPositive, Polarity::kNegative}) {
    const std::string prompt = fill_goal_prompt(prompt_template, state_summary, thought, pol, half);
    std::string reply = provider.send(prompt);
    auto items = parse_numbered(reply, half);
    if (items.size() < half) {
      reply = provider.send(prompt + "\nAnswer with exactly " + std::to_string(half) +
                            " numbered goals (1. ... 2. ...).");
      items = parse_numbered(reply, half);
    }
    if (items.size() < half)
      throw ProviderError("propose_goals: expected " + std::to_string(half) + " " +
                          polarity_name(pol) + " goals, got " + std::to_string(items.size()) +
                          "; raw response: " + reply);
    for (auto& g : items) out.emplace_back(std::move(g), pol);
  }
  return out;
}

std::string format_likelihood(double likelihood) {
  double x = std::clamp(likelihood, 0.0, 1.0);
  if (std::isnan(likelihood)) x = 0.0;
  // Half-up at the second decimal; the nudge absorbs binary representation
  // error of values such as 0.125 * 100.
  const double cents = std::floor(x * 100.0 + 0.5 + 1e-9);
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.2f", cents / 100.0);
  return buf;
}

std::string render(const NaturalLanguageValue& value) {
  std::string out;
  for (const auto& p : value.proposals) {
    const char* mark = value.scalar ? "[=]" : (p.polarity == Polarity::kPositive ? "[+]" : "[-]");
    out += std::string(mark) + " " + format_likelihood(p.likelihood) + " \xE2\x80\x94 " + p.text + "\n";
  }
  return out;
}

void canonicalize(NaturalLanguageValue& value) {
  std::stable_sort(value.proposals.begin(), value.proposals.end(),
                   [](const GoalProposal& a, const GoalProposal& b) {
                     if (a.polarity != b.polarity) return a.polarity == Polarity::kPositive;
                     if (a.likelihood != b.likelihood) return a.likelihood > b.likelihood;
                     return a.text < b.text;
                   });
  value.rendered = render(value);
}

namespace {

void check_bundle(const CriticBundle& c) {
  if (!c.checkpoint || !c.embedder) throw InvalidArgument("critic: checkpoint and embedder are required");
  if (c.embedder->fingerprint() != c.checkpoint->embedder_fingerprint)
    throw InvalidArgument("critic: embedder fingerprint '" + c.embedder->fingerprint() +
                          "' differs from checkpoint '" + c.checkpoint->embedder_fingerprint + "'");
}

double clamp01(double x) { return std::isnan(x) ? 0.0 : std::clamp(x, 0.0, 1.0); }

}  // namespace

NaturalLanguageValue evaluate(const CriticBundle& critic, const std::string& state_summary,
                              const std::string& thought, const std::vector<GoalText>& goals) {
  check_bundle(critic);
  std::vector<std::string> texts = {state_summary, thought};
  for (const auto& g : goals) {
    if (g.first.empty()) throw InvalidArgument("critic: empty goal text");
    texts.push_back(g.first);
  }
  std::vector<Embedding> embs;
  try {
    embs = embed_batch(texts, *critic.embedder, critic.cache);
  } catch (const ProviderError& e) {
    throw ProviderError(std::string("critic: embedding goals failed: ") + e.what());
  }
  NaturalLanguageValue nlv;
  for (std::size_t i = 0; i < goals.size(); ++i) {
    GoalProposal p;
    p.text = goals[i].first;
    p.polarity = goals[i].second;
    p.embedding = embs[i + 2];
    p.likelihood = clamp01(q_value(*critic.checkpoint, embs[0], embs[1], p.embedding));
    nlv.proposals.push_back(std::move(p));
  }
  canonicalize(nlv);
  return nlv;
}

NaturalLanguageValue evaluate_scalar(const CriticBundle& critic, const std::string& state_summary,
                                     const std::string& thought) {
  check_bundle(critic);
  const std::vector<std::string> texts = {state_summary, thought, kGoallessGoal};
  const auto embs = embed_batch(texts, *critic.embedder, critic.cache);
  NaturalLanguageValue nlv;
  nlv.scalar = true;
  GoalProposal p;
  p.text = "estimated chance of success";
  p.embedding = embs[2];
  p.likelihood = clamp01(q_value(*critic.checkpoint, embs[0], embs[1], embs[2]));
  nlv.proposals.push_back(std::move(p));
  nlv.rendered = render(nlv);
  return nlv;
}

}  // namespace pnlc
