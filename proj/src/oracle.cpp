#include "pnlc/oracle.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_map>

#include "pnlc/error.hpp"

namespace pnlc {

void TabularMDP::validate() const {
  const std::size_t S = states.size(), A = actions.size();
  if (S == 0 || A == 0) throw InvalidArgument("mdp: empty state or action set");
  if (transition.size() != S || initial.size() != S || terminal.size() != S)
    throw InvalidArgument("mdp: table sizes disagree with the state count");
  if (std::set<std::string>(states.begin(), states.end()).size() != S)
    throw InvalidArgument("mdp: state renderings are not injective");
  for (std::size_t s = 0; s < S; ++s) {
    if (transition[s].size() != A) throw InvalidArgument("mdp: wrong action count in a row");
    for (std::size_t a = 0; a < A; ++a) {
      if (transition[s][a].size() != S) throw InvalidArgument("mdp: wrong row width");
      double sum = 0.0;
      for (double p : transition[s][a]) {
        if (p < 0.0) throw InvalidArgument("mdp: negative probability");
        sum += p;
      }
      if (std::abs(sum - 1.0) > 1e-12)
        throw InvalidArgument("mdp: row (" + states[s] + ", " + actions[a] + ") sums to " +
                              std::to_string(sum));
    }
  }
}

std::size_t TabularMDP::state_index(const std::string& rendering) const {
  auto it = std::find(states.begin(), states.end(), rendering);
  if (it == states.end()) throw InvalidArgument("unknown state '" + rendering + "'");
  return static_cast<std::size_t>(it - states.begin());
}

std::size_t TabularMDP::action_index(const std::string& thought) const {
  auto it = std::find(actions.begin(), actions.end(), thought);
  if (it == actions.end()) throw InvalidArgument("unknown action '" + thought + "'");
  return static_cast<std::size_t>(it - actions.begin());
}

void BehaviorPolicy::validate(const TabularMDP& mdp) const {
  if (probs.size() != mdp.num_states()) throw InvalidArgument("policy: wrong state count");
  for (const auto& row : probs) {
    if (row.size() != mdp.num_actions()) throw InvalidArgument("policy: wrong action count");
    double sum = 0.0;
    for (double p : row) {
      if (p < 0.0) throw InvalidArgument("policy: negative probability");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-12) throw InvalidArgument("policy: row does not sum to 1");
  }
}

double discrete_expectile(std::span<const double> values, std::span<const double> weights,
                          double tau) {
  if (values.empty()) throw InvalidArgument("discrete_expectile: empty value list");
  if (values.size() != weights.size()) throw InvalidArgument("discrete_expectile: size mismatch");
  if (!(tau > 0.0 && tau < 1.0)) throw InvalidArgument("discrete_expectile: tau out of range");
  double lo = INFINITY, hi = -INFINITY, total = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (weights[i] < 0.0) throw InvalidArgument("discrete_expectile: negative weight");
    if (weights[i] == 0.0) continue;
    lo = std::min(lo, values[i]);
    hi = std::max(hi, values[i]);
    total += weights[i];
  }
  if (!(total > 0.0)) throw InvalidArgument("discrete_expectile: weights sum to zero");
  if (lo == hi) return lo;

  // f is continuous and strictly decreasing with f(lo) >= 0 >= f(hi).
  auto f = [&](double e) {
    double up = 0.0, down = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (weights[i] == 0.0) continue;
      const double r = values[i] - e;
      if (r > 0.0) up += weights[i] * r;
      else down -= weights[i] * r;
    }
    return tau * up - (1.0 - tau) * down;
  };
  while (hi - lo > 1e-12) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (f(mid) > 0.0) lo = mid;
    else hi = mid;
  }
  // Within the bracket the balance equation is linear; solving it removes
  // the remaining bisection error unless a data point falls inside.
  const double mid = 0.5 * (lo + hi);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (weights[i] == 0.0) continue;
    const double w = (values[i] > mid ? tau : 1.0 - tau) * weights[i];
    num += w * values[i];
    den += w;
  }
  const double exact = num / den;
  return (exact >= lo - 1e-12 && exact <= hi + 1e-12) ? exact : mid;
}

namespace {

// Value iteration for one goal; returns the sweep count.
std::size_t solve_goal(const TabularMDP& mdp, const BehaviorPolicy& beta, double tau, double gamma,
                       std::size_t g, const DpOptions& options, ValueTables& out) {
  const std::size_t S = mdp.num_states(), A = mdp.num_actions();
  std::vector<double> V(S, 0.0), Vn(S, 0.0), Q(S * A, 0.0);
  std::vector<double> qa(A), wa(A);
  for (std::size_t sweep = 1; sweep <= options.max_sweeps; ++sweep) {
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t a = 0; a < A; ++a) {
        const auto& row = mdp.transition[s][a];
        double q = 0.0;
        for (std::size_t sn = 0; sn < S; ++sn) {
          if (row[sn] == 0.0) continue;
          if (sn == g) q += row[sn];
          else if (!mdp.terminal[sn]) q += row[sn] * gamma * V[sn];
        }
        Q[s * A + a] = q;
      }
    double change = 0.0;
    for (std::size_t s = 0; s < S; ++s) {
      for (std::size_t a = 0; a < A; ++a) {
        qa[a] = Q[s * A + a];
        wa[a] = beta.probs[s][a];
      }
      Vn[s] = discrete_expectile(qa, wa, tau);
      change = std::max(change, std::abs(Vn[s] - V[s]));
    }
    V.swap(Vn);
    if (change < options.tolerance) {
      // Final Q consistent with the converged V.
      for (std::size_t s = 0; s < S; ++s)
        for (std::size_t a = 0; a < A; ++a) {
          const auto& row = mdp.transition[s][a];
          double q = 0.0;
          for (std::size_t sn = 0; sn < S; ++sn) {
            if (row[sn] == 0.0) continue;
            if (sn == g) q += row[sn];
            else if (!mdp.terminal[sn]) q += row[sn] * gamma * V[sn];
          }
          out.q[(s * A + a) * S + g] = q;
        }
      for (std::size_t s = 0; s < S; ++s) out.v[s * S + g] = V[s];
      return sweep;
    }
  }
  return 0;
}

}  // namespace

ValueTables dp_fixed_point(const TabularMDP& mdp, const BehaviorPolicy& beta, double tau,
                           double gamma, const DpOptions& options) {
  mdp.validate();
  beta.validate(mdp);
  if (!(gamma > 0.0 && gamma < 1.0)) throw InvalidArgument("dp_fixed_point: gamma must lie in (0, 1)");
  const std::size_t S = mdp.num_states(), A = mdp.num_actions();
  ValueTables t;
  t.num_states = S;
  t.num_actions = A;
  t.q.assign(S * A * S, 0.0);
  t.v.assign(S * S, 0.0);
  std::vector<std::size_t> sweeps(S, 0);
  const long goals = static_cast<long>(S);
#pragma omp parallel for schedule(dynamic) if (options.kernels == KernelMode::kParallel)
  for (long g = 0; g < goals; ++g)
    sweeps[g] = solve_goal(mdp, beta, tau, gamma, static_cast<std::size_t>(g), options, t);
  for (std::size_t g = 0; g < S; ++g) {
    if (sweeps[g] == 0)
      throw NumericError("dp_fixed_point: no convergence for goal '" + mdp.states[g] + "' in " +
                         std::to_string(options.max_sweeps) + " sweeps");
    t.sweeps = std::max(t.sweeps, sweeps[g]);
  }
  for (double q : t.q)
    if (q < -1e-12 || q > 1.0 + 1e-12) throw NumericError("dp_fixed_point: Q outside [0, 1]");
  return t;
}

double reach_value(const TabularMDP& mdp, const BehaviorPolicy& policy, std::size_t s,
                   std::size_t a, std::size_t g, double gamma) {
  mdp.validate();
  policy.validate(mdp);
  const std::size_t S = mdp.num_states();
  if (s >= S || g >= S || a >= mdp.num_actions()) throw InvalidArgument("reach_value: index out of range");
  // W(x): discounted arrival value from a non-goal, non-terminal state x.
  //   W = b + gamma * M W  with M restricted to continuing states.
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(static_cast<long>(S), static_cast<long>(S));
  Eigen::VectorXd b = Eigen::VectorXd::Zero(static_cast<long>(S));
  for (std::size_t x = 0; x < S; ++x) {
    if (x == g || mdp.terminal[x]) continue;
    for (std::size_t act = 0; act < mdp.num_actions(); ++act) {
      const double pa = policy.probs[x][act];
      if (pa == 0.0) continue;
      for (std::size_t y = 0; y < S; ++y) {
        const double p = pa * mdp.transition[x][act][y];
        if (p == 0.0) continue;
        if (y == g) b[static_cast<long>(x)] += p;
        else if (!mdp.terminal[y]) M(static_cast<long>(x), static_cast<long>(y)) += p;
      }
    }
  }
  Eigen::MatrixXd I = Eigen::MatrixXd::Identity(static_cast<long>(S), static_cast<long>(S));
  const Eigen::VectorXd W = (I - gamma * M).partialPivLu().solve(b);
  double value = 0.0;
  for (std::size_t y = 0; y < S; ++y) {
    const double p = mdp.transition[s][a][y];
    if (p == 0.0) continue;
    if (y == g) value += p;
    else if (!mdp.terminal[y]) value += p * gamma * W[static_cast<long>(y)];
  }
  return value;
}

EmpiricalTables empirical_fixed_point(const std::vector<TransitionSample>& samples, double tau,
                                      double gamma, const DpOptions& options) {
  if (samples.empty()) throw InvalidArgument("empirical_fixed_point: no samples");
  EmpiricalTables out;

  // Integer ids for texts, (s,g) value slots and (s,a,g) keys.
  std::unordered_map<std::string, std::uint32_t> text_id;
  auto tid = [&](const std::string& t) {
    return text_id.emplace(t, static_cast<std::uint32_t>(text_id.size())).first->second;
  };
  auto pair_key = [](std::uint64_t a, std::uint64_t b) { return (a << 32) | b; };

  std::unordered_map<std::uint64_t, std::size_t> vslot;  // (s,g) -> index
  std::vector<std::pair<std::string, std::string>> vnames;
  std::map<EmpiricalTables::Key, std::size_t> qslot;
  struct QEntry {
    std::size_t v;  // owning (s,g) slot
    double reward_sum = 0.0;
    std::size_t n = 0;
    std::map<std::uint64_t, std::size_t> boot;  // (s',g) key -> non-terminal count
  };
  std::vector<QEntry> entries;
  std::vector<EmpiricalTables::Key> qnames;

  for (const auto& smp : samples) {
    const std::uint64_t s = tid(smp.state_text), g = tid(smp.goal_text);
    tid(smp.thought_text);
    tid(smp.next_state_text);
    auto [vit, vfresh] = vslot.emplace(pair_key(s, g), vnames.size());
    if (vfresh) vnames.emplace_back(smp.state_text, smp.goal_text);
    EmpiricalTables::Key key{smp.state_text, smp.thought_text, smp.goal_text};
    auto [qit, qfresh] = qslot.emplace(key, entries.size());
    if (qfresh) {
      entries.emplace_back();
      entries.back().v = vit->second;
      qnames.push_back(key);
    }
    QEntry& e = entries[qit->second];
    e.reward_sum += smp.reach_reward;
    ++e.n;
    if (!smp.terminal) ++e.boot[pair_key(tid(smp.next_state_text), g)];
  }

  // Resolve bootstrap targets to value slots; unseen pairs read V = 0.
  struct Boot {
    std::size_t slot;
    double weight;
  };
  std::vector<std::vector<Boot>> boots(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i)
    for (const auto& [k, count] : entries[i].boot) {
      auto it = vslot.find(k);
      if (it == vslot.end()) {
        out.unseen_bootstraps += count;
        continue;
      }
      boots[i].push_back({it->second, static_cast<double>(count)});
    }

  // Actions per value slot, weighted by sample counts.
  std::vector<std::vector<std::size_t>> members(vnames.size());
  for (std::size_t i = 0; i < entries.size(); ++i) members[entries[i].v].push_back(i);

  std::vector<double> V(vnames.size(), 0.0), Q(entries.size(), 0.0);
  std::vector<double> vals, wts;
  for (std::size_t sweep = 1;; ++sweep) {
    if (sweep > options.max_sweeps)
      throw NumericError("empirical_fixed_point: no convergence in " +
                         std::to_string(options.max_sweeps) + " sweeps");
    for (std::size_t i = 0; i < entries.size(); ++i) {
      double acc = entries[i].reward_sum;
      for (const auto& b : boots[i]) acc += gamma * b.weight * V[b.slot];
      Q[i] = acc / static_cast<double>(entries[i].n);
    }
    double change = 0.0;
    for (std::size_t v = 0; v < V.size(); ++v) {
      vals.clear();
      wts.clear();
      for (std::size_t i : members[v]) {
        vals.push_back(Q[i]);
        wts.push_back(static_cast<double>(entries[i].n));
      }
      const double nv = discrete_expectile(vals, wts, tau);
      change = std::max(change, std::abs(nv - V[v]));
      V[v] = nv;
    }
    if (change < options.tolerance) {
      out.sweeps = sweep;
      break;
    }
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    double acc = entries[i].reward_sum;
    for (const auto& b : boots[i]) acc += gamma * b.weight * V[b.slot];
    out.q[qnames[i]] = acc / static_cast<double>(entries[i].n);
    out.counts[qnames[i]] = entries[i].n;
  }
  for (std::size_t v = 0; v < V.size(); ++v) out.v[vnames[v]] = V[v];
  return out;
}

std::pair<TabularMDP, BehaviorPolicy> empirical_model(const std::vector<Trajectory>& trajs) {
  TabularMDP mdp;
  std::map<std::string, std::size_t> sid, aid;
  auto state = [&](const std::string& s) {
    auto [it, fresh] = sid.emplace(s, mdp.states.size());
    if (fresh) mdp.states.push_back(s);
    return it->second;
  };
  auto action = [&](const std::string& a) {
    auto [it, fresh] = aid.emplace(a, mdp.actions.size());
    if (fresh) mdp.actions.push_back(a);
    return it->second;
  };
  std::map<std::tuple<std::size_t, std::size_t, std::size_t>, double> counts;
  std::map<std::size_t, double> starts;
  for (const auto& t : trajs) {
    if (t.steps.empty()) continue;
    auto sum = [&](std::size_t i) -> const std::string& {
      if (!t.steps[i].summary) throw InvalidArgument("empirical_model: missing summary in " + t.id);
      return *t.steps[i].summary;
    };
    starts[state(sum(0))] += 1.0;
    for (std::size_t i = 0; i + 1 < t.steps.size(); ++i)
      counts[{state(sum(i)), action(t.steps[i].thought), state(sum(i + 1))}] += 1.0;
    state(sum(t.steps.size() - 1));
  }
  if (mdp.actions.empty()) throw InvalidArgument("empirical_model: no transitions");
  const std::size_t S = mdp.states.size(), A = mdp.actions.size();
  mdp.transition.assign(S, std::vector<std::vector<double>>(A, std::vector<double>(S, 0.0)));
  mdp.initial.assign(S, 0.0);
  mdp.terminal.assign(S, true);
  BehaviorPolicy beta;
  beta.probs.assign(S, std::vector<double>(A, 0.0));
  std::vector<std::vector<double>> sa(S, std::vector<double>(A, 0.0));
  for (const auto& [k, c] : counts) sa[std::get<0>(k)][std::get<1>(k)] += c;
  for (const auto& [k, c] : counts) {
    const auto [s, a, sn] = k;
    mdp.transition[s][a][sn] = c / sa[s][a];
    mdp.terminal[s] = false;
  }
  double nstart = 0.0;
  for (const auto& [s, c] : starts) nstart += c;
  for (const auto& [s, c] : starts) mdp.initial[s] = c / nstart;
  for (std::size_t s = 0; s < S; ++s) {
    double tot = 0.0;
    for (std::size_t a = 0; a < A; ++a) tot += sa[s][a];
    for (std::size_t a = 0; a < A; ++a) {
      // Unobserved (s, a) pairs stay in place; they carry no policy mass.
      if (sa[s][a] == 0.0) mdp.transition[s][a][s] = 1.0;
      beta.probs[s][a] = tot > 0.0 ? sa[s][a] / tot : 1.0 / static_cast<double>(A);
    }
  }
  return {std::move(mdp), std::move(beta)};
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace

void write_oracle_csv(std::ostream& out, const TabularMDP& mdp, const ValueTables& tables) {
  out << "state,action,goal,q\n";
  for (std::size_t s = 0; s < tables.num_states; ++s)
    for (std::size_t a = 0; a < tables.num_actions; ++a)
      for (std::size_t g = 0; g < tables.num_states; ++g)
        out << csv_field(mdp.states[s]) << ',' << csv_field(mdp.actions[a]) << ','
            << csv_field(mdp.states[g]) << ',' << num(tables.Q(s, a, g)) << '\n';
}

void write_oracle_csv(std::ostream& out, const EmpiricalTables& tables) {
  out << "state,action,goal,q\n";
  for (const auto& [k, q] : tables.q)
    out << csv_field(k.state) << ',' << csv_field(k.thought) << ',' << csv_field(k.goal) << ','
        << num(q) << '\n';
}

}  // namespace pnlc
