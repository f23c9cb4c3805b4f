#include "netmoments/protocols.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <ostream>

namespace netmoments {

Protocol parse_protocol(const std::string& s) {
  if (s == "gossip") return Protocol::gossip;
  if (s == "aloha") return Protocol::aloha;
  throw ConfigError("unknown protocol '" + s + "' (gossip|aloha)");
}

ExchangeMode parse_exchange_mode(const std::string& s) {
  if (s == "exchange") return ExchangeMode::exchange;
  if (s == "push") return ExchangeMode::push;
  throw ConfigError("unknown exchange mode '" + s + "' (push|exchange)");
}

const char* to_string(Protocol p) { return p == Protocol::gossip ? "gossip" : "aloha"; }
const char* to_string(ExchangeMode m) { return m == ExchangeMode::exchange ? "exchange" : "push"; }

// ---------------------------------------------------------------------------

HeardSets::HeardSets(NodeId n)
    : n_(n),
      words_per_row_((static_cast<std::size_t>(n) + 63) / 64),
      words_(static_cast<std::size_t>(n) * words_per_row_, 0),
      counts_(static_cast<std::size_t>(n), 1),
      complete_(n == 1 ? 1 : 0),
      total_(n) {
  for (NodeId v = 0; v < n; ++v) {
    words_[row(v) + static_cast<std::size_t>(v) / 64] |= std::uint64_t{1} << (v % 64);
  }
}

bool HeardSets::subset_of(NodeId a, NodeId b) const {
  const std::uint64_t* pa = &words_[row(a)];
  const std::uint64_t* pb = &words_[row(b)];
  for (std::size_t w = 0; w < words_per_row_; ++w) {
    if (pa[w] & ~pb[w]) return false;
  }
  return true;
}

bool HeardSets::equal(NodeId a, NodeId b) const {
  return std::equal(words_.begin() + static_cast<std::ptrdiff_t>(row(a)),
                    words_.begin() + static_cast<std::ptrdiff_t>(row(a) + words_per_row_),
                    words_.begin() + static_cast<std::ptrdiff_t>(row(b)));
}

void HeardSets::absorb(NodeId dst, NodeId src) {
  std::uint64_t* pd = &words_[row(dst)];
  const std::uint64_t* ps = &words_[row(src)];
  NodeId c = 0;
  for (std::size_t w = 0; w < words_per_row_; ++w) {
    pd[w] |= ps[w];
    c += static_cast<NodeId>(std::popcount(pd[w]));
  }
  auto& old = counts_[static_cast<std::size_t>(dst)];
  total_ += c - old;
  if (old != n_ && c == n_) ++complete_;
  old = c;
}

NodeId HeardSets::spread_of(NodeId u) const {
  NodeId s = 0;
  for (NodeId v = 0; v < n_; ++v) s += contains(v, u) ? 1 : 0;
  return s;
}

// ---------------------------------------------------------------------------

void MessageLog::write_csv(std::ostream& os) const {
  os << "step,sender,receivers,bits\n";
  for (const auto& m : messages) {
    os << m.step << ',' << m.sender << ',';
    for (std::size_t i = 0; i < m.receivers.size(); ++i) os << (i ? ";" : "") << m.receivers[i];
    os << ',' << m.bits << '\n';
  }
}

AlohaSchedule::AlohaSchedule(std::uint64_t seed, double transmit_probability)
    : rng(make_stream(seed, 0, 0xa10a)), p_n(transmit_probability) {
  if (!(p_n > 0.0 && p_n < 1.0)) throw ConfigError("p_N must be in (0, 1)");
}

double default_aloha_probability(std::int64_t n) {
  if (n < 3) return 0.5;
  return std::min(0.5, 1.0 / std::log(static_cast<double>(n)));
}

std::int64_t default_max_steps(std::int64_t n, Protocol p) {
  const double nn = static_cast<double>(std::max<std::int64_t>(n, 3));
  const double ln = std::log(nn);
  const double steps = p == Protocol::gossip ? 50.0 * nn * ln
                                             : 500.0 * (std::sqrt(nn / ln) + ln) * ln;
  return static_cast<std::int64_t>(std::ceil(steps));
}

void SpreadConfig::validate() const {
  if (!(beta > 0.0 && beta < 1.0)) throw ConfigError("spreading beta must be in (0, 1)");
  if (max_steps < 0) throw ConfigError("max_steps must be non-negative");
  if (p_n != 0.0 && !(p_n > 0.0 && p_n < 1.0)) throw ConfigError("p_N must be in (0, 1)");
}

namespace {

// Pulls src into dst. A sketch equals the min over its heard set, so a subset heard set
// means the merge cannot change anything.
void receive(NetworkState& net, NodeId dst, NodeId src) {
  if (net.heard.subset_of(src, dst)) return;
  if (net.has_sketches()) {
    auto& d = net.sketches[static_cast<std::size_t>(dst)];
    const auto& s = net.sketches[static_cast<std::size_t>(src)];
    for (std::size_t c = 0; c < d.size(); ++c) merge_into(d[c], s[c]);
  }
  net.heard.absorb(dst, src);
}

void exchange(NetworkState& net, NodeId u, NodeId v) {
  const bool u_in_v = net.heard.subset_of(u, v);
  const bool v_in_u = net.heard.subset_of(v, u);
  if (u_in_v && v_in_u) return;
  if (u_in_v) {
    if (net.has_sketches()) net.sketches[u] = net.sketches[v];
    net.heard.absorb(u, v);
    return;
  }
  if (v_in_u) {
    if (net.has_sketches()) net.sketches[v] = net.sketches[u];
    net.heard.absorb(v, u);
    return;
  }
  if (net.has_sketches()) {
    auto& a = net.sketches[static_cast<std::size_t>(u)];
    auto& b = net.sketches[static_cast<std::size_t>(v)];
    for (std::size_t c = 0; c < a.size(); ++c) merge_into(a[c], b[c]);
    b = a;
  }
  net.heard.absorb(u, v);
  net.heard.absorb(v, u);
}

}  // namespace

bool gossip_step(NetworkState& net, const Topology& t, GossipSchedule& sched, ExchangeMode mode,
                 std::int64_t bits_per_message, MessageLog* log) {
  const NodeId n = t.size();
  const auto u = static_cast<NodeId>(std::uniform_int_distribution<NodeId>(0, n - 1)(sched.rng));
  ++sched.ticks;
  const auto nbrs = t.neighbors(u);
  if (nbrs.empty()) {
    ++sched.skipped;
    return false;
  }
  const NodeId v =
      nbrs[std::uniform_int_distribution<std::size_t>(0, nbrs.size() - 1)(sched.rng)];
  if (mode == ExchangeMode::exchange) {
    exchange(net, u, v);
  } else {
    receive(net, v, u);
  }
  if (log) {
    log->messages.push_back({sched.ticks, u, {v}, bits_per_message});
    if (mode == ExchangeMode::exchange) log->messages.push_back({sched.ticks, v, {u}, bits_per_message});
  }
  return true;
}

std::int64_t deliver_slot(NetworkState& net, const Topology& t,
                          std::span<const std::uint8_t> transmitting, std::int64_t slot,
                          std::int64_t bits_per_message, MessageLog* log) {
  const NodeId n = t.size();
  if (static_cast<NodeId>(transmitting.size()) != n) {
    throw StructuralError("transmit mask does not match topology");
  }
  std::vector<NodeId> heard_count(static_cast<std::size_t>(n), 0);
  std::vector<NodeId> heard_from(static_cast<std::size_t>(n), -1);
  std::int64_t transmissions = 0;
  for (NodeId u = 0; u < n; ++u) {
    if (!transmitting[u]) continue;
    ++transmissions;
    for (NodeId v : t.neighbors(u)) {
      ++heard_count[v];
      heard_from[v] = u;
    }
  }
  std::vector<std::vector<NodeId>> receivers;
  if (log) receivers.resize(static_cast<std::size_t>(n));
  // Transmitters never receive in the same slot, so in-place merges see last slot's states.
  for (NodeId v = 0; v < n; ++v) {
    if (transmitting[v] || heard_count[v] != 1) continue;
    const NodeId u = heard_from[v];
    receive(net, v, u);
    if (log) receivers[u].push_back(v);
  }
  if (log) {
    for (NodeId u = 0; u < n; ++u) {
      if (transmitting[u]) log->messages.push_back({slot, u, std::move(receivers[u]), bits_per_message});
    }
  }
  return transmissions;
}

std::int64_t aloha_step(NetworkState& net, const Topology& t, AlohaSchedule& sched,
                        std::int64_t bits_per_message, MessageLog* log) {
  const auto n = static_cast<std::size_t>(t.size());
  sched.transmitting.assign(n, 0);
  ++sched.slots;
  for (std::size_t u = 0; u < n; ++u) sched.transmitting[u] = uniform01(sched.rng) < sched.p_n ? 1 : 0;
  return deliver_slot(net, t, sched.transmitting, sched.slots, bits_per_message, log);
}

SpreadReport run_spreading(NetworkState& net, const Topology& t, Protocol protocol,
                           const SpreadConfig& cfg, std::uint64_t seed,
                           std::int64_t bits_per_message, MessageLog* log) {
  cfg.validate();
  const NodeId n = t.size();
  if (net.heard.size() != n) throw StructuralError("network state does not match topology");
  if (net.has_sketches() && static_cast<NodeId>(net.sketches.size()) != n) {
    throw StructuralError("sketch count does not match topology");
  }
  SpreadReport rep;
  rep.bits_per_message = bits_per_message;
  const std::int64_t cap = cfg.max_steps > 0 ? cfg.max_steps : default_max_steps(n, protocol);
  auto record = [&] {
    if (cfg.record_coverage) {
      rep.coverage_curve.push_back(static_cast<double>(net.heard.total()) /
                                   (static_cast<double>(n) * n));
    }
  };
  if (net.heard.all_complete()) {
    rep.completed = true;
    return rep;
  }
  if (protocol == Protocol::gossip) {
    GossipSchedule sched(seed);
    while (!net.heard.all_complete() && sched.ticks < cap) {
      if (gossip_step(net, t, sched, cfg.mode, bits_per_message, log)) {
        rep.messages += cfg.mode == ExchangeMode::exchange ? 2 : 1;
      }
      record();
    }
    rep.steps_to_full = sched.ticks;
    rep.skipped_steps = sched.skipped;
  } else {
    const double p = cfg.p_n > 0.0 ? cfg.p_n : default_aloha_probability(n);
    AlohaSchedule sched(seed, p);
    while (!net.heard.all_complete() && sched.slots < cap) {
      rep.messages += aloha_step(net, t, sched, bits_per_message, log);
      record();
    }
    rep.steps_to_full = sched.slots;
  }
  rep.completed = net.heard.all_complete();
  rep.bits_sent = rep.messages * bits_per_message;
  return rep;
}

void replay_log(const MessageLog& log, std::vector<NodeState>& states) {
  for (const auto& m : log.messages) {
    const NodeState snapshot = states.at(static_cast<std::size_t>(m.sender));
    for (NodeId r : m.receivers) {
      auto& d = states.at(static_cast<std::size_t>(r));
      for (std::size_t c = 0; c < d.size(); ++c) merge_into(d[c], snapshot[c]);
    }
  }
}

std::int64_t nearest_rank_quantile(const std::vector<std::int64_t>& sorted, double q) {
  if (sorted.empty()) return 0;
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(sorted.size())));
  return sorted[std::clamp<std::size_t>(rank, 1, sorted.size()) - 1];
}

SpreadingStats measure_spreading(const Topology& t, Protocol protocol, const SpreadConfig& cfg,
                                 int trials, std::uint64_t seed) {
  if (trials < 1) throw ConfigError("measure_spreading: trials must be >= 1");
  SpreadConfig local = cfg;
  local.record_coverage = false;
  SpreadingStats stats;
  stats.trials = trials;
  for (int i = 0; i < trials; ++i) {
    NetworkState net(t.size());
    const auto rep = run_spreading(net, t, protocol, local, keyed_hash(seed, 0x7157, i), 0);
    if (rep.completed) stats.steps.push_back(rep.steps_to_full);
  }
  std::sort(stats.steps.begin(), stats.steps.end());
  stats.completed = static_cast<std::int64_t>(stats.steps.size());
  stats.incomplete_warning = stats.completed < stats.trials;
  stats.quantile = nearest_rank_quantile(stats.steps, 1.0 - cfg.beta);
  stats.median = nearest_rank_quantile(stats.steps, 0.5);
  return stats;
}

std::int64_t account_bits(std::int64_t messages, const QuantConfig& q, int r1, int r2,
                          int channels) {
  return messages * channels * std::int64_t{r1} * r2 * q.wire_bits();
}

}  // namespace netmoments
