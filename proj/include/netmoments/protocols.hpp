#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "netmoments/network.hpp"
#include "netmoments/sketch_core.hpp"

namespace netmoments {

enum class Protocol { gossip, aloha };
enum class ExchangeMode { exchange, push };

Protocol parse_protocol(const std::string& s);
ExchangeMode parse_exchange_mode(const std::string& s);
const char* to_string(Protocol p);
const char* to_string(ExchangeMode m);

// One sketch per channel.
using NodeState = std::vector<SketchVector>;

// heard(v) = the set of nodes whose initial data v has incorporated.
// |S_u(t)| is the number of v with u in heard(v).
class HeardSets {
 public:
  explicit HeardSets(NodeId n = 0);

  NodeId size() const noexcept { return n_; }
  bool contains(NodeId v, NodeId u) const {
    return (words_[row(v) + static_cast<std::size_t>(u) / 64] >> (u % 64)) & 1U;
  }
  bool subset_of(NodeId a, NodeId b) const;  // heard(a) within heard(b)
  bool equal(NodeId a, NodeId b) const;
  // heard(dst) |= heard(src)
  void absorb(NodeId dst, NodeId src);

  NodeId count(NodeId v) const { return counts_[static_cast<std::size_t>(v)]; }
  NodeId complete_nodes() const noexcept { return complete_; }
  bool all_complete() const noexcept { return complete_ == n_; }
  // sum over v of |heard(v)|, equal to sum over u of |S_u|
  std::int64_t total() const noexcept { return total_; }
  // |S_u|
  NodeId spread_of(NodeId u) const;

 private:
  std::size_t row(NodeId v) const { return static_cast<std::size_t>(v) * words_per_row_; }

  NodeId n_ = 0;
  std::size_t words_per_row_ = 0;
  std::vector<std::uint64_t> words_;
  std::vector<NodeId> counts_;
  NodeId complete_ = 0;
  std::int64_t total_ = 0;
};

// Per-node sketches (possibly empty, for heard-set-only runs) plus heard sets.
struct NetworkState {
  std::vector<NodeState> sketches;
  HeardSets heard;

  explicit NetworkState(NodeId n) : heard(n) {}
  NetworkState(std::vector<NodeState> s, NodeId n) : sketches(std::move(s)), heard(n) {}
  bool has_sketches() const noexcept { return !sketches.empty(); }
};

// One broadcast or point-to-point transmission.
struct Message {
  std::int64_t step = 0;
  NodeId sender = 0;
  std::vector<NodeId> receivers;
  std::int64_t bits = 0;
};

struct MessageLog {
  std::vector<Message> messages;

  std::size_t size() const noexcept { return messages.size(); }
  // step,sender,receivers,bits with receivers separated by ';'
  void write_csv(std::ostream& os) const;
};

struct GossipSchedule {
  NodeRng rng;
  std::int64_t ticks = 0;
  std::int64_t skipped = 0;  // ticks that selected an isolated node

  explicit GossipSchedule(std::uint64_t seed) : rng(make_stream(seed, 0, 0x60551)) {}
  double time(NodeId n) const { return static_cast<double>(ticks) / n; }
};

struct AlohaSchedule {
  NodeRng rng;
  double p_n;
  std::int64_t slots = 0;
  std::vector<std::uint8_t> transmitting;

  AlohaSchedule(std::uint64_t seed, double transmit_probability);
};

// 1 / ln N
double default_aloha_probability(std::int64_t n);
// 50 N ln N for gossip, 500 (sqrt(N / ln N) + ln N) ln N for Aloha
std::int64_t default_max_steps(std::int64_t n, Protocol p);

struct SpreadConfig {
  double beta = 0.1;
  std::int64_t max_steps = 0;  // 0 picks default_max_steps
  ExchangeMode mode = ExchangeMode::exchange;
  double p_n = 0.0;            // 0 picks default_aloha_probability
  bool record_coverage = true;

  void validate() const;
};

struct SpreadReport {
  std::int64_t steps_to_full = 0;
  std::int64_t messages = 0;
  std::int64_t bits_sent = 0;
  std::int64_t bits_per_message = 0;
  std::int64_t skipped_steps = 0;
  // mean over u of |S_u(t)| / N after each step
  std::vector<double> coverage_curve;
  bool completed = false;
};

// One tick: uniform node u, uniform neighbour v, pairwise merge (both ways in exchange mode).
// Returns false when u has no neighbours.
bool gossip_step(NetworkState& net, const Topology& t, GossipSchedule& sched, ExchangeMode mode,
                 std::int64_t bits_per_message, MessageLog* log = nullptr);

// Delivers one slot's broadcasts for a given transmit mask. Returns the number of transmissions.
std::int64_t deliver_slot(NetworkState& net, const Topology& t,
                          std::span<const std::uint8_t> transmitting, std::int64_t slot,
                          std::int64_t bits_per_message, MessageLog* log = nullptr);

// One slot: independent transmissions with probability p_N; v receives u iff v is silent and u
// is its only transmitting neighbour. Returns the number of transmissions.
std::int64_t aloha_step(NetworkState& net, const Topology& t, AlohaSchedule& sched,
                        std::int64_t bits_per_message, MessageLog* log = nullptr);

// Steps until every node has heard every node or max_steps is reached.
SpreadReport run_spreading(NetworkState& net, const Topology& t, Protocol protocol,
                           const SpreadConfig& cfg, std::uint64_t seed,
                           std::int64_t bits_per_message, MessageLog* log = nullptr);

// Re-applies a log to fresh states: each message merges the sender's state into its receivers.
void replay_log(const MessageLog& log, std::vector<NodeState>& states);

struct SpreadingStats {
  std::vector<std::int64_t> steps;  // completed trials, ascending
  std::int64_t trials = 0;
  std::int64_t completed = 0;
  std::int64_t quantile = 0;        // empirical (1 - beta) quantile of steps
  std::int64_t median = 0;
  bool incomplete_warning = false;
};

// Nearest-rank quantile of an ascending sample.
std::int64_t nearest_rank_quantile(const std::vector<std::int64_t>& sorted, double q);

SpreadingStats measure_spreading(const Topology& t, Protocol protocol, const SpreadConfig& cfg,
                                 int trials, std::uint64_t seed);

// messages x channels x r1 x r2 x (quant_bits + 1)
std::int64_t account_bits(std::int64_t messages, const QuantConfig& q, int r1, int r2,
                          int channels);
inline std::int64_t account_bits(const MessageLog& log, const QuantConfig& q, int r1, int r2,
                                 int channels) {
  return account_bits(static_cast<std::int64_t>(log.size()), q, r1, r2, channels);
}

}  // namespace netmoments
