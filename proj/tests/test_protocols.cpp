#include <doctest.h>

#include <algorithm>
#include <map>
#include <random>
#include <sstream>

#include "netmoments/protocols.hpp"

using namespace netmoments;

namespace {

const QuantConfig kQ = QuantConfig::defaults(64, 0.01);

std::vector<NodeState> random_states(NodeId n, int r1, int r2, std::uint64_t seed) {
  NodeRng rng(seed);
  std::vector<NodeState> s(static_cast<std::size_t>(n));
  for (auto& st : s) {
    auto v = SketchVector::infinite(r1, r2, kQ, Channel::sign);
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
      for (Eigen::Index j = 0; j < v.cols(); ++j) v.entries(i, j) = draw_truncated_exp(1.0, kQ, rng);
    }
    st.push_back(std::move(v));
  }
  return s;
}

// min over heard(v) of the initial sketches
bool consistent(const NetworkState& net, const std::vector<NodeState>& init) {
  const NodeId n = net.heard.size();
  for (NodeId v = 0; v < n; ++v) {
    auto expect = SketchVector::infinite(static_cast<int>(init[0][0].rows()),
                                         static_cast<int>(init[0][0].cols()), kQ, Channel::sign);
    for (NodeId u = 0; u < n; ++u) {
      if (net.heard.contains(v, u)) merge_into(expect, init[u][0]);
    }
    if (!(expect == net.sketches[v][0])) return false;
  }
  return true;
}

Topology path_graph(NodeId n) {
  Topology t(n);
  for (NodeId u = 0; u + 1 < n; ++u) t.add_edge(u, u + 1);
  return t;
}

}  // namespace

TEST_CASE("parsing") {
  CHECK(parse_protocol("gossip") == Protocol::gossip);
  CHECK(parse_protocol("aloha") == Protocol::aloha);
  CHECK_THROWS_AS(parse_protocol("tcp"), ConfigError);
  CHECK(parse_exchange_mode("push") == ExchangeMode::push);
  CHECK(std::string(to_string(ExchangeMode::exchange)) == "exchange");
  CHECK(std::string(to_string(Protocol::aloha)) == "aloha");
}

TEST_CASE("heard sets") {
  HeardSets h(70);
  CHECK(h.count(3) == 1);
  CHECK(h.contains(3, 3));
  CHECK_FALSE(h.contains(3, 4));
  CHECK(h.total() == 70);
  CHECK(h.spread_of(69) == 1);
  h.absorb(3, 69);
  CHECK(h.contains(3, 69));
  CHECK(h.count(3) == 2);
  CHECK(h.spread_of(69) == 2);
  CHECK(h.subset_of(69, 3));
  CHECK_FALSE(h.subset_of(3, 69));
  h.absorb(69, 3);
  CHECK(h.equal(3, 69));
  CHECK(h.total() == 72);
  CHECK_FALSE(h.all_complete());
  CHECK(HeardSets(1).all_complete());
}

TEST_CASE("defaults") {
  CHECK(default_aloha_probability(1000) == doctest::Approx(1.0 / std::log(1000.0)));
  CHECK(default_aloha_probability(3) == doctest::Approx(0.5));
  CHECK(default_max_steps(100, Protocol::gossip) == static_cast<std::int64_t>(std::ceil(50 * 100 * std::log(100.0))));
  CHECK_THROWS_AS(AlohaSchedule(1, 0.0), ConfigError);
  CHECK_THROWS_AS(AlohaSchedule(1, 1.0), ConfigError);
  SpreadConfig bad;
  bad.beta = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("two nodes finish gossip in one tick") {
  const auto t = complete_graph(2);
  for (auto mode : {ExchangeMode::exchange, ExchangeMode::push}) {
    for (std::uint64_t s = 0; s < 10; ++s) {
      SpreadConfig cfg;
      cfg.mode = mode;
      NetworkState net(2);
      const auto rep = run_spreading(net, t, Protocol::gossip, cfg, s, 7);
      CHECK(rep.completed);
      if (mode == ExchangeMode::exchange) {
        CHECK(rep.steps_to_full == 1);
        CHECK(rep.messages == 2);
        CHECK(rep.bits_sent == 14);
      } else {
        CHECK(rep.steps_to_full >= 2);
      }
    }
  }
}

TEST_CASE("gossip step postcondition") {
  const auto t = cycle_graph(10);
  auto init = random_states(10, 2, 3, 1);
  NetworkState net(init, 10);
  GossipSchedule sched(5);
  MessageLog log;
  for (int i = 0; i < 30; ++i) {
    const auto before = net.heard;
    REQUIRE(gossip_step(net, t, sched, ExchangeMode::exchange, 1, &log));
    const auto& m = log.messages[log.size() - 2];
    const NodeId u = m.sender;
    const NodeId v = m.receivers[0];
    CHECK(t.has_edge(u, v));
    CHECK(net.heard.equal(u, v));
    for (NodeId w = 0; w < 10; ++w) {
      CHECK(net.heard.contains(u, w) == (before.contains(u, w) || before.contains(v, w)));
    }
    CHECK(net.sketches[u][0] == net.sketches[v][0]);
  }
  CHECK(consistent(net, init));
  CHECK(sched.ticks == 30);
}

TEST_CASE("push mode only updates the receiver") {
  const auto t = complete_graph(6);
  NetworkState net(6);
  GossipSchedule sched(3);
  MessageLog log;
  gossip_step(net, t, sched, ExchangeMode::push, 1, &log);
  REQUIRE(log.size() == 1);
  const NodeId u = log.messages[0].sender;
  const NodeId v = log.messages[0].receivers[0];
  CHECK(net.heard.contains(v, u));
  CHECK_FALSE(net.heard.contains(u, v));
}

TEST_CASE("isolated nodes skip the tick") {
  Topology t(3);
  t.add_edge(0, 1);
  NetworkState net(3);
  SpreadConfig cfg;
  cfg.max_steps = 500;
  const auto rep = run_spreading(net, t, Protocol::gossip, cfg, 1, 1);
  CHECK_FALSE(rep.completed);
  CHECK(rep.steps_to_full == 500);
  CHECK(rep.skipped_steps > 100);
  CHECK(rep.messages == 2 * (500 - rep.skipped_steps));
}

TEST_CASE("slot delivery: single transmitter and collisions") {
  // star: 0 is the centre
  Topology star(4);
  for (NodeId u = 1; u < 4; ++u) star.add_edge(0, u);
  {
    NetworkState net(4);
    MessageLog log;
    const std::vector<std::uint8_t> tx{1, 0, 0, 0};
    CHECK(deliver_slot(net, star, tx, 1, 5, &log) == 1);
    for (NodeId u = 1; u < 4; ++u) CHECK(net.heard.contains(u, 0));
    REQUIRE(log.size() == 1);
    CHECK(log.messages[0].receivers == std::vector<NodeId>{1, 2, 3});
  }
  {
    NetworkState net(4);
    MessageLog log;
    const std::vector<std::uint8_t> tx{0, 1, 1, 0};
    CHECK(deliver_slot(net, star, tx, 1, 5, &log) == 2);
    // the centre hears two neighbours at once
    CHECK(net.heard.count(0) == 1);
    CHECK(net.heard.count(3) == 1);
    REQUIRE(log.size() == 2);
    CHECK(log.messages[0].receivers.empty());
  }
  {
    // a transmitting node does not receive
    NetworkState net(4);
    const std::vector<std::uint8_t> tx{1, 1, 0, 0};
    deliver_slot(net, star, tx, 1, 5);
    CHECK(net.heard.count(0) == 1);
    CHECK(net.heard.count(1) == 1);
    CHECK(net.heard.contains(2, 0));
  }
  NetworkState net(4);
  const std::vector<std::uint8_t> wrong{1, 0};
  CHECK_THROWS_AS(deliver_slot(net, star, wrong, 1, 5), StructuralError);
}

TEST_CASE("spreading statistics") {
  CHECK(nearest_rank_quantile({1, 2, 3, 4}, 0.5) == 2);
  CHECK(nearest_rank_quantile({1, 2, 3, 4}, 0.9) == 4);
  CHECK(nearest_rank_quantile({5}, 0.0) == 5);
  CHECK(nearest_rank_quantile({}, 0.5) == 0);

  SpreadConfig cfg;
  const auto two = measure_spreading(complete_graph(2), Protocol::gossip, cfg, 20, 1);
  CHECK(two.completed == 20);
  CHECK(two.quantile == 1);
  CHECK(two.median == 1);

  cfg.beta = 0.5;
  const auto k = measure_spreading(complete_graph(32), Protocol::gossip, cfg, 31, 2);
  CHECK(k.quantile == k.median);
  CHECK(std::is_sorted(k.steps.begin(), k.steps.end()));

  cfg.beta = 0.1;
  const auto fast = measure_spreading(complete_graph(64), Protocol::gossip, cfg, 30, 3);
  const auto slow = measure_spreading(cycle_graph(64), Protocol::gossip, cfg, 30, 3);
  CHECK(fast.median < slow.median);
  CHECK(fast.quantile < slow.quantile);
  CHECK_FALSE(slow.incomplete_warning);
  CHECK_THROWS_AS(measure_spreading(complete_graph(2), Protocol::gossip, cfg, 0, 1), ConfigError);
}

TEST_CASE("bit accounting") {
  QuantConfig q;
  q.quant_bits = 9;
  CHECK(account_bits(1, q, 1, 3, 1) == 30);
  CHECK(account_bits(0, q, 8, 8, 3) == 0);
  CHECK(account_bits(4, q, 2, 2, 3) == 4 * 3 * 4 * 10);
  MessageLog log;
  log.messages.resize(5);
  CHECK(account_bits(log, q, 1, 1, 1) == 50);
}

TEST_CASE("heard sets grow monotonically and match the sketches (N <= 64)") {
  for (std::uint64_t s = 0; s < 6; ++s) {
    NodeRng rng(s);
    const NodeId n = 16 + static_cast<NodeId>(s) * 8;
    const auto t = s % 2 ? build_rgg(n, 0.45, rng) : cycle_graph(n);
    const auto proto = s % 3 == 0 ? Protocol::aloha : Protocol::gossip;
    auto init = random_states(n, 2, 2, s + 10);
    NetworkState net(init, n);
    GossipSchedule g(s);
    AlohaSchedule a(s, 0.3);
    for (int step = 0; step < 200; ++step) {
      const auto before = net.heard;
      if (proto == Protocol::gossip) {
        gossip_step(net, t, g, ExchangeMode::exchange, 1);
      } else {
        aloha_step(net, t, a, 1);
      }
      for (NodeId v = 0; v < n; ++v) {
        CHECK(before.subset_of(v, v));
        for (NodeId u = 0; u < n; ++u) {
          if (before.contains(v, u)) CHECK(net.heard.contains(v, u));
        }
      }
      CHECK(net.heard.total() >= before.total());
    }
    CHECK(consistent(net, init));
  }
}

TEST_CASE("replaying a log with shuffled within-step order reproduces the states") {
  for (auto proto : {Protocol::gossip, Protocol::aloha}) {
    NodeRng rng(7);
    const NodeId n = 40;
    const auto t = build_rgg(n, 0.35, rng);
    auto init = random_states(n, 3, 4, 8);
    NetworkState net(init, n);
    SpreadConfig cfg;
    cfg.max_steps = 400;
    MessageLog log;
    run_spreading(net, t, proto, cfg, 9, 1, &log);

    auto straight = init;
    replay_log(log, straight);
    for (NodeId v = 0; v < n; ++v) CHECK(straight[v][0] == net.sketches[v][0]);

    // shuffle messages within each step
    std::map<std::int64_t, std::vector<Message>> by_step;
    for (const auto& m : log.messages) by_step[m.step].push_back(m);
    MessageLog shuffled;
    std::mt19937_64 g(11);
    for (auto& [step, ms] : by_step) {
      if (proto == Protocol::aloha) std::shuffle(ms.begin(), ms.end(), g);
      else if (ms.size() == 2 && (g() & 1)) std::swap(ms[0], ms[1]);
      for (auto& m : ms) shuffled.messages.push_back(m);
    }
    auto replayed = init;
    replay_log(shuffled, replayed);
    for (NodeId v = 0; v < n; ++v) CHECK(replayed[v][0] == net.sketches[v][0]);
  }
}

TEST_CASE("spreading terminates within the default cap and coverage is monotone") {
  for (auto proto : {Protocol::gossip, Protocol::aloha}) {
    for (std::uint64_t s = 0; s < 5; ++s) {
      NodeRng rng(s);
      const NodeId n = 100;
      const auto t = build_rgg(n, connectivity_radius(n, kDefaultConnectivityC), rng);
      if (!is_connected(t)) continue;
      NetworkState net(n);
      const auto rep = run_spreading(net, t, proto, SpreadConfig{}, s, 3);
      CHECK(rep.completed);
      CHECK(rep.steps_to_full <= default_max_steps(n, proto));
      CHECK(static_cast<std::int64_t>(rep.coverage_curve.size()) == rep.steps_to_full);
      CHECK(std::is_sorted(rep.coverage_curve.begin(), rep.coverage_curve.end()));
      CHECK(rep.coverage_curve.back() == doctest::Approx(1.0));
      CHECK(rep.bits_sent == rep.messages * 3);
    }
  }
}

TEST_CASE("message log csv") {
  MessageLog log;
  log.messages.push_back({1, 2, {3, 4}, 10});
  log.messages.push_back({2, 0, {}, 10});
  std::ostringstream os;
  log.write_csv(os);
  CHECK(os.str() == "step,sender,receivers,bits\n1,2,3;4,10\n2,0,,10\n");
}

TEST_CASE("gossip time on a path grows faster than on a complete graph") {
  SpreadConfig cfg;
  const auto p16 = measure_spreading(path_graph(16), Protocol::gossip, cfg, 20, 4);
  const auto p32 = measure_spreading(path_graph(32), Protocol::gossip, cfg, 20, 4);
  CHECK(p32.median > 2 * p16.median);
}
