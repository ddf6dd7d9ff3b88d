#include <cmath>

#include "doctest.h"
#include "mglab/decoupling.hpp"
#include "mglab/error.hpp"
#include "oracles.hpp"

using namespace mglab;

namespace {

HistoryWindow window_from(const std::vector<int>& bits, int capacity = -1) {
  HistoryWindow w(capacity < 0 ? static_cast<int>(bits.size()) : capacity);
  for (int b : bits) w.push(b);
  return w;
}

std::vector<int> table_of(const Strategy& s) { return {s.table().begin(), s.table().end()}; }

oracle::Agent oracle_agent(const AgentState& a) {
  oracle::Agent o{a.memory(), {}, a.scores};
  for (const auto& s : a.strategies) o.tables.push_back(table_of(s));
  return o;
}

std::vector<int> bits_of(const HistoryWindow& w) {
  const auto b = w.bits();
  return {b.begin(), b.end()};
}

AgentState random_agent(Rng& rng, int m_max, int s_max) {
  const int m = static_cast<int>(rng.uniform_int(1, m_max));
  const int s = static_cast<int>(rng.uniform_int(1, s_max));
  std::vector<Strategy> strategies;
  std::vector<double> scores;
  for (int j = 0; j < s; ++j) {
    strategies.push_back(Strategy::random(m, rng));
    // Small integers make ties common, which exercises the tie rule.
    scores.push_back(static_cast<double>(rng.uniform_int(-2, 2)));
  }
  return {std::move(strategies), std::move(scores)};
}

}  // namespace

TEST_CASE("strategy_decoupled examples") {
  Rng rng(3);
  for (int q = 1; q <= 5; ++q) {
    HistoryWindow w(4);
    for (int i = 0; i < 4; ++i) w.push(rng.bit());
    const auto v = strategy_decoupled(Strategy::constant(4, 1), w, q);
    CHECK(v.decoupled());
    CHECK(*v.action == 1);
  }
  // Window ends 1,0: the next history is 0,0 or 0,1, whose entries disagree.
  const Strategy s(2, {1, -1, 1, 1});
  CHECK_FALSE(strategy_decoupled(s, window_from({1, 0}), 1).decoupled());
  const auto v = strategy_decoupled(Strategy(1, {-1, -1}), window_from({1}), 1);
  CHECK(v.action == -1);
  CHECK_THROWS_AS(strategy_decoupled(s, window_from({1}, 3), 1), NotWarmedUp);
  CHECK_THROWS_AS(strategy_decoupled(s, window_from({1, 0}), 0), InvalidInput);
}

TEST_CASE("strategy_decoupled matches full-future enumeration exhaustively") {
  for (int m = 1; m <= 3; ++m) {
    const std::uint64_t n_tables = std::uint64_t{1} << (1u << m);
    for (std::uint32_t wcode = 0; wcode < (1u << m); ++wcode) {
      std::vector<int> bits;
      for (int k = m - 1; k >= 0; --k) bits.push_back((wcode >> k) & 1);
      // A wider window with extra older bits must not matter.
      std::vector<int> wide = {1, 0, 1};
      wide.insert(wide.end(), bits.begin(), bits.end());
      const auto w = window_from(bits);
      const auto ww = window_from(wide);
      for (std::uint64_t code = 0; code < n_tables; ++code) {
        const auto s = Strategy::from_code(m, code);
        for (int q = 1; q <= 3; ++q) {
          const auto expected = oracle::strategy_decoupled(table_of(s), m, bits, q);
          REQUIRE(strategy_decoupled(s, w, q).action == expected);
          REQUIRE(strategy_decoupled(s, ww, q).action == expected);
        }
      }
    }
  }
}

TEST_CASE("decoupling is time consistent as the horizon shrinks") {
  // Decoupled over q about period t + q stays decoupled about the same
  // period, now q - 1 ahead, whatever bit is realized next.
  for (int m = 1; m <= 3; ++m) {
    for (std::uint32_t wcode = 0; wcode < (1u << m); ++wcode) {
      HistoryWindow w(m);
      for (int k = m - 1; k >= 0; --k) w.push((wcode >> k) & 1);
      for (std::uint64_t code = 0; code < (std::uint64_t{1} << (1u << m)); ++code) {
        const auto s = Strategy::from_code(m, code);
        for (int q = 2; q <= 5; ++q) {
          const auto v = strategy_decoupled(s, w, q);
          if (!v.decoupled()) continue;
          for (std::uint8_t b : {0, 1}) {
            auto next = w;
            next.push(b);
            const auto shorter = strategy_decoupled(s, next, q - 1);
            REQUIRE(shorter.decoupled());
            REQUIRE(shorter.action == v.action);
          }
        }
      }
    }
  }
}

TEST_CASE("decoupled for q >= M implies decoupled at every horizon") {
  for (int m = 1; m <= 3; ++m) {
    for (std::uint32_t wcode = 0; wcode < (1u << m); ++wcode) {
      HistoryWindow w(m);
      for (int k = m - 1; k >= 0; --k) w.push((wcode >> k) & 1);
      for (std::uint64_t code = 0; code < (std::uint64_t{1} << (1u << m)); ++code) {
        const auto s = Strategy::from_code(m, code);
        for (int q = m; q <= 5; ++q) {
          if (!strategy_decoupled(s, w, q).decoupled()) continue;
          for (int p = 1; p < q; ++p) REQUIRE(strategy_decoupled(s, w, p).decoupled());
        }
      }
    }
  }
}

TEST_CASE("below M a fixed-target horizon is not monotone") {
  // Window 0,1,0: two steps ahead only table entries 0?? are reachable,
  // one step ahead only 10?. A table constant on the first set and split on
  // the second is decoupled for q = 2 but not for q = 1.
  const auto w = window_from({0, 1, 0});
  std::vector<std::int8_t> table(8, 1);
  table[0b100] = -1;
  const Strategy s(3, table);
  CHECK(strategy_decoupled(s, w, 2).decoupled());
  CHECK_FALSE(strategy_decoupled(s, w, 1).decoupled());
}

TEST_CASE("agent_decoupled examples") {
  const auto w = window_from({1, 0});
  SUBCASE("all strategies constant") {
    AgentState a({Strategy::constant(2, 1), Strategy::constant(2, 1)}, {0.0, 3.0});
    CHECK(agent_decoupled(a, w, 1, Payoff::dollar).action == 1);
  }
  SUBCASE("switching along branches breaks decoupling") {
    // On window 1,0 (index 2): s0 buys, s1 sells. An up branch favours s0,
    // which then buys at index 1; a down branch favours s1, which sells at 0.
    const Strategy s0(2, {-1, 1, 1, -1});
    const Strategy s1(2, {-1, 1, -1, 1});
    AgentState a({s0, s1});
    CHECK_FALSE(agent_decoupled(a, w, 1, Payoff::dollar).decoupled());
    // If s1 also buys at index 0 both branches end in a buy.
    AgentState b({s0, Strategy(2, {1, 1, -1, 1})});
    CHECK(agent_decoupled(b, w, 1, Payoff::dollar).action == 1);
    // Neither single strategy is decoupled on its own here.
    CHECK_FALSE(strategy_decoupled(s0, w, 1).decoupled());
  }
}

TEST_CASE("agent_decoupled with one strategy equals strategy_decoupled") {
  Rng rng(17);
  for (int i = 0; i < 10000; ++i) {
    const int m = static_cast<int>(rng.uniform_int(1, 6));
    const int q = static_cast<int>(rng.uniform_int(1, 4));
    const auto s = Strategy::random(m, rng);
    HistoryWindow w(6);
    for (int k = 0; k < 6; ++k) w.push(rng.bit());
    AgentState a({s}, {static_cast<double>(rng.uniform_int(-5, 5))});
    const auto mode = rng.bit() ? Payoff::dollar : Payoff::minority;
    REQUIRE(agent_decoupled(a, w, q, mode).action == strategy_decoupled(s, w, q).action);
  }
}

TEST_CASE("agent_decoupled matches branch enumeration on random agents") {
  Rng rng(23);
  for (int i = 0; i < 5000; ++i) {
    const auto agent = random_agent(rng, 4, 5);
    const int q = static_cast<int>(rng.uniform_int(1, 3));
    HistoryWindow w(4);
    for (int k = 0; k < 4; ++k) w.push(rng.bit());
    const bool minority = rng.bit();
    const double mag = rng.bit() ? 1.0 : 0.25;
    const auto expected = oracle::agent_decoupled(oracle_agent(agent), bits_of(w), q, minority, mag);
    REQUIRE(agent_decoupled(agent, w, q, minority ? Payoff::minority : Payoff::dollar, mag).action == expected);
  }
}

TEST_CASE("split_imbalance examples") {
  const auto w = window_from({0, 1});
  SUBCASE("everyone decoupled") {
    Population pop;
    for (int i = 0; i < 10; ++i) pop.agents.emplace_back(std::vector{Strategy::constant(1, 1)});
    const auto s = split_imbalance(pop, w, 1, Payoff::dollar);
    CHECK(s.coupled == 0);
    CHECK(s.decoupled == 10);
    CHECK(s.certain);
  }
  SUBCASE("nobody decoupled") {
    // M = 1, q = 1: both entries are reachable, so a non-constant table is
    // never decoupled.
    Population pop;
    for (int i = 0; i < 3; ++i) pop.agents.emplace_back(std::vector{Strategy(1, {1, -1})});
    for (int i = 0; i < 4; ++i) pop.agents.emplace_back(std::vector{Strategy(1, {-1, 1})});
    const auto s = split_imbalance(pop, w, 1, Payoff::dollar);
    CHECK(s.decoupled == 0);
    CHECK(s.coupled == step_aggregate(pop, w).imbalance);
    CHECK(s.coupled == 1);
    CHECK_FALSE(s.certain);
  }
  SUBCASE("six of ten decoupled buyers") {
    Population pop;
    for (int i = 0; i < 6; ++i) pop.agents.emplace_back(std::vector{Strategy::constant(1, 1)});
    for (int i = 0; i < 2; ++i) pop.agents.emplace_back(std::vector{Strategy(1, {1, -1})});
    for (int i = 0; i < 2; ++i) pop.agents.emplace_back(std::vector{Strategy(1, {-1, 1})});
    const auto s = split_imbalance(pop, w, 1, Payoff::dollar);
    CHECK(s.decoupled == 6);
    CHECK(s.coupled == 0);
    CHECK(s.certain);
    const std::vector<std::uint8_t> bad_branch{1, 1};
    CHECK_THROWS_AS(split_imbalance(pop, w, 1, Payoff::dollar, 1.0, bad_branch), InvalidInput);
  }
}

TEST_CASE("split identity and certainty on random populations") {
  Rng rng(31);
  for (int trial = 0; trial < 10000; ++trial) {
    const int n = static_cast<int>(rng.uniform_int(1, 12));
    const int q = static_cast<int>(rng.uniform_int(1, 3));
    Population pop;
    for (int i = 0; i < n; ++i) {
      // Some constant agents so that certain splits actually occur.
      if (rng.uniform_int(0, 3) == 0)
        pop.agents.emplace_back(std::vector{Strategy::constant(static_cast<int>(rng.uniform_int(1, 4)), 1)});
      else
        pop.agents.push_back(random_agent(rng, 4, 4));
    }
    HistoryWindow w(4);
    for (int k = 0; k < 4; ++k) w.push(rng.bit());
    const auto mode = rng.bit() ? Payoff::dollar : Payoff::minority;
    const bool minority = mode == Payoff::minority;

    int decoupled = 0;
    for (const auto& a : pop.agents)
      if (auto v = oracle::agent_decoupled(oracle_agent(a), bits_of(w), q, minority, 1.0)) decoupled += *v;

    const auto plain = split_imbalance(pop, w, q, mode);
    REQUIRE(plain.decoupled == decoupled);
    REQUIRE(plain.certain == (2 * std::abs(decoupled) > n));

    for (std::uint32_t u = 0; u < (1u << q); ++u) {
      std::vector<std::uint8_t> branch;
      std::vector<int> future;
      for (int k = 0; k < q; ++k) {
        branch.push_back((u >> k) & 1);
        future.push_back((u >> k) & 1);
      }
      int target = 0;
      for (const auto& a : pop.agents) target += oracle::action_after(oracle_agent(a), bits_of(w), future, minority, 1.0);
      const auto s = split_imbalance(pop, w, q, mode, 1.0, branch);
      REQUIRE(s.decoupled == decoupled);
      REQUIRE(s.total() == target);
      if (s.certain) REQUIRE((target > 0) == (decoupled > 0));
    }
  }
}

TEST_CASE("snapshot examples") {
  const auto w = window_from({1, 1});
  Population pop;
  for (int i = 0; i < 7; ++i) pop.agents.emplace_back(std::vector{Strategy::constant(1, 1)});
  for (int i = 0; i < 3; ++i) pop.agents.emplace_back(std::vector{Strategy(1, {1, -1})});
  auto s = snapshot(pop, w, 1, Payoff::dollar);
  CHECK(s.d_plus == doctest::Approx(0.7));
  CHECK(s.d_minus == 0.0);
  CHECK(s.delta_d == doctest::Approx(0.7));

  Population none;
  for (int i = 0; i < 4; ++i) none.agents.emplace_back(std::vector{Strategy(1, {1, -1})});
  CHECK(snapshot(none, w, 1, Payoff::dollar) == DecouplingSnapshot{});

  Population half;
  for (int i = 0; i < 5; ++i) half.agents.emplace_back(std::vector{Strategy::constant(2, 1)});
  for (int i = 0; i < 5; ++i) half.agents.emplace_back(std::vector{Strategy::constant(2, -1)});
  s = snapshot(half, w, 1, Payoff::dollar);
  CHECK(s.d_plus == 0.5);
  CHECK(s.d_minus == 0.5);
  CHECK(s.delta_d == 0.0);

  // Strategy census counts every held table.
  Population held;
  held.agents.emplace_back(std::vector{Strategy::constant(1, 1), Strategy(1, {1, -1})});
  held.agents.emplace_back(std::vector{Strategy::constant(1, -1)});
  s = snapshot(held, w, 1, Payoff::dollar, 1.0, Census::strategies);
  CHECK(s.d_plus == doctest::Approx(1.0 / 3));
  CHECK(s.d_minus == doctest::Approx(1.0 / 3));
}

TEST_CASE("snapshot fractions are bounded on random populations") {
  Rng rng(41);
  for (int trial = 0; trial < 2000; ++trial) {
    Population pop;
    const int n = static_cast<int>(rng.uniform_int(1, 10));
    for (int i = 0; i < n; ++i) pop.agents.push_back(random_agent(rng, 3, 4));
    HistoryWindow w(3);
    for (int k = 0; k < 3; ++k) w.push(rng.bit());
    const auto s = snapshot(pop, w, 1, Payoff::dollar);
    CHECK(s.d_plus >= 0.0);
    CHECK(s.d_minus >= 0.0);
    CHECK(s.d_plus + s.d_minus <= 1.0);
    CHECK(s.delta_d == std::abs(s.d_plus - s.d_minus));
  }
}

TEST_CASE("constant tables occur with probability 1/16 at M = 2") {
  Rng rng(2718);
  const int n = 1'000'000;
  int hits = 0;
  const auto target = Strategy::constant(2, 1);
  for (int i = 0; i < n; ++i)
    if (Strategy::random(2, rng) == target) ++hits;
  const double p = 1.0 / 16;
  const double se = std::sqrt(p * (1 - p) / n);
  CHECK(std::abs(static_cast<double>(hits) / n - p) <= 3 * se);
}
