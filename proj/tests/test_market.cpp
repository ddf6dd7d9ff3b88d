#include <cmath>
#include <numeric>

#include "doctest.h"
#include "mglab/error.hpp"
#include "mglab/market.hpp"
#include "mglab/rng.hpp"

using namespace mglab;

namespace {

Money m(const char* text) { return Money::parse(text); }

}  // namespace

TEST_CASE("update_price") {
  CHECK(update_price(5.0, 0, 100) == 5.0);
  CHECK(update_price(5.0, 10, 100) == doctest::Approx(5.52585459037824).epsilon(1e-14));
  CHECK(update_price(5.0, -10, 100) == doctest::Approx(4.524187090179798).epsilon(1e-14));
  CHECK_THROWS_AS(update_price(0.0, 1, 100), InvalidInput);
  CHECK_THROWS_AS(update_price(5.0, 1, 0), InvalidInput);
}

TEST_CASE("update_price is increasing in A and multiplicative") {
  Rng rng(8);
  for (int i = 0; i < 10000; ++i) {
    const double p = 0.5 + 10 * rng.uniform01();
    const double b = 10.0 * static_cast<double>(rng.uniform_int(1, 30));
    const int a1 = static_cast<int>(rng.uniform_int(-30, 30));
    const int a2 = static_cast<int>(rng.uniform_int(-30, 30));
    CHECK(update_price(p, a1 + 1, b) > update_price(p, a1, b));
    const double two_steps = update_price(update_price(p, a1, b), a2, b);
    CHECK(two_steps == doctest::Approx(p * std::exp((a1 + a2) / b)).epsilon(1e-13));
  }
}

TEST_CASE("a unanimous move is a 10 percent log move when b = 10 N") {
  for (int n : {1, 3, 10, 17, 100}) {
    const auto params = MarketParams::for_participants(n);
    CHECK(params.liquidity == 10.0 * n);
    const double up = update_price(5.0, n, params.liquidity);
    const double down = update_price(5.0, -n, params.liquidity);
    CHECK(std::abs(std::log(up / 5.0) - 0.1) < 1e-15);
    CHECK(std::abs(std::log(down / 5.0) + 0.1) < 1e-15);
  }
}

TEST_CASE("Money parses and prints exact decimals") {
  CHECK(m("5").units() == 50000);
  CHECK(m("5.5259").units() == 55259);
  CHECK(m("-0.1").units() == -1000);
  CHECK(m("+2.05").units() == 20500);
  CHECK(m("-0.1").to_string() == "-0.1000");
  CHECK(m("5.5259").to_string() == "5.5259");
  CHECK(m("5.5259").to_display() == "5.53");
  CHECK(m("-0.005").to_display() == "-0.01");
  CHECK(m("-0.0049").to_display() == "0.00");
  CHECK(Money::from_double(5.52585459037824).to_string() == "5.5259");
  CHECK(Money::from_double(-4.52418709).to_string() == "-4.5242");
  for (const char* bad : {"", "1.23456", "abc", "1.", ".5", "1.2x", "--1"}) CHECK_THROWS_AS(m(bad), InvalidInput);
}

TEST_CASE("apply_order and mark_to_market") {
  const Money five = m("5");
  ParticipantAccount flat{0, m("100"), {}};
  const auto bought = apply_order(flat, Order::buy, five);
  CHECK(bought.shares == 1);
  CHECK(bought.cash == m("95"));
  const auto sold = apply_order(flat, Order::sell, five);
  CHECK(sold.shares == -1);
  CHECK(sold.cash == m("105"));
  ParticipantAccount two{2, {}, {}};
  CHECK(apply_order(two, Order::hold, five) == two);

  CHECK(mark_to_market(bought, m("6"), m("100")) == m("1"));
  CHECK(mark_to_market(sold, m("4"), m("100")) == m("1"));
  const auto round_trip = apply_order(apply_order(flat, Order::buy, five), Order::sell, five);
  CHECK(mark_to_market(round_trip, five, m("100")) == Money{});

  CHECK(parse_order("buy") == Order::buy);
  CHECK(to_string(Order::sell) == "sell");
  CHECK_THROWS_AS(parse_order("buy2"), InvalidInput);
}

TEST_CASE("cash changes by minus the signed traded value") {
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    ParticipantAccount acct{0, m("50"), {}};
    Money traded;
    double price = 5.0;
    for (int t = 0; t < 60; ++t) {
      price = update_price(price, static_cast<int>(rng.uniform_int(-10, 10)), 100);
      const Money exec = Money::from_double(price);
      const auto order = static_cast<Order>(rng.uniform_int(0, 2));
      acct = apply_order(acct, order, exec);
      if (order == Order::buy) traded += exec;
      if (order == Order::sell) traded -= exec;
      acct.pnl = mark_to_market(acct, exec, m("50"));
      CHECK(acct.pnl == acct.cash + exec * acct.shares - m("50"));
    }
    CHECK(acct.cash - m("50") == -traded);
  }
}

TEST_CASE("settle_payout") {
  const std::vector<Money> gains{m("10"), m("30"), m("0"), m("-5")};
  CHECK(settle_payout(gains, m("200")) == std::vector<Money>{m("50"), m("150"), m("0"), m("0")});
  const std::vector<Money> single{m("-1"), m("0.0001"), m("0")};
  CHECK(settle_payout(single, m("200")) == std::vector<Money>{m("0"), m("200"), m("0")});
  const std::vector<Money> losers{m("-1"), m("0"), m("-3")};
  CHECK(settle_payout(losers, m("200")) == std::vector<Money>(3));
  // Three equal gainers: 200 / 3 leaves one unit, which goes to the first.
  const std::vector<Money> equal{m("1"), m("1"), m("1")};
  CHECK(settle_payout(equal, m("200")) ==
        std::vector<Money>{Money::from_units(666667), Money::from_units(666667), Money::from_units(666666)});
  CHECK_THROWS_AS(settle_payout(gains, m("-1")), InvalidInput);
}

TEST_CASE("payouts sum to the pool and follow the pro-rata weights") {
  Rng rng(91);
  for (int trial = 0; trial < 5000; ++trial) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(1, 12));
    std::vector<Money> pnls;
    for (std::size_t i = 0; i < n; ++i) pnls.push_back(Money::from_units(rng.uniform_int(-500000, 500000)));
    const Money pool = Money::from_units(rng.uniform_int(0, 5000000));
    const auto pay = settle_payout(pnls, pool);
    __int128 total_gain = 0;
    for (auto p : pnls)
      if (p > Money{}) total_gain += p.units();
    const auto sum = std::accumulate(pay.begin(), pay.end(), Money{});
    CHECK(sum == (total_gain > 0 ? pool : Money{}));
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(pay[i] >= Money{});
      if (!(pnls[i] > Money{})) {
        CHECK(pay[i] == Money{});
        continue;
      }
      // Within one unit of the exact share pool * pnl / total.
      const __int128 exact_num = static_cast<__int128>(pool.units()) * pnls[i].units();
      const __int128 floor_share = exact_num / total_gain;
      CHECK(pay[i].units() >= static_cast<std::int64_t>(floor_share));
      CHECK(pay[i].units() <= static_cast<std::int64_t>(floor_share) + 1);
    }
  }
}

TEST_CASE("MarketParams validation") {
  MarketParams p;
  CHECK(p.initial_price == 5.0);
  CHECK(p.dividend == m("0.10"));
  CHECK(p.periods == 60);
  p.liquidity = 0;
  CHECK_THROWS_AS(p.validate(), InvalidInput);
  CHECK_THROWS_AS(MarketParams::for_participants(0), InvalidInput);
}
