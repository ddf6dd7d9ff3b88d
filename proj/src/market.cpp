#include "mglab/market.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <numeric>

#include "mglab/error.hpp"

namespace mglab {

Money Money::from_double(double x) {
  if (!std::isfinite(x)) throw InvalidInput("money amount must be finite");
  return Money(static_cast<std::int64_t>(std::llround(x * kScale)));
}

Money Money::parse(std::string_view text) {
  const auto bad = [&] { return InvalidInput("invalid decimal amount '" + std::string(text) + "'"); };
  if (text.empty()) throw bad();
  bool negative = false;
  std::size_t i = 0;
  if (text[0] == '-' || text[0] == '+') {
    negative = text[0] == '-';
    i = 1;
  }
  const auto dot = text.find('.', i);
  const auto whole_part = text.substr(i, dot == std::string_view::npos ? std::string_view::npos : dot - i);
  const auto frac_part = dot == std::string_view::npos ? std::string_view{} : text.substr(dot + 1);
  if (whole_part.empty() || frac_part.size() > 4) throw bad();
  if (whole_part[0] < '0' || whole_part[0] > '9') throw bad();
  if (dot != std::string_view::npos && frac_part.empty()) throw bad();
  std::int64_t whole = 0;
  auto [p, ec] = std::from_chars(whole_part.data(), whole_part.data() + whole_part.size(), whole);
  if (ec != std::errc() || p != whole_part.data() + whole_part.size()) throw bad();
  std::int64_t frac = 0;
  for (std::size_t k = 0; k < 4; ++k) {
    frac *= 10;
    if (k < frac_part.size()) {
      if (frac_part[k] < '0' || frac_part[k] > '9') throw bad();
      frac += frac_part[k] - '0';
    }
  }
  const std::int64_t units = whole * kScale + frac;
  return Money(negative ? -units : units);
}

std::string Money::to_string() const {
  const std::int64_t a = units_ < 0 ? -units_ : units_;
  std::string frac = std::to_string(a % kScale);
  frac.insert(0, 4 - frac.size(), '0');
  return (units_ < 0 ? "-" : "") + std::to_string(a / kScale) + "." + frac;
}

std::string Money::to_display() const {
  // Half away from zero at the cent.
  const std::int64_t a = units_ < 0 ? -units_ : units_;
  const std::int64_t cents = (a + 50) / 100;
  std::string frac = std::to_string(cents % 100);
  frac.insert(0, 2 - frac.size(), '0');
  return (units_ < 0 && cents != 0 ? "-" : "") + std::to_string(cents / 100) + "." + frac;
}

MarketParams MarketParams::for_participants(int n) {
  if (n < 1) throw InvalidInput("need at least one participant");
  MarketParams p;
  p.liquidity = 10.0 * n;
  return p;
}

void MarketParams::validate() const {
  if (!(initial_price > 0)) throw InvalidInput("initial price must be positive");
  if (!(liquidity > 0)) throw InvalidInput("liquidity must be positive");
  if (periods < 1) throw InvalidInput("periods must be >= 1");
}

double update_price(double prev, int imbalance, double liquidity) {
  if (!(prev > 0)) throw InvalidInput("previous price must be positive");
  if (!(liquidity > 0)) throw InvalidInput("liquidity must be positive");
  return prev * std::exp(imbalance / liquidity);
}

std::string_view to_string(Order o) {
  switch (o) {
    case Order::buy: return "buy";
    case Order::sell: return "sell";
    case Order::hold: return "hold";
  }
  return "hold";
}

Order parse_order(std::string_view text) {
  if (text == "buy") return Order::buy;
  if (text == "sell") return Order::sell;
  if (text == "hold") return Order::hold;
  throw InvalidInput("unknown order '" + std::string(text) + "'");
}

ParticipantAccount apply_order(ParticipantAccount acct, Order order, Money exec_price) {
  switch (order) {
    case Order::buy:
      acct.shares += 1;
      acct.cash -= exec_price;
      break;
    case Order::sell:
      acct.shares -= 1;
      acct.cash += exec_price;
      break;
    case Order::hold:
      break;
  }
  return acct;
}

Money mark_to_market(const ParticipantAccount& acct, Money price, Money initial_cash) {
  return acct.cash + price * acct.shares - initial_cash;
}

std::vector<Money> settle_payout(std::span<const Money> final_pnls, Money pool) {
  if (pool < Money{}) throw InvalidInput("payout pool must be non-negative");
  std::vector<Money> out(final_pnls.size());
  __int128 total = 0;
  for (auto p : final_pnls)
    if (p > Money{}) total += p.units();
  if (total == 0) return out;

  std::vector<std::pair<__int128, std::size_t>> remainders;
  std::int64_t paid = 0;
  for (std::size_t i = 0; i < final_pnls.size(); ++i) {
    if (!(final_pnls[i] > Money{})) continue;
    const __int128 num = static_cast<__int128>(pool.units()) * final_pnls[i].units();
    const auto share = static_cast<std::int64_t>(num / total);
    out[i] = Money::from_units(share);
    paid += share;
    remainders.emplace_back(num % total, i);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::int64_t k = 0; k < pool.units() - paid; ++k)
    out[remainders[static_cast<std::size_t>(k)].second] += Money::from_units(1);
  return out;
}

}  // namespace mglab
