#pragma once

// Price formation from order imbalance and participant bookkeeping.

#include <compare>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mglab {

/// Exact decimal amount in units of 1e-4.
class Money {
 public:
  static constexpr std::int64_t kScale = 10000;

  constexpr Money() = default;
  static constexpr Money from_units(std::int64_t units) { return Money(units); }
  /// Rounds half away from zero to 4 decimals.
  static Money from_double(double x);
  /// Accepts "-12", "5.5", "5.5259"; more than 4 decimals is an error.
  static Money parse(std::string_view text);

  constexpr std::int64_t units() const { return units_; }
  double to_double() const { return static_cast<double>(units_) / kScale; }
  /// Full internal precision, e.g. "5.5259", "-0.1000".
  std::string to_string() const;
  /// Rounded to cents for human-readable output.
  std::string to_display() const;

  constexpr Money operator+(Money o) const { return Money(units_ + o.units_); }
  constexpr Money operator-(Money o) const { return Money(units_ - o.units_); }
  constexpr Money operator-() const { return Money(-units_); }
  constexpr Money operator*(std::int64_t k) const { return Money(units_ * k); }
  constexpr Money& operator+=(Money o) { units_ += o.units_; return *this; }
  constexpr Money& operator-=(Money o) { units_ -= o.units_; return *this; }
  constexpr auto operator<=>(const Money&) const = default;

 private:
  constexpr explicit Money(std::int64_t units) : units_(units) {}
  std::int64_t units_ = 0;
};

struct MarketParams {
  double initial_price = 5.0;
  /// b; price impact P(t) = P(t-1) exp(A/b).
  double liquidity = 100.0;
  /// Expected at the end of the session; never paid in cash.
  Money dividend = Money::from_units(1000);
  int periods = 60;

  /// The experimental default b = 10 N.
  static MarketParams for_participants(int n);
  void validate() const;
};

double update_price(double prev, int imbalance, double liquidity);

enum class Order { buy, sell, hold };

std::string_view to_string(Order o);
/// "buy" | "sell" | "hold"; throws InvalidInput otherwise.
Order parse_order(std::string_view text);

struct ParticipantAccount {
  int shares = 0;
  Money cash;
  /// cash + shares * last marked price - initial cash.
  Money pnl;

  friend bool operator==(const ParticipantAccount&, const ParticipantAccount&) = default;
};

/// One share per order; negative shares and cash are allowed.
ParticipantAccount apply_order(ParticipantAccount acct, Order order, Money exec_price);

Money mark_to_market(const ParticipantAccount& acct, Money price, Money initial_cash);

/// Pool split pro rata over positive P&L, exact to 1e-4 (largest remainder,
/// ties to the lower index). Nobody is paid when no P&L is positive.
std::vector<Money> settle_payout(std::span<const Money> final_pnls, Money pool);

}  // namespace mglab
