#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace mglab {

/// Direction bit of a return; a zero return carries `previous_bit`.
int direction_bit(double ret, int previous_bit);

/// Prices P(0..T), log returns r(1..T) and direction bits b(1..T).
/// returns[k - 1] and bits[k - 1] belong to period k.
struct PriceSeries {
  std::vector<double> prices;
  std::vector<double> returns;
  std::vector<std::uint8_t> bits;

  static PriceSeries from_prices(std::vector<double> prices);
  /// Keeps `returns` exactly; prices are P(0) compounded by them.
  static PriceSeries from_returns(double initial_price, std::vector<double> returns);

  /// Last period index T.
  int last_period() const { return static_cast<int>(prices.size()) - 1; }
  int bit_at(int period) const { return bits.at(static_cast<std::size_t>(period - 1)); }
  double return_at(int period) const { return returns.at(static_cast<std::size_t>(period - 1)); }
};

/// Shortest decimal string that reads back to the same double.
std::string format_double(double x);

/// `period,price` CSV. Throws ParseError naming the offending line.
PriceSeries read_series_csv(std::istream& in);
/// JSON array of {"period", "price"} objects.
PriceSeries read_series_json(std::istream& in);
/// Dispatches on content: JSON when the first non-blank character is '[' or '{'.
PriceSeries read_series_file(const std::filesystem::path& path);

void write_series_csv(std::ostream& out, const PriceSeries& series);

}  // namespace mglab
