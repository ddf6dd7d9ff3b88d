#include "mglab/series.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "mglab/error.hpp"

namespace mglab {

int direction_bit(double ret, int previous_bit) {
  if (ret > 0) return 1;
  if (ret < 0) return 0;
  return previous_bit;
}

PriceSeries PriceSeries::from_prices(std::vector<double> prices) {
  if (prices.empty()) throw InvalidInput("price series is empty");
  for (double p : prices)
    if (!(p > 0) || !std::isfinite(p)) throw InvalidInput("prices must be positive and finite");
  PriceSeries s;
  s.prices = std::move(prices);
  int prev = 0;
  for (std::size_t k = 1; k < s.prices.size(); ++k) {
    const double r = std::log(s.prices[k] / s.prices[k - 1]);
    s.returns.push_back(r);
    prev = direction_bit(r, prev);
    s.bits.push_back(static_cast<std::uint8_t>(prev));
  }
  return s;
}

PriceSeries PriceSeries::from_returns(double initial_price, std::vector<double> returns) {
  if (!(initial_price > 0)) throw InvalidInput("initial price must be positive");
  PriceSeries s;
  s.prices.push_back(initial_price);
  int prev = 0;
  for (double r : returns) {
    if (!std::isfinite(r)) throw InvalidInput("returns must be finite");
    s.prices.push_back(s.prices.back() * std::exp(r));
    prev = direction_bit(r, prev);
    s.bits.push_back(static_cast<std::uint8_t>(prev));
  }
  s.returns = std::move(returns);
  return s;
}

std::string format_double(double x) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, end);
}

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& field, const char* what, std::size_t line) {
  T value{};
  const auto* first = field.data();
  const auto* last = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || field.empty())
    throw ParseError(std::string("invalid ") + what + " '" + field + "'", line);
  return value;
}

PriceSeries checked_series(std::vector<double> prices) {
  try {
    return PriceSeries::from_prices(std::move(prices));
  } catch (const InvalidInput& e) {
    throw ParseError(e.what());
  }
}

}  // namespace

PriceSeries read_series_csv(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  std::vector<double> prices;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    if (!header) {
      if (line != "period,price") throw ParseError("expected header 'period,price'", lineno);
      header = true;
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos)
      throw ParseError("expected two fields 'period,price'", lineno);
    const auto period = parse_number<long>(trim(line.substr(0, comma)), "period", lineno);
    const auto price = parse_number<double>(trim(line.substr(comma + 1)), "price", lineno);
    if (period != static_cast<long>(prices.size()))
      throw ParseError("period " + std::to_string(period) + " out of sequence, expected " +
                           std::to_string(prices.size()),
                       lineno);
    if (!(price > 0) || !std::isfinite(price))
      throw ParseError("price must be positive", lineno);
    prices.push_back(price);
  }
  if (!header) throw ParseError("empty series file");
  if (prices.empty()) throw ParseError("series has no rows");
  return checked_series(std::move(prices));
}

PriceSeries read_series_json(std::istream& in) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what());
  }
  if (!doc.is_array()) throw ParseError("series JSON must be an array of {period, price}");
  std::vector<double> prices;
  for (const auto& row : doc) {
    if (!row.is_object() || !row.contains("period") || !row.contains("price") ||
        !row["period"].is_number_integer() || !row["price"].is_number())
      throw ParseError("row " + std::to_string(prices.size()) + ": expected {period, price}");
    if (row["period"].get<long>() != static_cast<long>(prices.size()))
      throw ParseError("row " + std::to_string(prices.size()) + ": period out of sequence");
    const double p = row["price"].get<double>();
    if (!(p > 0)) throw ParseError("row " + std::to_string(prices.size()) + ": price must be positive");
    prices.push_back(p);
  }
  if (prices.empty()) throw ParseError("series has no rows");
  return checked_series(std::move(prices));
}

PriceSeries read_series_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path.string());
  char c = 0;
  while (in.get(c) && std::isspace(static_cast<unsigned char>(c))) {
  }
  in.clear();
  in.seekg(0);
  if (c == '[' || c == '{') return read_series_json(in);
  return read_series_csv(in);
}

void write_series_csv(std::ostream& out, const PriceSeries& series) {
  out << "period,price\n";
  for (std::size_t k = 0; k < series.prices.size(); ++k)
    out << k << ',' << format_double(series.prices[k]) << '\n';
}

}  // namespace mglab
