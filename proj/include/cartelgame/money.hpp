#pragma once

#include <cmath>
#include <compare>
#include <cstdint>
#include <cstdlib>
#include <ostream>
#include <string>
#include <string_view>

#include "errors.hpp"

namespace cartelgame {

// Fixed-point amount with two decimal places, stored as integer cents.
class Money {
public:
  constexpr Money() = default;

  static constexpr Money from_cents(std::int64_t cents) { return Money(cents); }
  static constexpr Money units(std::int64_t whole) { return Money(whole * 100); }

  // Rounds to the nearest cent, halves away from zero.
  static Money from_double(double value) {
    if (!std::isfinite(value)) throw DomainError("money amount must be finite");
    return Money(static_cast<std::int64_t>(std::llround(value * 100.0)));
  }

  // Accepts "84.75", "-5", "90.5". At most two decimals.
  static Money parse(std::string_view text) {
    std::string_view s = text;
    bool negative = false;
    if (!s.empty() && (s.front() == '-' || s.front() == '+')) {
      negative = s.front() == '-';
      s.remove_prefix(1);
    }
    std::int64_t whole = 0;
    std::int64_t frac = 0;
    int frac_digits = 0;
    bool seen_digit = false;
    bool in_frac = false;
    for (char c : s) {
      if (c == '.' && !in_frac) {
        in_frac = true;
        continue;
      }
      if (c < '0' || c > '9') throw DomainError("not a money amount: '" + std::string(text) + "'");
      seen_digit = true;
      if (in_frac) {
        if (++frac_digits > 2) throw DomainError("more than two decimals: '" + std::string(text) + "'");
        frac = frac * 10 + (c - '0');
      } else {
        whole = whole * 10 + (c - '0');
        if (whole > 100'000'000'000LL) throw DomainError("money amount out of range");
      }
    }
    if (!seen_digit) throw DomainError("not a money amount: '" + std::string(text) + "'");
    if (frac_digits == 1) frac *= 10;
    const std::int64_t cents = whole * 100 + frac;
    return Money(negative ? -cents : cents);
  }

  constexpr std::int64_t cents() const { return cents_; }
  double to_double() const { return static_cast<double>(cents_) / 100.0; }

  // Always two decimals: "112.00", "-5.00", "84.75".
  std::string str() const {
    const std::int64_t a = cents_ < 0 ? -cents_ : cents_;
    std::string out = cents_ < 0 ? "-" : "";
    out += std::to_string(a / 100);
    out += '.';
    const auto frac = a % 100;
    if (frac < 10) out += '0';
    out += std::to_string(frac);
    return out;
  }

  // Scales by percent/100, rounding half away from zero to the cent.
  Money scaled_percent(std::int64_t percent) const {
    const std::int64_t num = cents_ * percent;
    const std::int64_t q = num / 100;
    const std::int64_t r = num % 100;
    if (2 * std::llabs(r) >= 100) return Money(q + (num < 0 ? -1 : 1));
    return Money(q);
  }

  constexpr Money operator+(Money o) const { return Money(cents_ + o.cents_); }
  constexpr Money operator-(Money o) const { return Money(cents_ - o.cents_); }
  constexpr Money operator-() const { return Money(-cents_); }
  constexpr Money operator*(std::int64_t k) const { return Money(cents_ * k); }
  Money& operator+=(Money o) {
    cents_ += o.cents_;
    return *this;
  }
  Money& operator-=(Money o) {
    cents_ -= o.cents_;
    return *this;
  }
  constexpr auto operator<=>(const Money&) const = default;

private:
  constexpr explicit Money(std::int64_t cents) : cents_(cents) {}
  std::int64_t cents_ = 0;
};

inline std::ostream& operator<<(std::ostream& os, Money m) { return os << m.str(); }

}  // namespace cartelgame
