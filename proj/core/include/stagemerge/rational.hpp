#pragma once

#include <algorithm>
#include <charconv>
#include <compare>
#include <cstdint>
#include <numeric>
#include <string>

#include "stagemerge/types.hpp"

namespace stagemerge {

// Exact rational number on int64 with checked arithmetic.
//
// Hyper-parameter values are kept as exact rationals so that equality of
// sequence prefixes is never a floating-point tolerance question: a step
// schedule that decays 0.1 by gamma 0.1 lands exactly on 1/100 and merges
// with a constant 0.01. Arithmetic overflowing int64 throws; search-space
// parameters are human-scale decimals, so this never triggers in practice.
class Rational {
public:
    Rational() = default;
    Rational(std::int64_t n) : num_(n), den_(1) {}  // NOLINT: implicit by design
    Rational(std::int64_t n, std::int64_t d) : num_(n), den_(d) { normalize(); }

    std::int64_t num() const { return num_; }
    std::int64_t den() const { return den_; }

    bool is_integer() const { return den_ == 1; }
    bool is_zero() const { return num_ == 0; }

    double to_double() const { return static_cast<double>(num_) / static_cast<double>(den_); }

    friend Rational operator+(const Rational& a, const Rational& b) {
        return Rational(checked(i128(a.num_) * b.den_ + i128(b.num_) * a.den_),
                        checked(i128(a.den_) * b.den_));
    }
    friend Rational operator-(const Rational& a, const Rational& b) {
        return Rational(checked(i128(a.num_) * b.den_ - i128(b.num_) * a.den_),
                        checked(i128(a.den_) * b.den_));
    }
    friend Rational operator*(const Rational& a, const Rational& b) {
        // cross-reduce first to keep intermediates small
        std::int64_t g1 = std::gcd(a.num_, b.den_);
        std::int64_t g2 = std::gcd(b.num_, a.den_);
        return Rational(checked(i128(a.num_ / g1) * (b.num_ / g2)),
                        checked(i128(a.den_ / g2) * (b.den_ / g1)));
    }
    friend Rational operator/(const Rational& a, const Rational& b) {
        if (b.num_ == 0) throw ConfigError("rational division by zero");
        return a * Rational(b.den_, b.num_);
    }
    Rational operator-() const { return Rational(-num_, den_); }

    friend bool operator==(const Rational& a, const Rational& b) {
        return a.num_ == b.num_ && a.den_ == b.den_;
    }
    friend std::strong_ordering operator<=>(const Rational& a, const Rational& b) {
        i128 lhs = i128(a.num_) * b.den_;
        i128 rhs = i128(b.num_) * a.den_;
        if (lhs < rhs) return std::strong_ordering::less;
        if (lhs > rhs) return std::strong_ordering::greater;
        return std::strong_ordering::equal;
    }

    // Integer power with non-negative exponent.
    Rational pow(std::int64_t e) const {
        if (e < 0) throw ConfigError("rational pow: negative exponent");
        Rational r(1);
        Rational base = *this;
        while (e > 0) {
            if (e & 1) r = r * base;
            base = base * base;
            e >>= 1;
        }
        return r;
    }

    // Canonical text: integers as-is, terminating decimals expanded
    // ("0.095"), everything else as "num/den".
    std::string to_string() const {
        if (den_ == 1) return std::to_string(num_);
        std::int64_t d = den_;
        int twos = 0, fives = 0;
        while (d % 2 == 0) { d /= 2; ++twos; }
        while (d % 5 == 0) { d /= 5; ++fives; }
        if (d != 1) return std::to_string(num_) + "/" + std::to_string(den_);
        int digits = twos > fives ? twos : fives;
        i128 scaled = i128(num_);
        for (int i = 0; i < digits; ++i) scaled *= 10;
        scaled /= den_;
        bool neg = scaled < 0;
        if (neg) scaled = -scaled;
        std::string s;
        for (int i = 0; i < digits; ++i) {
            s.push_back(static_cast<char>('0' + static_cast<int>(scaled % 10)));
            scaled /= 10;
        }
        std::string head = scaled == 0 ? "0" : std::to_string(static_cast<std::int64_t>(scaled));
        std::reverse(s.begin(), s.end());
        return (neg ? "-" : "") + head + "." + s;
    }

    // Parses decimal text ("0.95", "-3", "5e-5", "1/3") exactly.
    static Rational from_string(const std::string& text) {
        if (text.empty()) throw ConfigError("empty rational literal");
        auto slash = text.find('/');
        if (slash != std::string::npos) {
            return Rational(parse_int(text.substr(0, slash)), parse_int(text.substr(slash + 1)));
        }
        std::size_t i = 0;
        bool neg = false;
        if (text[i] == '+' || text[i] == '-') neg = text[i++] == '-';
        i128 mantissa = 0;
        int frac_digits = 0;
        bool seen_digit = false, seen_dot = false;
        for (; i < text.size() && text[i] != 'e' && text[i] != 'E'; ++i) {
            if (text[i] == '.') {
                if (seen_dot) throw ConfigError("bad rational literal: " + text);
                seen_dot = true;
                continue;
            }
            if (text[i] < '0' || text[i] > '9') throw ConfigError("bad rational literal: " + text);
            mantissa = mantissa * 10 + (text[i] - '0');
            if (mantissa > i128(1) << 100) throw ConfigError("rational literal too precise: " + text);
            if (seen_dot) ++frac_digits;
            seen_digit = true;
        }
        if (!seen_digit) throw ConfigError("bad rational literal: " + text);
        std::int64_t exp10 = 0;
        if (i < text.size()) exp10 = parse_int(text.substr(i + 1));
        std::int64_t scale_down = frac_digits - exp10;
        i128 num = neg ? -mantissa : mantissa;
        i128 den = 1;
        while (scale_down > 0) { den *= 10; --scale_down; check_mag(den, text); }
        while (scale_down < 0) { num *= 10; ++scale_down; check_mag(num, text); }
        return Rational(checked(num), checked(den));
    }

    // Exact recovery of a human-written decimal from a double via the
    // shortest round-trip representation.
    static Rational from_double(double v) {
        char buf[64];
        auto res = std::to_chars(buf, buf + sizeof buf, v);
        return from_string(std::string(buf, res.ptr));
    }

    std::uint64_t hash() const {
        std::uint64_t h = fnv1a64(&num_, sizeof num_);
        return fnv1a64(&den_, sizeof den_, h);
    }

private:
    using i128 = __int128;

    static void check_mag(i128 v, const std::string& text) {
        if (v > (i128(1) << 126) || v < -(i128(1) << 126))
            throw ConfigError("rational literal out of range: " + text);
    }

    static std::int64_t checked(i128 v) {
        if (v > INT64_MAX || v < INT64_MIN) throw ConfigError("rational arithmetic overflow");
        return static_cast<std::int64_t>(v);
    }

    static std::int64_t parse_int(const std::string& s) {
        std::int64_t v = 0;
        auto res = std::from_chars(s.data(), s.data() + s.size(), v);
        if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
            throw ConfigError("bad integer literal: " + s);
        return v;
    }

    void normalize() {
        if (den_ == 0) throw ConfigError("rational with zero denominator");
        if (den_ < 0) { num_ = -num_; den_ = -den_; }
        std::int64_t g = std::gcd(num_ < 0 ? -num_ : num_, den_);
        if (g > 1) { num_ /= g; den_ /= g; }
        if (num_ == 0) den_ = 1;
    }

    std::int64_t num_ = 0;
    std::int64_t den_ = 1;
};

}  // namespace stagemerge
