#include "bt/smr.hpp"

#include <atomic>
#include <cmath>
#include <stdexcept>

namespace bt::smr {

namespace {
std::atomic<std::uint64_t> g_overflows{0};
}

void SmrConfig::validate() const {
  if (high_bits < 1) throw std::invalid_argument("smr: high_bits must be >= 1");
  if (low_bits < 0) throw std::invalid_argument("smr: low_bits must be >= 0");
  // Magnitudes are manipulated as exact integers scaled by 2^low_bits.
  if (high_bits + low_bits > 52)
    throw std::invalid_argument("smr: high_bits + low_bits must be <= 52");
}

std::string SmrBits::to_string() const {
  std::string s;
  s.reserve(bits.size());
  for (std::uint8_t b : bits) s.push_back(b ? '1' : '0');
  return s;
}

SmrBits SmrBits::from_string(const std::string& s) {
  SmrBits out;
  out.bits.reserve(s.size());
  for (char c : s) {
    if (c != '0' && c != '1') throw std::invalid_argument("smr: bit string must be 0/1");
    out.bits.push_back(c == '1' ? 1 : 0);
  }
  return out;
}

double max_value(const SmrConfig& cfg) {
  cfg.validate();
  return std::ldexp(1.0, cfg.high_bits) - std::ldexp(1.0, -cfg.low_bits);
}

SmrBits encode(double v, const SmrConfig& cfg) {
  cfg.validate();
  if (!std::isfinite(v))
    throw std::invalid_argument("smr: cannot encode non-finite value; use the missing-value path");

  const int mag_bits = cfg.high_bits + cfg.low_bits;
  const std::uint64_t mag_max = (std::uint64_t{1} << mag_bits) - 1;

  // Magnitude in units of 2^{-l}; nearest integer, ties away from zero.
  const double scaled = std::ldexp(std::fabs(v), cfg.low_bits);
  std::uint64_t mag;
  if (scaled >= static_cast<double>(mag_max) + 0.5) {
    mag = mag_max;
    g_overflows.fetch_add(1, std::memory_order_relaxed);
  } else {
    mag = static_cast<std::uint64_t>(std::llround(scaled));
  }

  SmrBits out;
  out.bits.assign(static_cast<std::size_t>(cfg.width()), 0);
  if (mag == 0) return out;  // canonical zero: sign bit cleared
  out.bits[0] = std::signbit(v) ? 1 : 0;
  for (int i = 1; i <= mag_bits; ++i)
    out.bits[static_cast<std::size_t>(i)] =
        static_cast<std::uint8_t>((mag >> (mag_bits - i)) & 1u);
  return out;
}

double decode(const SmrBits& b, const SmrConfig& cfg) {
  cfg.validate();
  if (b.bits.size() != static_cast<std::size_t>(cfg.width()))
    throw std::invalid_argument("smr: bit vector length does not match config");
  const int mag_bits = cfg.high_bits + cfg.low_bits;
  std::uint64_t mag = 0;
  for (int i = 1; i <= mag_bits; ++i) {
    const std::uint8_t bit = b.bits[static_cast<std::size_t>(i)];
    if (bit > 1) throw std::invalid_argument("smr: bits must be 0 or 1");
    mag = (mag << 1) | bit;
  }
  if (b.bits[0] > 1) throw std::invalid_argument("smr: bits must be 0 or 1");
  if (mag == 0) return 0.0;  // ignore sign bit on zero magnitude
  const double m = std::ldexp(static_cast<double>(mag), -cfg.low_bits);
  return b.bits[0] ? -m : m;
}

double decode_probs(const std::vector<double>& p, const SmrConfig& cfg) {
  cfg.validate();
  if (p.size() != static_cast<std::size_t>(cfg.width()))
    throw std::invalid_argument("smr: probability vector length does not match config");
  SmrBits b;
  b.bits.reserve(p.size());
  for (double x : p) {
    if (!(x >= 0.0 && x <= 1.0))
      throw std::invalid_argument("smr: probabilities must lie in [0, 1]");
    b.bits.push_back(x > 0.5 ? 1 : 0);
  }
  return decode(b, cfg);
}

std::uint64_t overflow_count() { return g_overflows.load(std::memory_order_relaxed); }

void reset_overflow_count() { g_overflows.store(0, std::memory_order_relaxed); }

}  // namespace bt::smr
