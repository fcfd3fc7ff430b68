#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace bt::smr {

// Sign-magnitude layout of a real scalar: one sign bit followed by the
// coefficients of 2^{h-1}..2^0 (high bits) and 2^{-1}..2^{-l} (low bits).
struct SmrConfig {
  int high_bits = 29;
  int low_bits = 14;

  int width() const { return 1 + high_bits + low_bits; }
  void validate() const;  // throws std::invalid_argument
};

struct SmrBits {
  // bits[0] is the sign bit; bits[1..] run from the highest magnitude
  // weight down to 2^{-low_bits}. Serialized order matches this layout.
  std::vector<std::uint8_t> bits;

  std::string to_string() const;
  static SmrBits from_string(const std::string& s);
};

// Largest representable magnitude: 2^h - 2^{-l}.
double max_value(const SmrConfig& cfg);

// Total encoder: magnitudes off the 2^{-l} grid round to nearest, ties away
// from zero; magnitudes beyond max_value saturate to the all-ones pattern
// (counted, see overflow_count). Zero encodes as the all-zero vector.
// Throws std::invalid_argument on non-finite input; missing values must go
// through the encoder's missing-token path instead.
SmrBits encode(double v, const SmrConfig& cfg);

// Exact inverse of the bit layout. A set sign bit over a zero magnitude
// decodes to +0.
double decode(const SmrBits& b, const SmrConfig& cfg);

// Hard-threshold per-bit probabilities (bit = 1 iff p > 0.5), then decode.
double decode_probs(const std::vector<double>& p, const SmrConfig& cfg);

// Saturation events since process start / last reset.
std::uint64_t overflow_count();
void reset_overflow_count();

}  // namespace bt::smr
