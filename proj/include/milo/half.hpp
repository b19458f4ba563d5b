#pragma once

// IEEE-754 binary16 stored as uint16_t, with software conversion and a small
// set of arithmetic helpers (add/sub/mul/fma) that round once to binary16.
//
// The packed INT3 storage and the fast de-quantization path promise
// bit-identical binary16 results between their binary-manipulation route and
// the naive integer-conversion route, so the half boundary has to be exact
// and portable. Intermediate arithmetic runs in double: a binary16 value
// spans at most ~40 significand bits across the format's exponent range, so
// sums/products of two of them are exact in double and a single final
// rounding gives correct binary16 semantics.

#include <bit>
#include <cmath>
#include <cstdint>

namespace milo {

using half_t = std::uint16_t;

namespace detail {

// Round-to-nearest-even right shift of a nonnegative integer.
inline std::uint32_t rtne_shift(std::uint32_t v, int shift) {
  if (shift <= 0) return v << (-shift);
  if (shift > 31) return 0;
  std::uint32_t keep = v >> shift;
  std::uint32_t rem = v & ((1u << shift) - 1u);
  std::uint32_t halfway = 1u << (shift - 1);
  if (rem > halfway || (rem == halfway && (keep & 1u))) keep += 1;
  return keep;
}

inline std::uint64_t rtne_shift64(std::uint64_t v, int shift) {
  if (shift <= 0) return v << (-shift);
  if (shift > 63) return 0;
  std::uint64_t keep = v >> shift;
  std::uint64_t rem = v & ((std::uint64_t{1} << shift) - 1u);
  std::uint64_t halfway = std::uint64_t{1} << (shift - 1);
  if (rem > halfway || (rem == halfway && (keep & 1u))) keep += 1;
  return keep;
}

}  // namespace detail

inline half_t float_to_half(float f) {
  std::uint32_t x = std::bit_cast<std::uint32_t>(f);
  std::uint32_t sign = (x >> 16) & 0x8000u;
  std::uint32_t exp = (x >> 23) & 0xFFu;
  std::uint32_t mant = x & 0x7FFFFFu;

  if (exp == 0xFFu) {  // inf / nan
    if (mant == 0) return static_cast<half_t>(sign | 0x7C00u);
    std::uint32_t m = mant >> 13;
    if (m == 0) m = 1;  // keep NaN a NaN
    return static_cast<half_t>(sign | 0x7C00u | m);
  }

  int e = static_cast<int>(exp) - 127 + 15;
  if (e >= 0x1F) return static_cast<half_t>(sign | 0x7C00u);  // overflow -> inf

  if (e <= 0) {
    // Subnormal half (or zero). Value = (2^23 + mant) * 2^(e-15-23);
    // half subnormal unit is 2^-24, so shift right by (14 - e) with RTNE.
    int shift = 14 - e;
    if (shift > 31 || exp == 0) return static_cast<half_t>(sign);
    std::uint32_t full = 0x800000u | mant;
    std::uint32_t m = detail::rtne_shift(full, shift);
    return static_cast<half_t>(sign | m);  // m may carry into exponent: still correct
  }

  std::uint32_t m = detail::rtne_shift(mant | 0x800000u, 13);
  // m holds 11 bits (1.xxxxxxxxxx) or 12 after carry; fold the implicit bit.
  std::uint32_t h = static_cast<std::uint32_t>(e << 10) + (m - 0x400u);
  if (h >= 0x7C00u) h = 0x7C00u;  // rounding carried past the largest finite
  return static_cast<half_t>(sign | h);
}

inline float half_to_float(half_t h) {
  std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
  std::uint32_t exp = (h >> 10) & 0x1Fu;
  std::uint32_t mant = h & 0x3FFu;

  if (exp == 0) {
    if (mant == 0) return std::bit_cast<float>(sign);
    // Normalize the subnormal: value = mant * 2^-24 = 1.f * 2^(-14 - shift).
    int shift = 0;
    while (!(mant & 0x400u)) {
      mant <<= 1;
      ++shift;
    }
    mant &= 0x3FFu;
    std::uint32_t e = static_cast<std::uint32_t>(127 - 14 - shift);
    return std::bit_cast<float>(sign | (e << 23) | (mant << 13));
  }
  if (exp == 0x1F) {
    return std::bit_cast<float>(sign | 0x7F800000u | (mant << 13));
  }
  std::uint32_t e = exp - 15 + 127;
  return std::bit_cast<float>(sign | (e << 23) | (mant << 13));
}

/// Single-rounding double -> binary16 (going through float could double-round).
inline half_t double_to_half(double d) {
  std::uint64_t x = std::bit_cast<std::uint64_t>(d);
  std::uint32_t sign = static_cast<std::uint32_t>((x >> 48) & 0x8000u);
  std::uint32_t exp = static_cast<std::uint32_t>((x >> 52) & 0x7FFu);
  std::uint64_t mant = x & 0xFFFFFFFFFFFFFull;

  if (exp == 0x7FFu) {  // inf / nan
    if (mant == 0) return static_cast<half_t>(sign | 0x7C00u);
    std::uint32_t m = static_cast<std::uint32_t>(mant >> 42);
    if (m == 0) m = 1;
    return static_cast<half_t>(sign | 0x7C00u | m);
  }

  int e = static_cast<int>(exp) - 1023 + 15;
  if (e >= 0x1F) return static_cast<half_t>(sign | 0x7C00u);

  std::uint64_t full = (exp == 0) ? mant : (mant | (std::uint64_t{1} << 52));
  if (e <= 0) {
    // value = full * 2^(e-15-52); half subnormal unit 2^-24 -> shift 43-e.
    int shift = 43 - e;
    if (shift > 63) return static_cast<half_t>(sign);
    std::uint64_t m = detail::rtne_shift64(full, shift);
    return static_cast<half_t>(sign | static_cast<std::uint32_t>(m));
  }
  std::uint64_t m = detail::rtne_shift64(full, 42);
  std::uint32_t h = static_cast<std::uint32_t>(e << 10) +
                    static_cast<std::uint32_t>(m - 0x400u);
  if (h >= 0x7C00u) h = 0x7C00u;
  return static_cast<half_t>(sign | h);
}

inline half_t half_add(half_t a, half_t b) {
  return double_to_half(static_cast<double>(half_to_float(a)) +
                        static_cast<double>(half_to_float(b)));
}

inline half_t half_sub(half_t a, half_t b) {
  return double_to_half(static_cast<double>(half_to_float(a)) -
                        static_cast<double>(half_to_float(b)));
}

inline half_t half_mul(half_t a, half_t b) {
  return double_to_half(static_cast<double>(half_to_float(a)) *
                        static_cast<double>(half_to_float(b)));
}

/// a*b + c with a single rounding to binary16.
inline half_t half_fma(half_t a, half_t b, half_t c) {
  return double_to_half(std::fma(static_cast<double>(half_to_float(a)),
                                 static_cast<double>(half_to_float(b)),
                                 static_cast<double>(half_to_float(c))));
}

inline half_t half_neg(half_t a) { return static_cast<half_t>(a ^ 0x8000u); }

}  // namespace milo
