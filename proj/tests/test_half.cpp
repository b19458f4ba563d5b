#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <random>

#include "milo/half.hpp"

using namespace milo;

namespace {

// Independent reference: decode a half bit pattern arithmetically.
double half_bits_to_double_ref(std::uint16_t h) {
  const int sign = (h >> 15) ? -1 : 1;
  const int exp = (h >> 10) & 0x1F;
  const int mant = h & 0x3FF;
  if (exp == 0) return sign * std::ldexp(static_cast<double>(mant), -24);
  if (exp == 31) {
    if (mant == 0) return sign * std::numeric_limits<double>::infinity();
    return std::numeric_limits<double>::quiet_NaN();
  }
  return sign * std::ldexp(1.0 + mant / 1024.0, exp - 15);
}

}  // namespace

TEST_CASE("half decode matches arithmetic reference for every pattern") {
  for (std::uint32_t h = 0; h < 0x10000; ++h) {
    const auto bits = static_cast<std::uint16_t>(h);
    const float got = half_to_float(bits);
    const double want = half_bits_to_double_ref(bits);
    if (std::isnan(want)) {
      CHECK(std::isnan(got));
    } else {
      CHECK(static_cast<double>(got) == want);
    }
  }
}

TEST_CASE("half -> float -> half is the identity for every pattern") {
  for (std::uint32_t h = 0; h < 0x10000; ++h) {
    const auto bits = static_cast<std::uint16_t>(h);
    CHECK(float_to_half(half_to_float(bits)) == bits);
  }
}

TEST_CASE("known encodings") {
  CHECK(float_to_half(0.0f) == 0x0000);
  CHECK(float_to_half(-0.0f) == 0x8000);
  CHECK(float_to_half(1.0f) == 0x3C00);
  CHECK(float_to_half(1024.0f) == 0x6400);
  CHECK(float_to_half(1028.0f) == 0x6404);
  CHECK(float_to_half(0.125f) == 0x3000);
  CHECK(float_to_half(-132.0f) == 0xD820);
  CHECK(float_to_half(-128.0f) == 0xD800);
  CHECK(float_to_half(65504.0f) == 0x7BFF);   // largest finite
  CHECK(float_to_half(65520.0f) == 0x7C00);   // rounds to inf
  CHECK(float_to_half(1e30f) == 0x7C00);
  CHECK(float_to_half(5.96046448e-8f) == 0x0001);  // smallest subnormal
  CHECK(half_to_float(0x3555) == doctest::Approx(1.0f / 3.0f).epsilon(1e-3));
}

TEST_CASE("round to nearest even at midpoints") {
  // 1.0 + 2^-11 is exactly between 1.0 and the next half; ties go to even.
  CHECK(float_to_half(1.0f + 0.00048828125f) == 0x3C00);
  // 1.0 + 3*2^-11 is between 1+2^-10 and 1+2^-9; mantissa 1 is odd -> up.
  CHECK(float_to_half(1.0f + 3 * 0.00048828125f) == 0x3C02);
  CHECK(double_to_half(1.0 + 0.00048828125) == 0x3C00);
  CHECK(double_to_half(1.0 + 3 * 0.00048828125) == 0x3C02);
}

TEST_CASE("float_to_half rounds correctly on random values") {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<float> dist(-70000.0f, 70000.0f);
  for (int i = 0; i < 200000; ++i) {
    const float f = dist(rng);
    const std::uint16_t h = float_to_half(f);
    const double got = half_bits_to_double_ref(h);
    // No representable half may be closer than the chosen one.
    const double up = half_bits_to_double_ref(
        static_cast<std::uint16_t>(f >= 0 ? h + 1 : h - 1));
    const double dn = half_bits_to_double_ref(
        static_cast<std::uint16_t>(f >= 0 ? (h == 0 ? 0x8001 : h - 1) : h + 1));
    const double err = std::fabs(got - f);
    if (!std::isinf(got)) {
      if (!std::isnan(up) && !std::isinf(up)) CHECK(err <= std::fabs(up - f));
      if (!std::isnan(dn) && !std::isinf(dn)) CHECK(err <= std::fabs(dn - f));
    }
  }
}

TEST_CASE("half arithmetic helpers round once") {
  // 1024 + 5 = 1029 exactly representable.
  CHECK(half_add(0x6400, float_to_half(5.0f)) == float_to_half(1029.0f));
  // (1024 + 24)/8 - 132 == -1.
  const half_t h = float_to_half(1048.0f);
  CHECK(half_fma(h, 0x3000, 0xD820) == float_to_half(-1.0f));
  // Subtraction identity from the symmetric path: 1029 - 1028 = 1.
  CHECK(half_sub(float_to_half(1029.0f), 0x6404) == 0x3C00);
  // A rounding case: 2049 = 2048 + 1 rounds to even (2048) at step 2.
  CHECK(half_add(float_to_half(2048.0f), 0x3C00) == float_to_half(2048.0f));
  CHECK(half_neg(0x3C00) == 0xBC00);
}
