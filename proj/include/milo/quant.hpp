#pragma once

// Grouped asymmetric b-bit quantization and the calibration-free
// half-quadratic solver that refines per-group zero-points against a fixed
// scale. Groups are group_size consecutive elements of each row, so a group
// never straddles rows.

#include <cstdint>
#include <utility>
#include <vector>

#include "milo/matrix.hpp"

namespace milo {

enum class Rounding { HalfAwayFromZero };

struct QuantConfig {
  int bits = 3;
  std::size_t group_size = 64;
  float p = 0.7f;            // l_p loss exponent, 0 < p < 1
  float beta0 = 1e4f;        // initial half-quadratic penalty
  float beta_growth = 1.01f; // per-iteration penalty growth
  int inner_iters = 20;
  Rounding rounding = Rounding::HalfAwayFromZero;

  void validate() const {
    if (bits < 2 || bits > 8) throw ConfigError("bits must be in [2, 8]");
    if (group_size < 1) throw ConfigError("group_size must be >= 1");
    if (!(p > 0.0f && p < 1.0f)) throw ConfigError("p must be in (0, 1)");
    if (!(beta0 > 0.0f)) throw ConfigError("beta0 must be > 0");
    if (!(beta_growth > 1.0f)) throw ConfigError("beta_growth must be > 1");
    if (inner_iters < 1) throw ConfigError("inner_iters must be >= 1");
  }
  std::uint8_t max_code() const { return static_cast<std::uint8_t>((1 << bits) - 1); }
};

/// Codes in [0, 2^bits-1] with one (scale, zero-point) pair per group of
/// group_size consecutive row elements.
struct QuantizedMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  int bits = 3;
  std::size_t group_size = 64;
  std::vector<std::uint8_t> codes;  // rows*cols
  std::vector<float> scales;        // rows*cols/group_size, strictly positive
  std::vector<float> zeros;         // same length as scales

  std::size_t num_groups() const { return rows * cols / group_size; }
  std::size_t group_of(std::size_t flat_index) const { return flat_index / group_size; }
};

struct QuantParams {
  std::vector<float> scales;
  std::vector<float> zeros;
};

/// Min/max init: s = (max - min)/(2^bits - 1) floored at 1e-8, z = -min/s.
QuantParams init_quant_params(const WeightMatrix& target, const QuantConfig& cfg);

/// codes = clamp(round(target/s + z), 0, 2^bits-1), rounding half away from zero.
QuantizedMatrix quantize(const WeightMatrix& target, const std::vector<float>& scales,
                         const std::vector<float>& zeros, const QuantConfig& cfg);

/// W_dq[i,j] = s_g * (code - z_g).
WeightMatrix dequantize(const QuantizedMatrix& q);

/// Generalized soft-thresholding: sign(x) * relu(|x| - |x|^(p-1)/beta), 0 at 0.
void shrink_lp(const float* x, float* out, std::size_t n, float beta, float p);
std::vector<float> shrink_lp(const std::vector<float>& x, float beta, float p);

/// Half-quadratic zero-point optimization with fixed scales. Alternates the
/// soft-thresholding step with the per-group closed-form zero update for
/// cfg.inner_iters iterations and returns the final quantization.
QuantizedMatrix hqq_solve(const WeightMatrix& residual_target, const QuantConfig& cfg,
                          const std::vector<float>& scales, std::vector<float> zeros);

}  // namespace milo
