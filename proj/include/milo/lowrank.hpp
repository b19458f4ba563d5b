#pragma once

// Truncated-SVD residual compensation and symmetric INT3 storage of the
// factor pair.

#include <cstdint>
#include <vector>

#include "milo/matrix.hpp"

namespace milo {

enum class CompensatorStorage { Real, SymmInt3 };

/// Codes in [0,7] plus one scale per group for a factor matrix, grouped along
/// consecutive elements of each row of the matrix as passed in (chunks of
/// group_size; a short final chunk keeps its own scale over the actual
/// entries).
struct SymmInt3Factor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t group_size = 64;
  std::vector<std::uint8_t> codes;  // rows*cols, in [0,7]
  std::vector<float> scales;        // rows * ceil(cols/group_size)
};

/// Rank-r factor pair U (rows x r) and V (r x cols); UV approximates the
/// quantization residual. Factors are either real or symmetric-INT3 with
/// grouping along the contraction (rank) axis: U is grouped along its rows,
/// V along its columns (stored transposed).
struct Compensator {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t rank = 0;
  CompensatorStorage storage = CompensatorStorage::Real;

  std::vector<float> U;  // rows x rank, row-major (real storage)
  std::vector<float> V;  // rank x cols, row-major (real storage)

  SymmInt3Factor qU;   // U quantized, rows x rank layout
  SymmInt3Factor qVt;  // V^T quantized, cols x rank layout

  /// Materialized U (dequantized when storage is symm-int3).
  std::vector<float> u_real() const;
  /// Materialized V (dequantized when storage is symm-int3).
  std::vector<float> v_real() const;

  /// Converts the factors to symmetric INT3 storage in place.
  void quantize_symm_int3(std::size_t group_size = 64);
};

/// Best rank-r approximation of E in Frobenius norm; factors carry the
/// square-rooted singular values on both sides. tol is the relative
/// tolerance on the Eckart-Young residual identity that callers may verify.
Compensator truncated_svd(const WeightMatrix& E, std::size_t r, double tol = 1e-4);

/// Per group: s = max|w| (floored at 1e-8); code = clamp(round(7w/(2s)) + 4, 0, 7).
SymmInt3Factor symm_int3_quantize(const std::vector<float>& values, std::size_t rows,
                                  std::size_t cols, std::size_t group_size);

/// w = (code - 4) * 2s/7 per element.
std::vector<float> symm_int3_dequantize(const SymmInt3Factor& f);

/// Materializes U*V (rows x cols, row-major); zero matrix for rank 0.
WeightMatrix compensator_apply(const Compensator& c);

/// Singular values of E, descending (full decomposition).
std::vector<double> singular_values(const WeightMatrix& E);

}  // namespace milo
