#pragma once

// Zero-bit-waste INT3 storage: every 32 consecutive codes pack into exactly
// three 32-bit words (96 bits, no padding).
//
// Canonical layout, word j of a group (j = 0,1,2):
//
//   bits [3k, 3k+3)   code e_{8j+k}, k = 0..7          (24 bits)
//   bits [24, 32)     rest fragment r_j                 (8 bits)
//
// The 24-bit concatenation r_0 | (r_1 << 8) | (r_2 << 16) holds e_24..e_31,
// again 3 bits per code at bit 3k. Reassembling it takes three shifts and
// ORs, mirroring how a consumer rebuilds the fourth virtual word.
//
// The fast de-quantization path never materializes integer codes: it masks
// 3-bit fields straight into the mantissa of the binary16 value 1024.0
// (0x6400) in each 16-bit lane of a 32-bit register. A pair extraction of
// (e_2i, e_2i+1) from word w is
//
//   t = w >> 6i;  lanes = (t & 0x7) | ((t << 16) & 0x380000) | 0x64006400
//
// giving [1024 + e_2i, 1024 + 8*e_2i+1]. The direct lane subtracts 1028
// (symmetric) or 1024 (asymmetric); the x8 lane applies fma(x, 1/8, -132)
// or fma(x, 1/8, -128). Both lanes land exactly on code-4 resp. code.

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "milo/half.hpp"
#include "milo/matrix.hpp"
#include "milo/quant.hpp"

namespace milo {

enum class PackLayout { Linear, Tiled16x64 };
enum class DequantMode { Symmetric, Asymmetric };

const char* pack_layout_name(PackLayout l);
const char* dequant_mode_name(DequantMode m);
PackLayout pack_layout_from_name(const std::string& s);
DequantMode dequant_mode_from_name(const std::string& s);

struct PackedInt3Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;  // cols % 32 == 0
  PackLayout layout = PackLayout::Linear;
  bool split = false;
  DequantMode mode = DequantMode::Asymmetric;
  std::size_t group_size = 64;

  std::vector<std::uint32_t> words;    // 3 per 32-code group (when !split)
  std::vector<std::uint32_t> plane_a;  // words 0,1 of each group (when split)
  std::vector<std::uint32_t> plane_b;  // word 2 of each group (when split)

  std::vector<half_t> scales;  // binary16, one per quant group
  std::vector<half_t> zeros;   // binary16, asymmetric mode only

  std::size_t num_code_groups() const { return rows * cols / 32; }
  /// Word j (0..2) of 32-code group g, regardless of split.
  std::uint32_t word(std::size_t g, int j) const {
    if (!split) return words[g * 3 + static_cast<std::size_t>(j)];
    return j < 2 ? plane_a[g * 2 + static_cast<std::size_t>(j)] : plane_b[g];
  }
};

/// Packs exactly 32 codes in [0,7] into 3 words.
std::array<std::uint32_t, 3> pack32(std::span<const std::uint8_t> codes);

/// Exact inverse of pack32; every 96-bit pattern decodes.
std::array<std::uint8_t, 32> unpack32(const std::array<std::uint32_t, 3>& words);

/// Packs an asymmetric QuantizedMatrix (3-bit) in linear layout.
PackedInt3Matrix pack_linear(const QuantizedMatrix& q);

/// Packs symmetric codes/scales (e.g. a symm-int3 factor laid out as a
/// rows x cols matrix with group_size groups along each row).
PackedInt3Matrix pack_linear_symmetric(std::size_t rows, std::size_t cols,
                                       const std::vector<std::uint8_t>& codes,
                                       const std::vector<float>& scales,
                                       std::size_t group_size);

/// Permutes codes so each 16x64 tile is contiguous (tile grid row-major,
/// tile-row-major inside) and packs the permuted stream.
PackedInt3Matrix reshuffle_tiled(const QuantizedMatrix& q);

/// Logical flat code index -> position in the tiled stream.
std::size_t tiled_position(std::size_t rows, std::size_t cols, std::size_t i,
                           std::size_t j);

/// Splits words into (plane A: words 0,1; plane B: word 2). Inverse: merge_planes.
PackedInt3Matrix split_planes(const PackedInt3Matrix& p);
PackedInt3Matrix merge_planes(const PackedInt3Matrix& p);

/// Unpacks all codes back to logical row-major order (undoing tiling/split).
std::vector<std::uint8_t> unpack_codes(const PackedInt3Matrix& p);

/// Extracts the pair (e_2i, e_2i+1) from one packed word via the binary
/// manipulation above. Returns binary16 values of code-4 (symmetric) or code
/// (asymmetric) - bit-identical to converting the unpacked integers directly.
std::pair<half_t, half_t> fast_dequant_pair(std::uint32_t word, int pair_index,
                                            DequantMode mode);

/// Per-group effective symmetric scale: round_b16(s * 2/7).
half_t symmetric_step(half_t scale);
/// Per-group asymmetric offset: round_b16(-(s*z)).
half_t asymmetric_offset(half_t scale, half_t zero);

/// Full fast-path de-quantization to binary16 values in logical order.
std::vector<half_t> dequant_packed_half(const PackedInt3Matrix& p, DequantMode mode);

/// Same, widened to a WeightMatrix (floats are exact binary16 values).
WeightMatrix dequant_packed(const PackedInt3Matrix& p, DequantMode mode);

// --- container IO (dtype "packed-i3") --------------------------------------

void save_packed(const PackedInt3Matrix& p, const std::string& name,
                 const std::string& path);
PackedInt3Matrix load_packed(const std::string& path);

}  // namespace milo
