#pragma once

// Tiled W3A16-style GeMM reference: activations treated as binary16 inputs,
// weights packed INT3 with grouped scale/zero, optional low-rank compensator,
// accumulation in 32-bit working precision per tile.

#include <optional>
#include <utility>
#include <vector>

#include "milo/lowrank.hpp"
#include "milo/matrix.hpp"
#include "milo/pack.hpp"

namespace milo {

struct GemmConfig {
  std::pair<int, int> tile_shape{128, 128};  // (reduction, output) tile
  std::size_t group_size = 64;
  DequantMode mode = DequantMode::Asymmetric;
  int pipeline_depth = 4;  // reduction tiles per block stage
  bool materialize_compensator = false;

  void validate() const;
};

/// Stage sizes for the reduction loop: groups of pipeline_depth tiles with an
/// explicit short final stage when the tile count is not a multiple of it.
struct TileSchedule {
  std::vector<int> stage_tiles;  // tiles per stage, each <= pipeline_depth
  int tiles_total = 0;
};

TileSchedule pipeline_tail_check(std::size_t k, const GemmConfig& cfg);

/// Pads A's rows up to the next multiple of 16 with zero rows.
struct PaddedBatch {
  WeightMatrix padded;
  std::size_t original_rows = 0;
};
PaddedBatch pad_batch(const WeightMatrix& A);

/// C = A_f16 * (dequant(Wp) + U*V), tile-by-tile. A is m x k, Wp is k x n
/// (rows = k). Raises ConfigError for group size != 64 or a disallowed tile
/// shape, ShapeError when (k, n) is not a multiple of the tile shape.
WeightMatrix gemm_w3a16(const WeightMatrix& A, const PackedInt3Matrix& Wp,
                        const std::optional<Compensator>& comp,
                        const GemmConfig& cfg);

}  // namespace milo
