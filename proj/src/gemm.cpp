#include "milo/gemm.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cstring>

namespace milo {

namespace {

using MatrixXfRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr std::array<std::pair<int, int>, 3> kAllowedTiles{{{64, 256}, {128, 128}, {256, 64}}};

bool tile_allowed(std::pair<int, int> t) {
  return std::find(kAllowedTiles.begin(), kAllowedTiles.end(), t) != kAllowedTiles.end();
}

}  // namespace

void GemmConfig::validate() const {
  if (!tile_allowed(tile_shape))
    throw ConfigError("tile shape (" + std::to_string(tile_shape.first) + ", " +
                      std::to_string(tile_shape.second) +
                      ") not in {(64,256),(128,128),(256,64)}");
  if (group_size != 64) throw ConfigError("group size must be 64");
  if (pipeline_depth < 1) throw ConfigError("pipeline depth must be >= 1");
}

TileSchedule pipeline_tail_check(std::size_t k, const GemmConfig& cfg) {
  cfg.validate();
  const std::size_t tk = static_cast<std::size_t>(cfg.tile_shape.first);
  if (k % tk != 0)
    throw ShapeError("reduction dim " + std::to_string(k) +
                     " not a multiple of tile height " + std::to_string(tk));
  TileSchedule sched;
  sched.tiles_total = static_cast<int>(k / tk);
  int remaining = sched.tiles_total;
  while (remaining > 0) {
    int stage = std::min(remaining, cfg.pipeline_depth);
    sched.stage_tiles.push_back(stage);
    remaining -= stage;
  }
  return sched;
}

PaddedBatch pad_batch(const WeightMatrix& A) {
  PaddedBatch out;
  out.original_rows = A.rows;
  const std::size_t padded_rows = (A.rows + 15) / 16 * 16;
  if (padded_rows == A.rows) {
    out.padded = A;
    return out;
  }
  out.padded = WeightMatrix(padded_rows, A.cols, A.name);
  std::copy(A.data.begin(), A.data.end(), out.padded.data.begin());
  return out;
}

namespace {

// Per-quant-group table of the 8 possible de-quantized values, computed with
// the same binary16 operation sequence as the element-wise fast path, so the
// GeMM consumes bit-identical weights.
struct GroupLut {
  std::array<float, 8> value;

  void build(half_t scale, half_t zero, DequantMode mode) {
    if (mode == DequantMode::Symmetric) {
      const half_t step = symmetric_step(scale);
      for (int c = 0; c < 8; ++c) {
        half_t code = double_to_half(static_cast<double>(c - 4));
        value[static_cast<std::size_t>(c)] = half_to_float(half_mul(code, step));
      }
    } else {
      const half_t off = asymmetric_offset(scale, zero);
      for (int c = 0; c < 8; ++c) {
        half_t code = double_to_half(static_cast<double>(c));
        value[static_cast<std::size_t>(c)] = half_to_float(half_fma(code, scale, off));
      }
    }
  }
};

// De-quantizes the (k0..k0+tk) x (n0..n0+tn) block of Wp into dst (tk x tn).
void dequant_block(const PackedInt3Matrix& p, DequantMode mode, std::size_t k0,
                   std::size_t n0, std::size_t tk, std::size_t tn, float* dst) {
  const std::size_t n = p.cols;
  GroupLut lut;
  for (std::size_t r = 0; r < tk; ++r) {
    const std::size_t row = k0 + r;
    float* out = dst + r * tn;
    for (std::size_t j0 = 0; j0 < tn; j0 += 64) {
      const std::size_t col = n0 + j0;
      const std::size_t qg = (row * n + col) / p.group_size;
      lut.build(p.scales[qg], p.zeros.empty() ? half_t{0} : p.zeros[qg], mode);
      for (std::size_t half_block = 0; half_block < 2; ++half_block) {
        std::size_t flat = row * n + col + half_block * 32;
        std::size_t stream_pos = p.layout == PackLayout::Linear
                                     ? flat
                                     : tiled_position(p.rows, p.cols, row,
                                                      col + half_block * 32);
        const std::size_t g = stream_pos / 32;
        std::array<std::uint32_t, 3> w{p.word(g, 0), p.word(g, 1), p.word(g, 2)};
        std::array<std::uint8_t, 32> codes = unpack32(w);
        float* o = out + j0 + half_block * 32;
        for (int c = 0; c < 32; ++c) o[c] = lut.value[codes[static_cast<std::size_t>(c)]];
      }
    }
  }
}

}  // namespace

WeightMatrix gemm_w3a16(const WeightMatrix& A, const PackedInt3Matrix& Wp,
                        const std::optional<Compensator>& comp,
                        const GemmConfig& cfg) {
  cfg.validate();
  if (Wp.group_size != 64) throw ConfigError("packed weight group size must be 64");
  if (cfg.mode != Wp.mode)
    throw ConfigError("config mode does not match the packed weight's mode");
  if (cfg.mode == DequantMode::Asymmetric && Wp.zeros.empty())
    throw ConfigError("asymmetric mode needs zero-points");

  const std::size_t k = Wp.rows;
  const std::size_t n = Wp.cols;
  const std::size_t tk = static_cast<std::size_t>(cfg.tile_shape.first);
  const std::size_t tn = static_cast<std::size_t>(cfg.tile_shape.second);
  if (k % tk != 0 || n % tn != 0)
    throw ShapeError("(k, n) = (" + std::to_string(k) + ", " + std::to_string(n) +
                     ") not a multiple of tile shape (" + std::to_string(tk) + ", " +
                     std::to_string(tn) + ")");
  if (A.cols != k)
    throw ShapeError("A has " + std::to_string(A.cols) + " cols, expected k = " +
                     std::to_string(k));
  if (comp && (comp->rows != k || comp->cols != n))
    throw ShapeError("compensator shape does not match the weight");

  // Activations behave as binary16 inputs.
  PaddedBatch pb = pad_batch(A);
  const std::size_t m = pb.padded.rows;
  std::vector<float> Ah(m * k);
  for (std::size_t i = 0; i < Ah.size(); ++i)
    Ah[i] = half_to_float(float_to_half(pb.padded.data[i]));

  TileSchedule sched = pipeline_tail_check(k, cfg);

  std::vector<float> C(m * n, 0.0f);
  std::vector<float> block(tk * tn);

  for (std::size_t n0 = 0; n0 < n; n0 += tn) {
    std::size_t tile_index = 0;
    for (int stage_size : sched.stage_tiles) {
      for (int t = 0; t < stage_size; ++t, ++tile_index) {
        const std::size_t k0 = tile_index * tk;
        dequant_block(Wp, cfg.mode, k0, n0, tk, tn, block.data());
        for (std::size_t i = 0; i < m; ++i) {
          const float* arow = Ah.data() + i * k + k0;
          float* crow = C.data() + i * n + n0;
          for (std::size_t kk = 0; kk < tk; ++kk) {
            const float a = arow[kk];
            if (a == 0.0f) continue;
            const float* wrow = block.data() + kk * tn;
            for (std::size_t j = 0; j < tn; ++j) crow[j] += a * wrow[j];
          }
        }
      }
    }
  }

  if (comp && comp->rank > 0) {
    using MapConst = Eigen::Map<const MatrixXfRM>;
    Eigen::Map<MatrixXfRM> Cm(C.data(), static_cast<Eigen::Index>(m),
                              static_cast<Eigen::Index>(n));
    MapConst Am(Ah.data(), static_cast<Eigen::Index>(m),
                static_cast<Eigen::Index>(k));
    if (cfg.materialize_compensator) {
      WeightMatrix uv = compensator_apply(*comp);
      MapConst UVm(uv.data.data(), static_cast<Eigen::Index>(k),
                   static_cast<Eigen::Index>(n));
      Cm.noalias() += Am * UVm;
    } else {
      std::vector<float> u = comp->u_real();
      std::vector<float> v = comp->v_real();
      MapConst Um(u.data(), static_cast<Eigen::Index>(k),
                  static_cast<Eigen::Index>(comp->rank));
      MapConst Vm(v.data(), static_cast<Eigen::Index>(comp->rank),
                  static_cast<Eigen::Index>(n));
      MatrixXfRM T = Am * Um;  // thin m x r
      Cm.noalias() += T * Vm;
    }
  }

  WeightMatrix out(pb.original_rows, n, A.name);
  std::memcpy(out.data.data(), C.data(), out.data.size() * sizeof(float));
  return out;
}

}  // namespace milo
