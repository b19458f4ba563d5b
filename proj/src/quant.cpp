#include "milo/quant.hpp"

#include <algorithm>
#include <cmath>

namespace milo {

namespace {

constexpr float kScaleFloor = 1e-8f;

void check_grouping(const WeightMatrix& m, const QuantConfig& cfg) {
  if (m.rows == 0 || m.cols == 0) throw ShapeError("empty matrix");
  if (m.cols % cfg.group_size != 0)
    throw ShapeError("group_size " + std::to_string(cfg.group_size) +
                     " does not divide cols " + std::to_string(m.cols));
}

inline float round_half_away(float v) { return std::round(v); }

}  // namespace

QuantParams init_quant_params(const WeightMatrix& target, const QuantConfig& cfg) {
  cfg.validate();
  check_grouping(target, cfg);
  const std::size_t ng = target.size() / cfg.group_size;
  const float levels = static_cast<float>((1 << cfg.bits) - 1);
  QuantParams p;
  p.scales.resize(ng);
  p.zeros.resize(ng);
  for (std::size_t g = 0; g < ng; ++g) {
    const float* v = target.data.data() + g * cfg.group_size;
    float lo = v[0], hi = v[0];
    for (std::size_t k = 1; k < cfg.group_size; ++k) {
      lo = std::min(lo, v[k]);
      hi = std::max(hi, v[k]);
    }
    float s = std::max((hi - lo) / levels, kScaleFloor);
    p.scales[g] = s;
    p.zeros[g] = -lo / s;
    if (!std::isfinite(p.scales[g]) || !std::isfinite(p.zeros[g]))
      throw NumericError("non-finite quantization parameters");
  }
  return p;
}

QuantizedMatrix quantize(const WeightMatrix& target, const std::vector<float>& scales,
                         const std::vector<float>& zeros, const QuantConfig& cfg) {
  cfg.validate();
  check_grouping(target, cfg);
  const std::size_t ng = target.size() / cfg.group_size;
  if (scales.size() != ng || zeros.size() != ng)
    throw ShapeError("scale/zero vectors not aligned with grouping");

  QuantizedMatrix q;
  q.rows = target.rows;
  q.cols = target.cols;
  q.bits = cfg.bits;
  q.group_size = cfg.group_size;
  q.scales = scales;
  q.zeros = zeros;
  q.codes.resize(target.size());
  const float maxc = static_cast<float>(cfg.max_code());
  for (std::size_t g = 0; g < ng; ++g) {
    const float s = scales[g];
    const float z = zeros[g];
    const float* v = target.data.data() + g * cfg.group_size;
    std::uint8_t* c = q.codes.data() + g * cfg.group_size;
    for (std::size_t k = 0; k < cfg.group_size; ++k) {
      float r = round_half_away(v[k] / s + z);
      r = std::clamp(r, 0.0f, maxc);
      c[k] = static_cast<std::uint8_t>(r);
    }
  }
  return q;
}

WeightMatrix dequantize(const QuantizedMatrix& q) {
  WeightMatrix m(q.rows, q.cols);
  const std::size_t ng = q.num_groups();
  for (std::size_t g = 0; g < ng; ++g) {
    const float s = q.scales[g];
    const float z = q.zeros[g];
    const std::uint8_t* c = q.codes.data() + g * q.group_size;
    float* v = m.data.data() + g * q.group_size;
    for (std::size_t k = 0; k < q.group_size; ++k)
      v[k] = s * (static_cast<float>(c[k]) - z);
  }
  return m;
}

void shrink_lp(const float* x, float* out, std::size_t n, float beta, float p) {
  for (std::size_t i = 0; i < n; ++i) {
    const float v = x[i];
    if (v == 0.0f) {
      out[i] = 0.0f;
      continue;
    }
    const float a = std::fabs(v);
    const float t = a - std::pow(a, p - 1.0f) / beta;
    out[i] = t > 0.0f ? std::copysign(t, v) : 0.0f;
  }
}

std::vector<float> shrink_lp(const std::vector<float>& x, float beta, float p) {
  std::vector<float> out(x.size());
  shrink_lp(x.data(), out.data(), x.size(), beta, p);
  return out;
}

QuantizedMatrix hqq_solve(const WeightMatrix& residual_target, const QuantConfig& cfg,
                          const std::vector<float>& scales, std::vector<float> zeros) {
  cfg.validate();
  check_grouping(residual_target, cfg);
  const std::size_t ng = residual_target.size() / cfg.group_size;
  if (scales.size() != ng || zeros.size() != ng)
    throw ShapeError("scale/zero vectors not aligned with grouping");

  const float maxc = static_cast<float>(cfg.max_code());
  const std::size_t gs = cfg.group_size;
  const float* w = residual_target.data.data();
  float beta = cfg.beta0;

  std::vector<float> codes(residual_target.size());
  std::vector<float> err(gs);

  for (int it = 0; it < cfg.inner_iters; ++it) {
    for (std::size_t g = 0; g < ng; ++g) {
      const float s = scales[g];
      const float z = zeros[g];
      const float* v = w + g * gs;
      float* c = codes.data() + g * gs;
      double zsum = 0.0;
      for (std::size_t k = 0; k < gs; ++k) {
        // Quantize against the current zero-point, then soft-threshold the
        // reconstruction error and average the closed-form zero estimate.
        float code = std::clamp(round_half_away(v[k] / s + z), 0.0f, maxc);
        c[k] = code;
        float wdq = s * (code - z);
        err[k] = v[k] - wdq;
      }
      shrink_lp(err.data(), err.data(), gs, beta, cfg.p);
      for (std::size_t k = 0; k < gs; ++k)
        zsum += static_cast<double>(c[k]) -
                (static_cast<double>(v[k]) - static_cast<double>(err[k])) / s;
      float znew = static_cast<float>(zsum / static_cast<double>(gs));
      if (!std::isfinite(znew))
        throw NumericError("half-quadratic solve produced a non-finite zero-point");
      zeros[g] = znew;
    }
    beta *= cfg.beta_growth;
  }
  return quantize(residual_target, scales, zeros, cfg);
}

}  // namespace milo
