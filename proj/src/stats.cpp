#include "milo/stats.hpp"

#include <algorithm>
#include <cmath>

#include "milo/lowrank.hpp"

namespace milo {

double kurtosis(const float* data, std::size_t n) {
  if (n < 4) throw StatError("kurtosis requires at least 4 elements");
  // One-pass central moment updates (Pebay's formulas).
  double mean = 0.0, m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = data[i];
    const double k = static_cast<double>(i + 1);
    const double delta = x - mean;
    const double delta_n = delta / k;
    const double delta_n2 = delta_n * delta_n;
    const double term1 = delta * delta_n * (k - 1.0);
    m4 += term1 * delta_n2 * (k * k - 3.0 * k + 3.0) + 6.0 * delta_n2 * m2 -
          4.0 * delta_n * m3;
    m3 += term1 * delta_n * (k - 2.0) - 3.0 * delta_n * m2;
    m2 += term1;
    mean += delta_n;
  }
  if (m2 <= 0.0) throw StatError("kurtosis undefined for zero variance");
  const double nn = static_cast<double>(n);
  return nn * m4 / (m2 * m2) - 3.0;
}

double kurtosis(const WeightMatrix& W) { return kurtosis(W.data.data(), W.data.size()); }

std::size_t residual_rank(const WeightMatrix& W, const WeightMatrix& W_dq, double tau) {
  if (W.rows != W_dq.rows || W.cols != W_dq.cols)
    throw ShapeError("residual_rank: shape mismatch");
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("residual_rank: tau must be in (0,1)");
  WeightMatrix E(W.rows, W.cols);
  for (std::size_t i = 0; i < W.data.size(); ++i)
    E.data[i] = W.data[i] - W_dq.data[i];
  std::vector<double> sv = singular_values(E);
  if (sv.empty()) return 0;
  const double smax = sv.front();
  if (smax == 0.0) return 0;
  const double threshold = tau * smax;
  return static_cast<std::size_t>(
      std::count_if(sv.begin(), sv.end(), [&](double s) { return s < threshold; }));
}

double rel_quant_error(const WeightMatrix& W, const WeightMatrix& W_dq) {
  double wn = frobenius_norm(W);
  if (wn == 0.0) throw StatError("rel_quant_error undefined for zero-norm W");
  return frobenius_norm_diff(W, W_dq) / wn;
}

std::vector<LayerFrequencies> expert_frequencies(const ExpertFrequencyStats& stats) {
  std::vector<LayerFrequencies> out;
  for (std::size_t l = 0; l < stats.counts.size(); ++l) {
    const auto& counts = stats.counts[l];
    if (counts.empty()) throw StatError("frequency stats: empty layer " + std::to_string(l));
    std::int64_t total = 0;
    for (std::int64_t c : counts) {
      if (c < 0) throw DataError("frequency stats: negative count");
      total += c;
    }
    if (total == 0) throw StatError("frequency stats: zero total in layer " + std::to_string(l));
    LayerFrequencies lf;
    lf.frequencies.reserve(counts.size());
    std::int64_t lo = counts.front(), hi = counts.front();
    for (std::int64_t c : counts) {
      lf.frequencies.push_back(static_cast<double>(c) / static_cast<double>(total));
      lo = std::min(lo, c);
      hi = std::max(hi, c);
    }
    if (lo == 0)
      lf.max_min_ratio = std::nullopt;  // unbounded
    else
      lf.max_min_ratio = static_cast<double>(hi) / static_cast<double>(lo);
    out.push_back(std::move(lf));
  }
  return out;
}

}  // namespace milo
