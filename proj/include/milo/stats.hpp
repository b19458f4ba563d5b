#pragma once

#include <optional>
#include <vector>

#include "milo/matrix.hpp"
#include "milo/tensor_store.hpp"

namespace milo {

/// Excess kurtosis E[(X-mu)^4]/sigma^4 - 3, single pass over all entries with
/// compensated (online central-moment) accumulation in double.
double kurtosis(const WeightMatrix& W);
double kurtosis(const float* data, std::size_t n);

/// Number of singular values of E = W - W_dq strictly smaller than
/// tau * sigma_max; 0 when the residual is exactly zero.
std::size_t residual_rank(const WeightMatrix& W, const WeightMatrix& W_dq, double tau);

/// ||W - W_dq||_F / ||W||_F.
double rel_quant_error(const WeightMatrix& W, const WeightMatrix& W_dq);

struct LayerFrequencies {
  std::vector<double> frequencies;   // sums to 1 within the layer
  std::optional<double> max_min_ratio;  // nullopt when a count is zero (unbounded)
};

/// Per-layer normalized activation frequencies plus the max/min ratio.
std::vector<LayerFrequencies> expert_frequencies(const ExpertFrequencyStats& stats);

}  // namespace milo
