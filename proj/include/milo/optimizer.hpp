#pragma once

// Outer alternating loop: half-quadratic zero-point solve against the
// compensated target, then truncated-SVD refit of the residual, until the
// sliding-window stop rule fires or the iteration cap is hit.

#include <string>
#include <vector>

#include "milo/lowrank.hpp"
#include "milo/quant.hpp"

namespace milo {

struct MiloConfig {
  QuantConfig quant;
  std::size_t rank = 0;
  int max_outer_iters = 20;
  int window = 3;
  double rel_tol = 1e-4;
  bool quantize_compensator = true;

  void validate() const {
    quant.validate();
    if (max_outer_iters < 1) throw ConfigError("max_outer_iters must be >= 1");
    if (window < 1) throw ConfigError("window must be >= 1");
    if (!(rel_tol > 0.0)) throw ConfigError("rel_tol must be > 0");
  }
};

enum class StopReason { Converged, EarlyStop, Diverged };

const char* stop_reason_name(StopReason r);

struct MiloResult {
  QuantizedMatrix quantized;
  Compensator compensator;
  std::vector<double> error_trace;  // one epsilon per outer iteration
  int iterations_run = 0;
  StopReason stop_reason = StopReason::EarlyStop;

  double final_error() const { return error_trace.empty() ? 0.0 : error_trace.back(); }
};

/// ||W - W_dq - UV||_F, accumulated in double.
double error_trace_metric(const WeightMatrix& W, const QuantizedMatrix& quantized,
                          const Compensator& compensator);

MiloResult milo_compress(const WeightMatrix& W, const MiloConfig& cfg);

}  // namespace milo
