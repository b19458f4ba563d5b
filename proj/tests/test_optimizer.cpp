#include <doctest.h>

#include <cmath>
#include <random>

#include "milo/optimizer.hpp"

using namespace milo;

namespace {

WeightMatrix random_student_t(std::size_t rows, std::size_t cols, std::uint64_t seed,
                              float df = 3.0f) {
  WeightMatrix m(rows, cols);
  std::mt19937_64 rng(seed);
  std::student_t_distribution<float> dist(df);
  for (float& v : m.data) v = dist(rng);
  return m;
}

MiloConfig base_config(std::size_t rank) {
  MiloConfig cfg;
  cfg.rank = rank;
  return cfg;
}

}  // namespace

TEST_CASE("error_trace_metric matches a brute-force oracle") {
  WeightMatrix W = random_student_t(8, 64, 1);
  QuantConfig qc;
  QuantParams p = init_quant_params(W, qc);
  QuantizedMatrix q = quantize(W, p.scales, p.zeros, qc);
  WeightMatrix wdq = dequantize(q);

  // Zero compensator: metric is ||W - W_dq||_F.
  Compensator none;
  none.rows = 8;
  none.cols = 64;
  CHECK(error_trace_metric(W, q, none) ==
        doctest::Approx(frobenius_norm_diff(W, wdq)).epsilon(1e-9));

  // Exact residual as compensator: metric is 0.
  WeightMatrix E(8, 64);
  for (std::size_t i = 0; i < E.data.size(); ++i)
    E.data[i] = W.data[i] - wdq.data[i];
  Compensator full = truncated_svd(E, 8);
  double res_tail = frobenius_norm_diff(E, compensator_apply(full));
  CHECK(error_trace_metric(W, q, full) == doctest::Approx(res_tail).epsilon(1e-6));

  // Random instance vs elementwise double accumulation.
  Compensator c = truncated_svd(E, 3);
  WeightMatrix uv = compensator_apply(c);
  double acc = 0.0;
  for (std::size_t i = 0; i < W.data.size(); ++i) {
    double d = static_cast<double>(W.data[i]) - wdq.data[i] - uv.data[i];
    acc += d * d;
  }
  CHECK(error_trace_metric(W, q, c) ==
        doctest::Approx(std::sqrt(acc)).epsilon(1e-6));
}

TEST_CASE("grid-exact input with rank 0 converges at iteration 2 with zero error") {
  // Values on the grid of the min/max init: group spanning [0, 7].
  WeightMatrix W(1, 64);
  for (int k = 0; k < 64; ++k) W.data[static_cast<std::size_t>(k)] =
      static_cast<float>(k % 8);
  MiloConfig cfg = base_config(0);
  MiloResult res = milo_compress(W, cfg);
  REQUIRE(res.error_trace.size() >= 1);
  CHECK(res.error_trace[0] == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(res.stop_reason == StopReason::Converged);
  CHECK(res.iterations_run == 2);
}

TEST_CASE("alternating optimization beats the single HQQ pass") {
  WeightMatrix W = random_student_t(128, 128, 42);
  MiloConfig hqq_only = base_config(0);
  hqq_only.max_outer_iters = 1;
  double eps_hqq = milo_compress(W, hqq_only).final_error();

  MiloConfig cfg = base_config(16);
  cfg.quantize_compensator = false;
  MiloResult res = milo_compress(W, cfg);
  CHECK(res.final_error() < eps_hqq);
  CHECK(res.iterations_run <= cfg.max_outer_iters);
}

TEST_CASE("full-rank compensator absorbs the whole residual at iteration 1") {
  WeightMatrix W = random_student_t(48, 64, 7);
  MiloConfig cfg = base_config(48);
  cfg.quantize_compensator = false;
  MiloResult res = milo_compress(W, cfg);
  CHECK(res.error_trace[0] <= 1e-5 * frobenius_norm(W));
}

TEST_CASE("rank 0 with one outer iteration is bit-identical to hqq_solve") {
  WeightMatrix W = random_student_t(16, 128, 99);
  MiloConfig cfg = base_config(0);
  cfg.max_outer_iters = 1;
  MiloResult res = milo_compress(W, cfg);

  QuantParams p = init_quant_params(W, cfg.quant);
  QuantizedMatrix q = hqq_solve(W, cfg.quant, p.scales, p.zeros);
  CHECK(res.quantized.codes == q.codes);
  CHECK(res.quantized.zeros == q.zeros);
  CHECK(res.quantized.scales == q.scales);
  CHECK(res.stop_reason == StopReason::EarlyStop);
}

TEST_CASE("the stop rule fires no later than max_outer_iters") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    WeightMatrix W = random_student_t(64, 64, 1000 + seed);
    MiloConfig cfg = base_config(8);
    cfg.max_outer_iters = 6;
    MiloResult res = milo_compress(W, cfg);
    CHECK(res.iterations_run <= 6);
    CHECK(res.error_trace.size() == static_cast<std::size_t>(res.iterations_run));
    for (double e : res.error_trace) CHECK(e >= 0.0);
  }
}

TEST_CASE("final reported error matches the stored artifacts") {
  // Holds with the default symm-int3 compensator storage: the last trace
  // entry is recomputed against what is actually stored.
  WeightMatrix W = random_student_t(64, 128, 314);
  MiloConfig cfg = base_config(12);
  MiloResult res = milo_compress(W, cfg);
  CHECK(res.compensator.storage == CompensatorStorage::SymmInt3);
  double recomputed = error_trace_metric(W, res.quantized, res.compensator);
  CHECK(recomputed == doctest::Approx(res.final_error()).epsilon(1e-6));
}

TEST_CASE("compression is deterministic") {
  WeightMatrix W = random_student_t(32, 64, 8);
  MiloConfig cfg = base_config(4);
  MiloResult a = milo_compress(W, cfg);
  MiloResult b = milo_compress(W, cfg);
  CHECK(a.quantized.codes == b.quantized.codes);
  CHECK(a.quantized.zeros == b.quantized.zeros);
  CHECK(a.error_trace == b.error_trace);
  CHECK(a.iterations_run == b.iterations_run);
}

TEST_CASE("error decreases monotonically on most heavy-tailed instances") {
  int monotone = 0, fired_by_cap = 0;
  const int trials = 20;
  for (int t = 0; t < trials; ++t) {
    WeightMatrix W = random_student_t(96, 128, 2000 + static_cast<std::uint64_t>(t));
    MiloConfig cfg = base_config(12);
    cfg.quantize_compensator = false;
    MiloResult res = milo_compress(W, cfg);
    bool mono = true;
    for (std::size_t i = 1; i < res.error_trace.size(); ++i)
      if (res.error_trace[i] > res.error_trace[i - 1] * (1.0 + 1e-9)) mono = false;
    monotone += mono;
    fired_by_cap += res.iterations_run <= cfg.max_outer_iters;
  }
  CHECK(monotone >= trials * 9 / 10);
  CHECK(fired_by_cap == trials);
}

TEST_CASE("invalid configurations are rejected") {
  WeightMatrix W = random_student_t(8, 64, 5);
  MiloConfig cfg = base_config(9);  // rank > min(rows, cols)
  CHECK_THROWS_AS(milo_compress(W, cfg), RankError);
  MiloConfig bad = base_config(0);
  bad.window = 0;
  CHECK_THROWS_AS(milo_compress(W, bad), ConfigError);
}
