#include <doctest.h>

#include <cmath>
#include <random>

#include "milo/quant.hpp"

using namespace milo;

namespace {

WeightMatrix from_values(std::size_t rows, std::size_t cols,
                         std::vector<float> values) {
  WeightMatrix m(rows, cols);
  m.data = std::move(values);
  return m;
}

WeightMatrix random_gaussian(std::size_t rows, std::size_t cols, std::uint64_t seed,
                             float sigma = 1.0f) {
  WeightMatrix m(rows, cols);
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> dist(0.0f, sigma);
  for (float& v : m.data) v = dist(rng);
  return m;
}

WeightMatrix random_student_t(std::size_t rows, std::size_t cols, std::uint64_t seed,
                              float df = 3.0f) {
  WeightMatrix m(rows, cols);
  std::mt19937_64 rng(seed);
  std::student_t_distribution<float> dist(df);
  for (float& v : m.data) v = dist(rng);
  return m;
}

double recon_error(const WeightMatrix& target, const QuantizedMatrix& q) {
  return frobenius_norm_diff(target, dequantize(q));
}

QuantConfig cfg64() {
  QuantConfig c;
  c.group_size = 64;
  return c;
}

}  // namespace

TEST_CASE("init_quant_params follows the min/max rule") {
  // Group [-1, 0, 1, 0, ...]: min -1, max 1, bits 3 -> s = 2/7, z = 3.5.
  std::vector<float> vals(64, 0.0f);
  vals[0] = -1.0f;
  vals[1] = 1.0f;
  WeightMatrix m = from_values(1, 64, vals);
  QuantParams p = init_quant_params(m, cfg64());
  CHECK(p.scales[0] == doctest::Approx(2.0f / 7.0f).epsilon(1e-6));
  CHECK(p.zeros[0] == doctest::Approx(3.5f).epsilon(1e-6));

  // Constant group degenerates to the floor scale.
  WeightMatrix c = from_values(1, 64, std::vector<float>(64, 2.5f));
  QuantParams pc = init_quant_params(c, cfg64());
  CHECK(pc.scales[0] == 1e-8f);
  QuantizedMatrix qc = quantize(c, pc.scales, pc.zeros, cfg64());
  for (std::size_t i = 1; i < 64; ++i) CHECK(qc.codes[i] == qc.codes[0]);

  // Group spanning exactly [0, 7]: s = 1, z = 0.
  std::vector<float> grid(64, 0.0f);
  for (int i = 0; i < 8; ++i) grid[static_cast<std::size_t>(i)] = static_cast<float>(i);
  grid[8] = 7.0f;
  WeightMatrix g = from_values(1, 64, grid);
  QuantParams pg = init_quant_params(g, cfg64());
  CHECK(pg.scales[0] == doctest::Approx(1.0f));
  CHECK(pg.zeros[0] == doctest::Approx(0.0f));

  WeightMatrix empty;
  CHECK_THROWS_AS(init_quant_params(empty, cfg64()), ShapeError);
}

TEST_CASE("quantize applies round(target/s + z) with clamping") {
  QuantConfig cfg = cfg64();
  std::vector<float> vals(64, 0.0f);
  vals[0] = 0.5f;
  vals[1] = -100.0f;  // far below the grid -> clamps to 0
  WeightMatrix m = from_values(1, 64, vals);
  std::vector<float> s{0.25f}, z{2.0f};
  QuantizedMatrix q = quantize(m, s, z, cfg);
  CHECK(q.codes[0] == 4);  // round(0.5/0.25 + 2) = 4
  CHECK(q.codes[1] == 0);
  CHECK(q.codes[2] == 2);  // zero input lands on the zero-point

  // Grid fixed point: target = s*(k - z) quantizes to k and dequantizes back.
  std::vector<float> grid(64);
  for (int k = 0; k < 64; ++k)
    grid[static_cast<std::size_t>(k)] = 0.25f * (static_cast<float>(k % 8) - 2.0f);
  WeightMatrix gm = from_values(1, 64, grid);
  QuantizedMatrix gq = quantize(gm, s, z, cfg);
  WeightMatrix gd = dequantize(gq);
  for (int k = 0; k < 64; ++k) {
    CHECK(gq.codes[static_cast<std::size_t>(k)] == k % 8);
    CHECK(gd.data[static_cast<std::size_t>(k)] ==
          doctest::Approx(grid[static_cast<std::size_t>(k)]).epsilon(1e-6));
  }

  std::vector<float> wrong_size{0.25f, 0.5f};
  CHECK_THROWS_AS(quantize(m, wrong_size, z, cfg), ShapeError);
}

TEST_CASE("dequantize inverts the grid map") {
  QuantConfig cfg = cfg64();
  QuantizedMatrix q;
  q.rows = 1;
  q.cols = 64;
  q.bits = 3;
  q.group_size = 64;
  q.codes.assign(64, 4);
  q.scales = {0.25f};
  q.zeros = {2.0f};
  WeightMatrix d = dequantize(q);
  CHECK(d.data[0] == doctest::Approx(0.5f));  // 0.25 * (4 - 2)

  q.codes.assign(64, 2);  // code == z -> exactly zero
  CHECK(dequantize(q).data[0] == 0.0f);

  // quantize . dequantize . quantize == quantize on codes.
  WeightMatrix m = random_gaussian(8, 64, 99);
  QuantParams p = init_quant_params(m, cfg);
  QuantizedMatrix q1 = quantize(m, p.scales, p.zeros, cfg);
  QuantizedMatrix q2 = quantize(dequantize(q1), p.scales, p.zeros, cfg);
  CHECK(q1.codes == q2.codes);
}

TEST_CASE("shrink_lp matches the soft-threshold formula") {
  CHECK(shrink_lp({0.0f}, 10.0f, 0.7f)[0] == 0.0f);
  CHECK(shrink_lp({1.0f}, 10.0f, 0.7f)[0] == doctest::Approx(0.9f).epsilon(1e-6));
  // |x|^(p-1)/beta = 0.05^(-0.3)/10 ~ 0.246 > 0.05 -> fully shrunk to 0.
  CHECK(shrink_lp({-0.05f}, 10.0f, 0.7f)[0] == 0.0f);

  // Odd function.
  std::mt19937_64 rng(7);
  std::normal_distribution<float> dist(0.0f, 2.0f);
  for (int i = 0; i < 1000; ++i) {
    float x = dist(rng);
    float pos = shrink_lp({x}, 37.0f, 0.7f)[0];
    float neg = shrink_lp({-x}, 37.0f, 0.7f)[0];
    CHECK(pos == -neg);
  }
}

TEST_CASE("hqq_solve leaves exact-grid targets at zero error") {
  QuantConfig cfg = cfg64();
  std::vector<float> s{0.25f}, z{3.0f};
  std::vector<float> vals(64);
  for (int k = 0; k < 64; ++k)
    vals[static_cast<std::size_t>(k)] = 0.25f * (static_cast<float>(k % 8) - 3.0f);
  WeightMatrix m = from_values(1, 64, vals);
  QuantizedMatrix q = hqq_solve(m, cfg, s, z);
  CHECK(recon_error(m, q) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(q.zeros[0] == doctest::Approx(3.0f).epsilon(1e-5));
}

TEST_CASE("hqq_solve beats round-to-nearest on random matrices") {
  QuantConfig cfg = cfg64();
  WeightMatrix m = random_gaussian(64, 64, 1234);
  QuantParams p = init_quant_params(m, cfg);
  QuantizedMatrix rtn = quantize(m, p.scales, p.zeros, cfg);
  QuantizedMatrix hqq = hqq_solve(m, cfg, p.scales, p.zeros);
  CHECK(recon_error(m, hqq) <= recon_error(m, rtn));
}

TEST_CASE("hqq_solve reconstructs constant matrices perfectly") {
  QuantConfig cfg = cfg64();
  WeightMatrix m = from_values(2, 64, std::vector<float>(128, -4.25f));
  QuantParams p = init_quant_params(m, cfg);
  QuantizedMatrix q = hqq_solve(m, cfg, p.scales, p.zeros);
  for (std::size_t g = 0; g < q.num_groups(); ++g)
    for (std::size_t k = 1; k < 64; ++k) CHECK(q.codes[g * 64 + k] == q.codes[g * 64]);
  CHECK(recon_error(m, q) <= 1e-5 * frobenius_norm(m));
}

TEST_CASE("hqq_solve error is at most RTN error on 95%+ of heavy-tailed draws") {
  QuantConfig cfg = cfg64();
  int wins = 0;
  const int trials = 100;
  for (int t = 0; t < trials; ++t) {
    WeightMatrix m = random_student_t(64, 64, 5000 + static_cast<std::uint64_t>(t));
    QuantParams p = init_quant_params(m, cfg);
    double rtn = recon_error(m, quantize(m, p.scales, p.zeros, cfg));
    double hqq = recon_error(m, hqq_solve(m, cfg, p.scales, p.zeros));
    if (hqq <= rtn) ++wins;
  }
  CHECK(wins >= 95);
}

TEST_CASE("hqq objective is non-increasing over the last inner iterations") {
  // Re-run the solve at increasing inner_iters and track the proxy objective.
  QuantConfig cfg = cfg64();
  WeightMatrix m = random_student_t(32, 64, 77);
  QuantParams p = init_quant_params(m, cfg);
  std::vector<double> errs;
  for (int iters = 15; iters <= 20; ++iters) {
    QuantConfig c = cfg;
    c.inner_iters = iters;
    errs.push_back(recon_error(m, hqq_solve(m, c, p.scales, p.zeros)));
  }
  for (std::size_t i = 1; i < errs.size(); ++i) CHECK(errs[i] <= errs[i - 1] + 1e-6);
}

TEST_CASE("hqq_solve is deterministic") {
  QuantConfig cfg = cfg64();
  WeightMatrix m = random_student_t(16, 128, 31415);
  QuantParams p = init_quant_params(m, cfg);
  QuantizedMatrix a = hqq_solve(m, cfg, p.scales, p.zeros);
  QuantizedMatrix b = hqq_solve(m, cfg, p.scales, p.zeros);
  CHECK(a.codes == b.codes);
  CHECK(a.zeros == b.zeros);
  CHECK(a.scales == b.scales);
}

TEST_CASE("hqq_solve flags non-finite intermediates") {
  QuantConfig cfg = cfg64();
  WeightMatrix m = from_values(1, 64, std::vector<float>(64, 0.0f));
  // An inf slips past the clamp as a saturated code but turns the soft
  // threshold step into inf - inf = NaN, which the zero update must catch.
  m.data[0] = std::numeric_limits<float>::infinity();
  std::vector<float> s{1.0f}, z{0.0f};
  CHECK_THROWS_AS(hqq_solve(m, cfg, s, z), NumericError);
}

TEST_CASE("codes stay inside the grid for every bit width") {
  for (int bits = 2; bits <= 8; ++bits) {
    QuantConfig cfg = cfg64();
    cfg.bits = bits;
    WeightMatrix m = random_student_t(8, 64, 100 + static_cast<std::uint64_t>(bits));
    QuantParams p = init_quant_params(m, cfg);
    QuantizedMatrix q = hqq_solve(m, cfg, p.scales, p.zeros);
    for (std::uint8_t c : q.codes) CHECK(c <= cfg.max_code());
  }
}
