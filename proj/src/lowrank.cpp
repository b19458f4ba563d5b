#include "milo/lowrank.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

namespace milo {

namespace {

using MatrixXfRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapConst = Eigen::Map<const MatrixXfRM>;

constexpr float kScaleFloor = 1e-8f;

}  // namespace

std::vector<float> Compensator::u_real() const {
  if (storage == CompensatorStorage::Real) return U;
  return symm_int3_dequantize(qU);
}

std::vector<float> Compensator::v_real() const {
  if (storage == CompensatorStorage::Real) return V;
  // qVt holds V^T (cols x rank); transpose back to rank x cols.
  std::vector<float> vt = symm_int3_dequantize(qVt);
  std::vector<float> v(rank * cols);
  for (std::size_t j = 0; j < cols; ++j)
    for (std::size_t k = 0; k < rank; ++k) v[k * cols + j] = vt[j * rank + k];
  return v;
}

void Compensator::quantize_symm_int3(std::size_t group_size) {
  if (storage == CompensatorStorage::SymmInt3) return;
  if (rank == 0) {
    storage = CompensatorStorage::SymmInt3;
    return;
  }
  qU = symm_int3_quantize(U, rows, rank, group_size);
  std::vector<float> vt(cols * rank);
  for (std::size_t k = 0; k < rank; ++k)
    for (std::size_t j = 0; j < cols; ++j) vt[j * rank + k] = V[k * cols + j];
  qVt = symm_int3_quantize(vt, cols, rank, group_size);
  U.clear();
  U.shrink_to_fit();
  V.clear();
  V.shrink_to_fit();
  storage = CompensatorStorage::SymmInt3;
}

Compensator truncated_svd(const WeightMatrix& E, std::size_t r, double /*tol*/) {
  if (r > std::min(E.rows, E.cols))
    throw RankError("rank " + std::to_string(r) + " exceeds min(rows, cols) of " +
                    std::to_string(E.rows) + "x" + std::to_string(E.cols));
  Compensator c;
  c.rows = E.rows;
  c.cols = E.cols;
  c.rank = r;
  if (r == 0) return c;

  Eigen::MatrixXd M = MapConst(E.data.data(), static_cast<Eigen::Index>(E.rows),
                               static_cast<Eigen::Index>(E.cols))
                          .cast<double>();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success)
    throw NumericError("SVD failed to converge");

  const auto& sv = svd.singularValues();
  Eigen::VectorXd sqrt_s = sv.head(static_cast<Eigen::Index>(r)).cwiseSqrt();
  Eigen::MatrixXd U = svd.matrixU().leftCols(static_cast<Eigen::Index>(r)) *
                      sqrt_s.asDiagonal();
  Eigen::MatrixXd V = sqrt_s.asDiagonal() *
                      svd.matrixV().leftCols(static_cast<Eigen::Index>(r)).transpose();

  c.U.resize(E.rows * r);
  c.V.resize(r * E.cols);
  for (std::size_t i = 0; i < E.rows; ++i)
    for (std::size_t k = 0; k < r; ++k)
      c.U[i * r + k] = static_cast<float>(U(static_cast<Eigen::Index>(i),
                                            static_cast<Eigen::Index>(k)));
  for (std::size_t k = 0; k < r; ++k)
    for (std::size_t j = 0; j < E.cols; ++j)
      c.V[k * E.cols + j] = static_cast<float>(V(static_cast<Eigen::Index>(k),
                                                 static_cast<Eigen::Index>(j)));
  return c;
}

SymmInt3Factor symm_int3_quantize(const std::vector<float>& values, std::size_t rows,
                                  std::size_t cols, std::size_t group_size) {
  if (values.size() != rows * cols)
    throw ShapeError("symm_int3_quantize: values length does not match shape");
  if (group_size == 0) throw ShapeError("symm_int3_quantize: zero group size");

  SymmInt3Factor f;
  f.rows = rows;
  f.cols = cols;
  f.group_size = group_size;
  f.codes.resize(rows * cols);
  const std::size_t groups_per_row = (cols + group_size - 1) / group_size;
  f.scales.resize(rows * groups_per_row);

  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t g = 0; g < groups_per_row; ++g) {
      const std::size_t begin = g * group_size;
      const std::size_t end = std::min(begin + group_size, cols);
      float s = 0.0f;
      for (std::size_t j = begin; j < end; ++j)
        s = std::max(s, std::fabs(values[i * cols + j]));
      s = std::max(s, kScaleFloor);
      f.scales[i * groups_per_row + g] = s;
      for (std::size_t j = begin; j < end; ++j) {
        float code = std::round(7.0f * values[i * cols + j] / (2.0f * s)) + 4.0f;
        code = std::clamp(code, 0.0f, 7.0f);
        f.codes[i * cols + j] = static_cast<std::uint8_t>(code);
      }
    }
  }
  return f;
}

std::vector<float> symm_int3_dequantize(const SymmInt3Factor& f) {
  std::vector<float> out(f.rows * f.cols);
  const std::size_t groups_per_row = (f.cols + f.group_size - 1) / f.group_size;
  for (std::size_t i = 0; i < f.rows; ++i) {
    for (std::size_t j = 0; j < f.cols; ++j) {
      const float s = f.scales[i * groups_per_row + j / f.group_size];
      const float step = s * (2.0f / 7.0f);
      out[i * f.cols + j] =
          step * (static_cast<float>(f.codes[i * f.cols + j]) - 4.0f);
    }
  }
  return out;
}

WeightMatrix compensator_apply(const Compensator& c) {
  WeightMatrix out(c.rows, c.cols);
  if (c.rank == 0) return out;
  std::vector<float> u = c.u_real();
  std::vector<float> v = c.v_real();
  MapConst Um(u.data(), static_cast<Eigen::Index>(c.rows),
              static_cast<Eigen::Index>(c.rank));
  MapConst Vm(v.data(), static_cast<Eigen::Index>(c.rank),
              static_cast<Eigen::Index>(c.cols));
  Eigen::Map<MatrixXfRM> Om(out.data.data(), static_cast<Eigen::Index>(c.rows),
                            static_cast<Eigen::Index>(c.cols));
  Om = Um * Vm;
  return out;
}

std::vector<double> singular_values(const WeightMatrix& E) {
  Eigen::MatrixXd M = MapConst(E.data.data(), static_cast<Eigen::Index>(E.rows),
                               static_cast<Eigen::Index>(E.cols))
                          .cast<double>();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(M);
  if (svd.info() != Eigen::Success)
    throw NumericError("SVD failed to converge");
  std::vector<double> out(svd.singularValues().data(),
                          svd.singularValues().data() + svd.singularValues().size());
  return out;
}

}  // namespace milo
