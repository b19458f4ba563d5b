#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "milo/errors.hpp"

namespace milo {

/// Dense row-major 2-D array of 32-bit reals. Weights, residuals and
/// activations all use this one container; values must be finite.
struct WeightMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;
  std::string name;

  WeightMatrix() = default;
  WeightMatrix(std::size_t r, std::size_t c, std::string n = {})
      : rows(r), cols(c), data(r * c, 0.0f), name(std::move(n)) {}

  float& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  float at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  std::size_t size() const { return rows * cols; }

  void validate() const {
    if (data.size() != rows * cols)
      throw ShapeError("matrix '" + name + "': data length " +
                       std::to_string(data.size()) + " != rows*cols " +
                       std::to_string(rows * cols));
    for (float v : data)
      if (!std::isfinite(v))
        throw DataError("matrix '" + name + "' contains non-finite values");
  }
};

/// Frobenius norm with double accumulation.
inline double frobenius_norm(const WeightMatrix& m) {
  double acc = 0.0;
  for (float v : m.data) acc += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(acc);
}

inline double frobenius_norm_diff(const WeightMatrix& a, const WeightMatrix& b) {
  if (a.rows != b.rows || a.cols != b.cols)
    throw ShapeError("frobenius_norm_diff: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
    acc += d * d;
  }
  return std::sqrt(acc);
}

}  // namespace milo
