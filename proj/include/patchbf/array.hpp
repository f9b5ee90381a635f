// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "patchbf/error.hpp"

namespace patchbf {

/// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
  std::size_t size() const { return data.size(); }
  bool operator==(const Matrix&) const = default;
};

/// Dense [planes x rows x cols] cube, plane-major. Used for element x depth x
/// lateral channel data.
struct Cube {
  std::size_t planes = 0, rows = 0, cols = 0;
  std::vector<double> data;

  Cube() = default;
  Cube(std::size_t p, std::size_t r, std::size_t c, double fill = 0.0)
      : planes(p), rows(r), cols(c), data(p * r * c, fill) {}

  double& operator()(std::size_t p, std::size_t r, std::size_t c) {
    return data[(p * rows + r) * cols + c];
  }
  double operator()(std::size_t p, std::size_t r, std::size_t c) const {
    return data[(p * rows + r) * cols + c];
  }
  std::size_t plane_size() const { return rows * cols; }
  std::span<double> plane(std::size_t p) { return {data.data() + p * plane_size(), plane_size()}; }
  std::span<const double> plane(std::size_t p) const {
    return {data.data() + p * plane_size(), plane_size()};
  }
  bool operator==(const Cube&) const = default;
};

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  require(a.rows == b.rows && a.cols == b.cols, ErrorKind::shape, what);
}

}  // namespace patchbf
