#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "ml2o/error.hpp"

namespace ml2o {

/// Dense real vector. Binary operations check sizes and throw DimensionError.
class Vector {
 public:
  Vector() = default;
  explicit Vector(std::size_t n, double fill = 0.0) : data_(n, fill) {}
  Vector(std::initializer_list<double> values) : data_(values) {}
  explicit Vector(std::vector<double> values) : data_(std::move(values)) {}

  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> span() noexcept { return data_; }
  std::span<const double> span() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  auto begin() noexcept { return data_.begin(); }
  auto end() noexcept { return data_.end(); }
  auto begin() const noexcept { return data_.begin(); }
  auto end() const noexcept { return data_.end(); }

  Vector& operator+=(const Vector& other);
  Vector& operator-=(const Vector& other);
  Vector& operator*=(double s);

  // Bitwise equality (distinguishes -0.0 and compares NaN payloads).
  bool bit_equal(const Vector& other) const noexcept;
  friend bool operator==(const Vector& a, const Vector& b) { return a.data_ == b.data_; }

 private:
  std::vector<double> data_;
};

Vector operator+(Vector a, const Vector& b);
Vector operator-(Vector a, const Vector& b);
Vector operator*(double s, Vector a);

double dot(const Vector& a, const Vector& b);
double norm2(const Vector& a);
double norm_inf(const Vector& a);
double norm1(const Vector& a);
/// y += s * x
void axpy(double s, const Vector& x, Vector& y);
bool all_finite(std::span<const double> values) noexcept;

/// Dense row-major matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> flat() noexcept { return data_; }
  std::span<const double> flat() const noexcept { return data_; }

  Matrix transposed() const;

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Vector matvec(const Matrix& a, const Vector& x);
/// Aᵀx without forming the transpose.
Vector matvec_transposed(const Matrix& a, const Vector& x);
Matrix matmul(const Matrix& a, const Matrix& b);
/// AᵀA
Matrix gram(const Matrix& a);

/// 64-bit FNV-1a over raw bytes; used for provenance hashes.
std::uint64_t fnv1a(std::span<const std::byte> bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t hash_values(std::span<const double> values);
std::uint64_t hash_label(std::string_view label);

/// Counter-based splittable generator. Output i is a pure function of
/// (key, i); children are keyed from the parent key and a label only, so
/// they do not depend on how many values the parent has produced.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double next_uniform();
  /// Standard normal via Box-Muller; consumes two raw draws per value.
  double next_normal();
  std::uint64_t next_below(std::uint64_t bound);

  RngStream split(std::string_view label) const;
  RngStream split(std::uint64_t index) const;

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  RngStream(std::uint64_t key, std::uint64_t counter) : key_(key), counter_(counter) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

struct UniformRange {
  double lo;
  double hi;
};

Vector gauss_sample(RngStream& rng, std::size_t n, double mean, double sigma);
Vector uniform_mixture_sample(RngStream& rng, std::size_t n, std::span<const UniformRange> ranges);

}  // namespace ml2o
