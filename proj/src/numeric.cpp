#include "ml2o/numeric.hpp"

#include <cmath>
#include <cstring>
#include <numbers>
#include <string>

namespace ml2o {

namespace {

void require_same_size(std::size_t a, std::size_t b, const char* op) {
  if (a != b) {
    throw DimensionError(std::string(op) + ": size mismatch (" + std::to_string(a) + " vs " +
                         std::to_string(b) + ")");
  }
}

// splitmix64 finalizer
std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

}  // namespace

Vector& Vector::operator+=(const Vector& other) {
  require_same_size(size(), other.size(), "vector add");
  for (std::size_t i = 0; i < size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Vector& Vector::operator-=(const Vector& other) {
  require_same_size(size(), other.size(), "vector subtract");
  for (std::size_t i = 0; i < size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Vector& Vector::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

bool Vector::bit_equal(const Vector& other) const noexcept {
  return size() == other.size() &&
         (empty() || std::memcmp(data(), other.data(), size() * sizeof(double)) == 0);
}

Vector operator+(Vector a, const Vector& b) { return a += b; }
Vector operator-(Vector a, const Vector& b) { return a -= b; }
Vector operator*(double s, Vector a) { return a *= s; }

double dot(const Vector& a, const Vector& b) {
  require_same_size(a.size(), b.size(), "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double norm2(const Vector& a) { return std::sqrt(dot(a, a)); }

double norm_inf(const Vector& a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

double norm1(const Vector& a) {
  double s = 0.0;
  for (double v : a) s += std::abs(v);
  return s;
}

void axpy(double s, const Vector& x, Vector& y) {
  require_same_size(x.size(), y.size(), "axpy");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += s * x[i];
}

bool all_finite(std::span<const double> values) noexcept {
  for (double v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows)
    : rows_(rows.size()), cols_(rows.size() == 0 ? 0 : rows.begin()->size()) {
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    require_same_size(r.size(), cols_, "matrix literal row");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

Vector matvec(const Matrix& a, const Vector& x) {
  require_same_size(a.cols(), x.size(), "matvec");
  Vector y(a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    double acc = 0.0;
    auto row = a.row(r);
    for (std::size_t c = 0; c < a.cols(); ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
  return y;
}

Vector matvec_transposed(const Matrix& a, const Vector& x) {
  require_same_size(a.rows(), x.size(), "matvec_transposed");
  Vector y(a.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    auto row = a.row(r);
    const double xr = x[r];
    for (std::size_t c = 0; c < a.cols(); ++c) y[c] += row[c] * xr;
  }
  return y;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  require_same_size(a.cols(), b.rows(), "matmul");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      auto brow = b.row(k);
      auto orow = out.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
    }
  return out;
}

Matrix gram(const Matrix& a) {
  Matrix g(a.cols(), a.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    auto row = a.row(r);
    for (std::size_t i = 0; i < a.cols(); ++i)
      for (std::size_t j = 0; j < a.cols(); ++j) g(i, j) += row[i] * row[j];
  }
  return g;
}

std::uint64_t fnv1a(std::span<const std::byte> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (std::byte b : bytes) {
    h ^= static_cast<std::uint64_t>(b);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t hash_values(std::span<const double> values) { return fnv1a(std::as_bytes(values)); }

std::uint64_t hash_label(std::string_view label) {
  return fnv1a(std::as_bytes(std::span<const char>(label.data(), label.size())));
}

RngStream::RngStream(std::uint64_t seed) : key_(mix64(seed ^ 0x6d6c326f2d726e67ULL)) {}

std::uint64_t RngStream::next_u64() {
  ++counter_;
  return mix64(key_ + counter_ * kGolden);
}

double RngStream::next_uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::next_normal() {
  const double u1 = 1.0 - next_uniform();  // (0, 1]
  const double u2 = next_uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t RngStream::next_below(std::uint64_t bound) {
  if (bound == 0) throw Error("next_below: bound must be positive");
  // rejection sampling keeps the draw unbiased
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return x % bound;
}

RngStream RngStream::split(std::string_view label) const {
  return RngStream(mix64(key_ ^ mix64(hash_label(label) + kGolden)), 0);
}

RngStream RngStream::split(std::uint64_t index) const {
  return RngStream(mix64(key_ ^ mix64(index * 0xd1b54a32d192ed03ULL + 0x1234567ULL)), 0);
}

Vector gauss_sample(RngStream& rng, std::size_t n, double mean, double sigma) {
  if (!(sigma >= 0.0)) throw Error("gauss_sample: sigma must be nonnegative");
  Vector out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = mean + sigma * rng.next_normal();
  return out;
}

Vector uniform_mixture_sample(RngStream& rng, std::size_t n, std::span<const UniformRange> ranges) {
  if (ranges.empty()) throw Error("uniform_mixture_sample: empty range list");
  for (const auto& r : ranges) {
    if (!(r.lo < r.hi)) throw Error("uniform_mixture_sample: range requires lo < hi");
  }
  Vector out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = ranges[rng.next_below(ranges.size())];
    out[i] = r.lo + (r.hi - r.lo) * rng.next_uniform();
    // lo + width*u can round up to hi for tiny widths
    if (out[i] >= r.hi) out[i] = std::nextafter(r.hi, r.lo);
  }
  return out;
}

}  // namespace ml2o
