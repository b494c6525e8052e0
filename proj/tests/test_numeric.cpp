#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "ml2o/numeric.hpp"
#include "ml2o/optimizee.hpp"

using namespace ml2o;

TEST_CASE("matvec closed-form examples") {
  CHECK(matvec(Matrix::identity(2), Vector{3.0, 4.0}) == Vector{3.0, 4.0});
  CHECK(matvec(Matrix(2, 2), Vector{1.0, 1.0}) == Vector{0.0, 0.0});
  CHECK(matvec(Matrix{{1.0, 2.0}, {3.0, 4.0}}, Vector{1.0, 1.0}) == Vector{3.0, 7.0});
}

TEST_CASE("matvec with the identity returns its input") {
  RngStream rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.next_below(12);
    const Vector x = gauss_sample(rng, n, 0.0, 3.0);
    CHECK(matvec(Matrix::identity(n), x).bit_equal(x));
  }
}

TEST_CASE("dense kernels agree with Eigen") {
  RngStream rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t r = 1 + rng.next_below(7);
    const std::size_t c = 1 + rng.next_below(7);
    Matrix a(r, c);
    Eigen::MatrixXd ea(r, c);
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) ea(i, j) = a(i, j) = rng.next_normal();
    }
    const Vector x = gauss_sample(rng, c, 0.0, 1.0);
    const Vector y = gauss_sample(rng, r, 0.0, 1.0);
    const Eigen::VectorXd ex = Eigen::Map<const Eigen::VectorXd>(x.data(), c);
    const Eigen::VectorXd ey = Eigen::Map<const Eigen::VectorXd>(y.data(), r);

    const Vector ax = matvec(a, x);
    const Eigen::VectorXd eax = ea * ex;
    for (std::size_t i = 0; i < r; ++i) CHECK(ax[i] == doctest::Approx(eax(i)).epsilon(1e-13));

    const Vector aty = matvec_transposed(a, y);
    const Eigen::VectorXd eaty = ea.transpose() * ey;
    for (std::size_t j = 0; j < c; ++j) CHECK(aty[j] == doctest::Approx(eaty(j)).epsilon(1e-13));

    const Matrix g = gram(a);
    const Eigen::MatrixXd eg = ea.transpose() * ea;
    for (std::size_t i = 0; i < c; ++i) {
      for (std::size_t j = 0; j < c; ++j) CHECK(g(i, j) == doctest::Approx(eg(i, j)).epsilon(1e-13));
    }
    const Matrix at = a.transposed();
    const Matrix p = matmul(at, a);
    for (std::size_t i = 0; i < c; ++i) {
      for (std::size_t j = 0; j < c; ++j) CHECK(p(i, j) == doctest::Approx(eg(i, j)).epsilon(1e-13));
    }
  }
}

TEST_CASE("binary operations reject mismatched sizes") {
  Vector a{1.0, 2.0};
  const Vector b{1.0, 2.0, 3.0};
  CHECK_THROWS_AS(a += b, DimensionError);
  CHECK_THROWS_AS(a -= b, DimensionError);
  CHECK_THROWS_AS(dot(a, b), DimensionError);
  CHECK_THROWS_AS(axpy(1.0, b, a), DimensionError);
  CHECK_THROWS_AS(matvec(Matrix(2, 2), b), DimensionError);
  CHECK_THROWS_AS(matvec_transposed(Matrix(2, 2), b), DimensionError);
  CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 3)), DimensionError);
}

TEST_CASE("kernels stay finite on finite input") {
  RngStream rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.next_below(9);
    Matrix a(n, n);
    for (double& v : a.flat()) v = 1e3 * rng.next_normal();
    Vector x = gauss_sample(rng, n, 0.0, 1e3);
    Vector y = gauss_sample(rng, n, 0.0, 1e3);
    CHECK(all_finite(matvec(a, x).span()));
    CHECK(all_finite(matvec_transposed(a, x).span()));
    CHECK(all_finite(gram(a).flat()));
    axpy(-2.5, x, y);
    CHECK(all_finite(y.span()));
    CHECK(std::isfinite(norm2(x)));
  }
}

TEST_CASE("norms") {
  const Vector v{3.0, -4.0};
  CHECK(norm2(v) == 5.0);
  CHECK(norm_inf(v) == 4.0);
  CHECK(norm1(v) == 7.0);
  CHECK(norm2(Vector{}) == 0.0);
}

TEST_CASE("bit_equal distinguishes signed zeros") {
  CHECK(Vector{0.0} == Vector{-0.0});
  CHECK_FALSE(Vector{0.0}.bit_equal(Vector{-0.0}));
  CHECK(Vector{1.5, 2.0}.bit_equal(Vector{1.5, 2.0}));
}

TEST_CASE("gauss_sample examples") {
  RngStream rng(1);
  CHECK(gauss_sample(rng, 3, 5.0, 0.0) == Vector{5.0, 5.0, 5.0});

  RngStream big(2024);
  const Vector x = gauss_sample(big, 100000, 0.0, 1.0);
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(x.size() - 1));
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(sd - 1.0) < 0.02);

  RngStream r1(77), r2(77);
  CHECK(gauss_sample(r1, 20, 0.0, 1.0).bit_equal(gauss_sample(r2, 20, 0.0, 1.0)));
  CHECK_THROWS_AS(gauss_sample(r1, 2, 0.0, -1.0), Error);
}

TEST_CASE("uniform mixture examples") {
  RngStream rng(5);
  const Vector x = uniform_mixture_sample(rng, 100000, kTrainMixtureRanges);
  double mean = 0.0;
  for (double v : x) {
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
    mean += v;
  }
  mean /= static_cast<double>(x.size());
  const double expected = (0.05 + 0.25 + 0.5) / 3.0;
  CHECK(std::abs(mean - expected) < 0.01);

  const UniformRange narrow[] = {{2.0, 2.0 + 1e-12}};
  const Vector y = uniform_mixture_sample(rng, 100, narrow);
  for (double v : y) {
    CHECK(v >= 2.0);
    CHECK(v < 2.0 + 1e-12);
  }
  CHECK_THROWS_AS(uniform_mixture_sample(rng, 3, std::span<const UniformRange>{}), Error);
  const UniformRange empty[] = {{1.0, 1.0}};
  CHECK_THROWS_AS(uniform_mixture_sample(rng, 3, empty), Error);
}

TEST_CASE("split streams do not depend on parent draws") {
  RngStream a(99), b(99);
  for (int i = 0; i < 17; ++i) b.next_u64();
  RngStream ca = a.split("task");
  RngStream cb = b.split("task");
  for (int i = 0; i < 10; ++i) CHECK(ca.next_u64() == cb.next_u64());
  RngStream ia = a.split(std::uint64_t{3});
  RngStream ib = b.split(std::uint64_t{3});
  CHECK(ia.next_u64() == ib.next_u64());
  // different labels and indices give different streams
  CHECK(a.split("task").next_u64() != a.split("theta0").next_u64());
  CHECK(a.split(std::uint64_t{0}).next_u64() != a.split(std::uint64_t{1}).next_u64());
}

TEST_CASE("next_below stays in range and rejects zero") {
  RngStream rng(4);
  for (int i = 0; i < 1000; ++i) CHECK(rng.next_below(7) < 7);
  CHECK_THROWS_AS(rng.next_below(0), Error);
}

TEST_CASE("uniform draws lie in [0, 1)") {
  RngStream rng(8);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.next_uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("hashes are content hashes") {
  const Vector a{1.0, 2.0};
  const Vector b{1.0, 2.0};
  CHECK(hash_values(a.span()) == hash_values(b.span()));
  CHECK(hash_values(a.span()) != hash_values(Vector{2.0, 1.0}.span()));
  CHECK(hash_label("abc") == hash_label("abc"));
  CHECK(hash_label("abc") != hash_label("abd"));
  // FNV-1a reference value of the empty input is the offset basis
  CHECK(fnv1a({}) == 0xcbf29ce484222325ULL);
}
