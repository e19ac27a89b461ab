#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "cdyn/architectures/presets.hpp"
#include "cdyn/core/engine.hpp"
#include "cdyn/errors.hpp"
#include "cdyn/kernels.hpp"

using namespace cdyn;

namespace {

std::vector<double> randvec(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  std::vector<double> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

}  // namespace

TEST_CASE("isa names parse") {
  CHECK(kernels::parse_isa("scalar") == kernels::Isa::scalar);
  CHECK(kernels::parse_isa("avx2") == kernels::Isa::avx2);
  CHECK_THROWS_AS(kernels::parse_isa("neon"), ConfigError);
}

TEST_CASE("scalar table computes the textbook results") {
  const auto& t = kernels::scalar_table();
  const std::vector<double> a{1, 2, 3}, b{4, 5, 6};
  CHECK(t.dot(a.data(), b.data(), 3) == 32.0);
  std::vector<double> y{1, 1, 1};
  t.axpy(2.0, a.data(), y.data(), 3);
  CHECK(y == std::vector<double>{3, 5, 7});
  t.axpby(1.0, a.data(), -1.0, y.data(), 3);
  CHECK(y == std::vector<double>{-2, -3, -4});
  t.scale(-0.5, y.data(), 3);
  CHECK(y == std::vector<double>{1, 1.5, 2});
  t.mul(b.data(), y.data(), 3);
  CHECK(y == std::vector<double>{4, 7.5, 12});
}

TEST_CASE("avx2 matches scalar on every length, including tails") {
  if (!kernels::available(kernels::Isa::avx2)) return;
  const auto& s = kernels::scalar_table();
  const auto& v = *kernels::avx2_table();
  std::mt19937_64 rng(7);
  for (std::size_t n = 0; n <= 41; ++n) {
    CAPTURE(n);
    const auto a = randvec(n, rng), b = randvec(n, rng);
    const double scale = 1.0 + std::sqrt(double(n));
    CHECK(std::abs(s.dot(a.data(), b.data(), n) - v.dot(a.data(), b.data(), n)) <= 1e-13 * scale);

    auto y1 = b, y2 = b;
    s.axpy(0.3, a.data(), y1.data(), n);
    v.axpy(0.3, a.data(), y2.data(), n);
    CHECK(max_abs_diff(y1, y2) <= 1e-14);

    s.axpby(-1.7, a.data(), 0.4, y1.data(), n);
    v.axpby(-1.7, a.data(), 0.4, y2.data(), n);
    CHECK(max_abs_diff(y1, y2) <= 1e-14);

    s.scale(2.5, y1.data(), n);
    v.scale(2.5, y2.data(), n);
    CHECK(max_abs_diff(y1, y2) <= 1e-14);

    s.mul(a.data(), y1.data(), n);
    v.mul(a.data(), y2.data(), n);
    CHECK(max_abs_diff(y1, y2) <= 1e-13);
  }
}

TEST_CASE("scoped override restores the previous table") {
  const auto before = kernels::active().isa;
  {
    kernels::ScopedIsa s(kernels::Isa::scalar);
    CHECK(kernels::active().isa == kernels::Isa::scalar);
  }
  CHECK(kernels::active().isa == before);
}

TEST_CASE("engine outputs do not depend on the kernel table") {
  if (!kernels::available(kernels::Isa::avx2)) return;
  const Dims dims{8, 16, 8, 2};
  std::mt19937_64 rng(3);
  Matrix x(24, dims.d);
  for (double& v : x.flat()) v = std::normal_distribution<double>()(rng);
  for (Architecture a : all_architectures()) {
    CAPTURE(to_string(a));
    const auto p = preset(a, dims, {}, 11);
    Matrix ys, yv;
    {
      kernels::ScopedIsa s(kernels::Isa::scalar);
      ys = forward_dense(p.spec, p.proj, x);
    }
    {
      kernels::ScopedIsa s(kernels::Isa::avx2);
      yv = forward_dense(p.spec, p.proj, x);
    }
    CHECK(max_abs_diff(ys, yv) <= 1e-11);
  }
}
