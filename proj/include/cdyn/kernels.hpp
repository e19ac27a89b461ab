#pragma once

#include <cstddef>
#include <span>
#include <string_view>

// Inner-loop arithmetic with a scalar reference implementation and an AVX2/FMA
// variant. The active table is chosen once at startup from CPUID and may be
// overridden with CDYN_KERNELS=scalar|avx2 or kernels::select().

namespace cdyn::kernels {

enum class Isa { scalar, avx2 };

struct Table {
  Isa isa;
  const char* name;
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y += a * x
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  // y = a * x + b * y
  void (*axpby)(double a, const double* x, double b, double* y, std::size_t n);
  // y *= a
  void (*scale)(double a, double* y, std::size_t n);
  // y *= x (elementwise)
  void (*mul)(const double* x, double* y, std::size_t n);
};

const Table& scalar_table() noexcept;
/// Null when the translation unit was built for a non-x86 target.
const Table* avx2_table() noexcept;

bool available(Isa isa) noexcept;
const Table& table(Isa isa);
const Table& active() noexcept;
/// Switch the process-wide table; throws ConfigError if unavailable.
void select(Isa isa);
Isa parse_isa(std::string_view name);

/// RAII override for tests.
class ScopedIsa {
 public:
  explicit ScopedIsa(Isa isa);
  ~ScopedIsa();
  ScopedIsa(const ScopedIsa&) = delete;
  ScopedIsa& operator=(const ScopedIsa&) = delete;

 private:
  Isa previous_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot(a.data(), b.data(), a.size());
}
inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  active().axpy(a, x.data(), y.data(), y.size());
}
inline void axpby(double a, std::span<const double> x, double b, std::span<double> y) {
  active().axpby(a, x.data(), b, y.data(), y.size());
}
inline void scale(double a, std::span<double> y) { active().scale(a, y.data(), y.size()); }
inline void mul(std::span<const double> x, std::span<double> y) {
  active().mul(x.data(), y.data(), y.size());
}

}  // namespace cdyn::kernels
