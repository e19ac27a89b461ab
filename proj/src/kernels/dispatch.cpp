#include <atomic>
#include <cstdlib>
#include <string>

#include "cdyn/errors.hpp"
#include "cdyn/kernels.hpp"

namespace cdyn::kernels {
namespace {

bool cpu_has_avx2() noexcept {
#if defined(__x86_64__) || defined(_M_X64)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const Table* initial_table() noexcept {
  if (const char* env = std::getenv("CDYN_KERNELS")) {
    const std::string v(env);
    if (v == "scalar") return &scalar_table();
    if (v == "avx2" && avx2_table() && cpu_has_avx2()) return avx2_table();
  }
  if (avx2_table() && cpu_has_avx2()) return avx2_table();
  return &scalar_table();
}

std::atomic<const Table*>& current() noexcept {
  static std::atomic<const Table*> t{initial_table()};
  return t;
}

}  // namespace

bool available(Isa isa) noexcept {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
      return avx2_table() != nullptr && cpu_has_avx2();
  }
  return false;
}

const Table& table(Isa isa) {
  if (!available(isa)) throw ConfigError("kernel ISA not available on this CPU");
  return isa == Isa::avx2 ? *avx2_table() : scalar_table();
}

const Table& active() noexcept { return *current().load(std::memory_order_acquire); }

void select(Isa isa) { current().store(&table(isa), std::memory_order_release); }

Isa parse_isa(std::string_view name) {
  if (name == "scalar") return Isa::scalar;
  if (name == "avx2") return Isa::avx2;
  throw ConfigError("unknown kernel ISA '" + std::string(name) + "'");
}

ScopedIsa::ScopedIsa(Isa isa) : previous_(active().isa) { select(isa); }
ScopedIsa::~ScopedIsa() { select(previous_); }

}  // namespace cdyn::kernels
