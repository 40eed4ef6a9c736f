#include <atomic>
#include <cstdlib>
#include <string>

#include "mempert/kernels.hpp"

namespace mempert::kernels {

const KernelTable& avx2_table_unchecked();

namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* initial_table() {
  const char* forced = std::getenv("MEMPERT_ISA");
  const KernelTable* simd = avx2_table();
  if (forced != nullptr && std::string(forced) == "scalar") return &scalar_table();
  return simd != nullptr ? simd : &scalar_table();
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> table{initial_table()};
  return table;
}

}  // namespace

const KernelTable* avx2_table() {
  static const bool supported = cpu_has_avx2();
  return supported ? &avx2_table_unchecked() : nullptr;
}

const KernelTable& active() { return *current().load(std::memory_order_relaxed); }

Isa active_isa() { return active().isa; }

std::string_view isa_name(Isa isa) { return isa == Isa::kAvx2 ? "avx2" : "scalar"; }

bool select(Isa isa) {
  const KernelTable* table = isa == Isa::kAvx2 ? avx2_table() : &scalar_table();
  if (table == nullptr) return false;
  current().store(table, std::memory_order_relaxed);
  return true;
}

}  // namespace mempert::kernels
