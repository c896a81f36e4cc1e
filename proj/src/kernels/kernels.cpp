#include <atomic>

#include "grounder/error.hpp"
#include "kernels_internal.hpp"

namespace grounder::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(GROUNDER_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* detect() {
  if (const KernelTable* t = avx2()) return t;
  return &detail::kScalarTable;
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> table{detect()};
  return table;
}

}  // namespace

const KernelTable& scalar() { return detail::kScalarTable; }

const KernelTable* avx2() {
#if defined(GROUNDER_HAVE_AVX2)
  static const bool supported = cpu_has_avx2();
  return supported ? &detail::kAvx2Table : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable& active() { return *current().load(std::memory_order_relaxed); }

void select(std::string_view name) {
  if (name == "auto") {
    current().store(detect());
  } else if (name == "scalar") {
    current().store(&detail::kScalarTable);
  } else if (name == "avx2") {
    const KernelTable* t = avx2();
    if (t == nullptr) throw ConfigError("kernels: avx2 requested but not supported on this CPU");
    current().store(t);
  } else {
    throw ConfigError("kernels: unknown variant '" + std::string(name) + "'");
  }
}

std::vector<std::string> available() {
  std::vector<std::string> out{"scalar"};
  if (avx2() != nullptr) out.emplace_back("avx2");
  return out;
}

}  // namespace grounder::kernels
