#include <atomic>
#include <cstdlib>
#include <string>

#include "edge/kernels.hpp"

namespace edge::kernels {

const KernelTable* avx2_kernel_table();

namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const KernelTable* select_default() {
    if (const char* env = std::getenv("EDGE_KERNELS"); env && std::string(env) == "scalar")
        return &scalar_table();
    if (const KernelTable* t = avx2_table()) return t;
    return &scalar_table();
}

std::atomic<const KernelTable*>& current() {
    static std::atomic<const KernelTable*> table{select_default()};
    return table;
}

}  // namespace

const KernelTable* avx2_table() {
    static const KernelTable* table = cpu_has_avx2() ? avx2_kernel_table() : nullptr;
    return table;
}

const KernelTable& active() { return *current().load(std::memory_order_relaxed); }

Isa active_isa() { return active().isa; }

std::string_view isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

void force_isa(Isa isa) {
    const KernelTable* t = isa == Isa::avx2 ? avx2_table() : &scalar_table();
    if (t) current().store(t, std::memory_order_relaxed);
}

}  // namespace edge::kernels
