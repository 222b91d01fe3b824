#include <cstdlib>
#include <string>

#include "ksteer/error.hpp"
#include "tables.hpp"

namespace ksteer::kernels {

namespace {

bool cpu_supports(Isa isa) {
    switch (isa) {
        case Isa::scalar:
            return true;
        case Isa::avx2:
#if KSTEER_HAVE_AVX2 && (defined(__GNUC__) || defined(__clang__))
            return __builtin_cpu_supports("avx2");
#else
            return false;
#endif
        case Isa::neon:
            return KSTEER_HAVE_NEON != 0;
    }
    return false;
}

const KernelTable* compiled_table(Isa isa) {
    switch (isa) {
        case Isa::scalar:
            return &detail::scalar_table;
        case Isa::avx2:
#if KSTEER_HAVE_AVX2
            return &detail::avx2_table;
#else
            return nullptr;
#endif
        case Isa::neon:
#if KSTEER_HAVE_NEON
            return &detail::neon_table;
#else
            return nullptr;
#endif
    }
    return nullptr;
}

const KernelTable& select() {
    if (const char* forced = std::getenv("KSTEER_KERNELS"); forced && *forced) {
        const std::string name(forced);
        for (Isa isa : {Isa::scalar, Isa::avx2, Isa::neon}) {
            if (name == isa_name(isa)) {
                if (const KernelTable* t = table_for(isa)) return *t;
                throw InvalidInput("KSTEER_KERNELS=" + name + " is not available on this CPU");
            }
        }
        throw InvalidInput("unknown KSTEER_KERNELS value: " + name);
    }
    for (Isa isa : {Isa::avx2, Isa::neon}) {
        if (const KernelTable* t = table_for(isa)) return *t;
    }
    return detail::scalar_table;
}

}  // namespace

const KernelTable* table_for(Isa isa) {
    return cpu_supports(isa) ? compiled_table(isa) : nullptr;
}

const KernelTable& active() {
    static const KernelTable& table = select();
    return table;
}

std::vector<Isa> available() {
    std::vector<Isa> out;
    for (Isa isa : {Isa::scalar, Isa::avx2, Isa::neon}) {
        if (table_for(isa)) out.push_back(isa);
    }
    return out;
}

std::string_view isa_name(Isa isa) {
    switch (isa) {
        case Isa::scalar:
            return "scalar";
        case Isa::avx2:
            return "avx2";
        case Isa::neon:
            return "neon";
    }
    return "unknown";
}

}  // namespace ksteer::kernels
