#pragma once

#include "ksteer/kernels.hpp"

namespace ksteer::kernels::detail {

extern const KernelTable scalar_table;
#if KSTEER_HAVE_AVX2
extern const KernelTable avx2_table;
#endif
#if KSTEER_HAVE_NEON
extern const KernelTable neon_table;
#endif

}  // namespace ksteer::kernels::detail
