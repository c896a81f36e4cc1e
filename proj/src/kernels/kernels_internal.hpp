#pragma once

#include "grounder/kernels.hpp"

namespace grounder::kernels::detail {

extern const KernelTable kScalarTable;
#if defined(GROUNDER_HAVE_AVX2)
extern const KernelTable kAvx2Table;
#endif

}  // namespace grounder::kernels::detail
