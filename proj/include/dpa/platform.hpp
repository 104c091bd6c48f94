#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace dpa {

/// Keeps freed tensor buffers in the process heap. Training allocates and frees
/// the same large blocks every step; returning them to the kernel each time
/// costs more than the arithmetic at small resolutions.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace dpa
