#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace mmalign {

// Tensor buffers of a few megabytes are allocated and freed on every step.
// glibc would hand each one back to the kernel and fault it in again; keep
// freed memory in the process heap instead.
inline void retain_freed_memory() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace mmalign
