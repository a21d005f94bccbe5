"""Process-level tuning for the CPU training hot loop.

The training step allocates and frees a few hundred MB of large arrays;
with glibc defaults those round-trip through mmap/munmap and the page
faults dominate the step time.  Raising the malloc thresholds keeps the
blocks on the heap for reuse.  BLAS pools are pinned to one thread
because the network's GEMMs are too small to parallelize profitably;
parallelism comes from fold-level worker processes instead.
"""

from __future__ import annotations

import ctypes

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3


def tune_allocator() -> bool:
    try:
        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(_M_MMAP_THRESHOLD, 1 << 30)
        libc.mallopt(_M_TRIM_THRESHOLD, 1 << 30)
        return True
    except (OSError, AttributeError):
        return False


def limit_blas_threads(limit: int = 1) -> bool:
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return False
    threadpool_limits(limit)
    return True


def tune_process():
    tune_allocator()
    limit_blas_threads(1)
