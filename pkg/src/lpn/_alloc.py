"""Keep large numpy temporaries on the heap instead of fresh mmap'd pages.

Training allocates and frees many arrays just above glibc's default mmap
threshold; on kernels where page faults are expensive this doubles the cost
of an iteration. No-op outside glibc.
"""
import ctypes
import ctypes.util

_M_TRIM_THRESHOLD = -1
_M_TOP_PAD = -2
_M_MMAP_THRESHOLD = -3
_done = False


def keep_heap_pages(threshold: int = 512 * 1024 * 1024) -> bool:
    global _done
    if _done:
        return True
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6")
        mallopt = libc.mallopt
    except (OSError, AttributeError):
        return False
    ok = all(mallopt(opt, threshold) == 1 for opt in (_M_MMAP_THRESHOLD, _M_TRIM_THRESHOLD, _M_TOP_PAD))
    _done = ok
    return ok
