"""Process-level tuning for the numpy-heavy training loops."""

import ctypes
import logging

log = logging.getLogger(__name__)

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3


def tune_allocator(threshold: int = 512 * 1024 * 1024) -> bool:
    """Keep large freed blocks in the heap instead of unmapping them.

    Training builds and discards many multi-megabyte arrays per step; with
    glibc defaults those round-trip through mmap/munmap and the page faults
    dominate the elementwise kernels. No-op on non-glibc platforms.
    """
    try:
        libc = ctypes.CDLL("libc.so.6")
        ok = libc.mallopt(_M_MMAP_THRESHOLD, threshold) == 1
        ok = libc.mallopt(_M_TRIM_THRESHOLD, threshold) == 1 and ok
        return ok
    except OSError:
        log.debug("mallopt not available; allocator left at defaults")
        return False
