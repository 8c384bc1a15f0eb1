# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled bitset kernels: AND + popcount over packed uint64 words.

Drop-in replacement for _bitset_np; selected automatically at import
when the extension is built.
"""

from libc.stdint cimport uint64_t

cdef extern from *:
    """
    #if defined(__GNUC__) || defined(__clang__)
    #  define SM_POPCOUNT64(x) __builtin_popcountll(x)
    #else
    static inline int SM_POPCOUNT64(unsigned long long x) {
        x = x - ((x >> 1) & 0x5555555555555555ULL);
        x = (x & 0x3333333333333333ULL) + ((x >> 2) & 0x3333333333333333ULL);
        x = (x + (x >> 4)) & 0x0f0f0f0f0f0f0f0fULL;
        return (int)((x * 0x0101010101010101ULL) >> 56);
    }
    #endif
    """
    int SM_POPCOUNT64(unsigned long long x) nogil


def count(const uint64_t[::1] a):
    cdef Py_ssize_t i, n = a.shape[0]
    cdef long long total = 0
    with nogil:
        for i in range(n):
            total += SM_POPCOUNT64(a[i])
    return total


def and_count(const uint64_t[::1] a, const uint64_t[::1] b):
    cdef Py_ssize_t i, n = a.shape[0]
    cdef long long total = 0
    with nogil:
        for i in range(n):
            total += SM_POPCOUNT64(a[i] & b[i])
    return total


def and_count_pair(const uint64_t[::1] a, const uint64_t[::1] b, const uint64_t[::1] c):
    cdef Py_ssize_t i, n = a.shape[0]
    cdef uint64_t ab
    cdef long long both = 0, masked = 0
    with nogil:
        for i in range(n):
            ab = a[i] & b[i]
            both += SM_POPCOUNT64(ab)
            masked += SM_POPCOUNT64(ab & c[i])
    return both, masked


def and_into(const uint64_t[::1] a, const uint64_t[::1] b, uint64_t[::1] out):
    cdef Py_ssize_t i, n = a.shape[0]
    cdef long long total = 0
    with nogil:
        for i in range(n):
            out[i] = a[i] & b[i]
            total += SM_POPCOUNT64(out[i])
    return total
