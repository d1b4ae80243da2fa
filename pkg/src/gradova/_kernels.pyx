# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled scalar kernels: xoshiro256++ stream and Fisher-Yates shuffle.

Both functions advance ``state`` in place and must stay bit-compatible with
``gradova._fallback``.
"""

from libc.stdint cimport uint64_t, int64_t


cdef inline uint64_t rotl(uint64_t x, int k) nogil:
    return (x << k) | (x >> (64 - k))


cdef inline uint64_t next_u64(uint64_t* s) nogil:
    cdef uint64_t result = rotl(s[0] + s[3], 23) + s[0]
    cdef uint64_t t = s[1] << 17
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = rotl(s[3], 45)
    return result


def fill_uint64(uint64_t[::1] state, uint64_t[::1] out):
    cdef Py_ssize_t i, n = out.shape[0]
    cdef uint64_t s[4]
    for i in range(4):
        s[i] = state[i]
    with nogil:
        for i in range(n):
            out[i] = next_u64(s)
    for i in range(4):
        state[i] = s[i]


def shuffle_inplace(uint64_t[::1] state, int64_t[::1] items):
    cdef Py_ssize_t i, j, n = items.shape[0]
    cdef uint64_t s[4]
    cdef int64_t tmp
    for i in range(4):
        s[i] = state[i]
    with nogil:
        i = n - 1
        while i > 0:
            j = <Py_ssize_t>(((next_u64(s) >> 32) * <uint64_t>(i + 1)) >> 32)
            tmp = items[i]
            items[i] = items[j]
            items[j] = tmp
            i -= 1
    for i in range(4):
        state[i] = s[i]
