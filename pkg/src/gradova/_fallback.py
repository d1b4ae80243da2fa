"""Pure-Python twins of the compiled kernels in ``_kernels.pyx``.

Same signatures, same in-place state updates, bit-identical output.
"""

MASK = 0xFFFFFFFFFFFFFFFF


def _rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & MASK


def fill_uint64(state, out):
    s0, s1, s2, s3 = (int(v) for v in state)
    for i in range(len(out)):
        out[i] = (_rotl((s0 + s3) & MASK, 23) + s0) & MASK
        t = (s1 << 17) & MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
    state[0], state[1], state[2], state[3] = s0, s1, s2, s3


def shuffle_inplace(state, items):
    n = len(items)
    if n < 2:
        return
    draws = [0] * (n - 1)
    fill_uint64(state, draws)
    work = [int(v) for v in items]
    for step, i in enumerate(range(n - 1, 0, -1)):
        j = ((draws[step] >> 32) * (i + 1)) >> 32
        work[i], work[j] = work[j], work[i]
    items[:] = work
