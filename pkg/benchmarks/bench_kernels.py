"""Compiled vs pure-Python kernels: raw stream, shuffle, and dataset generation.

    python benchmarks/bench_kernels.py [--n 200000] [--repeat 3]

The end-to-end row runs ``data.generate`` in a subprocess with
``GRADOVA_PURE=1`` so the whole package picks up the fallback.
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from gradova import _fallback, rng

GENERATE = ("import time; from gradova import data; t = time.perf_counter(); "
            "data.generate(data.DatasetSpec(dim=32, samples_per_class=600, "
            "ood=data.OodSpec(samples_per_class=1400))); print(time.perf_counter() - t)")


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def end_to_end(pure, repeat):
    env = dict(os.environ)
    env.pop("GRADOVA_PURE", None)
    if pure:
        env["GRADOVA_PURE"] = "1"
    runs = [float(subprocess.run([sys.executable, "-c", GENERATE], env=env, capture_output=True,
                                 text=True, check=True).stdout) for _ in range(repeat)]
    return min(runs)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=200_000, help="draws / items per kernel call")
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)

    if rng.BACKEND != "compiled":
        sys.exit("compiled extension not importable; build it with pip install -e . first")
    compiled = rng._backend

    rows = []
    for name, backend in (("compiled", compiled), ("python", _fallback)):
        stream = rng.Xoshiro256pp(1, backend=backend)
        t_fill = best_of(lambda: stream.next_uint64(args.n), args.repeat)
        items = np.arange(args.n, dtype=np.int64)
        t_shuf = best_of(lambda: stream.shuffle(items), args.repeat)
        t_gen = end_to_end(name == "python", args.repeat)
        rows.append((name, t_fill, t_shuf, t_gen))

    a = rng.Xoshiro256pp(5, backend=compiled).next_uint64(1000)
    b = rng.Xoshiro256pp(5, backend=_fallback).next_uint64(1000)
    print(f"streams identical: {bool(np.array_equal(a, b))}")
    print(f"{'backend':10s} {'uint64 x n':>12s} {'shuffle n':>12s} {'generate':>12s}")
    for name, *times in rows:
        print(f"{name:10s} " + " ".join(f"{t:11.4f}s" for t in times))
    c, p = rows
    print(f"{'speedup':10s} " + " ".join(f"{pt / ct:11.1f}x" for ct, pt in zip(c[1:], p[1:])))


if __name__ == "__main__":
    main()
