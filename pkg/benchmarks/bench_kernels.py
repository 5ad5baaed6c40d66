"""Time the hot kernels on each available backend.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--csv out.csv]

Shapes mirror the layers of a width-1/8 model on 64x64 inputs plus one
full-width layer.
"""

import argparse
import csv
import sys
import timeit

import numpy as np

from raunet import kernels

# (name, input shape N,C,H,W, kernel, stride, pad)
CASES = [
    ("stem7x7", (8, 3, 64, 64), 7, 2, 3),
    ("enc3x3_c8", (8, 8, 16, 16), 3, 1, 1),
    ("enc3x3_c64", (8, 64, 8, 8), 3, 1, 1),
    ("full3x3_c64", (2, 64, 56, 56), 3, 1, 1),
]


def bench(mod, shape, k, stride, pad, dtype, repeat):
    rng = np.random.default_rng(0)
    x = rng.standard_normal(shape).astype(dtype)
    cols = mod.im2col(x, k, k, stride, pad)
    pool, arg = mod.maxpool_forward(x, 3, 2, 1)
    g = np.ones_like(pool)
    timings = {
        "im2col": lambda: mod.im2col(x, k, k, stride, pad),
        "col2im": lambda: mod.col2im(cols, x.shape, k, k, stride, pad),
        "maxpool_fwd": lambda: mod.maxpool_forward(x, 3, 2, 1),
        "maxpool_bwd": lambda: mod.maxpool_backward(g, arg, x.shape),
    }
    out = {}
    for name, fn in timings.items():
        number = 3
        out[name] = min(timeit.repeat(fn, number=number, repeat=repeat)) / number
    return out


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--dtype", choices=["float32", "float64"], default="float32")
    parser.add_argument("--csv", help="also write results here")
    args = parser.parse_args(argv)

    backends = kernels.backends()
    if "cython" not in backends:
        print("note: compiled kernels not built; timing the python fallback only", file=sys.stderr)
    rows = []
    for case, shape, k, stride, pad in CASES:
        per = {b: bench(m, shape, k, stride, pad, np.dtype(args.dtype), args.repeat) for b, m in backends.items()}
        for kernel in per["python"]:
            row = {"case": case, "kernel": kernel}
            for b in backends:
                row[f"{b}_ms"] = round(per[b][kernel] * 1e3, 3)
            if "cython" in per:
                row["speedup"] = round(per["python"][kernel] / per["cython"][kernel], 2)
            rows.append(row)

    header = list(rows[0])
    print("  ".join(f"{h:>12}" for h in header))
    for r in rows:
        print("  ".join(f"{r[h]:>12}" for h in header))
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.DictWriter(fh, header, lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)


if __name__ == "__main__":
    main()
