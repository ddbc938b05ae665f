"""Time the compiled and pure-Python Jacobi kernels on the same inputs.

    python3 benchmarks/bench_svd.py [--repeat N] [--sizes 8x4,64x16,...]
"""
import argparse
import timeit

import numpy as np

from fairwin import _kernels, linalg


def parse_sizes(text):
    return [tuple(int(v) for v in part.split("x")) for part in text.split(",")]


def bench(kernel, m, repeat):
    def once():
        work = np.ascontiguousarray(m.T.copy())
        kernel(work, np.eye(m.shape[1]), linalg.SWEEP_TOL, linalg.MAX_SWEEPS)
    return min(timeit.repeat(once, number=1, repeat=repeat))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--sizes", default="8x4,32x2,64x16,256x32,512x64")
    args = parser.parse_args(argv)
    rng = np.random.default_rng(0)
    compiled = _kernels.compiled_jacobi_sweeps
    print(f"{'shape':>10} {'python [ms]':>12} {'cython [ms]':>12} {'speedup':>8}")
    for rows, cols in parse_sizes(args.sizes):
        m = rng.normal(size=(rows, cols))
        t_py = bench(_kernels.python_jacobi_sweeps, m, args.repeat)
        if compiled is None:
            print(f"{rows}x{cols:<6} {t_py * 1e3:12.3f} {'n/a':>12} {'n/a':>8}")
            continue
        t_c = bench(compiled, m, args.repeat)
        print(f"{f'{rows}x{cols}':>10} {t_py * 1e3:12.3f} {t_c * 1e3:12.3f} {t_py / t_c:7.1f}x")


if __name__ == "__main__":
    main()
