"""Compare the numba kernels against the pure-numpy fallback.

    python3 benchmarks/bench_kernels.py [--M 4] [--batch 1000] [--repeat 5]

Both paths are timed in the same process by toggling ``use_numba``; results
are checked to agree before timing.
"""
import argparse
import time

import numpy as np

from nsproj import _kernels
from nsproj.fourier_torus import basis
from nsproj.saturation import _box_mask
from nsproj.spectral import DIRECT, engine


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--M", type=int, default=4)
    ap.add_argument("--batch", type=int, default=1000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _kernels.HAVE_NUMBA:
        print("numba not installed; nothing to compare")
        return
    rng = np.random.default_rng(0)
    eng = engine(args.M)
    size = basis(args.M).size
    cu = rng.standard_normal((args.batch, size))
    cv = rng.standard_normal((args.batch, size))
    U, V = eng.box_hat(cu[:64]), eng.box_hat(cv[:64])
    mask = _box_mask([(0, 0), (1, 0), (-1, 0), (1, 1), (-1, -1), (2, 1), (-2, -1)], 12)
    cases = {
        f"symmetric advection, batch {args.batch}": lambda: eng.symmetric(cu, cv, DIRECT),
        "box convolution, batch 64": lambda: _kernels.conv_box(U, V, args.M),
        "lattice growth step, R=12": lambda: _kernels.grow_bitmap(mask, 12),
    }
    print(f"{'kernel':40s} {'numba [s]':>12s} {'numpy [s]':>12s} {'speedup':>9s}")
    for name, fn in cases.items():
        _kernels.use_numba(True)
        a = np.asarray(fn())
        tn = best_of(fn, args.repeat)
        _kernels.use_numba(False)
        b = np.asarray(fn())
        tp = best_of(fn, args.repeat)
        _kernels.use_numba(True)
        scale = max(float(np.max(np.abs(b))), 1.0)
        assert np.max(np.abs(a.astype(complex) - b.astype(complex))) <= 1e-10 * scale, name
        print(f"{name:40s} {tn:12.5f} {tp:12.5f} {tp / tn:9.1f}")


if __name__ == "__main__":
    main()
