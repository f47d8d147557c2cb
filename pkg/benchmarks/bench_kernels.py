"""Benchmark the numba kernel lane against the pure-numpy fallback.

Run:  python benchmarks/bench_kernels.py [--points 131072] [--repeats 5]

The sizes default to one training iteration of the synthetic end-to-end
benchmark (2048 rays x 64 samples). Lane selection for the library itself is
via LANGFIELD_KERNELS; this script imports both lanes explicitly.
"""

import argparse
import time

import numpy as np


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--points", type=int, default=2048 * 64)
    ap.add_argument("--rays", type=int, default=2048)
    ap.add_argument("--samples", type=int, default=64)
    ap.add_argument("--levels", type=int, default=8)
    ap.add_argument("--features", type=int, default=2)
    ap.add_argument("--table-log2", type=int, default=15)
    ap.add_argument("--width", type=int, default=32)
    ap.add_argument("--feature-dim", type=int, default=16)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--dtype", choices=["f32", "f64"], default="f32")
    args = ap.parse_args()

    from langfield.kernels import numpy_impl

    try:
        from langfield.kernels import numba_impl
    except ImportError:
        numba_impl = None
        print("numba unavailable; benchmarking the numpy lane only")

    dtype = np.float32 if args.dtype == "f32" else np.float64
    rng = np.random.default_rng(0)
    b = args.points
    lf = args.levels * args.features

    pts = rng.random((b, 3)).astype(dtype)
    tables = rng.uniform(-1, 1, (args.levels, 1 << args.table_log2, args.features)).astype(dtype)
    res = np.unique(np.geomspace(16, 128, args.levels).astype(np.int64))
    res = np.resize(res, args.levels)
    direct = ((res + 1) ** 3 <= (1 << args.table_log2)).astype(np.int64)
    upstream = rng.standard_normal((b, lf)).astype(dtype)

    r, n, d = args.rays, args.samples, args.feature_dim
    t = np.sort(rng.uniform(0.1, 5.0, (r, n)), axis=1).astype(dtype)
    delta = np.empty_like(t)
    delta[:, :-1] = np.diff(t, axis=1)
    delta[:, -1] = 5.2 - t[:, -1]
    sigma = rng.uniform(0, 10, (r, n)).astype(dtype)
    rgb = rng.random((r, n, 3)).astype(dtype)
    feat = rng.standard_normal((r, n, d)).astype(dtype)

    mm_a = rng.standard_normal((b, lf)).astype(dtype)
    mm_b = rng.standard_normal((lf, args.width)).astype(dtype)
    mm_g = rng.standard_normal((b, args.width)).astype(dtype)

    cases = [
        ("encode_fwd", lambda im: im.encode_fwd(pts, tables, res, direct)),
        ("encode_bwd", lambda im: im.encode_bwd(pts, tables, res, direct, upstream, False)),
        ("composite_fwd", lambda im: im.composite_fwd(t, delta, sigma, rgb, feat)),
        ("matmul", lambda im: im.matmul(mm_a, mm_b)),
        ("matmul_tn", lambda im: im.matmul_tn(mm_a, mm_g)),
    ]

    fwd = None
    header = f"{'kernel':<14} {'numpy (ms)':>12} {'numba (ms)':>12} {'speedup':>9}"
    print(header)
    print("-" * len(header))
    for name, call in cases:
        t_np = best_of(lambda: call(numpy_impl), args.repeats) * 1e3
        if numba_impl is not None:
            call(numba_impl)  # compile outside the timed region
            t_nb = best_of(lambda: call(numba_impl), args.repeats) * 1e3
            print(f"{name:<14} {t_np:>12.2f} {t_nb:>12.2f} {t_np / t_nb:>8.1f}x")
        else:
            print(f"{name:<14} {t_np:>12.2f} {'-':>12} {'-':>9}")

    # composite_bwd needs the forward products
    fwd = numpy_impl.composite_fwd(t, delta, sigma, rgb, feat)
    dc = rng.standard_normal((r, 3)).astype(dtype)
    dd = rng.standard_normal(r).astype(dtype)
    df = rng.standard_normal((r, d)).astype(dtype)

    def bwd(im):
        return im.composite_bwd(t, delta, sigma, rgb, feat, fwd[4], fwd[5], dc, dd, df)

    t_np = best_of(lambda: bwd(numpy_impl), args.repeats) * 1e3
    if numba_impl is not None:
        bwd(numba_impl)
        t_nb = best_of(lambda: bwd(numba_impl), args.repeats) * 1e3
        print(f"{'composite_bwd':<14} {t_np:>12.2f} {t_nb:>12.2f} {t_np / t_nb:>8.1f}x")
    else:
        print(f"{'composite_bwd':<14} {t_np:>12.2f} {'-':>12} {'-':>9}")


if __name__ == "__main__":
    main()
