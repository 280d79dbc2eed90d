"""Benchmark the numba kernels against the pure-numpy fallback.

Runs both backends on identical inputs, checks they agree, and reports
per-call times for the pooling and upsampling kernels at a few batch
shapes.  Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from tricot.kernels import _numpy

try:
    from tricot.kernels import _numba
    HAS_NUMBA = True
except ImportError:
    _numba = None
    HAS_NUMBA = False

SHAPES = [(16, 64, 64), (64, 256, 128), (128, 512, 128)]
STRIDE = 5


def _inputs(shape, rng):
    b, t, c = shape
    x = rng.normal(size=(b, t, c))
    mask = rng.random((b, t)) < 0.9
    mask[:, 0] = True  # keep the first window non-empty for every row
    return x, mask


def _check(shape, rng):
    """Both backends must agree bit-for-bit on the same inputs."""
    x, mask = _inputs(shape, rng)
    t = x.shape[1]
    out_np, cnt_np, src_np = _numpy.masked_mean_pool_fwd(x, mask, STRIDE)
    out_nb, cnt_nb, src_nb = _numba.masked_mean_pool_fwd(x, mask, STRIDE)
    assert np.allclose(out_np, out_nb, rtol=0, atol=1e-12)
    assert np.array_equal(cnt_np, cnt_nb) and np.array_equal(src_np, src_nb)
    g = rng.normal(size=out_np.shape)
    assert np.allclose(_numpy.masked_mean_pool_bwd(g, mask, STRIDE, cnt_np, src_np, t),
                       _numba.masked_mean_pool_bwd(g, mask, STRIDE, cnt_nb, src_nb, t),
                       rtol=0, atol=1e-12)
    up_np = _numpy.linear_upsample_fwd(out_np, t)
    up_nb = _numba.linear_upsample_fwd(out_nb, t)
    assert np.allclose(up_np, up_nb, rtol=0, atol=1e-12)
    gu = rng.normal(size=up_np.shape)
    assert np.allclose(_numpy.linear_upsample_bwd(gu, out_np.shape[1]),
                       _numba.linear_upsample_bwd(gu, out_nb.shape[1]),
                       rtol=0, atol=1e-12)


def _time(fn, repeat: int) -> float:
    best = min(timeit.repeat(fn, number=1, repeat=repeat))
    return best * 1e3  # ms


def bench(shape, repeat: int, rng) -> list:
    x, mask = _inputs(shape, rng)
    t = x.shape[1]
    out, cnt, src = _numpy.masked_mean_pool_fwd(x, mask, STRIDE)
    g = rng.normal(size=out.shape)
    up = _numpy.linear_upsample_fwd(out, t)
    gu = rng.normal(size=up.shape)

    cases = [
        ("pool_fwd", lambda m: m.masked_mean_pool_fwd(x, mask, STRIDE)),
        ("pool_bwd", lambda m: m.masked_mean_pool_bwd(g, mask, STRIDE, cnt, src, t)),
        ("upsample_fwd", lambda m: m.linear_upsample_fwd(out, t)),
        ("upsample_bwd", lambda m: m.linear_upsample_bwd(gu, out.shape[1])),
    ]
    rows = []
    for name, call in cases:
        t_np = _time(lambda: call(_numpy), repeat)
        if HAS_NUMBA:
            call(_numba)  # warm the JIT outside the timed region
            t_nb = _time(lambda: call(_numba), repeat)
            rows.append((name, shape, t_np, t_nb, t_np / t_nb))
        else:
            rows.append((name, shape, t_np, None, None))
    return rows


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=20,
                        help="timing repetitions per case (best is kept)")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    if HAS_NUMBA:
        for shape in SHAPES:
            _check(shape, rng)
        print("backend agreement verified (atol 1e-12)")
    else:
        print("numba unavailable; timing the numpy backend only")

    header = f"{'kernel':<14}{'shape':<18}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}"
    print(header)
    print("-" * len(header))
    for shape in SHAPES:
        for name, shp, t_np, t_nb, gain in bench(shape, args.repeat, rng):
            nb = f"{t_nb:10.3f}" if t_nb is not None else f"{'n/a':>10}"
            sp = f"{gain:8.1f}x" if gain is not None else f"{'n/a':>9}"
            print(f"{name:<14}{str(shp):<18}{t_np:10.3f}{nb}{sp}")


if __name__ == "__main__":
    main()
