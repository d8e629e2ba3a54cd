"""Compare the numba and numpy convolution backends.

Run:  python3 benchmarks/bench_kernels.py [--repeats N]

Times the three primitive kernels (forward, input gradient, filter
gradient) on training-realistic extents and prints the speedup of the
jitted loops over the strided-slice + matmul fallback.  Both backends
are imported directly, so no environment flag is needed here; the
package itself selects a backend at import time via PBGAN_BACKEND.
"""

import argparse
import time

import numpy as np

from pbgan.kernels import numba_backend, numpy_backend
from pbgan.rng import rng_stream

CASES = [
    # (name, h, cin, cout, k, stride, pad)
    ("encoder 32x32x3->16", 32, 3, 16, 4, 2, 1),
    ("encoder 16x16x16->32", 16, 16, 32, 4, 2, 1),
    ("encoder 8x8x32->64", 8, 32, 64, 4, 2, 1),
    ("head 32x32x3->3", 32, 3, 3, 3, 1, 1),
]


def timeit(fn, repeats):
    fn()  # warm-up (and jit compilation for the numba path)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=20)
    args = ap.parse_args()

    rng = rng_stream(0, "probe")
    print(f"{'case':<28}{'kernel':<14}{'numba':>10}{'numpy':>10}{'speedup':>9}")
    for name, h, cin, cout, k, stride, pad in CASES:
        x = rng.normal(0, 1, (h, h, cin))
        f = rng.normal(0, 1, (k, k, cin, cout))
        oh = (h + 2 * pad - k) // stride + 1
        gy = rng.normal(0, 1, (oh, oh, cout))

        kernels = {
            "forward": lambda be: be.conv2d_forward(x, f, stride, pad),
            "grad_input": lambda be: be.conv2d_grad_input(gy, f, stride, pad, h, h),
            "grad_filters": lambda be: be.conv2d_grad_filters(x, gy, stride, pad, k, k),
        }
        for kname, call in kernels.items():
            a = numba_backend
            b = numpy_backend
            out_a = call(a)
            out_b = call(b)
            assert np.abs(np.asarray(out_a) - np.asarray(out_b)).max() <= 1e-10
            t_a = timeit(lambda: call(a), args.repeats)
            t_b = timeit(lambda: call(b), args.repeats)
            print(f"{name:<28}{kname:<14}{t_a * 1e3:>8.3f}ms{t_b * 1e3:>8.3f}ms"
                  f"{t_b / t_a:>8.2f}x")


if __name__ == "__main__":
    main()
