#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-numpy fallback.

Runs each hot kernel on a realistic page-sized image and reports per-call
times plus the native speedup. Outputs are also cross-checked for byte
equality, since backend choice must never change pipeline results.
"""

import time

import numpy as np

from finparse.kernels import get_backend, pure


def _page(rng, h=2200, w=1700):
    img = np.full((h, w), 235, dtype=np.uint8)
    for y in range(80, h - 80, 56):
        length = int(rng.integers(600, w - 200))
        img[y:y + 18, 100:100 + length] = 20
    return img


def _time(fn, *args, repeat=3):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    rng = np.random.default_rng(0)
    img = _page(rng)
    h, w = img.shape
    print(f"image: {w}x{h} uint8")

    try:
        native = get_backend("native")
    except ImportError:
        print("native kernels not built; run `pip install -e .` first")
        return

    luts = pure._clahe_luts(img, 8, 8, 2.0)
    ty0, wy = pure._interp_coords(h, 8)
    tx0, wx = pure._interp_coords(w, 8)
    ys, xs = np.nonzero(np.gradient(img.astype(np.float64))[0] != 0)
    rows, cols = ys.astype(np.float64), xs.astype(np.float64)
    thetas = np.deg2rad(np.arange(-150, 151) * 0.1)
    sin_t, cos_t = np.sin(thetas), np.cos(thetas)
    off = int(np.ceil(w * 0.2588)) + 2
    n_rho = off + h + int(np.ceil(w * 0.2588)) + 4

    cases = [
        ("rotate_bilinear 3.7deg", "rotate_bilinear", (img, 3.7)),
        ("resize_bicubic ->1600", "resize_bicubic", (img, 1600, 1236)),
        ("clahe_blend 8x8", "clahe_blend", (img, luts, ty0, wy, tx0, wx)),
        ("gaussian_blur5 s=0.8", "gaussian_blur5", (img, 0.8)),
        (f"hough {len(rows)}pts x301", "hough_accumulate",
         (rows, cols, sin_t, cos_t, off, n_rho)),
    ]

    print(f"{'kernel':<26} {'pure':>10} {'native':>10} {'speedup':>8}  equal")
    print("-" * 66)
    for label, name, args in cases:
        t_pure, out_pure = _time(getattr(pure, name), *args)
        t_nat, out_nat = _time(getattr(native, name), *args)
        equal = np.array_equal(out_pure, out_nat)
        print(f"{label:<26} {t_pure * 1e3:>8.1f}ms {t_nat * 1e3:>8.1f}ms "
              f"{t_pure / t_nat:>7.1f}x  {equal}")


if __name__ == "__main__":
    main()
