"""Pure-numpy implementations of the per-pixel image kernels.

These are the fallback used when the compiled extension is unavailable
(or when FINPARSE_PURE_KERNELS=1). Every function here is the bit-exact
twin of its counterpart in the native module: the arithmetic is written
in the same operation order, in float64, with round-half-even rounding,
so both backends produce identical byte output for identical input.
"""

from __future__ import annotations

import numpy as np

WHITE = 255.0


def _bilinear_gather(src: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample src (H, W) at float coords; points outside the grid read white."""
    h, w = src.shape
    outside = (xs < 0.0) | (xs > w - 1.0) | (ys < 0.0) | (ys > h - 1.0)
    xc = np.clip(xs, 0.0, w - 1.0)
    yc = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(xc).astype(np.intp)
    y0 = np.floor(yc).astype(np.intp)
    fx = xc - x0
    fy = yc - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    p00 = src[y0, x0].astype(np.float64)
    p01 = src[y0, x1].astype(np.float64)
    p10 = src[y1, x0].astype(np.float64)
    p11 = src[y1, x1].astype(np.float64)
    v0 = p00 + fx * (p01 - p00)
    v1 = p10 + fx * (p11 - p10)
    v = v0 + fy * (v1 - v0)
    v[outside] = WHITE
    return v


def rotate_bilinear(img: np.ndarray, angle_deg: float) -> np.ndarray:
    """Rotate counterclockwise (as displayed) about the center.

    The output canvas expands to fit the rotated bounds; uncovered area is
    white. Sampling is bilinear with a single round at the end.
    """
    h, w = img.shape
    theta = np.deg2rad(angle_deg)
    c, s = np.cos(theta), np.sin(theta)
    out_w = int(np.ceil(w * abs(c) + h * abs(s)))
    out_h = int(np.ceil(w * abs(s) + h * abs(c)))
    cx_in = (w - 1) / 2.0
    cy_in = (h - 1) / 2.0
    cx_out = (out_w - 1) / 2.0
    cy_out = (out_h - 1) / 2.0

    yy, xx = np.meshgrid(np.arange(out_h, dtype=np.float64),
                         np.arange(out_w, dtype=np.float64), indexing="ij")
    xo = xx - cx_out
    yo = yy - cy_out
    # Inverse map: displayed-CCW rotation by -angle (y axis points down).
    xs = xo * c - yo * s + cx_in
    ys = xo * s + yo * c + cy_in
    v = _bilinear_gather(img, ys, xs)
    return np.clip(np.rint(v), 0.0, 255.0).astype(np.uint8)


def _cubic_weight(x: np.ndarray, a: float) -> np.ndarray:
    """Keys bicubic convolution kernel with parameter a."""
    ax = np.abs(x)
    w = np.zeros_like(ax)
    near = ax <= 1.0
    far = (ax > 1.0) & (ax < 2.0)
    w[near] = ((a + 2.0) * ax[near] - (a + 3.0)) * ax[near] * ax[near] + 1.0
    w[far] = (((ax[far] - 5.0) * ax[far] + 8.0) * ax[far] - 4.0) * a
    return w


def _bicubic_axis(src: np.ndarray, out_len: int, axis: int, a: float) -> np.ndarray:
    """Resample one axis with 4-tap bicubic; edges replicate."""
    in_len = src.shape[axis]
    scale = in_len / out_len
    x = (np.arange(out_len, dtype=np.float64) + 0.5) * scale - 0.5
    base = np.floor(x)
    t = x - base
    idx = np.stack([base - 1, base, base + 1, base + 2]).astype(np.intp)
    idx = np.clip(idx, 0, in_len - 1)
    wts = np.stack([
        _cubic_weight(1.0 + t, a),
        _cubic_weight(t, a),
        _cubic_weight(1.0 - t, a),
        _cubic_weight(2.0 - t, a),
    ])
    if axis == 1:
        g = src[:, idx]                    # (H, 4, out)
        return g[:, 0] * wts[0] + g[:, 1] * wts[1] + g[:, 2] * wts[2] + g[:, 3] * wts[3]
    g = src[idx, :]                        # (4, out, W)
    return (g[0] * wts[0][:, None] + g[1] * wts[1][:, None]
            + g[2] * wts[2][:, None] + g[3] * wts[3][:, None])


def resize_bicubic(img: np.ndarray, out_h: int, out_w: int, a: float = -0.5) -> np.ndarray:
    """Bicubic resample to (out_h, out_w) with pixel-center alignment."""
    tmp = _bicubic_axis(img.astype(np.float64), out_w, axis=1, a=a)
    out = _bicubic_axis(tmp, out_h, axis=0, a=a)
    return np.clip(np.rint(out), 0.0, 255.0).astype(np.uint8)


def _tile_bounds(size: int, tiles: int) -> list[tuple[int, int]]:
    return [(size * t // tiles, size * (t + 1) // tiles) for t in range(tiles)]


def _clahe_luts(img: np.ndarray, tiles_y: int, tiles_x: int,
                clip_limit: float) -> np.ndarray:
    """Per-tile clipped-equalization lookup tables, float64 (T_y, T_x, 256).

    Histogram excess above the clip is redistributed uniformly (remainder
    goes to the lowest bins). A zero-contrast tile maps to identity so
    constant regions pass through unchanged.
    """
    luts = np.empty((tiles_y, tiles_x, 256), dtype=np.float64)
    identity = np.arange(256, dtype=np.float64)
    ybounds = _tile_bounds(img.shape[0], tiles_y)
    xbounds = _tile_bounds(img.shape[1], tiles_x)
    for ty, (y0, y1) in enumerate(ybounds):
        for tx, (x0, x1) in enumerate(xbounds):
            tile = img[y0:y1, x0:x1]
            area = tile.size
            hist = np.bincount(tile.ravel(), minlength=256).astype(np.int64)
            nonzero = np.flatnonzero(hist)
            if len(nonzero) <= 1:
                luts[ty, tx] = identity
                continue
            clip = max(1, int(clip_limit * area / 256.0))
            excess = int(np.maximum(hist - clip, 0).sum())
            hist = np.minimum(hist, clip)
            hist += excess // 256
            hist[: excess % 256] += 1
            cdf = np.cumsum(hist, dtype=np.float64)
            lut = np.rint(cdf * (255.0 / area))
            luts[ty, tx] = np.clip(lut, 0.0, 255.0)
    return luts


def _interp_coords(size: int, tiles: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel lower tile index and blend weight toward the next tile."""
    centers = np.array(
        [b0 + (b1 - b0 - 1) / 2.0 for b0, b1 in _tile_bounds(size, tiles)]
    )
    pos = np.arange(size, dtype=np.float64)
    i0 = np.clip(np.searchsorted(centers, pos, side="right") - 1, 0, tiles - 2) \
        if tiles > 1 else np.zeros(size, dtype=np.intp)
    i0 = i0.astype(np.intp)
    if tiles > 1:
        c0 = centers[i0]
        c1 = centers[i0 + 1]
        w = np.clip((pos - c0) / (c1 - c0), 0.0, 1.0)
    else:
        w = np.zeros(size, dtype=np.float64)
    return i0, w


def clahe_blend(img: np.ndarray, luts: np.ndarray, ty0: np.ndarray,
                wy: np.ndarray, tx0: np.ndarray, wx: np.ndarray) -> np.ndarray:
    """Apply per-tile lookup tables, blended bilinearly between the four
    nearest tile centers (clamped at the borders)."""
    tiles_y, tiles_x = luts.shape[:2]
    ty1 = np.minimum(ty0 + 1, tiles_y - 1)
    tx1 = np.minimum(tx0 + 1, tiles_x - 1)

    ty0g = ty0[:, None]
    ty1g = ty1[:, None]
    tx0g = tx0[None, :]
    tx1g = tx1[None, :]
    v = img.astype(np.intp)
    l00 = luts[ty0g, tx0g, v]
    l01 = luts[ty0g, tx1g, v]
    l10 = luts[ty1g, tx0g, v]
    l11 = luts[ty1g, tx1g, v]
    wxg = wx[None, :]
    wyg = wy[:, None]
    top = l00 + wxg * (l01 - l00)
    bot = l10 + wxg * (l11 - l10)
    out = top + wyg * (bot - top)
    return np.clip(np.rint(out), 0.0, 255.0).astype(np.uint8)


def _gauss_taps(sigma: float) -> np.ndarray:
    offs = np.arange(-2, 3, dtype=np.float64)
    w = np.exp(-(offs * offs) / (2.0 * sigma * sigma))
    return w / w.sum()


def gaussian_blur5(img: np.ndarray, sigma: float = 0.8) -> np.ndarray:
    """Separable 5x5 Gaussian blur; edges replicate."""
    w = _gauss_taps(sigma)
    f = img.astype(np.float64)
    px = np.pad(f, ((0, 0), (2, 2)), mode="edge")
    tmp = (w[0] * px[:, 0:-4] + w[1] * px[:, 1:-3] + w[2] * px[:, 2:-2]
           + w[3] * px[:, 3:-1] + w[4] * px[:, 4:])
    py = np.pad(tmp, ((2, 2), (0, 0)), mode="edge")
    out = (w[0] * py[0:-4, :] + w[1] * py[1:-3, :] + w[2] * py[2:-2, :]
           + w[3] * py[3:-1, :] + w[4] * py[4:, :])
    return np.clip(np.rint(out), 0.0, 255.0).astype(np.uint8)


def hough_accumulate(rows: np.ndarray, cols: np.ndarray, sin_t: np.ndarray,
                     cos_t: np.ndarray, rho_offset: int, n_rho: int) -> np.ndarray:
    """Vote counts per (angle, rho) cell for the given edge points.

    rho = col*sin(theta) + row*cos(theta), rounded to the nearest integer
    bin and shifted by rho_offset.
    """
    n_angles = len(sin_t)
    votes = np.zeros((n_angles, n_rho), dtype=np.int64)
    r = rows.astype(np.float64)
    c = cols.astype(np.float64)
    for i in range(n_angles):
        rho = np.rint(c * sin_t[i] + r * cos_t[i]).astype(np.int64) + rho_offset
        votes[i] = np.bincount(rho, minlength=n_rho)
    return votes
