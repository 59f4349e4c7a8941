"""Image kernels with a compiled fast path and a pure-numpy fallback.

The native Cython module is preferred when it imported cleanly; setting
FINPARSE_PURE_KERNELS=1 forces the fallback. Both backends are bit-exact
twins, so the choice never changes pipeline output.
"""

from __future__ import annotations

import os

import numpy as np

from . import pure

if os.environ.get("FINPARSE_PURE_KERNELS"):
    _impl = pure
    BACKEND = "pure"
else:
    try:
        from . import _native as _impl  # type: ignore[no-redef]
        BACKEND = "native"
    except ImportError:
        _impl = pure
        BACKEND = "pure"

rotate_bilinear = _impl.rotate_bilinear
resize_bicubic = _impl.resize_bicubic
gaussian_blur5 = _impl.gaussian_blur5
hough_accumulate = _impl.hough_accumulate


def clahe(img: np.ndarray, tiles_y: int = 8, tiles_x: int = 8,
          clip_limit: float = 2.0) -> np.ndarray:
    """Contrast-limited adaptive histogram equalization.

    Tile LUT construction is cheap and shared; the per-pixel blend runs on
    the selected backend.
    """
    luts = pure._clahe_luts(img, tiles_y, tiles_x, clip_limit)
    ty0, wy = pure._interp_coords(img.shape[0], tiles_y)
    tx0, wx = pure._interp_coords(img.shape[1], tiles_x)
    return _impl.clahe_blend(img, luts, ty0, wy, tx0, wx)


def get_backend(name: str):
    """Return the kernel namespace for 'pure' or 'native' (benchmarks)."""
    if name == "pure":
        return pure
    if name == "native":
        from . import _native
        return _native
    raise ValueError(f"unknown kernel backend {name!r}")
