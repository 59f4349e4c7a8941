"""Page preprocessing: content cropping, orientation and deskew, renormalization.

Turns a noisy scanned page into a cropped, upright, contrast-normalized
image, recording every applied transform in a PreprocessReport. All
operations are pure functions of their inputs and safe to run concurrently
over pages.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .config import PreprocessConfig
from .documents import PageImage
from .errors import ConfigError, FinparseError

CropRect = tuple[int, int, int, int]  # (x, y, w, h) in source pixels

FLAG_BLANK_PAGE = "blank_page"
FLAG_SKEW_LOW_CONFIDENCE = "skew_low_confidence"
FLAG_ORIENTATION_OCR_FALLBACK = "orientation_ocr_fallback"


@dataclass(frozen=True)
class PreprocessReport:
    """Every transform applied to one page, for debugging and provenance."""

    crop_rect: CropRect
    coarse_rotation_deg: int
    fine_skew_deg: float
    scale_factor: float
    applied_clahe: bool
    applied_denoise: bool
    flags: tuple[str, ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "crop_rect": list(self.crop_rect),
            "coarse_rotation_deg": self.coarse_rotation_deg,
            "fine_skew_deg": self.fine_skew_deg,
            "scale_factor": self.scale_factor,
            "applied_clahe": self.applied_clahe,
            "applied_denoise": self.applied_denoise,
            "flags": list(self.flags),
        }


def otsu_threshold(gray: np.ndarray) -> int:
    """Otsu's global threshold over a uint8 image (max between-class variance)."""
    hist = np.bincount(gray.ravel(), minlength=256).astype(np.float64)
    total = hist.sum()
    if total == 0:
        return 0
    p = hist / total
    omega = np.cumsum(p)
    mu = np.cumsum(p * np.arange(256))
    mu_t = mu[-1]
    denom = omega * (1.0 - omega)
    with np.errstate(divide="ignore", invalid="ignore"):
        sigma_b = np.where(denom > 0, (mu_t * omega - mu) ** 2 / denom, 0.0)
    return int(np.argmax(sigma_b))


def ink_mask(gray: np.ndarray) -> np.ndarray:
    """Boolean mask of ink (dark) pixels: Otsu class 0 (values <= threshold).

    Single-level images have no separable ink unless they are fully dark.
    """
    t = otsu_threshold(gray)
    return gray <= t


def _require_gray(page: PageImage) -> np.ndarray:
    if page.channels != 1:
        raise ValueError("preprocessing operates on grayscale pages")
    return page.to_array()


def segment_content(page: PageImage,
                    cfg: PreprocessConfig = PreprocessConfig()) -> CropRect:
    """Tight ink bounding box expanded by the crop margin, clamped to bounds.

    Pages whose ink area falls under the blank threshold return the full
    page rect.
    """
    gray = _require_gray(page)
    h, w = gray.shape
    mask = ink_mask(gray)
    ink_area = int(mask.sum())
    if ink_area == 0 or ink_area < cfg.blank_ink_frac * (h * w):
        return (0, 0, w, h)
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    my = int(round(cfg.crop_margin_frac * h))
    mx = int(round(cfg.crop_margin_frac * w))
    y0 = max(0, int(rows[0]) - my)
    y1 = min(h, int(rows[-1]) + 1 + my)
    x0 = max(0, int(cols[0]) - mx)
    x1 = min(w, int(cols[-1]) + 1 + mx)
    return (x0, y0, x1 - x0, y1 - y0)


def crop(page: PageImage, rect: CropRect) -> PageImage:
    x, y, w, h = rect
    arr = page.to_array()[y:y + h, x:x + w]
    return PageImage.from_array(np.ascontiguousarray(arr), page.page_no, page.dpi)


def rotate(page: PageImage, angle_deg: float) -> PageImage:
    """Rotate counterclockwise (as displayed) about the center.

    Multiples of 90 degrees are lossless index permutations; anything else
    resamples bilinearly onto an expanded white canvas.
    """
    if abs(angle_deg) > 360.0:
        raise ValueError(f"|angle| must be <= 360, got {angle_deg}")
    arr = page.to_array()
    if angle_deg % 90.0 == 0.0:
        k = int(angle_deg // 90) % 4
        out = np.ascontiguousarray(np.rot90(arr, k))
    elif page.channels == 1:
        out = kernels.rotate_bilinear(np.ascontiguousarray(arr), float(angle_deg))
    else:
        chans = [kernels.rotate_bilinear(np.ascontiguousarray(arr[:, :, i]),
                                         float(angle_deg)) for i in range(3)]
        out = np.stack(chans, axis=2)
    return PageImage.from_array(out, page.page_no, page.dpi)


def _projection_variance(mask: np.ndarray, axis: int) -> float:
    line_len = mask.shape[1 - axis]
    profile = mask.sum(axis=1 - axis) / float(line_len)
    return float(np.var(profile))


def _downscale_for_ocr(page: PageImage, long_side: int) -> PageImage:
    gray = _require_gray(page)
    h, w = gray.shape
    if max(h, w) <= long_side:
        return page
    if w >= h:
        out_w = long_side
        out_h = max(1, round(h * long_side / w))
    else:
        out_h = long_side
        out_w = max(1, round(w * long_side / h))
    out = kernels.resize_bicubic(np.ascontiguousarray(gray), out_h, out_w)
    return PageImage.from_array(out, page.page_no, page.dpi)


def classify_orientation(page: PageImage, ocr, cfg: PreprocessConfig = PreprocessConfig(),
                         languages: Sequence[str] = ("en",)) -> tuple[int, tuple[str, ...]]:
    """Coarse rotation (counterclockwise degrees) that makes the text upright.

    The portrait/landscape axis comes from comparing row-projection variance
    at 0 vs 90 degrees; the 0/180 (or 90/270) ambiguity is resolved by OCR
    mean token confidence on a downscaled copy at both candidates. If the
    OCR backend fails, falls back to the variance-only 0/90 answer and flags
    the report.
    """
    from .ocr import transcribe

    gray = _require_gray(page)
    mask = ink_mask(gray)
    var_rows = _projection_variance(mask, axis=0)
    var_cols = _projection_variance(mask, axis=1)
    candidates = (0, 180) if var_rows >= var_cols else (90, 270)

    small = _downscale_for_ocr(page, cfg.orientation_downscale_px)
    try:
        best = candidates[0]
        best_conf = -1.0
        for cand in candidates:
            probe = rotate(small, cand)
            t = transcribe(ocr, probe, list(languages))
            # strict inequality: ties keep the earlier candidate (0 before
            # 180, 90 before 270)
            if t.mean_confidence > best_conf:
                best = cand
                best_conf = t.mean_confidence
        return best, ()
    except FinparseError:
        return candidates[0], (FLAG_ORIENTATION_OCR_FALLBACK,)


def _edge_points(gray: np.ndarray, cfg: PreprocessConfig) -> tuple[np.ndarray, np.ndarray]:
    """Edge pixels of the binarized page, thresholded at the configured
    percentile of nonzero gradient magnitude.

    The threshold is capped at the plain binary-edge magnitude (0.5) so
    that straight ink boundaries always vote; on a two-level image the raw
    percentile can degenerate to corner pixels only.
    """
    binary = ink_mask(gray).astype(np.float64)
    gy, gx = np.gradient(binary)
    mag = np.hypot(gx, gy)
    nz = mag[mag > 0]
    if nz.size == 0:
        return np.empty(0), np.empty(0)
    tau = min(float(np.percentile(nz, cfg.edge_percentile)), 0.5)
    ys, xs = np.nonzero(mag >= tau)
    return ys.astype(np.float64), xs.astype(np.float64)


def estimate_skew(page: PageImage,
                  cfg: PreprocessConfig = PreprocessConfig()) -> tuple[float, bool]:
    """Dominant text-line angle within the Hough search range, 0.1° bins.

    Votes rho = x sin(theta) + y cos(theta) per edge point; candidate lines
    are accumulator cells at or above the vote threshold, and the returned
    angle is the bin whose candidate cells carry the most total votes (ties
    toward smaller |angle|). Returns (0.0, True) when fewer than the minimum
    number of candidate lines exist.
    """
    gray = _require_gray(page)
    h, w = gray.shape
    rows, cols = _edge_points(gray, cfg)

    n_bins = int(round(2 * cfg.hough_range_deg / cfg.hough_step_deg)) + 1
    thetas = np.arange(n_bins) * cfg.hough_step_deg - cfg.hough_range_deg
    if rows.size == 0:
        return 0.0, True
    rads = np.deg2rad(thetas)
    sin_t = np.sin(rads)
    cos_t = np.cos(rads)
    max_neg = (w - 1) * float(np.sin(np.deg2rad(cfg.hough_range_deg)))
    rho_offset = int(math.ceil(max_neg)) + 2
    n_rho = rho_offset + (h - 1) + int(math.ceil(max_neg)) + 3
    votes = kernels.hough_accumulate(rows, cols, sin_t, cos_t, rho_offset, n_rho)

    max_votes = int(votes.max())
    thresh = max(cfg.min_line_votes, int(math.ceil(0.5 * max_votes)))
    candidate = votes >= thresh
    if int(candidate.sum()) < cfg.min_candidate_lines:
        return 0.0, True
    scores = np.where(candidate, votes, 0).sum(axis=1)
    best = scores.max()
    tied = np.flatnonzero(scores == best)
    angle = min((round(float(thetas[i]), 1) for i in tied),
                key=lambda a: (abs(a), a))
    # -0.0 -> 0.0
    return angle + 0.0, False


def renormalize(page: PageImage, target_long_side_px: int,
                cfg: PreprocessConfig = PreprocessConfig()) -> tuple[PageImage, float]:
    """Bicubic rescale so the longer side hits the target, then CLAHE and a
    light Gaussian blur. Returns the page and the applied scale factor."""
    if target_long_side_px < 64:
        raise ConfigError(f"target_long_side_px must be >= 64, got {target_long_side_px}")
    gray = _require_gray(page)
    h, w = gray.shape
    long_side = max(h, w)
    scale = target_long_side_px / long_side
    if w >= h:
        out_w = target_long_side_px
        out_h = max(1, round(h * scale))
    else:
        out_h = target_long_side_px
        out_w = max(1, round(w * scale))
    out = kernels.resize_bicubic(np.ascontiguousarray(gray), out_h, out_w)
    if cfg.apply_clahe:
        out = kernels.clahe(out, cfg.clahe_tiles, cfg.clahe_tiles, cfg.clahe_clip_limit)
    if cfg.apply_denoise:
        out = kernels.gaussian_blur5(out, cfg.gaussian_sigma)
    return PageImage.from_array(out, page.page_no, page.dpi), scale


def preprocess_page(page: PageImage, ocr, cfg: PreprocessConfig = PreprocessConfig(),
                    languages: Sequence[str] = ("en",)) -> tuple[PageImage, PreprocessReport]:
    """Full preprocessing chain: crop, coarse orientation, deskew, renormalize."""
    gray = page.to_gray()
    flags: list[str] = []

    rect = segment_content(gray, cfg)
    full_rect = rect == (0, 0, gray.width_px, gray.height_px)
    mask = ink_mask(gray.to_array())
    if full_rect and int(mask.sum()) < cfg.blank_ink_frac * gray.width_px * gray.height_px:
        flags.append(FLAG_BLANK_PAGE)
    cropped = crop(gray, rect)

    coarse, orient_flags = classify_orientation(cropped, ocr, cfg, languages)
    flags.extend(orient_flags)
    upright = rotate(cropped, coarse) if coarse else cropped

    fine, low_conf = estimate_skew(upright, cfg)
    if low_conf:
        flags.append(FLAG_SKEW_LOW_CONFIDENCE)
    straight = rotate(upright, -fine) if fine != 0.0 else upright

    final, scale = renormalize(straight, cfg.target_long_side_px, cfg)
    report = PreprocessReport(
        crop_rect=rect,
        coarse_rotation_deg=coarse,
        fine_skew_deg=fine,
        scale_factor=scale,
        applied_clahe=cfg.apply_clahe,
        applied_denoise=cfg.apply_denoise,
        flags=tuple(flags),
    )
    return final, report
