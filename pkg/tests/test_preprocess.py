import numpy as np
import pytest

from finparse.config import PreprocessConfig
from finparse.documents import PageImage
from finparse.errors import ConfigError, TransportError
from finparse.ocr import SyntheticOcrBackend
from finparse.preprocess import (FLAG_BLANK_PAGE, FLAG_ORIENTATION_OCR_FALLBACK,
                                 FLAG_SKEW_LOW_CONFIDENCE, classify_orientation,
                                 crop, estimate_skew, ink_mask, otsu_threshold,
                                 preprocess_page, renormalize, rotate,
                                 segment_content)
from finparse.synth import render_line_page

from conftest import page_from

CFG = PreprocessConfig()


def ruled_page(h=400, w=600, pitch=40, thickness=4) -> PageImage:
    """Horizontal black rules on white."""
    arr = np.full((h, w), 255, dtype=np.uint8)
    for y in range(40, h - 40, pitch):
        arr[y:y + thickness, 50:w - 50] = 0
    return page_from(arr)


class _FailingOcr:
    def recognize(self, page, languages):
        raise TransportError("backend down")


class TestOtsu:
    def test_separates_bimodal(self, rng):
        arr = np.concatenate([
            rng.integers(10, 40, size=500), rng.integers(200, 240, size=500)
        ]).astype(np.uint8).reshape(25, 40)
        t = otsu_threshold(arr)
        # rng.integers(10, 40) tops out at 39; the threshold sits in the gap
        assert 39 <= t < 200

    def test_constant_image_has_no_ink(self):
        arr = np.full((10, 10), 255, dtype=np.uint8)
        assert not ink_mask(arr).any()


class TestSegmentContent:
    def test_all_white_returns_full_rect(self):
        page = page_from(np.full((100, 80), 255, dtype=np.uint8))
        assert segment_content(page, CFG) == (0, 0, 80, 100)

    def test_block_fixture_matches_analytic_rect(self):
        # ink block rows 100..899, cols 50..749 on a 1000-row x 800-col page
        arr = np.full((1000, 800), 255, dtype=np.uint8)
        arr[100:900, 50:750] = 0
        page = page_from(arr)
        # analytic oracle: tight bbox +/- 2% of each dimension, clamped
        my, mx = round(0.02 * 1000), round(0.02 * 800)
        expected = (50 - mx, 100 - my, (750 - 50) + 2 * mx, (900 - 100) + 2 * my)
        assert segment_content(page, CFG) == expected
        assert expected == (34, 80, 732, 840)

    def test_single_dark_pixel_rect_contains_it(self):
        arr = np.full((200, 200), 255, dtype=np.uint8)
        arr[100, 100] = 0
        cfg = PreprocessConfig(blank_ink_frac=0.0)
        x, y, w, h = segment_content(page_from(arr), cfg)
        assert x <= 100 < x + w and y <= 100 < y + h

    def test_rect_never_exceeds_page_and_covers_ink(self, rng):
        for _ in range(20):
            arr = np.full((120, 90), 255, dtype=np.uint8)
            n = int(rng.integers(1, 5))
            for _ in range(n):
                y, x = int(rng.integers(0, 100)), int(rng.integers(0, 70))
                arr[y:y + int(rng.integers(5, 20)), x:x + int(rng.integers(5, 20))] = 0
            page = page_from(arr)
            x, y, w, h = segment_content(page, PreprocessConfig(blank_ink_frac=0.0))
            assert 0 <= x and 0 <= y and x + w <= 90 and y + h <= 120
            mask = ink_mask(arr)
            ys, xs = np.nonzero(mask)
            assert y <= ys.min() and ys.max() < y + h
            assert x <= xs.min() and xs.max() < x + w


class TestRotate:
    def test_zero_is_pixel_identical(self, rng):
        page = page_from(rng.integers(0, 256, size=(30, 40), dtype=np.uint8))
        assert rotate(page, 0).pixels == page.pixels

    def test_90_multiples_are_lossless(self, rng):
        page = page_from(rng.integers(0, 256, size=(30, 40), dtype=np.uint8))
        assert rotate(rotate(page, 90), 270).pixels == page.pixels
        assert rotate(rotate(rotate(rotate(page, 90), 90), 90), 90).pixels == page.pixels

    def test_angle_bound(self, rng):
        page = page_from(rng.integers(0, 256, size=(8, 8), dtype=np.uint8))
        with pytest.raises(ValueError):
            rotate(page, 400)

    def test_rgb_rotation_keeps_channels(self, rng):
        page = page_from(rng.integers(0, 256, size=(10, 12, 3), dtype=np.uint8))
        out = rotate(page, 90)
        assert out.channels == 3
        assert (out.width_px, out.height_px) == (10, 12)


class TestEstimateSkew:
    def test_horizontal_rules_give_zero(self):
        angle, low = estimate_skew(ruled_page(), CFG)
        assert angle == 0.0
        assert not low

    def test_known_rotation_recovered(self):
        page = ruled_page()
        angle, low = estimate_skew(rotate(page, 3.7), CFG)
        assert not low
        assert abs(angle - 3.7) <= 0.2

    def test_negative_rotation_recovered(self):
        angle, _ = estimate_skew(rotate(ruled_page(), -5.3), CFG)
        assert abs(angle - (-5.3)) <= 0.2

    def test_blank_page_low_confidence(self):
        page = page_from(np.full((200, 200), 255, dtype=np.uint8))
        angle, low = estimate_skew(page, CFG)
        assert angle == 0.0
        assert low

    def test_roundtrip_over_random_angles(self, rng):
        page = ruled_page()
        for theta in rng.uniform(-10, 10, size=10):
            angle, _ = estimate_skew(rotate(page, float(theta)), CFG)
            assert abs(angle - theta) <= 0.5, f"theta={theta} got {angle}"


def _segmented(page: PageImage) -> PageImage:
    """classify_orientation's precondition: the page is already cropped."""
    return crop(page, segment_content(page, CFG))


class TestClassifyOrientation:
    def _registered(self, rng):
        img, tokens = render_line_page(rng)
        backend = SyntheticOcrBackend()
        backend.register("fixture", img, tokens)
        return page_from(img), backend

    def test_upright_page_is_zero(self, rng):
        page, backend = self._registered(rng)
        deg, flags = classify_orientation(_segmented(page), backend, CFG)
        assert deg == 0 and flags == ()

    def test_flipped_page_detected_via_confidence(self, rng):
        page, backend = self._registered(rng)
        flipped = _segmented(rotate(page, 180))
        deg, _ = classify_orientation(flipped, backend, CFG)
        assert deg == 180

    def test_clockwise_90_needs_ccw_correction(self, rng):
        page, backend = self._registered(rng)
        cw = _segmented(rotate(page, -90))  # 90 degrees clockwise
        # variance oracle: the rotated page must look vertical
        mask = ink_mask(cw.to_array())
        var_rows = np.var(mask.sum(axis=1) / mask.shape[1])
        var_cols = np.var(mask.sum(axis=0) / mask.shape[0])
        assert var_cols > var_rows
        deg, _ = classify_orientation(cw, backend, CFG)
        assert deg == 90

    def test_all_four_rotations_exact(self, rng):
        page, backend = self._registered(rng)
        for gen in (0, 90, 180, 270):
            rotated = _segmented(rotate(page, gen))
            expected = (360 - gen) % 360
            deg, _ = classify_orientation(rotated, backend, CFG)
            assert deg == expected, f"generated {gen}"

    def test_ocr_failure_falls_back_to_variance(self, rng):
        page, _ = self._registered(rng)
        deg, flags = classify_orientation(_segmented(page), _FailingOcr(), CFG)
        assert deg == 0
        assert FLAG_ORIENTATION_OCR_FALLBACK in flags
        deg, flags = classify_orientation(_segmented(rotate(page, 90)),
                                          _FailingOcr(), CFG)
        assert deg == 90
        assert FLAG_ORIENTATION_OCR_FALLBACK in flags


class TestRenormalize:
    def test_uniform_midgray_unchanged(self):
        page = page_from(np.full((200, 100), 128, dtype=np.uint8))
        out, scale = renormalize(page, 100, CFG)
        assert np.all(out.to_array() == 128)
        assert scale == 0.5

    def test_scaling_arithmetic(self):
        page = page_from(np.full((1600, 3200), 90, dtype=np.uint8))
        out, scale = renormalize(page, 1600, CFG)
        assert (out.width_px, out.height_px) == (1600, 800)
        assert scale == 0.5

    def test_target_below_floor_rejected(self):
        page = page_from(np.full((100, 100), 0, dtype=np.uint8))
        with pytest.raises(ConfigError):
            renormalize(page, 32, CFG)

    def test_bit_identical_across_calls(self, rng):
        arr = rng.integers(0, 256, size=(300, 200), dtype=np.uint8)
        a, _ = renormalize(page_from(arr), 150, CFG)
        b, _ = renormalize(page_from(arr.copy()), 150, CFG)
        assert a.pixels == b.pixels


class TestPreprocessPage:
    def _backend_for(self, img, tokens):
        backend = SyntheticOcrBackend()
        backend.register("fixture", img, tokens)
        return backend

    def test_clean_upright_page(self, rng):
        img, tokens = render_line_page(rng)
        backend = self._backend_for(img, tokens)
        cfg = PreprocessConfig(target_long_side_px=640)
        out, report = preprocess_page(page_from(img), backend, cfg)
        assert report.coarse_rotation_deg == 0
        assert abs(report.fine_skew_deg) <= 0.2
        assert report.flags == ()
        # crop hugs the content box: strictly smaller than the page
        x, y, w, h = report.crop_rect
        assert w < img.shape[1] and h < img.shape[0]
        assert max(out.width_px, out.height_px) == 640

    def test_rotated_page_report(self, rng):
        img, tokens = render_line_page(rng)
        backend = self._backend_for(img, tokens)
        cfg = PreprocessConfig(target_long_side_px=640)
        page = rotate(rotate(page_from(img), 2.5), -90)  # 90 cw on top of 2.5
        out, report = preprocess_page(page, backend, cfg)
        assert report.coarse_rotation_deg == 90
        assert abs(report.fine_skew_deg - 2.5) <= 0.2

    def test_blank_page_degenerate_path(self):
        page = page_from(np.full((300, 240), 255, dtype=np.uint8))
        out, report = preprocess_page(page, SyntheticOcrBackend(),
                                      PreprocessConfig(target_long_side_px=150))
        assert report.crop_rect == (0, 0, 240, 300)
        assert report.coarse_rotation_deg == 0
        assert report.fine_skew_deg == 0.0
        assert FLAG_BLANK_PAGE in report.flags
        assert FLAG_SKEW_LOW_CONFIDENCE in report.flags

    def test_deterministic_end_to_end(self, rng):
        img, tokens = render_line_page(rng)
        backend = self._backend_for(img, tokens)
        cfg = PreprocessConfig(target_long_side_px=320)
        page = rotate(page_from(img), 4.2)
        a, ra = preprocess_page(page, backend, cfg)
        b, rb = preprocess_page(page, backend, cfg)
        assert a.pixels == b.pixels
        assert ra == rb
