# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the pure-numpy kernels.

Arithmetic mirrors kernels/pure.py operation for operation (float64,
round-half-even, no FMA contraction) so both backends return identical
bytes. Any change here must be reflected there and re-checked by the
cross-backend equality tests.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport ceil, cos, fabs, floor, rint, sin, exp

cnp.import_array()

DEF PI = 3.141592653589793


def rotate_bilinear(const unsigned char[:, ::1] img, double angle_deg):
    """Rotate counterclockwise (as displayed) about the center; white fill."""
    cdef Py_ssize_t h = img.shape[0]
    cdef Py_ssize_t w = img.shape[1]
    cdef double theta = angle_deg * (PI / 180.0)
    cdef double c = cos(theta)
    cdef double s = sin(theta)
    cdef Py_ssize_t out_w = <Py_ssize_t>ceil(w * fabs(c) + h * fabs(s))
    cdef Py_ssize_t out_h = <Py_ssize_t>ceil(w * fabs(s) + h * fabs(c))
    cdef double cx_in = (w - 1) / 2.0
    cdef double cy_in = (h - 1) / 2.0
    cdef double cx_out = (out_w - 1) / 2.0
    cdef double cy_out = (out_h - 1) / 2.0

    out_arr = np.empty((out_h, out_w), dtype=np.uint8)
    cdef unsigned char[:, ::1] out = out_arr
    cdef Py_ssize_t r, col, x0, y0, x1, y1
    cdef double xo, yo, xs, ys, fx, fy, p00, p01, p10, p11, v0, v1, v

    for r in range(out_h):
        yo = r - cy_out
        for col in range(out_w):
            xo = col - cx_out
            xs = xo * c - yo * s + cx_in
            ys = xo * s + yo * c + cy_in
            if xs < 0.0 or xs > w - 1.0 or ys < 0.0 or ys > h - 1.0:
                out[r, col] = 255
                continue
            x0 = <Py_ssize_t>floor(xs)
            y0 = <Py_ssize_t>floor(ys)
            fx = xs - x0
            fy = ys - y0
            x1 = x0 + 1
            if x1 > w - 1:
                x1 = w - 1
            y1 = y0 + 1
            if y1 > h - 1:
                y1 = h - 1
            p00 = img[y0, x0]
            p01 = img[y0, x1]
            p10 = img[y1, x0]
            p11 = img[y1, x1]
            v0 = p00 + fx * (p01 - p00)
            v1 = p10 + fx * (p11 - p10)
            v = v0 + fy * (v1 - v0)
            v = rint(v)
            if v < 0.0:
                v = 0.0
            elif v > 255.0:
                v = 255.0
            out[r, col] = <unsigned char>v
    return out_arr


cdef inline double _cubic(double x, double a) nogil:
    x = fabs(x)
    if x <= 1.0:
        return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    elif x < 2.0:
        return (((x - 5.0) * x + 8.0) * x - 4.0) * a
    return 0.0


cdef void _bicubic_taps(Py_ssize_t in_len, Py_ssize_t out_len, double a,
                        Py_ssize_t[:, ::1] idx, double[:, ::1] wts):
    cdef double scale = in_len / <double>out_len
    cdef Py_ssize_t j, k, b
    cdef double x, t
    for j in range(out_len):
        x = (j + 0.5) * scale - 0.5
        t = x - floor(x)
        b = <Py_ssize_t>floor(x)
        for k in range(4):
            idx[j, k] = b - 1 + k
            if idx[j, k] < 0:
                idx[j, k] = 0
            elif idx[j, k] > in_len - 1:
                idx[j, k] = in_len - 1
        wts[j, 0] = _cubic(1.0 + t, a)
        wts[j, 1] = _cubic(t, a)
        wts[j, 2] = _cubic(1.0 - t, a)
        wts[j, 3] = _cubic(2.0 - t, a)


def resize_bicubic(const unsigned char[:, ::1] img, Py_ssize_t out_h,
                   Py_ssize_t out_w, double a=-0.5):
    """Bicubic resample to (out_h, out_w) with pixel-center alignment."""
    cdef Py_ssize_t in_h = img.shape[0]
    cdef Py_ssize_t in_w = img.shape[1]

    xi_arr = np.empty((out_w, 4), dtype=np.intp)
    xw_arr = np.empty((out_w, 4), dtype=np.float64)
    yi_arr = np.empty((out_h, 4), dtype=np.intp)
    yw_arr = np.empty((out_h, 4), dtype=np.float64)
    cdef Py_ssize_t[:, ::1] xi = xi_arr
    cdef double[:, ::1] xw = xw_arr
    cdef Py_ssize_t[:, ::1] yi = yi_arr
    cdef double[:, ::1] yw = yw_arr
    _bicubic_taps(in_w, out_w, a, xi, xw)
    _bicubic_taps(in_h, out_h, a, yi, yw)

    tmp_arr = np.empty((in_h, out_w), dtype=np.float64)
    cdef double[:, ::1] tmp = tmp_arr
    out_arr = np.empty((out_h, out_w), dtype=np.uint8)
    cdef unsigned char[:, ::1] out = out_arr
    cdef Py_ssize_t r, j
    cdef double acc

    for r in range(in_h):
        for j in range(out_w):
            acc = (img[r, xi[j, 0]] * xw[j, 0] + img[r, xi[j, 1]] * xw[j, 1]
                   + img[r, xi[j, 2]] * xw[j, 2] + img[r, xi[j, 3]] * xw[j, 3])
            tmp[r, j] = acc
    for r in range(out_h):
        for j in range(out_w):
            acc = (tmp[yi[r, 0], j] * yw[r, 0] + tmp[yi[r, 1], j] * yw[r, 1]
                   + tmp[yi[r, 2], j] * yw[r, 2] + tmp[yi[r, 3], j] * yw[r, 3])
            acc = rint(acc)
            if acc < 0.0:
                acc = 0.0
            elif acc > 255.0:
                acc = 255.0
            out[r, j] = <unsigned char>acc
    return out_arr


def clahe_blend(const unsigned char[:, ::1] img, const double[:, :, ::1] luts,
                const Py_ssize_t[::1] ty0, const double[::1] wy,
                const Py_ssize_t[::1] tx0, const double[::1] wx):
    """Apply per-tile LUTs blended bilinearly between tile centers."""
    cdef Py_ssize_t h = img.shape[0]
    cdef Py_ssize_t w = img.shape[1]
    cdef Py_ssize_t tiles_y = luts.shape[0]
    cdef Py_ssize_t tiles_x = luts.shape[1]
    out_arr = np.empty((h, w), dtype=np.uint8)
    cdef unsigned char[:, ::1] out = out_arr
    cdef Py_ssize_t r, c, a0, a1, b0, b1, v
    cdef double l00, l01, l10, l11, top, bot, res

    for r in range(h):
        a0 = ty0[r]
        a1 = a0 + 1
        if a1 > tiles_y - 1:
            a1 = tiles_y - 1
        for c in range(w):
            b0 = tx0[c]
            b1 = b0 + 1
            if b1 > tiles_x - 1:
                b1 = tiles_x - 1
            v = img[r, c]
            l00 = luts[a0, b0, v]
            l01 = luts[a0, b1, v]
            l10 = luts[a1, b0, v]
            l11 = luts[a1, b1, v]
            top = l00 + wx[c] * (l01 - l00)
            bot = l10 + wx[c] * (l11 - l10)
            res = top + wy[r] * (bot - top)
            res = rint(res)
            if res < 0.0:
                res = 0.0
            elif res > 255.0:
                res = 255.0
            out[r, c] = <unsigned char>res
    return out_arr


def gaussian_blur5(const unsigned char[:, ::1] img, double sigma=0.8):
    """Separable 5x5 Gaussian blur; edges replicate."""
    cdef Py_ssize_t h = img.shape[0]
    cdef Py_ssize_t w = img.shape[1]
    cdef double[5] wt
    cdef double total = 0.0
    cdef Py_ssize_t i
    for i in range(5):
        wt[i] = exp(-((i - 2.0) * (i - 2.0)) / (2.0 * sigma * sigma))
        total += wt[i]
    for i in range(5):
        wt[i] = wt[i] / total

    tmp_arr = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] tmp = tmp_arr
    out_arr = np.empty((h, w), dtype=np.uint8)
    cdef unsigned char[:, ::1] out = out_arr
    cdef Py_ssize_t r, c
    cdef Py_ssize_t i0, i1, i3, i4
    cdef double acc

    for r in range(h):
        for c in range(w):
            i0 = c - 2 if c >= 2 else 0
            i1 = c - 1 if c >= 1 else 0
            i3 = c + 1 if c + 1 <= w - 1 else w - 1
            i4 = c + 2 if c + 2 <= w - 1 else w - 1
            acc = (wt[0] * img[r, i0] + wt[1] * img[r, i1] + wt[2] * img[r, c]
                   + wt[3] * img[r, i3] + wt[4] * img[r, i4])
            tmp[r, c] = acc
    for r in range(h):
        i0 = r - 2 if r >= 2 else 0
        i1 = r - 1 if r >= 1 else 0
        i3 = r + 1 if r + 1 <= h - 1 else h - 1
        i4 = r + 2 if r + 2 <= h - 1 else h - 1
        for c in range(w):
            acc = (wt[0] * tmp[i0, c] + wt[1] * tmp[i1, c] + wt[2] * tmp[r, c]
                   + wt[3] * tmp[i3, c] + wt[4] * tmp[i4, c])
            acc = rint(acc)
            if acc < 0.0:
                acc = 0.0
            elif acc > 255.0:
                acc = 255.0
            out[r, c] = <unsigned char>acc
    return out_arr


def hough_accumulate(const double[::1] rows, const double[::1] cols,
                     const double[::1] sin_t, const double[::1] cos_t,
                     Py_ssize_t rho_offset, Py_ssize_t n_rho):
    """Vote counts per (angle, rho) cell for the given edge points."""
    cdef Py_ssize_t n_angles = sin_t.shape[0]
    cdef Py_ssize_t n_pts = rows.shape[0]
    votes_arr = np.zeros((n_angles, n_rho), dtype=np.int64)
    cdef long long[:, ::1] votes = votes_arr
    cdef Py_ssize_t i, k, b
    cdef double s, c

    for i in range(n_angles):
        s = sin_t[i]
        c = cos_t[i]
        for k in range(n_pts):
            b = <Py_ssize_t>rint(cols[k] * s + rows[k] * c) + rho_offset
            if b < 0 or b >= n_rho:
                raise ValueError("rho bin out of range; bad rho_offset/n_rho")
            votes[i, b] += 1
    return votes_arr
