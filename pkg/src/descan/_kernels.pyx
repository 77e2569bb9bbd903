# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled stamp-assembly kernel for the spatially varying blur operator.

Mirrors descan.kernels.assemble_gaussian_columns_numpy: per source pixel,
a Gaussian stamp truncated at radius 5*sigma (circular cutoff), clipped to
the image bounds and normalized to unit outgoing weight; sub-threshold
sigmas emit identity entries.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, floor

cnp.import_array()


def assemble_gaussian_columns(
    double[::1] sigma_by_column,
    Py_ssize_t height,
    Py_ssize_t width,
    double sigma_min,
):
    """Return COO arrays (rows, cols, vals) for the full operator."""
    cdef Py_ssize_t c, r, reach, dy, dx, n_off, k, cursor, start
    cdef Py_ssize_t dest_r, dest_c
    cdef double sigma, radius, radius2, inv_two_sigma2, dist2, wsum
    cdef Py_ssize_t upper = 0

    # upper bound on nnz: full stamp per source, identity otherwise
    for c in range(width):
        sigma = sigma_by_column[c]
        if sigma < sigma_min:
            upper += height
            continue
        radius = 5.0 * sigma
        radius2 = radius * radius
        reach = <Py_ssize_t>floor(radius)
        n_off = 0
        for dy in range(-reach, reach + 1):
            for dx in range(-reach, reach + 1):
                if dy * dy + dx * dx <= radius2:
                    n_off += 1
        upper += height * n_off

    rows_arr = np.empty(upper, dtype=np.int64)
    cols_arr = np.empty(upper, dtype=np.int64)
    vals_arr = np.empty(upper, dtype=np.float64)
    cdef cnp.int64_t[::1] rows = rows_arr
    cdef cnp.int64_t[::1] cols = cols_arr
    cdef double[::1] vals = vals_arr

    # scratch stamp buffers, sized for the widest column
    cdef Py_ssize_t max_off = 0
    for c in range(width):
        sigma = sigma_by_column[c]
        if sigma >= sigma_min:
            reach = <Py_ssize_t>floor(5.0 * sigma)
            n_off = (2 * reach + 1) * (2 * reach + 1)
            if n_off > max_off:
                max_off = n_off
    off_y_arr = np.empty(max(max_off, 1), dtype=np.int64)
    off_x_arr = np.empty(max(max_off, 1), dtype=np.int64)
    off_w_arr = np.empty(max(max_off, 1), dtype=np.float64)
    cdef cnp.int64_t[::1] off_y = off_y_arr
    cdef cnp.int64_t[::1] off_x = off_x_arr
    cdef double[::1] off_w = off_w_arr

    cursor = 0
    for c in range(width):
        sigma = sigma_by_column[c]
        if sigma < sigma_min:
            for r in range(height):
                rows[cursor] = r * width + c
                cols[cursor] = r * width + c
                vals[cursor] = 1.0
                cursor += 1
            continue
        radius = 5.0 * sigma
        radius2 = radius * radius
        reach = <Py_ssize_t>floor(radius)
        inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma)
        n_off = 0
        for dy in range(-reach, reach + 1):
            for dx in range(-reach, reach + 1):
                dist2 = <double>(dy * dy + dx * dx)
                if dist2 <= radius2:
                    off_y[n_off] = dy
                    off_x[n_off] = dx
                    off_w[n_off] = exp(-dist2 * inv_two_sigma2)
                    n_off += 1
        for r in range(height):
            wsum = 0.0
            start = cursor
            for k in range(n_off):
                dest_r = r + off_y[k]
                dest_c = c + off_x[k]
                if 0 <= dest_r < height and 0 <= dest_c < width:
                    wsum += off_w[k]
                    rows[cursor] = dest_r * width + dest_c
                    cols[cursor] = r * width + c
                    vals[cursor] = off_w[k]
                    cursor += 1
            for k in range(start, cursor):
                vals[k] /= wsum

    return rows_arr[:cursor], cols_arr[:cursor], vals_arr[:cursor]
