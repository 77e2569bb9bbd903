"""Assembly kernels for the spatially varying blur operator.

The operator is a sparse matrix K over flattened pixels (destination rows,
source columns).  Each source pixel emits an isotropic Gaussian stamp with
the sigma of its image column, truncated at radius 5*sigma and normalized
to unit total weight after truncation and boundary clipping, so brightness
is conserved exactly per source.  Sources whose sigma falls below the
degeneracy floor emit an exact identity entry instead.

Stamp assembly is the hot loop of the package: a compiled Cython kernel
(descan._kernels) is used when available and a vectorized numpy fallback
otherwise.  Set DESCAN_KERNEL=numpy to force the fallback (benchmarks and
parity tests use this).
"""

from __future__ import annotations

import math
import os

import numpy as np

__all__ = [
    "assemble_gaussian_columns",
    "assemble_gaussian_columns_numpy",
    "kernel_backend",
]

try:
    from . import _kernels as _ext
except ImportError:
    _ext = None


def kernel_backend() -> str:
    """Name of the stamp-assembly backend in use: 'cython' or 'numpy'."""
    if _ext is not None and os.environ.get("DESCAN_KERNEL") != "numpy":
        return "cython"
    return "numpy"


def _circle_offsets(sigma: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Integer offsets within the 5*sigma cutoff circle and their weights."""
    radius = 5.0 * sigma
    reach = int(math.floor(radius))
    span = np.arange(-reach, reach + 1)
    dy, dx = np.meshgrid(span, span, indexing="ij")
    dist2 = dy * dy + dx * dx
    keep = dist2 <= radius * radius
    dy = dy[keep]
    dx = dx[keep]
    weights = np.exp(-dist2[keep] / (2.0 * sigma * sigma))
    return dy, dx, weights


def assemble_gaussian_columns_numpy(
    sigma_by_column: np.ndarray,
    height: int,
    width: int,
    sigma_min: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pure-numpy stamp assembly; returns COO (rows, cols, vals).

    rows index destination pixels, cols source pixels, both flattened
    row-major (r * width + c).
    """
    sigma_by_column = np.asarray(sigma_by_column, dtype=np.float64)
    if sigma_by_column.shape != (width,):
        raise ValueError(
            f"sigma_by_column must have length {width}, got {sigma_by_column.shape}"
        )
    row_chunks = []
    col_chunks = []
    val_chunks = []
    rows = np.arange(height, dtype=np.int64)
    for c in range(width):
        sigma = float(sigma_by_column[c])
        src = rows * width + c
        if sigma < sigma_min:
            row_chunks.append(src)
            col_chunks.append(src)
            val_chunks.append(np.ones(height))
            continue
        dy, dx, w = _circle_offsets(sigma)
        dest_r = rows[:, None] + dy[None, :]
        dest_c = c + dx
        valid = (
            (dest_r >= 0)
            & (dest_r < height)
            & (dest_c >= 0)[None, :]
            & (dest_c < width)[None, :]
        )
        norm = (w[None, :] * valid).sum(axis=1)
        vals = np.broadcast_to(w[None, :], valid.shape) / norm[:, None]
        dest = dest_r * width + dest_c[None, :]
        source = np.broadcast_to(src[:, None], valid.shape)
        row_chunks.append(dest[valid].astype(np.int64))
        col_chunks.append(source[valid].astype(np.int64))
        val_chunks.append(vals[valid])
    return (
        np.concatenate(row_chunks),
        np.concatenate(col_chunks),
        np.concatenate(val_chunks),
    )


def assemble_gaussian_columns(
    sigma_by_column: np.ndarray,
    height: int,
    width: int,
    sigma_min: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stamp assembly via the selected backend (see kernel_backend)."""
    if kernel_backend() == "cython":
        sigma_by_column = np.ascontiguousarray(sigma_by_column, dtype=np.float64)
        if sigma_by_column.shape != (width,):
            raise ValueError(
                f"sigma_by_column must have length {width}, got {sigma_by_column.shape}"
            )
        return _ext.assemble_gaussian_columns(
            sigma_by_column, height, width, sigma_min
        )
    return assemble_gaussian_columns_numpy(sigma_by_column, height, width, sigma_min)
