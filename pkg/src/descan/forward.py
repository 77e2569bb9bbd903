"""Forward simulation of scanning a curved page: distort, blur, darken.

Conventions shared by all three artifacts and their inverses:

* the spine sits at column 0 (callers mirror spine-right inputs first);
* image columns sample the page at the grid pitch l*ds, both on the flat
  page (arc-length samples) and on the platen (projected samples), so the
  distortion squeezes content toward the spine and leaves a padding
  region at the far edge;
* blur sigma and the darkening factor of a platen column are functions of
  the page height directly above it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DimensionError, ParameterError
from .geometry import PageShape, ScanParams, solve_shape, visible_profile_at_x
from .kernels import assemble_gaussian_columns
from .raster import Image

__all__ = [
    "ARTIFACTS",
    "SIGMA_MIN",
    "BlurOperator",
    "blur",
    "build_blur_operator",
    "darken",
    "darkening_factors",
    "distort",
    "operator_from_sigmas",
    "simulate",
]

# canonical application order: geometry, then optics, then illumination
ARTIFACTS = ("distort", "blur", "darken")

# below this sigma the discrete Gaussian degenerates; emit exact identity
SIGMA_MIN = 0.3


@dataclass(frozen=True)
class BlurOperator:
    """Sparse blur operator over flattened pixels (destination x source).

    Every column (one source pixel) is a truncated Gaussian with the sigma
    of its image column, normalized to unit sum, so K.T @ ones == ones.
    """

    weights: sp.csr_matrix = field(repr=False)
    image_dims: tuple[int, int]
    sigma_by_column: np.ndarray = field(repr=False)
    cutoff_radius_by_column: np.ndarray = field(repr=False)

    @property
    def n_rows(self) -> int:
        return self.weights.shape[0]

    @property
    def n_cols(self) -> int:
        return self.weights.shape[1]

    @property
    def is_identity(self) -> bool:
        """True when every source emitted a pure identity entry."""
        return bool(np.all(self.sigma_by_column < SIGMA_MIN))


def _check_width(image: Image, shape: PageShape) -> None:
    if image.width != shape.n:
        raise DimensionError(
            f"image width {image.width} does not match shape grid size {shape.n}"
        )


def _resample_columns(
    pixels: np.ndarray, positions: np.ndarray, pad_value: float
) -> np.ndarray:
    """Gather columns at fractional positions with linear interpolation.

    positions is (n_out,) in input-column units; NaN marks padding.
    """
    h, _, c = pixels.shape
    n_in = pixels.shape[1]
    out = np.full((h, positions.size, c), pad_value, dtype=np.float64)
    inside = ~np.isnan(positions)
    pos = positions[inside]
    lo = np.clip(np.floor(pos).astype(np.intp), 0, n_in - 2)
    t = pos - lo
    gathered = (1.0 - t)[None, :, None] * pixels[:, lo, :] + t[None, :, None] * pixels[
        :, lo + 1, :
    ]
    out[:, inside, :] = gathered
    return out


def _subsample_offsets(supersample: int) -> np.ndarray:
    """Sub-column sample offsets in [-1/2, 1/2) column widths."""
    if supersample < 1:
        raise ParameterError(f"supersample must be >= 1, got {supersample}")
    return (np.arange(supersample) + 0.5) / supersample - 0.5


def distort(
    image: Image,
    shape: PageShape,
    *,
    pad_value: float = 1.0,
    supersample: int = 1,
) -> Image:
    """Project the flat-page image onto the platen grid.

    Output column i sits at platen position i * pitch and takes the input
    value at the arc position mapped there (linear interpolation on the
    monotone x grid).  Columns beyond the projected page edge x[-1] are
    the squeeze surplus, filled with pad_value.  supersample > 1 averages
    that many sub-column samples, trading speed for less aliasing where
    the squeeze is strong.
    """
    _check_width(image, shape)
    if np.any(np.diff(shape.x) <= 0):
        raise DimensionError(
            "distortion map is not monotone (theta0 > pi/2 overhangs the spine)"
        )
    n = shape.n
    pitch = shape.pitch
    offsets = _subsample_offsets(supersample)
    # platen positions of every sub-sample of every output column; the page
    # starts exactly at the spine, so sub-samples left of x=0 clamp there,
    # while anything beyond the projected edge is padding
    x_query = ((np.arange(n)[:, None] + offsets[None, :]) * pitch).ravel()
    x_query = np.maximum(x_query, 0.0)
    ds = shape.s_max / (n - 1)
    positions = np.where(
        x_query <= shape.x[-1],
        np.interp(x_query, shape.x, shape.s_hat) / ds,
        np.nan,
    )
    sampled = _resample_columns(image.pixels, positions, pad_value)
    h = image.height
    averaged = sampled.reshape(h, n, supersample, image.channels).mean(axis=2)
    return Image(averaged)


def operator_from_sigmas(
    image_dims: tuple[int, int],
    sigma_by_column: np.ndarray,
    *,
    sigma_min: float = SIGMA_MIN,
) -> BlurOperator:
    """Assemble the operator from an explicit per-column sigma profile."""
    height, width = image_dims
    if height < 1 or width < 1:
        raise DimensionError(f"image dims must be positive, got {image_dims}")
    sigma_by_column = np.asarray(sigma_by_column, dtype=np.float64)
    if sigma_by_column.shape != (width,):
        raise DimensionError(
            f"sigma profile length {sigma_by_column.shape} != width {width}"
        )
    if np.any(sigma_by_column < 0):
        raise ParameterError("sigma profile must be non-negative")
    rows, cols, vals = assemble_gaussian_columns(
        sigma_by_column, height, width, sigma_min
    )
    n = height * width
    weights = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    return BlurOperator(
        weights=weights,
        image_dims=(height, width),
        sigma_by_column=sigma_by_column,
        cutoff_radius_by_column=5.0 * sigma_by_column,
    )


def build_blur_operator(
    shape: PageShape, params: ScanParams, image_dims: tuple[int, int]
) -> BlurOperator:
    """Operator for an image on the platen grid of the given shape.

    sigma of column i is sigma_slope times the page height above platen
    position i * pitch.
    """
    height, width = image_dims
    if width != shape.n:
        raise DimensionError(
            f"image width {width} does not match shape grid size {shape.n}"
        )
    x_cols = np.arange(width) * shape.pitch
    sigma = params.sigma_slope * visible_profile_at_x(shape, x_cols)
    return operator_from_sigmas((height, width), sigma)


def blur(image: Image, op: BlurOperator) -> Image:
    """Apply the operator: flattened matrix-vector product per channel."""
    if (image.height, image.width) != op.image_dims:
        raise DimensionError(
            f"image dims {(image.height, image.width)} != operator dims {op.image_dims}"
        )
    flat = image.pixels.reshape(-1, image.channels)
    out = op.weights @ flat
    return Image(out.reshape(image.pixels.shape))


def darkening_factors(shape: PageShape, params: ScanParams, width: int) -> np.ndarray:
    """Per-column factor d^alpha / (height + d)^alpha, 1 where height is 0.

    lighten divides by this exact array, so the pair inverts to within
    floating-point rounding before any clamping.
    """
    x_cols = np.arange(width) * shape.pitch
    h = visible_profile_at_x(shape, x_cols)
    return (params.d / (h + params.d)) ** params.alpha


def darken(image: Image, shape: PageShape, params: ScanParams) -> Image:
    """Multiply each column by its light-distance darkening factor."""
    _check_width(image, shape)
    factors = darkening_factors(shape, params, image.width)
    return Image(image.pixels * factors[None, :, None])


def _normalize_artifacts(artifact_set) -> tuple[str, ...]:
    chosen = set(artifact_set)
    unknown = chosen - set(ARTIFACTS)
    if unknown:
        raise ParameterError(
            f"unknown artifacts: {', '.join(sorted(unknown))} "
            f"(choose from {', '.join(ARTIFACTS)})"
        )
    return tuple(name for name in ARTIFACTS if name in chosen)


def simulate(
    image: Image,
    params: ScanParams,
    artifact_set=ARTIFACTS,
    *,
    supersample: int = 1,
    pad_value: float = 1.0,
) -> Image:
    """Apply the selected artifacts in the order distort, blur, darken."""
    order = _normalize_artifacts(artifact_set)
    pixels = image
    if params.spine_side == "right":
        pixels = Image(pixels.pixels[:, ::-1, :])
    shape = solve_shape(params, pixels.width)
    for name in order:
        if name == "distort":
            pixels = distort(pixels, shape, pad_value=pad_value, supersample=supersample)
        elif name == "blur":
            op = build_blur_operator(shape, params, (pixels.height, pixels.width))
            pixels = blur(pixels, op)
        else:
            pixels = darken(pixels, shape, params)
    if params.spine_side == "right":
        pixels = Image(pixels.pixels[:, ::-1, :])
    return pixels
