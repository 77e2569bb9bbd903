"""Inversion of the scan artifacts given the physical parameters.

Each forward artifact has a direct inverse: darkening is undone by
dividing out the same per-column factors, distortion by evaluating the
inverse of the monotone projection map, and blur by solving the sparse
regularized least-squares system

    min over I of  ||K I - B||^2 + lambda^2 ||I||^2

without ever forming K^-1.  The default solver is conjugate gradient on
the normal equations (CGLS on the augmented system [K; lambda I]), which
is warm-startable and drives the residual down monotonically; a sparse
direct factorization of (K^T K + lambda^2 I) is available for small
systems.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DimensionError, ParameterError, SolverError
from .forward import ARTIFACTS, BlurOperator, _normalize_artifacts, darkening_factors
from .geometry import PageShape, ScanParams, solve_shape
from .raster import Image

__all__ = [
    "CglsResult",
    "SolverConfig",
    "cgls",
    "deblur",
    "lighten",
    "recover",
    "undistort",
]

_METHODS = ("iterative-normal-equations", "sparse-direct")


@dataclass(frozen=True)
class SolverConfig:
    """Deblurring solver settings."""

    regularization: float = 1e-3
    max_iterations: int = 2000
    tolerance: float = 1e-8
    method: str = "iterative-normal-equations"

    def __post_init__(self):
        if not self.regularization >= 0:
            raise ParameterError(
                f"regularization must be >= 0, got {self.regularization}"
            )
        if self.max_iterations < 1:
            raise ParameterError(
                f"max_iterations must be >= 1, got {self.max_iterations}"
            )
        if not 0 < self.tolerance < 1:
            raise ParameterError(
                f"tolerance must lie in (0, 1), got {self.tolerance}"
            )
        if self.method not in _METHODS:
            raise ParameterError(
                f"method must be one of {', '.join(_METHODS)}, got {self.method!r}"
            )


@dataclass
class CglsResult:
    """Outcome of one CGLS solve.

    residual_history holds ||[b - K x; -lambda x]|| after every iteration
    (index 0 is the starting point); it is non-increasing.  relative_residual
    is the normal-equations residual ||K^T r - lambda^2 x|| relative to its
    starting value, the quantity the tolerance applies to.
    """

    x: np.ndarray
    iterations: int
    converged: bool
    relative_residual: float
    residual_history: np.ndarray = field(repr=False)


def cgls(
    operator: sp.spmatrix,
    rhs: np.ndarray,
    regularization: float,
    *,
    tolerance: float = 1e-8,
    max_iterations: int = 2000,
    x0: np.ndarray | None = None,
) -> CglsResult:
    """Conjugate gradient on the normal equations of [K; lambda I] x = [b; 0]."""
    lam = regularization
    x = np.zeros_like(rhs) if x0 is None else x0.astype(np.float64, copy=True)
    r1 = rhs - operator @ x
    r2 = -lam * x
    s = operator.T @ r1 + lam * r2
    p = s.copy()
    gamma = float(s @ s)
    # tolerance is relative to the right-hand side scale, not the starting
    # residual, so a warm start near the solution converges immediately
    scale = float(np.linalg.norm(operator.T @ rhs)) if x0 is not None else np.sqrt(gamma)
    if scale == 0.0:
        scale = np.sqrt(gamma)
    history = [float(np.sqrt(r1 @ r1 + r2 @ r2))]
    if np.sqrt(gamma) <= tolerance * scale or gamma == 0.0:
        return CglsResult(x, 0, True, np.sqrt(gamma) / max(scale, 1.0), np.asarray(history))
    iterations = 0
    converged = False
    rel = 1.0
    for iterations in range(1, max_iterations + 1):
        q1 = operator @ p
        q2 = lam * p
        denom = float(q1 @ q1 + q2 @ q2)
        if denom == 0.0:
            converged = True
            iterations -= 1
            break
        alpha = gamma / denom
        x += alpha * p
        r1 -= alpha * q1
        r2 -= alpha * q2
        s = operator.T @ r1 + lam * r2
        gamma_new = float(s @ s)
        history.append(float(np.sqrt(r1 @ r1 + r2 @ r2)))
        rel = np.sqrt(gamma_new) / scale
        if rel <= tolerance:
            converged = True
            break
        p = s + (gamma_new / gamma) * p
        gamma = gamma_new
    return CglsResult(x, iterations, converged, rel, np.asarray(history))


def _thread_cap() -> int:
    env = os.environ.get("DESCAN_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ParameterError(f"DESCAN_THREADS must be an integer, got {env!r}")
    return os.cpu_count() or 1


def _solve_channels(solve_one, channels: list[np.ndarray]) -> list[np.ndarray]:
    workers = min(len(channels), _thread_cap())
    if workers <= 1 or len(channels) == 1:
        return [solve_one(ch) for ch in channels]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(solve_one, channels))


def deblur(
    image: Image, op: BlurOperator, cfg: SolverConfig, *, clamp: bool = True
) -> Image:
    """Solve the regularized system per channel for the pre-blur image."""
    if (image.height, image.width) != op.image_dims:
        raise DimensionError(
            f"image dims {(image.height, image.width)} != operator dims {op.image_dims}"
        )
    k = op.weights
    lam = cfg.regularization

    if cfg.method == "sparse-direct":
        normal = (k.T @ k + lam * lam * sp.identity(k.shape[1], format="csr")).tocsc()
        factor = spla.splu(normal)

        def solve_one(b):
            return factor.solve(k.T @ b)

    else:

        def solve_one(b):
            result = cgls(
                k,
                b,
                lam,
                tolerance=cfg.tolerance,
                max_iterations=cfg.max_iterations,
            )
            if not result.converged:
                raise SolverError(
                    f"deblur did not converge in {cfg.max_iterations} iterations; "
                    "retry with a larger regularization",
                    residual=result.relative_residual,
                    iterations=result.iterations,
                )
            return result.x

    channels = [image.pixels[:, :, c].ravel() for c in range(image.channels)]
    solved = _solve_channels(solve_one, channels)
    out = np.stack(
        [ch.reshape(image.height, image.width) for ch in solved], axis=-1
    )
    result = Image(out)
    return result.clamped() if clamp else result


def lighten(
    image: Image, shape: PageShape, params: ScanParams, *, clamp: bool = True
) -> Image:
    """Divide out the darkening factors; exact inverse of darken pre-clamp."""
    if image.width != shape.n:
        raise DimensionError(
            f"image width {image.width} does not match shape grid size {shape.n}"
        )
    factors = darkening_factors(shape, params, image.width)
    out = Image(image.pixels / factors[None, :, None])
    return out.clamped() if clamp else out


def undistort(image: Image, shape: PageShape, *, supersample: int = 1) -> Image:
    """Invert the projection: output column j samples the scan at x(s_j).

    Since x(s) <= l*s pointwise, every arc-length column maps inside the
    scanned extent; the surplus padding region of the scan is never read.
    """
    from .forward import _resample_columns, _subsample_offsets

    if image.width != shape.n:
        raise DimensionError(
            f"image width {image.width} does not match shape grid size {shape.n}"
        )
    if np.any(np.diff(shape.x) <= 0):
        raise DimensionError(
            "distortion map is not monotone (theta0 > pi/2 overhangs the spine)"
        )
    n = shape.n
    ds = shape.s_max / (n - 1)
    offsets = _subsample_offsets(supersample)
    s_query = ((np.arange(n)[:, None] + offsets[None, :]) * ds).ravel()
    s_query = np.clip(s_query, 0.0, shape.s_max)
    positions = np.interp(s_query, shape.s_hat, shape.x) / shape.pitch
    # the scan carries no data beyond the projected page edge; sampling past
    # the last in-content column would blend in the padding, so extend it
    positions = np.minimum(positions, np.floor(shape.x[-1] / shape.pitch))
    sampled = _resample_columns(image.pixels, positions, 1.0)
    out = sampled.reshape(image.height, n, supersample, image.channels).mean(axis=2)
    return Image(out)


def recover(
    image: Image,
    params: ScanParams,
    cfg: SolverConfig | None = None,
    artifact_set=ARTIFACTS,
    *,
    supersample: int = 1,
) -> Image:
    """Invert the selected artifacts in reverse composition order.

    lighten, then deblur, then undistort; intermediate stages are left
    unclamped and the final image is clamped to [0, 1] once.
    """
    from .forward import build_blur_operator

    cfg = cfg or SolverConfig()
    order = _normalize_artifacts(artifact_set)
    pixels = image
    if params.spine_side == "right":
        pixels = Image(pixels.pixels[:, ::-1, :])
    shape = solve_shape(params, pixels.width)
    if "darken" in order:
        pixels = lighten(pixels, shape, params, clamp=False)
    if "blur" in order:
        op = build_blur_operator(shape, params, (pixels.height, pixels.width))
        pixels = deblur(pixels, op, cfg, clamp=False)
    if "distort" in order:
        pixels = undistort(pixels, shape, supersample=supersample)
    pixels = pixels.clamped()
    if params.spine_side == "right":
        pixels = Image(pixels.pixels[:, ::-1, :])
    return pixels
