"""Elastica shape of a bound page pressed onto a scanner platen.

The page cross-section is an Euler elastica: measuring arc length s from
the spine in units of the elastic length scale l, the tilt angle obeys
theta'' = sin(theta) with theta -> 0 far from the spine, which integrates
in closed form to

    tan(theta(s)/4) = tan(theta0/4) * exp(-s)

The planar coordinates follow by quadrature, dx/ds = l cos(theta) and
dz/ds = l sin(theta).  Heights are measured above the platen: the spine
sits at the full lift 2 l sin(theta0/2) and the page approaches the
platen asymptotically, so all optics see height -> 0 far from the spine.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .errors import DomainError, ParameterError

__all__ = ["PageShape", "ScanParams", "solve_shape", "shape_at_x"]


_SPINE_SIDES = ("left", "right")

# JSON key <-> attribute mapping for the params document
_JSON_KEYS = {
    "l_px": "l",
    "theta0_rad": "theta0",
    "sigma_slope": "sigma_slope",
    "d_px": "d",
    "alpha": "alpha",
    "s_max": "s_max",
    "spine_side": "spine_side",
}


@dataclass(frozen=True)
class ScanParams:
    """Full physical parameter set of one scan.

    l is the elastic length scale in pixels (sqrt of bending modulus over
    spine force; only the ratio is observable).  theta0 is the spine angle.
    sigma_slope is the blur growth rate, sigma(height) = sigma_slope * height.
    d is the light-source distance in pixels and alpha the darkening exponent
    (1 for a bar source, 2 for a point source).
    """

    l: float
    theta0: float
    sigma_slope: float
    d: float
    alpha: int
    s_max: float = 5.0
    spine_side: str = "left"

    def __post_init__(self):
        if not self.l > 0:
            raise ParameterError(f"l must satisfy l > 0, got {self.l}")
        # theta0 == 0 is admitted as the degenerate flat page
        if not (0 <= self.theta0 < math.pi):
            raise ParameterError(
                f"theta0 must satisfy 0 <= theta0 < pi, got {self.theta0}"
            )
        if not self.sigma_slope >= 0:
            raise ParameterError(
                f"sigma_slope must satisfy sigma_slope >= 0, got {self.sigma_slope}"
            )
        if not self.d > 0:
            raise ParameterError(f"d must satisfy d > 0, got {self.d}")
        if self.alpha not in (1, 2):
            raise ParameterError(f"alpha must be 1 or 2, got {self.alpha}")
        if not self.s_max > 0:
            raise ParameterError(f"s_max must satisfy s_max > 0, got {self.s_max}")
        if self.spine_side not in _SPINE_SIDES:
            raise ParameterError(
                f"spine_side must be 'left' or 'right', got {self.spine_side!r}"
            )

    def replace(self, **changes) -> "ScanParams":
        """Return a copy with the given fields replaced (re-validated)."""
        state = {attr: getattr(self, attr) for attr in _JSON_KEYS.values()}
        state.update(changes)
        return ScanParams(**state)

    def to_json(self) -> str:
        """Serialize to the params JSON document."""
        doc = {key: getattr(self, attr) for key, attr in _JSON_KEYS.items()}
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ScanParams":
        """Parse a params JSON document.  Unknown keys are rejected."""
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParameterError(f"params document is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ParameterError("params document must be a JSON object")
        unknown = sorted(set(doc) - set(_JSON_KEYS))
        if unknown:
            raise ParameterError(f"unknown params keys: {', '.join(unknown)}")
        required = [k for k in _JSON_KEYS if k not in ("s_max", "spine_side")]
        missing = sorted(set(required) - set(doc))
        if missing:
            raise ParameterError(f"missing params keys: {', '.join(missing)}")
        kwargs = {_JSON_KEYS[key]: value for key, value in doc.items()}
        for name in ("l", "theta0", "sigma_slope", "d", "s_max"):
            if name in kwargs:
                if not isinstance(kwargs[name], (int, float)) or isinstance(
                    kwargs[name], bool
                ):
                    raise ParameterError(f"params key for {name} must be a number")
                kwargs[name] = float(kwargs[name])
        if "alpha" in kwargs:
            if kwargs["alpha"] not in (1, 2):
                raise ParameterError(f"alpha must be 1 or 2, got {kwargs['alpha']}")
            kwargs["alpha"] = int(kwargs["alpha"])
        return cls(**kwargs)


@dataclass(frozen=True)
class PageShape:
    """Discretized elastica on an even arc-length grid.

    s_hat is dimensionless arc length (units of l), theta the tilt angle,
    x the horizontal position in pixels and z_arc the integrated rise in
    pixels, both zero at the spine.  height is the distance above the
    platen, maximal (2 l sin(theta0/2)) at the spine and clamped at zero.
    """

    l: float
    theta0: float
    s_hat: np.ndarray = field(repr=False)
    theta: np.ndarray = field(repr=False)
    x: np.ndarray = field(repr=False)
    z_arc: np.ndarray = field(repr=False)
    height: np.ndarray = field(repr=False)
    s_max: float = 5.0

    @property
    def n(self) -> int:
        """Number of grid nodes."""
        return self.s_hat.size

    @property
    def pitch(self) -> float:
        """Arc-length spacing of the grid in pixels, l * ds.

        Columns of an image laid on the flat page sit at this spacing, and
        the even platen grid used by the distortion ops keeps the same pitch.
        """
        return self.l * self.s_max / (self.n - 1)

    @property
    def lift(self) -> float:
        """Total height of the spine above the platen, 2 l sin(theta0/2)."""
        return 2.0 * self.l * math.sin(self.theta0 / 2.0)


def solve_shape(params: ScanParams, n_grid: int) -> PageShape:
    """Evaluate the elastica on an even grid of n_grid arc-length nodes.

    theta comes from the closed form; x and z_arc from cumulative
    trapezoidal quadrature of l*cos(theta) and l*sin(theta).
    """
    if n_grid < 2:
        raise ParameterError(f"n_grid must satisfy n_grid >= 2, got {n_grid}")
    s_hat = np.linspace(0.0, params.s_max, n_grid)
    theta = 4.0 * np.arctan(math.tan(params.theta0 / 4.0) * np.exp(-s_hat))
    x = params.l * cumulative_trapezoid(np.cos(theta), s_hat, initial=0.0)
    z_arc = params.l * cumulative_trapezoid(np.sin(theta), s_hat, initial=0.0)
    lift = 2.0 * params.l * math.sin(params.theta0 / 2.0)
    height = np.maximum(lift - z_arc, 0.0)
    return PageShape(
        l=params.l,
        theta0=params.theta0,
        s_hat=s_hat,
        theta=theta,
        x=x,
        z_arc=z_arc,
        height=height,
        s_max=params.s_max,
    )


def shape_at_x(shape: PageShape, x_query: float) -> tuple[float, float, float]:
    """Invert the monotone x grid: return (s_hat, theta, height) at x_query.

    Linear interpolation on the grid; exact at grid nodes.  Raises if x is
    outside [0, x[-1]] or if the projection is multivalued (theta0 > pi/2
    makes the page overhang the spine so x is not monotone).
    """
    x_grid = shape.x
    if np.any(np.diff(x_grid) <= 0):
        raise DomainError(
            "x grid is not strictly increasing (theta0 > pi/2 overhangs the "
            "spine, making the vertical projection multivalued)"
        )
    if not 0.0 <= x_query <= x_grid[-1]:
        raise DomainError(
            f"x_query {x_query} outside projected page range [0, {x_grid[-1]}]"
        )
    s = float(np.interp(x_query, x_grid, shape.s_hat))
    theta = float(np.interp(x_query, x_grid, shape.theta))
    height = float(np.interp(x_query, x_grid, shape.height))
    return s, theta, height


def visible_profile_at_x(shape: PageShape, x_query: np.ndarray) -> np.ndarray:
    """Height of the lowest page sheet above each platen position.

    Vectorized helper used by the optics: queries are clamped to the grid
    extent, and when theta0 > pi/2 folds the page over the spine, only the
    monotone branch beyond the fold (the sheet facing the platen) is used.
    """
    x_grid = shape.x
    height = shape.height
    start = int(np.argmin(x_grid))
    x_grid = x_grid[start:]
    height = height[start:]
    xq = np.clip(np.asarray(x_query, dtype=float), x_grid[0], x_grid[-1])
    return np.interp(xq, x_grid, height)


def cos_theta_at_x(shape: PageShape, x_query: np.ndarray) -> np.ndarray:
    """Local projection compression factor cos(theta) at platen positions.

    Same branch/clamp conventions as visible_profile_at_x.
    """
    x_grid = shape.x
    theta = shape.theta
    start = int(np.argmin(x_grid))
    x_grid = x_grid[start:]
    theta = theta[start:]
    xq = np.clip(np.asarray(x_query, dtype=float), x_grid[0], x_grid[-1])
    return np.cos(np.interp(xq, x_grid, theta))
