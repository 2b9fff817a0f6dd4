"""Uniform-knot B-spline bases for KAN edge functions.

A :class:`SplineConfig` with degree ``k`` and ``g`` grid intervals on
``[range_min, range_max]`` uses the uniform knot vector extended by ``k``
knots on each side, which leaves exactly ``g + k`` basis functions that are
nonzero somewhere inside the domain.  Inputs are clamped to the domain before
evaluation, so an edge function is constant outside it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SplineConfig",
    "EdgeFunction",
    "knot_vector",
    "basis_values",
    "basis_derivatives",
    "spline_eval",
    "spline_grad_coeffs",
    "spline_grad_input",
]


@dataclass(frozen=True)
class SplineConfig:
    order_k: int = 2
    grid_g: int = 3
    range_min: float = -1.0
    range_max: float = 1.0

    def __post_init__(self):
        if int(self.order_k) != self.order_k or self.order_k < 1:
            raise ValueError(f"order_k must be an integer >= 1, got {self.order_k}")
        if int(self.grid_g) != self.grid_g or self.grid_g < 1:
            raise ValueError(f"grid_g must be an integer >= 1, got {self.grid_g}")
        if not (np.isfinite(self.range_min) and np.isfinite(self.range_max)):
            raise ValueError("spline range must be finite")
        if not self.range_min < self.range_max:
            raise ValueError(f"range_min must be < range_max, got [{self.range_min}, {self.range_max}]")

    @property
    def basis_count(self) -> int:
        return self.grid_g + self.order_k

    @property
    def spacing(self) -> float:
        return (self.range_max - self.range_min) / self.grid_g

    def to_dict(self) -> dict:
        return {"k": self.order_k, "g": self.grid_g, "range": [self.range_min, self.range_max]}

    @classmethod
    def from_dict(cls, d: dict) -> "SplineConfig":
        lo, hi = d.get("range", (-1.0, 1.0))
        return cls(order_k=int(d["k"]), grid_g=int(d["g"]), range_min=float(lo), range_max=float(hi))


def knot_vector(config: SplineConfig) -> np.ndarray:
    """Ascending knots ``t_0 .. t_{g+2k}``; ``t_k = range_min`` and ``t_{g+k} = range_max``."""
    k, g = config.order_k, config.grid_g
    j = np.arange(g + 2 * k + 1, dtype=np.float64) - k
    knots = config.range_min + j * config.spacing
    knots[k] = config.range_min
    knots[g + k] = config.range_max
    return knots


def _degree_table(config: SplineConfig, x: np.ndarray, degree: int):
    """Bases of ``degree`` (0 <= degree <= k) at already-clamped ``x``.

    Returns an array of shape ``x.shape + (g + 2k - degree,)`` covering every
    basis on the extended knot vector.
    """
    k, g = config.order_k, config.grid_g
    h = config.spacing
    t = knot_vector(config)
    # interval index on the full knot vector, right-continuous, with the
    # right end folded into the last interior interval
    span = np.floor((x - config.range_min) / h).astype(np.int64)
    span = np.clip(span, 0, g - 1) + k
    n0 = g + 2 * k
    b = (span[..., None] == np.arange(n0)).astype(np.float64)
    xe = x[..., None]
    for d in range(1, degree + 1):
        n = n0 - d
        left = (xe - t[:n]) / (d * h)
        right = (t[d + 1 : d + 1 + n] - xe) / (d * h)
        b = left * b[..., :n] + right * b[..., 1 : n + 1]
    return b


def _clamp(config: SplineConfig, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("spline input must be finite")
    return np.clip(x, config.range_min, config.range_max)


def basis_values(config: SplineConfig, x) -> np.ndarray:
    """Values of the ``g + k`` retained bases; output shape ``np.shape(x) + (g + k,)``."""
    xc = _clamp(config, x)
    return _degree_table(config, xc, config.order_k)


def basis_derivatives(config: SplineConfig, x) -> np.ndarray:
    """d/dx of each retained basis; zero wherever the input was clamped.

    Uses ``B'_{j,k} = (B_{j,k-1} - B_{j+1,k-1}) / h`` for uniform spacing ``h``.
    """
    x = np.asarray(x, dtype=np.float64)
    xc = _clamp(config, x)
    lower = _degree_table(config, xc, config.order_k - 1)
    d = (lower[..., :-1] - lower[..., 1:]) / config.spacing
    inside = (x >= config.range_min) & (x <= config.range_max)
    return d * inside[..., None]


@dataclass
class EdgeFunction:
    """One learnable 1-D function: a coefficient-weighted sum of the bases."""

    config: SplineConfig
    coeffs: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.coeffs is None:
            self.coeffs = np.zeros(self.config.basis_count)
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if self.coeffs.shape != (self.config.basis_count,):
            raise ValueError(
                f"expected {self.config.basis_count} coefficients, got shape {self.coeffs.shape}"
            )


def spline_eval(edge: EdgeFunction, x):
    out = basis_values(edge.config, x) @ edge.coeffs
    return float(out) if np.ndim(out) == 0 else out


def spline_grad_coeffs(edge: EdgeFunction, x) -> np.ndarray:
    return basis_values(edge.config, x)


def spline_grad_input(edge: EdgeFunction, x):
    out = basis_derivatives(edge.config, x) @ edge.coeffs
    return float(out) if np.ndim(out) == 0 else out
