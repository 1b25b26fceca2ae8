"""Closed catalog of scalar cost functions used to build schedule costs.

Every entry supports evaluation, first derivative and exact definite
integration so that analytic objective values never depend on quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np


class CatalogError(ValueError):
    pass


@dataclass(frozen=True)
class Linear:
    """``a * x``."""

    a: float

    kind = "linear"

    def __call__(self, x):
        return self.a * np.asarray(x, dtype=float)

    def derivative(self, x):
        return np.full_like(np.asarray(x, dtype=float), self.a)

    def antiderivative(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * self.a * x * x

    def to_dict(self) -> dict[str, Any]:
        return {"type": "linear", "a": self.a}


@dataclass(frozen=True)
class Power:
    """``a * |x| ** p`` with ``p > 1``."""

    a: float
    p: float

    kind = "power"

    def __post_init__(self):
        if not self.p > 1.0:
            raise CatalogError(f"power exponent must exceed 1, got {self.p}")

    def __call__(self, x):
        return self.a * np.abs(np.asarray(x, dtype=float)) ** self.p

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        return self.a * self.p * np.sign(x) * np.abs(x) ** (self.p - 1.0)

    def antiderivative(self, x):
        x = np.asarray(x, dtype=float)
        return self.a * np.sign(x) * np.abs(x) ** (self.p + 1.0) / (self.p + 1.0)

    def to_dict(self) -> dict[str, Any]:
        return {"type": "power", "a": self.a, "p": self.p}


@dataclass(frozen=True)
class Exponential:
    """``a * (exp(b * x) - 1)``; signs of ``a`` and ``b`` pick the shape."""

    a: float
    b: float

    kind = "exponential"

    def __post_init__(self):
        if self.b == 0.0:
            raise CatalogError("exponential rate b must be nonzero")

    def __call__(self, x):
        return self.a * np.expm1(self.b * np.asarray(x, dtype=float))

    def derivative(self, x):
        return self.a * self.b * np.exp(self.b * np.asarray(x, dtype=float))

    def antiderivative(self, x):
        x = np.asarray(x, dtype=float)
        return self.a * (np.expm1(self.b * x) / self.b - x)

    def to_dict(self) -> dict[str, Any]:
        return {"type": "exponential", "a": self.a, "b": self.b}


@dataclass(frozen=True)
class PiecewiseLinear:
    """Linear interpolation through ``knots``; extrapolated with end slopes."""

    xs: tuple[float, ...]
    ys: tuple[float, ...]

    kind = "piecewise_linear"

    def __post_init__(self):
        if len(self.xs) < 2 or len(self.xs) != len(self.ys):
            raise CatalogError("piecewise_linear needs >= 2 knots with matching x/y")
        if any(b <= a for a, b in zip(self.xs, self.xs[1:])):
            raise CatalogError("piecewise_linear knots must be strictly increasing in x")

    @property
    def _slopes(self) -> np.ndarray:
        xs, ys = np.asarray(self.xs), np.asarray(self.ys)
        return np.diff(ys) / np.diff(xs)

    def _segment(self, x: np.ndarray) -> np.ndarray:
        return np.clip(np.searchsorted(self.xs, x, side="right") - 1, 0, len(self.xs) - 2)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        seg = self._segment(x)
        xs, ys = np.asarray(self.xs), np.asarray(self.ys)
        return ys[seg] + self._slopes[seg] * (x - xs[seg])

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        return self._slopes[self._segment(x)]

    def antiderivative(self, x):
        # piecewise quadratic, anchored at 0 on the first knot
        x = np.asarray(x, dtype=float)
        xs, ys = np.asarray(self.xs), np.asarray(self.ys)
        slopes = self._slopes
        seg_areas = 0.5 * (ys[:-1] + ys[1:]) * np.diff(xs)
        cum = np.concatenate(([0.0], np.cumsum(seg_areas)))
        seg = self._segment(x)
        dx = x - xs[seg]
        return cum[seg] + ys[seg] * dx + 0.5 * slopes[seg] * dx * dx

    def to_dict(self) -> dict[str, Any]:
        return {"type": "piecewise_linear", "knots": [[x, y] for x, y in zip(self.xs, self.ys)]}


CatalogFunction = Linear | Power | Exponential | PiecewiseLinear


def integrate(fn: CatalogFunction, lo: float, hi: float) -> float:
    """Exact integral of ``fn`` over ``[lo, hi]``."""
    return float(fn.antiderivative(hi) - fn.antiderivative(lo))


def from_dict(spec: dict[str, Any]) -> CatalogFunction:
    if not isinstance(spec, dict) or "type" not in spec:
        raise CatalogError("function spec must be a mapping with a 'type' key")
    kind = spec["type"]
    try:
        if kind == "linear":
            return Linear(float(spec["a"]))
        if kind == "power":
            return Power(float(spec["a"]), float(spec["p"]))
        if kind == "exponential":
            return Exponential(float(spec["a"]), float(spec["b"]))
        if kind == "piecewise_linear":
            knots = spec["knots"]
            return PiecewiseLinear(
                tuple(float(k[0]) for k in knots), tuple(float(k[1]) for k in knots)
            )
    except KeyError as exc:
        raise CatalogError(f"{kind} function missing parameter {exc.args[0]!r}") from None
    except (TypeError, IndexError, ValueError) as exc:
        if isinstance(exc, CatalogError):
            raise
        raise CatalogError(f"malformed {kind} parameters: {exc}") from None
    raise CatalogError(f"unknown function type {kind!r}")


def lipschitz_bound(fn: CatalogFunction, lo: float, hi: float, samples: int = 513) -> float:
    """Max |fn'| on ``[lo, hi]``. Exact for the monotone-derivative entries."""
    if isinstance(fn, Linear):
        return abs(fn.a)
    if isinstance(fn, PiecewiseLinear):
        grid = np.concatenate(([lo, hi], [x for x in fn.xs if lo < x < hi]))
        return float(np.max(np.abs(fn.derivative(grid))))
    # power and exponential derivatives are monotone on each side of 0
    pts = [lo, hi] + ([0.0] if lo < 0.0 < hi else [])
    d = np.abs(fn.derivative(np.asarray(pts)))
    if samples:
        d = np.concatenate((d, np.abs(fn.derivative(np.linspace(lo, hi, samples)))))
    return float(np.max(d)) if math.isfinite(float(np.max(d))) else math.inf
