"""Monge-property certification on sampled cost lattices."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .core import Commuting3D, Scenario, TimeGrid, cost_profiles

MODES = ("weak", "strict", "inverse", "strict_inverse")
STRICT_RTOL = 1e-12


@dataclass(frozen=True)
class CostMatrix:
    """2D cost lattice. ``axes`` names each axis, e.g. ("group", "time")."""

    entries: np.ndarray
    axes: tuple[str, str] = ("row", "col")

    def __post_init__(self):
        a = np.asarray(self.entries, dtype=float)
        if a.ndim != 2:
            raise ValueError(f"CostMatrix needs a 2D array, got shape {a.shape}")
        object.__setattr__(self, "entries", a)

    @property
    def finite_mask(self) -> np.ndarray:
        return np.isfinite(self.entries)


@dataclass(frozen=True)
class CostArrayND:
    entries: np.ndarray
    axes: tuple[str, ...] = ()

    def __post_init__(self):
        a = np.asarray(self.entries, dtype=float)
        if a.ndim not in (2, 3):
            raise ValueError(f"CostArrayND supports 2 or 3 axes, got {a.ndim}")
        object.__setattr__(self, "entries", a)
        if not self.axes:
            object.__setattr__(self, "axes", tuple(f"axis{i}" for i in range(a.ndim)))


@dataclass
class MongeVerdict:
    holds: bool
    mode: str
    violation: tuple | None = None
    vacuous: bool = False
    excluded_cells: int = 0
    worst_margin: float = field(default=float("inf"))

    def __bool__(self) -> bool:
        return self.holds


def _quad_margins(c: np.ndarray):
    """Monge margin c[i,k+1]+c[i+1,k]-c[i,k]-c[i+1,k+1] and its scale."""
    a, b = c[:-1, :-1], c[1:, 1:]
    d, e = c[:-1, 1:], c[1:, :-1]
    margin = (d + e) - (a + b)
    scale = 1.0 + np.abs(a) + np.abs(b) + np.abs(d) + np.abs(e)
    return margin, scale


def is_monge(matrix: CostMatrix | np.ndarray, mode: str = "weak") -> MongeVerdict:
    """Check every adjacent 2x2 quadruple.

    Quadruples touching a non-finite (penalized) entry are excluded and
    counted in ``excluded_cells``.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    c = matrix.entries if isinstance(matrix, CostMatrix) else np.asarray(matrix, dtype=float)
    if c.ndim != 2:
        raise ValueError("is_monge needs a 2D matrix")
    if c.shape[0] < 2 or c.shape[1] < 2:
        return MongeVerdict(True, mode, vacuous=True)
    margin, scale = _quad_margins(c)
    if mode.endswith("inverse"):
        margin = -margin
    finite = np.isfinite(margin)
    excluded = int(np.count_nonzero(~np.isfinite(c)))
    tol = STRICT_RTOL * np.where(np.isfinite(scale), scale, 1.0)
    if mode.startswith("strict"):
        bad = finite & (margin <= tol)
    else:
        bad = finite & (margin < -tol)
    worst = float(np.min(np.where(finite, margin, np.inf))) if finite.any() else float("inf")
    if bad.any():
        i, k = np.argwhere(bad)[0]
        return MongeVerdict(False, mode, (int(i), int(k)), False, excluded, worst)
    return MongeVerdict(True, mode, None, not finite.any(), excluded, worst)


def is_monge_nd(array: CostArrayND | np.ndarray, mode: str = "weak") -> MongeVerdict:
    """All axis-pair 2D submatrices (other indices fixed) must be Monge.

    On violation, ``violation`` is the pair of index vectors (x, y) whose
    quadruple c[min(x,y)] + c[max(x,y)] <= c[x] + c[y] fails.
    """
    if mode not in ("weak", "strict"):
        raise ValueError("is_monge_nd supports modes 'weak' and 'strict'")
    c = array.entries if isinstance(array, CostArrayND) else np.asarray(array, dtype=float)
    if any(m < 2 for m in c.shape):
        return MongeVerdict(True, mode, vacuous=True)
    worst = float("inf")
    excluded = int(np.count_nonzero(~np.isfinite(c)))
    all_vacuous = True
    for p, q in itertools.combinations(range(c.ndim), 2):
        rest = [ax for ax in range(c.ndim) if ax not in (p, q)]
        for fixed in itertools.product(*(range(c.shape[ax]) for ax in rest)):
            index: list = [slice(None)] * c.ndim
            for ax, val in zip(rest, fixed):
                index[ax] = val
            sub = c[tuple(index)]
            if p > q:
                sub = sub.T
            verdict = is_monge(sub, mode)
            worst = min(worst, verdict.worst_margin)
            all_vacuous = all_vacuous and verdict.vacuous
            if not verdict.holds:
                i, k = verdict.violation
                x = [0] * c.ndim
                y = [0] * c.ndim
                for ax, val in zip(rest, fixed):
                    x[ax] = y[ax] = val
                x[p], x[q] = i, k + 1
                y[p], y[q] = i + 1, k
                return MongeVerdict(False, mode, (tuple(x), tuple(y)), False, excluded, worst)
    return MongeVerdict(True, mode, None, all_vacuous, excluded, worst)


def sample_cost_array(sc: Scenario, grid: TimeGrid, reverse_time: bool = False) -> CostMatrix | CostArrayND:
    """Costs at cell midpoints: [group, time] or [location, group, time].

    ``reverse_time`` flips the time axis (z = -s), which turns the inverse
    Monge early-arrival lattice into a Monge one.
    """
    c = cost_profiles(sc, grid.midpoints)
    if reverse_time:
        c = c[..., ::-1]
    if isinstance(sc.schedule, Commuting3D):
        return CostArrayND(c, ("location", "group", "time"))
    return CostMatrix(c, ("group", "time"))
