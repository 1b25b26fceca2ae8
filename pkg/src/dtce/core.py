"""Domain types, schedule-delay costs and scenario validation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .catalog import CatalogFunction, PiecewiseLinear

# Forbidden departure sides evaluate to this sentinel; discretizers replace it.
INFEASIBLE = math.inf
EXISTENCE_TOL = 1e-9


class DTCEError(Exception):
    """Base class for all package errors."""


class ValidationError(DTCEError):
    """Scenario rejected; ``errors`` holds ``(field_path, message)`` pairs."""

    def __init__(self, errors: Sequence[tuple[str, str]]):
        self.errors = list(errors)
        super().__init__("; ".join(f"{p}: {m}" for p, m in self.errors))


class PreconditionError(DTCEError):
    """A solver's mathematical precondition does not hold for the scenario."""


class Family(str, Enum):
    FIFW = "FIFW"
    VOT_EARLY = "VOT_EARLY"
    VOT_LATE = "VOT_LATE"
    VOT_BOTH = "VOT_BOTH"
    THREE_D = "THREE_D"
    TOLL = "TOLL"
    DSO = "DSO"


@dataclass(frozen=True)
class TimeGrid:
    start: float
    end: float
    cells: int

    def __post_init__(self):
        if not (math.isfinite(self.start) and math.isfinite(self.end)) or self.end <= self.start:
            raise ValueError(f"grid end must exceed start, got [{self.start}, {self.end}]")
        if int(self.cells) != self.cells or self.cells < 1:
            raise ValueError(f"grid cells must be a positive integer, got {self.cells}")

    @property
    def width(self) -> float:
        return (self.end - self.start) / self.cells

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(self.start, self.end, self.cells + 1)

    @property
    def midpoints(self) -> np.ndarray:
        e = self.edges
        return 0.5 * (e[:-1] + e[1:])

    def with_cells(self, cells: int) -> "TimeGrid":
        return TimeGrid(self.start, self.end, cells)


@dataclass(frozen=True)
class GroupSpec:
    Q: float
    sigma: float = 0.0
    beta: float = 1.0
    gamma: float = 1.0
    alpha: float = 1.0


@dataclass(frozen=True)
class ConvexCommon:
    """Shared strictly convex ``f`` with minimum at zero delay."""

    f: CatalogFunction


@dataclass(frozen=True)
class EarlyLate:
    """``beta_k f_early(e)`` for e <= 0 and ``gamma_k f_late(e)`` for e >= 0."""

    early: CatalogFunction | None
    late: CatalogFunction | None
    allow_early: bool = True
    allow_late: bool = True


@dataclass(frozen=True)
class Commuting3D:
    """``alpha_k l_j + beta_k f(s) + gamma_k g(s - l_j)``, with s > 0 forbidden."""

    f: CatalogFunction
    g: CatalogFunction


ScheduleSpec = ConvexCommon | EarlyLate | Commuting3D


@dataclass(frozen=True)
class Location:
    l: float
    R: float


_FAMILY_SCHEDULE = {
    Family.FIFW: (ConvexCommon,),
    Family.VOT_EARLY: (EarlyLate,),
    Family.VOT_LATE: (EarlyLate,),
    Family.VOT_BOTH: (EarlyLate,),
    Family.THREE_D: (Commuting3D,),
    Family.TOLL: (ConvexCommon, EarlyLate),
    Family.DSO: (ConvexCommon, EarlyLate),
}


def _strictly(values: Sequence[float], increasing: bool) -> bool:
    pairs = zip(values, values[1:])
    return all(b > a for a, b in pairs) if increasing else all(b < a for a, b in pairs)


@dataclass(frozen=True)
class Scenario:
    capacity: float
    groups: tuple[GroupSpec, ...]
    schedule: ScheduleSpec
    family: Family
    locations: tuple[Location, ...] = ()
    toll: PiecewiseLinear | None = None

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(self.groups))
        object.__setattr__(self, "locations", tuple(self.locations))
        object.__setattr__(self, "family", Family(self.family))
        errors = list(_validate(self))
        if not errors:
            errors = list(_validate_shape(self))
        if errors:
            raise ValidationError(errors)

    @property
    def K(self) -> int:
        return len(self.groups)

    @property
    def J(self) -> int:
        return len(self.locations)

    @property
    def total_demand(self) -> float:
        return float(sum(g.Q for g in self.groups))

    @property
    def rush_length(self) -> float:
        return self.total_demand / self.capacity

    @property
    def demands(self) -> np.ndarray:
        return np.array([g.Q for g in self.groups], dtype=float)

    def attr(self, name: str) -> np.ndarray:
        return np.array([getattr(g, name) for g in self.groups], dtype=float)


def _shape_domain(sc: Scenario) -> float:
    sig = [g.sigma for g in sc.groups] or [0.0]
    return max(1.0, 2.0 * sc.rush_length + (max(sig) - min(sig)))


def _validate(sc: Scenario) -> Iterable[tuple[str, str]]:
    if not (sc.capacity > 0 and math.isfinite(sc.capacity)):
        yield "capacity", "must be a positive finite number"
    if not sc.groups:
        yield "groups", "at least one group is required"
        return
    vot = sc.family in (Family.VOT_EARLY, Family.VOT_LATE, Family.VOT_BOTH)
    for i, g in enumerate(sc.groups):
        for name in ("Q", "sigma", "beta", "gamma", "alpha"):
            if not math.isfinite(getattr(g, name)):
                yield f"groups[{i}].{name}", "must be finite"
        if not g.Q > 0:
            yield f"groups[{i}].Q", "must be positive"
        if vot:
            if not g.beta > 0:
                yield f"groups[{i}].beta", "must be positive"
            if not g.gamma > 0:
                yield f"groups[{i}].gamma", "must be positive"
        if sc.family == Family.THREE_D:
            if not g.beta > 0:
                yield f"groups[{i}].beta", "must be positive"
            if not g.gamma >= 0:
                yield f"groups[{i}].gamma", "must be nonnegative"
        if sc.family in (Family.DSO, Family.TOLL, Family.THREE_D) and not g.alpha > 0:
            yield f"groups[{i}].alpha", "must be positive"

    allowed = _FAMILY_SCHEDULE[sc.family]
    if not isinstance(sc.schedule, allowed):
        names = ", ".join(t.__name__ for t in allowed)
        yield "schedule", f"{type(sc.schedule).__name__} does not fit family {sc.family.value} (expected {names})"
        return

    sig = [g.sigma for g in sc.groups]
    if sc.family == Family.FIFW and not _strictly(sig, increasing=True):
        yield "groups", "FIFW groups must be sorted by strictly increasing sigma"
    if vot:
        if max(sig) != min(sig):
            yield "groups", "VOT families need a common preferred time sigma"
        beta, gamma = [g.beta for g in sc.groups], [g.gamma for g in sc.groups]
        if sc.family in (Family.VOT_EARLY, Family.VOT_BOTH) and not _strictly(beta, increasing=False):
            yield "groups", "groups must be sorted by strictly decreasing beta"
        if sc.family in (Family.VOT_LATE, Family.VOT_BOTH) and not _strictly(gamma, increasing=False):
            yield "groups", "groups must be sorted by strictly decreasing gamma"
        want_e = sc.family in (Family.VOT_EARLY, Family.VOT_BOTH)
        want_l = sc.family in (Family.VOT_LATE, Family.VOT_BOTH)
        if sc.schedule.allow_early != want_e or sc.schedule.allow_late != want_l:
            yield "schedule", f"early/late permission flags do not match family {sc.family.value}"

    if sc.family == Family.THREE_D:
        for name in ("alpha", "beta", "gamma"):
            if not _strictly([getattr(g, name) for g in sc.groups], increasing=True):
                yield "groups", f"THREE_D groups must be sorted by strictly increasing {name}"
        if any(g.sigma != 0.0 for g in sc.groups):
            yield "groups", "THREE_D assumes a common preferred time sigma = 0"
        if not sc.locations:
            yield "locations", "THREE_D needs at least one location"
        for j, loc in enumerate(sc.locations):
            if not (loc.R > 0 and math.isfinite(loc.R)):
                yield f"locations[{j}].R", "must be positive"
            if not (loc.l >= 0 and math.isfinite(loc.l)):
                yield f"locations[{j}].l", "must be nonnegative"
        if not _strictly([loc.l for loc in sc.locations], increasing=False):
            yield "locations", "locations must be indexed by strictly decreasing free-flow time l"
        total_r = sum(loc.R for loc in sc.locations)
        if sc.locations and abs(total_r - sc.total_demand) > 1e-9 * max(1.0, sc.total_demand):
            yield "locations", f"sum of R ({total_r!r}) must equal sum of Q ({sc.total_demand!r})"
    elif sc.locations:
        yield "locations", "only THREE_D scenarios carry locations"

    if sc.family == Family.TOLL and sc.toll is None:
        yield "toll", "TOLL scenarios need a toll profile"
    if sc.family != Family.TOLL and sc.toll is not None:
        yield "toll", "toll profile given for a non-TOLL family"


def _validate_shape(sc: Scenario) -> Iterable[tuple[str, str]]:
    W = _shape_domain(sc)
    sch = sc.schedule
    if isinstance(sch, ConvexCommon):
        x = np.linspace(-W, W, 801)
        y = sch.f(x)
        scale = 1.0 + float(np.max(np.abs(y)))
        if abs(float(sch.f(0.0))) > 1e-12 * scale:
            yield "schedule.f", "f(0) must be 0"
        if np.any(np.diff(y, 2) <= 1e-14 * scale):
            yield "schedule.f", "f must be strictly convex (second differences > 0)"
        if np.any(y < float(sch.f(0.0))):
            yield "schedule.f", "f must attain its minimum at 0"
    elif isinstance(sch, EarlyLate):
        if sch.allow_early:
            if sch.early is None:
                yield "schedule.early", "required when early arrival is allowed"
            else:
                y = sch.early(np.linspace(-W, 0.0, 401))
                if abs(float(sch.early(0.0))) > 1e-12:
                    yield "schedule.early", "f_early(0) must be 0"
                if np.any(np.diff(y) >= 0):
                    yield "schedule.early", "f_early must be strictly decreasing on e <= 0"
        if sch.allow_late:
            if sch.late is None:
                yield "schedule.late", "required when late arrival is allowed"
            else:
                y = sch.late(np.linspace(0.0, W, 401))
                if abs(float(sch.late(0.0))) > 1e-12:
                    yield "schedule.late", "f_late(0) must be 0"
                if np.any(np.diff(y) <= 0):
                    yield "schedule.late", "f_late must be strictly increasing on e >= 0"
        if not (sch.allow_early or sch.allow_late):
            yield "schedule", "at least one of early/late arrival must be allowed"
    elif isinstance(sch, Commuting3D):
        s = np.linspace(-W, 0.0, 401)
        fs = sch.f(s)
        if np.any(fs < -1e-12) or np.any(np.diff(fs) >= 0):
            yield "schedule.f", "f must be nonnegative and strictly decreasing on s <= 0"
        if sc.locations:
            l_near = min(loc.l for loc in sc.locations)
            l_far = max(loc.l for loc in sc.locations)
            t = np.linspace(-W - l_far, -l_near, 401)
            gt = sch.g(t)
            if np.any(gt <= 0):
                yield "schedule.g", "g must be positive on the early-bird domain"
            if np.any(np.diff(gt) >= 0):
                yield "schedule.g", "g must be strictly decreasing"
            scale = 1.0 + float(np.max(np.abs(gt)))
            if np.any(np.diff(gt, 2) >= -1e-14 * scale):
                yield "schedule.g", "g must be strictly concave"


# ---------------------------------------------------------------------------
# schedule costs


def group_cost(sc: Scenario, k: int, s, j: int | None = None) -> np.ndarray:
    """Vectorized c_k(s) (or c_{j,k}(s)); forbidden sides give ``INFEASIBLE``."""
    if not 0 <= k < sc.K:
        raise IndexError(f"group index {k} out of range for {sc.K} groups")
    s = np.asarray(s, dtype=float)
    g = sc.groups[k]
    sch = sc.schedule
    if isinstance(sch, ConvexCommon):
        return np.asarray(sch.f(s - g.sigma), dtype=float)
    if isinstance(sch, EarlyLate):
        e = s - g.sigma
        out = np.zeros_like(e)
        early, late = e < 0, e > 0
        if sch.allow_early:
            out = np.where(early, g.beta * sch.early(np.minimum(e, 0.0)), out)
        else:
            out = np.where(early, INFEASIBLE, out)
        if sch.allow_late:
            out = np.where(late, g.gamma * sch.late(np.maximum(e, 0.0)), out)
        else:
            out = np.where(late, INFEASIBLE, out)
        return out
    if j is None:
        raise ValueError("three-dimensional costs need a location index")
    if not 0 <= j < sc.J:
        raise IndexError(f"location index {j} out of range for {sc.J} locations")
    l = sc.locations[j].l
    sm = np.minimum(s, 0.0)
    val = g.alpha * l + g.beta * sch.f(sm) + g.gamma * sch.g(sm - l)
    return np.where(s > 0, INFEASIBLE, val)


def group_cost_slope(sc: Scenario, k: int, s, j: int | None = None) -> np.ndarray:
    """Analytic dc/ds on the allowed side (NaN where forbidden)."""
    s = np.asarray(s, dtype=float)
    g = sc.groups[k]
    sch = sc.schedule
    if isinstance(sch, ConvexCommon):
        return np.asarray(sch.f.derivative(s - g.sigma), dtype=float)
    if isinstance(sch, EarlyLate):
        e = s - g.sigma
        nan = np.full_like(e, np.nan)
        de = g.beta * sch.early.derivative(np.minimum(e, 0.0)) if sch.allow_early else nan
        dl = g.gamma * sch.late.derivative(np.maximum(e, 0.0)) if sch.allow_late else nan
        return np.where(e < 0, de, np.where(e > 0, dl, de if sch.allow_early else dl))
    l = sc.locations[j].l
    sm = np.minimum(s, 0.0)
    d = g.beta * sch.f.derivative(sm) + g.gamma * sch.g.derivative(sm - l)
    return np.where(s > 0, np.nan, d)


def group_cost_integral(sc: Scenario, k: int, lo: float, hi: float, j: int | None = None) -> float:
    """Exact integral of c_k over ``[lo, hi]`` (on a single allowed side)."""
    from .catalog import integrate

    if hi <= lo:
        return 0.0
    g = sc.groups[k]
    sch = sc.schedule
    if isinstance(sch, ConvexCommon):
        return integrate(sch.f, lo - g.sigma, hi - g.sigma)
    if isinstance(sch, EarlyLate):
        a, b = lo - g.sigma, hi - g.sigma
        total = 0.0
        if a < 0:
            if not sch.allow_early:
                return INFEASIBLE
            total += g.beta * integrate(sch.early, a, min(b, 0.0))
        if b > 0:
            if not sch.allow_late:
                return INFEASIBLE
            total += g.gamma * integrate(sch.late, max(a, 0.0), b)
        return total
    if hi > 0:
        return INFEASIBLE
    l = sc.locations[j].l
    return (
        g.alpha * l * (hi - lo)
        + g.beta * integrate(sch.f, lo, hi)
        + g.gamma * integrate(sch.g, lo - l, hi - l)
    )


def eval_schedule_cost(sc: Scenario, group_index: int, s: float, location_index: int | None = None) -> float:
    return float(group_cost(sc, group_index, s, location_index))


def cost_profiles(sc: Scenario, times) -> np.ndarray:
    """Costs at ``times``: shape (K, n), or (J, K, n) for the 3D family."""
    times = np.asarray(times, dtype=float)
    if isinstance(sc.schedule, Commuting3D):
        return np.stack([np.stack([group_cost(sc, k, times, j) for k in range(sc.K)]) for j in range(sc.J)])
    return np.stack([group_cost(sc, k, times) for k in range(sc.K)])


@dataclass(frozen=True)
class ExistenceCheck:
    ok: bool
    margin: float
    worst: tuple[int, ...] | None = field(default=None)


def check_existence_condition(sc: Scenario, grid: TimeGrid, extra_slope: np.ndarray | None = None,
                              where: np.ndarray | None = None) -> ExistenceCheck:
    """Forward-difference test of dc/ds > -1 over the grid.

    Cells touching a forbidden side are skipped. ``extra_slope`` (per cell
    interval, shape (n-1,) or broadcastable) is added to every group's slope;
    the toll oracle uses it for the generalized condition. ``where``
    (same shape as the slopes) restricts the test to selected intervals.
    """
    t = grid.midpoints
    if t.size < 2:
        return ExistenceCheck(True, math.inf, None)
    c = cost_profiles(sc, t)
    slope = np.diff(c, axis=-1) / grid.width
    if extra_slope is not None:
        slope = slope + extra_slope
    valid = np.isfinite(c[..., :-1]) & np.isfinite(c[..., 1:])
    if where is not None:
        valid &= where
    if not valid.any():
        return ExistenceCheck(True, math.inf, None)
    margins = np.where(valid, slope + 1.0, np.inf)
    idx = np.unravel_index(int(np.argmin(margins)), margins.shape)
    margin = float(margins[idx])
    return ExistenceCheck(margin > EXISTENCE_TOL, margin, tuple(int(i) for i in idx))


def scenario_lipschitz(sc: Scenario, lo: float, hi: float, samples: int = 2001) -> float:
    """Max |dc/ds| over ``[lo, hi]`` across groups (allowed sides only)."""
    s = np.linspace(lo, hi, samples)
    best = 0.0
    pairs = [(k, j) for j in range(sc.J) for k in range(sc.K)] if sc.J else [(k, None) for k in range(sc.K)]
    for k, j in pairs:
        d = np.abs(group_cost_slope(sc, k, s, j))
        d = d[np.isfinite(d)]
        if d.size:
            best = max(best, float(d.max()))
    return best
