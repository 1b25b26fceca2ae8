"""Closed-form and root-finding equilibrium solvers for each model family.

All solutions share one representation: a list of departure bands. On a
band of class ``(location, group)`` the bottleneck discharges at capacity
and the queuing delay is ``u(s) = level - c(s)``, where ``level`` is the
class's trip cost. Outside every band ``u = 0``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import bisect

from . import transport
from .core import (
    Commuting3D,
    ConvexCommon,
    ExistenceCheck,
    Family,
    PreconditionError,
    Scenario,
    TimeGrid,
    check_existence_condition,
    cost_profiles,
    group_cost,
    group_cost_slope,
    group_cost_integral,
    scenario_lipschitz,
)

ROOT_RTOL = 1e-12


@dataclass(frozen=True)
class Band:
    cls: int
    start: float
    end: float
    level: float
    side: str = "rush"

    @property
    def length(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class JointDistribution3D:
    X: np.ndarray
    labels: tuple[tuple[int, int], ...]
    breakpoints: np.ndarray


@dataclass
class EquilibriumSolution:
    """Departure-side equilibrium of one scenario.

    ``classes`` lists ``(location, group)`` pairs (location ``None`` outside
    the 3D family); ``v`` and ``class_mass`` are aligned with it.
    """

    scenario: Scenario
    family: Family
    window: tuple[float, float]
    bands: list[Band]
    classes: list[tuple[int | None, int]]
    class_mass: np.ndarray
    v: np.ndarray
    Z: float
    breakpoints: dict[str, np.ndarray]
    s0: float | None = None
    joint: JointDistribution3D | None = None
    existence: ExistenceCheck | None = None
    notes: list[str] = field(default_factory=list)
    u_times: np.ndarray | None = None
    u_values: np.ndarray | None = None

    @property
    def capacity(self) -> float:
        return self.scenario.capacity

    def class_cost(self, ci: int, s) -> np.ndarray:
        j, k = self.classes[ci]
        return group_cost(self.scenario, k, s, j)

    def u_at(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        out = np.zeros_like(s)
        for b in self.bands:
            if b.length <= 0:
                continue
            m = (s >= b.start) & (s <= b.end)
            if m.any():
                out[m] = b.level - self.class_cost(b.cls, s[m])
        return out

    def u_integral(self) -> float:
        """Exact integral of u over the rush window."""
        total = 0.0
        for b in self.bands:
            if b.length > 0:
                j, k = self.classes[b.cls]
                total += b.level * b.length - group_cost_integral(self.scenario, k, b.start, b.end, j)
        return total

    def departed_mass(self, ci: int, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        out = np.zeros_like(s)
        for b in self.bands:
            if b.cls == ci and b.length > 0:
                out += self.capacity * np.clip(s - b.start, 0.0, b.length)
        return out

    def frechet_hoeffding(self, kappa: int, s) -> np.ndarray:
        """Cumulative mass of classes 0..kappa departed by time s."""
        return sum(self.departed_mass(ci, s) for ci in range(kappa + 1))

    def departure_rates(self, s) -> np.ndarray:
        """Per-class departure rate x(s): capacity inside its bands."""
        s = np.asarray(s, dtype=float)
        out = np.zeros((len(self.classes),) + s.shape)
        for b in self.bands:
            if b.length > 0:
                out[b.cls] += np.where((s >= b.start) & (s < b.end), self.capacity, 0.0)
        return out

    def strong_duality_residual(self) -> float:
        """(sum m v - mu int u - Z) / max(1, |Z|)."""
        dual = float(self.class_mass @ self.v) - self.capacity * self.u_integral()
        return (dual - self.Z) / max(1.0, abs(self.Z))

    def with_trip_costs(self, v) -> "EquilibriumSolution":
        """Copy with replaced trip costs (bands untouched), for defect injection."""
        import copy

        other = copy.copy(self)
        other.v = np.asarray(v, dtype=float).copy()
        return other


def _finish(sol: EquilibriumSolution, grid: TimeGrid | None) -> EquilibriumSolution:
    edges = [b.start for b in sol.bands] + [b.end for b in sol.bands]
    pts = np.array(edges, dtype=float)
    if grid is not None:
        pts = np.concatenate([grid.midpoints, pts])
    pts = np.unique(pts)
    sol.u_times = pts
    sol.u_values = sol.u_at(pts)
    return sol


def _total_cost(sc: Scenario, classes, bands) -> float:
    Z = 0.0
    for b in bands:
        if b.length > 0:
            j, k = classes[b.cls]
            Z += sc.capacity * group_cost_integral(sc, k, b.start, b.end, j)
    return Z


def _band_existence(sc: Scenario, classes, bands, grid: TimeGrid | None) -> ExistenceCheck:
    """Forward-difference slope test restricted to cells inside each band."""
    margin = math.inf
    worst = None
    for b in bands:
        if b.length <= 0:
            continue
        j, k = classes[b.cls]
        if grid is not None:
            t = grid.midpoints
            t = t[(t >= b.start) & (t <= b.end)]
        else:
            t = np.array([])
        if t.size < 2:
            # fewer than two cell midpoints in the band: exact derivative at sub-cell midpoints
            t = np.linspace(b.start, b.end, 257)[:-1] + 0.5 * b.length / 256
            slope = group_cost_slope(sc, k, t, j)
        else:
            slope = np.diff(group_cost(sc, k, t, j)) / np.diff(t)
        if slope.size:
            i = int(np.argmin(slope))
            if slope[i] + 1.0 < margin:
                margin = float(slope[i] + 1.0)
                worst = (b.cls, i)
    return ExistenceCheck(margin > 1e-9, margin, worst)


# ---------------------------------------------------------------------------
# FIFW


def _fifw_recursion(sc: Scenario, s0: float):
    mu = sc.capacity
    K = sc.K
    s = s0 + np.concatenate(([0.0], np.cumsum(sc.demands) / mu))
    v = np.zeros(K)
    v[K - 1] = float(group_cost(sc, K - 1, s[K]))
    for k in range(K - 2, -1, -1):
        v[k] = v[k + 1] - float(group_cost(sc, k + 1, s[k + 1])) + float(group_cost(sc, k, s[k + 1]))
    return s, v


def solve_fifw(sc: Scenario, grid: TimeGrid | None = None) -> EquilibriumSolution:
    """Single-rush FIFW equilibrium; the rush start is found by bisection."""
    if sc.family != Family.FIFW or not isinstance(sc.schedule, ConvexCommon):
        raise PreconditionError("solve_fifw needs a FIFW scenario with a ConvexCommon schedule")
    T = sc.rush_length
    sig = sc.attr("sigma")

    def g(s0):
        s, v = _fifw_recursion(sc, s0)
        return v[0] - float(group_cost(sc, 0, s0))

    lo, hi = float(sig.min() - 2 * T), float(sig.max())
    width = max(hi - lo, 1.0)
    for _ in range(200):
        if g(lo) < 0 < g(hi) or g(lo) == 0 or g(hi) == 0:
            break
        width *= 2.0
        lo, hi = lo - width, hi + width
    else:
        raise PreconditionError("could not bracket the rush start")
    s0 = bisect(g, lo, hi, xtol=ROOT_RTOL * T, rtol=4 * np.finfo(float).eps, maxiter=500)
    s, v = _fifw_recursion(sc, s0)
    classes = [(None, k) for k in range(sc.K)]
    bands = [Band(k, float(s[k]), float(s[k + 1]), float(v[k])) for k in range(sc.K)]
    sol = EquilibriumSolution(
        sc, sc.family, (float(s[0]), float(s[-1])), bands, classes, sc.demands, v,
        _total_cost(sc, classes, bands), {"s": s}, s0=float(s0),
    )
    # u is concave on each band, so checking the band ends is exact
    ends = np.array([[b.start, b.end] for b in bands]).ravel()
    umin = float(np.min(sol.u_at(ends)))
    if umin < -1e-9 * max(1.0, float(np.max(np.abs(v)))):
        raise PreconditionError(f"single rush period assumption violated (u = {umin:.3g} < 0)")
    sol.existence = _band_existence(sc, classes, bands, grid)
    if not sol.existence.ok:
        raise PreconditionError(f"existence condition fails on the rush window (margin {sol.existence.margin:.3g})")
    return _finish(sol, grid)


# ---------------------------------------------------------------------------
# VOT families


def _hat(w: np.ndarray) -> np.ndarray:
    return w - np.append(w[1:], 0.0)


def trip_cost_map(sc: Scenario, X, side: str = "early") -> np.ndarray:
    """Trip costs v_k of one side as a function of that side's demand split X."""
    X = np.asarray(X, dtype=float)
    s = np.cumsum(X) / sc.capacity
    if side == "early":
        terms = _hat(sc.attr("beta")) * sc.schedule.early(-s)
    elif side == "late":
        terms = _hat(sc.attr("gamma")) * sc.schedule.late(s)
    else:
        raise ValueError("side must be 'early' or 'late'")
    return np.cumsum(terms[::-1])[::-1]


def _side_bands(sc, X, side, cls_offset=0):
    mu = sc.capacity
    sigma = sc.groups[0].sigma
    s = np.concatenate(([0.0], np.cumsum(X) / mu))
    v = trip_cost_map(sc, X, side)
    bands = []
    for k in range(sc.K):
        if side == "early":
            bands.append(Band(k, sigma - s[k + 1], sigma - s[k], float(v[k]), "early"))
        else:
            bands.append(Band(k, sigma + s[k], sigma + s[k + 1], float(v[k]), "late"))
    return s, v, bands


def _vot_solution(sc, Xe, Xl, grid, notes):
    classes = [(None, k) for k in range(sc.K)]
    bands = []
    bp = {}
    ve = vl = None
    if Xe is not None:
        se, ve, be = _side_bands(sc, Xe, "early")
        bands += be
        bp["early"] = se
    if Xl is not None:
        sl, vl, bl = _side_bands(sc, Xl, "late")
        bands += bl
        bp["late"] = sl
    if ve is not None and vl is not None:
        v = np.where(Xe <= 0, vl, np.where(Xl <= 0, ve, 0.5 * (ve + vl)))
    else:
        v = ve if ve is not None else vl
    sigma = sc.groups[0].sigma
    lo = sigma - (bp["early"][-1] if "early" in bp else 0.0)
    hi = sigma + (bp["late"][-1] if "late" in bp else 0.0)
    sol = EquilibriumSolution(sc, sc.family, (lo, hi), bands, classes, sc.demands, np.asarray(v, dtype=float),
                              _total_cost(sc, classes, bands), bp, notes=notes)
    sol.existence = _band_existence(sc, classes, bands, grid)
    if not sol.existence.ok:
        sol.notes.append(f"existence condition violated on the rush window (margin {sol.existence.margin:.6g})")
    return _finish(sol, grid)


def solve_vot_early(sc: Scenario, grid: TimeGrid | None = None) -> EquilibriumSolution:
    """Early-only VOT equilibrium; higher-beta groups depart closer to sigma."""
    if sc.family != Family.VOT_EARLY:
        raise PreconditionError("solve_vot_early needs a VOT_EARLY scenario")
    return _vot_solution(sc, sc.demands, None, grid, [])


def solve_vot_late(sc: Scenario, grid: TimeGrid | None = None) -> EquilibriumSolution:
    if sc.family != Family.VOT_LATE:
        raise PreconditionError("solve_vot_late needs a VOT_LATE scenario")
    return _vot_solution(sc, None, sc.demands, grid, [])


def _interior_split(sc: Scenario, k: int, P: float, bh: float, gh: float) -> float:
    """Root s_e in [0, P] of bh f_e(-s_e) - gh f_l(P - s_e) (increasing in s_e)."""
    fe, fl = sc.schedule.early, sc.schedule.late

    def resid(se):
        return bh * float(fe(-se)) - gh * float(fl(P - se))

    if P <= 0:
        return 0.0
    r0, r1 = resid(0.0), resid(P)
    if r0 >= 0:
        return 0.0
    if r1 <= 0:
        return P
    return bisect(resid, 0.0, P, xtol=ROOT_RTOL * max(P, 1e-300), rtol=4 * np.finfo(float).eps, maxiter=500)


def _coordinate_descent(sc: Scenario, Xe: np.ndarray, sweeps: int = 20000) -> np.ndarray:
    """Minimize the (strictly convex, C1) early/late split objective over the box.

    One coordinate at a time: the partial derivative in X_k^e is
    v_k^e - v_k^l, monotone in X_k^e, so each step is a bisection.
    """
    Q = sc.demands
    X = np.clip(Xe, 0.0, Q).astype(float)
    tol = 1e-14 * Q.sum()

    def grad(Xv, k):
        return trip_cost_map(sc, Xv, "early")[k] - trip_cost_map(sc, Q - Xv, "late")[k]

    for _ in range(sweeps):
        change = 0.0
        for k in range(sc.K):
            old = X[k]

            def gk(x):
                Xt = X.copy()
                Xt[k] = x
                return grad(Xt, k)

            if gk(0.0) >= 0:
                new = 0.0
            elif gk(Q[k]) <= 0:
                new = Q[k]
            else:
                new = bisect(gk, 0.0, Q[k], xtol=1e-15 * Q[k] + 1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
            X[k] = new
            change = max(change, abs(new - old))
        if change <= tol:
            return X
    warnings.warn("early/late split coordinate descent hit the sweep limit", RuntimeWarning)
    return X


def solve_vot_both(sc: Scenario, grid: TimeGrid | None = None) -> EquilibriumSolution:
    """Early-and-late VOT equilibrium.

    Each group's split solves two equations independently. If the resulting
    breakpoints are not ordered (some group departs on one side only), the
    split is recomputed by coordinate descent on the convex split problem
    and the case is noted.
    """
    if sc.family != Family.VOT_BOTH:
        raise PreconditionError("solve_vot_both needs a VOT_BOTH scenario")
    mu = sc.capacity
    P = np.cumsum(sc.demands) / mu
    bh, gh = _hat(sc.attr("beta")), _hat(sc.attr("gamma"))
    se = np.array([_interior_split(sc, k, P[k], bh[k], gh[k]) for k in range(sc.K)])
    Xe = mu * np.diff(np.concatenate(([0.0], se)))
    Xl = sc.demands - Xe
    notes = []
    tol = 1e-12 * sc.total_demand
    if np.any(Xe < -tol) or np.any(Xl < -tol):
        notes.append("corner case: breakpoint ordering violated by the interior equations; split re-solved")
        Xe = _coordinate_descent(sc, np.clip(Xe, 0.0, sc.demands))
        Xl = sc.demands - Xe
    else:
        Xe = np.clip(Xe, 0.0, sc.demands)
        Xl = sc.demands - Xe
    onesided = [k for k in range(sc.K) if Xe[k] <= tol or Xl[k] <= tol]
    if onesided:
        notes.append("groups departing on one side only: " + ", ".join(str(k) for k in onesided))
    sol = _vot_solution(sc, Xe, Xl, grid, notes)
    sol.breakpoints["early_mass"] = Xe
    sol.breakpoints["late_mass"] = Xl
    return sol


# ---------------------------------------------------------------------------
# 3D model


def joint_distribution(R, Q) -> tuple[np.ndarray, tuple[tuple[int, int], ...]]:
    """Northwest-corner merge of the location and group marginals."""
    fa = transport.northwest_corner(R, Q)
    eps = 1e-12 * max(1.0, float(np.sum(Q)))
    X, labels = [], []
    for j, k in fa.basis:
        if fa.flow[j, k] > eps:
            X.append(float(fa.flow[j, k]))
            labels.append((int(j), int(k)))
    return np.array(X), tuple(labels)


def solve_3d(sc: Scenario, grid: TimeGrid | None = None) -> EquilibriumSolution:
    """Flows of the location x job model by the comonotone merge.

    Trip-cost levels of the merged classes follow from u(-T) = 0 and queue
    continuity at each breakpoint; rents and wages are left to the LP.
    """
    if sc.family != Family.THREE_D or not isinstance(sc.schedule, Commuting3D):
        raise PreconditionError("solve_3d needs a THREE_D scenario")
    R = np.array([loc.R for loc in sc.locations])
    X, labels = joint_distribution(R, sc.demands)
    mu = sc.capacity
    T = sc.rush_length
    s = np.concatenate(([0.0], np.cumsum(X))) / mu - T
    s[-1] = 0.0
    levels = np.zeros(X.size)
    levels[0] = float(group_cost(sc, labels[0][1], s[0], labels[0][0]))
    for i in range(1, X.size):
        (jp, kp), (j, k) = labels[i - 1], labels[i]
        levels[i] = levels[i - 1] - float(group_cost(sc, kp, s[i], jp)) + float(group_cost(sc, k, s[i], j))
    classes = [(j, k) for j, k in labels]
    bands = [Band(i, float(s[i]), float(s[i + 1]), float(levels[i])) for i in range(X.size)]
    sol = EquilibriumSolution(
        sc, sc.family, (-T, 0.0), bands, classes, X, levels, _total_cost(sc, classes, bands), {"s": s},
        joint=JointDistribution3D(X, labels, s),
    )
    sol.existence = _band_existence(sc, classes, bands, grid)
    if not sol.existence.ok:
        sol.notes.append(f"existence condition violated on the rush window (margin {sol.existence.margin:.6g})")
    return _finish(sol, grid)


SOLVERS = {
    Family.FIFW: solve_fifw,
    Family.VOT_EARLY: solve_vot_early,
    Family.VOT_LATE: solve_vot_late,
    Family.VOT_BOTH: solve_vot_both,
    Family.THREE_D: solve_3d,
}


def solve_analytic(sc: Scenario, grid: TimeGrid | None = None) -> EquilibriumSolution:
    try:
        solver = SOLVERS[sc.family]
    except KeyError:
        raise PreconditionError(f"no analytic solver for family {sc.family.value}") from None
    return solver(sc, grid)


# ---------------------------------------------------------------------------
# tolls and system optimum


def build_modified_costs(sc: Scenario, grid: TimeGrid, mode: str | Family | None = None) -> np.ndarray:
    """Per-cell costs c_k + p(s)/alpha_k (TOLL) or alpha_k c_k (DSO), shape (K, n)."""
    mode = Family(mode) if mode is not None else sc.family
    t = grid.midpoints
    base = cost_profiles(sc, t)
    alpha = sc.attr("alpha")
    if mode == Family.DSO:
        return alpha[:, None] * base
    if mode != Family.TOLL:
        raise ValueError("mode must be TOLL or DSO")
    if sc.toll is None:
        raise PreconditionError("TOLL mode needs a toll profile")
    p = sc.toll(t)
    return base + p[None, :] / alpha[:, None]


def toll_scenario(sc: Scenario, knots_t, knots_p) -> Scenario:
    """TOLL copy of a scenario with a piecewise-linear toll through the knots."""
    from dataclasses import replace

    from .catalog import PiecewiseLinear

    return replace(sc, family=Family.TOLL, toll=PiecewiseLinear(tuple(map(float, knots_t)), tuple(map(float, knots_p))))


# ---------------------------------------------------------------------------
# discrete oracle and comparison


@dataclass
class DiscreteEquilibrium:
    """Cell-level equilibrium read off an LP oracle solve."""

    scenario: Scenario
    grid: TimeGrid
    instance: transport.TransportInstance
    flow: transport.FlowAssignment
    duals: transport.DualSolution
    Z: float


def solve_oracle(sc: Scenario, grid: TimeGrid, method: str = "auto") -> DiscreteEquilibrium:
    """Discretized LP solve (transportation simplex, or generic simplex for 3D)."""
    costs = None
    if sc.family in (Family.TOLL, Family.DSO):
        costs = build_modified_costs(sc, grid)
    inst = transport.build_instance(sc, grid, costs)
    if method == "generic" or inst.is_3d:
        fa, du = transport.solve_lp_generic(inst)
    else:
        fa, du = transport.solve_transportation(inst)
    if sc.family == Family.TOLL:
        _warn_toll_existence(sc, grid, fa.flow)
    return DiscreteEquilibrium(sc, grid, inst, fa, du, float(fa.objective))


def _warn_toll_existence(sc: Scenario, grid: TimeGrid, flow: np.ndarray) -> None:
    """Generalized existence test (toll slope added) on the intervals each group uses."""
    p = sc.toll(grid.midpoints)
    extra = (np.diff(p) / grid.width)[None, :] / sc.attr("alpha")[:, None]
    busy = flow > 1e-9 * sc.capacity * grid.width
    chk = check_existence_condition(sc, grid, extra_slope=extra, where=busy[:, :-1] & busy[:, 1:])
    if not chk.ok:
        warnings.warn(
            f"generalized existence condition fails (margin {chk.margin:.3g}); queue interpretation of the duals breaks",
            RuntimeWarning,
        )


@dataclass
class OracleComparison:
    Z_analytic: float
    Z_oracle: float
    rel_gap: float
    lipschitz: float
    bound: float
    band_error_cells: float
    contiguous: bool

    @property
    def within_bound(self) -> bool:
        return self.rel_gap <= self.bound

    @property
    def bands_match(self) -> bool:
        return self.contiguous and self.band_error_cells <= 1.0


def _support_cells(mask: np.ndarray):
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return None, True
    contiguous = bool(idx[-1] - idx[0] + 1 == idx.size)
    return (int(idx[0]), int(idx[-1])), contiguous


def _cell_of(grid: TimeGrid, s: float, right: bool) -> int:
    """Index of the cell holding ``s``; an edge point belongs to the cell on its right (left if ``right``)."""
    x = (s - grid.start) / grid.width
    near = round(x)
    if abs(x - near) <= 1e-9:
        x = near
    cell = math.ceil(x) - 1 if right else math.floor(x)
    return int(min(max(cell, 0), grid.cells - 1))


def compare_with_oracle(sol: EquilibriumSolution, oracle: DiscreteEquilibrium, factor: float = 10.0) -> OracleComparison:
    """Objective gap against ``factor * ds * L`` and band-versus-support match.

    L = Lip * Q / Z is the relative form of the absolute bound
    |Z_analytic - Z_oracle| <= Lip * ds * Q, with Lip the largest cost
    slope over the rush window padded by two cells (allowed sides only):
    both the analytic and the discrete flow live there. Band error is the
    largest difference, in cell indices, between the first/last cell of a
    class's discrete support and the cells holding its analytic band ends.
    """
    sc, grid = sol.scenario, oracle.grid
    Za, Zo = sol.Z, oracle.Z
    lo, hi = sol.window
    pad = 2.0 * grid.width
    Lip = scenario_lipschitz(sc, max(grid.start, lo - pad), min(grid.end, hi + pad))
    L = Lip * sc.total_demand / max(abs(Zo), 1e-300)
    rel = abs(Za - Zo) / max(abs(Zo), 1e-300)
    ds = grid.width
    x = oracle.flow.flow
    thresh = 1e-9 * sc.capacity * ds
    worst = 0.0
    contiguous = True
    for ci, (j, k) in enumerate(sol.classes):
        cell_flow = x[j, k] if j is not None else x[k]
        for b in sol.bands:
            if b.cls != ci or b.length <= 0:
                continue
            mask = cell_flow > thresh
            if b.side == "early":
                mask &= grid.midpoints < sc.groups[0].sigma
            elif b.side == "late":
                mask &= grid.midpoints > sc.groups[0].sigma
            iv, cont = _support_cells(mask)
            contiguous &= cont
            if iv is None:
                # analytically nonempty band of less than a cell may vanish on the grid
                worst = max(worst, b.length / ds)
                continue
            first, last = _cell_of(grid, b.start, right=False), _cell_of(grid, b.end, right=True)
            worst = max(worst, abs(iv[0] - first), abs(iv[1] - last))
    return OracleComparison(Za, Zo, rel, L, factor * ds * L, worst, contiguous)
