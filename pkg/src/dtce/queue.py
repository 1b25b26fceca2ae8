"""Point-queue simulation, arrival reconstruction and equilibrium verification."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .analytic import DiscreteEquilibrium, EquilibriumSolution
from .core import DTCEError, TimeGrid, group_cost
from .transport import duality_audit


class ReconstructionError(DTCEError):
    """Arrival times would not be increasing (delta tau <= 0)."""

    def __init__(self, msg: str, time: float | None = None):
        super().__init__(msg)
        self.time = time


@dataclass(frozen=True)
class CumulativeCurve:
    """Nondecreasing piecewise-linear cumulative count through (time, mass) knots."""

    times: np.ndarray
    mass: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        m = np.asarray(self.mass, dtype=float)
        if t.shape != m.shape or t.ndim != 1 or t.size < 1:
            raise ValueError("knot arrays must be 1D with equal length")
        if np.any(np.diff(t) < 0) or np.any(np.diff(m) < -1e-12 * max(1.0, float(np.abs(m).max()))):
            raise ValueError("cumulative curve knots must be nondecreasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "mass", np.maximum.accumulate(m))

    def __call__(self, t) -> np.ndarray:
        return np.interp(t, self.times, self.mass, left=self.mass[0], right=self.mass[-1])

    def inverse(self, n) -> np.ndarray:
        """Earliest time at which the count reaches n."""
        n = np.asarray(n, dtype=float)
        i = np.searchsorted(self.mass, n, side="left")
        i = np.clip(i, 0, self.mass.size - 1)
        prev = np.maximum(i - 1, 0)
        m0, m1 = self.mass[prev], self.mass[i]
        t0, t1 = self.times[prev], self.times[i]
        with np.errstate(invalid="ignore", divide="ignore"):
            frac = np.where(m1 > m0, (n - m0) / (m1 - m0), 1.0)
        out = np.where(i == 0, self.times[0], t0 + np.clip(frac, 0.0, 1.0) * (t1 - t0))
        return out

    @property
    def total(self) -> float:
        return float(self.mass[-1] - self.mass[0])


@dataclass(frozen=True)
class QueueProfile:
    times: np.ndarray
    E: np.ndarray
    d: np.ndarray
    exit_rate: np.ndarray  # per grid cell, average

    def delay_at(self, t) -> np.ndarray:
        return np.interp(t, self.times, self.d)


def simulate_point_queue(arrival_rate, capacity: float, grid: TimeGrid) -> tuple[QueueProfile, CumulativeCurve]:
    """Integrate dE/dt = lambda - kappa with piecewise-constant lambda per cell.

    Within a cell the queue evolves linearly; a queue that empties mid-cell
    gets an extra knot at the exact vanishing time.
    """
    lam = np.asarray(arrival_rate, dtype=float)
    if lam.shape != (grid.cells,):
        raise ValueError(f"arrival_rate must have one value per cell ({grid.cells})")
    if np.any(lam < 0):
        raise ValueError("arrival rates must be nonnegative")
    mu = float(capacity)
    edges = grid.edges
    h = grid.width
    times, E, D = [edges[0]], [0.0], [0.0]
    e = 0.0
    dep = 0.0
    for i in range(grid.cells):
        l = lam[i]
        t0, t1 = edges[i], edges[i + 1]
        if e > 0 or l > mu:
            net = l - mu
            e_end = e + net * h
            if e_end < 0:
                tv = t0 + e / (mu - l)
                dep += (tv - t0) * mu
                times.append(tv)
                E.append(0.0)
                D.append(dep)
                dep += (t1 - tv) * l
                e_end = 0.0
            else:
                dep += mu * h
            e = e_end
        else:
            dep += l * h
            e = 0.0
        times.append(t1)
        E.append(e)
        D.append(dep)
    times, E, D = np.array(times), np.array(E), np.array(D)
    exit_rate = np.diff(np.interp(edges, times, D)) / h
    profile = QueueProfile(times, E, E / mu, exit_rate)
    return profile, CumulativeCurve(times, D)


# ---------------------------------------------------------------------------
# arrival reconstruction


@dataclass
class ArrivalReconstruction:
    arrivals: CumulativeCurve
    departures: CumulativeCurve
    group_arrivals: list[CumulativeCurve]
    departure_times: np.ndarray  # sample departure times s_j
    arrival_times: np.ndarray  # tau(s_j) = s_j - u(s_j)
    delta_tau: np.ndarray  # per sample interval
    group_rates: np.ndarray  # (classes, intervals): x / delta tau
    min_delta_tau: float

    def arrival_rate_on(self, grid: TimeGrid) -> np.ndarray:
        """Cell-averaged total arrival rate on an arrival-time grid."""
        return np.diff(self.arrivals(grid.edges)) / grid.width


def _samples(sol: EquilibriumSolution, grid: TimeGrid) -> np.ndarray:
    """Grid edges plus band ends; an edge within 1e-9 cells of a band end is dropped.

    Near-coincident samples would straddle a kink of u whose two sides agree
    only to root-finding accuracy, producing a spurious drop in tau.
    """
    lo, hi = sol.window
    ends = np.unique(np.concatenate([[lo, hi]] + [[b.start, b.end] for b in sol.bands if b.length > 0]))
    edges = grid.edges
    if ends.size:
        pos = np.clip(np.searchsorted(ends, edges), 1, ends.size - 1) if ends.size > 1 else np.zeros(edges.size, int)
        near = np.minimum(np.abs(edges - ends[pos]), np.abs(edges - ends[np.maximum(pos - 1, 0)]))
        edges = edges[near > 1e-9 * grid.width]
    s = np.unique(np.concatenate([edges, ends]))
    return s[(s >= lo) & (s <= hi)]


def reconstruct_arrivals(sol: EquilibriumSolution, grid: TimeGrid, margin: float = 1e-9) -> ArrivalReconstruction:
    """Arrival curve from the departure-side solution via tau(s) = s - u(s).

    Differences are taken between consecutive samples (grid edges plus all
    breakpoints), so no stencil straddles a kink of u.
    """
    s = _samples(sol, grid)
    if s.size < 2:
        raise ReconstructionError("rush window is empty")
    u = sol.u_at(s)
    tau = s - u
    ds = np.diff(s)
    dtau = np.diff(tau) / ds
    bad = np.flatnonzero(dtau <= margin)
    if bad.size:
        i = int(bad[0])
        raise ReconstructionError(
            f"delta tau = {dtau[i]:.6g} <= 0 on departure interval [{s[i]:.6g}, {s[i + 1]:.6g}]", float(s[i])
        )
    lo = sol.window[0]
    D = sol.capacity * (s - lo)
    dep = CumulativeCurve(s, D)
    arr = CumulativeCurve(tau, D)
    groups = [CumulativeCurve(tau, sol.departed_mass(ci, s)) for ci in range(len(sol.classes))]
    mids = 0.5 * (s[:-1] + s[1:])
    rates = sol.departure_rates(mids) / dtau[None, :]
    return ArrivalReconstruction(arr, dep, groups, s, tau, dtau, rates, float(dtau.min()))


def arrival_grid(rec: ArrivalReconstruction, width: float) -> TimeGrid:
    """Arrival-time grid spanning exactly the arrival window, cells of about ``width``."""
    lo, hi = float(rec.arrival_times[0]), float(rec.arrival_times[-1])
    cells = max(1, int(math.ceil((hi - lo) / width - 1e-9)))
    return TimeGrid(lo, hi, cells)


def round_trip_error(sol: EquilibriumSolution, grid: TimeGrid, rec: ArrivalReconstruction | None = None) -> float:
    """Max |d(t) - u(s(t))| after simulating the reconstructed arrivals.

    The simulation grid starts at the first arrival so no cell averages
    arrivals with the empty period before the rush; its width matches
    ``grid``. Delays are compared at its edges, where the simulated queue is
    exact for cell-averaged rates; s(t) = D^-1(A(t)) is the FIFO departure
    time of the user arriving at t.
    """
    rec = rec or reconstruct_arrivals(sol, grid)
    agrid = arrival_grid(rec, grid.width)
    lam = rec.arrival_rate_on(agrid)
    profile, _ = simulate_point_queue(lam, sol.capacity, agrid)
    t = agrid.edges
    s = rec.departures.inverse(rec.arrivals(t))
    return float(np.max(np.abs(profile.delay_at(t) - sol.u_at(s))))


# ---------------------------------------------------------------------------
# verification


@dataclass(frozen=True)
class Tolerances:
    algebraic: float = 1e-8
    conservation: float = 1e-9
    delta_tau: float = 1e-9
    round_trip_cells: float = 2.0


@dataclass
class VerificationReport:
    choice_equality: float
    choice_inequality: float
    capacity_excess: float
    capacity_complementarity: float
    conservation: float
    u_min: float
    delta_tau_margin: float
    round_trip_error: float | None
    duality_gap: float
    tolerances: Tolerances
    cell_width: float
    checks: dict = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def __post_init__(self):
        t = self.tolerances
        self.checks = {
            "choice_equality": self.choice_equality <= t.algebraic,
            "choice_inequality": self.choice_inequality >= -t.algebraic,
            "capacity_excess": self.capacity_excess <= t.conservation,
            "capacity_complementarity": self.capacity_complementarity <= t.algebraic,
            "conservation": self.conservation <= t.conservation,
            "u_nonnegative": self.u_min >= -t.algebraic,
            "delta_tau": self.delta_tau_margin > t.delta_tau,
            "round_trip": True if self.round_trip_error is None and "round_trip_not_applicable" in self.notes
            else (self.round_trip_error is not None and self.round_trip_error <= t.round_trip_cells * self.cell_width),
            "duality_gap": abs(self.duality_gap) <= t.algebraic,
        }

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    @property
    def failures(self) -> list[str]:
        return [k for k, ok in self.checks.items() if not ok]

    def to_dict(self) -> dict:
        def num(x):
            return None if x is None else float(x)

        return {
            "verdict": "pass" if self.passed else "fail",
            "residuals": {
                "choice_equality": num(self.choice_equality),
                "choice_inequality": num(self.choice_inequality),
                "capacity_excess": num(self.capacity_excess),
                "capacity_complementarity": num(self.capacity_complementarity),
                "conservation": num(self.conservation),
                "u_min": num(self.u_min),
                "delta_tau_margin": num(self.delta_tau_margin),
                "round_trip_error": num(self.round_trip_error),
                "duality_gap": num(self.duality_gap),
            },
            "checks": {k: bool(v) for k, v in self.checks.items()},
            "tolerances": {
                "algebraic": self.tolerances.algebraic,
                "conservation": self.tolerances.conservation,
                "delta_tau": self.tolerances.delta_tau,
                "round_trip": self.tolerances.round_trip_cells * self.cell_width,
            },
            "notes": list(self.notes),
        }


def verify_equilibrium(sol, grid: TimeGrid, tol: Tolerances | None = None) -> VerificationReport:
    """Residuals of every equilibrium condition for an analytic or oracle solution."""
    tol = tol or Tolerances()
    if isinstance(sol, DiscreteEquilibrium):
        return _verify_discrete(sol, tol)
    return _verify_analytic(sol, grid, tol)


def _worst_abs(values: np.ndarray) -> float:
    """Largest |value|; any non-finite entry counts as an infinite residual."""
    values = np.asarray(values, dtype=float)
    if values.size and not np.all(np.isfinite(values)):
        return math.inf
    return float(np.max(np.abs(values), initial=0.0))


def _verify_analytic(sol: EquilibriumSolution, grid: TimeGrid, tol: Tolerances) -> VerificationReport:
    sc = sol.scenario
    mu = sc.capacity
    notes: list[str] = []
    t_all = np.unique(np.concatenate([grid.midpoints, [e for b in sol.bands for e in (b.start, b.end)]]))
    u_all = sol.u_at(t_all)
    eq = 0.0
    ineq = math.inf
    for ci, (j, k) in enumerate(sol.classes):
        vk = float(sol.v[ci])
        c = group_cost(sc, k, t_all, j)
        scale = 1.0 + abs(vk)
        ok = np.isfinite(c)
        if ok.any():
            ineq = min(ineq, float(np.min((u_all[ok] + c[ok] - vk) / scale)))
        for b in sol.bands:
            if b.cls != ci or b.length <= 0:
                continue
            on = (t_all >= b.start) & (t_all <= b.end)
            if on.any():
                with np.errstate(invalid="ignore"):
                    eq = max(eq, _worst_abs(u_all[on] + c[on] - vk) / scale)
    if sc.J:
        notes.append("choice inequality checked for the merged (location, group) classes only")
    mids = grid.midpoints
    rate = sol.departure_rates(mids).sum(axis=0)
    cap_excess = float(np.max(rate - mu, initial=0.0)) / mu
    u_mid = sol.u_at(mids)
    with np.errstate(invalid="ignore"):
        compl = _worst_abs(u_mid * (mu - rate)) / mu
    # conservation per group of the scenario
    group_mass = np.zeros(sc.K)
    for b in sol.bands:
        if b.length > 0:
            group_mass[sol.classes[b.cls][1]] += mu * b.length
    cons = float(np.max(np.abs(group_mass - sc.demands))) / sc.total_demand
    u_min = float(np.min(u_all, initial=0.0))
    vscale = 1.0 + float(np.max(np.abs(sol.v), initial=0.0))
    rt = None
    try:
        rec = reconstruct_arrivals(sol, grid, margin=-math.inf)
        dtau = rec.min_delta_tau
        if dtau > tol.delta_tau:
            rt = round_trip_error(sol, grid, rec)
        else:
            notes.append("round trip skipped: delta tau not positive")
    except Exception as exc:  # reconstruction refusal is a finding, not a crash
        dtau = -math.inf
        notes.append(f"reconstruction failed: {exc}")
    return VerificationReport(
        choice_equality=eq,
        choice_inequality=ineq if math.isfinite(ineq) else 0.0,
        capacity_excess=cap_excess,
        capacity_complementarity=compl,
        conservation=cons,
        u_min=u_min / vscale,
        delta_tau_margin=dtau,
        round_trip_error=rt,
        duality_gap=sol.strong_duality_residual(),
        tolerances=tol,
        cell_width=grid.width,
        notes=notes + list(sol.notes),
    )


def _verify_discrete(de: DiscreteEquilibrium, tol: Tolerances) -> VerificationReport:
    inst, x, du = de.instance, de.flow.flow, de.duals
    audit = duality_audit(inst, de.flow, du)
    c = np.where(inst.penalized, np.nan, inst.costs)
    S = inst.supplies
    thresh = 1e-9 * float(S.max(initial=1.0))
    if inst.is_3d:
        rc = c + du.u[None, None, :] + du.r[:, None, None] - du.w[None, :, None]
        scale = 1.0 + float(np.max(np.abs(du.w)))
        use = x.sum(axis=(0, 1))
    else:
        rc = c + du.u[None, :] - du.v[:, None]
        scale = 1.0 + float(np.max(np.abs(du.v), initial=0.0))
        use = x.sum(axis=0)
    used = x > thresh
    eq = float(np.nanmax(np.abs(np.where(used, rc, 0.0)), initial=0.0)) / scale
    if np.any(used & inst.penalized):
        eq = math.inf
    ineq = float(np.nanmin(rc, initial=math.inf)) / scale
    mu = S.max(initial=1.0)
    cap_excess = float(np.max(use - S, initial=0.0)) / mu
    compl = float(np.max(np.abs(du.u * (S - use)), initial=0.0)) / mu
    cons = audit.marginal_error / max(inst.total_demand, 1e-300)
    u_min = float(du.u.min(initial=0.0)) / scale
    # delta tau between consecutive busy cells
    busy = np.flatnonzero(use > thresh)
    h = de.grid.width
    dtau = math.inf
    if busy.size > 1:
        pairs = busy[:-1][np.diff(busy) == 1]
        if pairs.size:
            dtau = float(np.min(1.0 - (du.u[pairs + 1] - du.u[pairs]) / h))
    rel_gap = audit.gap / max(1.0, abs(audit.primal))
    return VerificationReport(
        choice_equality=eq,
        choice_inequality=ineq,
        capacity_excess=cap_excess,
        capacity_complementarity=compl,
        conservation=cons,
        u_min=u_min,
        delta_tau_margin=dtau,
        round_trip_error=None,
        duality_gap=rel_gap,
        tolerances=tol,
        cell_width=h,
        notes=["round_trip_not_applicable"],
    )
