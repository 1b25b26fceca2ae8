"""Finite transportation oracles: greedy corner rules, MODI simplex and audits.

Layout convention: cost and flow arrays keep time as the *last* axis, i.e.
``(K, n)`` for group x time and ``(J, K, n)`` for location x group x time.
The bare greedy rules (``northwest_corner`` etc.) work on plain
supply x demand matrices.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .core import DTCEError, Scenario, TimeGrid, cost_profiles

PENALTY_FACTOR = 1e6
MARGINAL_RTOL = 1e-9


class TransportError(DTCEError):
    pass


@dataclass(frozen=True)
class TransportInstance:
    """Discretized departure-time problem.

    ``supplies`` are per-cell capacities (mu * ds); ``demands`` are group
    masses; ``locations`` holds R_j for the 3D variant. With ``slack`` the
    capacity constraint is an inequality (zero-cost dummy demand).
    """

    costs: np.ndarray
    supplies: np.ndarray
    demands: np.ndarray
    locations: np.ndarray | None = None
    slack: bool = True
    penalized: np.ndarray | None = None
    grid: TimeGrid | None = None

    def __post_init__(self):
        c = np.asarray(self.costs, dtype=float)
        S = np.asarray(self.supplies, dtype=float)
        Q = np.asarray(self.demands, dtype=float)
        object.__setattr__(self, "costs", c)
        object.__setattr__(self, "supplies", S)
        object.__setattr__(self, "demands", Q)
        if self.locations is not None:
            object.__setattr__(self, "locations", np.asarray(self.locations, dtype=float))
        if self.penalized is None:
            object.__setattr__(self, "penalized", np.zeros(c.shape, dtype=bool))
        if c.ndim not in (2, 3):
            raise TransportError(f"cost array must have 2 or 3 axes, got {c.ndim}")
        if c.shape[-1] != S.size or c.shape[-2] != Q.size:
            raise TransportError(f"cost shape {c.shape} does not match supplies {S.size} / demands {Q.size}")
        if c.ndim == 3 and (self.locations is None or self.locations.size != c.shape[0]):
            raise TransportError("3D instances need one R_j per location axis entry")
        if not np.all(np.isfinite(c)):
            raise TransportError("cost array must be finite (penalize forbidden cells first)")
        if np.any(S < 0) or np.any(Q < 0) or (self.locations is not None and np.any(self.locations < 0)):
            raise TransportError("marginals must be nonnegative")
        total = Q.sum()
        tol = MARGINAL_RTOL * max(1.0, total)
        if self.slack:
            if S.sum() < total - tol:
                raise TransportError(f"total capacity {S.sum()!r} is below total demand {total!r}")
        elif abs(S.sum() - total) > tol:
            raise TransportError(f"supplies sum {S.sum()!r} differs from demands sum {total!r}")
        if self.locations is not None and abs(self.locations.sum() - total) > tol:
            raise TransportError(f"locations sum {self.locations.sum()!r} differs from demands sum {total!r}")

    @property
    def is_3d(self) -> bool:
        return self.costs.ndim == 3

    @property
    def total_demand(self) -> float:
        return float(self.demands.sum())


@dataclass
class FlowAssignment:
    flow: np.ndarray
    objective: float | None = None
    basis: list[tuple[int, int]] | None = None
    iterations: int = 0

    def marginal_error(self, instance: TransportInstance) -> float:
        """Largest marginal violation (capacity counted only when exceeded)."""
        x = self.flow
        time_use = x.reshape(-1, x.shape[-1]).sum(axis=0)
        err_t = time_use - instance.supplies
        err_t = np.maximum(err_t, 0.0) if instance.slack else np.abs(err_t)
        group_axes = tuple(a for a in range(x.ndim) if a != x.ndim - 2)
        err_q = np.abs(x.sum(axis=group_axes) - instance.demands)
        errs = [float(err_t.max(initial=0.0)), float(err_q.max(initial=0.0))]
        if instance.is_3d:
            errs.append(float(np.abs(x.sum(axis=(1, 2)) - instance.locations).max(initial=0.0)))
        return max(errs)


@dataclass
class DualSolution:
    """u: per-cell queue delay; v: per-group trip cost; r, w: 3D rent/wage."""

    u: np.ndarray
    v: np.ndarray | None = None
    r: np.ndarray | None = None
    w: np.ndarray | None = None
    slack_price: float = 0.0


@dataclass
class AuditReport:
    primal: float
    dual: float
    gap: float
    rel_gap: float
    kt1_max: float
    kt2_max: float
    min_reduced_cost: float
    integrand_sum: float
    marginal_error: float
    details: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# greedy rules


def _check_balance(totals: list[float]) -> None:
    ref = max(1.0, max(totals))
    if max(totals) - min(totals) > MARGINAL_RTOL * ref:
        raise TransportError(f"marginals are not balanced: sums {totals}")


def _staircase(S: np.ndarray, D: np.ndarray) -> list[tuple[int, int, float]]:
    """Northwest-corner trace returning exactly len(S)+len(D)-1 basic cells.

    A simultaneous row/column exhaustion advances the row and records the
    next cell as a degenerate zero, so the cells always span a tree.
    """
    r, d = S.astype(float).copy(), D.astype(float).copy()
    I, K = r.size, d.size
    cells = []
    i = k = 0
    while True:
        x = min(r[i], d[k])
        if i == I - 1 and k == K - 1:
            cells.append((i, k, max(x, 0.0)))
            break
        cells.append((i, k, x))
        r[i] -= x
        d[k] -= x
        if (r[i] <= d[k] and i < I - 1) or k == K - 1:
            i += 1
        else:
            k += 1
    return cells


def _corner(supplies, demands, reverse: bool) -> FlowAssignment:
    S = np.asarray(supplies, dtype=float)
    D = np.asarray(demands, dtype=float)
    if S.size == 0 or D.size == 0:
        raise TransportError("empty marginal")
    if np.any(S < 0) or np.any(D < 0):
        raise TransportError("marginals must be nonnegative")
    _check_balance([S.sum(), D.sum()])
    Dw = D[::-1] if reverse else D
    x = np.zeros((S.size, D.size))
    basis = []
    for i, k, val in _staircase(S, Dw):
        kk = D.size - 1 - k if reverse else k
        x[i, kk] = val
        basis.append((i, kk))
    return FlowAssignment(x, None, basis)


def northwest_corner(supplies, demands, costs=None) -> FlowAssignment:
    """Greedy assignment from cell (1, 1); never looks at costs."""
    fa = _corner(supplies, demands, reverse=False)
    if costs is not None:
        fa.objective = float(np.sum(np.asarray(costs) * fa.flow))
    return fa


def northeast_corner(supplies, demands, costs=None) -> FlowAssignment:
    """Greedy assignment from cell (1, K); optimal for inverse-Monge costs."""
    fa = _corner(supplies, demands, reverse=True)
    if costs is not None:
        fa.objective = float(np.sum(np.asarray(costs) * fa.flow))
    return fa


def greedy_nd(marginals, costs=None) -> FlowAssignment:
    """N-index northwest corner: assign the minimum residual, advance exhausted axes."""
    res = [np.asarray(m, dtype=float).copy() for m in marginals]
    if any(m.size == 0 for m in res):
        raise TransportError("empty marginal")
    if any(np.any(m < 0) for m in res):
        raise TransportError("marginals must be nonnegative")
    totals = [float(m.sum()) for m in res]
    _check_balance(totals)
    eps = 1e-12 * max(1.0, max(totals))
    x = np.zeros([m.size for m in res])
    idx = [0] * len(res)
    while True:
        val = min(m[i] for m, i in zip(res, idx))
        x[tuple(idx)] += val
        exhausted = []
        for a, (m, i) in enumerate(zip(res, idx)):
            m[i] -= val
            if m[i] <= eps:
                m[i] = 0.0
                exhausted.append(a)
        moved = False
        for a in exhausted:
            if idx[a] < res[a].size - 1:
                idx[a] += 1
                moved = True
        if not moved:
            break
    fa = FlowAssignment(x)
    if costs is not None:
        fa.objective = float(np.sum(np.asarray(costs) * x))
    return fa


# ---------------------------------------------------------------------------
# transportation simplex (rows = time cells, columns = groups [+ dummy])


class _Tree:
    """Spanning-tree basis of a transportation tableau with I rows, N columns."""

    def __init__(self, I: int, N: int, cells):
        self.I, self.N = I, N
        self.adj = [set() for _ in range(I + N)]
        for i, n in cells:
            self.add(i, n)

    def add(self, i, n):
        self.adj[i].add(self.I + n)
        self.adj[self.I + n].add(i)

    def remove(self, i, n):
        self.adj[i].discard(self.I + n)
        self.adj[self.I + n].discard(i)

    def potentials(self, C: np.ndarray):
        I = self.I
        a = np.zeros(I)
        b = np.zeros(self.N)
        parent = np.full(I + self.N, -1)
        depth = np.full(I + self.N, -1)
        depth[0] = 0
        queue = deque([0])
        while queue:
            node = queue.popleft()
            for nb in self.adj[node]:
                if depth[nb] >= 0:
                    continue
                depth[nb] = depth[node] + 1
                parent[nb] = node
                if node < I:
                    b[nb - I] = C[node, nb - I] - a[node]
                else:
                    a[nb] = C[nb, node - I] - b[node - I]
                queue.append(nb)
        if np.any(depth < 0):
            raise TransportError("basis does not span the tableau")
        return a, b, parent, depth

    def path(self, u: int, w: int, parent, depth) -> list[int]:
        """Node path from w to u in the tree."""
        up_w, up_u = [w], [u]
        while depth[up_w[-1]] > depth[up_u[-1]]:
            up_w.append(parent[up_w[-1]])
        while depth[up_u[-1]] > depth[up_w[-1]]:
            up_u.append(parent[up_u[-1]])
        while up_w[-1] != up_u[-1]:
            up_w.append(parent[up_w[-1]])
            up_u.append(parent[up_u[-1]])
        return up_w + up_u[-2::-1]


def _warm_start(C, S, D, K, has_dummy):
    """Choose a staircase start row/column order minimizing the greedy cost.

    Rows before the start row feed the dummy column directly, which keeps
    the basis a spanning tree. Only used for uniform supplies.
    """
    I = S.size
    if not has_dummy or I < 2 or not np.allclose(S, S[0], rtol=1e-12, atol=0.0) or S[0] <= 0:
        return None
    need = D[:K].sum()
    rows_used = int(math.ceil(need / S[0] - 1e-12))
    best = None
    for order in (np.arange(K), np.arange(K)[::-1]):
        pattern = np.zeros((rows_used, K))
        fa = _staircase(S[:rows_used] if rows_used else S[:1], D[order])
        for i, k, val in fa:
            if i < rows_used:
                pattern[i, k] = val
        Co = C[:, order]
        for m in range(0, I - rows_used + 1):
            obj = float(np.sum(pattern * Co[m:m + rows_used]))
            if best is None or obj < best[0] - 1e-15 * abs(obj):
                best = (obj, m, order)
    return best


def _initial_basis(C, S, D, K, has_dummy, warm: bool):
    start = _warm_start(C, S, D, K, has_dummy) if warm else None
    if start is None or start[1] == 0 and np.array_equal(start[2], np.arange(K)):
        return [(i, n, x) for i, n, x in _staircase(S, D)]
    _, m, order = start
    cols = list(order) + [K]
    cells = [(i, K, S[i]) for i in range(m)]
    Dsub = D[cols].copy()
    Dsub[-1] -= S[:m].sum()
    if Dsub[-1] < -MARGINAL_RTOL * max(1.0, S.sum()):
        return [(i, n, x) for i, n, x in _staircase(S, D)]
    Dsub[-1] = max(Dsub[-1], 0.0)
    for i, n, x in _staircase(S[m:], Dsub):
        cells.append((i + m, cols[n], x))
    return cells


def _transport_simplex(C, S, D, K, has_dummy, warm=True, max_iter=None):
    I, N = C.shape
    cells = _initial_basis(C, S, D, K, has_dummy, warm)
    X = np.zeros((I, N))
    for i, n, x in cells:
        X[i, n] = x
    tree = _Tree(I, N, [(i, n) for i, n, _ in cells])
    finite_scale = 1.0 + float(np.max(np.abs(C))) if C.size else 1.0
    tol = 1e-10 * finite_scale
    max_iter = max_iter or 50 * (I + N) ** 2 + 1000
    degenerate_run = 0
    it = 0
    while True:
        a, b, parent, depth = tree.potentials(C)
        R = C - a[:, None] - b[None, :]
        if degenerate_run > 50:
            neg = np.flatnonzero(R.ravel() < -tol)
            flat = int(neg[0]) if neg.size else -1
        else:
            flat = int(np.argmin(R))
            if R.flat[flat] >= -tol:
                flat = -1
        if flat < 0:
            break
        it += 1
        if it > max_iter:
            raise TransportError(f"transportation simplex exceeded {max_iter} iterations")
        ie, ne = divmod(flat, N)
        nodes = tree.path(ie, I + ne, parent, depth)
        # cycle: entering (+), then path edges alternating starting with (-)
        cyc = []
        for p, q in zip(nodes[:-1], nodes[1:]):
            cyc.append((q, p - I) if p >= I else (p, q - I))
        minus = cyc[0::2]
        plus = cyc[1::2]
        theta = min(X[c] for c in minus)
        band = theta + 1e-14 * max(1.0, theta)
        leave = min(c for c in minus if X[c] <= band)
        for c in plus:
            X[c] += theta
        for c in minus:
            X[c] = max(X[c] - theta, 0.0)
        X[ie, ne] += theta
        X[leave] = 0.0
        tree.remove(*leave)
        tree.add(ie, ne)
        degenerate_run = degenerate_run + 1 if theta <= 0.0 else 0
    basis = sorted({(i, n - I) for i in range(I) for n in tree.adj[i]})
    return X, a, b, basis, it


def solve_transportation(instance: TransportInstance, warm: bool = True) -> tuple[FlowAssignment, DualSolution]:
    """Exact optimum of a 2D instance by the MODI transportation simplex."""
    if instance.is_3d:
        raise TransportError("solve_transportation handles 2D instances; use solve_lp_generic")
    Ct = instance.costs.T  # rows = time cells
    S = instance.supplies
    Q = instance.demands
    K = Q.size
    extra = S.sum() - Q.sum()
    has_dummy = instance.slack
    if has_dummy:
        C = np.hstack([Ct, np.zeros((S.size, 1))])
        D = np.append(Q, max(extra, 0.0))
    else:
        C = Ct
        D = Q.copy()
        # absorb rounding so the tableau is exactly balanced
        D[-1] += S.sum() - D.sum()
    X, a, b, basis, it = _transport_simplex(C, S, D, K, has_dummy, warm=warm)
    u = -a
    v = b[:K].copy()
    shift = float(u.min()) if u.size else 0.0
    u = u - shift
    v = v - shift
    slack_price = float(b[K] - shift) if has_dummy else 0.0
    flow = X[:, :K].T.copy()
    fa = FlowAssignment(flow, float(np.sum(flow * instance.costs)), basis, it)
    return fa, DualSolution(u=u, v=v, slack_price=slack_price)


# ---------------------------------------------------------------------------
# instance construction and auditing


def penalize(costs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Replace non-finite entries by 1e6 x (largest finite |cost|, at least 1)."""
    c = np.asarray(costs, dtype=float)
    bad = ~np.isfinite(c)
    finite = c[~bad]
    big = PENALTY_FACTOR * max(1.0, float(np.max(np.abs(finite))) if finite.size else 1.0)
    return np.where(bad, big, c), bad


def build_instance(sc: Scenario, grid: TimeGrid, costs: np.ndarray | None = None, slack: bool = True) -> TransportInstance:
    """Discretize a scenario on ``grid`` (costs at cell midpoints)."""
    raw = cost_profiles(sc, grid.midpoints) if costs is None else np.asarray(costs, dtype=float)
    c, bad = penalize(raw)
    S = np.full(grid.cells, sc.capacity * grid.width)
    R = None
    if sc.J:
        R = np.array([loc.R for loc in sc.locations], dtype=float)
    return TransportInstance(c, S, sc.demands, R, slack, bad, grid)


def duality_audit(instance: TransportInstance, flow: FlowAssignment, duals: DualSolution) -> AuditReport:
    """Primal minus dual objective and complementary-slackness residuals."""
    c = instance.costs
    x = flow.flow
    if x.shape != c.shape:
        raise TransportError(f"flow shape {x.shape} does not match costs {c.shape}")
    S, Q = instance.supplies, instance.demands
    u = np.asarray(duals.u, dtype=float)
    primal = float(np.sum(c * x))
    if instance.is_3d:
        r = np.asarray(duals.r, dtype=float)
        w = np.asarray(duals.w, dtype=float)
        rc = c + u[None, None, :] + r[:, None, None] - w[None, :, None]
        dual = float(Q @ w - instance.locations @ r - S @ u)
        time_use = x.sum(axis=(0, 1))
    else:
        v = np.asarray(duals.v, dtype=float)
        rc = c + u[None, :] - v[:, None]
        dual = float(Q @ v - S @ u)
        time_use = x.sum(axis=0)
    kt1 = x * rc
    kt2 = u * (S - time_use)
    integrand = float(kt1.sum() + kt2.sum())
    gap = primal - dual
    scale = max(abs(primal), abs(dual), 1e-300)
    rel = abs(gap) / scale if (primal or dual) else 0.0
    return AuditReport(
        primal=primal,
        dual=dual,
        gap=gap,
        rel_gap=rel,
        kt1_max=float(np.max(np.abs(kt1), initial=0.0)),
        kt2_max=float(np.max(np.abs(kt2), initial=0.0)),
        min_reduced_cost=float(np.min(rc, initial=math.inf)),
        integrand_sum=integrand,
        marginal_error=flow.marginal_error(instance),
        details={"min_u": float(np.min(u, initial=0.0))},
    )


def solve_lp_generic(instance: TransportInstance) -> tuple[FlowAssignment, DualSolution]:
    """Primal and dual optimum through the generic revised simplex.

    Handles 3D instances (time, location and group marginals) as well as any
    2D instance, e.g. toll- or system-optimum-modified costs.
    """
    from .lp import LPError, solve_lp

    c = instance.costs
    S, Q = instance.supplies, instance.demands
    n_t = S.size
    shape = c.shape
    nvar = c.size
    t_of = np.broadcast_to(np.arange(n_t), shape).ravel()
    k_of = np.broadcast_to(np.arange(Q.size)[:, None], shape).ravel()
    cols = np.arange(nvar)
    ones = np.ones(nvar)
    A_time = _sp_matrix(ones, t_of, cols, (n_t, nvar))
    A_grp = _sp_matrix(ones, k_of, cols, (Q.size, nvar))
    eq_blocks = [A_grp]
    b_eq = [Q]
    if instance.is_3d:
        j_of = np.broadcast_to(np.arange(shape[0])[:, None, None], shape).ravel()
        eq_blocks.insert(0, _sp_matrix(ones, j_of, cols, (shape[0], nvar)))
        b_eq.insert(0, instance.locations)
    if instance.slack:
        A_ub, b_ub = A_time, S
    else:
        eq_blocks.insert(0, A_time)
        b_eq.insert(0, S)
        A_ub, b_ub = None, None
    try:
        res = solve_lp(c.ravel(), A_ub, b_ub, sp.vstack(eq_blocks), np.concatenate(b_eq))
    except LPError as exc:
        raise TransportError(str(exc)) from None
    y_eq = res.y_eq
    if instance.slack:
        u = -res.y_ub
    else:
        u = -y_eq[:n_t]
        y_eq = y_eq[n_t:]
    flow = res.x.reshape(shape)
    if instance.is_3d:
        J = shape[0]
        r = -y_eq[:J]
        w = y_eq[J:].copy()
        if not instance.slack or abs(S.sum() - Q.sum()) <= MARGINAL_RTOL * max(1.0, Q.sum()):
            t = float(u.min())
            u, w = u - t, w - t
        t = float(r.min())
        r, w = r - t, w - t
        duals = DualSolution(u=np.maximum(u, 0.0) if instance.slack else u, r=r, w=w)
    else:
        v = y_eq.copy()
        if not instance.slack or abs(S.sum() - Q.sum()) <= MARGINAL_RTOL * max(1.0, Q.sum()):
            t = float(u.min())
            u, v = u - t, v - t
        duals = DualSolution(u=np.maximum(u, 0.0) if instance.slack else u, v=v)
    return FlowAssignment(flow, float(np.sum(flow * c)), None, res.iterations), duals


def _sp_matrix(data, rows, cols, shape):
    return sp.csc_matrix((data, (rows, cols)), shape=shape)
