import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from generators import random_3d, strict_monge_matrix
from dtce.catalog import Power
from dtce.core import ConvexCommon, Family, GroupSpec, Scenario, TimeGrid
from dtce.transport import (
    PENALTY_FACTOR,
    DualSolution,
    FlowAssignment,
    TransportError,
    TransportInstance,
    build_instance,
    duality_audit,
    greedy_nd,
    northeast_corner,
    northwest_corner,
    penalize,
    solve_lp_generic,
    solve_transportation,
)


def linprog_objective(inst: TransportInstance) -> float:
    """Independent optimum from scipy's HiGHS solver."""
    c = inst.costs
    shape = c.shape
    n_t = inst.supplies.size
    nvar = c.size
    t_of = np.broadcast_to(np.arange(n_t), shape).ravel()
    k_of = np.broadcast_to(np.arange(inst.demands.size)[:, None], shape).ravel()
    A_t = np.zeros((n_t, nvar))
    A_t[t_of, np.arange(nvar)] = 1
    A_k = np.zeros((inst.demands.size, nvar))
    A_k[k_of, np.arange(nvar)] = 1
    eqs, b = [A_k], [inst.demands]
    if inst.is_3d:
        j_of = np.broadcast_to(np.arange(shape[0])[:, None, None], shape).ravel()
        A_j = np.zeros((shape[0], nvar))
        A_j[j_of, np.arange(nvar)] = 1
        eqs.append(A_j)
        b.append(inst.locations)
    kw = {"A_ub": A_t, "b_ub": inst.supplies} if inst.slack else {}
    if not inst.slack:
        eqs.append(A_t)
        b.append(inst.supplies)
    res = linprog(c.ravel(), A_eq=np.vstack(eqs), b_eq=np.concatenate(b), bounds=(0, None), method="highs", **kw)
    assert res.status == 0
    return float(res.fun)


# --- greedy rules -----------------------------------------------------------


def test_northwest_corner_examples():
    assert np.array_equal(northwest_corner([2, 3], [4, 1]).flow, [[2, 0], [2, 1]])
    assert np.array_equal(northwest_corner([5], [5]).flow, [[5]])
    assert np.array_equal(northwest_corner([1, 1, 1], [3]).flow, [[1], [1], [1]])


def test_northeast_corner_examples():
    assert np.array_equal(northeast_corner([2, 3], [4, 1]).flow, [[1, 1], [3, 0]])
    assert np.array_equal(northeast_corner([5], [5]).flow, [[5]])
    assert np.array_equal(northeast_corner([1, 1], [1, 1]).flow, [[0, 1], [1, 0]])


def test_corner_rejects_unbalanced():
    with pytest.raises(TransportError):
        northwest_corner([1, 1], [3])


def test_greedy_nd_examples():
    x = greedy_nd([[1, 1], [1, 1], [2]]).flow
    assert x.shape == (2, 2, 1) and x[0, 0, 0] == 1 and x[1, 1, 0] == 1 and x.sum() == 2
    y = greedy_nd([[2], [2], [1, 1]]).flow
    assert np.array_equal(y, [[[1, 1]]])


def test_greedy_nd_matches_nw_in_two_axes():
    rng = np.random.default_rng(4)
    S = rng.uniform(0.1, 1, 7)
    D = rng.uniform(0.1, 1, 5)
    D *= S.sum() / D.sum()
    assert np.allclose(greedy_nd([S, D]).flow, northwest_corner(S, D).flow, atol=1e-14)


# --- simplex ------------------------------------------------------------------


def test_two_by_two_diagonal():
    inst = TransportInstance(np.array([[1.0, 2.0], [2.0, 1.0]]), [1.0, 1.0], [1.0, 1.0], slack=False)
    fa, du = solve_transportation(inst)
    assert np.allclose(fa.flow, np.eye(2)) and fa.objective == pytest.approx(2.0)
    assert duality_audit(inst, fa, du).rel_gap <= 1e-12


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), K=st.integers(1, 6), n=st.integers(2, 40), slack=st.booleans())
def test_simplex_matches_linprog(seed, K, n, slack):
    rng = np.random.default_rng(seed)
    C = rng.uniform(-2, 5, size=(K, n))
    Q = rng.uniform(0.1, 1.0, size=K)
    S = rng.uniform(0.1, 1.0, size=n)
    S *= Q.sum() / S.sum() * (2.0 if slack else 1.0)
    inst = TransportInstance(C, S, Q, slack=slack)
    fa, du = solve_transportation(inst)
    assert fa.objective == pytest.approx(linprog_objective(inst), rel=1e-9, abs=1e-9)
    assert fa.marginal_error(inst) <= 1e-12
    assert duality_audit(inst, fa, du).rel_gap <= 1e-9


def test_strict_monge_simplex_flow_equals_nw():
    rng = np.random.default_rng(5)
    C = strict_monge_matrix(rng, 12, 6)
    S = rng.uniform(0.5, 1, 12)
    D = rng.uniform(0.5, 1, 6)
    D *= S.sum() / D.sum()
    fa, _ = solve_transportation(TransportInstance(C.T, S, D, slack=False), warm=False)
    assert np.allclose(fa.flow.T, northwest_corner(S, D).flow, atol=1e-12)


def test_warm_start_saves_pivots_on_fifw():
    sc = Scenario(1.0, (GroupSpec(1.0, sigma=0.0), GroupSpec(1.0, sigma=1.0)), ConvexCommon(Power(1.0, 2.0)), Family.FIFW)
    inst = build_instance(sc, TimeGrid(-1.5, 2.5, 200))
    warm, dw = solve_transportation(inst, warm=True)
    cold, dc = solve_transportation(inst, warm=False)
    assert warm.objective == pytest.approx(cold.objective, rel=1e-12)
    assert warm.iterations < cold.iterations
    assert np.allclose(dw.u, dc.u, atol=1e-9)


def test_duals_are_normalized():
    sc = Scenario(1.0, (GroupSpec(1.0, sigma=0.0), GroupSpec(1.0, sigma=1.0)), ConvexCommon(Power(1.0, 2.0)), Family.FIFW)
    inst = build_instance(sc, TimeGrid(-1.5, 2.5, 100))
    fa, du = solve_transportation(inst)
    assert du.u.min() == 0.0
    audit = duality_audit(inst, fa, du)
    assert audit.min_reduced_cost >= -1e-9 and audit.kt1_max <= 1e-9 and audit.kt2_max <= 1e-9


# --- audit ----------------------------------------------------------------------


def test_audit_of_suboptimal_flow_equals_integrand():
    C = np.array([[1.0, 2.0, 4.0], [3.0, 1.0, 2.0]])
    inst = TransportInstance(C, [1.0, 1.0, 1.0], [1.5, 1.5], slack=False)
    fa, du = solve_transportation(inst)
    # push 0.25 around the cycle (0,0) -> (0,1) -> (1,1) -> (1,0)
    x = fa.flow.copy()
    e = 0.25
    cyc = [((0, 0), -e), ((0, 1), +e), ((1, 1), -e), ((1, 0), +e)]
    if any(x[i] + d < -1e-12 for i, d in cyc):
        cyc = [(i, -d) for i, d in cyc]
    for i, d in cyc:
        x[i] += d
    bad = FlowAssignment(x, float(np.sum(C * x)))
    audit = duality_audit(inst, bad, du)
    assert audit.gap > 1e-6
    assert audit.gap == pytest.approx(audit.integrand_sum, rel=1e-12)


def test_zero_demand_gap_is_zero():
    inst = TransportInstance(np.ones((1, 3)), [1.0, 1.0, 1.0], [0.0], slack=True)
    fa, du = solve_transportation(inst)
    assert duality_audit(inst, fa, du).gap == 0.0


def test_audit_shape_mismatch():
    inst = TransportInstance(np.ones((1, 2)), [1.0, 1.0], [1.0])
    with pytest.raises(TransportError):
        duality_audit(inst, FlowAssignment(np.ones((2, 2))), DualSolution(np.zeros(2), np.zeros(1)))


# --- instances ----------------------------------------------------------------------


def test_instance_validation():
    with pytest.raises(TransportError):
        TransportInstance(np.ones((2, 3)), [1, 1], [1, 1])
    with pytest.raises(TransportError):
        TransportInstance(np.array([[np.inf, 1.0]]), [1, 1], [1])
    with pytest.raises(TransportError):
        TransportInstance(np.ones((1, 2)), [0.1, 0.1], [1.0])
    with pytest.raises(TransportError):
        TransportInstance(np.ones((1, 2)), [1.0, 1.0], [1.0], slack=False)


def test_penalize():
    c, bad = penalize(np.array([[1.0, np.inf], [-3.0, 2.0]]))
    assert bad.tolist() == [[False, True], [False, False]]
    assert c[0, 1] == PENALTY_FACTOR * 3.0


def test_build_instance_marginals():
    sc = Scenario(2.0, (GroupSpec(1.0),), ConvexCommon(Power(1.0, 2.0)), Family.FIFW)
    inst = build_instance(sc, TimeGrid(-1.0, 1.0, 10))
    assert np.allclose(inst.supplies, 0.4) and inst.slack


# --- generic LP ------------------------------------------------------------------------


def test_generic_2d_matches_transportation():
    rng = np.random.default_rng(6)
    C = rng.uniform(0, 3, size=(3, 15))
    inst = TransportInstance(C, np.full(15, 0.5), [1.0, 2.0, 1.5])
    fa, du = solve_lp_generic(inst)
    ft, _ = solve_transportation(inst)
    assert fa.objective == pytest.approx(ft.objective, rel=1e-10)
    assert duality_audit(inst, fa, du).rel_gap <= 1e-9


def test_generic_3d_separable_cost():
    a, b, d = np.array([1.0, 2.0]), np.array([0.5, -1.0, 3.0]), np.array([0.0, 1.0, 2.0, 4.0])
    C = a[:, None, None] + b[None, :, None] + d[None, None, :]
    R, Q, S = np.array([1.5, 1.5]), np.array([1.0, 1.0, 1.0]), np.full(4, 0.75)
    inst = TransportInstance(C, S, Q, R, slack=False)
    fa, du = solve_lp_generic(inst)
    assert fa.objective == pytest.approx(a @ R + b @ Q + d @ S, rel=1e-12)
    assert duality_audit(inst, fa, du).rel_gap <= 1e-9


def test_generic_3d_matches_greedy_and_linprog():
    rng = np.random.default_rng(7)
    sc, grid = random_3d(rng)
    inst = build_instance(sc, grid.with_cells(40), slack=False)
    fa, du = solve_lp_generic(inst)
    g = greedy_nd([inst.locations, inst.demands, inst.supplies], inst.costs)
    assert fa.objective == pytest.approx(g.objective, rel=1e-10)
    assert fa.objective == pytest.approx(linprog_objective(inst), rel=1e-9)
    audit = duality_audit(inst, fa, du)
    assert audit.rel_gap <= 1e-9 and du.r.min() == 0.0

