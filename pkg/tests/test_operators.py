import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import kslab.operators as ops
from conftest import smooth_bump_pair_values
from kslab.grid import FieldPair, RadialField, derivative
from kslab.profiles import build_t1_s1, lambda_q, q_density


@pytest.fixture(scope="module")
def op_grid():
    return ops.operator_grid(50.0, nodes_per_decade=32, h_core=0.1)


@pytest.fixture(scope="module")
def bundle(op_grid):
    return ops.OperatorBundle(op_grid)


def bump_pair(grid, rng):
    e, geta = smooth_bump_pair_values(grid, rng)
    return FieldPair(RadialField(grid, e), RadialField(grid, geta, "odd"))


def test_apply_M_identities(ref_grid, ground):
    r = ref_grid.nodes
    out = ops.apply_M(ground.pair_LambdaQ())
    assert np.max(np.abs(out.density.values + 2.0)) < 1e-4
    assert np.max(np.abs(out.chem_gradient.values)) < 1e-6
    # (0, v) -> (v, v)
    v = np.exp(-r ** 2 / 4)
    gv = RadialField(ref_grid, ref_grid.diff_matrix(1, "even") @ v, "odd")
    out2 = ops.apply_M(FieldPair(RadialField(ref_grid, np.zeros_like(r)), gv))
    assert np.max(np.abs(out2.density.values - v)) < 1e-8
    assert np.array_equal(out2.chem_gradient.values, gv.values)


def test_apply_M_second_scaling_pair(ref_grid):
    # M(Lambda^2 Q, r^2 Q) = ((Lambda Q / Q)^2, 0) with closed forms
    r = ref_grid.nodes
    lam2 = 32.0 * (r ** 4 - 4 * r ** 2 + 1) / (1 + r ** 2) ** 4
    grad2 = ref_grid.diff_matrix(1, "even") @ (r ** 2 * q_density(r))
    out = ops.apply_M(FieldPair(RadialField(ref_grid, lam2),
                                RadialField(ref_grid, grad2, "odd")))
    target = (lambda_q(r) / q_density(r)) ** 2
    assert np.max(np.abs(out.density.values - target)[r <= 100]) < 1e-4
    assert np.max(np.abs(out.chem_gradient.values)[r <= 100]) < 1e-4


def test_apply_L_kernel(ref_grid, ground):
    out = ops.apply_L(ground.pair_LambdaQ())
    scale = np.max(np.abs(ground.LambdaQ.values)) * 10
    assert np.max(np.abs(out.density.values)) / scale < 1e-6
    assert np.max(np.abs(out.chem_gradient.values)) / scale < 1e-6


def test_apply_L_on_T1_pair(mid_grid):
    lvl1 = build_t1_s1(mid_grid)
    out = ops.apply_L(FieldPair(lvl1.T1, lvl1.S1_grad))
    r = mid_grid.nodes
    win = (r >= 0.5) & (r <= 100.0)
    assert np.max(np.abs(out.density.values - lambda_q(r))[win]) < 2e-3
    grad_phi_lam = r * q_density(r)
    assert np.max(np.abs(out.chem_gradient.values - grad_phi_lam)[win]) < 2e-3


def test_apply_Lstar_kernel(ref_grid):
    r = ref_grid.nodes
    const = FieldPair(RadialField(ref_grid, np.ones_like(r)),
                      RadialField(ref_grid, np.zeros_like(r), "odd"))
    out = ops.apply_Lstar(const)
    assert np.max(np.abs(out.density.values)) < 1e-10
    assert np.max(np.abs(out.chem_gradient.values)) < 1e-10
    # second branch: L*(r^2, -4 int log(1+t^2)/t) = (-4, 0)
    eta_grad = RadialField(ref_grid,
                           -4.0 * ref_grid.divide_by_r(np.log1p(r ** 2), "even"),
                           "odd")
    out2 = ops.apply_Lstar(FieldPair(RadialField(ref_grid, r ** 2), eta_grad))
    assert np.max(np.abs(out2.density.values + 4.0)) < 1e-6
    assert np.max(np.abs(out2.chem_gradient.values)) / 4.0 < 1e-6


def test_adjunction_random_pairs(ref_grid):
    rng = np.random.default_rng(7)
    for _ in range(20):
        x, y = bump_pair(ref_grid, rng), bump_pair(ref_grid, rng)
        lhs = ops.pairing(ops.apply_L(x), y)
        rhs = ops.pairing(x, ops.apply_Lstar(y))
        assert abs(lhs - rhs) <= 1e-6 * max(abs(lhs), abs(rhs), 1e-6)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_vanishing_average_hypothesis(seed):
    grid = ops.operator_grid(20.0, nodes_per_decade=24, h_core=0.1)
    rng = np.random.default_rng(seed)
    x = bump_pair(grid, rng)
    lx = ops.apply_L(x)
    w = 2 * np.pi * grid.quad_weights
    total = float(w @ lx.density.values)
    scale = float(w @ np.abs(lx.density.values)) + 1e-12
    assert abs(total) / scale < 1e-3  # coarse-grid telescoping tolerance


def test_M_self_adjoint(ref_grid):
    rng = np.random.default_rng(3)
    for _ in range(5):
        x, y = bump_pair(ref_grid, rng), bump_pair(ref_grid, rng)
        # project densities to zero mean (the X_Q sector)
        w = 2 * np.pi * ref_grid.quad_weights
        q = q_density(ref_grid.nodes)
        for p in (x, y):
            u = p.density.values
            u = u - (w @ u) / (w @ q) * q
            p.density = RadialField(ref_grid, u)
        lhs = ops.pairing(ops.apply_M(x), y)
        rhs = ops.pairing(x, ops.apply_M(y))
        assert abs(lhs - rhs) <= 1e-6 * max(abs(lhs), abs(rhs), 1e-8)


def test_phi_m_pairings():
    ratios = []
    for M in (50.0, 100.0):
        grid = ops.operator_grid(M)
        lvl1 = build_t1_s1(grid)
        phim = ops.build_phi_m(grid, M, FieldPair(lvl1.T1, lvl1.S1_grad))
        rep = phim.report
        assert abs(rep["PhiM_T1"]) / abs(rep["Phi0_T1"]) < 1e-6
        ratios.append(rep["PhiM_LambdaQ"] / np.log(M) / (-32 * np.pi))
        assert abs(rep["c_M"]) * np.log(M) / M ** 2 < 10.0
    assert abs(ratios[0] - 1) < 0.1
    assert abs(ratios[1] - 1) < abs(ratios[0] - 1)


def test_phi_m_too_small(op_grid):
    lvl1 = build_t1_s1(op_grid)
    with pytest.raises(ops.OperatorError, match="M too small"):
        ops.build_phi_m(op_grid, 1.2, FieldPair(lvl1.T1, lvl1.S1_grad))


def test_coercivity_M(bundle):
    rep = ops.coercivity_M(bundle)
    assert rep["delta0_M_hat"] > 0.05
    # kernel direction: the form vanishes on the Lambda Q pair
    lam = bundle.pair_LambdaQ()
    val = ops.pairing(ops.apply_M(lam), lam) / ops.xq_norm_sq(lam)
    assert abs(val) < 1e-4


def test_coercivity_M_refinement_stability(bundle):
    g2 = ops.operator_grid(50.0, nodes_per_decade=48, h_core=0.05)
    rep1 = ops.coercivity_M(bundle)
    rep2 = ops.coercivity_M(ops.OperatorBundle(g2))
    a, b = rep1["delta0_M_hat"], rep2["delta0_M_hat"]
    assert abs(a - b) / max(a, b) < 0.2


def test_coercivity_M_lower_bound_on_random(bundle):
    rep = ops.coercivity_M(bundle)
    delta0 = rep["delta0_M_hat"]
    rng = np.random.default_rng(11)
    grid = bundle.grid
    w = 2 * np.pi * grid.quad_weights
    lam = bundle.pair_LambdaQ()
    for _ in range(10):
        x = bump_pair(grid, rng)
        u = x.density.values
        q = q_density(grid.nodes)
        u = u - (w @ u) / (w @ q) * q           # zero mass
        pairx = FieldPair(RadialField(grid, u), x.chem_gradient)
        coef = ops.pairing(pairx, lam) / ops.pairing(lam, lam)
        u2 = u - coef * lam.density.values
        g2 = pairx.chem_gradient.values - coef * lam.chem_gradient.values
        y = FieldPair(RadialField(grid, u2), RadialField(grid, g2, "odd"))
        lhs = ops.pairing(ops.apply_M(y), y)
        assert lhs >= delta0 * ops.xq_norm_sq(y) - 1e-6 * ops.xq_norm_sq(y)


def test_coercivity_L_positive_and_normalized():
    vals = []
    for M in (50.0, 100.0):
        grid = ops.operator_grid(M, nodes_per_decade=32, h_core=0.1)
        b = ops.OperatorBundle(grid)
        lvl1 = build_t1_s1(grid)
        phim = ops.build_phi_m(grid, M, FieldPair(lvl1.T1, lvl1.S1_grad))
        rep = ops.coercivity_L(b, phim)
        assert rep["delta0_L_hat"] > 0.0
        vals.append(rep["normalized"])
        rep_log = ops.coercivity_L(b, phim, log_weight=True)
        assert rep_log["delta0_L_hat"] > 0.0
    assert min(vals) > 0.5  # M^2/log^2 M-normalized quotient bounded below


def test_kernel_gap(bundle):
    rep = ops.kernel_gap(bundle)
    assert rep["gap"] > 50.0
    assert rep["alignment"] > 0.99


def test_lyapunov_functional(ref_grid, ground):
    r = ref_grid.nodes
    zero = FieldPair(RadialField(ref_grid, np.zeros_like(r)),
                     RadialField(ref_grid, np.zeros_like(r), "odd"))
    assert ops.lyapunov_functional(zero) == 0.0
    lam_val = ops.lyapunov_functional(ground.pair_LambdaQ())
    scale = ops.xq_norm_sq(ground.pair_LambdaQ())
    assert abs(lam_val) < 1e-6 * scale
    rng = np.random.default_rng(5)
    x = bump_pair(ref_grid, rng)
    assert ops.lyapunov_functional(x) > -1e-8 * ops.xq_norm_sq(x)


def test_L_continuity_constant_stable(ref_grid, mid_grid):
    rng = np.random.default_rng(9)
    consts = []
    for grid in (ref_grid, mid_grid):
        rng = np.random.default_rng(9)
        ratios = []
        for _ in range(5):
            x = bump_pair(grid, rng)
            lx = ops.apply_L(x)
            ratios.append(np.sqrt(ops.xq_norm_sq(lx)) / ops.energy_norm(x))
        consts.append(max(ratios))
    assert consts[0] < 10.0 and consts[1] < 10.0
    assert abs(consts[0] - consts[1]) / max(consts) < 0.5
