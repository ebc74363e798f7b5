import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kslab.grid import (
    FieldPair,
    GridError,
    RadialField,
    RadialGrid,
    derivative,
    field_from_csv,
    field_to_csv,
    integrate,
    integrate_with_tail_estimate,
    partial_mass,
    poisson_field,
    potential_from_gradient,
    radial_laplacian,
)
from kslab.profiles import lambda_q, psi1, psi1_prime_over_r, q_density


def test_grid_invariants(ref_grid):
    assert ref_grid.nodes[0] == 0.0
    assert np.all(np.diff(ref_grid.nodes) > 0)
    with pytest.raises(GridError):
        RadialGrid(np.linspace(0.1, 1.0, 50))
    with pytest.raises(GridError):
        RadialGrid(np.zeros(50))


def test_derivative_polynomial_exact(mid_grid):
    r = mid_grid.nodes
    f = RadialField(mid_grid, r ** 2)
    d = derivative(f, 1)
    assert np.max(np.abs(d.values - 2 * r)) < 1e-8 * max(1.0, 2 * r[-1])
    assert d.parity == "odd"


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-2.0, 2.0), min_size=2, max_size=3))
def test_derivative_even_poly_exact_hypothesis(coeffs):
    grid = RadialGrid.make(50.0, h_core=0.1, nodes_per_decade=24,
                           stencil_order=4)
    r = grid.nodes
    # even polynomial sum c_k r^{2k}, degree <= stencil order
    f = sum(c * r ** (2 * k) for k, c in enumerate(coeffs))
    df = sum(2 * k * c * r ** (2 * k - 1) for k, c in enumerate(coeffs) if k)
    out = derivative(RadialField(grid, f), 1).values
    scale = max(np.max(np.abs(df)), 1.0)
    assert np.max(np.abs(out - df)) < 1e-7 * scale


def test_even_field_zero_slope_at_origin(ref_grid):
    q = RadialField(ref_grid, q_density(ref_grid.nodes))
    # ghost-node folding cancels the odd derivative to roundoff
    assert abs(derivative(q, 1).values[0]) < 1e-12


def test_psi1_derivative_oracle_order():
    # closed-form psi1'/r as oracle; max error away from the log-singular
    # origin must decay at roughly the stencil order under refinement
    errs = []
    for h in (0.2, 0.1, 0.05):
        grid = RadialGrid.make(60.0, h_core=h, nodes_per_decade=32,
                               stencil_order=4)
        r = grid.nodes
        win = (r >= 0.5) & (r <= 9.0)
        d = derivative(RadialField(grid, psi1(r)), 1).values
        exact = psi1_prime_over_r(r) * r
        errs.append(np.max(np.abs(d - exact)[win]))
    order1 = np.log2(errs[0] / errs[1])
    order2 = np.log2(errs[1] / errs[2])
    assert min(order1, order2) > 3.0


def test_radial_laplacian_oracle(ref_grid):
    r = ref_grid.nodes
    v = RadialField(ref_grid, 2.0 * np.log1p(r ** 2))
    lap = radial_laplacian(v)
    assert np.max(np.abs(lap.values - q_density(r))) < 1e-5
    const = radial_laplacian(RadialField(ref_grid, np.ones_like(r)))
    assert np.max(np.abs(const.values)) < 1e-10
    rsq = radial_laplacian(RadialField(ref_grid, r ** 2))
    assert np.max(np.abs(rsq.values - 4.0)) < 1e-7
    with pytest.raises(GridError):
        radial_laplacian(RadialField(ref_grid, r.copy(), "odd"))


def test_integrate_examples(ref_grid, ground):
    assert abs(integrate(ground.Q) - 8 * np.pi) / (8 * np.pi) < 1e-6
    assert abs(integrate(ground.LambdaQ)) < 1e-4
    ind = RadialField(ref_grid, (ref_grid.nodes <= 1.0).astype(float))
    assert abs(integrate(ind) - np.pi) < 0.1  # jump lands inside a cell
    total, tail = integrate_with_tail_estimate(ground.Q)
    assert tail < 1e-4 * total


def test_partial_mass_examples(ref_grid, ground):
    r = ref_grid.nodes
    m = partial_mass(ground.Q)
    m0 = 4 * r ** 2 / (1 + r ** 2)
    assert np.max(np.abs(m.values - m0)) < 1e-6
    assert m.values[0] == 0.0
    m_lam = partial_mass(ground.LambdaQ)
    psi0 = r ** 2 / (1 + r ** 2) ** 2
    assert np.max(np.abs(m_lam.values - 8 * psi0)) < 1e-6
    zero = partial_mass(RadialField(ref_grid, np.zeros_like(r)))
    assert np.all(zero.values == 0.0)


def test_poisson_field_examples(ref_grid, ground):
    r = ref_grid.nodes
    pf = poisson_field(ground.Q)
    assert np.max(np.abs(pf.values - 4 * r / (1 + r ** 2))) < 1e-6
    assert abs(np.interp(1.0, r, pf.values) - 2.0) < 1e-6
    pl = poisson_field(ground.LambdaQ)
    assert np.max(np.abs(pl.values - r * q_density(r))) < 1e-6


def test_potential_normalizations(ref_grid, ground):
    r = ref_grid.nodes
    phi = potential_from_gradient(poisson_field(ground.Q), "log_convolution")
    assert np.max(np.abs(phi.values - 2 * np.log1p(r ** 2))[r <= 1000]) < 1e-5
    phil = potential_from_gradient(poisson_field(ground.LambdaQ),
                                   "log_convolution")
    assert np.max(np.abs(phil.values + 4 / (1 + r ** 2))[r <= 1000]) < 1e-5
    # fundamental degeneracy as cross-check
    resid = lambda_q(r) / q_density(r) + 2.0 + phil.values
    assert np.max(np.abs(resid)) < 1e-5
    anchored = potential_from_gradient(poisson_field(ground.Q), "value_at_zero")
    assert anchored.values[0] == 0.0


def test_poisson_round_trip(ref_grid):
    r = ref_grid.nodes
    v = RadialField(ref_grid, np.exp(-r ** 2 / 4.0))
    back = potential_from_gradient(poisson_field(radial_laplacian(v)),
                                   "log_convolution")
    assert np.max(np.abs(back.values - v.values)) < 1e-4


@settings(max_examples=15, deadline=None)
@given(st.floats(0.5, 3.0), st.floats(0.6, 2.0), st.floats(-2.0, 2.0))
def test_poisson_round_trip_hypothesis(center, width, amp):
    grid = RadialGrid.make(400.0, h_core=0.05, nodes_per_decade=32,
                           stencil_order=4)
    r = grid.nodes
    vals = amp * (np.exp(-((r - center) / width) ** 2)
                  + np.exp(-((r + center) / width) ** 2))
    v = RadialField(grid, vals)
    back = potential_from_gradient(poisson_field(radial_laplacian(v)),
                                   "log_convolution")
    assert np.max(np.abs(back.values - v.values)) < 1e-3 * max(abs(amp), 0.1)


def test_partial_mass_derivative_roundtrip(mid_grid):
    r = mid_grid.nodes
    f = RadialField(mid_grid, np.exp(-r ** 2 / 2))
    m = partial_mass(f)
    fr = mid_grid.divide_by_r(derivative(m, 1).values, "odd")
    assert np.max(np.abs(fr - f.values)[1:]) < 1e-7


def test_quadrature_cellwise_exactness(mid_grid):
    # int_0^R r^3 * r dr exactly (degree <= stencil order)
    r = mid_grid.nodes
    got = mid_grid.cumulative_integral(r ** 3, "r")[-1]
    exact = mid_grid.r_max ** 5 / 5.0
    assert abs(got - exact) / exact < 1e-12


def test_log_weighted_quadrature():
    grid = RadialGrid.make(40.0, h_core=0.02, nodes_per_decade=48,
                           stencil_order=6)
    lw = grid.log_moment_weights()
    got = lw @ np.exp(-grid.nodes ** 2)
    exact = -np.euler_gamma / 4.0
    assert abs(got - exact) < 1e-8


def test_field_pair_representations(ref_grid, ground):
    pair = FieldPair(ground.Q, poisson_field(ground.Q))
    pm = pair.to_partial_mass()
    assert pm.representation == "partial_mass"
    back = pm.to_primitive()
    assert np.max(np.abs(back.density.values - ground.Q.values)) < 1e-6
    assert abs(pair.total_mass() - 8 * np.pi) < 1e-4


def test_field_csv_roundtrip(tmp_path, ref_grid, ground):
    path = tmp_path / "q.csv"
    field_to_csv(ground.Q, path)
    back = field_from_csv(ref_grid, path)
    assert np.array_equal(back.values, ground.Q.values)
    header = path.read_text().splitlines()[0]
    assert header == "r,value"
