"""Discrete linearized operators at the ground state and their certification.

Three linear maps act on (density, potential-gradient) pairs:

    M  (u, v) = (u/Q + v, v - phi_u)           linearized free energy
    L  (e, n) = (div(Q grad(e/Q + n)), lap n - e)   linearized flow
    L* (e, n) = (div(Q grad e)/Q + lap n, lap n - phi_{div(Q grad e)})

together with the compactly supported directions Phi_M that approximate the
slowly growing kernel of L* and fix the modulation orthogonality.  Pairings
use the L2 x H1dot product <(u,v),(f,g)> = int u f + int grad v . grad g.

Coercivity is certified numerically: the quadratic forms are assembled as
dense matrices, constraints are removed by restriction to their nullspace,
and the minimal Rayleigh quotient against the X_Q metric comes from a dense
symmetric generalized eigensolve.
"""

from __future__ import annotations

import numpy as np
from scipy import linalg

from .grid import (
    FieldPair,
    RadialField,
    RadialGrid,
    cutoff,
    integrate,
    potential_from_gradient,
)
from .profiles import GroundState, lambda_q, q_density, q_prime


class OperatorError(ValueError):
    pass


def operator_grid(M_param, nodes_per_decade=48, h_core=0.05, stencil_order=4):
    """Grid for Phi_M / coercivity work: r_max = 50 M keeps the compactly
    supported directions far from the outer boundary."""
    return RadialGrid.make(50.0 * M_param, h_core=h_core,
                           nodes_per_decade=nodes_per_decade,
                           stencil_order=stencil_order)


# -- inner products ------------------------------------------------------------

def pairing(x: FieldPair, y: FieldPair) -> float:
    """L2 x H1dot pairing of primitive pairs."""
    g = x.grid
    w = 2.0 * np.pi * g.quad_weights
    return float(w @ (x.density.values * y.density.values)
                 + w @ (x.chem_gradient.values * y.chem_gradient.values))


def l2Q_norm_sq(f: RadialField) -> float:
    g = f.grid
    w = 2.0 * np.pi * g.positive_quad_weights
    return float(w @ (f.values ** 2 / q_density(g.nodes)))


def xq_norm_sq(x: FieldPair) -> float:
    g = x.grid
    w = 2.0 * np.pi * g.positive_quad_weights
    return l2Q_norm_sq(x.density) + float(w @ x.chem_gradient.values ** 2)


def h2q_norm(eps: RadialField) -> float:
    """|| (1+r^2) lap e ||_2 + || (1+r) grad e ||_2 + || e ||_2."""
    g = eps.grid
    r = g.nodes
    w = 2.0 * np.pi * g.quad_weights
    lap = _lap_values(g, eps.values)
    d1 = g.diff_matrix(1, "even") @ eps.values
    return (np.sqrt(w @ ((1 + r ** 2) ** 2 * lap ** 2))
            + np.sqrt(w @ ((1 + r) ** 2 * d1 ** 2))
            + np.sqrt(w @ eps.values ** 2))


def n_norm_from_grad(grad_eta: RadialField) -> float:
    """|| (1+r) grad lap eta ||_2 + || lap eta ||_2 from the gradient slot."""
    g = grad_eta.grid
    r = g.nodes
    w = 2.0 * np.pi * g.quad_weights
    lap = _div_from_grad_values(g, grad_eta.values)
    glap = g.diff_matrix(1, "even") @ lap
    return (np.sqrt(w @ ((1 + r) ** 2 * glap ** 2))
            + np.sqrt(w @ lap ** 2))


def energy_norm(x: FieldPair) -> float:
    """H^2_Q + N + L1 norm of a primitive pair."""
    g = x.grid
    w = 2.0 * np.pi * g.quad_weights
    l1 = float(w @ np.abs(x.density.values))
    return h2q_norm(x.density) + n_norm_from_grad(x.chem_gradient) + l1


def _lap_values(grid, vals):
    d1 = grid.diff_matrix(1, "even") @ vals
    d2 = grid.diff_matrix(2, "even") @ vals
    out = d2 + grid.divide_by_r(d1, "odd")
    out[0] = 2.0 * d2[0]
    return out


def _div_from_grad_values(grid, gvals):
    """(1/r) d/dr (r w) for an odd flux w: the laplacian of its potential."""
    out = grid.divide_by_r(grid.diff_matrix(1, "even") @ (grid.nodes * gvals),
                           "odd")
    out[0] = 2.0 * (grid.diff_matrix(1, "odd") @ gvals)[0]
    return out


# -- pointwise operator applications -------------------------------------------

def apply_M(x: FieldPair) -> FieldPair:
    """(u/Q + v, grad v - m_u/r); v recovered with convolution normalization."""
    g = x.grid
    u = x.density.values
    gv = x.chem_gradient.values
    v = potential_from_gradient(x.chem_gradient, "log_convolution").values
    m_u = g.cumulative_integral(u, "r")
    first = u / q_density(g.nodes) + v
    second = gv - g.divide_by_r(m_u, "even")
    return FieldPair(RadialField(g, first),
                     RadialField(g, second, "odd"))


def apply_L(x: FieldPair) -> FieldPair:
    """Linearized flow: (lap e + eQ + grad e . grad phi_Q + Q lap n + Q' grad n,
    grad(lap n - e))."""
    g = x.grid
    r = g.nodes
    e = x.density.values
    gn = x.chem_gradient.values
    lap_e = _lap_values(g, e)
    de = g.diff_matrix(1, "even") @ e
    lap_n = _div_from_grad_values(g, gn)
    first = (lap_e + e * q_density(r) + de * (4.0 * r / (1.0 + r ** 2))
             + q_density(r) * lap_n + q_prime(r) * gn)
    second = g.diff_matrix(1, "even") @ lap_n - de
    return FieldPair(RadialField(g, first), RadialField(g, second, "odd"))


def apply_Lstar(x: FieldPair) -> FieldPair:
    """Adjoint: (div(Q grad e)/Q + lap n, grad lap n - Q grad e).

    The first component is expanded as lap e + (Q'/Q) e' + lap n with the
    analytic logarithmic derivative Q'/Q = -4r/(1+r^2); dividing the tiny
    far-field flux by Q would amplify stencil noise like r^4.
    """
    g = x.grid
    r = g.nodes
    e = x.density.values
    gn = x.chem_gradient.values
    Q = q_density(r)
    de = g.diff_matrix(1, "even") @ e
    lap_n = _div_from_grad_values(g, gn)
    first = _lap_values(g, e) - (4.0 * r / (1.0 + r ** 2)) * de + lap_n
    second = g.diff_matrix(1, "even") @ lap_n - Q * de
    return FieldPair(RadialField(g, first), RadialField(g, second, "odd"))


def lyapunov_functional(x: FieldPair) -> float:
    """<M E2, E2> with E2 = L x; nonnegative on mean-zero error pairs."""
    e2 = apply_L(x)
    return pairing(apply_M(e2), e2)


# -- matrix assembly -----------------------------------------------------------

class OperatorBundle:
    """Dense matrix forms of M, L, L* and the pairing metrics on one grid.

    The stacked unknown is x = [density values; gradient values]; matrices
    are cached after first assembly.  Quadratic forms are symmetrized (the
    discrete asymmetry is at truncation level).
    """

    def __init__(self, grid: RadialGrid):
        self.grid = grid
        self.ground = GroundState.build(grid)
        self._cache = {}

    # metric blocks
    def _w(self):
        return 2.0 * np.pi * self.grid.quad_weights

    def gram_pairing(self):
        if "G" not in self._cache:
            w = self._w()
            self._cache["G"] = np.concatenate([w, w])
        return self._cache["G"]  # diagonal, stored as vector

    def gram_xq(self, log_weight=False):
        key = "GX_log" if log_weight else "GX"
        if key not in self._cache:
            g = self.grid
            w = 2.0 * np.pi * g.positive_quad_weights
            r = g.nodes
            grad_w = w.copy()
            if log_weight:
                with np.errstate(divide="ignore"):
                    lw = (1.0 + np.abs(np.log(np.where(r > 0, r, 1.0)))) ** 2
                grad_w = w * lw
            self._cache[key] = np.concatenate([w / q_density(r), grad_w])
        return self._cache[key]

    def pair_vector(self, x: FieldPair):
        """Vector c with c @ y = <y, x> for stacked y."""
        return self.gram_pairing() * np.concatenate(
            [x.density.values, x.chem_gradient.values])

    def mass_vector(self):
        """Discrete mass functional on the positive metric weights (the same
        measure the eigensolve forms use, so kernel algebra stays exact)."""
        w = 2.0 * np.pi * self.grid.positive_quad_weights
        return np.concatenate([w, np.zeros_like(w)])

    def _d1e(self):
        return self.grid.diff_matrix(1, "even").toarray()

    def _divr_odd(self):
        """Matrix of w -> (1/r) d(r w)/dr for odd w."""
        if "divr" not in self._cache:
            g = self.grid
            mat = self._d1e() @ np.diag(g.nodes)
            out = np.empty_like(mat)
            out[1:] = mat[1:] / g.nodes[1:, None]
            out[0] = 2.0 * g.diff_matrix(1, "odd").toarray()[0]
            self._cache["divr"] = out
        return self._cache["divr"]

    def matrix_L(self):
        if "L" not in self._cache:
            g = self.grid
            r = g.nodes
            n = g.n
            Q = q_density(r)
            d1e = self._d1e()
            lap_e = g.diff_matrix(2, "even").toarray()
            lap_e[1:] += (d1e[1:] / r[1:, None])
            lap_e[0] = 2.0 * g.diff_matrix(2, "even").toarray()[0]
            divr = self._divr_odd()
            L = np.zeros((2 * n, 2 * n))
            L[:n, :n] = (lap_e + np.diag(Q)
                         + np.diag(4.0 * r / (1.0 + r ** 2)) @ d1e)
            L[:n, n:] = np.diag(Q) @ divr + np.diag(q_prime(r))
            L[n:, :n] = -d1e
            L[n:, n:] = d1e @ divr
            self._cache["L"] = L
        return self._cache["L"]

    def matrix_M(self):
        """Stacked matrix of the M map (affine potential normalization folded in)."""
        if "M" not in self._cache:
            g = self.grid
            n = g.n
            r = g.nodes
            Q = q_density(r)
            cum_one = g.cumulative_matrix("one")
            # potential from gradient with the log-convolution anchor
            P = cum_one.copy()
            anchor = -cum_one[-1]
            anchor[-1] += g.r_max * np.log(g.r_max)
            P += np.ones((n, 1)) @ anchor[None, :]
            cum_r = g.cumulative_matrix("r")
            poisson = np.zeros((n, n))
            poisson[1:] = cum_r[1:] / r[1:, None]
            M = np.zeros((2 * n, 2 * n))
            M[:n, :n] = np.diag(1.0 / Q)
            M[:n, n:] = P
            M[n:, :n] = -poisson
            M[n:, n:] = np.eye(n)
            self._cache["M"] = M
        return self._cache["M"]

    def quadform_M(self):
        """Symmetric matrix A with x^T A y = <M x, y>.

        Built on the positive metric weights so that the form and the X_Q
        Gram discretize the same measure; high-order weights carry small
        negative entries that would fake negative Rayleigh directions.
        """
        if "AM" not in self._cache:
            w = 2.0 * np.pi * self.grid.positive_quad_weights
            G = np.concatenate([w, w])
            A = (self.matrix_M().T * G[None, :]).T
            self._cache["AM"] = 0.5 * (A + A.T)
        return self._cache["AM"]

    def boundary_rows(self, width=None):
        """Constraint rows pinning the outermost nodes of both blocks to zero.

        The assembled operators carry no outer boundary condition, so the
        truncated domain admits spurious near-kernel tails (log-harmonic in
        the density slot); eigensolves restrict to fields vanishing there.
        """
        n = self.grid.n
        if width is None:
            width = self.grid.stencil_order + 3
        rows = []
        for k in range(width):
            for block in (0, n):
                e = np.zeros(2 * n)
                e[block + n - 1 - k] = 1.0
                rows.append(e)
        # gradient slot at r=0 is not a degree of freedom (odd parity)
        e = np.zeros(2 * n)
        e[n] = 1.0
        rows.append(e)
        return np.array(rows)

    def pair_LambdaQ(self):
        return self.ground.pair_LambdaQ()


# -- Phi_M directions ----------------------------------------------------------

PAIRING_CUTOFF_WIDTH = 0.5  # narrow window keeps <Phi_0, Lambda Q>/log M tight


def phi0_pair(grid: RadialGrid, M_param: float) -> FieldPair:
    """(chi_M r^2, gradient of -4 int_0^r log(1+t^2)/t chi_M dt)."""
    r = grid.nodes
    chi = cutoff(r / M_param, width=PAIRING_CUTOFF_WIDTH)
    first = RadialField(grid, chi * r ** 2)
    grad2 = RadialField(grid, -4.0 * chi * grid.divide_by_r(np.log1p(r ** 2),
                                                            "even"), "odd")
    return FieldPair(first, grad2)


class PhiMDirections:
    def __init__(self, pair0, lstar_pair0, pair, c_M, report):
        self.pair0 = pair0
        self.lstar_pair0 = lstar_pair0
        self.pair = pair
        self.c_M = c_M
        self.report = report


def build_phi_m(grid: RadialGrid, M_param: float, t1_pair: FieldPair) -> PhiMDirections:
    """Phi_M = Phi_{0,M} + c_M L* Phi_{0,M} with <Phi_M, T1> = 0.

    c_M uses the discrete <L* Phi_0, T1> in the denominator (equal to
    <Phi_0, Lambda Q> through adjunction and L T1 = Lambda Q), which makes
    the defining orthogonality hold to roundoff.
    """
    if grid.r_max < 10.0 * M_param:
        raise OperatorError("grid r_max should be >> M for Phi_M work")
    gs = GroundState.build(grid)
    p0 = phi0_pair(grid, M_param)
    lp0 = apply_Lstar(p0)
    lam = gs.pair_LambdaQ()
    num = pairing(p0, t1_pair)
    den_adj = pairing(lp0, t1_pair)
    den_lam = pairing(p0, lam)
    # the pairing grows like -32 pi log M; below ~32 pi the direction is useless
    if abs(den_lam) < 32.0 * np.pi:
        raise OperatorError("M too small: <Phi_0, Lambda Q> nearly degenerate")
    c_M = -num / den_adj
    pair = FieldPair(
        RadialField(grid, p0.density.values + c_M * lp0.density.values),
        RadialField(grid, p0.chem_gradient.values
                    + c_M * lp0.chem_gradient.values, "odd"))
    report = {
        "M": M_param,
        "c_M": c_M,
        "Phi0_T1": num,
        "Phi0_LambdaQ": den_lam,
        "LstarPhi0_T1": den_adj,
        "PhiM_T1": pairing(pair, t1_pair),
        "PhiM_LambdaQ": pairing(pair, lam),
    }
    return PhiMDirections(p0, lp0, pair, c_M, report)


# -- coercivity certification ----------------------------------------------------

def _whitened_min(A, gx, constraints):
    """Minimal x^T A x / x^T diag(gx) x over the constraint nullspace.

    The metric spans ~18 orders of magnitude (the 1/Q weight grows like r^4),
    so the quotient is whitened exactly with the diagonal square root before
    the dense symmetric eigensolve; no rank decisions are involved.
    """
    s = np.sqrt(gx)
    S = A / s[None, :] / s[:, None]
    C = np.atleast_2d(np.asarray(constraints)) / s[None, :]
    V = linalg.null_space(C)
    Sr = V.T @ S @ V
    vals, vecs = linalg.eigh(0.5 * (Sr + Sr.T))
    x = (V @ vecs[:, 0]) / s
    return vals[0], x


def coercivity_M(bundle: OperatorBundle) -> dict:
    """delta0 = min <Mx,x>/||x||_XQ^2 over {<x,LambdaQ> = 0, int u = 0}.

    Also reports the minimum without the Lambda Q constraint, which collapses
    onto the kernel direction (value ~ 0).
    """
    A = bundle.quadform_M()
    gx = bundle.gram_xq()
    lam = bundle.pair_LambdaQ()
    bc = bundle.boundary_rows()
    cons = np.vstack([bundle.pair_vector(lam), bundle.mass_vector(), bc])
    val, vec = _whitened_min(A, gx, cons)
    val_u, _ = _whitened_min(A, gx, np.vstack([bundle.mass_vector(), bc]))
    n = bundle.grid.n
    minimizer = FieldPair(RadialField(bundle.grid, vec[:n]),
                          RadialField(bundle.grid, vec[n:], "odd"))
    return {"delta0_M_hat": float(val), "unconstrained_min": float(val_u),
            "minimizer": minimizer}


def coercivity_L(bundle: OperatorBundle, phim: PhiMDirections,
                 log_weight=False, sv_tol=1e-10) -> dict:
    """Minimal <M L e, L e> / ||L e||_XQ^2 over the doubly constrained space
    <e, Phi_M> = <e, L* Phi_M> = 0.

    Substituting z = G^{1/2} L e turns the quotient into an ordinary Rayleigh
    quotient of the whitened M form over range(G^{1/2} L V); directions with
    singular value below sv_tol * max (pure kernel/noise of L) are removed.
    """
    grid = bundle.grid
    L = bundle.matrix_L()
    AM = bundle.quadform_M()
    gx = bundle.gram_xq(log_weight=log_weight)
    s = np.sqrt(gx)
    lstar_phim = apply_Lstar(phim.pair)
    cons = np.vstack([bundle.pair_vector(phim.pair),
                      bundle.pair_vector(lstar_phim),
                      bundle.boundary_rows()])
    V = linalg.null_space(np.atleast_2d(cons))
    K = (L * s[:, None]) @ V
    U, sv, _ = linalg.svd(K, full_matrices=False)
    Uk = U[:, sv > sv_tol * sv.max()]
    # restrict the range to discretely mean-zero densities: the M form is
    # only semi-definite there, and the near-kernel direction otherwise
    # leverages the O(h^2) mass error of Lambda Q into a spurious dip
    cz = (bundle.mass_vector() / s) @ Uk
    Y = linalg.null_space(cz[None, :])
    Uk = Uk @ Y
    Stil = AM / s[None, :] / s[:, None]
    Sr = Uk.T @ Stil @ Uk
    vals = linalg.eigvalsh(0.5 * (Sr + Sr.T))
    M_param = phim.report["M"]
    return {
        "delta0_L_hat": float(vals[0]),
        "normalized": float(vals[0] * M_param ** 2 / np.log(M_param) ** 2),
        "log_weighted": bool(log_weight),
        "modes_kept": int(Uk.shape[1]),
    }


def kernel_gap(bundle: OperatorBundle, support_radius=30.0) -> dict:
    """Two smallest modes of ||L x||_XQ / ||x||_XQ on the regular sector.

    The sector restricts to mean-zero fields supported in r <= support_radius:
    on the full truncated domain the operator has quasi-kernel tails
    (log-harmonic density with matched potential) whose X_Q norm grows faster
    than their residual, so the global quotient is not a kernel detector.
    The ground mode must align with the Lambda Q pair and be separated from
    the second mode by orders of magnitude (one-dimensional kernel).
    """
    L = bundle.matrix_L()
    gx = bundle.gram_xq()
    s = np.sqrt(gx)
    n = bundle.grid.n
    K0 = (L * s[:, None]) / s[None, :]
    rows = [bundle.mass_vector()]
    outside = np.nonzero(bundle.grid.nodes > support_radius)[0]
    for j in outside:
        for block in (0, n):
            e = np.zeros(2 * n)
            e[block + j] = 1.0
            rows.append(e)
    e = np.zeros(2 * n)
    e[n] = 1.0
    rows.append(e)
    C = np.array(rows) / s[None, :]
    V = linalg.null_space(C)
    _, sv, Yt = linalg.svd(K0 @ V, full_matrices=False)
    x0 = (V @ Yt[-1]) / s
    lam = bundle.pair_LambdaQ()
    lamv = np.concatenate([lam.density.values, lam.chem_gradient.values])
    align = abs(float((x0 * gx) @ lamv)) / np.sqrt(
        float((x0 * gx) @ x0) * float((lamv * gx) @ lamv))
    mu0, mu1 = sv[-1] ** 2, sv[-2] ** 2
    return {"mu0": float(mu0), "mu1": float(mu1),
            "gap": float(mu1 / max(mu0, 1e-300)),
            "alignment": align}
