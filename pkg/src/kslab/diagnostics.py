"""Physical functionals, inequality verifiers and blow-up law fitting.

The free energy E(u,v) = int u log u + int u v + 1/2 int |grad v|^2 is the
Lyapunov functional of the flow; its scaling defect M(2 - M/4pi) log(lambda)
makes the problem almost energy critical.  The logarithmic HLS inequality
bounds it from below at critical mass with the stationary bubble as the
unique minimizer (sharp constant M[log M - 1 - log pi]).  A weighted Hardy
suite backs the coercivity machinery, and fit_rate_law turns recorded
modulation histories into the predicted blow-up law coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import (
    FieldPair,
    RadialField,
    integrate,
    potential_from_gradient,
)
from .profiles import q_density

ENTROPY_FLOOR = 1.0e-30


class DiagnosticsError(ValueError):
    pass


@dataclass(frozen=True)
class EnergyReport:
    mass: float
    free_energy: float
    entropy: float
    interaction: float
    dirichlet: float
    second_moment: float
    floored_mass: float  # mass carried by nodes clipped at the entropy floor


def free_energy(pair: FieldPair) -> EnergyReport:
    """Free energy and its pieces; E = entropy + interaction - 1/2 int v lap v.

    The potential is recovered from the stored gradient with the convolution
    normalization, so that E(Q, phi_Q) reproduces the critical-mass lower
    bound exactly.  The quadratic term is evaluated as
    1/2 int |grad v|^2 - pi R v(R) v'(R): for decaying potentials this is the
    Dirichlet form, while for mass-carrying states (v ~ (M/2pi) log r) the
    boundary flux cancels the logarithmically divergent tail, which is what
    the whole-plane functional does implicitly.
    """
    pair = pair.to_primitive()
    g = pair.grid
    w = 2.0 * np.pi * g.quad_weights
    u = pair.density.values
    if np.min(u) < -1e-8 * max(np.max(np.abs(u)), 1.0):
        raise DiagnosticsError("density significantly negative: free energy "
                               "undefined")
    gv = pair.chem_gradient.values
    v = potential_from_gradient(pair.chem_gradient, "log_convolution").values
    mass = float(w @ u)
    clipped = np.maximum(u, ENTROPY_FLOOR)
    entropy = float(w @ (u * np.log(clipped)))
    floored = float(w @ (u * (u < ENTROPY_FLOOR)))
    interaction = float(w @ (u * v))
    dirichlet = float(w @ gv ** 2)
    boundary = np.pi * g.r_max * v[-1] * gv[-1]
    second_moment = float(w @ (g.nodes ** 2 * u))
    return EnergyReport(mass=mass,
                        free_energy=(entropy + interaction
                                     + 0.5 * dirichlet - boundary),
                        entropy=entropy, interaction=interaction,
                        dirichlet=dirichlet, second_moment=second_moment,
                        floored_mass=floored)


def loghls_bound(mass: float) -> float:
    """Sharp lower bound M [log M - 1 - log pi] of the log-HLS functional."""
    return mass * (np.log(mass) - 1.0 - np.log(np.pi))


def check_logHLS(u: RadialField):
    """Both sides of int u log u + (4 pi / M) int phi_u u >= M[log M - 1 - log pi].

    Returns (lhs, rhs, margin); the margin vanishes exactly on the scaling
    family of the ground state.
    """
    g = u.grid
    w = 2.0 * np.pi * g.quad_weights
    uv = u.values
    if np.min(uv) < -1e-12 * max(np.max(np.abs(uv)), 1.0):
        raise DiagnosticsError("log-HLS requires a nonnegative density")
    mass = float(w @ uv)
    phi = potential_from_gradient(
        RadialField(g, g.divide_by_r(g.cumulative_integral(uv, "r"), "even"),
                    "odd"),
        "log_convolution").values
    entropy = float(w @ (uv * np.log(np.maximum(uv, ENTROPY_FLOOR))))
    lhs = entropy + (4.0 * np.pi / mass) * float(w @ (uv * phi))
    rhs = loghls_bound(mass)
    return lhs, rhs, lhs - rhs


def virial_rate(pair: FieldPair) -> dict:
    """Instantaneous d/dt of the second moment under the parabolic-elliptic
    closure v = phi_u, evaluated by quadrature, against 4M(1 - M/8pi)."""
    pair = pair.to_primitive()
    g = pair.grid
    w = 2.0 * np.pi * g.quad_weights
    u = pair.density.values
    mass = float(w @ u)
    m_u = g.cumulative_integral(u, "r")
    du = g.diff_matrix(1, "even") @ u
    # d/dt int r^2 u = -2 int x . (grad u + u grad phi_u)
    measured = -2.0 * float(w @ (g.nodes * (du + u * g.divide_by_r(m_u, "even"))))
    formula = 4.0 * mass * (1.0 - mass / (8.0 * np.pi))
    return {"measured": measured, "formula": formula}


# -- weighted Hardy suite -------------------------------------------------------

def _wmask(grid, vals):
    """Zero the r=0 node of a singular weight; its cell carries O(1/|log h|)
    of the integral and only ever weakens the left-hand sides."""
    out = np.array(vals)
    out[0] = 0.0
    return out


def check_hardy_suite(v: RadialField, alpha=0.0, gamma=1.0, R=None) -> dict:
    """Evaluate both sides of the weighted Hardy inequalities.

    Reports {name: (lhs, rhs, ratio)} with ratio = rhs/lhs for the
    'lhs <= C rhs' family (finite measured constant) and lhs/rhs for the
    sharp-constant bound.  R defaults to half the grid radius.
    """
    g = v.grid
    r = g.nodes
    if R is None:
        R = 0.5 * g.r_max
    w = 2.0 * np.pi * g.quad_weights
    inR = r <= R
    vv = v.values
    dv = g.diff_matrix(1, v.parity) @ vv
    lap = g.diff_matrix(2, v.parity) @ vv + _wmask(g, np.concatenate(
        [[0.0], dv[1:] / r[1:]]))
    dlap = g.diff_matrix(1, "none") @ lap
    with np.errstate(divide="ignore"):
        logw = (1.0 + np.abs(np.log(np.where(r > 0, r, 1.0)))) ** 2
    report = {}

    # sharp power-weight bound: int r^{a+2} |v'|^2 >= ((2+a)^2/4) int r^a v^2
    lhs = float(w @ (r ** (alpha + 2) * dv ** 2))
    rhs = float(w @ (r ** alpha * vv ** 2))
    report["power"] = {"lhs": lhs, "rhs": rhs,
                       "ratio": lhs / rhs if rhs else np.inf,
                       "sharp": (2.0 + alpha) ** 2 / 4.0}

    # log weight: int_{r<=R} v^2/(r^2(1+|log r|)^2) <= C [int_{1<r<2} v^2 + int |v'|^2]
    lhs = float(w @ _wmask(g, inR * vv ** 2 / np.where(r > 0, r ** 2, 1.0) / logw))
    ring = (r >= 1.0) & (r <= 2.0)
    rhs = float(w @ (ring * vv ** 2)) + float(w @ (inR * dv ** 2))
    report["log"] = {"lhs": lhs, "rhs": rhs, "constant": lhs / rhs}

    # gamma variant on r >= 1
    out1 = (r >= 1.0) & inR
    lhs = float(w @ (out1 * vv ** 2 / np.where(r > 0, r ** (gamma + 2), 1.0) / logw))
    rhs = (float(w @ (ring * vv ** 2))
           + float(w @ (out1 * dv ** 2 / np.where(r > 0, r ** gamma, 1.0) / logw)))
    report["log_gamma"] = {"lhs": lhs, "rhs": rhs, "constant": lhs / rhs}

    # level 1: v^2/(r^2(1+r^4)log^2) <= C [ |v'|^2/(r^4 log^2) - v^2/(1+r^8) ]
    lhs = float(w @ _wmask(g, vv ** 2 / np.where(r > 0, r ** 2, 1.0)
                           / (1.0 + r ** 4) / logw))
    rhs = (float(w @ _wmask(g, dv ** 2 / np.where(r > 0, r ** 4, 1.0) / logw))
           - float(w @ (vv ** 2 / (1.0 + r ** 8))))
    report["level1"] = {"lhs": lhs, "rhs": rhs,
                        "constant": lhs / rhs if rhs > 0 else np.inf}

    # level 2: grad/hessian controlled by the laplacian (constant 1)
    hess = g.diff_matrix(2, v.parity) @ vv
    hess_sq = hess ** 2 + np.concatenate([[0.0], (dv[1:] / r[1:]) ** 2])
    lhs = (float(w @ _wmask(g, dv ** 2 / np.where(r > 0, r ** 4, 1.0) / logw))
           + float(w @ _wmask(g, hess_sq / np.where(r > 0, r ** 2, 1.0) / logw)))
    rhs = float(w @ _wmask(g, lap ** 2 / np.where(r > 0, r ** 2, 1.0) / logw))
    report["level2"] = {"lhs": lhs, "rhs": rhs, "constant": lhs / rhs}

    # level 3: log-weighted laplacian controlled by its gradient
    lhs = (float(w @ _wmask(g, lap ** 2 / np.where(r > 0, r ** 2, 1.0) / logw))
           - float(w @ (lap ** 2 / (1.0 + r ** 4))))
    rhs = float(w @ dlap ** 2)
    report["level3"] = {"lhs": lhs, "rhs": rhs,
                        "constant": lhs / rhs if rhs else np.inf}
    return report


# -- rate-law fitting ------------------------------------------------------------

def fit_rate_law(series, window_fraction=0.5, reject_residual=0.005) -> dict:
    """Least-squares fits of the predicted modulation laws on a recorded run.

    (a) b_hat(s) * 2s against log s - log log s (coefficient -> 1);
    (b) -lambda_s/lambda against b_hat (slope -> 1);
    (c) the integrated proxy -lambda lambda_t e^{2 sqrt|log lambda|},
        reported as min/max over the last third (bounded positive).

    `series` needs attributes s, b_hat, lam as arrays (duck-typed).  The fit
    uses the trailing window_fraction of samples; a relative residual above
    reject_residual marks the law as not matched.
    """
    s = np.asarray(series.s, dtype=float)
    b_hat = np.asarray(series.b_hat, dtype=float)
    lam = np.asarray(series.lam, dtype=float)
    if len(s) < 8:
        raise DiagnosticsError("insufficient samples for a rate fit")
    if s[-1] / max(s[0], 1e-300) < np.sqrt(10.0):
        raise DiagnosticsError("insufficient dynamic range for a rate fit")
    i0 = np.searchsorted(s, s[-1] * (1.0 - window_fraction))
    i0 = min(i0, len(s) - 8)
    sw, bw, lw = s[i0:], b_hat[i0:], lam[i0:]
    if np.any(sw <= 1.0):
        raise DiagnosticsError("rate fit needs s > 1 on the fit window")

    x = np.log(sw) - np.log(np.log(sw))
    y = 2.0 * sw * bw
    coef = float((x @ y) / (x @ x))
    resid = float(np.linalg.norm(y - coef * x) / np.linalg.norm(y))

    logl = np.log(lw)
    lam_s = -np.gradient(logl, sw)  # -lambda_s/lambda
    slope = float((bw @ lam_s) / (bw @ bw))

    tail = slice(2 * len(sw) // 3, None)
    proxy = lam_s[tail] * np.exp(2.0 * np.sqrt(np.abs(np.log(lw[tail]))))
    return {
        "ode_coefficient": coef,
        "ode_residual": resid,
        "accepted": bool(resid <= reject_residual),
        "lambda_slope": slope,
        "proxy_min": float(np.min(proxy)),
        "proxy_max": float(np.max(proxy)),
    }
