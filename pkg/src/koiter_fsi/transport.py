"""Damped continuity equation on a moving domain, Galerkin in pushed-forward bases.

The weak form is

    d/dt int rho phi_l = int rho (d_t phi_l + w . grad phi_l) - eps int grad rho . grad phi_l

with phi_l = phi~_l o Psi^{-1}, hence d_t phi_l = -V . grad phi_l for the chart
velocity V.  Writing rho = sum beta_k phi_k gives d/dt (A beta) = (C - eps D) beta,
a linear ODE system.  The first basis function is constant, so the first row
of C - eps D vanishes and the total mass is conserved by any scheme that
updates A beta consistently; we use the implicit midpoint rule.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .errors import LinearSolveFailure, NegativeDensity, SingularMass
from .geometry import identity_geometry

MASS_COND_MAX = 1e12
MAX_HALVINGS = 6
NEG_TOL = 1e-6


# --------------------------------------------------------------------------
# scalar bases on the reference domain
# --------------------------------------------------------------------------

def monomial_exponents(degree):
    return [(a, n - a) for n in range(degree + 1) for a in range(n, -1, -1)]


def _monomials(x, exps):
    X, Y = x[:, 0], x[:, 1]
    v = np.stack([X**a * Y**b for a, b in exps], axis=1)
    gx = np.stack([a * X ** max(a - 1, 0) * Y**b if a else 0.0 * X for a, b in exps], axis=1)
    gy = np.stack([b * X**a * Y ** max(b - 1, 0) if b else 0.0 * X for a, b in exps], axis=1)
    return v, np.stack([gx, gy], axis=2)


class DiskScalarBasis:
    """Polynomials of total degree <= degree, orthonormal in L2 of the unit disk.

    Orthonormalisation is a QR factorisation of the weighted monomial matrix
    on the reference quadrature, so the first function is the constant
    1/sqrt(pi).
    """

    def __init__(self, quad, degree=6):
        self.quad = quad
        self.degree = degree
        self.exps = monomial_exponents(degree)
        v, _ = _monomials(quad.points, self.exps)
        sw = np.sqrt(quad.weights)
        _, Rm = np.linalg.qr(sw[:, None] * v)
        # fix signs so that the constant comes out positive
        Rm = Rm * np.sign(np.diag(Rm))[:, None]
        self.coef = np.linalg.inv(Rm)
        self.values, self.grads = self.evaluate(quad.points)

    @property
    def n(self):
        return self.coef.shape[1]

    def evaluate(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        v, g = _monomials(x, self.exps)
        return v @ self.coef, np.einsum("npd,pk->nkd", g, self.coef)


class SquareCosineBasis:
    """cos(k pi x) cos(l pi y) on the unit square, normalised, ordered by k^2 + l^2."""

    def __init__(self, quad, n_modes):
        kmax = int(np.ceil(np.sqrt(n_modes))) + 2
        pairs = sorted(((k, l) for k in range(kmax) for l in range(kmax)),
                       key=lambda p: (p[0] ** 2 + p[1] ** 2, p[0], p[1]))
        self.pairs = pairs[:n_modes]
        self.quad = quad
        self.values, self.grads = self.evaluate(quad.points)

    @property
    def n(self):
        return len(self.pairs)

    def eigenvalues(self):
        return np.array([np.pi**2 * (k * k + l * l) for k, l in self.pairs])

    def evaluate(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        vals, gx, gy = [], [], []
        for k, l in self.pairs:
            c = (np.sqrt(2.0) if k else 1.0) * (np.sqrt(2.0) if l else 1.0)
            cx, cy = np.cos(k * np.pi * x[:, 0]), np.cos(l * np.pi * x[:, 1])
            sx, sy = np.sin(k * np.pi * x[:, 0]), np.sin(l * np.pi * x[:, 1])
            vals.append(c * cx * cy)
            gx.append(-c * k * np.pi * sx * cy)
            gy.append(-c * l * np.pi * cx * sy)
        v = np.stack(vals, axis=1)
        return v, np.stack([np.stack(gx, axis=1), np.stack(gy, axis=1)], axis=2)


def physical_gradients(basis, geo):
    """grad phi_k at the nodes: D Psi^{-T} applied to reference gradients."""
    def build():
        g, Gi = basis.grads, geo.Ginv[:, None]
        return g[..., 0:1] * Gi[..., 0] + g[..., 1:2] * Gi[..., 1]
    return geo.cached(("sgrad", id(basis)), build)


def project(basis, geo, f):
    """L2 projection of f (callable on physical points) onto the pushed-forward basis."""
    A = (basis.values * geo.wJ[:, None]).T @ basis.values
    b = basis.values.T @ (geo.wJ * f(geo.points))
    return np.linalg.solve(A, b)


# --------------------------------------------------------------------------
# problem and state
# --------------------------------------------------------------------------

def zero_drift(t, geo):
    return np.zeros((geo.n, 2)), np.zeros((geo.n, 2, 2))


@dataclass
class TransportProblem:
    """Basis, geometry provider and drift for the damped continuity equation.

    ``geometry(t)`` returns a NodeGeometry for the chart at time t (with the
    chart velocity V); ``drift(t, geo)`` returns (w, grad w) at its nodes,
    grad w[n, i, j] = d w_i / d x_j.
    """
    basis: object
    epsilon: float
    geometry: object = None
    drift: object = zero_drift

    def geo(self, t):
        if self.geometry is None:
            return identity_geometry(self.basis.quad)
        return self.geometry(t)


@dataclass
class FluidState:
    t: float
    beta: np.ndarray
    u: np.ndarray = None

    def copy(self):
        return FluidState(self.t, self.beta.copy(), None if self.u is None else self.u.copy())


@dataclass
class TransportRecord:
    t: list = field(default_factory=list)
    beta: list = field(default_factory=list)
    mass: list = field(default_factory=list)
    min_density: list = field(default_factory=list)
    l2sq: list = field(default_factory=list)
    dissipation: list = field(default_factory=list)
    flagged: list = field(default_factory=list)


def mass_matrix(basis, geo):
    return (basis.values * geo.wJ[:, None]).T @ basis.values


def assemble_transport_system(p, t, geo=None):
    """(A, C, D) at time t; the ODE is d/dt (A beta) = (C - eps D) beta."""
    geo = p.geo(t) if geo is None else geo
    A = mass_matrix(p.basis, geo)
    if np.linalg.cond(A) > MASS_COND_MAX:
        raise SingularMass("mass matrix condition number exceeds 1e12")
    grads = physical_gradients(p.basis, geo)
    w, _ = p.drift(t, geo)
    rel = w - geo.V
    adv = np.einsum("nkd,nd->nk", grads, rel)
    C = (adv * geo.wJ[:, None]).T @ p.basis.values
    gm = np.moveaxis(grads, 1, 0).reshape(grads.shape[1], -1)
    D = (gm * np.repeat(geo.wJ, 2)) @ gm.T
    return A, C, D


def density_samples(p, beta, geo=None):
    return p.basis.values @ beta


def total_mass(p, beta, geo):
    return float(geo.wJ @ (p.basis.values @ beta))


def nonnegativity_check(state, p=None, geo=None):
    """Minimum density over the quadrature nodes."""
    if p is None:
        raise ValueError("transport problem needed to sample the state")
    return float(np.min(density_samples(p, state.beta, geo)))


def _solve(M, rhs):
    try:
        lu = lu_factor(M, check_finite=True)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise LinearSolveFailure(str(exc)) from exc
    x = lu_solve(lu, rhs)
    if not np.all(np.isfinite(x)):
        raise LinearSolveFailure("non-finite solution")
    return x


def midpoint_update(p, beta0, t0, dt, geos=None):
    """One implicit midpoint step; returns beta1 and the midpoint matrices."""
    if geos is None:
        geos = (p.geo(t0), p.geo(t0 + 0.5 * dt), p.geo(t0 + dt))
    g0, gm, g1 = geos
    A0 = mass_matrix(p.basis, g0)
    A1 = mass_matrix(p.basis, g1)
    if np.linalg.cond(A1) > MASS_COND_MAX:
        raise SingularMass("mass matrix condition number exceeds 1e12")
    _, C, D = assemble_transport_system(p, t0 + 0.5 * dt, gm)
    K = C - p.epsilon * D
    beta1 = _solve(A1 - 0.5 * dt * K, (A0 + 0.5 * dt * K) @ beta0)
    return beta1, D, gm


def step_transport(state, p, dt, record=None, neg_tol=NEG_TOL):
    """Advance by dt with implicit midpoint; dt is halved (up to 6 times) on negativity.

    Returns the new state.  If the density still dips below -neg_tol after
    the last halving, the step is accepted and flagged in the record.
    """
    t0 = state.t
    for halvings in range(MAX_HALVINGS + 1):
        sub = dt / 2**halvings
        beta = state.beta
        ok = True
        diss = 0.0
        betas = []
        for k in range(2**halvings):
            tk = t0 + k * sub
            beta_new, D, gm = midpoint_update(p, beta, tk, sub)
            bm = 0.5 * (beta + beta_new)
            diss += sub * p.epsilon * float(bm @ D @ bm)
            beta = beta_new
            betas.append((tk + sub, beta))
            if np.min(p.basis.values @ beta) < -neg_tol:
                ok = False
                break
        if ok or halvings == MAX_HALVINGS:
            break
    new = FluidState(t0 + dt, beta)
    if record is not None:
        g1 = p.geo(t0 + dt)
        record.t.append(new.t)
        record.beta.append(beta.copy())
        record.mass.append(total_mass(p, beta, g1))
        rho = p.basis.values @ beta
        record.min_density.append(float(rho.min()))
        record.l2sq.append(float(g1.wJ @ rho**2))
        prev = record.dissipation[-1] if record.dissipation else 0.0
        record.dissipation.append(prev + diss)
        record.flagged.append(not ok)
    return new


def run_transport(p, beta0, dt, n_steps, t0=0.0):
    rec = TransportRecord()
    g0 = p.geo(t0)
    rho = p.basis.values @ beta0
    rec.t.append(t0)
    rec.beta.append(np.array(beta0, dtype=float))
    rec.mass.append(total_mass(p, beta0, g0))
    rec.min_density.append(float(rho.min()))
    rec.l2sq.append(float(g0.wJ @ rho**2))
    rec.dissipation.append(0.0)
    rec.flagged.append(False)
    state = FluidState(t0, np.array(beta0, dtype=float))
    for _ in range(n_steps):
        state = step_transport(state, p, dt, rec)
    return state, rec


def gronwall_constant(rec):
    """max_t (|rho(t)|^2 + eps int |grad rho|^2) / |rho_0|^2."""
    l2 = np.array(rec.l2sq)
    return float(np.max((l2 + np.array(rec.dissipation)) / l2[0]))


# --------------------------------------------------------------------------
# renormalised identity
# --------------------------------------------------------------------------

@dataclass
class Renormalizer:
    """theta with first and second derivatives."""
    f: object
    df: object
    d2f: object


def theta_identity():
    return Renormalizer(lambda z: z, lambda z: np.ones_like(z), lambda z: np.zeros_like(z))


def theta_square(cap=1e3):
    """z^2 up to |z| = cap, continued linearly (so theta'' = 0 for large arguments)."""
    def f(z):
        return np.where(np.abs(z) <= cap, z * z, cap * (2.0 * np.abs(z) - cap))

    def df(z):
        return np.where(np.abs(z) <= cap, 2.0 * z, 2.0 * cap * np.sign(z))

    def d2f(z):
        return np.where(np.abs(z) <= cap, 2.0, 0.0)
    return Renormalizer(f, df, d2f)


def theta_negative_part(delta=1e-3):
    """Smoothed negative part: 0 for z >= 0, z^2/(2 delta) on [-delta, 0], -z - delta/2 below."""
    def f(z):
        return np.where(z >= 0.0, 0.0, np.where(z >= -delta, z * z / (2.0 * delta), -z - 0.5 * delta))

    def df(z):
        return np.where(z >= 0.0, 0.0, np.where(z >= -delta, z / delta, -1.0))

    def d2f(z):
        return np.where((z < 0.0) & (z >= -delta), 1.0 / delta, 0.0)
    return Renormalizer(f, df, d2f)


def boundary_drift_term(p, t, beta, theta, psi_fn, bgeo):
    """int over the boundary of psi (rho theta' - theta)(w - V) . n; bgeo supplies the boundary data."""
    if bgeo is None:
        return 0.0
    return bgeo(t, beta, theta, psi_fn)


def renormalized_residual(p, rec, theta, psi_fn, bterm=None):
    """|int theta(rho) psi |_{t0}^{t1} - int_{t0}^{t1} RHS dt| along a stored trajectory.

    RHS = int theta(rho)(d_t psi + w . grad psi) - (rho theta' - theta) div w psi
          - eps theta'(rho) grad rho . grad psi - eps theta''(rho) |grad rho|^2 psi
          (+ a boundary term when w . n differs from the boundary speed).
    The time integral uses the midpoint rule on the step midpoints, matching
    the time discretisation.  ``psi_fn(t, x)`` returns (psi, d_t psi, grad psi).
    """
    def pairing(t, beta):
        geo = p.geo(t)
        rho = p.basis.values @ beta
        val, _, _ = psi_fn(t, geo.points)
        return float(geo.wJ @ (theta.f(rho) * val))

    lhs = pairing(rec.t[-1], rec.beta[-1]) - pairing(rec.t[0], rec.beta[0])
    rhs = 0.0
    for k in range(len(rec.t) - 1):
        dt = rec.t[k + 1] - rec.t[k]
        tm = 0.5 * (rec.t[k] + rec.t[k + 1])
        bm = 0.5 * (rec.beta[k] + rec.beta[k + 1])
        geo = p.geo(tm)
        rho = p.basis.values @ bm
        grads = physical_gradients(p.basis, geo)
        grho = np.einsum("nkd,k->nd", grads, bm)
        w, gw = p.drift(tm, geo)
        divw = gw[:, 0, 0] + gw[:, 1, 1]
        val, dtv, gpsi = psi_fn(tm, geo.points)
        th, dth, d2th = theta.f(rho), theta.df(rho), theta.d2f(rho)
        integrand = (th * (dtv + np.sum(w * gpsi, axis=1))
                     - (rho * dth - th) * divw * val
                     - p.epsilon * dth * np.sum(grho * gpsi, axis=1)
                     - p.epsilon * d2th * np.sum(grho * grho, axis=1) * val)
        rhs += dt * float(geo.wJ @ integrand)
        if bterm is not None:
            rhs += dt * bterm(tm, bm, theta, psi_fn)
    return abs(lhs - rhs)


def continuity_residual(p, rec, psi_fn):
    return renormalized_residual(p, rec, theta_identity(), psi_fn)


def negative_part_integral(p, beta, geo, delta=1e-3):
    th = theta_negative_part(delta)
    return float(geo.wJ @ th.f(p.basis.values @ beta))


def check_nonnegative(rho):
    if np.any(np.asarray(rho) < 0):
        raise NegativeDensity("density must be nonnegative")
