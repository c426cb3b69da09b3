"""Linear clamped shell on the arc M: K'(eta) = m eta'''' - b2 eta'' + b0 eta.

Displacements are expanded in the L2-orthonormal eigenfunctions of the
clamped fourth-derivative operator on [0, ell], where ell is the arc length
of M.  In that basis m d^4 is diagonal; the b2 term is a dense Gram matrix
of first derivatives.
"""
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh
from scipy.optimize import brentq

from .errors import ValidationError
from .geometry import gauss_cells, wrap_angle


@dataclass(frozen=True)
class ShellParams:
    m: float = 1.0
    b2: float = 0.0
    b0: float = 0.0

    def __post_init__(self):
        if not self.m > 0:
            raise ValidationError("shell m must be positive")
        if self.b2 < 0 or self.b0 < 0:
            raise ValidationError("shell b2, b0 must be nonnegative")


def beam_roots(n):
    """Roots of cos(x) cosh(x) = 1, x > 0, ascending (4.7300407..., 7.8532046..., ...)."""
    f = lambda x: np.cos(x) - 1.0 / np.cosh(x)
    return np.array([brentq(f, (k + 1.5) * np.pi - 0.3, (k + 1.5) * np.pi + 0.3, xtol=1e-15)
                     for k in range(n)])


def _mode_derivative(x, beta, ell, d):
    """d-th derivative of cosh - sig sinh - cos + sig sin at beta x, overflow-free."""
    bl = beta * ell
    e1 = np.exp(-bl)
    # 1 - sig = N 2 e^{-bl} / (1 - e^{-2bl} - 2 sin(bl) e^{-bl})
    N = -e1 - np.sin(bl) + np.cos(bl)
    one_m_sig = 2.0 * N * e1 / (1.0 - e1 * e1 - 2.0 * np.sin(bl) * e1)
    sig = 1.0 - one_m_sig
    bx = beta * x
    grow = 0.5 * one_m_sig * np.exp(bx)
    decay = 0.5 * (1.0 + sig) * np.exp(-bx) * (-1.0) ** d
    ph = bx + 0.5 * d * np.pi
    return beta**d * (grow + decay - np.cos(ph) + sig * np.sin(ph))


class ShellBasis:
    """Clamped eigenbasis w_k on [0, ell] with eigenvalues lam_k of d^4."""

    def __init__(self, n_modes, length=np.pi, quad_cells=64, quad_order=8):
        if n_modes < 1:
            raise ValueError("n_modes must be >= 1")
        self.n = int(n_modes)
        self.length = float(length)
        self.beta = beam_roots(self.n) / self.length
        self.eigenvalues = self.beta**4
        self.qx, self.qw = gauss_cells(np.linspace(0.0, self.length, quad_cells + 1), quad_order)
        self.scale = np.ones(self.n)
        raw = self.eval(self.qx)
        self.scale = 1.0 / np.sqrt(raw**2 @ self.qw)
        d1 = self.eval(self.qx, 1)
        d2 = self.eval(self.qx, 2)
        self.gram1 = (d1 * self.qw) @ d1.T
        self.gram2 = (d2 * self.qw) @ d2.T

    def eval(self, x, d=0):
        """Array (n_modes, len(x)) of d-th derivatives; zero outside [0, ell]."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        inside = (x >= 0.0) & (x <= self.length)
        xs = np.where(inside, x, 0.0)
        out = np.stack([_mode_derivative(xs, b, self.length, d) for b in self.beta])
        out *= self.scale[:, None]
        return np.where(inside[None, :], out, 0.0)

    def gram(self):
        v = self.eval(self.qx)
        return (v * self.qw) @ v.T

    def synthesize(self, coeffs, x, d=0):
        return np.asarray(coeffs) @ self.eval(x, d)

    def project(self, f):
        """L2 projection of a function on [0, ell] to coefficients."""
        return self.eval(self.qx) @ (self.qw * f(self.qx))


def shell_eigenbasis(n_modes, length=np.pi, **kw):
    return ShellBasis(n_modes, length, **kw)


def stiffness_matrix(basis, p):
    return p.m * np.diag(basis.eigenvalues) + p.b2 * basis.gram1 + p.b0 * np.eye(basis.n)


def koiter_gradient(coeffs, p, basis):
    """Coefficients of K'(eta) = m eta'''' - b2 eta'' + b0 eta."""
    return stiffness_matrix(basis, p) @ np.asarray(coeffs, dtype=float)


def koiter_energy(coeffs, p, basis):
    c = np.asarray(coeffs, dtype=float)
    return 0.5 * float(c @ koiter_gradient(c, p, basis))


def bending_integral(coeffs, basis):
    """Discrete int |eta''|^2 by quadrature."""
    c = np.asarray(coeffs, dtype=float)
    return float(c @ basis.gram2 @ c)


def coercivity_constant(p, basis):
    """Largest c0 with K(eta) >= c0 int |eta''|^2 on the discrete space."""
    S = stiffness_matrix(basis, p)
    w = eigh(0.5 * S, basis.gram2, eigvals_only=True)
    return float(w[0])


@dataclass
class DisplacementState:
    """Shell state: coefficients of eta and d eta/dt in a ShellBasis."""
    eta: np.ndarray
    eta_dot: np.ndarray
    basis: ShellBasis

    def samples(self, x):
        return self.basis.synthesize(self.eta, x), self.basis.synthesize(self.eta_dot, x)

    def sup(self, n=1024):
        x = np.linspace(0.0, self.basis.length, n)
        return float(np.max(np.abs(self.basis.synthesize(self.eta, x))))


class ShellDisplacement:
    """Boundary displacement theta -> (eta, d eta/d theta, d eta/dt) from shell coefficients.

    The shell arc parameter is the angle measured from the start of M, so the
    clamped extension by zero covers the rigid part automatically.
    """

    def __init__(self, basis, arc_start, coeffs, coeffs_dot=None):
        self.basis = basis
        self.arc_start = float(arc_start)
        self.c = np.asarray(coeffs, dtype=float)
        self.cd = np.zeros_like(self.c) if coeffs_dot is None else np.asarray(coeffs_dot, dtype=float)

    def arc(self, theta):
        return wrap_angle(np.asarray(theta, dtype=float) - self.arc_start)

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        x = self.arc(theta).ravel()
        v = self.basis.eval(x)
        d = self.basis.eval(x, 1)
        sh = theta.shape
        return ((self.c @ v).reshape(sh), (self.c @ d).reshape(sh), (self.cd @ v).reshape(sh))
