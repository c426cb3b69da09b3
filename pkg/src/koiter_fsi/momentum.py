"""Coupled momentum + shell Galerkin system on the moving domain.

Velocity u = sum alpha_k omega_k with omega_k = omega~_k o Psi^{-1}.  The
reference fields are either interior modes X (vanishing on the whole
boundary) or harmonic lifts Y of shell modes w_k nu (vanishing on the rigid
part).  The shell velocity is d_t eta = sum (W alpha)_k w_k, so the kinematic
condition tr u = d_t eta nu on M holds by construction.

Time stepping solves, for the midpoint value m = (alpha0 + alpha1)/2,

    Abar (alpha1 - alpha0)/dt + (1/2)(dA/dt) m + L m + W^T S eta_mid = c

with L = skew(N) - eps skew(R) + Visc + eps P.  Testing with m shows that
the discrete kinetic + elastic energy changes by exactly -dt m.Lsym m + dt m.c
up to the term (1/8) d.(A1 - A0).d, d = alpha1 - alpha0.
"""
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.polynomial import polyval
from scipy.linalg import cho_factor, LinAlgError

from .errors import LiftSolveFailure, LinearSolveFailure, NotSPD, ValidationError
from .transport import _solve, monomial_exponents, _monomials, physical_gradients


@dataclass
class FluidParams:
    mu: float = 1.0
    lam: float = 0.0
    a: float = 1.0
    gamma: float = 2.0
    delta: float = 0.0
    beta: float = 4.0
    epsilon: float = 1e-2
    kappa: float = 1e-3

    def __post_init__(self):
        if not self.mu > 0:
            raise ValidationError("mu must be positive")
        if not self.lam + 2.0 * self.mu / 3.0 > 0:
            raise ValidationError("lambda + 2 mu / 3 must be positive")
        if not self.a > 0:
            raise ValidationError("pressure constant a must be positive")
        if not self.gamma > 1:
            raise ValidationError("gamma must exceed 1")
        if self.beta < 4:
            raise ValidationError("beta must be >= 4")
        if self.delta < 0 or self.epsilon < 0 or self.kappa < 0:
            raise ValidationError("delta, epsilon, kappa must be nonnegative")

    def pressure(self, rho):
        r = np.maximum(rho, 0.0)
        return self.a * r**self.gamma + self.delta * r**self.beta

    def internal_gamma(self, rho):
        return self.a / (self.gamma - 1.0) * np.maximum(rho, 0.0) ** self.gamma

    def internal_beta(self, rho):
        return self.delta / (self.beta - 1.0) * np.maximum(rho, 0.0) ** self.beta

    def pressure_second(self, rho):
        """P''(rho) for P = a rho^g/(g-1) + delta rho^b/(b-1), so that rho P'' = p'."""
        r = np.maximum(rho, 1e-300)
        return self.a * self.gamma * r ** (self.gamma - 2.0) + self.delta * self.beta * r ** (self.beta - 2.0)


# --------------------------------------------------------------------------
# harmonic lifts
# --------------------------------------------------------------------------

class HarmonicLift:
    """Harmonic function in the unit disk with boundary values g(theta).

    The datum is sampled at nf equispaced angles and expanded with a real
    FFT; inside the disk u = Re sum c_n r^n e^{i n theta}.  On the circle the
    datum itself is returned, so traces are exact.
    """

    def __init__(self, datum, nf=8192, tail_tol=1e-3):
        self.datum = datum
        th = 2.0 * np.pi * np.arange(nf) / nf
        g = np.asarray(datum(th), dtype=float)
        if not np.all(np.isfinite(g)):
            raise LiftSolveFailure("non-finite boundary datum")
        a = np.fft.rfft(g) / nf
        a[1:] *= 2.0
        if nf % 2 == 0:
            a[-1] *= 0.5
        nrm = np.sum(np.abs(a))
        if nrm > 0 and np.sum(np.abs(a[len(a) // 2:])) > tail_tol * nrm:
            raise LiftSolveFailure("Fourier series of the lift datum does not converge")
        self.c = a
        self.n = np.arange(len(a))

    def eval_tensor(self, ur, uth):
        """Values and Cartesian gradients on the tensor grid ur x uth."""
        ur = np.asarray(ur, dtype=float)
        E = np.exp(1j * np.outer(uth, self.n))                     # (nth, nm)
        rp = ur[:, None] ** self.n[None, :]                          # (nr, nm)
        rpm = np.where(self.n[None, :] > 0, self.n[None, :] * ur[:, None] ** np.maximum(self.n - 1, 0)[None, :], 0.0)
        val = np.real((rp * self.c) @ E.T)
        dr = np.real((rpm * self.c) @ E.T)
        dth_r = np.real((rpm * self.c * 1j) @ E.T)                   # (1/r) d/dtheta
        cth, sth = np.cos(uth)[None, :], np.sin(uth)[None, :]
        gx = dr * cth - dth_r * sth
        gy = dr * sth + dth_r * cth
        on = np.isclose(ur, 1.0, rtol=0, atol=1e-14)
        if np.any(on):
            val[on] = np.asarray(self.datum(uth), dtype=float)[None, :]
        return val, gx, gy

    def eval_points(self, x):
        """Values and gradients at scattered points; u = Re f(z), grad u = (Re f', -Im f')."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        z = x[:, 0] + 1j * x[:, 1]
        val = np.real(polyval(z, self.c))
        df = polyval(z, self.c[1:] * self.n[1:]) if len(self.c) > 1 else np.zeros_like(z)
        r = np.abs(z)
        on = r >= 1.0 - 1e-14
        if np.any(on):
            val[on] = np.asarray(self.datum(np.angle(z[on])), dtype=float)
        return val, np.stack([np.real(df), -np.imag(df)], axis=1)


# --------------------------------------------------------------------------
# coupled basis
# --------------------------------------------------------------------------

class CoupledBasis:
    """Enumeration X1, Y1, X2, Y2, ... of interior and lifted shell modes.

    Interior modes are (1 - r^2) q(x) e_c with q ranging over monomials of
    degree <= degree, orthonormalised in L2 of the disk.  Lifted modes are
    componentwise harmonic extensions of w_k nu, extended by zero to the
    rigid part.  ``W`` maps a coefficient vector to shell velocity
    coefficients.
    """

    def __init__(self, quad, shell_basis, ref, degree=3, n_fluid=None, shell_only=False, nf=8192):
        self.quad = quad
        self.shell = shell_basis
        self.ref = ref
        self.shell_only = shell_only
        self.degree = degree
        # interior scalar functions
        self.exps = monomial_exponents(degree)
        v, _ = _monomials(quad.points, self.exps)
        bub = 1.0 - np.sum(quad.points**2, axis=1)
        sw = np.sqrt(quad.weights)
        _, Rm = np.linalg.qr(sw[:, None] * (bub[:, None] * v))
        Rm = Rm * np.sign(np.diag(Rm))[:, None]
        self.xcoef = np.linalg.inv(Rm)
        n_x = 0 if shell_only else 2 * len(self.exps)
        if n_fluid is not None and not shell_only:
            n_x = min(n_x, n_fluid)
        self.n_x = n_x
        self.n_y = shell_basis.n
        # shell lifts, one per component
        self.lifts = []
        for k in range(self.n_y):
            lx = HarmonicLift(self._datum(k, 0), nf)
            ly = HarmonicLift(self._datum(k, 1), nf)
            self.lifts.append((lx, ly))
        # enumeration
        kinds = []
        xi = yi = 0
        while xi < self.n_x or yi < self.n_y:
            if xi < self.n_x:
                kinds.append(("X", xi))
                xi += 1
            if yi < self.n_y:
                kinds.append(("Y", yi))
                yi += 1
        self.kinds = kinds
        self.W = np.zeros((self.n_y, len(kinds)))
        for j, (kind, i) in enumerate(kinds):
            if kind == "Y":
                self.W[i, j] = 1.0
        self.values, self.grads = self._tabulate_quad()

    @property
    def n(self):
        return len(self.kinds)

    def _datum(self, k, comp):
        shell, arc0 = self.shell, self.ref.shell_arc[0]

        def g(theta):
            x = np.mod(np.asarray(theta, dtype=float) - arc0, 2.0 * np.pi)
            w = shell.eval(x)[k]
            return w * (np.cos(theta) if comp == 0 else np.sin(theta))
        return g

    def _x_eval(self, x):
        v, g = _monomials(x, self.exps)
        bub = 1.0 - np.sum(x**2, axis=1)
        s = (bub[:, None] * v) @ self.xcoef
        # grad (bub q) = bub grad q - 2 x q
        gs = bub[:, None, None] * np.einsum("npd,pk->nkd", g, self.xcoef) \
            - 2.0 * x[:, None, :] * (v @ self.xcoef)[:, :, None]
        return s, gs

    def _assemble(self, xs, xg, yvals, ygrads, npts):
        vals = np.zeros((npts, self.n, 2))
        grads = np.zeros((npts, self.n, 2, 2))
        for j, (kind, i) in enumerate(self.kinds):
            if kind == "X":
                s, c = divmod(i, 2)
                vals[:, j, c] = xs[:, s]
                grads[:, j, c, :] = xg[:, s, :]
            else:
                vals[:, j, :] = yvals[i]
                grads[:, j, :, :] = ygrads[i]
        return vals, grads

    def _tabulate_quad(self):
        q = self.quad
        xs, xg = self._x_eval(q.points)
        ur, ir = np.unique(q.r, return_inverse=True)
        ut, it = np.unique(q.theta, return_inverse=True)
        yvals, ygrads = [], []
        for lx, ly in self.lifts:
            vx, gxx, gxy = lx.eval_tensor(ur, ut)
            vy, gyx, gyy = ly.eval_tensor(ur, ut)
            yvals.append(np.stack([vx[ir, it], vy[ir, it]], axis=1))
            ygrads.append(np.stack([np.stack([gxx[ir, it], gxy[ir, it]], axis=1),
                                    np.stack([gyx[ir, it], gyy[ir, it]], axis=1)], axis=1))
        return self._assemble(xs, xg, yvals, ygrads, q.n)

    def evaluate(self, x):
        """Values (P, N, 2) and reference gradients (P, N, 2, 2) at reference points."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        xs, xg = self._x_eval(x)
        yvals, ygrads = [], []
        for lx, ly in self.lifts:
            vx, gx = lx.eval_points(x)
            vy, gy = ly.eval_points(x)
            yvals.append(np.stack([vx, vy], axis=1))
            ygrads.append(np.stack([gx, gy], axis=1))
        return self._assemble(xs, xg, yvals, ygrads, len(x))

    def boundary_values(self, theta):
        """Exact traces on the reference circle, shape (len(theta), N, 2)."""
        theta = np.asarray(theta, dtype=float)
        out = np.zeros((len(theta), self.n, 2))
        for j, (kind, i) in enumerate(self.kinds):
            if kind == "Y":
                lx, ly = self.lifts[i]
                out[:, j, 0] = lx.datum(theta)
                out[:, j, 1] = ly.datum(theta)
        return out


def vector_gradients(basis, geo):
    """Physical gradients grad omega[n, k, c, d] = d omega_c / d x_d."""
    def build():
        g, Gi = basis.grads, geo.Ginv[:, None, None]
        return g[..., 0:1] * Gi[..., 0] + g[..., 1:2] * Gi[..., 1]
    return geo.cached(("vgrad", id(basis)), build)


def pair(w, X, Y=None):
    """sum_n w_n X[n, i, ...] . Y[n, j, ...] as a matrix product."""
    n, N = X.shape[:2]
    Xm = np.moveaxis(X, 1, 0).reshape(N, -1)
    Ym = Xm if Y is None else np.moveaxis(Y, 1, 0).reshape(Y.shape[1], -1)
    wr = np.repeat(w, Xm.shape[1] // n)
    return (Xm * wr) @ Ym.T


def skew(X):
    return 0.5 * (X - X.T)


# --------------------------------------------------------------------------
# forcing
# --------------------------------------------------------------------------

@dataclass
class Forcing:
    """Body force f(t, x) -> (n, 2) and shell load coefficients g(t) -> (n_shell,)."""
    f: object = None
    g: object = None
    t_off: float = np.inf

    def body(self, t, x):
        if self.f is None or t > self.t_off:
            return np.zeros((len(x), 2))
        return self.f(t, x)

    def shell(self, t, n_shell):
        if self.g is None or t > self.t_off:
            return np.zeros(n_shell)
        return np.asarray(self.g(t), dtype=float)


# --------------------------------------------------------------------------
# assembly and stepping
# --------------------------------------------------------------------------

@dataclass
class MomentumSystem:
    basis: CoupledBasis
    params: FluidParams
    stiffness: np.ndarray
    forcing: Forcing = field(default_factory=Forcing)

    def shell_gram(self):
        return self.basis.W.T @ self.basis.W

    def mass(self, geo, rho):
        """A_ij = int (rho + kappa) omega_i . omega_j + int_M w_i w_j."""
        shell = self.shell_gram()
        if self.basis.shell_only:
            return shell
        wt = geo.wJ * (rho + self.params.kappa)
        V = self.basis.values
        return pair(wt, V) + shell

    def operators(self, geo, rho, grho, v):
        """Midpoint operators: dict with N, R, Visc, P, div (for later use)."""
        b = self.basis
        N = b.n
        if b.shell_only:
            Z = np.zeros((N, N))
            return dict(N=Z, R=Z, Visc=Z, P=Z, grads=None, div=None)
        V = b.values
        G = vector_gradients(b, geo)
        div = G[:, :, 0, 0] + G[:, :, 1, 1]
        rel = v - geo.V
        along = np.matmul(G, rel[:, None, :, None])[..., 0]
        Nm = pair(geo.wJ * rho, V, along)
        along_r = np.matmul(G, grho[:, None, :, None])[..., 0]
        Rm = pair(geo.wJ, V, along_r)
        gg = pair(geo.wJ, G)
        dd = pair(geo.wJ, div[:, :, None])
        Visc = self.params.mu * gg + (self.params.lam + self.params.mu) * dd
        P = pair(geo.wJ * rho, G)
        return dict(N=Nm, R=Rm, Visc=Visc, P=P, grads=G, div=div)

    def load(self, geo, rho, t, ops):
        """c_i = int p div omega_i + int rho f . omega_i + int_M g w_i."""
        b = self.basis
        c = b.W.T @ self.forcing.shell(t, b.n_y)
        if b.shell_only:
            return c, np.zeros(b.n), np.zeros(b.n)
        cp = ops["div"].T @ (geo.wJ * self.params.pressure(rho))
        f = self.forcing.body(t, geo.points)
        cf = np.einsum("nkc,nc->k", b.values, f * (geo.wJ * rho)[:, None])
        return c + cp + cf, cp, cf

    def linear_operator(self, ops):
        eps = self.params.epsilon
        return skew(ops["N"]) - eps * skew(ops["R"]) + ops["Visc"] + eps * ops["P"]


def check_spd(A):
    try:
        cho_factor(A, lower=True, check_finite=True)
    except LinAlgError as exc:
        raise NotSPD("mass matrix has a nonpositive pivot") from exc
    return float(np.linalg.cond(A))


@dataclass
class MomentumStep:
    alpha: np.ndarray
    eta: np.ndarray
    m: np.ndarray
    A0: np.ndarray
    A1: np.ndarray
    Lsym_work: float
    load_work: float
    pressure_work: float
    force_work: float
    shell_work: float


def step_momentum(sys, alpha0, eta0, dt, A0, A1, ops, c, cp=None, cf=None):
    """Implicit midpoint update of (alpha, eta); see the module docstring."""
    W = sys.basis.W
    S = sys.stiffness
    L = sys.linear_operator(ops)
    Abar = 0.5 * (A0 + A1)
    M = 2.0 * Abar + 0.5 * (A1 - A0) + dt * L + 0.5 * dt * dt * (W.T @ S @ W)
    rhs = dt * c + 2.0 * Abar @ alpha0 - dt * (W.T @ (S @ eta0))
    m = _solve(M, rhs)
    alpha1 = 2.0 * m - alpha0
    eta1 = eta0 + dt * (W @ m)
    Lsym = 0.5 * (L + L.T)
    cp = np.zeros_like(c) if cp is None else cp
    cf = np.zeros_like(c) if cf is None else cf
    return MomentumStep(alpha1, eta1, m, A0, A1,
                        dt * float(m @ Lsym @ m), dt * float(m @ c),
                        dt * float(m @ cp), dt * float(m @ cf),
                        dt * float(m @ (c - cp - cf)))


def kinetic_energy(alpha, A):
    """(1/2) alpha.A.alpha = (1/2) int (rho + kappa)|u|^2 + (1/2) int_M |d_t eta|^2."""
    return 0.5 * float(alpha @ A @ alpha)


def fluid_kinetic(alpha, A, W):
    return 0.5 * float(alpha @ A @ alpha) - 0.5 * float((W @ alpha) @ (W @ alpha))


def elastic_energy(eta, S):
    return 0.5 * float(eta @ S @ eta)


def discrete_energy_residual(step, alpha0, eta0, S):
    """|Delta(kinetic + elastic) + dissipation - work| over one step."""
    dE = kinetic_energy(step.alpha, step.A1) - kinetic_energy(alpha0, step.A0)
    dK = elastic_energy(step.eta, S) - elastic_energy(eta0, S)
    return abs(dE + dK + step.Lsym_work - step.load_work)


def energy_step_defect(alpha0, alpha1, A0, A1):
    """The exact scheme defect (1/8) d.(A1 - A0).d."""
    d = alpha1 - alpha0
    return 0.125 * float(d @ (A1 - A0) @ d)


def velocity_at(basis, alpha, x_ref):
    v, _ = basis.evaluate(x_ref)
    return np.einsum("k,nkc->nc", alpha, v)


def trace_residual(basis, alpha, theta, ref):
    """L2 norm on the boundary of tr u - (W alpha . w) nu, using exact traces."""
    tr = np.einsum("k,nkc->nc", alpha, basis.boundary_values(theta))
    x = np.mod(np.asarray(theta) - ref.shell_arc[0], 2.0 * np.pi)
    etad = (basis.W @ alpha) @ basis.shell.eval(x)
    want = etad[:, None] * np.stack([np.cos(theta), np.sin(theta)], axis=1)
    return float(np.sqrt(np.mean(np.sum((tr - want) ** 2, axis=1)) * 2.0 * np.pi))
