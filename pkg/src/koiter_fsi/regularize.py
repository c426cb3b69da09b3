"""Mollifiers: one-sided in time, periodic in the boundary parameter, even in space.

All kernels are the polynomial bump c (1 - x^2)^4.  On a grid the discrete
weights are the exact cell integrals of the kernel, so they are nonnegative
and sum to one up to rounding; this gives the maximum principle and
preservation of constants exactly, and the operator degenerates to the
identity when kappa is small compared with the grid spacing.
"""
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve1d

from .errors import KappaTooLarge
from .geometry import gauss_cells

BUMP_C = 315.0 / 256.0


def bump(x):
    x = np.asarray(x, dtype=float)
    return np.where(np.abs(x) < 1.0, BUMP_C * (1.0 - x * x) ** 4, 0.0)


def bump_cdf(x):
    x = np.clip(np.asarray(x, dtype=float), -1.0, 1.0)
    x2 = x * x
    poly = x * (1.0 - x2 * (4.0 / 3.0 - x2 * (6.0 / 5.0 - x2 * (4.0 / 7.0 - x2 / 9.0))))
    return 0.5 + BUMP_C * poly


def cell_weights(h, radius, center=0.0):
    """Weights w_j = int over [jh - h/2, jh + h/2] of the bump of given radius and centre.

    Returns (offsets j, weights).  The weights sum to one.
    """
    if radius <= 0:
        return np.array([0]), np.array([1.0])
    j0 = int(np.floor((center - radius) / h - 0.5))
    j1 = int(np.ceil((center + radius) / h + 0.5))
    j = np.arange(j0, j1 + 1)
    w = bump_cdf((j * h + 0.5 * h - center) / radius) - bump_cdf((j * h - 0.5 * h - center) / radius)
    keep = w > 0.0
    j, w = j[keep], w[keep]
    return j, w / w.sum()


def smooth_ramp(u):
    """C-infinity monotone ramp: 0 for u <= 0, 1 for u >= 1."""
    u = np.asarray(u, dtype=float)
    f = lambda z: np.where(z > 0.0, np.exp(-1.0 / np.maximum(z, 1e-300)), 0.0)
    a, b = f(u), f(1.0 - u)
    return a / (a + b)


def smooth_ramp_derivative(u, h=1e-6):
    return (smooth_ramp(u + h) - smooth_ramp(u - h)) / (2.0 * h)


@dataclass
class MollifierConfig:
    kappa: float
    T: float
    arc_length: float = np.pi
    periodic_length: float = 2.0 * np.pi

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if self.kappa > 0.25 * self.T:
            raise KappaTooLarge(f"kappa = {self.kappa:g} > T/4 = {0.25 * self.T:g}")
        if self.kappa > 0.25 * self.arc_length:
            raise KappaTooLarge(f"kappa = {self.kappa:g} > arc/4 = {0.25 * self.arc_length:g}")

    def psi(self, t):
        """Blend weight of the backward kernel: 0 on [0, T/4], 1 on [3T/4, T]."""
        return smooth_ramp((np.asarray(t, dtype=float) - 0.25 * self.T) / (0.5 * self.T))

    def dpsi(self, t):
        return smooth_ramp_derivative((np.asarray(t, dtype=float) - 0.25 * self.T) / (0.5 * self.T)) / (0.5 * self.T)

    def time_kernel(self, dt, side):
        """Discrete tau^+ (side=+1, support [0, kappa)) or tau^- (side=-1)."""
        return cell_weights(dt, 0.5 * self.kappa, side * 0.5 * self.kappa)

    def space_kernel(self, dx):
        return cell_weights(dx, self.kappa)


def _shift_sum(Z, offs, w, axis, mode):
    n = Z.shape[axis]
    out = np.zeros_like(Z, dtype=float)
    idx = np.arange(n)
    for j, wj in zip(offs, w):
        src = idx - j
        if mode == "clip":
            src = np.clip(src, 0, n - 1)
        else:
            src = np.mod(src, n)
        out += wj * np.take(Z, src, axis=axis)
    return out


def one_sided(Z, dt, cfg, side):
    """(tau^side * zeta)(t_n) = sum_j w_j zeta(t_{n-j}) along axis 0.

    Samples beyond the ends of the time grid are replaced by the end value;
    they are only reached where the blend weight of that side vanishes.
    """
    offs, w = cfg.time_kernel(dt, side)
    return _shift_sum(np.asarray(Z, dtype=float), offs, w, 0, "clip")


def mollify_time(Z, dt, cfg):
    """Blended one-sided time mollification of samples Z[n, ...] at t_n = n dt."""
    Z = np.asarray(Z, dtype=float)
    t = dt * np.arange(Z.shape[0])
    psi = cfg.psi(t).reshape((-1,) + (1,) * (Z.ndim - 1))
    return psi * one_sided(Z, dt, cfg, +1) + (1.0 - psi) * one_sided(Z, dt, cfg, -1)


def mollify_space_periodic(Z, dx, cfg):
    """Periodic convolution in the boundary parameter (last axis, uniform spacing dx)."""
    offs, w = cfg.space_kernel(dx)
    return _shift_sum(np.asarray(Z, dtype=float), offs, w, -1, "wrap")


def mollify_displacement(zeta, dt, cfg, dx=None):
    """Space-time regularisation of boundary samples zeta[n, i] (time n, parameter i).

    With dx None only the time direction is smoothed.
    """
    Z = mollify_time(zeta, dt, cfg)
    if dx is not None:
        Z = mollify_space_periodic(Z, dx, cfg)
    return Z


def transition_term(zeta, dt, cfg):
    """psi'(t) (tau^+ - tau^-) * zeta: the part of d/dt R zeta not given by R(d/dt zeta)."""
    Z = np.asarray(zeta, dtype=float)
    t = dt * np.arange(Z.shape[0])
    dpsi = cfg.dpsi(t).reshape((-1,) + (1,) * (Z.ndim - 1))
    return dpsi * (one_sided(Z, dt, cfg, +1) - one_sided(Z, dt, cfg, -1))


def flat_mask(t, cfg):
    """Times where the blend weight is locally constant (0 or 1)."""
    t = np.asarray(t, dtype=float)
    return (t <= 0.25 * cfg.T) | (t >= 0.75 * cfg.T)


def mollify_field(v, chi, spacing, cfg):
    """Even separable smoothing of chi v on a uniform grid, zero outside the grid.

    ``v`` and ``chi`` have shape (nt, nx, ny) (or any number of axes matching
    ``spacing``).  The discrete operator is a symmetric matrix, so
    sum (R v) u = sum v (R u) holds up to rounding.
    """
    out = np.asarray(v, dtype=float) * np.asarray(chi, dtype=float)
    for axis, h in enumerate(spacing):
        offs, w = cell_weights(h, cfg.kappa)
        # symmetric kernel: offsets run -J..J
        J = max(abs(offs[0]), abs(offs[-1]))
        full = np.zeros(2 * J + 1)
        full[offs + J] = w
        full = 0.5 * (full + full[::-1])
        out = convolve1d(out, full, axis=axis, mode="constant", cval=0.0)
    return out


class MollifiedShellBasis:
    """Spatially mollified shell functions phi_kappa * w_k on the boundary parameter.

    The convolution integral is evaluated by Gauss quadrature over the kernel
    support, using the clamped extension by zero of w_k.
    """

    def __init__(self, basis, kappa, n_cells=8, order=6):
        self.basis = basis
        self.kappa = float(kappa)
        y, wy = gauss_cells(np.linspace(-self.kappa, self.kappa, n_cells + 1), order)
        self.y = y
        self.wy = wy * bump(y / self.kappa) / self.kappa
        self.wy /= self.wy.sum()
        self._memo = {}

    @property
    def n(self):
        return self.basis.n

    def _eval_unique(self, u, d):
        # charts are rebuilt at the same quadrature angles over and over
        key = (d, u.tobytes())
        acc = self._memo.get(key)
        if acc is None:
            acc = np.zeros((self.basis.n, len(u)))
            for yk, wk in zip(self.y, self.wy):
                acc += wk * self.basis.eval(u - yk, d)
            if len(self._memo) < 64:
                self._memo[key] = acc
        return acc

    def eval(self, x, d=0):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        u, inv = np.unique(x, return_inverse=True)
        return self._eval_unique(u, d)[:, inv.ravel()]
