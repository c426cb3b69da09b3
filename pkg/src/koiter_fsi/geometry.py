"""Tubular-neighbourhood charts around the reference boundary.

The computational reference is the unit disk.  Points are handled in polar
coordinates (r, theta); every chart moves points along the radial direction
only, so a chart is fully described by the radius map R(r, theta) and its
derivatives.  A chart may be a stack of layers: the first layer displaces the
unit circle, later layers (added by a continuation restart) displace the
boundary of the previous image along the same original normal.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import DisplacementTooLarge, OutOfTube


TWO_PI = 2.0 * np.pi
NEWTON_TOL = 1e-12
NEWTON_MAXIT = 50


def smoothstep5(u):
    """Quintic smoothstep on [0, 1] with its derivative; flat outside."""
    u = np.clip(u, 0.0, 1.0)
    val = u**3 * (10.0 - 15.0 * u + 6.0 * u * u)
    der = 30.0 * u * u * (1.0 - u) ** 2
    return val, der


def cutoff_phi(s, L):
    """Profile phi(s): 0 for s <= -L/2, 1 for s >= -L/4, quintic in between.

    Returns (phi, dphi/ds).
    """
    s = np.asarray(s, dtype=float)
    u = (s + 0.5 * L) / (0.25 * L)
    val, der = smoothstep5(u)
    return val, der / (0.25 * L)


def wrap_angle(theta):
    return np.mod(theta, TWO_PI)


# --------------------------------------------------------------------------
# boundary displacements: callables theta -> (eta, d eta/d theta, d eta/dt)
# --------------------------------------------------------------------------

class FunctionDisplacement:
    """Displacement given by plain functions of the boundary angle."""

    def __init__(self, f, df=None, dt=None):
        self.f = f
        self.df = df
        self.dt = dt

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        eta = np.broadcast_to(np.asarray(self.f(theta), dtype=float), theta.shape)
        deta = np.zeros_like(theta) if self.df is None else np.broadcast_to(
            np.asarray(self.df(theta), dtype=float), theta.shape)
        etat = np.zeros_like(theta) if self.dt is None else np.broadcast_to(
            np.asarray(self.dt(theta), dtype=float), theta.shape)
        return np.array(eta), np.array(deta), np.array(etat)


class ZeroDisplacement:
    def __call__(self, theta):
        z = np.zeros(np.shape(theta))
        return z, z.copy(), z.copy()


def constant_displacement(c, rate=0.0):
    return FunctionDisplacement(lambda th: np.full(np.shape(th), float(c)),
                                None, lambda th: np.full(np.shape(th), float(rate)))


def sup_norm(disp, n=2048):
    th = np.linspace(0.0, TWO_PI, n, endpoint=False)
    return float(np.max(np.abs(disp(th)[0])))


# --------------------------------------------------------------------------
# quadrature
# --------------------------------------------------------------------------

@dataclass
class Quadrature:
    """Nodes and weights on a reference region (weights include the polar factor)."""
    points: np.ndarray
    weights: np.ndarray
    r: np.ndarray = None
    theta: np.ndarray = None

    @property
    def n(self):
        return len(self.weights)


@dataclass
class BoundaryQuadrature:
    theta: np.ndarray
    weights: np.ndarray

    @property
    def points(self):
        return np.stack([np.cos(self.theta), np.sin(self.theta)], axis=1)


def gauss_cells(edges, order):
    x, w = np.polynomial.legendre.leggauss(order)
    nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        h = 0.5 * (b - a)
        nodes.append(a + h * (x + 1.0))
        weights.append(h * w)
    return np.concatenate(nodes), np.concatenate(weights)


def radial_edges(L, refine=1):
    """Radial cell edges aligned with the kinks of the chart profile."""
    a, b = 1.0 - 0.5 * L, 1.0 - 0.25 * L
    return np.concatenate([np.linspace(0.0, a, 2 * refine + 1),
                           np.linspace(a, b, refine + 1)[1:],
                           np.linspace(b, 1.0, refine + 1)[1:]])


def disk_quadrature(L=0.5, n_theta_cells=16, order=6, radial_refine=1):
    """Tensor Gauss-Legendre rule on the polar parameterisation of the unit disk."""
    if n_theta_cells % 2:
        raise ValueError("n_theta_cells must be even so that cells align with M")
    r, wr = gauss_cells(radial_edges(L, radial_refine), order)
    th, wt = gauss_cells(np.linspace(0.0, TWO_PI, n_theta_cells + 1), order)
    R, T = np.meshgrid(r, th, indexing="ij")
    W = np.outer(wr * r, wt)
    pts = np.stack([(R * np.cos(T)).ravel(), (R * np.sin(T)).ravel()], axis=1)
    return Quadrature(pts, W.ravel(), R.ravel(), T.ravel())


def boundary_quadrature(n_cells=32, order=6):
    th, w = gauss_cells(np.linspace(0.0, TWO_PI, n_cells + 1), order)
    return BoundaryQuadrature(th, w)


def square_quadrature(n_cells=16, order=6):
    x, w = gauss_cells(np.linspace(0.0, 1.0, n_cells + 1), order)
    X, Y = np.meshgrid(x, x, indexing="ij")
    W = np.outer(w, w)
    return Quadrature(np.stack([X.ravel(), Y.ravel()], axis=1), W.ravel())


# --------------------------------------------------------------------------
# reference domain
# --------------------------------------------------------------------------

def unit_radius(theta):
    theta = np.asarray(theta, dtype=float)
    return np.ones_like(theta), np.zeros_like(theta)


@dataclass
class Layer:
    disp: object
    base: object
    L: float


@dataclass
class ReferenceDomain:
    """Reference boundary with its tube, shell arc and (optional) frozen layers.

    ``radius`` returns (b, db/dtheta) of the current reference boundary in
    polar form; the displacement direction is always the normal of the unit
    circle.  ``base_layers`` holds the frozen displacements of earlier
    continuation restarts, so that the current reference is their image.
    """
    L: float = 0.5
    shell_arc: tuple = (0.0, np.pi)
    radius: object = unit_radius
    base_layers: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.L <= 0:
            raise ValueError("tube width must be positive")
        if isinstance(self.shell_arc, str):
            if self.shell_arc == "full":
                self.shell_arc = (0.0, TWO_PI)
            elif self.shell_arc == "upper":
                self.shell_arc = (0.0, np.pi)
            else:
                raise ValueError(f"unknown shell arc {self.shell_arc!r}")

    @property
    def shell_length(self):
        return self.shell_arc[1] - self.shell_arc[0]

    @property
    def full_shell(self):
        return np.isclose(self.shell_length, TWO_PI)

    def in_shell(self, theta):
        th = wrap_angle(theta)
        a, b = self.shell_arc
        if self.full_shell:
            return np.ones(np.shape(th), dtype=bool)
        return (th >= a) & (th <= b)

    def arc_coordinate(self, theta):
        return wrap_angle(np.asarray(theta, dtype=float) - self.shell_arc[0])

    def boundary_point(self, theta):
        b, _ = self.radius(theta)
        b = np.asarray(b, dtype=float)
        return np.stack([b * np.cos(theta), b * np.sin(theta)], axis=-1)

    def normal(self, theta):
        theta = np.asarray(theta, dtype=float)
        return np.stack([np.cos(theta), np.sin(theta)], axis=-1)

    def hanzawa(self, theta, s):
        """Lambda(q, s) = q + s nu(q) with q the boundary point at angle theta."""
        b, _ = self.radius(theta)
        rad = b + s
        return np.stack([rad * np.cos(theta), rad * np.sin(theta)], axis=-1)

    def closest_point_decomposition(self, x):
        """Split x into (q, s) with x = q + s nu(q); s < 0 inside.

        For the unit circle this is the exact closest point.  For a deformed
        reference (after a restart) it is the decomposition along the
        original normal used by the continuation construction.
        """
        x = np.asarray(x, dtype=float)
        rad = np.hypot(x[..., 0], x[..., 1])
        theta = np.arctan2(x[..., 1], x[..., 0])
        b, _ = self.radius(theta)
        s = rad - b
        if np.any(np.abs(s) >= self.L):
            raise OutOfTube("point is not within the tube around the boundary")
        q = np.stack([b * np.cos(theta), b * np.sin(theta)], axis=-1)
        return q, s

    def normal_unit_error(self, bquad):
        nu = self.normal(bquad.theta)
        return float(np.max(np.abs(np.linalg.norm(nu, axis=-1) - 1.0)))

    def injectivity_gap(self, n_theta=256, n_s=17):
        """Smallest distance between distinct samples of Lambda on the tube.

        Returns 0 (or a tiny number) when two parameter samples collide.
        """
        th = np.linspace(0.0, TWO_PI, n_theta, endpoint=False)
        s = np.linspace(-self.L, self.L, n_s + 2)[1:-1]
        TH, S = np.meshgrid(th, s, indexing="ij")
        b, _ = self.radius(TH)
        if np.any(b + S <= 0.0):
            return 0.0
        pts = self.hanzawa(TH, S).reshape(-1, 2)
        d, _ = cKDTree(pts).query(pts, k=2)
        return float(np.min(d[:, 1]))


# --------------------------------------------------------------------------
# charts
# --------------------------------------------------------------------------

@dataclass
class NodeGeometry:
    """Pushed-forward quadrature data for one chart."""
    points: np.ndarray     # physical node positions
    J: np.ndarray          # det D Psi
    wJ: np.ndarray         # weights times J
    Ginv: np.ndarray       # D Psi^{-T}, shape (n, 2, 2)
    V: np.ndarray          # chart velocity at the physical nodes
    memo: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n(self):
        return len(self.J)

    def cached(self, key, fn):
        if key not in self.memo:
            self.memo[key] = fn()
        return self.memo[key]


def identity_geometry(quad):
    n = quad.n
    G = np.zeros((n, 2, 2))
    G[:, 0, 0] = G[:, 1, 1] = 1.0
    return NodeGeometry(quad.points.copy(), np.ones(n), quad.weights.copy(), G,
                        np.zeros((n, 2)))


class DomainChart:
    """Psi_eta and friends for a stack of radial layers."""

    def __init__(self, ref, layers):
        self.ref = ref
        self.layers = list(layers)

    @property
    def eta(self):
        return self.layers[-1].disp

    def cutoff(self, s):
        return cutoff_phi(s, self.layers[-1].L)

    # radius map and derivatives ------------------------------------------
    def radial(self, r, theta):
        r = np.asarray(r, dtype=float)
        theta = np.asarray(theta, dtype=float)
        R = r.copy()
        Rr = np.ones_like(r)
        Rth = np.zeros_like(r)
        Rt = np.zeros_like(r)
        for layer in self.layers:
            b, db = layer.base(theta)
            eta, deta, etat = _eval_disp(layer.disp, theta)
            s = R - b
            phi, dphi = cutoff_phi(s, layer.L)
            fac = 1.0 + eta * dphi
            Rt = Rt * fac + etat * phi
            Rth = Rth + deta * phi + eta * dphi * (Rth - db)
            Rr = Rr * fac
            R = R + eta * phi
        return R, Rr, Rth, Rt

    def psi(self, x):
        x = np.asarray(x, dtype=float)
        r = np.hypot(x[..., 0], x[..., 1])
        th = np.arctan2(x[..., 1], x[..., 0])
        R = self.radial(r, th)[0]
        return np.stack([R * np.cos(th), R * np.sin(th)], axis=-1)

    def psi_inverse(self, y):
        y = np.asarray(y, dtype=float)
        R = np.hypot(y[..., 0], y[..., 1])
        th = np.arctan2(y[..., 1], y[..., 0])
        r = self.radius_inverse(R, th)
        return np.stack([r * np.cos(th), r * np.sin(th)], axis=-1)

    def radius_inverse(self, R, theta):
        R = np.array(R, dtype=float)
        theta = np.asarray(theta, dtype=float)
        # radii of every intermediate image are needed for the bases of later
        # layers; they only depend on theta so they are evaluated on the fly
        for layer in reversed(self.layers):
            b, _ = layer.base(theta)
            eta, _, _ = _eval_disp(layer.disp, theta)
            target = R - b
            # the root lies in [target - max(eta, 0), target - min(eta, 0)]
            lo = target - np.maximum(eta, 0.0)
            hi = target - np.minimum(eta, 0.0)
            s = np.clip(target - eta, lo, hi)
            for _ in range(NEWTON_MAXIT):
                phi, dphi = cutoff_phi(s, layer.L)
                res = s + eta * phi - target
                if np.all(np.abs(res) <= NEWTON_TOL):
                    break
                lo = np.where(res < 0.0, s, lo)
                hi = np.where(res > 0.0, s, hi)
                step = s - res / (1.0 + eta * dphi)
                bad = ~((step > lo) & (step < hi))
                s = np.where(bad, 0.5 * (lo + hi), step)
            R = b + s
        return R

    def jac_det(self, x):
        x = np.asarray(x, dtype=float)
        r = np.hypot(x[..., 0], x[..., 1])
        th = np.arctan2(x[..., 1], x[..., 0])
        R, Rr, _, _ = self.radial(r, th)
        out = np.ones_like(r)
        m = r > 0
        out[m] = R[m] * Rr[m] / r[m]
        return out

    # quadrature data -------------------------------------------------------
    def node_geometry(self, quad):
        r, th = quad.r, quad.theta
        R, Rr, Rth, Rt = _radial_cached(self, r, th)
        c, s = np.cos(th), np.sin(th)
        J = R * Rr / r
        # D Psi^{-T} in the (e_r, e_theta) frame
        m00 = 1.0 / Rr
        m10 = -Rth / (R * Rr)
        m11 = r / R
        G = np.empty((len(r), 2, 2))
        # Q M Q^T with Q = [e_r, e_theta]; M = [[m00, 0], [m10, m11]]
        G[:, 0, 0] = c * c * m00 - c * s * m10 + s * s * m11
        G[:, 0, 1] = c * s * m00 - s * s * m10 - c * s * m11
        G[:, 1, 0] = s * c * m00 + c * c * m10 - s * c * m11
        G[:, 1, 1] = s * s * m00 + s * c * m10 + c * c * m11
        pts = np.stack([R * c, R * s], axis=1)
        V = np.stack([Rt * c, Rt * s], axis=1)
        return NodeGeometry(pts, J, quad.weights * J, G, V)

    def boundary_data(self, theta):
        """Boundary radius, its angular derivative and normal speed factor.

        Returns (points, Rb, dRb, Rt) with ``Rb dtheta = nu . nu_eta dS``.
        """
        theta = np.asarray(theta, dtype=float)
        R, _, Rth, Rt = self.radial(np.ones_like(theta), theta)
        pts = np.stack([R * np.cos(theta), R * np.sin(theta)], axis=-1)
        return pts, R, Rth, Rt

    def boundary_normal(self, theta):
        """Outward unit normal nu_eta of the deformed boundary."""
        _, R, Rth, _ = self.boundary_data(theta)
        c, s = np.cos(theta), np.sin(theta)
        nx = R * c + Rth * s
        ny = R * s - Rth * c
        nrm = np.hypot(nx, ny)
        return np.stack([nx / nrm, ny / nrm], axis=-1)

    def min_jacobian(self, quad):
        R, Rr, _, _ = _radial_cached(self, quad.r, quad.theta)
        return float(np.min(R * Rr / quad.r))


def _eval_disp(disp, theta):
    """Evaluate a displacement on theta, reusing work for repeated angles."""
    theta = np.asarray(theta, dtype=float)
    flat = theta.ravel()
    uniq, inv = np.unique(flat, return_inverse=True)
    if len(uniq) < len(flat):
        e, de, et = disp(uniq)
        return (e[inv].reshape(theta.shape), de[inv].reshape(theta.shape),
                et[inv].reshape(theta.shape))
    return disp(theta)


def _radial_cached(chart, r, th):
    return chart.radial(r, th)


def build_chart(eta, ref, check_points=2048):
    """Chart Psi_eta for a displacement eta of the current reference boundary."""
    sup = sup_norm(eta, check_points)
    if sup >= 0.5 * ref.L:
        raise DisplacementTooLarge(f"|eta|_inf = {sup:.6g} >= L/2 = {0.5 * ref.L:.6g}")
    layers = list(ref.base_layers) + [Layer(eta, ref.radius, ref.L)]
    return DomainChart(ref, layers)


def closest_point_decomposition(x, ref):
    return ref.closest_point_decomposition(x)


# --------------------------------------------------------------------------
# traces, extensions, Reynolds transport
# --------------------------------------------------------------------------

def trace(field, chart, bquad):
    """Samples of v o Psi_eta on the reference boundary nodes."""
    pts, _, _, _ = chart.boundary_data(bquad.theta)
    return np.asarray(field(pts))


def extend_field(field, chart):
    """Extension of a field on Omega_eta to the plane.

    Inside Omega_eta the field is returned unchanged.  Outside, the point is
    pulled back with the extended chart, reflected across the reference
    boundary with the C^1 rule 4 f(-s/2) - 3 f(-s), pushed forward again and
    multiplied by a cutoff that is 1 up to distance L/2 from the deformed
    boundary and 0 beyond 3L/4.
    """
    if sup_norm(chart.eta) >= 0.5 * chart.layers[-1].L:
        raise DisplacementTooLarge("extension needs |eta|_inf < L/2")
    L = chart.layers[-1].L

    def ext(y):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        R = np.hypot(y[:, 0], y[:, 1])
        th = np.arctan2(y[:, 1], y[:, 0])
        _, Rb, _, _ = chart.boundary_data(th)
        dist = R - Rb
        out = np.zeros(len(R))
        inside = dist <= 0.0
        if np.any(inside):
            out[inside] = np.asarray(field(y[inside]), dtype=float)
        near = (~inside) & (dist < 0.75 * L)
        if np.any(near):
            thn = th[near]
            r_ref = chart.radius_inverse(R[near], thn)
            sref = np.maximum(r_ref - 1.0, 0.0)
            p1 = _polar_points(chart, 1.0 - 0.5 * sref, thn)
            p2 = _polar_points(chart, 1.0 - sref, thn)
            val = 4.0 * np.asarray(field(p1)) - 3.0 * np.asarray(field(p2))
            u = (0.75 * L - dist[near]) / (0.25 * L)
            chi, _ = smoothstep5(u)
            out[near] = chi * val
        return out

    return ext


def _polar_points(chart, r, th):
    R = chart.radial(np.asarray(r, dtype=float), th)[0]
    return np.stack([R * np.cos(th), R * np.sin(th)], axis=-1)


def integrate_moving(g, t, chart, quad):
    geo = chart.node_geometry(quad)
    return float(np.sum(geo.wJ * g(t, geo.points)))


def boundary_flux(g, t, chart, bquad):
    """Integral over the deformed boundary of (d_t eta o Psi^{-1})(nu . nu_eta) g."""
    pts, Rb, _, Rt = chart.boundary_data(bquad.theta)
    return float(np.sum(bquad.weights * Rt * Rb * g(t, pts)))


def reynolds_residual(g, chart_at, t, h, quad, bquad):
    """|d/dt int g - int d_t g - boundary flux| by quadrature and central differences.

    ``chart_at(t)`` returns the chart at time t; ``g(t, points)`` is scalar.
    """
    dI = (integrate_moving(g, t + h, chart_at(t + h), quad)
          - integrate_moving(g, t - h, chart_at(t - h), quad)) / (2.0 * h)
    chart = chart_at(t)

    def gt(tt, pts):
        return (g(tt + h, pts) - g(tt - h, pts)) / (2.0 * h)

    vol = integrate_moving(gt, t, chart, quad)
    flux = boundary_flux(g, t, chart, bquad)
    return abs(dI - vol - flux)
