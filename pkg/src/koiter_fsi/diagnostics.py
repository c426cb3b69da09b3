"""Computable probes: energy budget, near-boundary pressure, effective viscous
flux, truncation and entropy functionals, and CSV output.

Trajectory probes work on ``Snapshot`` objects (time, chart, coefficient
vectors, bases).  The boundary probe integrates over the physical layer
{0 <= d < 1/K} exactly, where d = R_b(theta) - |x| is the radial distance to
the moving boundary; all charts in this package are radial, so this is a
polar quadrature in the reference radius with weight R R_r dr dtheta.
"""
import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import NegativeDensity
from .geometry import TWO_PI, gauss_cells, smoothstep5
from .momentum import vector_gradients

CSV_FMT = "{:.17g}"


# --------------------------------------------------------------------------
# energy budget
# --------------------------------------------------------------------------

@dataclass
class EnergyReport:
    max_violation: float
    relative: float
    E0: float
    violations: np.ndarray
    passed: bool


def energy_budget(ledger, tol=0.0):
    """Check E(t) + dissipation <= E(0) + forcing work + tol on every row."""
    if not ledger:
        return EnergyReport(0.0, 0.0, 0.0, np.zeros(0), True)
    E0 = ledger[0].energy()
    v = np.array([r.energy() + r.dissipation_cum - E0 - r.forcing_work_cum for r in ledger])
    worst = float(max(np.max(v), 0.0))
    rel = worst / E0 if E0 > 0 else worst
    return EnergyReport(worst, rel, E0, v, bool(worst <= tol))


def observed_orders(errors, factor=2.0):
    """log_factor of consecutive error ratios along a refinement ladder."""
    e = np.asarray(errors, dtype=float)
    return np.log(e[:-1] / e[1:]) / np.log(factor)


def ledger_nonnegative(ledger, tol=0.0):
    """True when every energy column of every row is >= -tol."""
    cols = ("kinetic", "internal_gamma", "internal_beta", "shell_kinetic", "shell_elastic")
    return all(getattr(r, c) >= -tol for r in ledger for c in cols)


# --------------------------------------------------------------------------
# snapshots
# --------------------------------------------------------------------------

@dataclass
class Snapshot:
    t: float
    chart: object
    beta: np.ndarray
    alpha: np.ndarray
    scalar_basis: object
    vector_basis: object
    params: object

    def density(self, x_ref):
        v, _ = self.scalar_basis.evaluate(x_ref)
        return v @ self.beta

    def velocity(self, x_ref):
        v, _ = self.vector_basis.evaluate(x_ref)
        return np.tensordot(self.alpha, v, axes=(0, 1))


def snapshots_from_run(problem, rec):
    """Snapshot list from a RunRecord with stored (t, alpha, beta, motion) tuples."""
    out = []
    for t, alpha, beta, motion in rec.snapshots:
        out.append(Snapshot(t, motion.chart(t), beta, alpha, problem.scalar_basis,
                            problem.momentum.basis, problem.fluid))
    return out


def _time_weights(ts):
    ts = np.asarray(ts, dtype=float)
    if len(ts) == 1:
        return np.ones(1)
    w = np.zeros(len(ts))
    dt = np.diff(ts)
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    return w


# --------------------------------------------------------------------------
# boundary concentration probe
# --------------------------------------------------------------------------

@dataclass
class ProbeResult:
    K: float
    boundary_mass: float      # int int_{d < 1/K} p
    layer_measure: float      # int int_{d < 1/K} 1
    div_pairing: float        # int int p div phi
    dt_pairing: float         # int int rho u . d_t phi
    c_xi: float               # sup of the bounded gradient parts
    xi3_diag: float           # sup |xi^3_jj|


def _radial_pieces(chart, theta, targets, order):
    """Gauss nodes in the reference radius split at the given physical radii.

    targets: list of arrays (per theta) of physical radii; returns r, theta,
    weights (R R_r dr dtheta without the theta weight) per node.
    """
    one = np.ones_like(theta)
    Rb = chart.radial(one, theta)[0]
    cuts = [np.zeros_like(theta), one]
    for T in targets:
        T = np.clip(T, 0.0, Rb)
        cuts.append(chart.radius_inverse(T, theta))
    cuts = np.sort(np.stack(cuts, axis=1), axis=1)
    x, w = np.polynomial.legendre.leggauss(order)
    rs, ths, ws = [], [], []
    for j in range(cuts.shape[1] - 1):
        a, b = cuts[:, j], cuts[:, j + 1]
        h = 0.5 * (b - a)
        rs.append(a[:, None] + h[:, None] * (x[None, :] + 1.0))
        ws.append(h[:, None] * w[None, :])
        ths.append(np.repeat(theta[:, None], order, axis=1))
    return np.concatenate(rs, axis=1), np.concatenate(ths, axis=1), np.concatenate(ws, axis=1)


def boundary_concentration_probe(snapshots, K_values=(10, 20, 40, 80), n_theta_cells=64,
                                 theta_order=4, order=8, fd_h=1e-6):
    """Near-boundary pressure mass and the pairings of the layer test field.

    The test field is phi = c(s) min{K d, 1} (-e_r) with d the radial distance
    to the moving boundary and c a quintic cutoff equal to 1 for
    s = |x| - b(theta) >= -L/2 and 0 for s <= -L (b, L from the reference
    domain of the chart).  Returns one ProbeResult per K, time-integrated
    over the snapshots by the trapezoid rule.
    """
    th, thw = gauss_cells(np.linspace(0.0, TWO_PI, n_theta_cells + 1), theta_order)
    tw = _time_weights([s.t for s in snapshots])
    out = []
    for K in K_values:
        acc = np.zeros(4)
        cxi = 0.0
        xi3 = 0.0
        for snap, wt in zip(snapshots, tw):
            ch = snap.chart
            ref = ch.ref
            L = ref.L
            b = ref.radius(th)[0]
            one = np.ones_like(th)
            Rb, _, Rb_th, Rb_t = ch.radial(one, th)
            r, tt, w = _radial_pieces(ch, th, [b - L, b - 0.5 * L, Rb - 1.0 / K], order)
            R, Rr, _, _ = ch.radial(r, tt)
            wq = w * R * Rr * thw[:, None]
            x_ref = np.stack([(r * np.cos(tt)).ravel(), (r * np.sin(tt)).ravel()], axis=1)
            rho = snap.density(x_ref).reshape(r.shape)
            p = snap.params.pressure(rho)
            d = Rb[:, None] - R
            s = R - b[:, None]
            c, dc = smoothstep5((s + L) / (0.5 * L))
            dc = dc / (0.5 * L)
            Kd = np.minimum(K * d, 1.0)
            chi = (K * d < 1.0).astype(float)
            # div(-F e_r) = -dF/dR - F/R,  F = c min{K d, 1}
            xi1 = -dc * Kd
            xi2 = K * chi * c
            xi4 = -c * Kd / R
            div = xi1 + xi2 + xi4
            # tangential part: grad of eta(q(x)) through q, contracted with nu
            Xp = R * np.cos(tt)
            Yp = R * np.sin(tt)
            dqx = (np.arctan2(Yp, Xp + fd_h) - np.arctan2(Yp, Xp - fd_h)) / (2 * fd_h)
            dqy = (np.arctan2(Yp + fd_h, Xp) - np.arctan2(Yp - fd_h, Xp)) / (2 * fd_h)
            deta = (Rb_th - ref.radius(th)[1])[:, None]
            nux, nuy = np.cos(tt), np.sin(tt)
            xi3_jj = -K * chi * c * deta * (dqx * nux + dqy * nuy)
            layer = chi * (d >= 0.0)
            acc[0] += wt * float(np.sum(wq * p * layer))
            acc[1] += wt * float(np.sum(wq * layer))
            acc[2] += wt * float(np.sum(wq * p * div))
            # d_t phi = -c K chi (d_t R_b) e_r, supported in the layer
            sel = layer.ravel() > 0
            if np.any(sel):
                u = snap.velocity(x_ref[sel])
                ur = u[:, 0] * nux.ravel()[sel] + u[:, 1] * nuy.ravel()[sel]
                dphi_r = -(c * K * chi * Rb_t[:, None]).ravel()[sel]
                acc[3] += wt * float(np.sum(wq.ravel()[sel] * rho.ravel()[sel] * ur * dphi_r))
            cxi = max(cxi, float(np.max(np.abs(xi1) + np.abs(xi4))))
            xi3 = max(xi3, float(np.max(np.abs(xi3_jj))))
        out.append(ProbeResult(float(K), acc[0], acc[1], acc[2], acc[3], cxi, xi3))
    return out


# --------------------------------------------------------------------------
# effective viscous flux and interior integrability
# --------------------------------------------------------------------------

def interior_bump(points, chart, L, margin=0.15):
    """Product of quintic smoothsteps in x and y, supported at distance
    >= margin L from the moving boundary (radially measured)."""
    th = np.linspace(0.0, TWO_PI, 1024, endpoint=False)
    rmin = float(np.min(chart.radial(np.ones_like(th), th)[0]))
    h = rmin / np.sqrt(2.0) - margin * L
    if h <= 0:
        raise ValueError("domain too thin for the interior bump")
    out = np.ones(len(points))
    for c in range(2):
        out *= smoothstep5((h - np.abs(points[:, c])) / (0.5 * h))[0]
    return out


def effective_viscous_flux(basis, params, geo, alpha, rho):
    """F = a rho^gamma + delta rho^beta - (lambda + 2 mu) div u at the nodes of geo."""
    G = vector_gradients(basis, geo)
    div = np.tensordot(alpha, G[:, :, 0, 0] + G[:, :, 1, 1], axes=(0, 1))
    return params.pressure(rho) - (params.lam + 2.0 * params.mu) * div


def flux_pairing(snapshots, quad, margin=0.15):
    """int int psi^2 F rho over the snapshot times (trapezoid)."""
    tw = _time_weights([s.t for s in snapshots])
    total = 0.0
    for snap, wt in zip(snapshots, tw):
        geo = snap.chart.node_geometry(quad)
        rho = snap.scalar_basis.values @ snap.beta
        F = effective_viscous_flux(snap.vector_basis, snap.params, geo, snap.alpha, rho)
        psi = interior_bump(geo.points, snap.chart, snap.chart.ref.L, margin)
        total += wt * float(geo.wJ @ (psi**2 * F * rho))
    return total


def interior_integrability(snapshots, quad, margin=0.15):
    """int int psi rho^(gamma + 1) with the interior bump psi."""
    tw = _time_weights([s.t for s in snapshots])
    total = 0.0
    for snap, wt in zip(snapshots, tw):
        geo = snap.chart.node_geometry(quad)
        rho = np.maximum(snap.scalar_basis.values @ snap.beta, 0.0)
        psi = interior_bump(geo.points, snap.chart, snap.chart.ref.L, margin)
        total += wt * float(geo.wJ @ (psi * rho ** (snap.params.gamma + 1.0)))
    return total


# --------------------------------------------------------------------------
# truncations and entropy
# --------------------------------------------------------------------------

def T_base(z):
    """Concave truncation: z below 1, 2 above 3, C^2 quartic knee in between."""
    z = np.asarray(z, dtype=float)
    u = np.clip((z - 1.0) / 2.0, 0.0, 1.0)
    knee = 1.0 + 2.0 * u - 2.0 * u**3 + u**4
    return np.where(z <= 1.0, z, np.where(z >= 3.0, 2.0, knee))


def T_k(z, k):
    return k * T_base(np.asarray(z, dtype=float) / k)


_GX, _GW = np.polynomial.legendre.leggauss(16)


def _G(y):
    """int_1^y T(s)/s^2 ds for y >= 1 (exact on the flat part, Gauss on the knee)."""
    y = np.asarray(y, dtype=float)
    top = np.minimum(y, 3.0)
    h = 0.5 * (top - 1.0)
    s = 1.0 + h[..., None] * (_GX + 1.0)
    knee = np.sum(h[..., None] * _GW * T_base(s) / s**2, axis=-1)
    tail = np.where(y > 3.0, 2.0 * (1.0 / 3.0 - 1.0 / np.maximum(y, 3.0)), 0.0)
    return knee + tail


def z_log_z(z):
    z = np.asarray(z, dtype=float)
    return np.where(z > 0.0, z * np.log(np.where(z > 0.0, z, 1.0)), 0.0)


def L_k(z, k):
    """z ln z below k, z ln k + z int_k^z T_k(s)/s^2 ds above."""
    z = np.asarray(z, dtype=float)
    hi = z * np.log(k) + z * _G(np.maximum(z, k) / k)
    return np.where(z < k, z_log_z(z), hi)


def truncation_functionals(rho, weights, k, neg_tol=1e-8):
    """(int T_k(rho), int L_k(rho), int rho ln rho) by the given quadrature."""
    if k < 1:
        raise ValueError("k must be >= 1")
    rho = np.asarray(rho, dtype=float)
    if np.min(rho) < -neg_tol:
        raise NegativeDensity(f"density minimum {np.min(rho):.3g} is negative")
    rho = np.maximum(rho, 0.0)
    w = np.asarray(weights, dtype=float)
    return float(w @ T_k(rho, k)), float(w @ L_k(rho, k)), float(w @ z_log_z(rho))


def entropy_residual(snapshots, quad):
    """int rho ln rho (t) - int rho0 ln rho0 + int_0^t int rho div u, per snapshot."""
    ent, src, ts = [], [], []
    for snap in snapshots:
        geo = snap.chart.node_geometry(quad)
        rho = np.maximum(snap.scalar_basis.values @ snap.beta, 0.0)
        G = vector_gradients(snap.vector_basis, geo)
        div = np.tensordot(snap.alpha, G[:, :, 0, 0] + G[:, :, 1, 1], axes=(0, 1))
        ent.append(float(geo.wJ @ z_log_z(rho)))
        src.append(float(geo.wJ @ (rho * div)))
        ts.append(snap.t)
    ent, src, ts = np.array(ent), np.array(src), np.array(ts)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(ts) * (src[1:] + src[:-1]))])
    return ent - ent[0] + cum


# --------------------------------------------------------------------------
# CSV output
# --------------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return CSV_FMT.format(float(v))


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_diagnostics_csv(path, ledger, columns=None):
    from .coupling import LEDGER_COLUMNS
    cols = LEDGER_COLUMNS if columns is None else columns
    write_rows(path, cols, [[getattr(r, c) for c in cols] for r in ledger])


def write_probes_csv(path, probes):
    """probes: iterable of (name, parameter, value)."""
    write_rows(path, ["probe", "parameter", "value"], probes)


CONVERGENCE_COLUMNS = ["window", "iter", "du", "deta", "ratio", "theta_mix"]


def write_convergence_csv(path, history):
    write_rows(path, CONVERGENCE_COLUMNS, history)


SNAPSHOT_COLUMNS = ["t", "x", "y", "rho", "ux", "uy"]


def write_snapshot(path, snap, quad):
    """Field samples at the chart quadrature nodes."""
    geo = snap.chart.node_geometry(quad)
    rho = snap.scalar_basis.values @ snap.beta
    u = np.tensordot(snap.alpha, snap.vector_basis.values, axes=(0, 1))
    rows = [(snap.t, x, y, r, a, b) for (x, y), r, (a, b) in zip(geo.points, rho, u)]
    write_rows(path, SNAPSHOT_COLUMNS, rows)


def probe_rows(results, prefix="boundary"):
    rows = []
    for pr in results:
        rows += [(f"{prefix}_mass", pr.K, pr.boundary_mass),
                 (f"{prefix}_layer_measure", pr.K, pr.layer_measure),
                 (f"{prefix}_div_pairing", pr.K, pr.div_pairing),
                 (f"{prefix}_dt_pairing", pr.K, pr.dt_pairing),
                 (f"{prefix}_c_xi", pr.K, pr.c_xi),
                 (f"{prefix}_xi3_diag", pr.K, pr.xi3_diag)]
    return rows
