"""Invariant suite and acceptance criteria as named, filterable checks.

Each check returns a CheckResult made of parts (label, value, threshold,
sense); sense "le" passes when value <= threshold, "ge" when value >=
threshold.  ``run_checks(fault=name)`` corrupts the first part of the named
check before it is judged, so the harness itself can be tested.
"""
import functools
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from . import coupling as cp
from . import diagnostics as dg
from . import geometry as G
from . import oracles as orc
from . import regularize as rg
from . import scenario as sc
from . import shell as sh
from . import transport as tr
from .momentum import CoupledBasis, FluidParams, MomentumSystem, discrete_energy_residual, step_momentum


@dataclass
class Part:
    label: str
    value: float
    threshold: float
    sense: str = "le"

    @property
    def ok(self):
        v = float(self.value)
        if not np.isfinite(v):
            return False
        return v <= self.threshold if self.sense == "le" else v >= self.threshold


@dataclass
class CheckResult:
    name: str
    parts: list = field(default_factory=list)
    detail: str = ""

    @property
    def passed(self):
        return all(p.ok for p in self.parts)

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        body = "; ".join(f"{p.label}={float(p.value):.3e} ({'<=' if p.sense == 'le' else '>='} {p.threshold:g})"
                         for p in self.parts)
        return f"[{tag}] {self.name}: {body}"


REGISTRY = []


def register(name, *suites):
    def deco(fn):
        REGISTRY.append((name, ("all",) + suites, fn))
        return fn
    return deco


def corrupt(part, seed=0):
    """Move a part's value to the failing side of its threshold."""
    rng = np.random.default_rng(seed)
    bump = 1.0 + rng.random()
    if part.sense == "le":
        part.value = abs(part.threshold) * 10.0 * bump + 1.0
    else:
        part.value = part.threshold - bump
    return part


def select(suite="all", names=None):
    """Registry entries in a suite (or with that exact name)."""
    return [(name, fn) for name, suites, fn in REGISTRY
            if (suite in suites or suite == name) and (names is None or name in names)]


def run_checks(suite="all", fault=None, seed=0, names=None):
    out = []
    for name, fn in select(suite, names):
        res = fn()
        res.name = name
        if fault == name and res.parts:
            corrupt(res.parts[0], seed)
        out.append(res)
    return out


def format_table(results):
    return "\n".join(r.line() for r in results)


# --------------------------------------------------------------------------
# shared fixtures (cached per process)
# --------------------------------------------------------------------------

FORCED_CFG = """
forcing.g = constant 0.5
disc.T = 0.2
output.snapshot_every = 5
"""

MOVING_SHELL_CFG = """
initial.eta1 = coeffs 0.2
initial.u0 = lift
layers.kappa = 1e-4
disc.T = 0.16
coupling.tol = 1e-11
coupling.max_iters = 80
"""

RESTART_CFG = """
initial.eta0 = bump 0.05
forcing.g = constant 0.5
disc.T = 0.2
coupling.window = 0.1
coupling.restart = true
"""


@functools.lru_cache(maxsize=None)
def _run_emitted(emitted):
    return sc.run_scenario(sc.parse_text(emitted), write=False)


def scenario_run(text, key=None, value=None):
    """Run (cached on the resolved scenario, so equal configs share one run)."""
    s = sc.parse_text(text)
    if key is not None:
        s = s.with_value(key, value)
    return _run_emitted(s.emit())


def forced_run():
    return scenario_run(FORCED_CFG)


def _disk():
    ref = G.ReferenceDomain(L=0.5)
    quad = G.disk_quadrature(0.5, 16, 6)
    return ref, quad


def moving_transport(n_steps=100, dt=0.01, eps=0.01, rho0=None):
    """Density on a disk whose upper half breathes, transported with the chart velocity."""
    ref, quad = _disk()
    b = tr.DiskScalarBasis(quad, 6)

    def chart_at(t):
        up = lambda th: np.sin(th) > 0
        f = lambda th: 0.08 * np.sin(4 * t) * np.sin(th) ** 6 * up(th)
        df = lambda th: 0.48 * np.sin(4 * t) * np.sin(th) ** 5 * np.cos(th) * up(th)
        ft = lambda th: 0.32 * np.cos(4 * t) * np.sin(th) ** 6 * up(th)
        return G.build_chart(G.FunctionDisplacement(f, df, ft), ref)

    geom = lambda t: chart_at(t).node_geometry(quad)
    drift = lambda t, geo: (geo.V, np.zeros((geo.n, 2, 2)))
    p = tr.TransportProblem(b, eps, geom, drift)
    rho0 = rho0 or (lambda x: 1 + 0.5 * np.exp(-4 * ((x[:, 0] - 0.2) ** 2 + x[:, 1] ** 2)))
    beta0 = tr.project(b, geom(0.0), rho0)
    return tr.run_transport(p, beta0, dt, n_steps)


def static_transport(rho0, n_steps=100, dt=0.01, eps=0.01, swirl=0.5):
    """Fixed disk with a rigid rotation drift (tangential on the boundary)."""
    _, quad = _disk()
    b = tr.DiskScalarBasis(quad, 6)

    def drift(t, geo):
        x = geo.points
        w = swirl * np.stack([-x[:, 1], x[:, 0]], axis=1)
        gw = np.zeros((geo.n, 2, 2))
        gw[:, 0, 1], gw[:, 1, 0] = -swirl, swirl
        return w, gw

    p = tr.TransportProblem(b, eps, None, drift)
    beta0 = tr.project(b, G.identity_geometry(quad), rho0)
    return tr.run_transport(p, beta0, dt, n_steps)


def _mass_drift(rec):
    m = np.asarray(rec.mass)
    return float(np.max(np.abs(m - m[0])) / abs(m[0]))


def square_oracle_errors(modes=(8, 16, 32), eps=0.01, T=0.5, dt=0.005, n=256):
    sq = G.square_quadrature(16, 6)
    rho0 = lambda x: np.exp(-((x[:, 0] - 0.4) ** 2 + (x[:, 1] - 0.55) ** 2) / (2 * 0.2**2))
    xc, U = orc.fd_crank_nicolson_square(rho0, eps, T, dt, n)
    X, Y = np.meshgrid(xc, xc, indexing="ij")
    P = np.stack([X.ravel(), Y.ravel()], axis=1)
    errs = []
    for nm in modes:
        b = tr.SquareCosineBasis(sq, nm)
        p = tr.TransportProblem(b, eps)
        beta0 = tr.project(b, G.identity_geometry(sq), rho0)
        st, _ = tr.run_transport(p, beta0, dt, int(round(T / dt)))
        v, _ = b.evaluate(P)
        errs.append(float(np.linalg.norm(v @ st.beta - U.ravel()) / np.linalg.norm(U)))
    return errs


def reynolds_ladder(levels=6):
    ref = G.ReferenceDomain(L=0.5, shell_arc="full")
    chart_at = lambda t: G.build_chart(G.constant_displacement(t, 1.0), ref)
    g = lambda t, x: np.sin(3 * t + x[:, 0]) * (1 + x[:, 1] ** 2)
    q = G.disk_quadrature(0.5, 32, 8, 4)
    b = G.boundary_quadrature(64, 8)
    return [G.reynolds_residual(g, chart_at, 0.1, 0.04 / 2**k, q, b) for k in range(levels)]


def fd4(f, h):
    """Fourth-order central difference; the two end samples on each side are NaN."""
    out = np.full_like(f, np.nan)
    out[2:-2] = (-f[4:] + 8 * f[3:-1] - 8 * f[1:-3] + f[:-4]) / (12 * h)
    return out


def _ratios_tail(history, n=10):
    r = [h[4] for h in history if np.isfinite(h[4])]
    return r[-n:]


# --------------------------------------------------------------------------
# acceptance criteria
# --------------------------------------------------------------------------

@register("acceptance-1-mass", "acceptance", "transport")
def acc_mass():
    _, rs = static_transport(lambda x: 1 + 0.3 * x[:, 0] + 0.2 * x[:, 1] ** 2)
    _, rm = moving_transport()
    return CheckResult("", [Part("static drift", _mass_drift(rs), 1e-6),
                            Part("moving drift", _mass_drift(rm), 1e-6)])


@register("acceptance-2-nonnegativity", "acceptance", "transport")
def acc_nonneg():
    _, rv = static_transport(lambda x: x[:, 0] ** 2)
    _, rm = moving_transport()
    forced = min(r.min_density for r in forced_run().record.ledger)
    return CheckResult("", [Part("vacuum x^2", min(rv.min_density), -1e-8, "ge"),
                            Part("moving", min(rm.min_density), -1e-8, "ge"),
                            Part("coupled forced", forced, -1e-8, "ge")])


@register("acceptance-3-energy", "acceptance", "coupling", "diagnostics")
def acc_energy():
    step, cum, E0 = [], [], None
    for dt in (0.02, 0.01, 0.005):
        r = scenario_run(MOVING_SHELL_CFG, "disc.dt", dt)
        led = r.record.ledger
        rep = dg.energy_budget(led)
        E0 = rep.E0
        step.append(max(max(x.step_residual for x in led[1:]), 0.0))
        cum.append(rep.max_violation)
    orders = dg.observed_orders(step)
    return CheckResult("", [Part("per-step violation / E0", max(step) / E0, 1e-4),
                            Part("cumulative violation / E0", max(cum) / E0, 1e-4),
                            Part("observed order (min)", float(np.min(orders)), 1.5, "ge")],
                       detail=f"per-step {step}")


@register("acceptance-4-transport-oracle", "acceptance", "transport-oracle", "transport")
def acc_transport_oracle():
    errs = square_oracle_errors()
    mono = float(np.max(np.diff(errs)))
    return CheckResult("", [Part("L2 rel error at 32 modes", errs[-1], 0.05),
                            Part("max error increase along 8/16/32", mono, 0.0)],
                       detail=f"errors {errs}")


@register("acceptance-5-shell-spectrum", "acceptance", "shell", "transport-oracle")
def acc_shell():
    b = sh.ShellBasis(3, length=1.0)
    fd = orc.fd_clamped_beam_eigenvalues(256, 1.0, 3)
    rel = np.abs(b.eigenvalues - fd) / fd
    return CheckResult("", [Part("max rel gap, first three", float(rel.max()), 0.01)])


@register("acceptance-6-trace", "acceptance", "coupling")
def acc_trace():
    led = forced_run().record.ledger
    return CheckResult("", [Part("max trace residual", max(r.trace_residual for r in led), 1e-8)])


@register("acceptance-7-reynolds", "acceptance", "geometry")
def acc_reynolds():
    res = reynolds_ladder()
    orders = dg.observed_orders(res)
    return CheckResult("", [Part("finest residual", res[-1], 1e-5),
                            Part("observed order (min)", float(np.min(orders)), 1.9, "ge")])


@register("acceptance-8-mollifier", "acceptance", "mollifier")
def acc_mollifier():
    rng = np.random.default_rng(7)
    Z = rng.normal(size=(400, 3))
    cfg = rg.MollifierConfig(0.05, 1.0)
    R = rg.mollify_time(Z, 0.0025, cfg)
    over = max(float(np.max(R - Z.max(axis=0))), float(np.max(Z.min(axis=0) - R)), 0.0)
    # uniform error against a smooth signal over four halvings
    dt = 1e-3
    t = dt * np.arange(1001)
    f = np.sin(2 * np.pi * t) + t**2
    errs = []
    for k in range(5):
        c = rg.MollifierConfig(0.08 / 2**k, 1.0)
        errs.append(float(np.max(np.abs(rg.mollify_time(f, dt, c) - f))))
    mono = float(np.max(np.diff(errs)))
    # d/dt commutes with the mollifier on flat windows
    dt = 1e-3
    t = dt * np.arange(1001)
    z = np.sin(2 * np.pi * t) + t**2
    dz = 2 * np.pi * np.cos(2 * np.pi * t) + 2 * t
    c = rg.MollifierConfig(0.05, 1.0)
    lhs = fd4(rg.mollify_time(z, dt, c), dt)
    rhs = rg.mollify_time(dz, dt, c)
    keep = rg.flat_mask(t, c) & (t > c.kappa + 3 * dt) & (t < 1.0 - c.kappa - 3 * dt)
    comm = float(np.max(np.abs(lhs - rhs)[keep]))
    return CheckResult("", [Part("max principle overshoot", over, 8 * np.finfo(float).eps * np.abs(Z).max()),
                            Part("max error increase over halvings", mono, 0.0),
                            Part("commutation residual", comm, 1e-6)],
                       detail=f"uniform errors {errs}")


@register("acceptance-9-fixed-point", "acceptance", "coupling")
def acc_fixed_point():
    r = forced_run()
    hist = r.record.convergence
    tail = _ratios_tail(hist)
    final = hist[-1][2] + hist[-1][3]
    iters = max(h[1] for h in hist)
    with tempfile.TemporaryDirectory() as d1, tempfile.TemporaryDirectory() as d2:
        s = sc.parse_text(FORCED_CFG)
        sc.run_scenario(s, d1)
        sc.run_scenario(s, d2)
        same = all(open(os.path.join(d1, f), "rb").read() == open(os.path.join(d2, f), "rb").read()
                   for f in ("diagnostics.csv", "convergence.csv", "probes.csv"))
    return CheckResult("", [Part("iterations", iters, 50),
                            Part("final residual", final, 1e-6),
                            Part("max ratio over last 10", max(tail), 1.0 - 1e-12),
                            Part("byte mismatch", 0.0 if same else 1.0, 0.0)])


@register("acceptance-10-boundary-probe", "acceptance", "diagnostics")
def acc_probe():
    r = forced_run()
    rows = [x for x in r.probes if x[0] == "boundary_mass"]
    mass = [x[2] for x in sorted(rows, key=lambda x: x[1])]
    xi3 = max(x[2] for x in r.probes if x[0] == "boundary_xi3_diag")
    return CheckResult("", [Part("max increase of boundary mass in K", float(np.max(np.diff(mass))), 0.0),
                            Part("xi3_jj", xi3, 1e-8)],
                       detail=f"masses {mass}")


SWEEP_DELTA = (0.0, 1e-3, 2e-3, 4e-3)
SWEEP_EPS = (1e-2, 3e-3, 1e-3, 1e-4)


def sweep_invariants(report):
    led = report.record.ledger
    rep = dg.energy_budget(led)
    m = np.array([x.mass for x in led])
    return dict(mass=float(np.max(np.abs(m - m[0])) / m[0]),
                min_rho=float(min(x.min_density for x in led)),
                energy=rep.relative,
                trace=float(max(x.trace_residual for x in led)),
                status=report.status)


@register("acceptance-11-layer-sweeps", "acceptance", "sweep")
def acc_sweeps():
    parts = []
    ib = []
    worst = dict(mass=0.0, min_rho=np.inf, energy=0.0, trace=0.0)
    completed = 0
    for d in SWEEP_DELTA:
        r = scenario_run(FORCED_CFG, "layers.delta", d)
        ib.append(r.record.ledger[-1].internal_beta)
        inv = sweep_invariants(r)
        completed += inv["status"] == "completed"
        for k in ("mass", "energy", "trace"):
            worst[k] = max(worst[k], inv[k])
        worst["min_rho"] = min(worst["min_rho"], inv["min_rho"])
    slopes = np.array(ib[1:]) / np.array(SWEEP_DELTA[1:])
    spread = float((slopes.max() - slopes.min()) / slopes.mean())
    integ, oracle = [], []
    for e in SWEEP_EPS:
        r = scenario_run(FORCED_CFG, "layers.epsilon", e)
        integ.append([x[2] for x in r.probes if x[0] == "interior_rho_gamma_plus_1"][0])
        inv = sweep_invariants(r)
        completed += inv["status"] == "completed"
        for k in ("mass", "energy", "trace"):
            worst[k] = max(worst[k], inv[k])
        worst["min_rho"] = min(worst["min_rho"], inv["min_rho"])
        oracle.append(square_oracle_errors(modes=(32,), eps=e)[0])
    parts += [Part("internal_beta at delta=0", abs(ib[0]), 0.0),
              Part("spread of internal_beta/delta", spread, 0.05),
              Part("interior rho^(gamma+1) max/min", max(integ) / min(integ), 2.0),
              Part("runs not completed", len(SWEEP_DELTA) + len(SWEEP_EPS) - completed, 0),
              Part("mass drift (worst)", worst["mass"], 1e-6),
              Part("min density (worst)", worst["min_rho"], -1e-8, "ge"),
              Part("energy violation / E0 (worst)", worst["energy"], 1e-4),
              Part("trace residual (worst)", worst["trace"], 1e-8),
              Part("transport oracle error (worst eps)", max(oracle), 0.05)]
    return CheckResult("", parts, detail=f"internal_beta {ib}; integrability {integ}; oracle {oracle}")


@register("acceptance-12-restart", "acceptance", "coupling")
def acc_restart():
    r = scenario_run(RESTART_CFG)
    rs = r.record.restarts
    if not rs:
        return CheckResult("", [Part("restarts performed", 0, 1, "ge")])
    dm = max(abs(m1 - m0) / abs(m0) for _, _, m0, m1, _, _ in rs)
    de = max(abs(e1 - e0) / abs(e0) for _, _, _, _, e0, e1 in rs)
    return CheckResult("", [Part("restarts performed", len(rs), 1, "ge"),
                            Part("relative mass change", dm, 1e-6),
                            Part("relative energy change", de, 1e-6),
                            Part("run completed", 0.0 if r.status == "completed" else 1.0, 0.0)])


# --------------------------------------------------------------------------
# module invariants (fast)
# --------------------------------------------------------------------------

@register("geometry-invariants", "geometry", "invariants")
def inv_geometry():
    ref = G.ReferenceDomain(L=0.5)
    bq = G.boundary_quadrature(32, 6)
    f = lambda th: 0.15 * np.sin(th) ** 6 * (np.sin(th) > 0)
    df = lambda th: 0.9 * np.sin(th) ** 5 * np.cos(th) * (np.sin(th) > 0)
    ch = G.build_chart(G.FunctionDisplacement(f, df), ref)
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, (2000, 2))
    x = x[np.hypot(x[:, 0], x[:, 1]) < 1]
    return CheckResult("", [Part("|nu| - 1", ref.normal_unit_error(bq), 1e-12),
                            Part("injectivity gap", ref.injectivity_gap(), 0.0, "ge"),
                            Part("min Jacobian", ch.min_jacobian(G.disk_quadrature(0.5)), 0.0, "ge"),
                            Part("psi^-1 o psi - id", float(np.max(np.abs(ch.psi_inverse(ch.psi(x)) - x))), 1e-10)])


@register("shell-invariants", "shell", "invariants")
def inv_shell():
    b = sh.ShellBasis(6)
    S = sh.stiffness_matrix(b, sh.ShellParams(1.0, 0.5, 0.1))
    return CheckResult("", [Part("orthonormality", float(np.max(np.abs(b.gram() - np.eye(b.n)))), 1e-10),
                            Part("stiffness asymmetry", float(np.max(np.abs(S - S.T))), 1e-12),
                            Part("coercivity c0", sh.coercivity_constant(sh.ShellParams(1.0, 0.5, 0.1), b), 0.0, "ge")])


@register("momentum-invariants", "momentum", "invariants")
def inv_momentum():
    ref, quad = _disk()
    b = sh.ShellBasis(4)
    S = sh.stiffness_matrix(b, sh.ShellParams())
    cs = CoupledBasis(quad, b, ref, 2, shell_only=True)
    ms = MomentumSystem(cs, FluidParams(), S)
    alpha, eta = np.zeros(cs.n), np.array([0.01, 0, 0, 0])
    A = ms.mass(None, None)
    ops = ms.operators(None, None, None, None)
    worst = 0.0
    for _ in range(50):
        st = step_momentum(ms, alpha, eta, 0.01, A, A, ops, np.zeros(cs.n))
        worst = max(worst, discrete_energy_residual(st, alpha, eta, S))
        alpha, eta = st.alpha, st.eta
    th = np.linspace(0, 2 * np.pi, 64)
    cb = CoupledBasis(quad, b, ref, 2)
    bp = np.stack([np.cos(th), np.sin(th)], axis=1)
    vals, _ = cb.evaluate(bp)
    return CheckResult("", [Part("shell oscillator energy residual", worst, 1e-12),
                            Part("trace of basis vs exact datum", float(np.max(np.abs(vals - cb.boundary_values(th)))), 1e-12)])


@register("coupling-invariants", "coupling", "invariants")
def inv_coupling():
    ok = (cp.self_intersection_guard(0.01, 0.5)[0] == "continue"
          and cp.self_intersection_guard(0.45 * 0.5, 0.5) == ("stop", "displacement")
          and cp.self_intersection_guard(0.0, 0.5, 1e-5) == ("stop", "jacobian"))
    return CheckResult("", [Part("guard thresholds", 0.0 if ok else 1.0, 0.0)])


@register("diagnostics-invariants", "diagnostics", "invariants")
def inv_diagnostics():
    z = np.linspace(0.0, 12.0, 4801)
    T = dg.T_k(z, 2)
    Lk = dg.L_k(z, 2)
    return CheckResult("", [Part("T_k decrease", float(max(-np.min(np.diff(T)), 0.0)), 0.0),
                            Part("T_k concavity defect", float(max(np.max(np.diff(T, 2)), 0.0)), 1e-12),
                            Part("L_k convexity defect", float(max(-np.min(np.diff(Lk, 2)), 0.0)), 1e-12)])


@register("transport-invariants", "transport", "invariants")
def inv_transport():
    _, r = static_transport(lambda x: 1 + 0.2 * x[:, 0], n_steps=20)
    return CheckResult("", [Part("mass drift", _mass_drift(r), 1e-10),
                            Part("min density", min(r.min_density), 0.0, "ge")])


@register("cli-invariants", "cli", "invariants")
def inv_cli():
    s = sc.parse_text(FORCED_CFG)
    back = sc.parse_text(s.emit())
    diff = sum(1 for k in s.values if s.values[k] != back.values[k])
    return CheckResult("", [Part("round-trip field mismatches", diff, 0)])
