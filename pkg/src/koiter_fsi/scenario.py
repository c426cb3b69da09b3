"""Scenario files: parsing, validation, resolved-config echo and the run driver.

A scenario is UTF-8 text with one ``section.key = value`` per line; ``#``
starts a comment.  Every key has a default (see ``SCHEMA``), so an empty
file is the rest state.  Analytic presets are written as a name followed by
numbers, e.g. ``initial.rho0 = gaussian 1.0 0.5 0.0 0.2 0.25``.
"""
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import coupling as cp
from . import diagnostics as dg
from .errors import (FSIError, KappaTooLarge, NoConvergence, ParseError, ValidationError)
from .geometry import DomainChart, Layer, ReferenceDomain, boundary_quadrature, disk_quadrature
from .momentum import CoupledBasis, FluidParams, Forcing, MomentumSystem
from .regularize import MollifierConfig
from .shell import (ShellDisplacement, ShellParams, coercivity_constant, shell_eigenbasis,
                    stiffness_matrix)
from .transport import DiskScalarBasis, project

EXIT_COMPLETED = 0
EXIT_GUARD = 2
EXIT_NO_CONVERGENCE = 3
EXIT_CONFIG = 4

COMPAT_TOL = 1e-8

# key, type, default
SCHEMA = [
    ("domain.L", float, 0.5),
    ("domain.shell_arc", str, "upper"),
    ("domain.theta_cells", int, 16),
    ("domain.quad_order", int, 6),
    ("domain.radial_refine", int, 1),
    ("domain.boundary_cells", int, 32),
    ("shell.m", float, 1.0),
    ("shell.b2", float, 0.0),
    ("shell.b0", float, 0.0),
    ("fluid.mu", float, 1.0),
    ("fluid.lambda", float, 0.0),
    ("fluid.a", float, 1.0),
    ("fluid.gamma", float, 2.0),
    ("layers.epsilon", float, 1e-2),
    ("layers.kappa", float, 1e-3),
    ("layers.delta", float, 0.0),
    ("layers.beta", float, 4.0),
    ("initial.rho0", str, "constant 1"),
    ("initial.eta0", str, "zero"),
    ("initial.eta1", str, "zero"),
    ("initial.u0", str, "zero"),
    ("forcing.f", str, "none"),
    ("forcing.g", str, "none"),
    ("forcing.t_off", float, math.inf),
    ("disc.n_shell", int, 4),
    ("disc.scalar_degree", int, 4),
    ("disc.vector_degree", int, 2),
    ("disc.n_fluid", int, 0),
    ("disc.lift_modes", int, 8192),
    ("disc.dt", float, 0.01),
    ("disc.T", float, 0.2),
    ("coupling.theta_mix", float, 0.5),
    ("coupling.tol", float, 1e-6),
    ("coupling.max_iters", int, 50),
    ("coupling.window", float, 0.0),
    ("coupling.restart", bool, False),
    ("coupling.m_bound", str, "auto"),
    ("output.dir", str, "out"),
    ("output.snapshot_every", int, 0),
    ("probes.K", str, "10,20,40,80"),
    ("probes.truncation_k", float, 1.0),
    ("sweep.param", str, ""),
    ("sweep.values", str, ""),
    ("seed", int, 0),
]
TYPES = {k: t for k, t, _ in SCHEMA}
DEFAULTS = {k: d for k, _, d in SCHEMA}


def _convert(key, text, line=None):
    t = TYPES[key]
    try:
        if t is bool:
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if t is int:
            return int(text)
        if t is float:
            return float(text)
        return text
    except ValueError:
        raise ParseError(f"{key}: cannot read {text!r} as {t.__name__}", line) from None


def _emit_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class Scenario:
    values: dict = field(default_factory=lambda: dict(DEFAULTS))

    def __getitem__(self, key):
        return self.values[key]

    def with_value(self, key, text):
        if key not in TYPES:
            raise ValidationError(f"unknown key {key!r}")
        vals = dict(self.values)
        vals[key] = _convert(key, str(text))
        out = Scenario(vals)
        validate(out)
        return out

    def emit(self):
        return "".join(f"{k} = {_emit_value(self.values[k])}\n" for k, _, _ in SCHEMA)


def parse_text(text):
    vals = dict(DEFAULTS)
    seen = set()
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError("expected 'key = value'", i)
        key, val = (p.strip() for p in line.split("=", 1))
        if key not in TYPES:
            raise ParseError(f"unknown key {key!r}", i)
        if key in seen:
            raise ParseError(f"duplicate key {key!r}", i)
        seen.add(key)
        vals[key] = _convert(key, val, i)
    s = Scenario(vals)
    validate(s)
    return s


def parse_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_text(fh.read())


def write_resolved(s, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# resolved scenario, all defaults applied\n")
        fh.write(s.emit())


# --------------------------------------------------------------------------
# presets
# --------------------------------------------------------------------------

def _preset(text):
    parts = text.replace(",", " ").split()
    if not parts:
        raise ValidationError("empty preset")
    try:
        return parts[0], [float(p) for p in parts[1:]]
    except ValueError:
        raise ValidationError(f"bad numbers in preset {text!r}") from None


def _need(name, args, n):
    if len(args) != n:
        raise ValidationError(f"preset {name!r} takes {n} numbers, got {len(args)}")


def density_preset(text):
    """rho0 as a callable on reference points."""
    name, a = _preset(text)
    if name == "constant":
        _need(name, a, 1)
        return lambda x: np.full(len(x), a[0])
    if name == "gaussian":
        _need(name, a, 5)       # base amp x0 y0 sigma
        base, amp, x0, y0, sig = a
        return lambda x: base + amp * np.exp(-((x[:, 0] - x0) ** 2 + (x[:, 1] - y0) ** 2) / (2 * sig**2))
    if name == "quadratic":
        _need(name, a, 1)       # c x^2, vanishes on a line
        return lambda x: a[0] * x[:, 0] ** 2
    if name == "linear":
        _need(name, a, 2)       # c0 + c1 x
        return lambda x: a[0] + a[1] * x[:, 0]
    raise ValidationError(f"unknown density preset {name!r}")


def shell_preset(text, basis):
    """Shell coefficients from 'zero', 'coeffs c1 c2 ...' or 'bump amp' (amp sin^2 on M)."""
    name, a = _preset(text)
    if name == "zero":
        return np.zeros(basis.n)
    if name == "coeffs":
        if len(a) > basis.n:
            raise ValidationError(f"{len(a)} coefficients for {basis.n} shell modes")
        return np.concatenate([a, np.zeros(basis.n - len(a))])
    if name == "bump":
        _need(name, a, 1)
        ell = basis.length
        return basis.project(lambda x: a[0] * np.sin(np.pi * x / ell) ** 2)
    raise ValidationError(f"unknown shell preset {name!r}")


def body_force_preset(text):
    name, a = _preset(text)
    if name == "none":
        return None
    if name == "constant":
        _need(name, a, 2)
        return lambda t, x: np.tile(a, (len(x), 1))
    raise ValidationError(f"unknown body force preset {name!r}")


def shell_load_preset(text, n_shell):
    """g(t) coefficients: 'none', 'constant c1 ...', 'sine omega c1 ...'."""
    name, a = _preset(text)
    if name == "none":
        return None
    if name == "constant":
        c = np.zeros(n_shell)
        c[:len(a)] = a[:n_shell]
        return lambda t: c
    if name == "sine":
        if not a:
            raise ValidationError("sine load needs omega")
        c = np.zeros(n_shell)
        c[:len(a) - 1] = a[1:n_shell + 1]
        return lambda t: c * np.sin(a[0] * t)
    raise ValidationError(f"unknown shell load preset {name!r}")


# --------------------------------------------------------------------------
# validation and assembly
# --------------------------------------------------------------------------

def _shell_arc(text):
    if text in ("upper", "full"):
        return text
    name, a = _preset(text)
    if name != "arc" or len(a) != 2 or not a[0] < a[1]:
        raise ValidationError("domain.shell_arc must be 'upper', 'full' or 'arc a b'")
    return (a[0], a[1])


def _params(s):
    shell = ShellParams(s["shell.m"], s["shell.b2"], s["shell.b0"])
    fluid = FluidParams(mu=s["fluid.mu"], lam=s["fluid.lambda"], a=s["fluid.a"],
                        gamma=s["fluid.gamma"], delta=s["layers.delta"], beta=s["layers.beta"],
                        epsilon=s["layers.epsilon"], kappa=s["layers.kappa"])
    return shell, fluid


def compatibility_residual(s, shell_basis, ref, eta1):
    """L2 norm on the boundary of u0 - eta1 w nu for the configured u0 preset."""
    th = np.linspace(0.0, 2 * np.pi, 1024, endpoint=False)
    x = ref.arc_coordinate(th)
    want = (eta1 @ shell_basis.eval(x))[:, None] * np.stack([np.cos(th), np.sin(th)], axis=1)
    name, a = _preset(s["initial.u0"])
    if name == "zero":
        have = np.zeros_like(want)
    elif name == "lift":
        have = want
    elif name == "uniform":
        _need(name, a, 2)
        have = np.tile(a, (len(th), 1))
    else:
        raise ValidationError(f"unknown velocity preset {name!r}")
    return float(np.sqrt(np.mean(np.sum((have - want) ** 2, axis=1)) * 2 * np.pi))


def validate(s):
    """Raise ValidationError naming the first violated invariant."""
    for k in ("domain.L", "disc.dt", "disc.T", "coupling.tol"):
        if not s[k] > 0:
            raise ValidationError(f"{k} positive")
    if not s["domain.L"] < 1.0:
        raise ValidationError("domain.L below the disk radius")
    if not 0 < s["coupling.theta_mix"] <= 1:
        raise ValidationError("coupling.theta_mix in (0, 1]")
    if s["disc.n_shell"] < 1 or s["disc.scalar_degree"] < 0 or s["disc.vector_degree"] < 0:
        raise ValidationError("discretisation sizes nonnegative")
    if s["coupling.max_iters"] < 1:
        raise ValidationError("coupling.max_iters >= 1")
    _shell_arc(s["domain.shell_arc"])
    try:
        shell, fluid = _params(s)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    try:
        MollifierConfig(fluid.kappa, s["disc.T"])
    except KappaTooLarge as exc:
        raise ValidationError(f"kappa admissible: {exc}") from None
    if fluid.kappa <= 0:
        raise ValidationError("kappa positive")
    try:
        if min(float(k) for k in s["probes.K"].split(",")) <= 0:
            raise ValueError
    except ValueError:
        raise ValidationError("probes.K is a comma-separated list of positive numbers") from None
    if s["probes.truncation_k"] < 1:
        raise ValidationError("probes.truncation_k >= 1")
    quad = disk_quadrature(s["domain.L"], s["domain.theta_cells"], s["domain.quad_order"],
                           s["domain.radial_refine"])
    rho = density_preset(s["initial.rho0"])(quad.points)
    if np.min(rho) < 0:
        raise ValidationError("rho0 nonnegative")
    ref = ReferenceDomain(s["domain.L"], _shell_arc(s["domain.shell_arc"]))
    sb = shell_eigenbasis(s["disc.n_shell"], ref.shell_length)
    eta0 = shell_preset(s["initial.eta0"], sb)
    eta1 = shell_preset(s["initial.eta1"], sb)
    grid = np.linspace(0.0, sb.length, 1025)
    if np.max(np.abs(eta0 @ sb.eval(grid))) >= 0.5 * s["domain.L"]:
        raise ValidationError("eta0 inside the tube (|eta0| < L/2)")
    body_force_preset(s["forcing.f"])
    shell_load_preset(s["forcing.g"], sb.n)
    if compatibility_residual(s, sb, ref, eta1) > COMPAT_TOL:
        raise ValidationError("compatibility")
    if s["coupling.m_bound"] != "auto":
        try:
            float(s["coupling.m_bound"])
        except ValueError:
            raise ValidationError("coupling.m_bound is 'auto' or a number") from None
    return s


@dataclass
class Built:
    problem: cp.CoupledProblem
    state: cp.WindowState
    cfg: cp.CouplingConfig
    m_bound: float
    shell_params: ShellParams
    ref: ReferenceDomain


def build(s):
    """Bases, operators, initial window state and coupling settings."""
    shell, fluid = _params(s)
    ref = ReferenceDomain(s["domain.L"], _shell_arc(s["domain.shell_arc"]))
    quad = disk_quadrature(s["domain.L"], s["domain.theta_cells"], s["domain.quad_order"],
                           s["domain.radial_refine"])
    bq = boundary_quadrature(s["domain.boundary_cells"], s["domain.quad_order"])
    sb = shell_eigenbasis(s["disc.n_shell"], ref.shell_length)
    S = stiffness_matrix(sb, shell)
    scal = DiskScalarBasis(quad, s["disc.scalar_degree"])
    nf = s["disc.n_fluid"] or None
    cb = CoupledBasis(quad, sb, ref, s["disc.vector_degree"], n_fluid=nf, nf=s["disc.lift_modes"])
    forcing = Forcing(body_force_preset(s["forcing.f"]), shell_load_preset(s["forcing.g"], sb.n),
                      s["forcing.t_off"])
    ms = MomentumSystem(cb, fluid, S, forcing)
    problem = cp.CoupledProblem(ref, quad, bq, sb, S, scal, ms, fluid.kappa, s["disc.dt"])
    eta0 = shell_preset(s["initial.eta0"], sb)
    eta1 = shell_preset(s["initial.eta1"], sb)
    alpha0 = np.zeros(cb.n)
    if _preset(s["initial.u0"])[0] == "lift":
        alpha0 = cb.W.T @ eta1
    # chart of the initial displacement, then the density in that chart
    st = cp.WindowState(0.0, eta0, alpha0, np.zeros(scal.n), eta0.copy(), ref)
    _, _, geo = cp.state_invariants(problem, st)
    rho0 = density_preset(s["initial.rho0"])
    st.beta = project(scal, geo, lambda x: rho0(_reference_points(problem, st, x)))
    window = s["coupling.window"] or None
    cfg = cp.CouplingConfig(s["coupling.theta_mix"], s["coupling.tol"], s["coupling.max_iters"],
                            window, s["coupling.restart"])
    if s["coupling.m_bound"] == "auto":
        m_bound = default_m_bound(problem.shell_sup(eta0), ref.L)
    else:
        m_bound = float(s["coupling.m_bound"])
    return Built(problem, st, cfg, m_bound, shell, ref)


def _reference_points(problem, state, x):
    """Presets are given on the reference disk; pull physical points back."""
    ref = state.ref
    d = ShellDisplacement(problem.mbasis, ref.shell_arc[0], state.disp, None)
    chart = DomainChart(ref, list(ref.base_layers) + [Layer(d, ref.radius, ref.L)])
    return chart.psi_inverse(x)


def default_m_bound(eta0_sup, L):
    """Midpoint between |eta0| and the chart limit L/2."""
    return 0.5 * (eta0_sup + 0.5 * L)


# --------------------------------------------------------------------------
# running
# --------------------------------------------------------------------------

@dataclass
class RunReport:
    status: str
    exit_code: int
    reason: str
    record: object = None
    probes: list = field(default_factory=list)
    out_dir: str = ""


STATUS_CODES = {"completed": EXIT_COMPLETED, "guard": EXIT_GUARD, "no-convergence": EXIT_NO_CONVERGENCE}


# snapshot stride (in steps) for the probes when no snapshot files are requested
PROBE_STRIDE = 5


def run_scenario(s, out_dir=None, write=True):
    """Run the scenario and write diagnostics.csv, probes.csv, convergence.csv,
    snapshots and the resolved config into out_dir."""
    out_dir = s["output.dir"] if out_dir is None else out_dir
    if write:
        os.makedirs(out_dir, exist_ok=True)
        write_resolved(s, os.path.join(out_dir, "resolved.cfg"))
    b = build(s)
    p = b.problem
    try:
        rec = cp.run_coupled(p, b.state, s["disc.T"], b.cfg, b.m_bound,
                             snapshot_every=s["output.snapshot_every"] or PROBE_STRIDE)
        status, reason = rec.status, rec.reason
    except NoConvergence as exc:
        rec, status, reason = None, "no-convergence", str(exc)
    except FSIError as exc:
        rec, status, reason = None, "no-convergence", f"{type(exc).__name__}: {exc}"
    probes = collect_probes(s, b, rec) if rec is not None else []
    report = RunReport(status, STATUS_CODES[status], reason, rec, probes, out_dir)
    if write:
        write_outputs(report, b, out_dir, s["output.snapshot_every"] > 0)
    return report


def collect_probes(s, b, rec):
    p = b.problem
    rows = []
    budget = dg.energy_budget(rec.ledger)
    rows.append(("energy_max_violation", 0, budget.max_violation))
    rows.append(("energy_relative_violation", 0, budget.relative))
    if rec.ledger:
        m = np.array([r.mass for r in rec.ledger])
        rows.append(("mass_drift_relative", 0, float(np.max(np.abs(m - m[0])) / abs(m[0])) if m[0] else 0.0))
        rows.append(("min_density", 0, float(min(r.min_density for r in rec.ledger))))
        rows.append(("trace_residual_max", 0, float(max(r.trace_residual for r in rec.ledger))))
    rows.append(("shell_coercivity_c0", 0, coercivity_constant(b.shell_params, p.shell_basis)))
    rows.append(("m_bound", 0, b.m_bound))
    for t, L_new, m0, m1, e0, e1 in rec.restarts:
        rows.append(("restart_L", t, L_new))
        rows.append(("restart_mass_change", t, abs(m1 - m0) / max(abs(m0), 1e-300)))
        rows.append(("restart_energy_change", t, abs(e1 - e0) / max(abs(e0), 1e-300)))
    fs = rec.final_state
    if fs is not None:
        m, E, geo = cp.state_invariants(p, fs)
        rho = p.scalar_basis.values @ fs.beta
        try:
            Tk, Lk, ent = dg.truncation_functionals(rho, geo.wJ, s["probes.truncation_k"])
            rows += [("truncation_T_k", s["probes.truncation_k"], Tk),
                     ("truncation_L_k", s["probes.truncation_k"], Lk),
                     ("entropy_zlogz", 0, ent)]
        except FSIError:
            rows.append(("truncation_negative_density", 0, float(np.min(rho))))
    if rec.snapshots:
        snaps = dg.snapshots_from_run(p, rec)
        K = [float(k) for k in s["probes.K"].split(",")]
        rows += dg.probe_rows(dg.boundary_concentration_probe(snaps, K))
        rows.append(("flux_pairing", 0, dg.flux_pairing(snaps, p.quad)))
        rows.append(("interior_rho_gamma_plus_1", 0, dg.interior_integrability(snaps, p.quad)))
        ent = dg.entropy_residual(snaps, p.quad)
        rows.append(("entropy_residual_max", 0, float(np.max(np.abs(ent)))))
    return rows


def write_outputs(report, b, out_dir, snapshots=True):
    rec = report.record
    with open(os.path.join(out_dir, "status.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"status={report.status}\nexit_code={report.exit_code}\nreason={report.reason}\n")
    if rec is None:
        return
    dg.write_diagnostics_csv(os.path.join(out_dir, "diagnostics.csv"), rec.ledger)
    dg.write_probes_csv(os.path.join(out_dir, "probes.csv"), report.probes)
    dg.write_convergence_csv(os.path.join(out_dir, "convergence.csv"), rec.convergence)
    if snapshots and rec.snapshots:
        snap_dir = os.path.join(out_dir, "snapshots")
        os.makedirs(snap_dir, exist_ok=True)
        for i, snap in enumerate(dg.snapshots_from_run(b.problem, rec)):
            dg.write_snapshot(os.path.join(snap_dir, f"snap_{i:04d}.txt"), snap, b.problem.quad)
