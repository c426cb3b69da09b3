"""Fixed-point coupling of transport, momentum and shell on time windows.

One decoupled solve takes a boundary history zeta and a velocity history v
(both as coefficient histories on the time grid of the window), regularises
them, moves the domain with the regularised zeta, transports the density
with the regularised v and then solves the linear momentum/shell system.
The damped Picard iteration repeats this until (eta, u) reproduces (zeta, v).
"""
from dataclasses import dataclass, field

import numpy as np

from . import transport as tr
from .errors import (DisplacementTooLarge, NoConvergence, RestartGeometryInvalid,
                     WindowShrunk)
from .geometry import DomainChart, Layer, ReferenceDomain, TWO_PI, sup_norm
from .momentum import (MomentumSystem, check_spd, elastic_energy, step_momentum,
                       trace_residual, vector_gradients)
from .regularize import MollifiedShellBasis, MollifierConfig, mollify_time
from .shell import ShellDisplacement

GUARD_FRACTION = 0.45
JAC_MIN = 1e-4


@dataclass
class CouplingConfig:
    theta: float = 0.5
    tol: float = 1e-6
    max_iters: int = 50
    window: float = None
    restart: bool = False

    def __post_init__(self):
        if not 0.0 < self.theta <= 1.0:
            raise ValueError("theta_mix must lie in (0, 1]")
        if not self.tol > 0:
            raise ValueError("tol_fp must be positive")


@dataclass
class CoupledProblem:
    """Everything a window solve needs apart from the histories."""
    ref: ReferenceDomain
    quad: object
    bquad: object
    shell_basis: object
    stiffness: np.ndarray
    scalar_basis: object
    momentum: MomentumSystem
    kappa: float
    dt: float

    def __post_init__(self):
        self.mbasis = MollifiedShellBasis(self.shell_basis, self.kappa)
        self.arc_grid = np.linspace(0.0, self.shell_basis.length, 257)
        self.arc_vals = self.shell_basis.eval(self.arc_grid)
        self.marc_vals = self.mbasis.eval(self.arc_grid)

    @property
    def fluid(self):
        return self.momentum.params

    def shell_sup(self, coeffs):
        return float(np.max(np.abs(np.asarray(coeffs) @ self.arc_vals)))

    def chart_sup(self, coeffs):
        return float(np.max(np.abs(np.asarray(coeffs) @ self.marc_vals)))


# --------------------------------------------------------------------------
# domain motion inside one window
# --------------------------------------------------------------------------

class Motion:
    """Charts and drift on a window from regularised coefficient histories.

    ``disp[n]`` are the coefficients (in the mollified shell functions) of the
    top chart layer at t0 + n dt; between grid times they are interpolated
    linearly, so the chart velocity is the slope of the current step.
    """

    def __init__(self, problem, ref, t0, disp, vcoef):
        self.p = problem
        self.ref = ref
        self.t0 = t0
        self.disp = np.asarray(disp, dtype=float)
        self.vcoef = np.asarray(vcoef, dtype=float)
        self.nsteps = len(self.disp) - 1
        self._cache = {}

    def _locate(self, t):
        s = (t - self.t0) / self.p.dt
        n = int(np.clip(np.floor(s + 1e-9), 0, self.nsteps - 1))
        return n, s - n

    def coeffs(self, t):
        n, f = self._locate(t)
        c = (1.0 - f) * self.disp[n] + f * self.disp[n + 1]
        rate = (self.disp[n + 1] - self.disp[n]) / self.p.dt
        return c, rate

    def chart(self, t):
        c, rate = self.coeffs(t)
        d = ShellDisplacement(self.p.mbasis, self.ref.shell_arc[0], c, rate)
        if self.p.chart_sup(c) >= 0.5 * self.ref.L:
            raise DisplacementTooLarge("chart displacement reached L/2")
        return DomainChart(self.ref, list(self.ref.base_layers) + [Layer(d, self.ref.radius, self.ref.L)])

    def geo(self, t):
        key = round(t, 12)
        g = self._cache.get(key)
        if g is None:
            g = self.chart(t).node_geometry(self.p.quad)
            self._cache[key] = g
        return g

    def velocity_coeffs(self, t):
        n, f = self._locate(t)
        return (1.0 - f) * self.vcoef[n] + f * self.vcoef[n + 1]

    def drift(self, t, geo):
        a = self.velocity_coeffs(t)
        b = self.p.momentum.basis
        w = np.tensordot(a, b.values, axes=(0, 1))
        G = vector_gradients(b, geo)
        gw = np.tensordot(a, G, axes=(0, 1))
        return w, gw


# --------------------------------------------------------------------------
# window state and results
# --------------------------------------------------------------------------

@dataclass
class WindowState:
    """State at the start of a window.

    eta, eta_dot: shell coefficients in original coordinates; alpha: velocity
    coefficients; beta: density coefficients; disp: coefficients of the top
    chart layer (mollified shell functions).
    """
    t: float
    eta: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    disp: np.ndarray
    ref: ReferenceDomain


@dataclass
class LedgerRow:
    t: float
    mass: float
    kinetic: float
    internal_gamma: float
    internal_beta: float
    shell_kinetic: float
    shell_elastic: float
    dissipation_cum: float
    forcing_work_cum: float
    inequality_residual: float
    min_density: float
    eta_sup: float
    jac_min: float
    step_residual: float = 0.0
    trace_residual: float = 0.0

    def energy(self):
        return (self.kinetic + self.internal_gamma + self.internal_beta
                + self.shell_kinetic + self.shell_elastic)


LEDGER_COLUMNS = ["t", "mass", "kinetic", "internal_gamma", "internal_beta", "shell_kinetic",
                  "shell_elastic", "dissipation_cum", "forcing_work_cum", "inequality_residual",
                  "min_density", "eta_sup", "jac_min"]


@dataclass
class DecoupledResult:
    eta: np.ndarray          # (n+1, n_shell)
    alpha: np.ndarray        # (n+1, N)
    beta: np.ndarray         # (n+1, nb)
    motion: Motion
    ledger: list
    flagged: int = 0


@dataclass
class FixedPointResult:
    solution: DecoupledResult
    iterations: int
    history: list            # (iter, |u - v|, |eta - zeta|, ratio)
    converged: bool
    zeta: np.ndarray = None
    v: np.ndarray = None


def total_energy_terms(problem, geo, beta, alpha, eta, A):
    rho = problem.scalar_basis.values @ beta
    fp = problem.fluid
    W = problem.momentum.basis.W
    sk = 0.5 * float((W @ alpha) @ (W @ alpha))
    kin = 0.5 * float(alpha @ A @ alpha) - sk
    return dict(mass=float(geo.wJ @ rho), kinetic=kin,
                internal_gamma=float(geo.wJ @ fp.internal_gamma(rho)),
                internal_beta=float(geo.wJ @ fp.internal_beta(rho)),
                shell_kinetic=sk, shell_elastic=elastic_energy(eta, problem.stiffness),
                min_density=float(rho.min()))


def regularized_displacements(problem, zeta, start, T):
    """Top-layer chart coefficients: time-mollified zeta, anchored at the window start."""
    cfg = MollifierConfig(problem.kappa, T, problem.shell_basis.length)
    D = mollify_time(zeta, problem.dt, cfg)
    return D - D[0] + start, cfg


def solve_decoupled(problem, state, zeta, v, energy0=None, cum0=(0.0, 0.0)):
    """One evaluation of the fixed-point map on a window.

    zeta: (n+1, n_shell) boundary history, v: (n+1, N) velocity history.
    Returns DecoupledResult with eta, alpha, beta histories and ledger rows.
    """
    dt = problem.dt
    n = len(zeta) - 1
    T = n * dt
    disp, cfg = regularized_displacements(problem, zeta, state.disp, T)
    vreg = mollify_time(v, dt, cfg)
    motion = Motion(problem, state.ref, state.t, disp, vreg)
    sb = problem.scalar_basis
    tp = tr.TransportProblem(sb, problem.fluid.epsilon, motion.geo, motion.drift)
    # density first
    betas = [np.array(state.beta, dtype=float)]
    flagged = 0
    diss_rho = []
    for k in range(n):
        t0 = state.t + k * dt
        rec = tr.TransportRecord()
        st = tr.step_transport(tr.FluidState(t0, betas[-1]), tp, dt, rec)
        flagged += int(rec.flagged[-1])
        betas.append(st.beta)
        bm = 0.5 * (betas[-1] + betas[-2])
        gm = motion.geo(t0 + 0.5 * dt)
        grho = np.einsum("nkd,k->nd", tr.physical_gradients(sb, gm), bm)
        rho_m = sb.values @ bm
        Ppp = problem.fluid.pressure_second(rho_m)
        diss_rho.append(dt * problem.fluid.epsilon * float(gm.wJ @ (Ppp * np.sum(grho**2, axis=1))))
    # momentum and shell, with the trace condition built into the basis
    ms = problem.momentum
    alphas = [np.array(state.alpha, dtype=float)]
    etas = [np.array(state.eta, dtype=float)]
    ledger = []
    g0 = motion.geo(state.t)
    A_prev = ms.mass(g0, sb.values @ betas[0])
    check_spd(A_prev)
    terms = total_energy_terms(problem, g0, betas[0], alphas[0], etas[0], A_prev)
    E0 = sum(terms[k] for k in ("kinetic", "internal_gamma", "internal_beta", "shell_kinetic", "shell_elastic"))
    Eref = E0 if energy0 is None else energy0[0]
    base_off = 0.0 if energy0 is None else energy0[1]
    diss, work = cum0
    ledger.append(LedgerRow(state.t, terms["mass"], terms["kinetic"], terms["internal_gamma"],
                            terms["internal_beta"], terms["shell_kinetic"], terms["shell_elastic"],
                            diss, work, E0 + diss - Eref - work - base_off, terms["min_density"],
                            problem.shell_sup(etas[0]), float(np.min(g0.J))))
    E_prev = E0
    for k in range(n):
        t0 = state.t + k * dt
        tm = t0 + 0.5 * dt
        g1 = motion.geo(t0 + dt)
        gm = motion.geo(tm)
        rho1 = sb.values @ betas[k + 1]
        A1 = ms.mass(g1, rho1)
        check_spd(A1)
        bm = 0.5 * (betas[k] + betas[k + 1])
        rho_m = sb.values @ bm
        grho = np.einsum("nkd,k->nd", tr.physical_gradients(sb, gm), bm)
        vm, _ = motion.drift(tm, gm)
        ops = ms.operators(gm, rho_m, grho, vm)
        c, cp, cf = ms.load(gm, rho_m, tm, ops)
        st = step_momentum(ms, alphas[k], etas[k], dt, A_prev, A1, ops, c, cp, cf)
        alphas.append(st.alpha)
        etas.append(st.eta)
        diss += st.Lsym_work + diss_rho[k]
        work += st.force_work + st.shell_work
        terms = total_energy_terms(problem, g1, betas[k + 1], st.alpha, st.eta, A1)
        E1 = sum(terms[q] for q in ("kinetic", "internal_gamma", "internal_beta", "shell_kinetic", "shell_elastic"))
        step_res = E1 - E_prev + st.Lsym_work + diss_rho[k] - st.force_work - st.shell_work
        ledger.append(LedgerRow(t0 + dt, terms["mass"], terms["kinetic"], terms["internal_gamma"],
                                terms["internal_beta"], terms["shell_kinetic"], terms["shell_elastic"],
                                diss, work, E1 + diss - Eref - work - base_off, terms["min_density"],
                                problem.shell_sup(st.eta), float(np.min(g1.J)), step_res,
                                trace_residual(ms.basis, st.alpha, problem.bquad.theta, state.ref)))
        E_prev = E1
        A_prev = A1
    return DecoupledResult(np.array(etas), np.array(alphas), np.array(betas), motion, ledger, flagged)


def velocity_distance(problem, res, v):
    """L2(I x Omega) distance between u (from res) and v, trapezoid in time."""
    dt = problem.dt
    vals = problem.momentum.basis.values
    out = 0.0
    n = len(v) - 1
    for k in range(n + 1):
        g = res.motion.geo(res.motion.t0 + k * dt)
        d = np.einsum("k,nkc->nc", res.alpha[k] - v[k], vals)
        w = 0.5 if k in (0, n) else 1.0
        out += w * dt * float(g.wJ @ np.sum(d * d, axis=1))
    return float(np.sqrt(out))


def fixed_point_iterate(problem, state, n_steps, cfg, m_bound=None, energy0=None, cum0=(0.0, 0.0),
                        zeta=None, v=None):
    """Damped Picard iteration (zeta, v) <- (1 - theta)(zeta, v) + theta (eta, u)."""
    if zeta is None:
        zeta = np.tile(state.eta, (n_steps + 1, 1))
    if v is None:
        v = np.tile(state.alpha, (n_steps + 1, 1))
    theta = cfg.theta
    history = []
    prev = None
    res = None
    for it in range(1, cfg.max_iters + 1):
        try:
            res = solve_decoupled(problem, state, zeta, v, energy0, cum0)
        except DisplacementTooLarge as exc:
            raise WindowShrunk(str(exc), eta_sup=np.inf) from exc
        esup = max(problem.shell_sup(e) for e in res.eta)
        if m_bound is not None and esup > m_bound:
            raise WindowShrunk(f"|eta|_inf = {esup:.6g} exceeds M = {m_bound:.6g}", eta_sup=esup)
        du = velocity_distance(problem, res, v)
        de = max(problem.shell_sup(a - b) for a, b in zip(res.eta, zeta))
        r = du + de
        ratio = np.nan if prev is None or prev == 0 else r / prev
        history.append((it, du, de, ratio, theta))
        if r <= cfg.tol:
            return FixedPointResult(res, it, history, True, zeta, v)
        if prev is not None and r > prev:
            theta *= 0.5
        prev = r
        zeta = (1.0 - theta) * zeta + theta * res.eta
        v = (1.0 - theta) * v + theta * res.alpha
    raise NoConvergence(f"no fixed point after {cfg.max_iters} iterations", history=history)


def self_intersection_guard(eta_sup, L, jac_min=None):
    """('continue', '') or ('stop', reason)."""
    if eta_sup >= GUARD_FRACTION * L:
        return "stop", "displacement"
    if jac_min is not None and jac_min <= JAC_MIN:
        return "stop", "jacobian"
    return "continue", ""


def continuation_restart(problem, state, check=True):
    """New reference = image of the current reference under the current top chart layer.

    The current top-layer displacement becomes a frozen base layer, so the
    new top-layer displacement starts at zero and the composite chart at the
    restart time is the same map as before; coefficients carry over
    unchanged.  Returns (new_state, new tube width).
    """
    ref = state.ref
    eta_star = ShellDisplacement(problem.mbasis, ref.shell_arc[0], state.disp, None)
    old_radius = ref.radius

    def radius(theta):
        b, db = old_radius(theta)
        e, de, _ = eta_star(theta)
        return b + e, db + de

    th = np.linspace(0.0, TWO_PI, 2048, endpoint=False)
    bnew = radius(th)[0]
    L_new = ref.L * float(np.min(bnew))
    layers = tuple(ref.base_layers) + (Layer(eta_star, old_radius, ref.L),)
    new_ref = ReferenceDomain(L_new, ref.shell_arc, radius, layers)
    if check:
        if not np.all(bnew - L_new > 0.0) or L_new <= 0.0:
            raise RestartGeometryInvalid("new tube does not fit inside the domain")
        if new_ref.injectivity_gap(n_theta=128, n_s=9) <= 1e-12:
            raise RestartGeometryInvalid("new tubular map is not injective")
    new_state = WindowState(state.t, state.eta.copy(), state.alpha.copy(), state.beta.copy(),
                            np.zeros_like(state.disp), new_ref)
    return new_state, L_new


def state_invariants(problem, state):
    """Total mass and energy of a window state, evaluated in its own chart."""
    ref = state.ref
    d = ShellDisplacement(problem.mbasis, ref.shell_arc[0], state.disp, None)
    chart = DomainChart(ref, list(ref.base_layers) + [Layer(d, ref.radius, ref.L)])
    geo = chart.node_geometry(problem.quad)
    rho = problem.scalar_basis.values @ state.beta
    A = problem.momentum.mass(geo, rho)
    t = total_energy_terms(problem, geo, state.beta, state.alpha, state.eta, A)
    E = sum(t[k] for k in ("kinetic", "internal_gamma", "internal_beta", "shell_kinetic", "shell_elastic"))
    return t["mass"], E, geo


def boundary_mismatch(problem, res, theta=None):
    """L2(boundary x I) norm of (u - d_t R eta nu) . nu_eta on the deformed boundary.

    Uses the exact traces of the basis and the chart velocity of the
    regularised displacement.
    """
    b = problem.momentum.basis
    theta = problem.bquad.theta if theta is None else theta
    bw = problem.bquad.weights
    dt = problem.dt
    out = 0.0
    n = len(res.alpha) - 1
    for k in range(n):
        tm = res.motion.t0 + (k + 0.5) * dt
        chart = res.motion.chart(tm)
        _, R, Rth, Rt = chart.boundary_data(theta)
        nu = chart.boundary_normal(theta)
        m = 0.5 * (res.alpha[k] + res.alpha[k + 1])
        u = np.einsum("k,nkc->nc", m, b.boundary_values(theta))
        V = Rt[:, None] * np.stack([np.cos(theta), np.sin(theta)], axis=1)
        dS = np.sqrt(R**2 + Rth**2)
        out += dt * float(np.sum(bw * dS * np.sum((u - V) * nu, axis=1) ** 2))
    return float(np.sqrt(out))


@dataclass
class RunRecord:
    ledger: list = field(default_factory=list)
    convergence: list = field(default_factory=list)   # (window, iter, du, de, ratio, theta)
    windows: list = field(default_factory=list)       # (t0, t1, iterations)
    restarts: list = field(default_factory=list)      # (t, L_new, mass_before, mass_after, E_before, E_after)
    snapshots: list = field(default_factory=list)     # (t, state, motion, k)
    status: str = "completed"
    reason: str = ""
    flagged: int = 0
    final_state: WindowState = None


def run_coupled(problem, state, T, cfg, m_bound=None, snapshot_every=0, min_window_steps=4):
    """March over [state.t, T] in windows with the fixed-point solver on each.

    Windows shrink by half when the iterate leaves the admissible set; the
    run stops at the guard or when the window cannot shrink further.
    """
    rec = RunRecord()
    dt = problem.dt
    total_steps = int(round((T - state.t) / dt))
    win_steps = total_steps if cfg.window is None else max(1, int(round(cfg.window / dt)))
    done = 0
    energy0 = None
    cum = (0.0, 0.0)
    wi = 0
    while done < total_steps:
        n = min(win_steps, total_steps - done)
        try:
            fp = fixed_point_iterate(problem, state, n, cfg, m_bound, energy0, cum)
        except WindowShrunk as exc:
            rec.windows.append((state.t, state.t + n * dt, -1))
            win_steps = n // 2
            if win_steps < min_window_steps or problem.kappa > 0.25 * win_steps * dt:
                rec.status, rec.reason = "guard", "window"
                break
            continue
        except NoConvergence as exc:
            for h in exc.history:
                rec.convergence.append((wi,) + tuple(h))
            rec.status, rec.reason = "no-convergence", str(exc)
            break
        res = fp.solution
        for h in fp.history:
            rec.convergence.append((wi,) + tuple(h))
        rec.windows.append((state.t, state.t + n * dt, fp.iterations))
        rec.flagged += res.flagged
        rows = res.ledger if not rec.ledger else res.ledger[1:]
        if energy0 is None:
            E0 = res.ledger[0].energy()
            energy0 = (E0, 0.0)
        rec.ledger.extend(rows)
        if snapshot_every:
            for k in range(0, n + 1, snapshot_every):
                if rec.snapshots and abs(rec.snapshots[-1][0] - (state.t + k * dt)) < 1e-12:
                    continue
                rec.snapshots.append((state.t + k * dt, res.alpha[k], res.beta[k], res.motion))
        last = res.ledger[-1]
        cum = (last.dissipation_cum, last.forcing_work_cum)
        new = WindowState(state.t + n * dt, res.eta[-1], res.alpha[-1], res.beta[-1],
                          res.motion.disp[-1], state.ref)
        done += n
        wi += 1
        top_sup = problem.chart_sup(new.disp)
        verdict, why = self_intersection_guard(top_sup, new.ref.L, last.jac_min)
        state = new
        if verdict == "stop":
            rec.status, rec.reason = "guard", why
            break
        if cfg.restart and done < total_steps:
            m0, E0b, _ = state_invariants(problem, state)
            state, L_new = continuation_restart(problem, state)
            m1, E1b, _ = state_invariants(problem, state)
            rec.restarts.append((state.t, L_new, m0, m1, E0b, E1b))
    rec.final_state = state
    return rec
