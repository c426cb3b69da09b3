import numpy as np
import pytest

from koiter_fsi import coupling as cp
from koiter_fsi import geometry as G
from koiter_fsi import scenario as sc
from koiter_fsi.checks import scenario_run

# vacuum is the constant density that is a genuine rest state: any positive
# constant density pushes on the shell through its pressure
REST = "initial.rho0 = constant 0\ndisc.T = 0.06\n"
NEAR_GUARD = "initial.eta0 = bump 0.2\nforcing.g = constant 40\ndisc.T = 0.3\n"
SHRINK = "initial.eta0 = bump 0.2\nforcing.g = constant 5\ndisc.T = 0.3\n"


def march(b, n_windows, steps):
    """Window-by-window solve, returning eta after every step."""
    p, st, etas = b.problem, b.state, []
    for _ in range(n_windows):
        res = cp.fixed_point_iterate(p, st, steps, b.cfg, b.m_bound).solution
        etas += list(res.eta[1:])
        st = cp.WindowState(st.t + steps * p.dt, res.eta[-1], res.alpha[-1], res.beta[-1],
                            res.motion.disp[-1], st.ref)
    return etas


def test_rest_state_is_fixed():
    r = scenario_run(REST)
    assert r.status == "completed"
    led = r.record.ledger
    assert all(x.eta_sup == 0 and x.kinetic == 0 for x in led)
    assert max(abs(x.inequality_residual) for x in led) <= 1e-10
    assert [w[2] for w in r.record.windows] == [1]
    _, it, du, de, _, _ = r.record.convergence[-1]
    assert it == 1 and du + de <= 1e-10


def test_static_load_settles():
    b = sc.build(sc.parse_text("initial.rho0 = constant 0\nforcing.g = constant 0.1\ndisc.dt = 0.02\n"))
    g = sc.shell_load_preset("constant 0.1", b.problem.shell_basis.n)(0.0)
    S = b.problem.stiffness
    res = [np.linalg.norm(S @ e - g) for e in march(b, 10, 10)]
    half = len(res) // 2
    # viscous damping: the oscillation about the static deflection decays
    assert max(res[half:]) < 0.2 * max(res[:half])
    static = np.linalg.solve(S, g)
    assert static[0] == pytest.approx(0.1 / b.problem.shell_basis.eigenvalues[0], rel=1e-12)


def test_runs_are_deterministic():
    text = "forcing.g = constant 0.5\ndisc.T = 0.04\n"
    a = sc.run_scenario(sc.parse_text(text), write=False).record
    b = sc.run_scenario(sc.parse_text(text), write=False).record
    assert [r.__dict__ for r in a.ledger] == [r.__dict__ for r in b.ledger]
    assert a.convergence == b.convergence


@pytest.mark.parametrize("sup,expect", [(0.01, "continue"), (0.2, "continue"), (0.225, "stop"), (0.3, "stop")])
def test_guard_displacement_threshold(sup, expect):
    verdict, why = cp.self_intersection_guard(sup, 0.5)
    assert verdict == expect
    assert why == ("displacement" if expect == "stop" else "")


def test_guard_ramp_stops_at_displacement():
    verdicts = [cp.self_intersection_guard(s, 0.5, 1.0) for s in np.linspace(0, 0.3, 31)]
    first = next(i for i, v in enumerate(verdicts) if v[0] == "stop")
    assert verdicts[first] == ("stop", "displacement")
    assert np.linspace(0, 0.3, 31)[first] >= 0.45 * 0.5 - 1e-12


def test_guard_jacobian_collapse():
    # inward bump large enough to fold the chart
    ref = G.ReferenceDomain(L=0.5)
    f = lambda th: -0.07 * np.sin(th) ** 6 * (np.sin(th) > 0)
    df = lambda th: -0.42 * np.sin(th) ** 5 * np.cos(th) * (np.sin(th) > 0)
    ch = G.build_chart(G.FunctionDisplacement(f, df), ref)
    jmin = ch.min_jacobian(G.disk_quadrature(0.5, 32, 8, 4))
    assert cp.self_intersection_guard(0.07, 0.5, jmin) == ("stop", "jacobian")


def test_near_self_intersection_stops_at_guard():
    r = scenario_run(NEAR_GUARD)
    assert r.status == "guard" and r.exit_code == sc.EXIT_GUARD
    assert r.reason == "window"


def test_displacement_guard_scenario():
    r = scenario_run(NEAR_GUARD + "coupling.m_bound = 0.245\ncoupling.window = 0.05\n")
    assert (r.status, r.reason) == ("guard", "displacement")
    assert r.record.ledger[-1].eta_sup >= 0.45 * 0.5


def test_window_shrinks_and_bound_holds():
    b = sc.build(sc.parse_text(SHRINK))
    m_bound = b.m_bound
    r = scenario_run(SHRINK)
    wins = r.record.windows
    assert wins[0][2] == -1                       # first attempt rejected
    accepted = [w for w in wins if w[2] > 0]
    assert accepted and accepted[0][1] - accepted[0][0] < 0.3 - 1e-12
    assert max(x.eta_sup for x in r.record.ledger) <= m_bound
    sup0 = b.problem.shell_sup(b.state.eta)
    assert sup0 == pytest.approx(0.4 * 0.5, rel=1e-2)
    assert m_bound == pytest.approx(0.5 * (sup0 + 0.25), rel=1e-12)


def test_restart_of_zero_displacement_is_identity():
    b = sc.build(sc.parse_text("initial.rho0 = gaussian 1 0.5 0.2 0.1 0.3\n"))
    p, st = b.problem, b.state
    new, L_new = cp.continuation_restart(p, st)
    assert L_new == pytest.approx(st.ref.L, abs=1e-12)
    for a, c in ((st.eta, new.eta), (st.alpha, new.alpha), (st.beta, new.beta)):
        assert np.max(np.abs(a - c)) <= 1e-12
    m0, E0, g0 = cp.state_invariants(p, st)
    m1, E1, g1 = cp.state_invariants(p, new)
    assert np.max(np.abs(g0.points - g1.points)) <= 1e-12
    assert abs(m1 - m0) <= 1e-12 and abs(E1 - E0) <= 1e-12


def test_restart_of_bump_preserves_invariants():
    b = sc.build(sc.parse_text("initial.eta0 = bump 0.08\ninitial.rho0 = linear 1 0.3\n"))
    p, st = b.problem, b.state
    new, L_new = cp.continuation_restart(p, st)
    assert np.all(new.disp == 0)
    assert 0 < L_new <= st.ref.L
    m0, E0, _ = cp.state_invariants(p, st)
    m1, E1, _ = cp.state_invariants(p, new)
    assert abs(m1 - m0) / m0 <= 1e-6
    assert abs(E1 - E0) / E0 <= 1e-6
