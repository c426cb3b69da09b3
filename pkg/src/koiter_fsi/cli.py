"""Command line: run, check, oracle and sweep.

Exit codes: 0 completed, 2 stopped at the self-intersection guard,
3 no convergence (or an inner solver failure), 4 configuration error.
``check`` and ``oracle`` exit 1 when any item fails.
"""
import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import diagnostics as dg
from . import scenario as sc
from .errors import FSIError, ParseError, ValidationError

CONFIG_ERRORS = (ParseError, ValidationError, OSError)


def _fail_config(exc):
    print(f"error: config: {exc}", file=sys.stderr)
    print(f"reason=config-error: {exc}")
    return sc.EXIT_CONFIG


def _load(path):
    return sc.parse_config(path)


def cmd_run(args):
    try:
        s = _load(args.config)
    except CONFIG_ERRORS as exc:
        return _fail_config(exc)
    out = args.out or s["output.dir"]
    rep = sc.run_scenario(s, out)
    print(f"status={rep.status}")
    print(f"reason={rep.reason}")
    print(f"output={out}")
    return rep.exit_code


def cmd_check(args):
    from . import checks
    res = checks.run_checks(args.suite, fault=args.inject_fault, seed=args.seed)
    if not res:
        print(f"no checks match suite {args.suite!r}", file=sys.stderr)
        return 1
    print(checks.format_table(res))
    bad = sum(not r.passed for r in res)
    print(f"{len(res) - bad}/{len(res)} passed")
    return 0 if bad == 0 else 1


def oracle_rows(s):
    """Finite-difference references for the scenario's discretisation."""
    from . import checks
    from .geometry import ReferenceDomain
    from .momentum import HarmonicLift
    from .oracles import fd_clamped_beam_eigenvalues, fd_laplacian_residual
    from .shell import shell_eigenbasis
    rows = []
    ref = ReferenceDomain(s["domain.L"], sc._shell_arc(s["domain.shell_arc"]))
    k = min(3, s["disc.n_shell"])
    b = shell_eigenbasis(k, ref.shell_length)
    fd = fd_clamped_beam_eigenvalues(256, ref.shell_length, k)
    for i in range(k):
        rows.append(("beam_eigenvalue_rel_gap", i + 1, abs(b.eigenvalues[i] - fd[i]) / fd[i]))
    errs = checks.square_oracle_errors(modes=(8, 16, 32), eps=s["layers.epsilon"])
    for nm, e in zip((8, 16, 32), errs):
        rows.append(("transport_square_rel_l2", nm, e))
    pts = np.array([[0.3, 0.2], [-0.5, 0.1], [0.0, 0.7], [0.6, -0.6]])
    for i in range(k):
        lift = HarmonicLift(lambda th, i=i: b.eval(np.mod(th - ref.shell_arc[0], 2 * np.pi))[i] * np.cos(th),
                            s["disc.lift_modes"])
        res = fd_laplacian_residual(lambda y: lift.eval_points(y)[0], pts, 1e-3)
        rows.append(("lift_fd_laplacian", i + 1, float(np.max(np.abs(res)))))
    return rows


ORACLE_TOL = {"beam_eigenvalue_rel_gap": 0.01, "transport_square_rel_l2": None, "lift_fd_laplacian": 1e-5}


def cmd_oracle(args):
    try:
        s = _load(args.config)
    except CONFIG_ERRORS as exc:
        return _fail_config(exc)
    out = args.out or s["output.dir"]
    os.makedirs(out, exist_ok=True)
    rows = oracle_rows(s)
    dg.write_probes_csv(os.path.join(out, "oracle.csv"), rows)
    bad = 0
    for name, par, val in rows:
        tol = ORACLE_TOL.get(name)
        if name == "transport_square_rel_l2" and par == 32:
            tol = 0.05
        flag = "" if tol is None else ("ok" if val <= tol else "FAIL")
        bad += flag == "FAIL"
        print(f"{name:28s} {par:>4} {val:.6e} {flag}")
    return 0 if bad == 0 else 1


SWEEP_COLUMNS = ["param", "value", "status", "exit_code", "mass_drift_relative", "min_density",
                 "energy_relative_violation", "trace_residual_max", "internal_beta_final",
                 "interior_rho_gamma_plus_1"]


def _threads():
    try:
        return max(1, int(os.environ.get("KOITER_FSI_THREADS", "1")))
    except ValueError:
        return 1


def _sweep_point(s, param, value, out):
    pt = s.with_value(param, value)
    d = os.path.join(out, f"{param}={value}")
    rep = sc.run_scenario(pt, d)
    pr = {name: val for name, _, val in rep.probes}
    led = rep.record.ledger if rep.record is not None else []
    return [param, value, rep.status, rep.exit_code,
            pr.get("mass_drift_relative", np.nan), pr.get("min_density", np.nan),
            pr.get("energy_relative_violation", np.nan), pr.get("trace_residual_max", np.nan),
            led[-1].internal_beta if led else np.nan, pr.get("interior_rho_gamma_plus_1", np.nan)]


def cmd_sweep(args):
    try:
        s = _load(args.config)
        param = args.param or s["sweep.param"]
        values = [v.strip() for v in (args.values or s["sweep.values"]).split(",") if v.strip()]
        if not param or not values:
            raise ValidationError("sweep needs --param and --values (or sweep.param / sweep.values)")
        for v in values:
            s.with_value(param, v)
    except CONFIG_ERRORS as exc:
        return _fail_config(exc)
    out = args.out or s["output.dir"]
    os.makedirs(out, exist_ok=True)
    # each point builds its own solver; results are collected in input order
    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        rows = list(pool.map(lambda v: _sweep_point(s, param, v, out), values))
    dg.write_rows(os.path.join(out, "sweep.csv"), SWEEP_COLUMNS, rows)
    for r in rows:
        print(f"{r[0]}={r[1]}: {r[2]}")
    return max(r[3] for r in rows)


def build_parser():
    p = argparse.ArgumentParser(prog="koiter-fsi", description="Compressible fluid / elastic shell scenarios.")
    sub = p.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run a scenario")
    r.add_argument("config")
    r.add_argument("--out")
    r.set_defaults(fn=cmd_run)
    c = sub.add_parser("check", help="invariant suite and acceptance criteria")
    c.add_argument("--suite", default="all")
    c.add_argument("--inject-fault", metavar="CHECK", help="corrupt the named check (harness self-test)")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(fn=cmd_check)
    o = sub.add_parser("oracle", help="finite-difference reference comparisons")
    o.add_argument("config")
    o.add_argument("--out")
    o.set_defaults(fn=cmd_oracle)
    w = sub.add_parser("sweep", help="run a scenario over values of one key")
    w.add_argument("config")
    w.add_argument("--param")
    w.add_argument("--values")
    w.add_argument("--out")
    w.set_defaults(fn=cmd_sweep)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except CONFIG_ERRORS as exc:
        return _fail_config(exc)
    except FSIError as exc:
        print(f"reason=solver-failure: {type(exc).__name__}: {exc}")
        return sc.EXIT_NO_CONVERGENCE
