import csv
import os
import subprocess
import sys

import numpy as np
import pytest

from koiter_fsi import checks
from koiter_fsi import cli
from koiter_fsi import diagnostics as dg
from koiter_fsi import scenario as sc
from koiter_fsi.coupling import LEDGER_COLUMNS
from koiter_fsi.errors import ParseError, ValidationError

REST = "initial.rho0 = constant 0\ndisc.T = 0.04\noutput.snapshot_every = 2\n"


def run_cli(*args, cwd=None):
    return subprocess.run([sys.executable, "-m", "koiter_fsi", *map(str, args)],
                          capture_output=True, text=True, cwd=cwd)


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_empty_config_gives_defaults():
    s = sc.parse_text("")
    assert s.values == sc.DEFAULTS
    assert s["initial.rho0"] == "constant 1" and s["layers.kappa"] == 1e-3


def test_emit_round_trip():
    s = sc.parse_text("forcing.g = constant 0.5\ndisc.T = 0.3  # comment\ncoupling.restart = yes\n")
    back = sc.parse_text(s.emit())
    assert back.values == s.values
    assert back["coupling.restart"] is True


@pytest.mark.parametrize("text,msg", [
    ("initial.rho0 = linear 0.1 1\n", "rho0 nonnegative"),
    ("initial.eta1 = coeffs 0.1\n", "compatibility"),
    ("initial.eta0 = bump 0.3\n", "eta0 inside the tube"),
    ("layers.kappa = 0.1\n", "kappa admissible"),
    ("coupling.theta_mix = 0\n", "theta_mix"),
    ("fluid.gamma = 1\n", "gamma"),
    ("probes.K = 10,abc\n", "probes.K"),
])
def test_validation_messages(text, msg):
    with pytest.raises(ValidationError, match=msg):
        sc.parse_text(text)


def test_compatible_lift_accepted():
    s = sc.parse_text("initial.eta1 = coeffs 0.1\ninitial.u0 = lift\n")
    b = sc.build(s)
    assert sc.compatibility_residual(s, b.problem.shell_basis, b.ref,
                                     sc.shell_preset("coeffs 0.1", b.problem.shell_basis)) == 0


@pytest.mark.parametrize("text,line", [
    ("disc.T = 0.1\nnot a pair\n", 2),
    ("bogus.key = 1\n", 1),
    ("disc.T = 0.1\ndisc.T = 0.2\n", 2),
    ("disc.dt = fast\n", 1),
])
def test_parse_errors_carry_line(text, line):
    with pytest.raises(ParseError) as exc:
        sc.parse_text(text)
    assert exc.value.line == line


def test_with_value_validates():
    s = sc.parse_text("")
    assert s.with_value("layers.delta", "1e-3")["layers.delta"] == 1e-3
    with pytest.raises(ValidationError):
        s.with_value("nope", "1")


def test_rest_scenario_outputs(tmp_path):
    rep = sc.run_scenario(sc.parse_text(REST), tmp_path)
    assert rep.status == "completed" and rep.exit_code == 0
    diag = read_csv(tmp_path / "diagnostics.csv")
    assert diag[0] == LEDGER_COLUMNS
    col = diag[0].index("inequality_residual")
    assert max(abs(float(r[col])) for r in diag[1:]) <= 1e-10
    assert read_csv(tmp_path / "convergence.csv")[0] == dg.CONVERGENCE_COLUMNS
    assert read_csv(tmp_path / "probes.csv")[0] == ["probe", "parameter", "value"]
    snaps = sorted(os.listdir(tmp_path / "snapshots"))
    assert len(snaps) == 3
    assert read_csv(tmp_path / "snapshots" / snaps[0])[0] == dg.SNAPSHOT_COLUMNS
    assert sc.parse_config(tmp_path / "resolved.cfg").values == sc.parse_text(REST).values
    assert "status=completed" in (tmp_path / "status.txt").read_text()


def test_forced_scenario_energy_after_cutoff():
    r = checks.scenario_run("forcing.g = constant 0.5\ndisc.T = 0.2\nforcing.t_off = 0.1\n")
    assert r.status == "completed"
    led = r.record.ledger
    E = np.array([x.energy() for x in led if x.t >= 0.1])
    assert np.all(np.diff(E) <= 1e-12)


def test_cli_run_and_exit_codes(tmp_path):
    cfg = tmp_path / "rest.cfg"
    cfg.write_text(REST)
    out = run_cli("run", cfg, "--out", tmp_path / "o")
    assert out.returncode == 0, out.stderr
    assert "status=completed" in out.stdout
    bad = tmp_path / "bad.cfg"
    bad.write_text("initial.rho0 = linear 0.1 1\n")
    res = run_cli("run", bad)
    assert res.returncode == 4 and "rho0 nonnegative" in res.stderr
    assert run_cli("run", tmp_path / "missing.cfg").returncode == 4


def test_cli_guard_exit(tmp_path):
    cfg = tmp_path / "guard.cfg"
    cfg.write_text("initial.eta0 = bump 0.2\nforcing.g = constant 40\ndisc.T = 0.3\n")
    res = run_cli("run", cfg, "--out", tmp_path / "o")
    assert res.returncode == 2
    assert "reason=window" in (tmp_path / "o" / "status.txt").read_text()


def test_cli_no_convergence_exit(tmp_path):
    cfg = tmp_path / "nc.cfg"
    cfg.write_text("forcing.g = constant 0.5\ndisc.T = 0.04\ncoupling.max_iters = 2\ncoupling.tol = 1e-14\n")
    res = run_cli("run", cfg, "--out", tmp_path / "o")
    assert res.returncode == 3
    assert read_csv(tmp_path / "o" / "convergence.csv")[0] == dg.CONVERGENCE_COLUMNS


def test_cli_sweep(tmp_path, monkeypatch):
    monkeypatch.setenv("KOITER_FSI_THREADS", "2")
    cfg = tmp_path / "s.cfg"
    cfg.write_text(REST + "sweep.param = layers.delta\nsweep.values = 0, 1e-3\n")
    assert cli.main(["sweep", str(cfg), "--out", str(tmp_path / "sw")]) == 0
    rows = read_csv(tmp_path / "sw" / "sweep.csv")
    assert rows[0] == cli.SWEEP_COLUMNS
    assert [r[1] for r in rows[1:]] == ["0", "1e-3"]
    assert all(r[2] == "completed" for r in rows[1:])


def test_cli_sweep_rejects_bad_value(tmp_path):
    cfg = tmp_path / "s.cfg"
    cfg.write_text(REST)
    assert cli.main(["sweep", str(cfg), "--param", "layers.kappa", "--values", "1e-3,1"]) == 4


def test_suite_filter_selects_oracle_checks():
    names = [n for n, _ in checks.select("transport-oracle")]
    assert names == ["acceptance-4-transport-oracle", "acceptance-5-shell-spectrum"]
    assert len(checks.select("all")) == len(checks.REGISTRY)
    acc = [n for n, _ in checks.select("acceptance")]
    assert [int(n.split("-")[1]) for n in acc] == list(range(1, 13))


def test_invariant_suite_passes():
    res = checks.run_checks("invariants")
    assert res and all(r.passed for r in res), checks.format_table(res)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_fault_injection_fails_target(seed):
    res = checks.run_checks("shell", fault="shell-invariants", seed=seed)
    by = {r.name: r.passed for r in res}
    assert by["shell-invariants"] is False
    assert by["acceptance-5-shell-spectrum"] is True


def test_cli_check_fault_exit(capsys):
    assert cli.main(["check", "--suite", "shell"]) == 0
    assert cli.main(["check", "--suite", "shell", "--inject-fault", "acceptance-5-shell-spectrum"]) == 1
    out = capsys.readouterr().out
    assert "[FAIL] acceptance-5-shell-spectrum" in out
