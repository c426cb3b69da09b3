"""Continuation restarts, then a sweep over the pressure-layer weight.

    KOITER_FSI_THREADS=4 python3 demos/restart_and_sweep.py
"""
from _common import config, outdir
from koiter_fsi import cli
from koiter_fsi import scenario as sc

s = sc.parse_config(config("restart.cfg"))
rep = sc.run_scenario(s, outdir("restart"))
print(f"restart run: {rep.status}, restarts={len(rep.record.restarts)}")
for t, L_new, m0, m1, E0, E1 in rep.record.restarts:
    print(f"  t={t:.3f} new tube half-width {L_new:.4f}, mass change {m1 - m0:.1e}, energy change {E1 - E0:.1e}")

print("\nsweep over layers.delta")
code = cli.main(["sweep", config("layer_sweep.cfg"), "--out", outdir("layer_sweep")])
print("exit code", code)
