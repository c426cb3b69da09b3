"""A released shell bump and the boundary-layer probe.

The pressure mass in the layer of width 1/K next to the shell should go
to zero as K grows, at a rate close to 1/K for bounded densities.

    python3 demos/moving_shell_probes.py
"""
import numpy as np

from _common import config, outdir
from koiter_fsi import scenario as sc

s = sc.parse_config(config("moving_shell.cfg"))
rep = sc.run_scenario(s, outdir("moving_shell"))
print("status:", rep.status)
led = rep.record.ledger
print(f"mass drift {abs(led[-1].mass - led[0].mass) / led[0].mass:.2e},"
      f" min density {min(r.min_density for r in led):.3f}")

mass = {int(k): v for name, k, v in rep.probes if name == "boundary_mass"}
Ks = sorted(mass)
for a, b in zip(Ks, Ks[1:]):
    print(f"K {a:3d} -> {b:3d}: boundary mass {mass[a]:.4e} -> {mass[b]:.4e},"
          f" rate {np.log(mass[a] / mass[b]) / np.log(b / a):.2f}")
for name, k, v in rep.probes:
    if name.startswith("boundary_xi3") or name.startswith("interior"):
        print(f"{name}[{k}] = {v:.3e}")
