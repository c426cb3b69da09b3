"""Load the shell, switch the load off, and watch the energy ledger.

While the load acts the energy may grow by at most the work done on the
shell. After the cut-off it can only decay.

    python3 demos/forced_shell.py [--plot]
"""
import numpy as np

from _common import config, outdir, want_plots
from koiter_fsi import diagnostics as dg
from koiter_fsi import scenario as sc

s = sc.parse_config(config("forced_shell.cfg"))
rep = sc.run_scenario(s, outdir("forced_shell"))
led = rep.record.ledger
t = np.array([r.t for r in led])
E = np.array([r.energy() for r in led])
work = np.array([r.forcing_work_cum for r in led])
diss = np.array([r.dissipation_cum for r in led])

print(f"status: {rep.status}")
print(f"{'t':>6} {'energy':>12} {'work':>12} {'dissipated':>12} {'eta_sup':>10}")
for r in led[::4]:
    print(f"{r.t:6.3f} {r.energy():12.6e} {r.forcing_work_cum:12.6e} {r.dissipation_cum:12.6e} {r.eta_sup:10.3e}")

after = t >= s["forcing.t_off"]
print("energy increase after cut-off:", np.max(np.diff(E[after])))
budget = dg.energy_budget(led)
print(f"worst per-step violation {budget.max_violation:.2e}, relative {budget.relative:.2e}")

if want_plots():
    import matplotlib.pyplot as plt
    plt.plot(t, E, label="energy")
    plt.plot(t, E[0] + work - diss, "--", label="E0 + work - dissipation")
    plt.axvline(s["forcing.t_off"], color="k", lw=0.5)
    plt.xlabel("t")
    plt.legend()
    plt.savefig(outdir("forced_shell") + "/energy.png", dpi=120)
