"""Three runs that end differently: at rest, at the guard, after a shrink.

    python3 demos/rest_and_guard.py
"""
from _common import config, outdir
from koiter_fsi import scenario as sc

for name in ("rest", "near_guard", "window_shrink"):
    s = sc.parse_config(config(name + ".cfg"))
    b = sc.build(s)
    rep = sc.run_scenario(s, outdir(name))
    led = rep.record.ledger
    print(f"{name}: status={rep.status} reason={rep.reason or '-'} exit={rep.exit_code}")
    if led:
        print(f"  reached t={led[-1].t:.3f}, max eta_sup={max(r.eta_sup for r in led):.4f}"
              f" (bound {b.m_bound:.4f}, guard {0.45 * s['domain.L']:.4f})")
    else:
        print("  no window was accepted")
    rejected = [w for w in rep.record.windows if w[2] < 0]
    if rejected:
        print(f"  rejected windows: {[(round(a, 4), round(c, 4)) for a, c, _ in rejected]}")
    print(f"  iterations per window: {[w[2] for w in rep.record.windows if w[2] > 0]}")
