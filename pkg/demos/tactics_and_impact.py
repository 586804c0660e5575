"""Passive execution on the fixture book: fill odds, tactics and impact.

Three questions asked of the fixture Model I with a queue-reactive price:
how likely a resting buy order fills as the queue ahead of it grows, what
a patient (T1) and an impatient (T2) tactic pay against the arrival price,
and how far buying a block pushes the midprice.

    python3 demos/tactics_and_impact.py
"""
import numpy as np

from qrlob import fixtures
from qrlob.analytics import Schedule, Tactic, execution_probability, market_impact, run_tactic
from qrlob.core import LobState
from qrlob.simulate import make_params


def main():
    model = fixtures.model_i()
    params = make_params(model, 0.7, 0.85)

    print("probability that 1 unit at the best bid fills before the best ask empties")
    for ahead in (0, 2, 4, 8, 12):
        r = execution_probability(model, LobState((6, 4, ahead, 4, 4, 6)), 1, 20000, seed=ahead)
        print(f"  {ahead:2d} units ahead: {r.p:.3f} +/- {r.se:.3f}")

    print("\nbuying 20 units over 4 slices of 60 s, 400 days each")
    print("slippage is (benchmark - paid) / benchmark in basis points, positive is a saving")
    sch = Schedule("S1", 20, 4)
    for tag in ("T1", "T2"):
        res = run_tactic(model, params, sch, Tactic(tag, 60.0), n_paths=400, seed=7, jobs=2)
        s = res.summary()
        slip = res.column("slippage") * 1e4
        print(f"  {tag}: mean {slip.mean():6.2f} bp  median {np.median(slip):6.2f}  "
              f"passive share {s['passive_rate']['mean']:.2f}")

    print("\nmean relative midprice move t seconds into a 600 s slice buying n units (x 1e-4)")
    t = [60.0, 120.0, 300.0, 600.0]
    tab = market_impact(model, params, Tactic("T1", 600.0), [0, 10, 20, 40], t, n_paths=300, seed=8, jobs=2)
    print("   t (s) " + "".join(f"{n:>9d}" for n in tab.n))
    for a, ts in enumerate(tab.t):
        print(f"  {ts:6.0f} " + "".join(f"{m * 1e4:9.2f}" for m in tab.mi[a]))


if __name__ == "__main__":
    main()
