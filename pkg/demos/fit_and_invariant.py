"""Fit Model I to the bundled L2 day and look at its invariant queue laws.

The bundled file is six hours of a simulated stock whose true intensities
are known (``fixtures.model_i``), so every estimate below can be set
against the truth.

    python3 demos/fit_and_invariant.py
"""
import numpy as np

from qrlob import fixtures, ingest
from qrlob.core import check_ergodicity_assumptions
from qrlob.estimate import estimate_model_I
from qrlob.stationary import invariant_model_I


def main():
    snaps = ingest.session_filter(ingest.read_l2_csv(fixtures.sample_l2_path()))
    track = ingest.track_pref(snaps)
    aes = ingest.compute_aes(snaps, 3, track=track)
    print(f"{len(snaps)} snapshots in session, {len(track.unit_path) - 1} reference-price moves")
    print("average event sizes:", np.round(aes).astype(int), "true:", [int(a) for a in fixtures.AES])

    events = ingest.reconstruct_events(snaps, aes, "queue", track=track)
    est = estimate_model_I(events, c_max=30, aes=aes)
    true = fixtures.model_i()

    print("\nintensities at the first limit (estimate / true)")
    print(" n     insert          cancel          market")
    for n in (1, 2, 4, 6, 10, 15):
        cells = [f"{est.model.rate(1, 'all', t, n):6.3f} /{true.rate(1, 'all', t, n):6.3f}" for t in "LCM"]
        print(f"{n:2d}  " + "  ".join(cells))

    report = check_ergodicity_assumptions(est.model)
    print(f"\nergodicity check: ok={report.ok}, drift margin {report.delta:.3f} "
          f"beyond size {report.c_bound}, insertion bound {report.h:.2f}")

    print("\ninvariant laws (mean queue size in AES units)")
    for d in (1, 2, 3):
        a = invariant_model_I(est.model, d)
        b = invariant_model_I(true, d)
        print(f"  distance {d}: fitted {a.mean(0):5.2f}  true {b.mean(0):5.2f}  TV {a.tv(b):.3f}")


if __name__ == "__main__":
    main()
