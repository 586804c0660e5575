"""Volatility and sign-reversal surface of the queue-reactive model.

Simulates a coarse (theta, theta_reinit) grid on the fixture Model I,
reports the purely mechanical volatility (every candidate move accepted,
no redraws) and then recovers the parameters of a node simulated on a
fresh seed from its (vol, eta) pair.

    python3 demos/volatility_surface.py
"""
import warnings

from qrlob import fixtures
from qrlob.calibrate import OutOfRange, build_surface, invert, mechanical_volatility
from qrlob.simulate import default_laws

HORIZON = 2 * 3600.0


def main():
    model = fixtures.model_i()
    laws = default_laws(model)
    thetas = [0.4, 0.7, 1.0]
    reinits = [0.0, 0.5, 1.0]
    s = build_surface(model, thetas, reinits, laws, horizon=HORIZON, n_paths=40, seed=1, jobs=2)

    print("10-minute midprice volatility (x 1e-3)")
    print("theta \\ reinit " + "".join(f"{r:8.2f}" for r in reinits))
    for i, th in enumerate(thetas):
        print(f"{th:14.2f} " + "".join(f"{v * 1e3:8.3f}" for v in s.vol[i]))
    print("\nreference-price sign reversals eta")
    for i, th in enumerate(thetas):
        print(f"{th:14.2f} " + "".join(f"{e:8.3f}" for e in s.eta[i]))

    mech = mechanical_volatility(model, laws, horizon=HORIZON, n_paths=40, seed=2)
    print(f"\nmechanical volatility {mech['vol'] * 1e3:.3f}e-3 (se {mech['vol_se'] * 1e3:.3f}e-3), "
          f"{mech['n_pref_changes']:.0f} price moves per path")

    target = build_surface(model, [0.7], [0.5], laws, horizon=HORIZON, n_paths=80, seed=3)
    v, e = target.vol[0, 0], target.eta[0, 0]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", OutOfRange)
        out = invert(s, v, e)
    print(f"\ntarget simulated at (0.70, 0.50): vol {v * 1e3:.3f}e-3, eta {e:.3f}")
    print(f"inverted: theta {out['theta']:.2f}, theta_reinit {out['theta_reinit']:.2f}, "
          f"residual {out['residual']:.2e}")
    for w in caught:
        print("warning:", w.message)


if __name__ == "__main__":
    main()
