"""Synthetic intensity models bundled with the toolkit.

The shapes mimic what is typically measured on large-tick stocks:
insertion at the first limit drops when the queue is empty, cancellation
grows concavely with the queue size and market orders mostly hit short
queues.  Rates are in events per second, sizes in AES units.
"""
import numpy as np

from .core import ModelKind, model_from_functions

AES = (800.0, 1000.0, 1000.0)
TICK = 0.01
P_REF = 20.005


def _first(n):
    return np.where(n == 0, 0.35, 0.8)


def model_i(cap: int = 30):
    """Model I with concave cancellation and decreasing market-order rates."""
    return model_from_functions(
        ModelKind.ModelI, 3, AES, cap, TICK,
        L1=_first,
        C1=lambda n: 1.0 - np.exp(-n / 5.0),
        M1=lambda n: 0.8 * np.exp(-n / 3.0) + 0.05,
        L2=lambda n: 0.9 + 0 * n,
        C2=lambda n: 1.2 * (1.0 - np.exp(-n / 6.0)),
        M2=lambda n: 0.3 * np.exp(-n / 3.0) + 0.02,
        L3=lambda n: 0.9 + 0 * n,
        C3=lambda n: 1.2 * (1.0 - np.exp(-n / 8.0)),
        M3=lambda n: 0.1 * np.exp(-n / 3.0) + 0.01,
    )


def poisson_of(model, c_scale: float | None = None):
    """Poisson counterpart of ``model``: constant insertion and market-order
    rates, linear cancellation.

    Constants are the plain means of each table over sizes ``1..cap``
    (insertion over ``0..cap``) and the cancellation slope matches the
    table at the mean size unless ``c_scale`` is given.
    """
    funcs = {}
    n = np.arange(model.cap + 1)
    for d in range(1, model.K + 1):
        tab = model.tables[d]["all"]
        lam = float(np.mean(tab["L"]))
        mu = float(np.mean(tab["M"][1:]))
        c = c_scale if c_scale is not None else float(np.mean(tab["C"][1:] / n[1:]))
        funcs[f"L{d}"] = (lambda v: lambda k: v + 0 * k)(lam)
        funcs[f"M{d}"] = (lambda v: lambda k: np.where(k > 0, v, 0.0))(mu)
        funcs[f"C{d}"] = (lambda v: lambda k: v * k)(c)
    return model_from_functions(ModelKind.PoissonBaseline, model.K, model.aes, model.cap,
                                model.tick, **funcs)


def model_iia(cap: int = 30):
    """Model IIa whose first-limit flows are exactly Poisson.

    The first limit then evolves as an M/M/1 queue with load 1/2 and the
    matrix-geometric solution applies without any averaging error.
    """
    return model_from_functions(
        ModelKind.ModelIIa, 3, AES, cap, TICK,
        L1=lambda n: 0.5 + 0 * n,
        C1=lambda n: np.where(n > 0, 0.6, 0.0),
        M1=lambda n: np.where(n > 0, 0.4, 0.0),
        **{
            "L2_q1=0": lambda n: 1.1 + 0 * n,
            "C2_q1=0": lambda n: 0.9 * (1.0 - np.exp(-n / 3.0)) + 0.1 * n,
            "M2_q1=0": lambda n: 0.5 * np.exp(-n / 4.0) + 0.1,
            "L2_q1>0": lambda n: 0.7 + 0 * n,
            "C2_q1>0": lambda n: 0.8 * (1.0 - np.exp(-n / 3.0)) + 0.08 * n,
        },
        L3=lambda n: 0.9 + 0 * n,
        C3=lambda n: 1.2 * (1.0 - np.exp(-n / 8.0)),
    )


IIB_M, IIB_L = 4, 10


def model_iib(cap: int = 30):
    """Model IIb where first-limit flows react to the opposite first queue.

    A thin or empty opposite side attracts insertions (the spread wants to
    close) while a large opposite queue attracts market orders.
    """
    regs = {"S0": (1.15, 0.6), "S-": (1.1, 0.8), "Sbar": (0.9, 1.0), "S+": (0.75, 1.3)}
    funcs = {}
    for reg, (a, b) in regs.items():
        funcs[f"L1_{reg}"] = (lambda a: lambda n: a * np.where(n == 0, 0.45, 0.8))(a)
        funcs[f"C1_{reg}"] = lambda n: 1.0 - np.exp(-n / 5.0)
        funcs[f"M1_{reg}"] = (lambda b: lambda n: b * (0.6 * np.exp(-n / 3.0) + 0.05))(b)
    funcs.update({
        "L2_q1=0": lambda n: 1.1 + 0 * n,
        "C2_q1=0": lambda n: 0.9 * (1.0 - np.exp(-n / 3.0)) + 0.1 * n,
        "M2_q1=0": lambda n: 0.5 * np.exp(-n / 4.0) + 0.1,
        "L2_q1>0": lambda n: 0.7 + 0 * n,
        "C2_q1>0": lambda n: 0.8 * (1.0 - np.exp(-n / 3.0)) + 0.08 * n,
        "L3": lambda n: 0.9 + 0 * n,
        "C3": lambda n: 1.2 * (1.0 - np.exp(-n / 8.0)),
    })
    return model_from_functions(ModelKind.ModelIIb, 3, AES, cap, TICK, IIB_M, IIB_L, **funcs)


def constant_model_i(lam: float = 1.0, out: float = 2.0, K: int = 1, cap: int = 30,
                     aes=None, split: float = 0.5):
    """Model I with constant insertion ``lam`` and departure ``out`` at every queue.

    ``split`` is the share of departures due to cancellations.
    """
    funcs = {}
    for d in range(1, K + 1):
        funcs[f"L{d}"] = lambda n: lam + 0 * n
        funcs[f"C{d}"] = lambda n: np.where(n > 0, split * out, 0.0)
        funcs[f"M{d}"] = lambda n: np.where(n > 0, (1 - split) * out, 0.0)
    return model_from_functions(ModelKind.ModelI, K, aes or (100.0,) * K, cap, TICK, **funcs)


SAMPLE_DATE = (2026, 1, 5)


def sample_l2(seed: int = 2026, hours: float = 6.0, theta: float = 0.7, theta_reinit: float = 0.85,
              start_hour: int = 9):
    """Snapshots of one simulated session of :func:`model_i` with a moving price.

    The session starts at ``start_hour`` UTC on a fixed date; queues show
    ``q * AES`` shares.
    """
    from datetime import datetime, timezone

    from .ingest import snapshots_from_path
    from .rng import path_rng
    from .simulate import draw_initial, make_params, simulate_queue_reactive

    model = model_i()
    params = make_params(model, theta, theta_reinit)
    rng = path_rng(seed, 0)
    pref_h = int(round(2 * P_REF / TICK))
    init = draw_initial(params, model.K, rng, pref_h, TICK)
    path = simulate_queue_reactive(init, model, params, hours * 3600.0, rng)
    t0 = datetime(*SAMPLE_DATE, start_hour, tzinfo=timezone.utc)
    return snapshots_from_path(path, AES, int(t0.timestamp()) * 10**9)


def sample_l2_path():
    """Location of the bundled sample file written from :func:`sample_l2`."""
    from importlib import resources

    return resources.files(__package__).joinpath("data", "sample_l2.csv.gz")
