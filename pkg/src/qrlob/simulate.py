"""Event-level simulation.

:func:`simulate_period` runs one of the intra-period models with the
reference price frozen.  :func:`simulate_queue_reactive` adds the
reference-price dynamics: when an event empties a best quote (or fills an
empty spread) the reference price moves by one tick with probability
``theta``, the queues are re-indexed around it and, with probability
``theta_reinit``, the whole book is redrawn from its invariant laws.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as kern
from .core import (EventType, IntensityModel, LobState, ModelKind, Transition, event_rates,
                   queue_of, slot)
from .errors import Absorbing, InputError, NoMoves
from .stationary import McConfig, StationaryLaw, invariant_model_I, invariant_monte_carlo

VOL_BIN = 600.0


def step(state: LobState, model: IntensityModel, rng) -> tuple[float, Transition]:
    """Draw one dwell time and the transition that ends it."""
    rates = event_rates(state, model)
    total = sum(r.rate for r in rates)
    if total <= 0:
        raise Absorbing(f"no outgoing transition from {state.q}")
    dwell = rng.standard_exponential() / total
    u = rng.random() * total
    acc = 0.0
    for r in rates:
        acc += r.rate
        if u < acc:
            break
    d = 1 if r.etype is EventType.LimitInsert else -1
    return float(dwell), Transition(r.queue, d, r.rate)


@dataclass
class SimPath:
    """A simulated trajectory.

    The event log holds one row per event: time, signed queue, code and
    direction.  Codes ``0..2`` are ambient insertions, cancellations and
    market orders; the queue-reactive engine adds ``3`` for reference-price
    moves (queue ``0``, direction = sign of the move) and ``5`` for book
    redraws.  ``states`` optionally holds the book right after each row.
    """

    initial: LobState
    times: np.ndarray
    queues: np.ndarray
    codes: np.ndarray
    dirs: np.ndarray
    terminal: LobState
    horizon: float
    seed: object = None
    states: np.ndarray | None = None
    pref_times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    pref_h: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    mid_times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    mid_q: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    counters: dict = field(default_factory=dict)

    @property
    def tick(self) -> float:
        return self.initial.tick

    @property
    def pref_path(self):
        """``(time, p_ref)`` pairs, starting with the initial reference price."""
        t = np.concatenate([[0.0], self.pref_times])
        p = np.concatenate([[self.initial.pref_h], self.pref_h]) * self.tick / 2.0
        return list(zip(t.tolist(), p.tolist()))

    @property
    def mid_prices(self) -> np.ndarray:
        return self.mid_q * self.tick / 4.0

    def move_signs(self) -> np.ndarray:
        return np.sign(np.diff(np.concatenate([[self.initial.pref_h], self.pref_h]))).astype(int)

    def replay(self) -> LobState:
        """Rebuild the terminal book from the initial one and the ambient log.

        Only valid for frozen reference prices.
        """
        if np.any(self.codes > 2):
            raise InputError("replay needs a path without reference-price moves")
        q = list(self.initial.q)
        K = self.initial.K
        for i, c in zip(self.queues, self.codes):
            x = slot(int(i), K)
            q[x] += 1 if c == 0 else -1
            if q[x] < 0:
                raise InputError("log decrements an empty queue")
        return LobState(tuple(q), self.initial.pref_h, self.tick)

    def event_rows(self):
        for t, i, c, d in zip(self.times, self.queues, self.codes, self.dirs):
            yield float(t), int(i), int(c), int(d)


def _as_rng(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(rng))))


def _capacity(model: IntensityModel, horizon: float) -> int:
    rmax = float(model.dense().max(axis=(1, 3)).sum()) * 2.0
    if not math.isfinite(horizon):
        return 1 << 16
    return int(min(max(1.3 * rmax * horizon + 64, 64), 1 << 24))


def simulate_period(initial: LobState, model: IntensityModel, horizon: float, rng,
                    max_events: int | None = None, active=None) -> SimPath:
    """Simulate with the reference price frozen, up to ``horizon`` seconds or
    ``max_events`` events.

    ``active`` optionally restricts the dynamics to a subset of queues
    (given as signed indices); the others keep their initial sizes.
    """
    if initial.K != model.K:
        raise InputError("state and model disagree on K")
    if horizon < 0:
        raise InputError("horizon must be nonnegative")
    gen = _as_rng(rng)
    K = model.K
    mask = np.ones(2 * K, dtype=np.int64)
    if active is not None:
        mask[:] = 0
        for i in active:
            mask[slot(int(i), K)] = 1
    q = initial.as_array()
    kargs = model.kernel_args()
    budget = max_events if max_events is not None else np.iinfo(np.int64).max
    chunk = min(budget, _capacity(model, horizon)) if max_events is None else max_events
    parts_t, parts_s, parts_e = [], [], []
    t0 = 0.0
    done = 0
    while True:
        n_cap = int(min(chunk, budget - done))
        if n_cap <= 0 or horizon == 0:
            break
        times, slots_, types, q, t_end, absorbed = kern.period_path(
            q, *kargs, mask, horizon - t0, n_cap, gen)
        parts_t.append(times + t0)
        parts_s.append(slots_)
        parts_e.append(types)
        done += times.size
        if absorbed or times.size < n_cap:
            break
        t0 = t0 + float(times[-1]) if times.size else t0
    times = np.concatenate(parts_t) if parts_t else np.zeros(0)
    slots_ = np.concatenate(parts_s) if parts_s else np.zeros(0, dtype=np.int64)
    codes = np.concatenate(parts_e) if parts_e else np.zeros(0, dtype=np.int64)
    queues = np.where(slots_ >= K, slots_ - K + 1, slots_ - K)
    dirs = np.where(codes == 0, 1, -1)
    terminal = LobState(tuple(int(v) for v in q), initial.pref_h, initial.tick)
    return SimPath(initial, times, queues, codes, dirs, terminal, float(horizon))


def occupation_law(path: SimPath, queue: int, until: float | None = None) -> StationaryLaw:
    """Time-weighted occupation law of ``queue`` along a frozen-price path."""
    K = path.initial.K
    x = slot(queue, K)
    end = path.horizon if until is None else until
    if not math.isfinite(end):
        end = float(path.times[-1]) if path.times.size else 0.0
    sizes = [path.initial.q[x]]
    mine = path.queues == queue
    steps = np.where(path.codes[mine] == 0, 1, -1)
    sizes = np.concatenate([[path.initial.q[x]], path.initial.q[x] + np.cumsum(steps)])
    bounds = np.concatenate([[0.0], path.times[mine], [end]])
    dwell = np.clip(np.diff(bounds), 0.0, None)
    probs = np.bincount(sizes, weights=dwell)
    if probs.sum() <= 0:
        probs = np.zeros(sizes[0] + 1)
        probs[sizes[0]] = 1.0
    return StationaryLaw((queue,), probs / probs.sum(), {"method": "path", "time": float(end)})


# -- queue-reactive model -----------------------------------------------------------


@dataclass
class QueueReactiveParams:
    """Reference-price dynamics on top of an intra-period model.

    ``laws[d - 1]`` is the invariant law used to redraw a queue at distance
    ``d``; ``aes`` the average event sizes used to renormalize shifted
    queues.
    """

    theta: float
    theta_reinit: float
    laws: tuple
    aes: tuple

    def __post_init__(self):
        for name in ("theta", "theta_reinit"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InputError(f"{name}={v} outside [0, 1]")
        if len(self.laws) != len(self.aes):
            raise InputError("need one invariant law per distance")
        for law in self.laws:
            s = float(np.sum(law.probs))
            if abs(s - 1.0) > 1e-9:
                raise InputError(f"invariant law sums to {s}")

    def inv_cdf(self) -> np.ndarray:
        """CDFs padded with ones, one row per distance, for the kernels."""
        n = max(len(law.probs) for law in self.laws)
        out = np.ones((len(self.laws), n))
        for d, law in enumerate(self.laws):
            c = np.cumsum(law.probs)
            out[d, :c.size] = c / c[-1]
        return out


def default_laws(model: IntensityModel, n_events: int = 2 * 10**6, seed: int = 0):
    """Per-distance laws for redraws: product-form laws when the queue is a
    birth-death queue, otherwise Monte Carlo marginals."""
    laws = []
    for d in range(1, model.K + 1):
        if model.kind in (ModelKind.ModelI, ModelKind.PoissonBaseline) or (
                d >= 3 and "all" in model.tables.get(d, {})):
            laws.append(invariant_model_I(model, d))
        elif model.kind is ModelKind.ModelIIa and d == 1:
            laws.append(invariant_model_I(model, 1))
        else:
            law = invariant_monte_carlo(model, McConfig(queues=(d,), n_events=n_events, seed=seed))
            laws.append(law)
    return tuple(laws)


def make_params(model: IntensityModel, theta: float, theta_reinit: float, laws=None):
    return QueueReactiveParams(theta, theta_reinit, tuple(laws or default_laws(model)), model.aes)


def draw_initial(params: QueueReactiveParams, K: int, rng, pref_h: int, tick: float) -> LobState:
    """Book drawn independently from the per-distance invariant laws."""
    cdf = params.inv_cdf()
    q = [int(kern.draw_size(cdf, abs(queue_of(x, K)), rng.random())) for x in range(2 * K)]
    return LobState(tuple(q), pref_h, tick)


def _log_capacity(model, horizon):
    return _capacity(model, horizon) * 2 + 256


def run_kernel(initial: LobState, model: IntensityModel, params: QueueReactiveParams,
               horizon: float, rng, tactic: int = 0, slice_T: float = np.inf,
               slice_qty=None, sample_times=None, log: bool = False, sample_ref: bool = False):
    """Call the queue-reactive kernel; grows the log buffer until it fits.

    The generator state is restored before a retry so the path is the same.
    """
    gen = _as_rng(rng)
    qty = np.zeros(0, dtype=np.int64) if slice_qty is None else np.asarray(slice_qty, dtype=np.int64)
    samples = np.zeros(0) if sample_times is None else np.asarray(sample_times, dtype=float)
    cap = _log_capacity(model, horizon) if log else 0
    while True:
        saved = gen.bit_generator.state
        out = kern.qr_path(initial.as_array(), initial.pref_h, *model.kernel_args(),
                           params.theta, params.theta_reinit, params.inv_cdf(),
                           np.asarray(params.aes, dtype=float), float(horizon), int(tactic),
                           float(slice_T), qty, samples, bool(sample_ref), cap, gen)
        if out[1][kern.ST_LOGOVF] == 0:
            return out
        gen.bit_generator.state = saved
        cap *= 4


def simulate_queue_reactive(initial: LobState, model: IntensityModel,
                            params: QueueReactiveParams, horizon: float, rng,
                            sample_dt: float = VOL_BIN, log: bool = True) -> SimPath:
    """Simulate the full model with a moving reference price.

    Midprices are sampled every ``sample_dt`` seconds from ``t = 0``.
    """
    if initial.K != model.K:
        raise InputError("state and model disagree on K")
    samples = np.arange(0.0, horizon + 1e-9 * max(horizon, 1.0), sample_dt)
    mids, st, acc, _, _, q, log_t, log_c, log_s = run_kernel(
        initial, model, params, horizon, rng, sample_times=samples, log=log)
    K = model.K
    keep = np.isin(log_c[:, 0], (0, 1, 2, kern.LOG_SHIFT, kern.LOG_REINIT))
    lc = log_c[keep]
    x = lc[:, 1]
    queues = np.where(x < 0, 0, np.where(x >= K, x - K + 1, x - K))
    moves = lc[:, 0] == kern.LOG_SHIFT
    pref_times = log_t[keep][moves]
    pref_h = log_s[keep][moves, 2 * K]
    terminal = LobState(tuple(int(v) for v in q), int(st[kern.ST_PREF]), initial.tick)
    counters = {"n_c": int(st[kern.ST_NC]), "n_a": int(st[kern.ST_NA]),
                "n_up": int(st[kern.ST_UP]), "n_down": int(st[kern.ST_DOWN]),
                "n_events": int(st[kern.ST_NEVENTS])}
    return SimPath(initial, log_t[keep], queues, lc[:, 0], lc[:, 2], terminal, float(horizon),
                   states=log_s[keep], pref_times=pref_times, pref_h=pref_h,
                   mid_times=samples, mid_q=mids, counters=counters)


# -- statistics ---------------------------------------------------------------------


@dataclass
class PathStats:
    """Per-path summary.  ``eta`` is ``None`` without alternations or
    continuations to count and ``inf`` for a monotone path."""

    vol_10min: float
    eta: float | None
    n_pref_changes: int
    n_c: int = 0
    n_a: int = 0
    n_returns: int = 0
    sum_r2: float = 0.0

    def to_dict(self):
        return {"vol": self.vol_10min, "eta": self.eta, "n_pref_changes": self.n_pref_changes,
                "n_c": self.n_c, "n_a": self.n_a}


def count_runs(signs) -> tuple[int, int]:
    """Continuations and alternations in a sequence of move signs."""
    s = np.asarray(signs)
    if s.size < 2:
        return 0, 0
    same = s[1:] == s[:-1]
    return int(same.sum()), int((~same).sum())


def eta_ratio(n_c: int, n_a: int):
    """Mean-reversion ratio ``N_c / (2 N_a)``."""
    if n_a == 0:
        return math.inf if n_c > 0 else None
    return n_c / (2.0 * n_a)


def eta_from_signs(signs):
    n_c, n_a = count_runs(signs)
    eta = eta_ratio(n_c, n_a)
    if eta is None:
        raise NoMoves("fewer than two reference-price moves")
    return eta


def bin_returns(mids, times, bin_s: float) -> np.ndarray:
    """Log returns of the midprice over consecutive ``bin_s`` windows."""
    times = np.asarray(times, dtype=float)
    mids = np.asarray(mids, dtype=float)
    if times.size < 2:
        return np.zeros(0)
    step = times[1] - times[0]
    stride = max(1, int(round(bin_s / step)))
    m = mids[::stride]
    return np.diff(np.log(m))


def path_stats(path: SimPath, bin_s: float = VOL_BIN) -> PathStats:
    """Volatility of ``bin_s`` midprice returns and the mean-reversion ratio.

    The volatility is the root mean square of the returns, i.e. their
    standard deviation about a zero mean.
    """
    if path.mid_q.size == 0 and path.times.size == 0:
        raise InputError("empty path")
    r = bin_returns(path.mid_prices, path.mid_times, bin_s)
    s2 = float(np.sum(r**2))
    vol = math.sqrt(s2 / r.size) if r.size else 0.0
    if "n_c" in path.counters:
        c = path.counters
        n_c, n_a, n_moves = c["n_c"], c["n_a"], c["n_up"] + c["n_down"]
    else:
        n_c, n_a = count_runs(path.move_signs())
        n_moves = int(path.pref_h.size)
    return PathStats(vol, eta_ratio(n_c, n_a), n_moves, n_c, n_a, int(r.size), s2)
