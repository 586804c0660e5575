"""Execution analytics on top of the simulators.

* execution probability of a passive buy order at the first bid limit,
* slippage of sliced executions under two placement tactics,
* market-impact profiles ``MI(t, n)``.

The tracked order is a buyer; its units are counted in queue units and
each one is worth ``AES_1`` shares in volume-weighted prices.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as kern
from .core import IntensityModel, LobState
from .errors import BadInitial, InputError, NoTrades
from .rng import chunks, path_rng, pmap
from .simulate import QueueReactiveParams, draw_initial, run_kernel

EXEC_BLOCK = 65536


# -- tracked order ---------------------------------------------------------------


@dataclass
class TrackedOrder:
    """FIFO position of an order resting in a queue.

    ``ahead`` is the queue mass with priority over the order.
    """

    side: int
    queue: int
    remaining: int
    ahead: int = 0

    def __post_init__(self):
        if self.remaining < 0 or self.ahead < 0:
            raise InputError("remaining and ahead must be nonnegative")

    def on_market(self) -> bool:
        """Consume one unit from the front; True if it was ours."""
        if self.ahead > 0:
            self.ahead -= 1
            return False
        self.remaining -= 1
        return True

    def on_cancel(self, queue_size: int, u: float) -> None:
        """A uniformly chosen non-tracked unit of the queue leaves."""
        others = queue_size - self.remaining
        if others > 0 and u * others < self.ahead:
            self.ahead -= 1


# -- execution probability -------------------------------------------------------------


@dataclass(frozen=True)
class ExecProb:
    p: float
    se: float
    n_paths: int
    n_success: int
    n_fail: int

    @property
    def n_undecided(self) -> int:
        return self.n_paths - self.n_success - self.n_fail

    def to_dict(self):
        return {"p": self.p, "se": self.se, "n_paths": self.n_paths,
                "n_success": self.n_success, "n_fail": self.n_fail}


def _exec_block(args):
    q0, kargs, n0, start, stop, seed, max_events = args
    return kern.exec_prob_block(q0, *kargs, n0, stop - start, max_events,
                                path_rng(seed, start // EXEC_BLOCK))


def execution_probability(model: IntensityModel, initial: LobState, n0: int, n_paths: int = 100000,
                          seed: int = 0, max_events: int = 10**6, jobs: int = 1) -> ExecProb:
    """Probability that a buy order of ``n0`` units appended to ``Q_-1`` is
    fully executed before ``Q_1`` empties.

    ``initial`` holds the book without the order.  Cancellations at ``Q_-1``
    are thinned to the non-tracked units and remove one of them uniformly;
    market orders consume the queue from the front.  Paths that hit neither
    outcome within ``max_events`` events count as failures of execution.
    """
    if initial.K != model.K:
        raise InputError("state and model disagree on K")
    if n0 < 1:
        raise InputError("n0 must be at least 1")
    if initial.size(1) == 0:
        raise BadInitial("the first ask queue is empty")
    if initial.size(-1) + n0 == 0:
        raise BadInitial("the first bid queue is empty")
    q0 = initial.as_array()
    tasks = [(q0, model.kernel_args(), int(n0), a, b, int(seed), int(max_events))
             for a, b in chunks(n_paths, EXEC_BLOCK)]
    parts = pmap(_exec_block, tasks, jobs)
    succ = sum(int(s) for s, _ in parts)
    fail = sum(int(f) for _, f in parts)
    p = succ / n_paths
    return ExecProb(p, math.sqrt(p * (1 - p) / n_paths), n_paths, succ, fail)


# -- schedules and tactics ----------------------------------------------------------------


def largest_remainder(total: int, weights) -> np.ndarray:
    """Integers proportional to ``weights`` summing exactly to ``total``."""
    w = np.asarray(weights, dtype=float)
    raw = total * w / w.sum()
    out = np.floor(raw).astype(np.int64)
    short = int(total - out.sum())
    order = np.argsort(-(raw - out), kind="stable")
    out[order[:short]] += 1
    return out


@dataclass(frozen=True)
class Schedule:
    """Slice quantities: ``S1`` splits evenly, ``S2`` front-loads with
    weights ``exp(-(i-1)/4) - exp(-i/4)`` renormalized over the ``M``
    slices."""

    tag: str
    n_total: int
    M: int

    def __post_init__(self):
        if self.tag.upper() not in ("S1", "S2"):
            raise InputError(f"unknown schedule {self.tag!r}")
        if self.M < 1 or self.n_total < 0:
            raise InputError("need M >= 1 and n_total >= 0")

    def quantities(self) -> np.ndarray:
        i = np.arange(1, self.M + 1)
        if self.tag.upper() == "S1":
            w = np.ones(self.M)
        else:
            w = np.exp(-(i - 1) / 4.0) - np.exp(-i / 4.0)
        return largest_remainder(self.n_total, w)


@dataclass(frozen=True)
class Tactic:
    """``T1`` fire-and-forget or ``T2`` pegging-to-best, with slice length ``T`` seconds."""

    tag: str
    T: float

    def __post_init__(self):
        if self.tag.upper() not in ("T1", "T2"):
            raise InputError(f"unknown tactic {self.tag!r}")
        if not self.T > 0:
            raise InputError("slice duration must be positive")

    @property
    def code(self) -> int:
        return 1 if self.tag.upper() == "T1" else 2


def vwap(trades, window=None) -> float:
    """Volume-weighted price of ``(time, price, volume)`` trades in ``[t0, t1)``."""
    pv = v = 0.0
    for t, p, vol in trades:
        if window is not None and not (window[0] <= t < window[1]):
            continue
        pv += p * vol
        v += vol
    if v <= 0:
        raise NoTrades("no trade in the window")
    return pv / v


@dataclass
class ExecutionReport:
    """Outcome of one simulated execution.

    ``fills`` holds ``(time, price, qty, passive)`` rows with ``qty`` in AES
    units; it is only filled in by :func:`trace_tactic`.
    """

    p_exec: float
    p_bench: float
    slippage: float
    slippage_theo: float
    passive_rate: float
    n_passive: int
    n_aggressive: int
    slice_vwap: np.ndarray
    fills: list = field(default_factory=list)

    @property
    def filled(self) -> int:
        return self.n_passive + self.n_aggressive


@dataclass
class TcaResult:
    reports: list
    schedule: Schedule
    tactic: Tactic
    benchmark: str
    seed: int

    def column(self, name) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.reports], dtype=float)

    def summary(self) -> dict:
        out = {"n_paths": len(self.reports)}
        for name in ("slippage", "slippage_theo", "passive_rate"):
            x = self.column(name)
            out[name] = {"mean": float(np.mean(x)), "std": float(np.std(x, ddof=1)) if x.size > 1 else 0.0,
                         "q05": float(np.quantile(x, 0.05)), "median": float(np.median(x)),
                         "q95": float(np.quantile(x, 0.95))}
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["path", "p_exec", "p_bench", "slippage", "slippage_theo", "passive_rate",
                        "n_passive", "n_aggressive"])
            for i, r in enumerate(self.reports):
                w.writerow([i, repr(r.p_exec), repr(r.p_bench), repr(r.slippage), repr(r.slippage_theo),
                            repr(r.passive_rate), r.n_passive, r.n_aggressive])


def _benchmark_check(benchmark: str) -> str:
    b = benchmark.lower().replace("_", "")
    if b in ("arrival", "arrivalprice"):
        return "arrival"
    if b == "vwap":
        return "vwap"
    raise InputError(f"unknown benchmark {benchmark!r}")


def _report(init: LobState, out, qty, benchmark, tick) -> ExecutionReport:
    mids, st, acc, spv, sv = out[:5]
    n_total = int(qty.sum())
    half = tick / 2.0
    arrival = kern.mid_q(init.as_array(), init.K, init.pref_h) * tick / 4.0
    if benchmark == "arrival":
        bench = arrival
    else:
        bench = acc[kern.ACC_PV] / acc[kern.ACC_V] * half if acc[kern.ACC_V] > 0 else math.nan
    with np.errstate(invalid="ignore", divide="ignore"):
        slice_vwap = np.where(sv > 0, spv / np.where(sv > 0, sv, 1.0), np.nan) * half
    if n_total == 0:
        p_exec = p_theo = bench
        passive = 0.0
    else:
        p_exec = acc[kern.ACC_COST] * half / n_total
        w = qty / n_total
        p_theo = float(np.sum(np.where(w > 0, w * np.nan_to_num(slice_vwap), 0.0)))
        passive = st[kern.ST_PASSIVE] / n_total
    return ExecutionReport(float(p_exec), float(bench), float((bench - p_exec) / bench),
                           float((bench - p_theo) / bench), float(passive),
                           int(st[kern.ST_PASSIVE]), int(st[kern.ST_AGGR]), slice_vwap)


def _initial(params, model, rng, initial, p_ref):
    if isinstance(initial, LobState):
        return initial
    pref_h = int(round(2 * p_ref / model.tick))
    if pref_h % 2 == 0:
        pref_h += 1
    return draw_initial(params, model.K, rng, pref_h, model.tick)


def _tca_chunk(args):
    model, params, qty, code, T, benchmark, seed, a, b, initial, p_ref = args
    reports = []
    for i in range(a, b):
        rng = path_rng(seed, i)
        init = _initial(params, model, rng, initial, p_ref)
        out = run_kernel(init, model, params, T * qty.size, rng, tactic=code, slice_T=T,
                         slice_qty=qty)
        reports.append(_report(init, out, qty, benchmark, model.tick))
    return reports


def run_tactic(model: IntensityModel, params: QueueReactiveParams, schedule: Schedule, tactic: Tactic,
               benchmark: str = "arrival", n_paths: int = 1000, seed: int = 0,
               initial: LobState | str = "invariant", p_ref: float = 20.005, jobs: int = 1) -> TcaResult:
    """Simulate a sliced buy execution on ``n_paths`` independent days.

    Each slice posts its quantity at the best bid, follows the tactic and
    buys whatever is left at the slice end.  Path ``i`` uses stream
    ``(seed, i)``, so two tactics run with the same seed face the same
    initial books and the same randomness until their actions diverge.
    """
    benchmark = _benchmark_check(benchmark)
    qty = schedule.quantities()
    size = max(1, -(-n_paths // max(jobs, 1)))
    tasks = [(model, params, qty, tactic.code, float(tactic.T), benchmark, int(seed), a, b, initial, p_ref)
             for a, b in chunks(n_paths, size)]
    reports = [r for part in pmap(_tca_chunk, tasks, jobs) for r in part]
    return TcaResult(reports, schedule, tactic, benchmark, int(seed))


def trace_tactic(model, params, schedule: Schedule, tactic: Tactic, benchmark="arrival", seed: int = 0,
                 path: int = 0, initial="invariant", p_ref: float = 20.005):
    """One execution with its fills and the market trades of the period.

    Returns the report and the list of ``(time, price, shares)`` trades.
    """
    benchmark = _benchmark_check(benchmark)
    qty = schedule.quantities()
    rng = path_rng(seed, path)
    init = _initial(params, model, rng, initial, p_ref)
    out = run_kernel(init, model, params, tactic.T * qty.size, rng, tactic=tactic.code,
                     slice_T=tactic.T, slice_qty=qty, log=True)
    rep = _report(init, out, qty, benchmark, model.tick)
    log_t, log_c = out[6], out[7]
    half = model.tick / 2.0
    trades = []
    for t, (code, x, _, ph) in zip(log_t.tolist(), log_c.tolist()):
        if code == kern.LOG_AGENT_BUY:
            rep.fills.append((t, ph * half, 1, False))
            trades.append((t, ph * half, model.aes[0]))
        elif code == kern.LOG_PASSIVE:
            rep.fills.append((t, ph * half, 1, True))
        elif code == kern.LOG_MARKET:
            d = kern.dist_of(x, model.K)
            trades.append((t, ph * half, model.aes[d - 1]))
    # fills past the window edge happen when a slice end walks through an empty ask side
    missing = rep.n_aggressive - sum(1 for f in rep.fills if not f[3])
    if missing > 0:
        ph = kern.price_h(int(out[1][kern.ST_PREF]), model.K + 1)
        rep.fills.append((tactic.T * qty.size, ph * half, missing, False))
        trades.append((tactic.T * qty.size, ph * half, model.aes[0] * missing))
    return rep, trades


# -- market impact ----------------------------------------------------------------


@dataclass
class ImpactTable:
    """``mi[a, b]`` is the impact at ``t[a]`` of ``n[b]`` units; ``paths``
    keeps the per-path paired differences for tests on contrasts."""

    t: np.ndarray
    n: np.ndarray
    mi: np.ndarray
    mi_se: np.ndarray
    n_paths: int
    paths: np.ndarray | None = field(default=None, repr=False)

    def contrast(self, a: int, weights) -> tuple[float, float]:
        """Mean and standard error of ``sum_b w_b MI(t[a], n[b])`` over paired paths."""
        if self.paths is None:
            raise InputError("per-path values were not kept")
        x = self.paths[:, a, :] @ np.asarray(weights, dtype=float)
        return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t_s", "n_aes", "mi", "mi_se"])
            for a, t in enumerate(self.t):
                for b, n in enumerate(self.n):
                    w.writerow([repr(float(t)), int(n), repr(float(self.mi[a, b])),
                                repr(float(self.mi_se[a, b]))])


def _impact_chunk(args):
    model, params, code, T, n_values, t_grid, seed, a, b, p_ref = args
    out = np.zeros((b - a, len(t_grid), len(n_values)))
    for k, i in enumerate(range(a, b)):
        rng = path_rng(seed, i)
        init = _initial(params, model, rng, "invariant", p_ref)
        state = rng.bit_generator.state
        s0 = kern.mid_q(init.as_array(), init.K, init.pref_h)
        base = run_kernel(init, model, params, T, rng, sample_times=t_grid)[0]
        for j, n in enumerate(n_values):
            if n == 0:
                continue
            rng.bit_generator.state = state
            mids = run_kernel(init, model, params, T, rng, tactic=code, slice_T=T,
                              slice_qty=np.array([n]), sample_times=t_grid)[0]
            out[k, :, j] = (mids - base) / s0
    return out


def market_impact(model: IntensityModel, params: QueueReactiveParams, tactic: Tactic, n_values, t_grid,
                  n_paths: int = 500, seed: int = 0, p_ref: float = 20.005, jobs: int = 1) -> ImpactTable:
    """Mean relative midprice displacement ``(S_t - S_0) / S_0`` caused by
    buying ``n`` units in one slice of length ``tactic.T``.

    Every path with the agent is paired with the agent-free path from the
    same stream and initial book, and the difference of the two relative
    displacements is averaged.  The agent-free term has zero mean by
    bid/ask symmetry, so the estimator targets the same quantity with far
    less noise, and ``MI(t, 0) = 0`` holds exactly.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    n_values = np.asarray(n_values, dtype=np.int64)
    if np.any(t_grid < 0) or np.any(t_grid > tactic.T):
        raise InputError("impact times must lie within the slice")
    size = max(1, -(-n_paths // max(jobs, 1)))
    tasks = [(model, params, tactic.code, float(tactic.T), n_values, t_grid, int(seed), a, b, p_ref)
             for a, b in chunks(n_paths, size)]
    d = np.concatenate(pmap(_impact_chunk, tasks, jobs), axis=0)
    mi = d.mean(axis=0)
    se = d.std(axis=0, ddof=1) / math.sqrt(n_paths) if n_paths > 1 else np.zeros_like(mi)
    return ImpactTable(t_grid, n_values, mi, se, n_paths, d)
