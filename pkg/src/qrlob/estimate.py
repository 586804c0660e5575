"""Maximum-likelihood estimation of intensity tables.

For a queue observed in a conditioning cell (queue size, plus the regime
of a neighbouring queue where the model asks for one) the total event
rate is ``count / exposure`` where the exposure is the time spent in that
cell, and each event type gets its share of that rate.  Bid and ask
observations are pooled, which makes every estimate symmetric.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as kern
from .core import DEFAULT_CAP, TYPES, IntensityModel, ModelKind, regimes_for
from .errors import DegenerateLaw, InputError, NoData
from .ingest import EventTable
from .stationary import StationaryLaw

Z = 1.96
MIN_OBS = 10


@dataclass(frozen=True)
class IntensityEstimate:
    rate: float
    ci_low: float
    ci_high: float
    n_obs: int
    filled: bool = False


@dataclass(frozen=True)
class RegimeThresholds:
    m: int
    l: int

    def __post_init__(self):
        if not 0 < self.m < self.l:
            raise DegenerateLaw(f"thresholds need 0 < m < l, got m={self.m}, l={self.l}")


@dataclass
class Estimate:
    """A fitted model with its per-cell estimates.

    ``cells`` maps ``(distance, regime, type, size)`` to an
    :class:`IntensityEstimate`.
    """

    model: IntensityModel
    cells: dict
    qc: dict = field(default_factory=dict)

    def write_ci_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["queue", "regime", "etype", "size", "rate", "ci_low", "ci_high", "n_obs",
                        "filled"])
            for (d, reg, t, n), e in sorted(self.cells.items()):
                w.writerow([d, reg, t, n, repr(e.rate), repr(e.ci_low), repr(e.ci_high), e.n_obs,
                            int(e.filled)])


def confidence_interval(total_rate: float, share: float, n_obs: int) -> tuple[float, float]:
    """Interval for ``share * total_rate`` from ``n_obs`` observations.

    Product of the endpoints of the normal intervals for the total rate and
    for the type proportion, each at the 1.96 level; negative lower ends are
    cut at zero.
    """
    if n_obs < 1:
        raise InputError("a confidence interval needs at least one observation")
    h_rate = Z * total_rate / math.sqrt(n_obs)
    h_p = Z * math.sqrt(max(share * (1.0 - share), 0.0) / n_obs)
    lo = max(total_rate - h_rate, 0.0) * max(share - h_p, 0.0)
    hi = (total_rate + h_rate) * (share + h_p)
    return lo, hi


class _Cells:
    """Accumulates exposures and counts per ``(distance, regime, size)``."""

    def __init__(self, cap):
        self.cap = cap
        self.exposure = {}
        self.counts = {}

    def expose(self, d, reg, n, dt):
        key = (d, reg, min(int(n), self.cap))
        self.exposure[key] = self.exposure.get(key, 0.0) + dt

    def count(self, d, reg, n, etype):
        key = (d, reg, min(int(n), self.cap))
        c = self.counts.setdefault(key, [0, 0, 0])
        c[etype] += 1

    def add_arrays(self, d, reg, sizes, dts, ev_sizes, ev_types):
        """Vectorized: exposures over ``sizes``/``dts``, events over ``ev_sizes``."""
        sizes = np.minimum(sizes, self.cap)
        expo = np.bincount(sizes, weights=dts, minlength=self.cap + 1)
        for n in np.nonzero(expo)[0]:
            self.expose(d, reg, n, float(expo[n]))
        ev_sizes = np.minimum(ev_sizes, self.cap)
        for t in range(3):
            c = np.bincount(ev_sizes[ev_types == t], minlength=self.cap + 1)
            for n in np.nonzero(c)[0]:
                key = (d, reg, int(n))
                self.counts.setdefault(key, [0, 0, 0])[t] += int(c[n])

    def table(self, d, reg, min_obs, fill, qc, zero_market=False):
        cap = self.cap
        out = {t: np.zeros(cap + 1) for t in TYPES}
        cells = {}
        populated = []
        for n in range(cap + 1):
            c = self.counts.get((d, reg, n), [0, 0, 0])
            tot = sum(c)
            expo = self.exposure.get((d, reg, n), 0.0)
            if tot >= min_obs and expo > 0:
                populated.append(n)
        if not populated:
            qc.setdefault("empty_regimes", []).append(f"{d}/{reg}")
            for n in range(cap + 1):
                for t in TYPES:
                    cells[(d, reg, t, n)] = IntensityEstimate(0.0, 0.0, 0.0, 0, True)
            return out, cells
        for n in range(cap + 1):
            c = self.counts.get((d, reg, n), [0, 0, 0])
            tot = sum(c)
            expo = self.exposure.get((d, reg, n), 0.0)
            src, filled = n, False
            if n not in populated:
                if fill is None and tot == 0:
                    raise NoData(f"no observation at distance {d}, regime {reg}, size {n}")
                if fill is not None:
                    src = min(populated, key=lambda k: (abs(k - n), k))
                    filled = True
            if filled:
                c = self.counts[(d, reg, src)]
                tot = sum(c)
                expo = self.exposure[(d, reg, src)]
            lam = tot / expo if expo > 0 else 0.0
            for t, code in enumerate(TYPES):
                if n == 0 and code != "L":
                    # nothing can leave an empty queue
                    cells[(d, reg, code, n)] = IntensityEstimate(0.0, 0.0, 0.0, tot, filled)
                    continue
                if code == "M" and zero_market:
                    cells[(d, reg, code, n)] = IntensityEstimate(0.0, 0.0, 0.0, tot, filled)
                    continue
                p = c[t] / tot if tot else 0.0
                rate = lam * p
                lo, hi = confidence_interval(lam, p, tot) if tot else (0.0, 0.0)
                out[code][n] = rate
                cells[(d, reg, code, n)] = IntensityEstimate(rate, lo, hi, int(tot), filled)
            if filled:
                qc["filled_cells"] = qc.get("filled_cells", 0) + 1
        return out, cells


def _require(events: EventTable, scope: str):
    if events.scope != scope:
        raise InputError(f"expected {scope} events, got {events.scope}")
    if len(events) == 0:
        raise NoData("no events")


def _distance(queue):
    return np.abs(queue)


def _aes_or_default(aes, K):
    if aes is None:
        return (1.0,) * K
    if len(aes) < K:
        raise InputError(f"need {K} AES values")
    return tuple(float(a) for a in aes[:K])


def _queue_cells(events: EventTable, cap: int, K: int):
    cells = _Cells(cap)
    d = _distance(events.queue)
    for dist in range(1, K + 1):
        sel = d == dist
        cells.add_arrays(dist, "all", events.qa[sel], events.dt[sel], events.qa[sel], events.etype[sel])
    return cells


def estimate_model_I(events: EventTable, c_max: int = DEFAULT_CAP, aes=None, tick: float = 0.01,
                     min_obs: int = MIN_OBS, fill: str | None = "nearest", K: int | None = None) -> Estimate:
    """Per-queue tables ``lambda^{L,C,M}_i(n)``, pooled over ``Q_i`` and ``Q_-i``.

    Cells with fewer than ``min_obs`` events copy the nearest populated size
    and are flagged.
    """
    _require(events, "queue")
    K = K or int(np.abs(events.queue).max())
    cells = _queue_cells(events, c_max, K)
    qc = {"events": len(events)}
    tables, est = {}, {}
    for d in range(1, K + 1):
        tab, c = cells.table(d, "all", min_obs, fill, qc)
        tables[d] = {"all": tab}
        est.update(c)
    model = IntensityModel(ModelKind.ModelI, K, tables, _aes_or_default(aes, K), c_max, tick,
                           meta={"estimated_from": len(events)})
    return Estimate(model, est, qc)


def _pair12_cells(events: EventTable, cap: int, qc: dict):
    """Cells of ``Q_±1`` keyed by ``q_±1`` and ``Q_±2`` keyed by the
    first-queue regime and ``q_±2``."""
    cells = _Cells(cap)
    d = _distance(events.queue)
    q1, q2 = events.qa, events.qb
    etype = events.etype.copy()
    # no market order can reach the second limit while the first is not empty
    bad = (d == 2) & (etype == 2) & (q1 > 0)
    if bad.any():
        qc["rejected_market_at_2"] = int(bad.sum())
    keep = ~bad
    cells.add_arrays(1, "all", q1, events.dt, q1[(d == 1) & keep], etype[(d == 1) & keep])
    for reg, sel in (("q1=0", q1 == 0), ("q1>0", q1 > 0)):
        ev = sel & (d == 2) & keep
        cells.add_arrays(2, reg, q2[sel], events.dt[sel], q2[ev], etype[ev])
    return cells


def _third_and_beyond(queue_events, K, cap, qc, tables, est, zero_market):
    if queue_events is None:
        return
    _require(queue_events, "queue")
    d = _distance(queue_events.queue)
    if zero_market:
        bad = (d >= 3) & (queue_events.etype == 2)
        if bad.any():
            qc["rejected_market_beyond_2"] = int(bad.sum())
    cells = _Cells(cap)
    for dist in range(3, K + 1):
        sel = d == dist
        ev = sel & ~((queue_events.etype == 2) & zero_market)
        cells.add_arrays(dist, "all", queue_events.qa[sel], queue_events.dt[sel],
                         queue_events.qa[ev], queue_events.etype[ev])
        tab, c = cells.table(dist, "all", MIN_OBS, "nearest", qc, zero_market)
        tables[dist] = {"all": tab}
        est.update(c)


def estimate_model_IIa(events: EventTable, c_max: int = DEFAULT_CAP, queue_events: EventTable | None = None,
                       aes=None, tick: float = 0.01, min_obs: int = MIN_OBS,
                       fill: str | None = "nearest") -> Estimate:
    """Tables of Model IIa from pair ``(±1, ±2)`` records.

    ``Q_±1`` depends on its own size; ``Q_±2`` on its size and on whether
    ``Q_±1`` is empty, and receives market orders only in the latter case.
    Farther queues come from per-queue records when given.
    """
    _require(events, "pair12")
    qc = {"events": len(events)}
    cells = _pair12_cells(events, c_max, qc)
    tables, est = {}, {}
    tab, c = cells.table(1, "all", min_obs, fill, qc)
    tables[1] = {"all": tab}
    est.update(c)
    tables[2] = {}
    for reg in regimes_for(ModelKind.ModelIIa, 2):
        tab, c = cells.table(2, reg, min_obs, fill, qc, zero_market=(reg == "q1>0"))
        tables[2][reg] = tab
        est.update(c)
    K = 2 if queue_events is None else max(2, int(np.abs(queue_events.queue).max()))
    _third_and_beyond(queue_events, K, c_max, qc, tables, est, True)
    model = IntensityModel(ModelKind.ModelIIa, K, tables, _aes_or_default(aes, K), c_max, tick,
                           meta={"estimated_from": len(events)})
    return Estimate(model, est, qc)


def compute_thresholds(law: StationaryLaw) -> RegimeThresholds:
    """Lower and upper terciles of a first-queue law conditional on ``q > 0``."""
    p = np.asarray(law.probs, dtype=float)
    if p.ndim != 1:
        raise InputError("thresholds need a one-dimensional law")
    pos = p.copy()
    pos[0] = 0.0
    if pos.sum() <= 0:
        raise DegenerateLaw("no mass on positive sizes")
    cdf = np.cumsum(pos) / pos.sum()

    def quantile(level):
        return int(np.nonzero(cdf >= level - 1e-12)[0][0])

    m, l = quantile(1.0 / 3.0), quantile(2.0 / 3.0)
    if m >= l:
        raise DegenerateLaw(f"terciles coincide at {m}")
    return RegimeThresholds(m, l)


def occupation_from_events(events: EventTable, cap: int | None = None) -> StationaryLaw:
    """Time-weighted law of the first-queue sizes seen in pair ``(-1, 1)``
    records, pooling both sides."""
    if events.scope != "pair-11":
        raise InputError("need pair-11 events")
    sizes = np.concatenate([events.qa, events.qb])
    w = np.concatenate([events.dt, events.dt])
    h = np.bincount(sizes, weights=w)
    return StationaryLaw((1,), h / h.sum(), {"method": "event-occupation"})


def estimate_model_IIb(events: EventTable, pair12_events: EventTable, thresholds: RegimeThresholds,
                       c_max: int = DEFAULT_CAP, queue_events: EventTable | None = None, aes=None,
                       tick: float = 0.01, min_obs: int = MIN_OBS,
                       fill: str | None = "nearest") -> Estimate:
    """Tables of Model IIb.

    ``Q_±1`` rates are keyed by their own size and the regime
    ``S_{m,l}(q_∓1)`` of the opposite first queue; each pair ``(-1, 1)``
    record is seen once from each side.  ``Q_±2`` follows Model IIa.
    """
    _require(events, "pair-11")
    _require(pair12_events, "pair12")
    m, l = thresholds.m, thresholds.l
    qc = {"events": len(events), "m": m, "l": l}
    first = _Cells(c_max)
    regs = regimes_for(ModelKind.ModelIIb, 1)
    qm, qp = events.qa, events.qb
    s_of = np.vectorize(lambda x: kern.s_regime(int(x), m, l), otypes=[np.int64])
    s_m, s_p = s_of(qm), s_of(qp)
    for r, reg in enumerate(regs):
        # ask view: own size q_1, opposite q_-1 ; bid view: own q_-1, opposite q_1
        ask = s_m == r
        bid = s_p == r
        ev_ask = ask & (events.queue == 1)
        ev_bid = bid & (events.queue == -1)
        sizes = np.concatenate([qp[ask], qm[bid]])
        dts = np.concatenate([events.dt[ask], events.dt[bid]])
        ev_sizes = np.concatenate([qp[ev_ask], qm[ev_bid]])
        ev_types = np.concatenate([events.etype[ev_ask], events.etype[ev_bid]])
        first.add_arrays(1, reg, sizes, dts, ev_sizes, ev_types)
    tables, est = {1: {}}, {}
    for reg in regs:
        tab, c = first.table(1, reg, min_obs, fill, qc)
        tables[1][reg] = tab
        est.update(c)
    second = _pair12_cells(pair12_events, c_max, qc)
    tables[2] = {}
    for reg in regimes_for(ModelKind.ModelIIb, 2):
        tab, c = second.table(2, reg, min_obs, fill, qc, zero_market=(reg == "q1>0"))
        tables[2][reg] = tab
        est.update(c)
    K = 2 if queue_events is None else max(2, int(np.abs(queue_events.queue).max()))
    _third_and_beyond(queue_events, K, c_max, qc, tables, est, True)
    model = IntensityModel(ModelKind.ModelIIb, K, tables, _aes_or_default(aes, K), c_max, tick, m, l,
                           meta={"estimated_from": len(events), "m": m, "l": l})
    return Estimate(model, est, qc)


def estimate_poisson_baseline(events: EventTable, c_max: int = DEFAULT_CAP, aes=None,
                              tick: float = 0.01, K: int | None = None) -> Estimate:
    """Constant insertion and market-order rates with linear cancellation.

    Pooled MLE per distance: insertion count over total time, market-order
    count over time with a non-empty queue, and cancellation slope equal to
    the cancellation count over the time integral of the queue size.
    """
    _require(events, "queue")
    K = K or int(np.abs(events.queue).max())
    d = _distance(events.queue)
    n = np.arange(c_max + 1)
    tables, est = {}, {}
    qc = {"events": len(events)}
    for dist in range(1, K + 1):
        sel = d == dist
        dt, q, t = events.dt[sel], events.qa[sel], events.etype[sel]
        T = float(dt.sum())
        T_pos = float(dt[q > 0].sum())
        Iq = float((dt * q).sum())
        nL, nC, nM = (int((t == k).sum()) for k in range(3))
        lam = nL / T if T > 0 else 0.0
        mu = nM / T_pos if T_pos > 0 else 0.0
        c = nC / Iq if Iq > 0 else 0.0
        if sel.sum() < MIN_OBS:
            qc.setdefault("low_obs", []).append(dist)
        tables[dist] = {"all": {"L": np.full(c_max + 1, lam), "C": c * n,
                                "M": np.where(n > 0, mu, 0.0)}}
        for code, val, k in (("L", lam, nL), ("M", mu, nM), ("C", c, nC)):
            h = Z * val / math.sqrt(k) if k else 0.0
            est[(dist, "all", code, -1)] = IntensityEstimate(val, max(val - h, 0.0), val + h, k)
    model = IntensityModel(ModelKind.PoissonBaseline, K, tables, _aes_or_default(aes, K), c_max, tick,
                           meta={"estimated_from": len(events)})
    return Estimate(model, est, qc)
