"""Level-2 book snapshots to reference prices, AES and event records.

Prices are converted to integer ticks on read; the reference price is held
in half ticks (always odd) so that every comparison is exact.  Book volumes
are kept in shares until they are turned into AES units with a ceiling, as
the queue size before an event.
"""
from __future__ import annotations

import csv
import gzip
import io
from dataclasses import dataclass, field
from datetime import datetime, timezone
from decimal import Decimal, InvalidOperation
from typing import NamedTuple

import numpy as np

from ._kernels import LOG_REINIT
from .core import EventType, slot
from .errors import CrossedBook, InputError, InsufficientData, NoData
from .stationary import StationaryLaw

NS = 1_000_000_000
SIM_DT_FLOOR = 1e-9
SCOPES = ("queue", "pair12", "pair-11")


@dataclass(frozen=True)
class L2Snapshot:
    """One book snapshot.  Prices are in ticks, volumes in shares.

    ``trade_vol`` is ``None`` when the source carries no trade columns.
    """

    ts_ns: int
    bid_px: tuple
    bid_vol: tuple
    ask_px: tuple
    ask_vol: tuple
    trade_px: int | None = None
    trade_vol: int | None = None
    bid_n: tuple | None = None
    ask_n: tuple | None = None

    @property
    def best_bid(self) -> int | None:
        for p, v in zip(self.bid_px, self.bid_vol):
            if v > 0:
                return p
        return None

    @property
    def best_ask(self) -> int | None:
        for p, v in zip(self.ask_px, self.ask_vol):
            if v > 0:
                return p
        return None

    def volume_at(self, price: int) -> int:
        """Shares resting at ``price`` ticks (0 if the level is not listed)."""
        for p, v in zip(self.bid_px, self.bid_vol):
            if p == price:
                return v
        for p, v in zip(self.ask_px, self.ask_vol):
            if p == price:
                return v
        return 0

    def check(self):
        if any(v < 0 for v in self.bid_vol + self.ask_vol):
            raise InputError("negative volume")
        if any(a <= b for a, b in zip(self.bid_px, self.bid_px[1:])):
            raise InputError("bid prices must strictly decrease")
        if any(a >= b for a, b in zip(self.ask_px, self.ask_px[1:])):
            raise InputError("ask prices must strictly increase")


# -- reading ---------------------------------------------------------------------


def _open(path):
    path = str(path)
    if path.endswith(".gz"):
        return io.TextIOWrapper(gzip.open(path, "rb"), newline="")
    return open(path, newline="")


def _ticks(text: str, tick: Decimal) -> int:
    q = Decimal(text.strip()) / tick
    if q != q.to_integral_value():
        raise ValueError(f"price {text} is not a multiple of the tick {tick}")
    return int(q)


def read_l2_csv(path, tick: float = 0.01):
    """Parse an L2 CSV into snapshots.

    Errors cite the 1-based line number of the offending row.
    """
    dtick = Decimal(str(tick))
    snaps = []
    with _open(path) as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise NoData(f"{path}: no snapshots") from None
        K = sum(1 for h in header if h.startswith("bp"))
        need = (["ts_ns"] + [f"bp{i}" for i in range(1, K + 1)] + [f"bv{i}" for i in range(1, K + 1)]
                + [f"ap{i}" for i in range(1, K + 1)] + [f"av{i}" for i in range(1, K + 1)])
        if K == 0 or header[:len(need)] != need:
            raise InputError(f"{path}: line 1: bad header {header}")
        extra = header[len(need):]
        has_trades = extra[:2] == ["trade_px", "trade_vol"]
        if extra and not has_trades:
            raise InputError(f"{path}: line 1: unexpected columns {extra}")
        width = len(header)
        last_ts = None
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != width:
                raise InputError(f"{path}: line {lineno}: expected {width} fields, got {len(row)}")
            try:
                ts = int(row[0])
                bp = tuple(_ticks(c, dtick) for c in row[1:1 + K])
                bv = tuple(int(c) for c in row[1 + K:1 + 2 * K])
                ap = tuple(_ticks(c, dtick) for c in row[1 + 2 * K:1 + 3 * K])
                av = tuple(int(c) for c in row[1 + 3 * K:1 + 4 * K])
                tp = tv = None
                if has_trades:
                    tv = int(row[-1]) if row[-1].strip() else 0
                    tp = _ticks(row[-2], dtick) if row[-2].strip() else None
                snap = L2Snapshot(ts, bp, bv, ap, av, tp, tv)
                snap.check()
            except (ValueError, InvalidOperation, InputError) as exc:
                raise InputError(f"{path}: line {lineno}: {exc}") from None
            if last_ts is not None and ts < last_ts:
                raise InputError(f"{path}: line {lineno}: timestamp goes backwards")
            last_ts = ts
            snaps.append(snap)
    if not snaps:
        raise NoData(f"{path}: no snapshots")
    return snaps


def write_l2_csv(path, snaps, tick: float = 0.01, trades: bool = True) -> None:
    K = len(snaps[0].bid_px)
    dec = max(0, -Decimal(str(tick)).as_tuple().exponent)
    dtick = Decimal(str(tick))

    def px(t):
        return f"{(Decimal(t) * dtick):.{dec}f}"

    header = (["ts_ns"] + [f"bp{i}" for i in range(1, K + 1)] + [f"bv{i}" for i in range(1, K + 1)]
              + [f"ap{i}" for i in range(1, K + 1)] + [f"av{i}" for i in range(1, K + 1)])
    if trades:
        header += ["trade_px", "trade_vol"]
    if str(path).endswith(".gz"):
        # a fixed header time keeps the compressed bytes reproducible
        opener = io.TextIOWrapper(gzip.GzipFile(path, "wb", mtime=0), newline="")
    else:
        opener = open(path, "w", newline="")
    with opener as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for s in snaps:
            row = [s.ts_ns] + [px(p) for p in s.bid_px] + list(s.bid_vol) + \
                  [px(p) for p in s.ask_px] + list(s.ask_vol)
            if trades:
                row += [px(s.trade_px) if s.trade_px is not None and s.trade_vol else "",
                        s.trade_vol or 0]
            w.writerow(row)


# -- session filter ----------------------------------------------------------------


def _day(ts_ns: int):
    return datetime.fromtimestamp(ts_ns / NS, tz=timezone.utc).date()


def _tod(ts_ns: int) -> float:
    d = datetime.fromtimestamp(ts_ns // NS, tz=timezone.utc)
    return d.hour * 3600 + d.minute * 60 + d.second + (ts_ns % NS) / NS


def parse_session(text: str):
    """``"HH:MM-HH:MM"`` to seconds of the day; ``"all"`` keeps everything."""
    if text in (None, "all"):
        return None
    try:
        a, b = text.split("-")
        ha, ma = (int(x) for x in a.split(":"))
        hb, mb = (int(x) for x in b.split(":"))
    except ValueError:
        raise InputError(f"bad session {text!r}, expected HH:MM-HH:MM") from None
    return ha * 3600 + ma * 60, hb * 3600 + mb * 60


def session_filter(snaps, session="auto", trim_s: float = 3600.0):
    """Keep snapshots inside the trading session.

    ``"auto"`` drops the first and last ``trim_s`` seconds of each day's
    data; an explicit ``(start, end)`` keeps seconds-of-day in
    ``[start, end)``.
    """
    if session is None or session == "all":
        return list(snaps)
    if isinstance(session, str) and session != "auto":
        session = parse_session(session)
    if session == "auto":
        days = {}
        for s in snaps:
            d = _day(s.ts_ns)
            lo, hi = days.get(d, (s.ts_ns, s.ts_ns))
            days[d] = (min(lo, s.ts_ns), max(hi, s.ts_ns))
        trim = int(trim_s * NS)
        return [s for s in snaps if days[_day(s.ts_ns)][0] + trim <= s.ts_ns < days[_day(s.ts_ns)][1] - trim]
    lo, hi = session
    return [s for s in snaps if lo <= _tod(s.ts_ns) < hi]


# -- reference price ----------------------------------------------------------------


def pref_half_ticks(bid: int, ask: int, previous_h: int | None) -> int:
    """Reference price in half ticks from best quotes in ticks."""
    if bid >= ask:
        raise CrossedBook(f"best bid {bid} >= best ask {ask} (ticks)")
    mid_h = bid + ask
    if (ask - bid) % 2 == 1:
        return mid_h
    lo, hi = mid_h - 1, mid_h + 1
    if previous_h is None:
        return lo
    return lo if abs(lo - previous_h) < abs(hi - previous_h) else hi


def estimate_pref(snapshot: L2Snapshot, previous_pref: float | None, tick: float = 0.01) -> float:
    """Reference price in currency.

    Odd spreads give the midprice; even spreads the midprice shifted by half
    a tick towards ``previous_pref`` (downwards without one).
    """
    bid, ask = snapshot.best_bid, snapshot.best_ask
    if bid is None or ask is None:
        raise InputError("one-sided book has no reference price")
    prev = None if previous_pref is None else int(round(2 * previous_pref / tick))
    return pref_half_ticks(bid, ask, prev) * tick / 2.0


def _price_ticks(pref_h: int, i: int) -> int:
    # limit i sits at pref + (2|i| - 1)/2 ticks on its side
    return (pref_h + (2 * i - 1 if i > 0 else 2 * i + 1)) // 2


def queue_volumes(snap: L2Snapshot, pref_h: int, K: int) -> np.ndarray:
    """Share volumes of ``Q_-K..Q_K`` around ``pref_h``."""
    out = np.zeros(2 * K, dtype=np.int64)
    for i in list(range(-K, 0)) + list(range(1, K + 1)):
        out[slot(i, K)] = snap.volume_at(_price_ticks(pref_h, i))
    return out


@dataclass
class PrefTrack:
    """Reference prices of a snapshot stream and the diffs usable for events."""

    pref_h: list
    segment: list
    usable: list  # index j: snapshot j-1 -> j shares a segment with both sides quoted
    unit_path: list
    multi_tick: int = 0
    one_sided: int = 0
    crossed: int = 0


def track_pref(snaps, tick: float = 0.01) -> PrefTrack:
    """Reference price of every snapshot, one-tick path and segment breaks.

    A new segment starts on a new calendar day, after an unquoted or crossed
    snapshot, which is skipped.
    """
    pref, seg, usable = [], [], []
    path = []
    prev = None
    segment = 0
    multi = one_sided = crossed = 0
    last_day = None
    for j, s in enumerate(snaps):
        day = _day(s.ts_ns)
        if day != last_day:
            if last_day is not None:
                segment += 1
            prev = None
            last_day = day
        bid, ask = s.best_bid, s.best_ask
        ok = True
        if bid is None or ask is None:
            one_sided += 1
            ok = False
        elif bid >= ask:
            crossed += 1
            ok = False
        if not ok:
            pref.append(None)
            seg.append(None)
            usable.append(False)
            if prev is not None:
                segment += 1
            prev = None
            continue
        h = pref_half_ticks(bid, ask, prev)
        usable.append(prev is not None and seg[-1] == segment)
        if prev is None:
            path.append((s.ts_ns, h * tick / 2.0))
        elif h != prev:
            steps = abs(h - prev) // 2
            if steps > 1:
                multi += 1
            sgn = 1 if h > prev else -1
            for k in range(1, steps + 1):
                path.append((s.ts_ns, (prev + 2 * sgn * k) * tick / 2.0))
        pref.append(h)
        seg.append(segment)
        prev = h
    return PrefTrack(pref, seg, usable, path, multi, one_sided, crossed)


# -- AES ---------------------------------------------------------------------------------


def compute_aes(snaps, K: int, tick: float = 0.01, track: PrefTrack | None = None) -> np.ndarray:
    """Average absolute volume change per distance from the reference price.

    Only diffs at an unchanged reference price count as events.
    """
    track = track or track_pref(snaps, tick)
    tot = np.zeros(K)
    cnt = np.zeros(K, dtype=np.int64)
    for j in range(1, len(snaps)):
        if not track.usable[j] or track.pref_h[j] != track.pref_h[j - 1]:
            continue
        h = track.pref_h[j]
        dv = queue_volumes(snaps[j], h, K) - queue_volumes(snaps[j - 1], h, K)
        for x in np.nonzero(dv)[0]:
            d = abs(x - K + 1) if x >= K else K - x
            tot[d - 1] += abs(int(dv[x]))
            cnt[d - 1] += 1
    if np.any(cnt == 0):
        missing = [int(d) + 1 for d in np.nonzero(cnt == 0)[0]]
        raise InsufficientData(f"no events observed at distance(s) {missing}")
    return tot / cnt


# -- events -------------------------------------------------------------------------------


class EventRecord(NamedTuple):
    dt: float
    queue: int
    etype: EventType
    q_before: tuple
    pref_epoch: int


@dataclass
class EventTable:
    """Columnar event records of one scope.

    ``qa`` is the size of the event queue (per-queue scope), of ``Q_±1``
    (pair12, same side as the event) or of ``Q_-1`` (pair-11); ``qb`` is
    ``Q_±2`` or ``Q_1`` respectively and ``-1`` in the per-queue scope.
    """

    scope: str
    epoch: np.ndarray
    dt: np.ndarray
    queue: np.ndarray
    etype: np.ndarray
    qa: np.ndarray
    qb: np.ndarray
    qc: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.scope not in SCOPES:
            raise InputError(f"unknown scope {self.scope!r}")
        self.epoch = np.asarray(self.epoch, dtype=np.int64)
        self.dt = np.asarray(self.dt, dtype=float)
        self.queue = np.asarray(self.queue, dtype=np.int64)
        self.etype = np.asarray(self.etype, dtype=np.int64)
        self.qa = np.asarray(self.qa, dtype=np.int64)
        self.qb = np.asarray(self.qb, dtype=np.int64)

    def __len__(self):
        return int(self.dt.size)

    def records(self):
        for e, dt, i, t, a, b in zip(self.epoch, self.dt, self.queue, self.etype, self.qa, self.qb):
            qb = (int(a),) if self.scope == "queue" else (int(a), int(b))
            yield EventRecord(float(dt), int(i), EventType(int(t)), qb, int(e))

    @classmethod
    def from_records(cls, records, scope: str) -> "EventTable":
        rows = list(records)
        cols = [[r.pref_epoch for r in rows], [r.dt for r in rows], [r.queue for r in rows],
                [int(r.etype) for r in rows], [r.q_before[0] for r in rows],
                [r.q_before[1] if len(r.q_before) > 1 else -1 for r in rows]]
        return cls(scope, *cols)

    def mirror(self) -> "EventTable":
        """Swap bid and ask."""
        qa, qb = (self.qb, self.qa) if self.scope == "pair-11" else (self.qa, self.qb)
        return EventTable(self.scope, self.epoch, self.dt, -self.queue, self.etype, qa, qb, dict(self.qc))

    def scaled(self, factor: float) -> "EventTable":
        return EventTable(self.scope, self.epoch, self.dt * factor, self.queue, self.etype,
                          self.qa, self.qb, dict(self.qc))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            cols = ["pref_epoch", "dt_s", "queue", "etype", "q_before"]
            if self.scope != "queue":
                cols.append("q_before_2")
            w.writerow(cols)
            for e, dt, i, t, a, b in zip(self.epoch, self.dt, self.queue, self.etype, self.qa, self.qb):
                row = [int(e), repr(float(dt)), int(i), EventType(int(t)).code, int(a)]
                if self.scope != "queue":
                    row.append(int(b))
                w.writerow(row)

    @classmethod
    def read_csv(cls, path, scope: str | None = None) -> "EventTable":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise NoData(f"{path}: empty event file") from None
            pair = "q_before_2" in header
            if scope is None:
                scope = "pair12" if pair else "queue"
                if pair and "pair-11" in str(path):
                    scope = "pair-11"
            cols = [[] for _ in range(6)]
            for lineno, row in enumerate(reader, start=2):
                try:
                    cols[0].append(int(row[0]))
                    cols[1].append(float(row[1]))
                    cols[2].append(int(row[2]))
                    cols[3].append(int(EventType.from_code(row[3])))
                    cols[4].append(int(row[4]))
                    cols[5].append(int(row[5]) if pair else -1)
                except (ValueError, IndexError, InputError) as exc:
                    raise InputError(f"{path}: line {lineno}: {exc}") from None
        return cls(scope, *cols)


def _scope_queues(scope: str, K: int):
    if scope == "queue":
        return [i for i in range(-K, K + 1) if i]
    if scope == "pair12":
        return [-2, -1, 1, 2]
    return [-1, 1]


def _scope_group(scope: str, i: int):
    if scope == "queue":
        return i
    if scope == "pair12":
        return 1 if i > 0 else -1
    return 0


def _cond(scope: str, i: int, q, K: int):
    if scope == "queue":
        return q[slot(i, K)], -1
    if scope == "pair12":
        s = 1 if i > 0 else -1
        return q[slot(s, K)], q[slot(2 * s, K)]
    return q[slot(-1, K)], q[slot(1, K)]


def _classify(prev: L2Snapshot, cur: L2Snapshot, pref_h: int, K: int, dv):
    """Event type per queue slot for one diff (``None`` where unchanged)."""
    types = [None] * (2 * K)
    has_flags = cur.trade_vol is not None
    for side in (-1, 1):
        best = prev.best_ask if side > 0 else prev.best_bid
        sweep_to = None
        if has_flags and cur.trade_vol and cur.trade_px is not None and best is not None:
            if (side > 0 and cur.trade_px >= best) or (side < 0 and cur.trade_px <= best):
                sweep_to = cur.trade_px
        depleting = True  # walking outward through levels emptied by one order
        for d in range(1, K + 1):
            i = side * d
            x = slot(i, K)
            px = _price_ticks(pref_h, i)
            if dv[x] >= 0:
                if dv[x] > 0:
                    types[x] = EventType.LimitInsert
                if best is not None and (px - best) * side >= 0:
                    # a sweep only runs through consecutive depleted levels
                    depleting = False
                continue
            at_best = best is not None and px == best
            if has_flags:
                in_sweep = sweep_to is not None and (
                    (side > 0 and best <= px <= sweep_to) or (side < 0 and sweep_to <= px <= best))
                types[x] = EventType.MarketOrder if in_sweep else EventType.Cancel
            else:
                beyond_best = best is not None and (px - best) * side > 0
                swept = depleting and beyond_best
                types[x] = EventType.MarketOrder if (at_best or swept) else EventType.Cancel
                emptied = cur.volume_at(px) == 0
                depleting = depleting and (at_best or swept) and emptied
    return types


def reconstruct_events(snaps, aes, scope: str = "queue", tick: float = 0.01,
                       track: PrefTrack | None = None) -> EventTable:
    """Turn consecutive snapshot diffs into event records.

    Each queue whose volume changed in a diff gives one event, in queue
    order ``-K..K``; its conditioning size is the ceiling of the volume in
    AES units just before it.  Waiting times run from the previous event of
    the same scope group or from the start of the reference-price epoch;
    simultaneous events get a waiting time of ``1e-9`` s and are counted in
    the QC report.  The diff that moves the reference price is still read
    in the old coordinates, then a new epoch starts.
    """
    if scope not in SCOPES:
        raise InputError(f"unknown scope {scope!r}")
    aes = np.asarray(aes, dtype=float)
    K = aes.size
    track = track or track_pref(snaps, tick)
    qs = _scope_queues(scope, K)
    cols = [[] for _ in range(6)]
    qc = {"diffs": 0, "multi_queue_diffs": 0, "simultaneous": 0, "epochs": 0,
          "skipped_unusable": 0, "multi_tick_jumps": track.multi_tick,
          "one_sided": track.one_sided, "crossed": track.crossed}
    epoch = -1
    last = {}
    aes_x = np.array([aes[(x - K if x >= K else K - 1 - x)] for x in range(2 * K)])
    for j in range(len(snaps)):
        if track.pref_h[j] is None:
            continue
        if not track.usable[j]:
            epoch += 1
            last = {g: snaps[j].ts_ns for g in set(_scope_group(scope, i) for i in qs)}
            if j > 0:
                qc["skipped_unusable"] += 1
            continue
        prev, cur = snaps[j - 1], snaps[j]
        h = track.pref_h[j - 1]
        v0 = queue_volumes(prev, h, K)
        v1 = queue_volumes(cur, h, K)
        dv = v1 - v0
        qc["diffs"] += 1
        changed = [i for i in qs if dv[slot(i, K)] != 0]
        if len(changed) > 1:
            qc["multi_queue_diffs"] += 1
        types = _classify(prev, cur, h, K, dv)
        vol = v0.copy()
        for i in changed:
            x = slot(i, K)
            qnow = np.ceil(vol / aes_x).astype(np.int64)
            g = _scope_group(scope, i)
            dt = (cur.ts_ns - last[g]) / NS
            if dt <= 0:
                dt = SIM_DT_FLOOR
                qc["simultaneous"] += 1
            a, b = _cond(scope, i, qnow, K)
            cols[0].append(epoch)
            cols[1].append(dt)
            cols[2].append(i)
            cols[3].append(int(types[x]))
            cols[4].append(a)
            cols[5].append(b)
            last[g] = cur.ts_ns
            vol[x] = v1[x]
        if track.pref_h[j] != h:
            epoch += 1
            last = {g: cur.ts_ns for g in set(_scope_group(scope, i) for i in qs)}
    qc["epochs"] = epoch + 1
    qc["aes"] = [float(a) for a in aes]
    qc["events"] = len(cols[0])
    return EventTable(scope, *cols, qc=qc)


def records_from_path(path, scope: str = "queue") -> EventTable:
    """Event records of a simulated frozen-price path.

    This is the simulated analogue of :func:`reconstruct_events` and is
    used for estimator round trips.
    """
    K = path.initial.K
    qs = set(_scope_queues(scope, K))
    q = np.array(path.initial.q, dtype=np.int64)
    last = {}
    epoch = 0
    cols = [[] for _ in range(6)]
    for t, i, c in zip(path.times.tolist(), path.queues.tolist(), path.codes.tolist()):
        if c > 2:
            epoch += 1
            last = {}
            continue
        x = slot(i, K)
        if i in qs:
            g = _scope_group(scope, i)
            a, b = _cond(scope, i, q, K)
            cols[0].append(epoch)
            cols[1].append(max(t - last.get(g, 0.0), SIM_DT_FLOOR))
            cols[2].append(i)
            cols[3].append(c)
            cols[4].append(a)
            cols[5].append(b)
            last[g] = t
        q[x] += 1 if c == 0 else -1
    return EventTable(scope, *cols, qc={"events": len(cols[0]), "epochs": epoch + 1})


def snapshots_from_path(path, aes, t0_ns: int, far_vol: int | None = None) -> list:
    """L2 snapshots of a simulated path, one per logged row.

    A book redraw belongs to the price move that caused it, so it replaces
    the snapshot of that move instead of adding one.

    A queue of ``q`` units at distance ``d`` shows ``q * aes[d - 1]`` shares
    (``aes`` must be integers).  Empty queues inside the window are not
    quoted; the visible depth is completed with levels of ``far_vol`` shares
    beyond the window, leaving one empty price after it.  Market orders fill the trade columns.
    """
    if path.states is None:
        raise InputError("path carries no book states")
    K = path.initial.K
    lots = [int(a) for a in aes]
    if len(lots) != K or any(a != b for a, b in zip(lots, aes)):
        raise InputError("need one integer lot size per distance")
    far = int(far_vol if far_vol is not None else 5 * lots[-1])

    def book(q, pref_h, ts, trade):
        side = []
        for sgn in (-1, 1):
            px, vol = [], []
            for d in range(1, K + 1):
                n = int(q[slot(sgn * d, K)])
                if n > 0:
                    # half-tick price of the level, as an integer tick
                    px.append((pref_h + sgn * (2 * d - 1)) // 2)
                    vol.append(n * lots[d - 1])
            # fillers start two ticks past the window: a reference price
            # estimated one tick off must not read one as a queue
            edge = (pref_h + sgn * (2 * K - 1)) // 2 + sgn
            while len(px) < K:
                edge += sgn
                px.append(edge)
                vol.append(far)
            side.append((tuple(px), tuple(vol)))
        (bp, bv), (ap, av) = side
        tp, tv = trade if trade is not None else (None, 0)
        return L2Snapshot(int(ts), bp, bv, ap, av, tp, tv)

    snaps = [book(path.initial.q, path.initial.pref_h, t0_ns, None)]
    ts = t0_ns + np.round(np.asarray(path.times) * NS).astype(np.int64)
    last = t0_ns
    for k in range(ts.size):
        # rows sharing a time (a market order and the price move it causes)
        # become successive updates 1 ns apart, as a feed would report them
        last = max(int(ts[k]), last + 1)
        trade = None
        if path.codes[k] == 2:
            i = int(path.queues[k])
            # the row of a market order still carries the reference price it hit
            pref = int(path.states[k, 2 * K])
            trade = ((pref + (2 * abs(i) - 1) * (1 if i > 0 else -1)) // 2, lots[abs(i) - 1])
        row = path.states[k]
        if path.codes[k] == LOG_REINIT:
            last = snaps[-1].ts_ns
            snaps[-1] = book(row[:2 * K], int(row[2 * K]), last, None)
            continue
        snaps.append(book(row[:2 * K], int(row[2 * K]), last, trade))
    return snaps


# -- empirical laws --------------------------------------------------------------------


@dataclass
class EmpiricalLaws:
    marginals: dict
    joints: dict
    n_samples: int


def sample_empirical_law(snaps, period: float, aes, tick: float = 0.01,
                         pairs=((1, 2), (-1, 1), (-1, -2)), track: PrefTrack | None = None) -> EmpiricalLaws:
    """Queue sizes in AES units sampled every ``period`` seconds.

    Sample times are ``t_first + k * period`` inside ``[t_first, t_last)``;
    each sample reads the latest snapshot at or before it.
    """
    if period <= 0:
        raise InputError("period must be positive")
    aes = np.asarray(aes, dtype=float)
    K = aes.size
    track = track or track_pref(snaps, tick)
    ts = np.array([s.ts_ns for s in snaps], dtype=np.int64)
    step = int(round(period * NS))
    samples = np.arange(ts[0], ts[-1], step, dtype=np.int64)
    idx = np.searchsorted(ts, samples, side="right") - 1
    aes_x = np.array([aes[(x - K if x >= K else K - 1 - x)] for x in range(2 * K)])
    rows = []
    for j in idx:
        h = track.pref_h[j]
        if h is None:
            continue
        rows.append(np.ceil(queue_volumes(snaps[j], h, K) / aes_x).astype(np.int64))
    if not rows:
        raise NoData("no quoted snapshot at any sample time")
    Q = np.array(rows)
    marg = {}
    for i in [i for i in range(-K, K + 1) if i]:
        v = Q[:, slot(i, K)]
        marg[i] = StationaryLaw((i,), np.bincount(v) / v.size, {"method": "empirical", "period": period})
    joints = {}
    for a, b in pairs:
        if max(abs(a), abs(b)) > K:
            continue
        va, vb = Q[:, slot(a, K)], Q[:, slot(b, K)]
        h = np.zeros((va.max() + 1, vb.max() + 1))
        np.add.at(h, (va, vb), 1.0)
        joints[(a, b)] = StationaryLaw((a, b), h / h.sum(), {"method": "empirical", "period": period})
    return EmpiricalLaws(marg, joints, len(rows))
