"""State space, intensity tables and the generator shared by all intra-period models.

Queue indices follow the usual signed convention: ``+i`` is the ask-side
limit ``i - 0.5`` ticks above the reference price, ``-i`` the bid-side limit
the same distance below.  Internally a state is a vector of ``2K`` integers
ordered ``(q_-K, ..., q_-1, q_1, ..., q_K)``; :func:`slot` converts between
the two.

Prices are kept on an integer half-tick grid (``pref_h``) so that reference
price moves are exact; the currency value is ``pref_h * tick / 2``.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import _kernels as kern
from .errors import InputError, ModelError, UnknownRegime

DEFAULT_CAP = 30
DEFAULT_K = 3
TYPES = ("L", "C", "M")


class EventType(enum.IntEnum):
    LimitInsert = 0
    Cancel = 1
    MarketOrder = 2

    @property
    def code(self) -> str:
        return TYPES[self.value]

    @classmethod
    def from_code(cls, code: str) -> "EventType":
        try:
            return cls(TYPES.index(code))
        except ValueError:
            raise InputError(f"unknown event type {code!r}") from None


class ModelKind(str, enum.Enum):
    ModelI = "ModelI"
    ModelIIa = "ModelIIa"
    ModelIIb = "ModelIIb"
    PoissonBaseline = "PoissonBaseline"

    @property
    def code(self) -> int:
        return {"ModelI": kern.KIND_I, "ModelIIa": kern.KIND_IIA,
                "ModelIIb": kern.KIND_IIB, "PoissonBaseline": kern.KIND_POISSON}[self.value]


# Regime names per queue distance.  Distances beyond those listed use "all".
_REGIMES = {
    ModelKind.ModelI: {},
    ModelKind.PoissonBaseline: {},
    ModelKind.ModelIIa: {2: ("q1=0", "q1>0")},
    ModelKind.ModelIIb: {1: ("S0", "S-", "Sbar", "S+"), 2: ("q1=0", "q1>0")},
}


def regimes_for(kind: ModelKind | str, distance: int) -> tuple[str, ...]:
    """Regime labels the tables of ``kind`` must provide at ``distance``."""
    return _REGIMES[ModelKind(kind)].get(distance, ("all",))


def size_regime(x: int, m: int, l: int) -> str:
    """Classify an opposite-queue size into empty / small / usual / large."""
    return ("S0", "S-", "Sbar", "S+")[kern.s_regime(int(x), int(m), int(l))]


def slot(i: int, K: int) -> int:
    """Array position of signed queue index ``i`` in a ``2K`` state vector."""
    if i == 0 or abs(i) > K:
        raise InputError(f"queue index {i} outside [-{K}, {K}] \\ {{0}}")
    return K + i - 1 if i > 0 else K + i


def queue_of(x: int, K: int) -> int:
    return x - K + 1 if x >= K else x - K


def check_queue(i: int, K: int) -> int:
    slot(i, K)
    return int(i)


@dataclass(frozen=True)
class LobState:
    """Queue sizes in AES units plus the reference price.

    ``pref_h`` is the reference price in half ticks and must be odd, which is
    the same as saying ``p_ref = (p_1 + p_-1) / 2`` with both limits on the
    tick grid.
    """

    q: tuple[int, ...]
    pref_h: int = 1
    tick: float = 0.01

    def __post_init__(self):
        q = tuple(int(v) for v in self.q)
        if len(q) == 0 or len(q) % 2:
            raise InputError("a state needs 2K queue sizes")
        if any(v < 0 for v in q):
            raise InputError("queue sizes must be nonnegative")
        if self.pref_h % 2 != 1:
            raise InputError("p_ref must lie half a tick off the price grid")
        object.__setattr__(self, "q", q)

    @classmethod
    def at(cls, q, p_ref: float, tick: float = 0.01) -> "LobState":
        h = 2.0 * p_ref / tick
        pref_h = int(round(h))
        if abs(h - pref_h) > 1e-6:
            raise InputError(f"p_ref={p_ref} not on the half-tick grid of tick={tick}")
        return cls(tuple(q), pref_h, tick)

    @property
    def K(self) -> int:
        return len(self.q) // 2

    @property
    def p_ref(self) -> float:
        return self.pref_h * self.tick / 2.0

    def size(self, i: int) -> int:
        return self.q[slot(i, self.K)]

    def price(self, i: int) -> float:
        """Price of limit ``i``."""
        slot(i, self.K)
        return kern.price_h(self.pref_h, i) * self.tick / 2.0

    def as_array(self) -> np.ndarray:
        return np.asarray(self.q, dtype=np.int64)

    def apply(self, t: "Transition") -> "LobState":
        x = slot(t.queue, self.K)
        q = list(self.q)
        q[x] += t.direction
        if q[x] < 0:
            raise ModelError(f"transition empties queue {t.queue} below zero")
        return LobState(tuple(q), self.pref_h, self.tick)

    def mirror(self) -> "LobState":
        """Swap bid and ask sides around the reference price."""
        return LobState(tuple(reversed(self.q)), self.pref_h, self.tick)


class Transition(NamedTuple):
    queue: int
    direction: int
    rate: float


class EventRate(NamedTuple):
    queue: int
    etype: EventType
    rate: float


@dataclass(frozen=True)
class IntensityModel:
    """Tabulated intensities for one of the intra-period models.

    ``tables[d][regime][type]`` is an array of rates (events per second)
    indexed by queue size ``0..cap`` at distance ``d`` from the reference
    price.  Bid and ask sides share tables, which makes every model
    bid/ask symmetric by construction.  Sizes above ``cap`` read the ``cap``
    entry.
    """

    kind: ModelKind
    K: int
    tables: dict
    aes: tuple[float, ...]
    cap: int = DEFAULT_CAP
    tick: float = 0.01
    m: int = 0
    l: int = 0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        kind = ModelKind(self.kind)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "aes", tuple(float(a) for a in self.aes))
        if len(self.aes) != self.K:
            raise InputError(f"need {self.K} AES values, got {len(self.aes)}")
        if kind in (ModelKind.ModelIIa, ModelKind.ModelIIb) and self.K < 2:
            raise InputError("Model II variants need K >= 2")
        if kind is ModelKind.ModelIIb and not 0 < self.m < self.l:
            raise InputError("Model IIb needs thresholds 0 < m < l")
        clean = {}
        for d, regs in self.tables.items():
            d = int(d)
            clean[d] = {}
            for reg, by_type in regs.items():
                clean[d][reg] = {}
                for t in TYPES:
                    arr = np.array(by_type.get(t, np.zeros(self.cap + 1)), dtype=float)
                    if arr.shape != (self.cap + 1,):
                        raise InputError(
                            f"table {d}/{reg}/{t} has {arr.size} entries, expected {self.cap + 1}")
                    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
                        raise InputError(f"table {d}/{reg}/{t} has negative or non-finite rates")
                    arr.flags.writeable = False
                    clean[d][reg][t] = arr
        object.__setattr__(self, "tables", clean)
        object.__setattr__(self, "_dense", None)

    def rate(self, distance: int, regime: str, etype: str, n: int) -> float:
        try:
            arr = self.tables[distance][regime][etype]
        except KeyError:
            raise UnknownRegime(f"no table for distance {distance}, regime {regime!r}") from None
        return float(arr[min(int(n), self.cap)])

    def dense(self) -> np.ndarray:
        """Rates as a ``(K, 4, 3, cap + 1)`` array in kernel regime order."""
        if self._dense is None:
            out = np.zeros((self.K, 4, 3, self.cap + 1))
            for d in range(1, self.K + 1):
                for r, reg in enumerate(regimes_for(self.kind, d)):
                    try:
                        by_type = self.tables[d][reg]
                    except KeyError:
                        raise UnknownRegime(
                            f"{self.kind.value} needs regime {reg!r} at distance {d}") from None
                    for t, code in enumerate(TYPES):
                        out[d - 1, r, t] = by_type[code]
            out.flags.writeable = False
            object.__setattr__(self, "_dense", out)
        return self._dense

    def kernel_args(self):
        """Positional arguments the compiled kernels expect for this model."""
        return (self.K, self.kind.code, self.dense(), self.cap, self.m, self.l)

    # -- serialization -------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "K": self.K,
            "tick_value": self.tick,
            "aes": list(self.aes),
            "cap": self.cap,
            "m": self.m,
            "l": self.l,
            "tables": {
                str(d): {reg: {t: [float(v) for v in arr] for t, arr in by_type.items()}
                         for reg, by_type in regs.items()}
                for d, regs in sorted(self.tables.items())
            },
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "IntensityModel":
        from .schemas import validate

        validate(doc, "model")
        return cls(kind=doc["kind"], K=doc["K"], tables=doc["tables"], aes=doc["aes"],
                   cap=doc["cap"], tick=doc["tick_value"], m=doc.get("m", 0),
                   l=doc.get("l", 0), meta=doc.get("meta", {}))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "IntensityModel":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read model {path}: {exc}") from exc
        return cls.from_dict(doc)


def model_from_functions(kind, K, aes, cap=DEFAULT_CAP, tick=0.01, m=0, l=0, **funcs):
    """Tabulate a model from callables.

    Keyword arguments are named ``L1``, ``C2_q1>0`` and so on: type letter,
    distance, and an optional ``_regime`` suffix.  Missing entries are zero.
    """
    kind = ModelKind(kind)
    n = np.arange(cap + 1)
    tables = {}
    for d in range(1, K + 1):
        tables[d] = {}
        for reg in regimes_for(kind, d):
            tables[d][reg] = {}
            for t in TYPES:
                f = funcs.get(f"{t}{d}_{reg}", funcs.get(f"{t}{d}"))
                vals = np.zeros(cap + 1) if f is None else np.broadcast_to(
                    np.asarray(f(n), dtype=float), (cap + 1,)).copy()
                tables[d][reg][t] = vals
    return IntensityModel(kind, K, tables, tuple(aes), cap, tick, m, l)


def _check_state(state: LobState, model: IntensityModel):
    if state.K != model.K:
        raise InputError(f"state has K={state.K}, model has K={model.K}")


def best_ask(state: LobState) -> int | None:
    d = kern.best_distance(state.as_array(), state.K, 1)
    return d if d > 0 else None


def best_bid(state: LobState) -> int | None:
    d = kern.best_distance(state.as_array(), state.K, -1)
    return -d if d > 0 else None


def event_rates(state: LobState, model: IntensityModel) -> list[EventRate]:
    """Positive per-type intensities out of ``state``, in queue order ``-K..K``."""
    _check_state(state, model)
    out = np.zeros((2 * model.K, 3))
    kern.fill_rates(state.as_array(), *model.kernel_args(), out)
    rates = []
    for x in range(2 * model.K):
        for t in range(3):
            if out[x, t] > 0:
                rates.append(EventRate(queue_of(x, model.K), EventType(t), float(out[x, t])))
    return rates


def generator_row(state: LobState, model: IntensityModel) -> list[Transition]:
    """Off-diagonal generator entries out of ``state``.

    Cancellations and market orders on the same queue lead to the same
    target state, so they are merged into one ``-1`` transition.
    """
    merged: dict[tuple[int, int], float] = {}
    for q, et, r in event_rates(state, model):
        key = (q, 1 if et is EventType.LimitInsert else -1)
        merged[key] = merged.get(key, 0.0) + r
    return [Transition(q, d, r) for (q, d), r in sorted(merged.items())]


@dataclass(frozen=True)
class ErgodicityReport:
    delta: float
    h: float
    c_bound: int
    ok: bool
    worst: tuple = ()

    def to_dict(self):
        return {"delta": self.delta, "H": self.h, "c_bound": self.c_bound, "ok": self.ok,
                "worst": list(self.worst)}


def _drift_rows(model: IntensityModel):
    """Yield ``(distance, regime, f, g)`` over every tabulated conditioning.

    ``g`` includes market orders wherever the model routes them to the
    queue under that conditioning.
    """
    kind = model.kind
    two_level = kind in (ModelKind.ModelIIa, ModelKind.ModelIIb)
    for d in range(1, model.K + 1):
        for reg in regimes_for(kind, d):
            tab = model.tables[d][reg] if reg in model.tables.get(d, {}) else None
            if tab is None:
                raise UnknownRegime(f"missing regime {reg!r} at distance {d}")
            f = tab["L"]
            g = tab["C"].copy()
            if not two_level or d == 1 or (d == 2 and reg == "q1=0"):
                g = g + tab["M"]
            yield d, reg, f, g


def check_ergodicity_assumptions(model: IntensityModel, c_bound: int | None = None) -> ErgodicityReport:
    """Check negative individual drift above ``c_bound`` and bounded inflow.

    With tables clamped at ``cap`` the drift condition only has to hold for
    sizes ``c_bound + 1 .. cap``, so the finite check is exhaustive.  When
    ``c_bound`` is omitted the smallest admissible bound is searched for and
    reported.
    """
    rows = list(_drift_rows(model))
    cap = model.cap
    if c_bound is None:
        c_bound = cap - 1
        for c in range(cap):
            if all(np.all(f[c + 1:] - g[c + 1:] < 0) for _, _, f, g in rows):
                c_bound = c
                break
    if c_bound > cap:
        raise InputError(f"c_bound={c_bound} exceeds cap={cap}")
    lo = min(c_bound + 1, cap)
    delta = np.inf
    worst = ()
    for d, reg, f, g in rows:
        margin = g[lo:] - f[lo:]
        k = int(np.argmin(margin))
        if margin[k] < delta:
            delta = float(margin[k])
            worst = (d, reg, lo + k)
    # each queue contributes at most its largest insertion rate, on both sides
    h = 2.0 * sum(max(float(np.max(f)) for dd, _, f, _ in rows if dd == d)
                  for d in range(1, model.K + 1))
    return ErgodicityReport(delta, h, int(c_bound), bool(delta > 0), worst)
