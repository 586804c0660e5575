"""Invariant distributions of the intra-period models.

Three routes are provided: the product-form law of independent
birth-death queues, the matrix-geometric solution of the two-queue
quasi-birth-and-death process, and time-averaged occupation of a long
simulated path.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import _kernels as kern
from .core import IntensityModel, LobState, ModelKind, slot
from .errors import AssumptionViolated, InputError, NoConvergence, NonErgodic, Unstable
from .rng import path_rng, pmap

TAIL_TOL = 1e-12


@dataclass
class StationaryLaw:
    """Probability table over queue sizes ``0..N`` along each dimension.

    ``dims`` holds the signed queue indices the axes refer to.
    """

    dims: tuple
    probs: np.ndarray
    trunc_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.probs = np.asarray(self.probs, dtype=float)
        if self.probs.ndim != len(self.dims):
            raise InputError("probs must have one axis per dimension")
        if np.any(self.probs < 0):
            raise InputError("negative probability")

    @property
    def support(self):
        return [np.arange(s) for s in self.probs.shape]

    def marginal(self, queue: int) -> "StationaryLaw":
        ax = self.dims.index(queue)
        other = tuple(i for i in range(len(self.dims)) if i != ax)
        return StationaryLaw((queue,), self.probs.sum(axis=other), dict(self.trunc_meta))

    def mean(self, axis: int = 0) -> float:
        p = self.probs if self.probs.ndim == 1 else self.probs.sum(
            axis=tuple(i for i in range(self.probs.ndim) if i != axis))
        return float(np.arange(p.size) @ p)

    def cdf(self) -> np.ndarray:
        if self.probs.ndim != 1:
            raise InputError("cdf of a joint law is not defined")
        c = np.cumsum(self.probs)
        return c / c[-1]

    def tv(self, other: "StationaryLaw") -> float:
        """Total-variation distance, padding the smaller support with zeros."""
        a, b = _pad(self.probs, other.probs)
        return 0.5 * float(np.abs(a - b).sum())

    def rows(self):
        """``(dims, sizes, prob)`` tuples for the CSV export."""
        tag = ";".join(str(d) for d in self.dims)
        for idx in np.ndindex(self.probs.shape):
            yield tag, ";".join(str(i) for i in idx), float(self.probs[idx])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["dims", "sizes", "prob"])
            for tag, sz, p in self.rows():
                w.writerow([tag, sz, repr(p)])


def _pad(a, b):
    shape = tuple(max(x, y) for x, y in zip(a.shape, b.shape))
    out = []
    for arr in (a, b):
        z = np.zeros(shape)
        z[tuple(slice(0, s) for s in arr.shape)] = arr
        out.append(z)
    return out


# -- Model I -------------------------------------------------------------------


def _birth_death_rates(model: IntensityModel, distance: int):
    if model.kind not in (ModelKind.ModelI, ModelKind.PoissonBaseline):
        if "all" not in model.tables.get(distance, {}):
            raise InputError(f"{model.kind.value} queue {distance} is not a birth-death queue")
    tab = model.tables[distance]["all"]
    f = tab["L"]
    g = tab["C"] + tab["M"]
    if model.kind in (ModelKind.ModelIIa, ModelKind.ModelIIb) and distance >= 2:
        g = tab["C"]
    return f, g


def invariant_model_I(model: IntensityModel, queue: int, n_trunc: int | None = None) -> StationaryLaw:
    """Product-form invariant law of one queue.

    ``pi(n + 1) = pi(n) * f(n) / g(n + 1)``.  Above ``cap`` the rates are
    constant, so the tail is geometric and its mass is known exactly; the
    support is cut once that mass falls below ``1e-12`` unless ``n_trunc``
    fixes it.
    """
    d = abs(int(queue))
    slot(queue, model.K)
    f, g = _birth_death_rates(model, d)
    cap = model.cap

    def fr(n):
        return f[min(n, cap)]

    def gr(n):
        return g[min(n, cap)]

    r_tail = fr(cap) / gr(cap) if gr(cap) > 0 else np.inf

    def tail_after(v, n):
        # exact unnormalized mass above size n given weight v at n
        s = 0.0
        for k in range(n, cap):
            if fr(k) == 0.0:
                return s
            v *= fr(k) / gr(k + 1)
            s += v
        if fr(cap) == 0.0:
            return s
        if r_tail >= 1.0:
            raise NonErgodic(f"queue {queue}: arrival/departure ratio {r_tail:.4g} >= 1 above cap")
        return s + v * r_tail / (1.0 - r_tail)

    w = [1.0]
    n = 0
    tail = 0.0
    while n_trunc is None or n < n_trunc:
        num = fr(n)
        if num == 0.0:
            break
        den = gr(n + 1)
        if den <= 0.0:
            raise NonErgodic(f"queue {queue}: no departures at size {n + 1}")
        w.append(w[-1] * num / den)
        n += 1
        if n_trunc is None and n >= cap:
            tail = tail_after(w[-1], n)
            if tail < TAIL_TOL * sum(w):
                break
    else:
        tail = tail_after(w[-1], n)
    w = np.array(w)
    total = w.sum()
    return StationaryLaw((queue,), w / total, {
        "method": "closed", "n_trunc": len(w) - 1, "tail_mass": float(tail / (total + tail))})


# -- matrix-geometric solution ---------------------------------------------------


@dataclass
class QbdBlocks:
    """Level-independent blocks of the (q1, q2) process.

    Levels are sizes of the first limit, phases sizes of the second one,
    truncated to ``0..n_phase - 1``.
    """

    A0: np.ndarray
    A1_0: np.ndarray
    A1: np.ndarray
    A2: np.ndarray
    lam1: float
    mu1: float
    queue: int = 1

    @property
    def n_phase(self) -> int:
        return self.A0.shape[0]

    def generator(self, n_levels: int) -> np.ndarray:
        """Dense generator on levels ``0..n_levels - 1``; the top level reflects."""
        p = self.n_phase
        Q = np.zeros((n_levels * p, n_levels * p))
        for k in range(n_levels):
            s = slice(k * p, (k + 1) * p)
            Q[s, s] = self.A1_0 if k == 0 else self.A1
            if k + 1 < n_levels:
                Q[s, (k + 1) * p:(k + 2) * p] = self.A0
            else:
                Q[s, s] += self.A0
            if k > 0:
                Q[s, (k - 1) * p:k * p] = self.A2
        return Q


def _phase_generator(up, down, n_phase):
    T = np.zeros((n_phase, n_phase))
    for k in range(n_phase):
        if k + 1 < n_phase:
            T[k, k + 1] += up[k]
        else:
            # first-column augmentation: mass leaving the truncated range re-enters at phase 0
            T[k, 0] += up[k]
        if k > 0:
            T[k, k - 1] += down[k]
    T[np.diag_indices(n_phase)] = -T.sum(axis=1)
    return T


def qbd_rates(model: IntensityModel, weights=None):
    """Averaged first-limit rates ``(lam1, mu1)``.

    By default plain means over the table: insertion over sizes ``0..cap``,
    departures over ``1..cap``.  ``weights`` (an occupation law over sizes)
    switches to occupation-weighted means.
    """
    tab = model.tables[1]["all"]
    L = tab["L"]
    g = tab["C"] + tab["M"]
    if weights is None:
        return float(np.mean(L)), float(np.mean(g[1:]))
    w = np.zeros(model.cap + 1)
    p = np.asarray(weights, dtype=float)
    w[:min(p.size, w.size)] = p[:w.size]
    if p.size > w.size:
        w[-1] += p[w.size:].sum()
    lam = float(w @ L / w.sum())
    mu = float(w[1:] @ g[1:] / w[1:].sum())
    return lam, mu


def build_qbd_blocks(model: IntensityModel, n_phase: int = 60, weights=None) -> QbdBlocks:
    """Blocks of the two-queue process with Poisson-averaged first-limit flows."""
    if model.kind is not ModelKind.ModelIIa:
        raise InputError("QBD blocks need a ModelIIa model")
    if n_phase < 2:
        raise InputError("n_phase must be at least 2")
    lam1, mu1 = qbd_rates(model, weights)
    if lam1 >= mu1:
        raise AssumptionViolated(f"averaged first-limit rates lam1={lam1:.6g} >= mu1={mu1:.6g}")
    k = np.minimum(np.arange(n_phase), model.cap)
    empty = model.tables[2]["q1=0"]
    busy = model.tables[2]["q1>0"]
    # with q1 = 0 the second limit is the best quote and receives market orders
    T0 = _phase_generator(empty["L"][k], empty["C"][k] + empty["M"][k], n_phase)
    T1 = _phase_generator(busy["L"][k], busy["C"][k], n_phase)
    eye = np.eye(n_phase)
    return QbdBlocks(A0=lam1 * eye, A1_0=T0 - lam1 * eye, A1=T1 - (lam1 + mu1) * eye,
                     A2=mu1 * eye, lam1=lam1, mu1=mu1)


def _r_fixed_point(A0, A1, A2, tol, max_iter):
    inv = np.linalg.inv(A1)
    R = np.zeros_like(A0)
    for it in range(1, max_iter + 1):
        Rn = -(A0 + R @ R @ A2) @ inv
        if np.max(np.abs(Rn - R)) < tol:
            return Rn, it
        R = Rn
    raise NoConvergence(f"R iteration did not converge in {max_iter} steps")


def _r_log_reduction(A0, A1, A2, tol, max_iter):
    # logarithmic reduction for G, then R = A0 (-(A1 + A0 G))^{-1}
    n = A0.shape[0]
    inv = np.linalg.inv(-A1)
    H = inv @ A0
    L = inv @ A2
    G = L.copy()
    T = H.copy()
    for it in range(1, max_iter + 1):
        U = H @ L + L @ H
        M = np.linalg.inv(np.eye(n) - U)
        H = M @ (H @ H)
        L = M @ (L @ L)
        G = G + T @ L
        T = T @ H
        if np.max(np.abs(1.0 - G.sum(axis=1))) < tol or np.max(np.abs(T)) < tol:
            R = A0 @ np.linalg.inv(-(A1 + A0 @ G))
            return R, it
    raise NoConvergence(f"logarithmic reduction did not converge in {max_iter} steps")


def solve_qbd(blocks: QbdBlocks, tol: float = 1e-12, method: str = "fixed",
              max_iter: int = 100000, n_levels: int | None = None) -> StationaryLaw:
    """Matrix-geometric invariant law ``pi_n = pi_1 R^(n-1)``.

    Returns the joint law of (level, phase) on levels ``0..n_levels - 1``
    (by default up to where the remaining level mass drops below 1e-12).
    Diagnostics sit in ``trunc_meta``.
    """
    A0, A1_0, A1, A2 = blocks.A0, blocks.A1_0, blocks.A1, blocks.A2
    p = A0.shape[0]
    if blocks.lam1 >= blocks.mu1:
        raise Unstable("lam1 >= mu1")
    solver = {"fixed": _r_fixed_point, "logred": _r_log_reduction}[method]
    R, iters = solver(A0, A1, A2, tol, max_iter)
    sr = float(np.max(np.abs(np.linalg.eigvals(R))))
    if sr >= 1.0:
        raise Unstable(f"spectral radius of R is {sr:.6g}")
    R = np.where((R < 0) & (R > -10 * tol), 0.0, R)
    # boundary equations with the normalization replacing one column
    B = np.block([[A1_0, A0], [A2, A1 + R @ A2]])
    inv_IR = np.linalg.inv(np.eye(p) - R)
    norm = np.concatenate([np.ones(p), inv_IR @ np.ones(p)])
    B[:, 0] = norm
    rhs = np.zeros(2 * p)
    rhs[0] = 1.0
    x = linalg.solve(B.T, rhs)
    pi0, pi1 = x[:p], x[p:]
    levels = [pi0, pi1]
    remaining = 1.0 - pi0.sum() - pi1.sum()
    cur = pi1
    while (n_levels is None and remaining > TAIL_TOL) or (n_levels is not None and len(levels) < n_levels):
        cur = cur @ R
        levels.append(cur)
        remaining -= cur.sum()
        if len(levels) > 100000:
            break
    if n_levels is not None:
        levels = levels[:n_levels]
    probs = np.clip(np.array(levels), 0.0, None)
    tail_mass = max(0.0, 1.0 - probs.sum())
    probs /= probs.sum()
    # residual of the balance equations on the retained levels
    P = np.array(levels)
    res = [P[0] @ A1_0 + P[1] @ A2]
    for k in range(1, len(P) - 1):
        res.append(P[k - 1] @ A0 + P[k] @ A1 + P[k + 1] @ A2)
    residual = float(np.max(np.abs(np.array(res))))
    phase_tail = float(probs[:, -1].sum())
    return StationaryLaw((blocks.queue, 2 * blocks.queue), probs, {
        "method": "qbd", "solver": method, "iterations": iters, "residual": residual,
        "spectral_radius": sr, "tail_mass": tail_mass, "phase_tail_mass": phase_tail,
        "n_phase": p, "n_levels": len(levels), "lam1": blocks.lam1, "mu1": blocks.mu1})


# -- Monte Carlo -------------------------------------------------------------------


def dependency_closure(model: IntensityModel, queues) -> list[int]:
    """Smallest set of queues containing ``queues`` whose joint dynamics are
    autonomous under ``model``."""
    need = set(int(q) for q in queues)
    while True:
        extra = set()
        for q in need:
            d, s = abs(q), (1 if q > 0 else -1)
            if model.kind in (ModelKind.ModelIIa, ModelKind.ModelIIb) and d == 2:
                extra.add(s)
            if model.kind is ModelKind.ModelIIb and d == 1:
                extra.add(-s)
        if extra <= need:
            return sorted(need)
        need |= extra


@dataclass
class McConfig:
    """Sampler settings for :func:`invariant_monte_carlo`."""

    queues: tuple = (1,)
    n_events: int = 10**6
    burn_in: int = 10**4
    n_segments: int = 1
    n_batches: int = 50
    hist_size: int | None = None
    seed: int = 0
    jobs: int = 1
    initial: object = None
    closed: bool = True


def _mc_segment(args):
    q0, kargs, active, dims, hist_size, n_events, burn_in, n_batches, seed, idx = args
    rng = path_rng(seed, idx)
    hist, over, total, means, _ = kern.occupation(
        q0, *kargs, active, dims, hist_size, n_events, burn_in, n_batches, rng)
    return hist, over, total, means


def invariant_monte_carlo(model: IntensityModel, config: McConfig | None = None) -> StationaryLaw:
    """Time-averaged occupation law of ``config.queues`` along simulated paths.

    With ``closed`` set, only the dependency closure of the requested queues
    is simulated, which spends the whole event budget on them without
    changing their law.  Independent segments (one RNG stream each) are
    merged; ``trunc_meta["ess"]`` is a batch-means effective sample size of
    the first queue.
    """
    cfg = config or McConfig()
    K = model.K
    queues = tuple(int(q) for q in cfg.queues)
    if not 1 <= len(queues) <= 2:
        raise InputError("Monte Carlo laws cover one or two queues")
    for q in queues:
        slot(q, K)
    active = np.zeros(2 * K, dtype=np.int64)
    for q in (dependency_closure(model, queues) if cfg.closed else
              [i for i in range(-K, K + 1) if i]):
        active[slot(q, K)] = 1
    if cfg.initial is None:
        q0 = np.zeros(2 * K, dtype=np.int64)
    elif isinstance(cfg.initial, LobState):
        q0 = cfg.initial.as_array()
    else:
        q0 = np.asarray(cfg.initial, dtype=np.int64)
    dims = np.array([slot(q, K) for q in queues], dtype=np.int64)
    hist_size = cfg.hist_size or 4 * model.cap + 1
    per = cfg.n_events // cfg.n_segments
    tasks = [(q0, model.kernel_args(), active, dims, hist_size, per, cfg.burn_in,
              cfg.n_batches, cfg.seed, i) for i in range(cfg.n_segments)]
    parts = pmap(_mc_segment, tasks, cfg.jobs)
    hist = sum(p[0] for p in parts)
    over = sum(p[1] for p in parts)
    total = sum(p[2] for p in parts)
    means = np.concatenate([p[3] for p in parts])
    if len(queues) == 1:
        hist = hist[:, 0]
    probs = hist / hist.sum()
    # trim empty trailing sizes
    nz = np.nonzero(probs)
    if len(nz[0]):
        probs = probs[tuple(slice(0, int(ax.max()) + 1) for ax in nz)]
    marg = probs if probs.ndim == 1 else probs.sum(axis=1)
    k = np.arange(marg.size)
    var = float(marg @ k**2 - (marg @ k) ** 2)
    bvar = float(np.var(means, ddof=1)) if means.size > 1 else 0.0
    ess = var * means.size / bvar if bvar > 0 else float(per * cfg.n_segments)
    return StationaryLaw(queues, probs, {
        "method": "mc", "n_events": per * cfg.n_segments, "burn_in": cfg.burn_in,
        "tail_mass": float(over / total) if total > 0 else 0.0, "ess": ess,
        "simulated_queues": [int(q) for q in np.nonzero(active)[0] - K + (np.nonzero(active)[0] >= K)],
        "seed": cfg.seed, "n_segments": cfg.n_segments})
