"""Volatility and mean-reversion surfaces over ``(theta, theta_reinit)``.

Every grid node simulates the same ``n_paths`` streams (path ``i`` uses
``(seed, i)``), so differences between nodes are not blurred by
independent sampling noise.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .core import IntensityModel
from .rng import chunks, path_rng, pmap
from .simulate import VOL_BIN, QueueReactiveParams, bin_returns, draw_initial, run_kernel
from . import _kernels as kern

DAY = 8.5 * 3600 - 2 * 3600


class OutOfRange(UserWarning):
    """The calibration target lies outside what the surface can reach."""


@dataclass
class CalibrationSurface:
    """Per-node means and standard errors; arrays are indexed ``[i_theta, i_reinit]``."""

    thetas: np.ndarray
    reinits: np.ndarray
    vol: np.ndarray
    vol_se: np.ndarray
    eta: np.ndarray
    eta_se: np.ndarray
    n_paths: int
    n_moves: np.ndarray

    def rows(self):
        for a, th in enumerate(self.thetas):
            for b, tr in enumerate(self.reinits):
                yield (float(th), float(tr), float(self.vol[a, b]), float(self.vol_se[a, b]),
                       float(self.eta[a, b]), float(self.eta_se[a, b]), self.n_paths)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["theta", "theta_reinit", "vol", "vol_se", "eta", "eta_se", "n_paths"])
            for r in self.rows():
                w.writerow([repr(v) if isinstance(v, float) else v for v in r])


@dataclass(frozen=True)
class NodeStats:
    vol: float
    vol_se: float
    eta: float
    eta_se: float
    n_moves: float


def _path_stats(model, params, horizon, seed, i, p_ref, bin_s, price):
    rng = path_rng(seed, i)
    pref_h = int(round(2 * p_ref / model.tick)) | 1
    init = draw_initial(params, model.K, rng, pref_h, model.tick)
    samples = np.arange(0.0, horizon + 1e-9, bin_s)
    mids, st = run_kernel(init, model, params, horizon, rng, sample_times=samples,
                          sample_ref=price == "ref")[:2]
    r = bin_returns(mids * model.tick / 4.0, samples, bin_s)
    return float(np.sum(r**2)), r.size, int(st[kern.ST_NC]), int(st[kern.ST_NA]), \
        int(st[kern.ST_UP] + st[kern.ST_DOWN])


def _node_chunk(args):
    model, theta, reinit, laws, horizon, seed, a, b, p_ref, bin_s, price = args
    params = QueueReactiveParams(theta, reinit, laws, model.aes)
    return [_path_stats(model, params, horizon, seed, i, p_ref, bin_s, price) for i in range(a, b)]


def node_stats(per_path) -> NodeStats:
    """Pool per-path ``(sum r^2, n_returns, N_c, N_a, moves)``.

    The volatility is the square root of the pooled mean squared return and
    ``eta`` the ratio of pooled counts; both standard errors use the delta
    method over paths.
    """
    x = np.array(per_path, dtype=float)
    P = x.shape[0]
    s2, n, nc, na, mv = x.T
    per_ret = s2.sum() / n.sum() if n.sum() > 0 else 0.0
    vol = math.sqrt(per_ret)
    if P > 1 and vol > 0:
        z = s2 / (n.sum() / P)
        var_se = np.std(z, ddof=1) / math.sqrt(P)
        vol_se = var_se / (2 * vol)
    else:
        vol_se = 0.0
    if na.sum() == 0:
        eta = math.inf if nc.sum() > 0 else math.nan
        eta_se = math.nan
    else:
        eta = nc.sum() / (2 * na.sum())
        if P > 1:
            # ratio estimator: residuals of N_c - 2 eta N_a scaled by mean 2 N_a
            resid = nc - 2 * eta * na
            eta_se = float(np.std(resid, ddof=1) / math.sqrt(P) / (2 * na.mean()))
        else:
            eta_se = 0.0
    return NodeStats(vol, float(vol_se), float(eta), float(eta_se), float(mv.mean()))


def build_surface(model: IntensityModel, thetas, reinits, laws, horizon: float = DAY,
                  n_paths: int = 200, seed: int = 0, p_ref: float = 20.005,
                  bin_s: float = VOL_BIN, jobs: int = 1, price: str = "mid") -> CalibrationSurface:
    """Simulate every grid node and record pooled statistics.

    Parameters
    ----------
    price : {"mid", "ref"}
        Price whose ``bin_s`` log returns define ``vol`` (standard deviation
        about zero).  The midprice still wanders inside the spread when
        ``theta = 0``; the reference price does not.

    Notes
    -----
    ``eta`` is ``nan`` where no move was observed and ``inf`` where moves
    never alternate.
    """
    if price not in ("mid", "ref"):
        raise ValueError("price must be 'mid' or 'ref'")
    thetas = np.asarray(thetas, dtype=float)
    reinits = np.asarray(reinits, dtype=float)
    if np.any((thetas < 0) | (thetas > 1)) or np.any((reinits < 0) | (reinits > 1)):
        raise ValueError("grid values must lie in [0, 1]")
    tasks, keys = [], []
    size = max(1, -(-n_paths // max(jobs, 1)))
    for a, th in enumerate(thetas):
        for b, tr in enumerate(reinits):
            for lo, hi in chunks(n_paths, size):
                tasks.append((model, float(th), float(tr), tuple(laws), horizon, seed, lo, hi, p_ref,
                              bin_s, price))
                keys.append((a, b))
    results = pmap(_node_chunk, tasks, jobs)
    per_node = {}
    for k, res in zip(keys, results):
        per_node.setdefault(k, []).extend(res)
    shape = (thetas.size, reinits.size)
    vol, vol_se, eta, eta_se, moves = (np.zeros(shape) for _ in range(5))
    for (a, b), res in per_node.items():
        s = node_stats(res)
        vol[a, b], vol_se[a, b], eta[a, b], eta_se[a, b], moves[a, b] = \
            s.vol, s.vol_se, s.eta, s.eta_se, s.n_moves
    return CalibrationSurface(thetas, reinits, vol, vol_se, eta, eta_se, n_paths, moves)


def mechanical_volatility(model: IntensityModel, laws, horizon: float = DAY, n_paths: int = 200,
                          seed: int = 0, p_ref: float = 20.005, bin_s: float = VOL_BIN,
                          jobs: int = 1, price: str = "mid") -> dict:
    """Volatility with every candidate move accepted and no redraws."""
    s = build_surface(model, [1.0], [0.0], laws, horizon, n_paths, seed, p_ref, bin_s, jobs, price)
    return {"vol": float(s.vol[0, 0]), "vol_se": float(s.vol_se[0, 0]), "eta": float(s.eta[0, 0]),
            "eta_se": float(s.eta_se[0, 0]), "n_pref_changes": float(s.n_moves[0, 0]),
            "n_paths": n_paths}


# -- inversion ---------------------------------------------------------------------


def _bilinear(x, y, xs, ys, Z):
    i = min(max(np.searchsorted(xs, x, side="right") - 1, 0), xs.size - 2)
    j = min(max(np.searchsorted(ys, y, side="right") - 1, 0), ys.size - 2)
    tx = (x - xs[i]) / (xs[i + 1] - xs[i])
    ty = (y - ys[j]) / (ys[j + 1] - ys[j])
    c = Z[i:i + 2, j:j + 2]
    return ((1 - tx) * (1 - ty) * c[0, 0] + tx * (1 - ty) * c[1, 0]
            + (1 - tx) * ty * c[0, 1] + tx * ty * c[1, 1])


def invert(surface: CalibrationSurface, target_vol: float, target_eta: float,
           fix_reinit: float | None = None) -> dict:
    """Parameters whose interpolated ``(vol, eta)`` best match the targets.

    Minimizes the sum of squared relative errors of the bilinear
    interpolants.  Grid nodes are tried first, so a target taken from a
    node returns that node.  Cells touching a node without a finite ``eta``
    are skipped.  ``fix_reinit`` pins ``theta_reinit`` (for instance to 0
    to ask for purely mechanical volatility).
    """
    xs, ys = surface.thetas, surface.reinits
    V, E = surface.vol, surface.eta
    if xs.size < 2 or ys.size < 2:
        raise ValueError("inversion needs at least a 2x2 grid")

    def loss(th, tr):
        v = _bilinear(th, tr, xs, ys, V)
        e = _bilinear(th, tr, xs, ys, E)
        if not (np.isfinite(v) and np.isfinite(e)):
            return np.inf
        return ((v - target_vol) / target_vol) ** 2 + ((e - target_eta) / target_eta) ** 2

    cols = range(ys.size) if fix_reinit is None else []
    best = (np.inf, None, None)
    for a in range(xs.size):
        for b in cols:
            if np.isfinite(V[a, b]) and np.isfinite(E[a, b]):
                f = ((V[a, b] - target_vol) / target_vol) ** 2 + ((E[a, b] - target_eta) / target_eta) ** 2
                if f < best[0]:
                    best = (f, xs[a], ys[b])
    if best[0] > 0:
        starts = [(best[1], best[2])] if best[1] is not None else []
        fine_x = np.linspace(xs[0], xs[-1], 41)
        fine_y = [fix_reinit] if fix_reinit is not None else np.linspace(ys[0], ys[-1], 41)
        scan = min(((loss(x, y), x, y) for x in fine_x for y in fine_y), key=lambda r: r[0])
        if np.isfinite(scan[0]):
            starts.append((scan[1], scan[2]))
        # finite differences across an undefined cell would give inf - inf
        capped = lambda th, tr: min(loss(th, tr), 1e12)
        for x0, y0 in starts:
            if fix_reinit is None:
                res = minimize(lambda p: capped(p[0], p[1]), [x0, y0], method="L-BFGS-B",
                               bounds=[(xs[0], xs[-1]), (ys[0], ys[-1])])
                cand = (loss(*res.x), float(res.x[0]), float(res.x[1]))
            else:
                res = minimize(lambda p: capped(p[0], fix_reinit), [x0], method="L-BFGS-B",
                               bounds=[(xs[0], xs[-1])])
                cand = (loss(res.x[0], fix_reinit), float(res.x[0]), float(fix_reinit))
            if np.isfinite(cand[0]) and cand[0] < best[0]:
                best = cand
    residual, th, tr = best
    warn = None
    finite = np.isfinite(E) & np.isfinite(V)
    if fix_reinit is not None:
        row = [_bilinear(x, fix_reinit, xs, ys, V) for x in np.linspace(xs[0], xs[-1], 101)]
        if target_vol > np.nanmax(row):
            warn = (f"target volatility {target_vol:.4g} exceeds the maximal mechanical volatility "
                    f"{np.nanmax(row):.4g} reachable with theta_reinit={fix_reinit}; the gap must come "
                    "from book redraws")
    if warn is None and (target_vol > V[finite].max() or target_vol < V[finite].min()
                         or target_eta > E[finite].max() or target_eta < E[finite].min()):
        warn = "target outside the range of the surface; nearest boundary point returned"
    if warn:
        warnings.warn(warn, OutOfRange, stacklevel=2)
    return {"theta": float(th), "theta_reinit": float(tr), "residual": float(residual),
            "vol_fit": float(_bilinear(th, tr, xs, ys, V)), "eta_fit": float(_bilinear(th, tr, xs, ys, E)),
            "warning": warn}
