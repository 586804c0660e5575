"""Command line entry point.

Every subcommand merges ``--config`` (a JSON file) with its flags, checks
the result against the published schema, runs, and writes CSV/JSON
outputs plus a ``manifest.json`` into ``--out``.  Exit codes: 0 ok,
2 input error, 3 model-validity error, 4 numerical non-convergence.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__, fixtures, schemas
from .core import IntensityModel, LobState, check_ergodicity_assumptions
from .errors import InputError, ModelError, NumericalError, QrlobError
from .rng import chunks, path_rng, pmap, resolve_seed
from .stationary import StationaryLaw

EXIT_INPUT, EXIT_MODEL, EXIT_NUMERIC = 2, 3, 4
# fixed so that the Monte Carlo law does not depend on --jobs
MC_SEGMENTS = 8
FIXTURES = {"i": fixtures.model_i, "iia": fixtures.model_iia, "iib": fixtures.model_iib,
            "poisson": lambda: fixtures.poisson_of(fixtures.model_i())}
SCOPE_FILES = {"queue": "events_queue.csv", "pair12": "events_pair12.csv",
               "pair-11": "events_pair-11.csv"}


# -- plumbing -----------------------------------------------------------------------


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class Run:
    """Output directory of one subcommand; files are written atomically."""

    def __init__(self, name: str, out, config: dict, seed: int | None):
        self.name = name
        self.out = Path(out)
        self.config = config
        self.seed = seed
        self.inputs = {}
        self.written = []
        self.started = time.time()
        self.out.mkdir(parents=True, exist_ok=True)

    def input(self, path) -> Path:
        p = Path(path)
        if not p.is_file():
            raise InputError(f"input file not found: {p}")
        self.inputs[str(p)] = _sha256(p)
        return p

    def write(self, fname: str, writer) -> Path:
        """Call ``writer(tmp_path)`` then move the file into place."""
        dest = self.out / fname
        fd, tmp = tempfile.mkstemp(dir=self.out, prefix=f".{fname}.")
        os.close(fd)
        try:
            writer(tmp)
            os.replace(tmp, dest)
        finally:
            if os.path.exists(tmp):
                os.unlink(tmp)
        self.written.append(fname)
        return dest

    def json(self, fname: str, doc) -> Path:
        text = json.dumps(doc, indent=1, sort_keys=True, default=_jsonable) + "\n"
        return self.write(fname, lambda p: Path(p).write_text(text))

    def finish(self) -> None:
        canon = json.dumps(self.config, sort_keys=True, separators=(",", ":"), default=_jsonable)
        self.json("manifest.json", {
            "subcommand": self.name,
            "config": self.config,
            "config_hash": hashlib.sha256(canon.encode()).hexdigest(),
            "inputs": self.inputs,
            "seed": self.seed,
            "version": __version__,
            "outputs": sorted(self.written),
            "started": self.started,
            "finished": time.time(),
        })


def _jsonable(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, Path):
        return str(x)
    raise TypeError(f"not serializable: {type(x)}")


def _config(args, name: str, keys) -> dict:
    """Config file values overridden by explicit flags, then validated."""
    cfg = {}
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(cfg, dict):
            raise InputError("config must be a JSON object")
    for k in keys:
        v = getattr(args, k.replace("-", "_"), None)
        if v is not None:
            cfg[k] = v
    if args.seed is not None and "seed" in schemas.load(name).get("properties", {}):
        cfg["seed"] = args.seed
    schemas.validate(cfg, name)
    return cfg


def _model(run: Run, ref: str) -> IntensityModel:
    """``fixture:<name>`` or the path of a model JSON."""
    if ref.startswith("fixture:"):
        name = ref.split(":", 1)[1]
        if name not in FIXTURES:
            raise InputError(f"unknown fixture {name!r}; choose from {sorted(FIXTURES)}")
        return FIXTURES[name]()
    return IntensityModel.load(run.input(ref))


def _params(run: Run, cfg: dict, model, theta_key="theta", reinit_key="theta_reinit"):
    from .simulate import QueueReactiveParams, default_laws

    if cfg.get("laws") == "empirical" or cfg.get("laws_file"):
        if "laws_file" not in cfg:
            raise InputError("empirical laws need laws_file")
        doc = json.loads(run.input(cfg["laws_file"]).read_text())
        laws = tuple(StationaryLaw((d + 1,), np.asarray(p, dtype=float) / np.sum(p), {"method": "empirical"})
                     for d, p in enumerate(doc["laws"]))
        if len(laws) != model.K:
            raise InputError(f"laws file has {len(laws)} distances, model has K={model.K}")
    else:
        laws = default_laws(model)
    return QueueReactiveParams(cfg.get(theta_key, 0.7), cfg.get(reinit_key, 0.85), laws, model.aes)


# -- subcommands --------------------------------------------------------------------


def cmd_ingest(args) -> int:
    from .ingest import compute_aes, read_l2_csv, reconstruct_events, sample_empirical_law, \
        session_filter, track_pref

    cfg = _config(args, "ingest", ["in", "k", "tick", "session", "scope", "period_s"])
    if "in" not in cfg:
        raise InputError("ingest needs --in")
    run = Run("ingest", args.out, cfg, None)
    tick = cfg.get("tick", 0.01)
    snaps = read_l2_csv(run.input(cfg["in"]), tick)
    K = cfg.get("k", 3)
    if snaps and len(snaps[0].bid_px) < K:
        raise InputError(f"file has {len(snaps[0].bid_px)} levels, need K={K}")
    kept = session_filter(snaps, cfg.get("session", "auto"))
    if not kept:
        raise InputError("no snapshots inside the session")
    track = track_pref(kept, tick)
    aes = compute_aes(kept, K, tick, track)
    scope = cfg.get("scope", "all")
    qc = {"n_snapshots": len(snaps), "n_in_session": len(kept), "K": K, "tick": tick,
          "session": cfg.get("session", "auto"), "aes": [float(a) for a in aes], "scopes": {}}
    for sc in (SCOPE_FILES if scope == "all" else [scope]):
        events = reconstruct_events(kept, aes, sc, tick, track)
        run.write(SCOPE_FILES[sc], events.write_csv)
        qc["scopes"][sc] = events.qc
    laws = sample_empirical_law(kept, cfg.get("period_s", 60.0), aes, tick, pairs=(), track=track)
    pooled = []
    for d in range(1, K + 1):
        a, b = laws.marginals[d].probs, laws.marginals[-d].probs
        n = max(a.size, b.size)
        pooled.append(((np.pad(a, (0, n - a.size)) + np.pad(b, (0, n - b.size))) / 2).tolist())
    run.json("laws.json", {"period_s": cfg.get("period_s", 60.0), "n_samples": laws.n_samples,
                           "laws": pooled})
    run.json("qc.json", qc)
    run.finish()
    print(json.dumps({"events": {k: v.get("events") for k, v in qc["scopes"].items()},
                      "aes": qc["aes"]}))
    return 0


def cmd_estimate(args) -> int:
    from .estimate import compute_thresholds, estimate_model_I, estimate_model_IIa, \
        estimate_model_IIb, estimate_poisson_baseline, occupation_from_events
    from .ingest import EventTable

    cfg = _config(args, "estimate", ["events", "model", "cap", "min_obs", "force"])
    run = Run("estimate", args.out, cfg, None)
    src = Path(cfg.get("events", "."))
    qc = json.loads(run.input(src / "qc.json").read_text())
    aes, tick = qc["aes"], qc.get("tick", 0.01)
    cap = cfg.get("cap", 30)
    min_obs = cfg.get("min_obs", 10)

    def table(scope):
        return EventTable.read_csv(run.input(src / SCOPE_FILES[scope]), scope)

    kind = cfg.get("model", "i")
    if kind == "i":
        est = estimate_model_I(table("queue"), cap, aes, tick, min_obs)
    elif kind == "iia":
        est = estimate_model_IIa(table("pair12"), cap, table("queue"), aes, tick, min_obs)
    elif kind == "iib":
        pair11 = table("pair-11")
        th = compute_thresholds(occupation_from_events(pair11))
        est = estimate_model_IIb(pair11, table("pair12"), th, cap, table("queue"), aes, tick, min_obs)
    else:
        est = estimate_poisson_baseline(table("queue"), cap, aes, tick)
    report = check_ergodicity_assumptions(est.model)
    print(json.dumps({"ergodicity": report.to_dict(), "m": est.model.m, "l": est.model.l}))
    if not report.ok and not cfg.get("force", False):
        raise ModelError(f"ergodicity check failed (delta={report.delta:.4g} at {report.worst}); "
                         "rerun with --force to keep the model")
    run.json("model.json", est.model.to_dict())
    run.write("ci.csv", est.write_ci_csv)
    run.json("estimate_qc.json", {"qc": est.qc, "ergodicity": report.to_dict()})
    run.finish()
    return 0


def cmd_invariant(args) -> int:
    from .stationary import McConfig, build_qbd_blocks, invariant_model_I, invariant_monte_carlo, solve_qbd

    cfg = _config(args, "invariant", ["model", "method", "queue", "n_trunc", "n_phase", "tol",
                                      "n_events", "burn_in"])
    method = cfg.get("method", "closed")
    seed = resolve_seed(cfg.get("seed")) if method == "mc" else None
    run = Run("invariant", args.out, cfg, seed)
    model = _model(run, cfg["model"])
    if method == "closed":
        law = invariant_model_I(model, cfg.get("queue", 1), cfg.get("n_trunc"))
    elif method == "qbd":
        law = solve_qbd(build_qbd_blocks(model, cfg.get("n_phase", 60)), cfg.get("tol", 1e-12))
    else:
        queues = tuple(cfg.get("queues", [cfg.get("queue", 1)]))
        law = invariant_monte_carlo(model, McConfig(queues=queues, n_events=cfg.get("n_events", 10**6),
                                                     burn_in=cfg.get("burn_in", 10**4), seed=seed,
                                                     n_segments=MC_SEGMENTS, jobs=args.jobs))
    run.write("invariant.csv", law.write_csv)
    run.json("invariant_meta.json", {"dims": list(law.dims), "meta": law.trunc_meta})
    run.finish()
    return 0


def _sim_chunk(args):
    from .simulate import draw_initial, path_stats, simulate_queue_reactive

    model, params, horizon, bin_s, seed, a, b, initial, p_ref, log = args
    rows, events = [], None
    for i in range(a, b):
        rng = path_rng(seed, i)
        if initial is None:
            init = draw_initial(params, model.K, rng, int(round(2 * p_ref / model.tick)) | 1, model.tick)
        else:
            init = initial
        path = simulate_queue_reactive(init, model, params, horizon, rng, bin_s, log=log and i == 0)
        s = path_stats(path, bin_s)
        rows.append((i, s.vol_10min, s.eta, s.n_pref_changes, s.n_c, s.n_a, s.n_returns, s.sum_r2))
        if log and i == 0:
            events = list(path.event_rows())
    return rows, events


def cmd_simulate(args) -> int:
    from .calibrate import node_stats

    cfg = _config(args, "simulation", ["model", "theta", "theta_reinit", "horizon_s", "n_paths",
                                       "bin_s", "p_ref"])
    seed = resolve_seed(cfg.get("seed"))
    run = Run("simulate", args.out, cfg, seed)
    model = _model(run, cfg["model"])
    if cfg.get("K", model.K) != model.K:
        raise InputError(f"config K={cfg['K']} but the model has K={model.K}")
    params = _params(run, cfg, model)
    p_ref = cfg.get("p_ref", fixtures.P_REF)
    init = cfg.get("initial", "invariant")
    initial = None
    if isinstance(init, dict):
        h = int(round(2 * init["p_ref"] / model.tick))
        if h % 2 == 0:
            raise InputError("initial p_ref must sit half a tick off the grid")
        initial = LobState(tuple(init["q"]), h, model.tick)
    n = cfg["n_paths"]
    size = max(1, -(-n // max(args.jobs, 1)))
    tasks = [(model, params, float(cfg["horizon_s"]), cfg.get("bin_s", 600.0), seed, a, b, initial,
              p_ref, bool(cfg.get("event_log", False))) for a, b in chunks(n, size)]
    parts = pmap(_sim_chunk, tasks, args.jobs)
    rows = [r for part, _ in parts for r in part]

    def write_stats(p):
        with open(p, "w") as fh:
            fh.write("path,vol,eta,n_pref_changes,n_c,n_a\n")
            for i, vol, eta, nm, nc, na, _, _ in rows:
                e = "" if eta is None else repr(float(eta))
                fh.write(f"{i},{vol!r},{e},{nm},{nc},{na}\n")

    run.write("paths.csv", write_stats)
    events = parts[0][1]
    if events is not None:
        def write_events(p):
            with open(p, "w") as fh:
                fh.write("t_s,queue,code,dir\n")
                for t, i, c, d in events:
                    fh.write(f"{t!r},{i},{c},{d}\n")
        run.write("events_path0.csv", write_events)
    pooled = node_stats([(s2, nr, nc, na, nm) for _, _, _, nm, nc, na, nr, s2 in rows])
    run.json("summary.json", {"vol": pooled.vol, "vol_se": pooled.vol_se, "eta": pooled.eta,
                              "eta_se": pooled.eta_se, "n_pref_changes_mean": pooled.n_moves,
                              "n_paths": n})
    run.finish()
    return 0


def cmd_calibrate(args) -> int:
    from .calibrate import DAY, build_surface, invert

    cfg = _config(args, "calibration", ["model", "grid", "horizon_s", "n_paths", "bin_s", "p_ref",
                                        "target_vol", "target_eta"])
    seed = resolve_seed(cfg.get("seed"))
    run = Run("calibrate", args.out, cfg, seed)
    model = _model(run, cfg["model"])
    a, b = (int(x) for x in cfg.get("grid", "11x11").split("x"))
    if a < 1 or b < 1:
        raise InputError("grid needs at least one node per axis")
    from .simulate import default_laws

    surf = build_surface(model, np.linspace(0, 1, a), np.linspace(0, 1, b), default_laws(model),
                         cfg.get("horizon_s", DAY), cfg.get("n_paths", 200), seed,
                         cfg.get("p_ref", fixtures.P_REF), cfg.get("bin_s", 600.0), args.jobs)
    run.write("surface.csv", surf.write_csv)
    if "target_vol" in cfg and "target_eta" in cfg:
        run.json("inversion.json", invert(surf, cfg["target_vol"], cfg["target_eta"]))
    run.finish()
    return 0


def cmd_execprob(args) -> int:
    from .analytics import execution_probability

    cfg = _config(args, "execprob", ["model", "q", "n0", "n_paths"])
    seed = resolve_seed(cfg.get("seed"))
    run = Run("execprob", args.out, cfg, seed)
    model = _model(run, cfg["model"])
    init = LobState(tuple(cfg["q"]), 1, model.tick)
    if init.K != model.K:
        raise InputError(f"q has {len(cfg['q'])} entries, model needs {2 * model.K}")
    n0s = cfg["n0"] if isinstance(cfg["n0"], list) else [cfg["n0"]]
    res = [(n0, execution_probability(model, init, n0, cfg.get("n_paths", 100000), seed, jobs=args.jobs))
           for n0 in n0s]

    def write(p):
        with open(p, "w") as fh:
            fh.write("n0,p,se,n_paths,n_success,n_fail,n_undecided\n")
            for n0, r in res:
                fh.write(f"{n0},{r.p!r},{r.se!r},{r.n_paths},{r.n_success},{r.n_fail},{r.n_undecided}\n")

    run.write("execprob.csv", write)
    run.finish()
    return 0


def cmd_tca(args) -> int:
    from .analytics import Schedule, Tactic, run_tactic

    cfg = _config(args, "tca", ["model", "schedule", "tactic", "benchmark", "n_total", "M", "T",
                                "theta", "theta_reinit", "n_paths", "p_ref"])
    seed = resolve_seed(cfg.get("seed"))
    run = Run("tca", args.out, cfg, seed)
    model = _model(run, cfg["model"])
    params = _params(run, cfg, model)
    res = run_tactic(model, params, Schedule(cfg["schedule"], cfg["n_total"], cfg["M"]),
                     Tactic(cfg["tactic"], cfg["T"]), cfg["benchmark"], cfg.get("n_paths", 1000), seed,
                     p_ref=cfg.get("p_ref", fixtures.P_REF), jobs=args.jobs)
    run.write("tca.csv", res.write_csv)

    def write_samples(p):
        with open(p, "w") as fh:
            fh.write("slippage,slippage_theo\n")
            for r in res.reports:
                fh.write(f"{r.slippage!r},{r.slippage_theo!r}\n")

    run.write("slippage_samples.csv", write_samples)
    run.json("summary.json", res.summary())
    run.finish()
    return 0


def cmd_impact(args) -> int:
    from .analytics import Tactic, market_impact

    cfg = _config(args, "impact", ["model", "tactic", "n", "t", "T", "theta", "theta_reinit",
                                   "n_paths", "p_ref"])
    seed = resolve_seed(cfg.get("seed"))
    run = Run("impact", args.out, cfg, seed)
    model = _model(run, cfg["model"])
    params = _params(run, cfg, model)
    T = cfg.get("T", max(cfg["t"]))
    tab = market_impact(model, params, Tactic(cfg["tactic"], T), cfg["n"], cfg["t"],
                        cfg.get("n_paths", 500), seed, cfg.get("p_ref", fixtures.P_REF), args.jobs)
    run.write("impact.csv", tab.write_csv)
    run.finish()
    return 0


# -- parser -------------------------------------------------------------------------


def _ints(text):
    return [int(x) for x in text.split(",") if x]


def _floats(text):
    return [float(x) for x in text.split(",") if x]


def _globals(parser, suppress: bool):
    # subcommand copies must not overwrite values given before the subcommand
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=int, default=d(None), help="master seed (recorded in the manifest)")
    parser.add_argument("--jobs", type=int, default=d(1), help="worker processes")
    parser.add_argument("--out", default=d("out"), help="output directory")
    parser.add_argument("--config", default=d(None), help="JSON config; explicit flags override it")
    return parser


def build_parser() -> argparse.ArgumentParser:
    common = _globals(argparse.ArgumentParser(add_help=False), suppress=True)
    p = _globals(argparse.ArgumentParser(prog="qrlob", description="Queue-reactive limit order book toolkit"),
                 suppress=False)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("ingest", parents=[common], help="L2 snapshots to event records")
    s.add_argument("--in", dest="in", help="L2 CSV (optionally .gz)")
    s.add_argument("--k", type=int)
    s.add_argument("--tick", type=float)
    s.add_argument("--session", help="HH:MM-HH:MM, auto or all")
    s.add_argument("--scope", choices=["queue", "pair12", "pair-11", "all"])
    s.add_argument("--period-s", dest="period_s", type=float, help="sampling period of the laws")
    s.set_defaults(fn=cmd_ingest)

    s = sub.add_parser("estimate", parents=[common], help="fit intensity tables")
    s.add_argument("--events", help="ingest output directory")
    s.add_argument("--model", choices=["i", "iia", "iib", "poisson"])
    s.add_argument("--cap", type=int)
    s.add_argument("--min-obs", dest="min_obs", type=int)
    s.add_argument("--force", action="store_true", default=None)
    s.set_defaults(fn=cmd_estimate)

    s = sub.add_parser("invariant", parents=[common], help="invariant queue laws")
    s.add_argument("--model", help="model JSON or fixture:<name>")
    s.add_argument("--method", choices=["closed", "qbd", "mc"])
    s.add_argument("--queue", type=int)
    s.add_argument("--n-trunc", dest="n_trunc", type=int)
    s.add_argument("--n-phase", dest="n_phase", type=int)
    s.add_argument("--tol", type=float)
    s.add_argument("--n-events", dest="n_events", type=int)
    s.add_argument("--burn-in", dest="burn_in", type=int)
    s.set_defaults(fn=cmd_invariant)

    def reactive(s):
        s.add_argument("--model", help="model JSON or fixture:<name>")
        s.add_argument("--theta", type=float)
        s.add_argument("--theta-reinit", dest="theta_reinit", type=float)
        s.add_argument("--n-paths", dest="n_paths", type=int)
        s.add_argument("--p-ref", dest="p_ref", type=float)

    s = sub.add_parser("simulate", parents=[common], help="queue-reactive paths")
    reactive(s)
    s.add_argument("--horizon-s", dest="horizon_s", type=float)
    s.add_argument("--bin-s", dest="bin_s", type=float)
    s.set_defaults(fn=cmd_simulate)

    s = sub.add_parser("calibrate", parents=[common], help="volatility and eta surfaces")
    s.add_argument("--model", help="model JSON or fixture:<name>")
    s.add_argument("--grid", help="nodes per axis, e.g. 11x11")
    s.add_argument("--horizon-s", dest="horizon_s", type=float)
    s.add_argument("--n-paths", dest="n_paths", type=int)
    s.add_argument("--bin-s", dest="bin_s", type=float)
    s.add_argument("--p-ref", dest="p_ref", type=float)
    s.add_argument("--target-vol", dest="target_vol", type=float)
    s.add_argument("--target-eta", dest="target_eta", type=float)
    s.set_defaults(fn=cmd_calibrate)

    s = sub.add_parser("execprob", parents=[common], help="execution probability of a limit order")
    s.add_argument("--model", help="model JSON or fixture:<name>")
    s.add_argument("--q", type=_ints, help="queue sizes q_-K..q_-1,q_1..q_K")
    s.add_argument("--n0", type=_ints, help="order sizes in AES units")
    s.add_argument("--n-paths", dest="n_paths", type=int)
    s.set_defaults(fn=cmd_execprob)

    s = sub.add_parser("tca", parents=[common], help="execution cost of a schedule and tactic")
    reactive(s)
    s.add_argument("--schedule", choices=["s1", "s2"])
    s.add_argument("--tactic", choices=["t1", "t2"])
    s.add_argument("--benchmark", choices=["vwap", "arrival"])
    s.add_argument("--n-total", dest="n_total", type=int)
    s.add_argument("--M", dest="M", type=int)
    s.add_argument("--T", dest="T", type=float)
    s.set_defaults(fn=cmd_tca)

    s = sub.add_parser("impact", parents=[common], help="market impact of a single slice")
    reactive(s)
    s.add_argument("--tactic", choices=["t1", "t2"])
    s.add_argument("--n", type=_ints, help="sizes in AES units, e.g. 0,1,5")
    s.add_argument("--t", type=_floats, help="times in seconds, e.g. 60,300,600")
    s.add_argument("--T", dest="T", type=float)
    s.set_defaults(fn=cmd_impact)
    return p


def _exit_code(exc) -> int:
    if isinstance(exc, (InputError, FileNotFoundError)):
        return EXIT_INPUT
    if isinstance(exc, NumericalError):
        return EXIT_NUMERIC
    return EXIT_MODEL


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (QrlobError, FileNotFoundError) as exc:
        code = _exit_code(exc)
        json.dump({"error": type(exc).__name__, "message": str(exc), "exit": code}, sys.stderr)
        sys.stderr.write("\n")
        return code


if __name__ == "__main__":
    sys.exit(main())
