"""Seeding and worker-pool helpers.

Every random path draws from its own counter-based Philox stream keyed by
``(seed, *key)``, so results do not depend on how paths are split across
workers.
"""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np


def path_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for the stream ``key`` under ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def resolve_seed(seed: int | None) -> int:
    """Return ``seed`` or a fresh one that callers must record."""
    if seed is not None:
        return int(seed)
    return int(np.random.SeedSequence().entropy % (2**63))


def pmap(fn, tasks, jobs: int = 1):
    """Ordered ``map`` over a process pool; serial when ``jobs <= 1``."""
    tasks = list(tasks)
    if jobs is None or jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    jobs = min(jobs, len(tasks), os.cpu_count() or 1)
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def chunks(n: int, size: int):
    """Split ``range(n)`` into ``(start, stop)`` blocks of fixed ``size``."""
    return [(a, min(a + size, n)) for a in range(0, n, size)]
