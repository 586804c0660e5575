import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qrlob import fixtures
from qrlob import _kernels as kern
from qrlob.core import LobState, model_from_functions, slot
from qrlob.errors import Absorbing, InputError, NoMoves
from qrlob.rng import path_rng
from qrlob.simulate import (QueueReactiveParams, SimPath, count_runs, draw_initial, eta_from_signs,
                            eta_ratio, make_params, occupation_law, path_stats, run_kernel,
                            simulate_period, simulate_queue_reactive, step)
from qrlob.stationary import StationaryLaw, invariant_model_I

import reference

MODEL = fixtures.model_i()
PARAMS = {}


def params(theta, reinit):
    if (theta, reinit) not in PARAMS:
        PARAMS[theta, reinit] = make_params(MODEL, theta, reinit)
    return PARAMS[theta, reinit]


def start(seed=0):
    return draw_initial(params(0.0, 0.0), 3, path_rng(seed, 99), 4001, 0.01)


# -- step ---------------------------------------------------------------------------


def test_single_transition():
    m = model_from_functions("ModelI", 1, (1.0,), cap=5, L1=lambda n: 2.0 + 0 * n)
    rng = path_rng(1, 0)
    # only the ask insertion has a rate once the bid side is switched off
    m1 = model_from_functions("ModelI", 1, (1.0,), cap=5, L1=lambda n: np.where(n == 0, 2.0, 0.0))
    dwell = []
    for _ in range(20000):
        dt, tr = step(LobState((1, 0)), m1, rng)
        assert (tr.queue, tr.direction) == (1, 1)
        dwell.append(dt)
    assert np.mean(dwell) == pytest.approx(0.5, rel=0.03)
    _, tr = step(LobState((0, 0)), m, rng)
    assert tr.direction == 1


def test_two_transitions_frequency():
    # bid insertion rate 1 at size 0, ask insertion rate 3 at size 1
    m = model_from_functions("ModelI", 1, (1.0,), cap=5,
                             L1=lambda n: np.where(n == 0, 1.0, np.where(n == 1, 3.0, 0.0)))
    rng = path_rng(2, 0)
    n = 10**5
    hits = sum(step(LobState((0, 1)), m, rng)[1].queue == 1 for _ in range(n))
    se = math.sqrt(0.75 * 0.25 / n)
    assert abs(hits / n - 0.75) <= 3 * se


def test_absorbing():
    m = model_from_functions("ModelI", 1, (1.0,), cap=5)
    with pytest.raises(Absorbing):
        step(LobState((0, 0)), m, path_rng(0, 0))


# -- frozen-price periods -----------------------------------------------------------


def test_horizon_zero():
    p = simulate_period(start(), MODEL, 0.0, path_rng(1, 0))
    assert p.times.size == 0 and p.terminal == start()


def test_same_seed_same_log():
    a = simulate_period(start(), MODEL, 500.0, path_rng(3, 0))
    b = simulate_period(start(), MODEL, 500.0, path_rng(3, 0))
    for f in ("times", "queues", "codes", "dirs"):
        assert np.array_equal(getattr(a, f), getattr(b, f))
    c = simulate_period(start(), MODEL, 500.0, path_rng(3, 1))
    assert not np.array_equal(a.times, c.times)


def test_period_rejects_bad_input():
    with pytest.raises(InputError):
        simulate_period(LobState((1, 1)), MODEL, 1.0, path_rng(0, 0))
    with pytest.raises(InputError):
        simulate_period(start(), MODEL, -1.0, path_rng(0, 0))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6), q=st.lists(st.integers(0, 12), min_size=6, max_size=6),
       horizon=st.floats(0.0, 300.0))
def test_replay_reproduces_terminal(seed, q, horizon):
    p = simulate_period(LobState(tuple(q), 4001), MODEL, horizon, path_rng(seed, 0))
    assert p.replay() == p.terminal
    assert np.all(np.diff(p.times) > 0)
    assert p.times.size == 0 or p.times[-1] <= horizon


def test_max_events_and_active_mask():
    p = simulate_period(start(), MODEL, math.inf, path_rng(4, 0), max_events=1000)
    assert p.times.size == 1000
    p = simulate_period(start(), MODEL, 200.0, path_rng(4, 0), active=(-1, 1))
    assert set(np.unique(p.queues)) <= {-1, 1}
    for i in (-3, -2, 2, 3):
        assert p.terminal.size(i) == start().size(i)


def test_constant_rate_occupancy_is_geometric():
    m = fixtures.constant_model_i(1.0, 2.0)
    p = simulate_period(LobState((0, 0)), m, math.inf, path_rng(5, 0), max_events=4 * 10**5)
    law = occupation_law(p, 1)
    assert law.tv(invariant_model_I(m, 1)) < 0.02


# -- queue-reactive -----------------------------------------------------------------


def test_theta_zero_keeps_pref():
    p = simulate_queue_reactive(start(), MODEL, params(0.0, 0.0), 3600.0, path_rng(6, 0))
    assert p.pref_h.size == 0 and p.terminal.pref_h == 4001
    assert np.all(p.states[:, -1] == 4001)
    assert not np.any(p.codes >= 3)


def _renorm(v, a, b):
    return 0 if v <= 0 else int(math.floor(v * a / b + 0.5))


def _check_shift(before, after, dirn, aes):
    K = 3
    s = lambda i: slot(i, K)
    for i in range(1, K):
        # queues on the side the price moves to slide inward
        src, dst = dirn * (i + 1), dirn * i
        assert after[s(dst)] == _renorm(before[s(src)], aes[i], aes[i - 1])
    for i in range(2, K + 1):
        src, dst = -dirn * (i - 1), -dirn * i
        assert after[s(dst)] == _renorm(before[s(src)], aes[i - 2], aes[i - 1])
    assert after[s(-dirn)] == 0


def _best(q, side, K=3):
    for d in range(1, K + 1):
        if q[slot(side * d, K)] > 0:
            return d
    return None


@pytest.mark.parametrize("theta,reinit", [(1.0, 0.0), (0.7, 0.85), (0.3, 0.0)])
def test_path_legality(theta, reinit):
    init = start(1)
    p = simulate_queue_reactive(init, MODEL, params(theta, reinit), 1800.0, path_rng(7, 0))
    K = 3
    prev = np.r_[init.as_array(), init.pref_h]
    prev_prev = None
    n_shift = 0
    amb_t = p.times[p.codes <= 2]
    assert np.all(np.diff(amb_t) > 0)
    for k in range(p.times.size):
        row, code = p.states[k], int(p.codes[k])
        if code <= 2:
            i = int(p.queues[k])
            diff = row[:2 * K] - prev[:2 * K]
            want = np.zeros(2 * K, dtype=np.int64)
            want[slot(i, K)] = 1 if code == 0 else -1
            assert np.array_equal(diff, want), k
            assert row[2 * K] == prev[2 * K]
        elif code == kern.LOG_SHIFT:
            n_shift += 1
            dirn = int(p.dirs[k])
            assert row[2 * K] - prev[2 * K] == 2 * dirn
            # the row before is the ambient event that triggered the move
            tc, ti = int(p.codes[k - 1]), int(p.queues[k - 1])
            assert p.times[k] == p.times[k - 1]
            side = 1 if ti > 0 else -1
            if tc == 0:
                assert abs(ti) == 1 and prev_prev[slot(ti, K)] == 0
                assert prev[slot(-ti, K)] == 0 and dirn == -side
            else:
                assert prev[slot(ti, K)] == 0 and _best(prev_prev, side) == abs(ti)
                assert dirn == side
            _check_shift(prev[:2 * K], row[:2 * K], dirn, MODEL.aes)
        elif code == kern.LOG_REINIT:
            assert p.codes[k - 1] == kern.LOG_SHIFT and row[2 * K] == prev[2 * K]
        else:
            raise AssertionError(f"unexpected code {code}")
        prev_prev, prev = prev, row
    assert n_shift == p.pref_h.size > 0
    assert p.terminal.pref_h == prev[2 * K]
    assert np.array_equal(p.terminal.as_array(), prev[:2 * K])
    assert set(np.abs(np.diff(np.r_[init.pref_h, p.pref_h]))) == {2}


def test_triggers_without_move_leave_pref():
    # with theta=0 a depleted best quote leaves a hole instead of moving the price
    p = simulate_queue_reactive(start(2), MODEL, params(0.0, 0.0), 3600.0, path_rng(8, 0))
    q = p.states[:, :6]
    assert np.any((q[:, 2] == 0) | (q[:, 3] == 0))


def test_reinit_draws_from_laws():
    p = simulate_queue_reactive(start(3), MODEL, params(1.0, 1.0), 3 * 3600.0, path_rng(9, 0))
    after = p.states[p.codes == kern.LOG_REINIT, :6]
    assert after.shape[0] > 200
    law = params(1.0, 1.0).laws[0]
    assert np.mean(after[:, 3]) == pytest.approx(law.mean(0), rel=0.15)


def test_run_kernel_log_retry_is_transparent():
    init, prm = start(4), params(0.7, 0.85)
    a = run_kernel(init, MODEL, prm, 600.0, path_rng(10, 0), log=True)
    assert a[1][kern.ST_LOGOVF] == 0

    # a log too small for the path forces the retry loop
    real = __import__("qrlob.simulate", fromlist=["_log_capacity"])
    old = real._log_capacity
    real._log_capacity = lambda m, h: 8
    try:
        b = run_kernel(init, MODEL, prm, 600.0, path_rng(10, 0), log=True)
    finally:
        real._log_capacity = old
    n = int(a[1][kern.ST_NLOG])
    assert n == int(b[1][kern.ST_NLOG]) and n > 8
    assert np.array_equal(a[6][:n], b[6][:n]) and np.array_equal(a[8][:n], b[8][:n])


def test_sample_ref_tracks_pref():
    init, prm = start(5), params(1.0, 0.0)
    out = run_kernel(init, MODEL, prm, 3000.0, path_rng(11, 0), sample_times=[0, 1000, 2000, 3000],
                     sample_ref=True)
    assert out[0][0] == 2 * init.pref_h and out[0][-1] == 2 * out[1][kern.ST_PREF]
    assert np.all(out[0] % 2 == 0)


def test_mid_samples():
    p = simulate_queue_reactive(start(6), MODEL, params(0.7, 0.85), 3600.0, path_rng(12, 0),
                                sample_dt=600.0)
    assert p.mid_times.tolist() == [600.0 * k for k in range(7)]
    assert np.all(np.abs(p.mid_prices - 20.005) < 1.0)


def test_params_validation():
    law = StationaryLaw((1,), [0.5, 0.5])
    with pytest.raises(InputError):
        QueueReactiveParams(1.2, 0.0, (law,), (1.0,))
    with pytest.raises(InputError):
        QueueReactiveParams(0.5, 0.0, (law, law), (1.0,))
    prm = QueueReactiveParams(0.5, 0.5, (law,), (1.0,))
    assert prm.inv_cdf().tolist() == [[0.5, 1.0]]


# -- statistics ---------------------------------------------------------------------


@settings(max_examples=100, deadline=None)
@given(signs=st.lists(st.sampled_from([-1, 1]), max_size=60))
def test_count_runs_matches_reference(signs):
    assert count_runs(signs) == reference.runs(signs)
    n_c, n_a = count_runs(signs)
    assert n_c + n_a == max(len(signs) - 1, 0)


def test_eta_examples():
    assert eta_from_signs([1, 1, -1]) == 0.5
    assert eta_from_signs([1, 1, 1, 1]) == math.inf
    assert eta_from_signs([-1, -1]) == math.inf
    with pytest.raises(NoMoves):
        eta_from_signs([1])
    with pytest.raises(NoMoves):
        eta_from_signs([])
    assert eta_ratio(0, 3) == 0.0


def test_iid_signs_give_half():
    s = path_rng(13, 0).choice([-1, 1], size=2 * 10**5)
    assert eta_from_signs(s) == pytest.approx(0.5, abs=0.01)


def _frozen_path(mids):
    init = LobState((1, 1), 4001)
    n = len(mids)
    return SimPath(init, np.zeros(0), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64),
                   np.zeros(0, dtype=np.int64), init, 600.0 * (n - 1),
                   mid_times=np.arange(n) * 600.0, mid_q=np.asarray(mids, dtype=np.int64))


def test_constant_mid_zero_vol():
    s = path_stats(_frozen_path([8002] * 5))
    assert s.vol_10min == 0.0 and s.eta is None and s.n_pref_changes == 0


def test_vol_is_rms_of_log_returns():
    q = [8002, 8006, 8002, 8010]
    s = path_stats(_frozen_path(q))
    r = np.diff(np.log(np.array(q) / 400.0))
    assert s.vol_10min == pytest.approx(math.sqrt(np.mean(r**2)), rel=1e-12)
    # bins of 20 minutes take every other sample
    s2 = path_stats(_frozen_path(q), bin_s=1200.0)
    assert s2.n_returns == 1


def test_stats_from_counters_match_signs():
    p = simulate_queue_reactive(start(7), MODEL, params(0.7, 0.3), 3600.0, path_rng(14, 0))
    n_c, n_a = count_runs(p.move_signs())
    assert (p.counters["n_c"], p.counters["n_a"]) == (n_c, n_a)
    s = path_stats(p)
    assert s.n_pref_changes == p.pref_h.size and s.vol_10min >= 0 and s.eta >= 0


def _mean_stat(theta, reinit, fn, n_paths, horizon, seed=15):
    vals = []
    for i in range(n_paths):
        init = draw_initial(params(theta, reinit), 3, path_rng(seed, i, 0), 4001, 0.01)
        p = simulate_queue_reactive(init, MODEL, params(theta, reinit), horizon, path_rng(seed, i, 1),
                                    log=False)
        vals.append(fn(p))
    v = np.array(vals, dtype=float)
    return v.mean(), v.std(ddof=1) / math.sqrt(v.size)


def test_theta_monotone_in_moves():
    moves = lambda p: path_stats(p).n_pref_changes
    prev = None
    for theta in (0.0, 0.3, 0.7, 1.0):
        mu, se = _mean_stat(theta, 0.0, moves, 40, 1800.0)
        if prev is not None:
            assert mu >= prev[0] - 3 * math.hypot(se, prev[1])
        prev = (mu, se)
    assert prev[0] > 0


def test_theta_reinit_monotone_in_eta():
    def ratio(p):
        c = p.counters
        return c["n_c"], c["n_a"]

    out = []
    for reinit in (0.0, 0.5, 1.0):
        pairs = []
        for i in range(40):
            init = draw_initial(params(1.0, reinit), 3, path_rng(16, i, 0), 4001, 0.01)
            p = simulate_queue_reactive(init, MODEL, params(1.0, reinit), 1800.0, path_rng(16, i, 1),
                                        log=False)
            pairs.append(ratio(p))
        n_c, n_a = np.array(pairs).sum(axis=0)
        out.append(eta_ratio(int(n_c), int(n_a)))
    assert out[0] < out[1] < out[2]
    assert out[0] < 0.5
