"""Compiled inner loops.

Everything here works on plain arrays: a state is an ``int64[2K]`` vector
ordered ``(q_-K .. q_-1, q_1 .. q_K)`` and a model is the dense
``(K, 4, 3, cap + 1)`` rate table from :meth:`IntensityModel.dense`.
Prices are integers in half ticks; midprices are integers in quarter ticks
(bid + ask in half ticks).
"""
import numpy as np
from numba import njit

KIND_I, KIND_IIA, KIND_IIB, KIND_POISSON = 0, 1, 2, 3

# log codes for the queue-reactive engine
LOG_INSERT, LOG_CANCEL, LOG_MARKET = 0, 1, 2
LOG_SHIFT, LOG_POST, LOG_REINIT, LOG_AGENT_BUY, LOG_AGENT_CANCEL = 3, 4, 5, 6, 7
LOG_PASSIVE = 8

# scalar slots of the queue-reactive state vector
ST_PREF, ST_ACTIVE, ST_ASLOT, ST_AHEAD, ST_AREM = 0, 1, 2, 3, 4
ST_LAST, ST_NC, ST_NA, ST_UP, ST_DOWN = 5, 6, 7, 8, 9
ST_PASSIVE, ST_AGGR, ST_SLICE, ST_NLOG, ST_LOGOVF = 10, 11, 12, 13, 14
ST_NEVENTS, ST_OFF, ST_NSLICE = 15, 16, 17
N_ST = 18
ACC_COST, ACC_PV, ACC_V, ACC_T = 0, 1, 2, 3


@njit(cache=True)
def s_regime(x, m, l):
    if x <= 0:
        return 0
    if x <= m:
        return 1
    if x <= l:
        return 2
    return 3


@njit(cache=True)
def slot_of(i, K):
    if i > 0:
        return K + i - 1
    return K + i


@njit(cache=True)
def dist_of(x, K):
    if x >= K:
        return x - K + 1
    return K - x


@njit(cache=True)
def price_h(pref_h, i):
    if i > 0:
        return pref_h + 2 * i - 1
    return pref_h + 2 * i + 1


@njit(cache=True)
def best_distance(q, K, side):
    for d in range(1, K + 1):
        if q[slot_of(side * d, K)] > 0:
            return d
    return 0


@njit(cache=True)
def fill_rates(q, K, kind, tab, cap, m, l, out):
    two = kind == KIND_IIA or kind == KIND_IIB
    for s in range(2):
        side = 2 * s - 1
        for d in range(1, K + 1):
            x = slot_of(side * d, K)
            n = q[x]
            nc = n if n < cap else cap
            reg = 0
            if two:
                if d == 1 and kind == KIND_IIB:
                    reg = s_regime(q[slot_of(-side, K)], m, l)
                elif d == 2:
                    reg = 1 if q[slot_of(side, K)] > 0 else 0
            out[x, 0] = tab[d - 1, reg, 0, nc]
            if n > 0:
                out[x, 1] = tab[d - 1, reg, 1, nc]
                out[x, 2] = 0.0 if two else tab[d - 1, reg, 2, nc]
            else:
                out[x, 1] = 0.0
                out[x, 2] = 0.0
        if two:
            # market orders go to the best quote among the first two limits
            x1 = slot_of(side, K)
            x2 = slot_of(2 * side, K)
            if q[x1] > 0:
                reg = s_regime(q[slot_of(-side, K)], m, l) if kind == KIND_IIB else 0
                out[x1, 2] = tab[0, reg, 2, min(q[x1], cap)]
            elif q[x2] > 0:
                out[x2, 2] = tab[1, 0, 2, min(q[x2], cap)]


@njit(cache=True)
def _pick(out, total, u):
    target = u * total
    acc = 0.0
    lx, lt = -1, -1
    for x in range(out.shape[0]):
        for t in range(3):
            r = out[x, t]
            if r > 0.0:
                acc += r
                lx, lt = x, t
                if target < acc:
                    return x, t
    return lx, lt


@njit(cache=True)
def _mask(out, active):
    for x in range(out.shape[0]):
        if active[x] == 0:
            out[x, 0] = 0.0
            out[x, 1] = 0.0
            out[x, 2] = 0.0


@njit(cache=True)
def period_path(q0, K, kind, tab, cap, m, l, active, horizon, max_events, rng):
    """Gillespie path at constant reference price.

    Stops at ``horizon`` or after ``max_events`` events, whichever is first.
    Returns event times, slots, types, the terminal state, the stopping time
    and an absorbed flag.
    """
    q = q0.copy()
    out = np.zeros((2 * K, 3))
    times = np.empty(max_events)
    slots = np.empty(max_events, dtype=np.int64)
    types = np.empty(max_events, dtype=np.int64)
    t = 0.0
    n = 0
    absorbed = False
    while n < max_events:
        fill_rates(q, K, kind, tab, cap, m, l, out)
        _mask(out, active)
        total = out.sum()
        if total <= 0.0:
            absorbed = True
            t = horizon
            break
        t += rng.standard_exponential() / total
        if t > horizon:
            t = horizon
            break
        x, e = _pick(out, total, rng.random())
        q[x] += 1 if e == 0 else -1
        times[n] = t
        slots[n] = x
        types[n] = e
        n += 1
    return times[:n], slots[:n], types[:n], q, t, absorbed


@njit(cache=True)
def occupation(q0, K, kind, tab, cap, m, l, active, dims, hist_size, n_events, burn_in,
               n_batches, rng):
    """Time-weighted occupation histogram of one or two queues.

    Sizes at or above ``hist_size`` accumulate into the returned overflow
    time.  Batch means of the first recorded queue are returned for
    effective-sample-size estimates.
    """
    q = q0.copy()
    out = np.zeros((2 * K, 3))
    two_d = dims.shape[0] == 2
    hist = np.zeros((hist_size, hist_size if two_d else 1))
    overflow = 0.0
    bsum = np.zeros(n_batches)
    btime = np.zeros(n_batches)
    for _ in range(burn_in):
        fill_rates(q, K, kind, tab, cap, m, l, out)
        _mask(out, active)
        total = out.sum()
        if total <= 0.0:
            break
        x, e = _pick(out, total, rng.random())
        q[x] += 1 if e == 0 else -1
    total_time = 0.0
    for ev in range(n_events):
        fill_rates(q, K, kind, tab, cap, m, l, out)
        _mask(out, active)
        total = out.sum()
        a = q[dims[0]]
        b = q[dims[1]] if two_d else 0
        if total <= 0.0:
            # absorbing: the chain stays here forever
            if a < hist_size and b < hist_size:
                hist[a, b] += 1.0
            else:
                overflow += 1.0
            total_time += 1.0
            bsum[:] += a
            btime[:] += 1.0
            break
        dwell = rng.standard_exponential() / total
        if a < hist_size and b < hist_size:
            hist[a, b] += dwell
        else:
            overflow += dwell
        total_time += dwell
        k = ev * n_batches // n_events
        bsum[k] += dwell * a
        btime[k] += dwell
        x, e = _pick(out, total, rng.random())
        q[x] += 1 if e == 0 else -1
    means = np.zeros(n_batches)
    for k in range(n_batches):
        if btime[k] > 0:
            means[k] = bsum[k] / btime[k]
    return hist, overflow, total_time, means, q


# -- queue-reactive engine ---------------------------------------------------


@njit(cache=True)
def mid_q(q, K, pref_h):
    db = best_distance(q, K, -1)
    da = best_distance(q, K, 1)
    bid = price_h(pref_h, -db) if db > 0 else price_h(pref_h, -(K + 1))
    ask = price_h(pref_h, da) if da > 0 else price_h(pref_h, K + 1)
    return bid + ask


@njit(cache=True)
def best_bid_h(q, K, pref_h):
    db = best_distance(q, K, -1)
    return price_h(pref_h, -db) if db > 0 else price_h(pref_h, -(K + 1))


@njit(cache=True)
def draw_size(inv_cdf, d, u):
    row = inv_cdf[d - 1]
    j = np.searchsorted(row, u, side="right")
    if j >= row.shape[0]:
        j = row.shape[0] - 1
    return j


@njit(cache=True)
def renorm(v, a_from, a_to):
    if v <= 0:
        return 0
    return int(np.floor(v * a_from / a_to + 0.5))


@njit(cache=True)
def _log(q, st, acc, log_t, log_c, log_s, code, x, dirn, ph):
    n = st[ST_NLOG]
    if n >= log_t.shape[0]:
        if log_t.shape[0] > 0:
            st[ST_LOGOVF] = 1
        return
    log_t[n] = acc[ACC_T]
    log_c[n, 0] = code
    log_c[n, 1] = x
    log_c[n, 2] = dirn
    log_c[n, 3] = ph
    K2 = q.shape[0]
    for j in range(K2):
        log_s[n, j] = q[j]
    log_s[n, K2] = st[ST_PREF]
    st[ST_NLOG] = n + 1


@njit(cache=True)
def _shift(q, st, dirn, K, inv_cdf, aes, rng):
    old = q.copy()
    if dirn > 0:
        for i in range(1, K):
            q[slot_of(i, K)] = renorm(old[slot_of(i + 1, K)], aes[i], aes[i - 1])
        q[slot_of(K, K)] = draw_size(inv_cdf, K, rng.random())
        q[slot_of(-1, K)] = 0
        for i in range(2, K + 1):
            q[slot_of(-i, K)] = renorm(old[slot_of(-(i - 1), K)], aes[i - 2], aes[i - 1])
    else:
        for i in range(1, K):
            q[slot_of(-i, K)] = renorm(old[slot_of(-(i + 1), K)], aes[i], aes[i - 1])
        q[slot_of(-K, K)] = draw_size(inv_cdf, K, rng.random())
        q[slot_of(1, K)] = 0
        for i in range(2, K + 1):
            q[slot_of(i, K)] = renorm(old[slot_of(i - 1, K)], aes[i - 2], aes[i - 1])
    st[ST_PREF] += 2 * dirn
    if st[ST_ACTIVE] == 1 and st[ST_OFF] == 0:
        xa = st[ST_ASLOT]
        da = dist_of(xa, K)
        nd = da + dirn  # the order keeps its price, so its distance changes
        if nd > K or nd < 1:
            st[ST_OFF] = 1
        else:
            rem = st[ST_AREM]
            ahead = st[ST_AHEAD]
            behind = old[xa] - ahead - rem
            nx = slot_of(-nd, K)
            ahead = renorm(ahead, aes[da - 1], aes[nd - 1])
            behind = renorm(behind, aes[da - 1], aes[nd - 1])
            q[nx] = ahead + rem + behind
            st[ST_ASLOT] = nx
            st[ST_AHEAD] = ahead


@njit(cache=True)
def _reinit(q, st, K, inv_cdf, rng):
    for x in range(2 * K):
        q[x] = draw_size(inv_cdf, dist_of(x, K), rng.random())
    if st[ST_ACTIVE] == 1 and st[ST_OFF] == 0:
        xa = st[ST_ASLOT]
        amb = q[xa]
        if st[ST_AHEAD] > amb:
            st[ST_AHEAD] = amb
        q[xa] = amb + st[ST_AREM]


@njit(cache=True)
def _record_move(st, sgn):
    if st[ST_LAST] != 0:
        if sgn == st[ST_LAST]:
            st[ST_NC] += 1
        else:
            st[ST_NA] += 1
    st[ST_LAST] = sgn
    if sgn > 0:
        st[ST_UP] += 1
    else:
        st[ST_DOWN] += 1


@njit(cache=True)
def _move(q, st, acc, dirn, theta_reinit, K, inv_cdf, aes, rng, log_t, log_c, log_s):
    _shift(q, st, dirn, K, inv_cdf, aes, rng)
    _record_move(st, dirn)
    _log(q, st, acc, log_t, log_c, log_s, LOG_SHIFT, -1, dirn, st[ST_PREF])
    if rng.random() < theta_reinit:
        _reinit(q, st, K, inv_cdf, rng)
        _log(q, st, acc, log_t, log_c, log_s, LOG_REINIT, -1, dirn, st[ST_PREF])


@njit(cache=True)
def _maybe_move(q, st, acc, dirn, theta, theta_reinit, K, inv_cdf, aes, rng,
                log_t, log_c, log_s):
    if rng.random() < theta:
        _move(q, st, acc, dirn, theta_reinit, K, inv_cdf, aes, rng, log_t, log_c, log_s)


@njit(cache=True)
def _trade(st, acc, slice_pv, slice_v, ph, shares):
    acc[ACC_PV] += ph * shares
    acc[ACC_V] += shares
    s = st[ST_SLICE]
    if s < slice_pv.shape[0]:
        slice_pv[s] += ph * shares
        slice_v[s] += shares


@njit(cache=True)
def _agent_buy(q, st, acc, units, theta, theta_reinit, K, inv_cdf, aes, rng,
               slice_pv, slice_v, log_t, log_c, log_s):
    forced = 0
    while units > 0:
        da = best_distance(q, K, 1)
        if da == 0:
            if forced < 100:
                # nothing visible on the ask side: reveal the next limit
                forced += 1
                _move(q, st, acc, 1, theta_reinit, K, inv_cdf, aes, rng, log_t, log_c, log_s)
                continue
            ph = price_h(st[ST_PREF], K + 1)
            acc[ACC_COST] += ph * units
            st[ST_AGGR] += units
            _trade(st, acc, slice_pv, slice_v, ph, aes[0] * units)
            return
        forced = 0
        x = slot_of(da, K)
        ph = price_h(st[ST_PREF], da)
        q[x] -= 1
        units -= 1
        acc[ACC_COST] += ph
        st[ST_AGGR] += 1
        _trade(st, acc, slice_pv, slice_v, ph, aes[0])
        _log(q, st, acc, log_t, log_c, log_s, LOG_AGENT_BUY, x, -1, ph)
        if q[x] == 0:
            _maybe_move(q, st, acc, 1, theta, theta_reinit, K, inv_cdf, aes, rng,
                        log_t, log_c, log_s)


@njit(cache=True)
def _agent_cancel(q, st):
    if st[ST_ACTIVE] == 0:
        return 0
    rem = st[ST_AREM]
    if st[ST_OFF] == 0:
        q[st[ST_ASLOT]] -= rem
    st[ST_ACTIVE] = 0
    st[ST_AREM] = 0
    st[ST_AHEAD] = 0
    st[ST_OFF] = 0
    return rem


@njit(cache=True)
def _agent_post(q, st, K, units, x):
    st[ST_AHEAD] = q[x]
    q[x] += units
    st[ST_AREM] = units
    st[ST_ASLOT] = x
    st[ST_OFF] = 0
    st[ST_ACTIVE] = 1 if units > 0 else 0


@njit(cache=True)
def _best_bid_slot(q, K, fallback):
    db = best_distance(q, K, -1)
    if db == 0:
        return fallback
    return slot_of(-db, K)


@njit(cache=True)
def _sample(q, K, pref_h, ref):
    if ref:
        return 2 * pref_h
    return mid_q(q, K, pref_h)


@njit(cache=True)
def qr_path(q0, pref_h0, K, kind, tab, cap, m, l, theta, theta_reinit, inv_cdf, aes,
            horizon, tactic, slice_T, slice_qty, sample_times, sample_ref, log_cap, rng):
    """One queue-reactive path, optionally with an agent buying via a tactic.

    ``tactic`` is 0 (no agent), 1 (fire and forget) or 2 (pegging to the
    best).  Slices of length ``slice_T`` start at ``t = 0``; each posts
    ``slice_qty[s]`` at the best bid and completes with a market order at
    its end.  Midprices (or ``2 p_ref`` when ``sample_ref``, both in
    quarter ticks) are recorded at ``sample_times`` after every action
    scheduled at or before that time.
    """
    q = q0.copy()
    st = np.zeros(N_ST, dtype=np.int64)
    acc = np.zeros(4)
    st[ST_PREF] = pref_h0
    n_slices = slice_qty.shape[0] if tactic > 0 else 0
    st[ST_NSLICE] = n_slices
    slice_pv = np.zeros(max(n_slices, 1))
    slice_v = np.zeros(max(n_slices, 1))
    log_t = np.empty(log_cap)
    log_c = np.empty((log_cap, 4), dtype=np.int64)
    log_s = np.empty((log_cap, 2 * K + 1), dtype=np.int64)
    n_samp = sample_times.shape[0]
    mids = np.empty(n_samp, dtype=np.int64)
    si = 0
    out = np.zeros((2 * K, 3))
    t = 0.0
    next_boundary = np.inf
    if n_slices > 0:
        _agent_post(q, st, K, slice_qty[0], _best_bid_slot(q, K, slot_of(-1, K)))
        _log(q, st, acc, log_t, log_c, log_s, LOG_POST, st[ST_ASLOT], 1, slice_qty[0])
        next_boundary = slice_T
    while True:
        fill_rates(q, K, kind, tab, cap, m, l, out)
        if st[ST_ACTIVE] == 1 and st[ST_OFF] == 0:
            xa = st[ST_ASLOT]
            # the agent's own units are never cancelled by the ambient flow
            out[xa, 1] *= (q[xa] - st[ST_AREM]) / q[xa]
        total = out.sum()
        t_next = t + rng.standard_exponential() / total if total > 0.0 else np.inf
        t_sched = next_boundary if next_boundary < horizon else horizon
        if t_next >= t_sched:
            while si < n_samp and sample_times[si] < t_sched:
                mids[si] = _sample(q, K, st[ST_PREF], sample_ref)
                si += 1
            t = t_sched
            acc[ACC_T] = t
            if next_boundary <= horizon and t == next_boundary:
                s = st[ST_SLICE]
                rem = _agent_cancel(q, st)
                if rem > 0:
                    _log(q, st, acc, log_t, log_c, log_s, LOG_AGENT_CANCEL, -1, 0, rem)
                    _agent_buy(q, st, acc, rem, theta, theta_reinit, K, inv_cdf, aes, rng,
                               slice_pv, slice_v, log_t, log_c, log_s)
                s += 1
                st[ST_SLICE] = s
                if s < n_slices:
                    _agent_post(q, st, K, slice_qty[s], _best_bid_slot(q, K, slot_of(-1, K)))
                    _log(q, st, acc, log_t, log_c, log_s, LOG_POST, st[ST_ASLOT], 1, slice_qty[s])
                    next_boundary = (s + 1) * slice_T
                else:
                    next_boundary = np.inf
                if t < horizon:
                    continue
            break
        while si < n_samp and sample_times[si] < t_next:
            mids[si] = _sample(q, K, st[ST_PREF], sample_ref)
            si += 1
        t = t_next
        acc[ACC_T] = t
        st[ST_NEVENTS] += 1
        x, e = _pick(out, total, rng.random())
        pref = st[ST_PREF]
        mid_before = mid_q(q, K, pref)
        bb_before = best_bid_h(q, K, pref)
        d = dist_of(x, K)
        side = 1 if x >= K else -1
        agent_here = st[ST_ACTIVE] == 1 and st[ST_OFF] == 0 and st[ST_ASLOT] == x
        trigger = 0
        if e == 0:
            was_empty = q[x] == 0
            q[x] += 1
            if d == 1 and was_empty and q[slot_of(-side, K)] == 0:
                trigger = -side
        else:
            was_best = best_distance(q, K, side) == d
            if e == 1:
                if agent_here:
                    amb = q[x] - st[ST_AREM]
                    if rng.random() * amb < st[ST_AHEAD]:
                        st[ST_AHEAD] -= 1
            else:
                ph = price_h(pref, side * d)
                _trade(st, acc, slice_pv, slice_v, ph, aes[d - 1])
                if agent_here:
                    if st[ST_AHEAD] > 0:
                        st[ST_AHEAD] -= 1
                    else:
                        st[ST_AREM] -= 1
                        st[ST_PASSIVE] += 1
                        acc[ACC_COST] += ph
                        _log(q, st, acc, log_t, log_c, log_s, LOG_PASSIVE, x, -1, ph)
                        if st[ST_AREM] == 0:
                            st[ST_ACTIVE] = 0
            q[x] -= 1
            if was_best and q[x] == 0:
                trigger = side
        _log(q, st, acc, log_t, log_c, log_s, e, x, 1 if e == 0 else -1, price_h(pref, side * d))
        if trigger != 0:
            _maybe_move(q, st, acc, trigger, theta, theta_reinit, K, inv_cdf, aes, rng,
                        log_t, log_c, log_s)
        if st[ST_ACTIVE] == 1:
            if tactic == 1:
                if mid_q(q, K, st[ST_PREF]) != mid_before:
                    rem = _agent_cancel(q, st)
                    _log(q, st, acc, log_t, log_c, log_s, LOG_AGENT_CANCEL, -1, 0, rem)
                    _agent_buy(q, st, acc, rem, theta, theta_reinit, K, inv_cdf, aes, rng,
                               slice_pv, slice_v, log_t, log_c, log_s)
            elif tactic == 2:
                xa = st[ST_ASLOT]
                off = st[ST_OFF] == 1
                alone = (not off) and q[xa] == st[ST_AREM] and \
                    best_distance(q, K, -1) == dist_of(xa, K)
                if off or alone or best_bid_h(q, K, st[ST_PREF]) != bb_before:
                    keep = xa if not off else slot_of(-K, K)
                    rem = _agent_cancel(q, st)
                    target = _best_bid_slot(q, K, keep)
                    _agent_post(q, st, K, rem, target)
                    _log(q, st, acc, log_t, log_c, log_s, LOG_POST, target, 1, rem)
    while si < n_samp and sample_times[si] <= horizon:
        mids[si] = _sample(q, K, st[ST_PREF], sample_ref)
        si += 1
    for j in range(si, n_samp):
        mids[j] = _sample(q, K, st[ST_PREF], sample_ref)
    n = st[ST_NLOG]
    return (mids, st, acc, slice_pv[:n_slices], slice_v[:n_slices], q,
            log_t[:n], log_c[:n], log_s[:n])


# -- execution probability ---------------------------------------------------


@njit(cache=True)
def exec_prob_block(q0, K, kind, tab, cap, m, l, n0, n_paths, max_events, rng):
    """Count full fills of a buy order of ``n0`` units appended to ``Q_-1``.

    A path succeeds when the order is fully executed and fails when ``Q_1``
    empties first.  Only the jump chain is simulated; holding times do not
    affect which absorbing event comes first.
    """
    out = np.zeros((2 * K, 3))
    xa = slot_of(-1, K)
    xo = slot_of(1, K)
    succ = 0
    fail = 0
    for _ in range(n_paths):
        q = q0.copy()
        ahead = q[xa]
        rem = n0
        q[xa] += n0
        for _ev in range(max_events):
            fill_rates(q, K, kind, tab, cap, m, l, out)
            qa = q[xa]
            out[xa, 1] *= (qa - rem) / qa
            total = out.sum()
            if total <= 0.0:
                break
            x, e = _pick(out, total, rng.random())
            if x == xa:
                if e == 0:
                    q[xa] += 1
                elif e == 1:
                    if rng.random() * (qa - rem) < ahead:
                        ahead -= 1
                    q[xa] -= 1
                else:
                    if ahead > 0:
                        ahead -= 1
                    else:
                        rem -= 1
                    q[xa] -= 1
                if rem == 0:
                    succ += 1
                    break
            else:
                q[x] += 1 if e == 0 else -1
                if q[xo] == 0:
                    fail += 1
                    break
    return succ, fail
