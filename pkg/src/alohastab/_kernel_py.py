"""Pure-Python slot loops. Reference behaviour for the compiled kernel.

Both loops take the flattened arrival description built by
``alohastab.sim._encode`` and fill the preallocated output arrays in place.
"""
from ._rng import GOLDEN, INV_2_53, M1, M2, MASK, stream_key


def _pick(cum, u):
    a = 0
    last = len(cum) - 1
    while a < last and u >= cum[a]:
        a += 1
    return a


def _initial_env(key, n, stride, n_env, env_cum):
    env = [0] * n
    for i in range(n):
        if n_env[i] > 1:
            env[i] = _pick(env_cum[i][: n_env[i]], _u(key, 2 + 3 * i))
    return env


def _u(key, c):
    z = (key + (c + 1) * GOLDEN) & MASK
    z = ((z ^ (z >> 30)) * M1) & MASK
    z = ((z ^ (z >> 27)) * M2) & MASK
    z ^= z >> 31
    return (z >> 11) * INV_2_53


def _arrivals(key, base, n, sat, B, env, n_env, arr_prob, trans_cum, has_trans,
              env_cum, has_resample, arrivals):
    for i in range(n):
        if sat[i]:
            continue
        if has_trans[i]:
            env[i] = _pick(trans_cum[i][env[i]][: n_env[i]], _u(key, base + 2 + 3 * i))
        q = arr_prob[i][env[i]]
        if q > 0.0 and _u(key, base + 3 + 3 * i) < q:
            B[i] += 1
            arrivals[i] += 1
            if has_resample[i]:
                env[i] = _pick(env_cum[i][: n_env[i]], _u(key, base + 2 + 3 * i))


def _unpack(p, saturated, n_env, arr_prob, trans_cum, has_trans, env_cum, has_resample):
    return (
        [float(x) for x in p],
        [bool(x) for x in saturated],
        [int(x) for x in n_env],
        arr_prob.tolist(),
        trans_cum.tolist(),
        [bool(x) for x in has_trans],
        env_cum.tolist(),
        [bool(x) for x in has_resample],
    )


def run_aloha(seed, slots, checkpoint, p, b, saturated, n_env, arr_prob, trans_cum,
              has_trans, env_cum, has_resample, B0,
              arrivals, departures, successes, backlog, counters, trace):
    n = len(p)
    p, sat, n_env, arr_prob, trans_cum, has_trans, env_cum, has_resample = _unpack(
        p, saturated, n_env, arr_prob, trans_cum, has_trans, env_cum, has_resample)
    key = stream_key(seed)
    stride = 1 + 3 * n
    B = [int(x) for x in B0]
    env = _initial_env(key, n, stride, n_env, env_cum)
    arr = [0] * n
    dep = [0] * n
    suc = [0] * n
    idle = busy = coll = 0
    row = 0
    for t in range(1, slots + 1):
        base = t * stride
        if b >= 1.0 or _u(key, base) < b:
            n_att = 0
            who = -1
            for i in range(n):
                if (sat[i] or B[i] > 0) and _u(key, base + 1 + 3 * i) < p[i]:
                    n_att += 1
                    who = i
            if n_att == 1:
                suc[who] += 1
                if not sat[who]:
                    B[who] -= 1
                    dep[who] += 1
                busy += 1
            elif n_att > 1:
                coll += 1
            else:
                idle += 1
        else:
            idle += 1
        _arrivals(key, base, n, sat, B, env, n_env, arr_prob, trans_cum, has_trans,
                  env_cum, has_resample, arr)
        if t % checkpoint == 0:
            for i in range(n):
                trace[row, i] = B[i]
            row += 1
    _store(arr, dep, suc, B, (idle, busy, coll), arrivals, departures, successes, backlog, counters)


def run_csma(seed, slots, checkpoint, p, b, sigma, saturated, n_env, arr_prob, trans_cum,
             has_trans, env_cum, has_resample, B0,
             arrivals, departures, successes, backlog, counters, trace):
    n = len(p)
    p, sat, n_env, arr_prob, trans_cum, has_trans, env_cum, has_resample = _unpack(
        p, saturated, n_env, arr_prob, trans_cum, has_trans, env_cum, has_resample)
    key = stream_key(seed)
    stride = 1 + 3 * n
    B = [int(x) for x in B0]
    env = _initial_env(key, n, stride, n_env, env_cum)
    arr = [0] * n
    dep = [0] * n
    suc = [0] * n
    idle = busy = coll = 0
    hold = 0
    owner = -1  # -1 while a collision occupies the channel
    row = 0
    for t in range(1, slots + 1):
        base = t * stride
        if hold > 0:
            hold -= 1
            if owner >= 0:
                busy += 1
                if hold == 0:
                    suc[owner] += 1
                    if not sat[owner]:
                        B[owner] -= 1
                        dep[owner] += 1
            else:
                coll += 1
        elif b >= 1.0 or _u(key, base) < b:
            n_att = 0
            who = -1
            for i in range(n):
                if (sat[i] or B[i] > 0) and _u(key, base + 1 + 3 * i) < p[i]:
                    n_att += 1
                    who = i
            if n_att == 1:
                busy += 1
                if sigma == 1:
                    suc[who] += 1
                    if not sat[who]:
                        B[who] -= 1
                        dep[who] += 1
                else:
                    hold = sigma - 1
                    owner = who
            elif n_att > 1:
                coll += 1
                hold = sigma - 1
                owner = -1
            else:
                idle += 1
        else:
            idle += 1
        _arrivals(key, base, n, sat, B, env, n_env, arr_prob, trans_cum, has_trans,
                  env_cum, has_resample, arr)
        if t % checkpoint == 0:
            for i in range(n):
                trace[row, i] = B[i]
            row += 1
    _store(arr, dep, suc, B, (idle, busy, coll), arrivals, departures, successes, backlog, counters)


def _store(arr, dep, suc, B, counts, arrivals, departures, successes, backlog, counters):
    for i in range(len(arr)):
        arrivals[i] = arr[i]
        departures[i] = dep[i]
        successes[i] = suc[i]
        backlog[i] = B[i]
    for k in range(3):
        counters[k] = counts[k]
