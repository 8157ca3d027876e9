# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled slot loops. Same draw layout and semantics as _kernel_py."""
from libc.stdint cimport uint64_t, int64_t, uint8_t

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef uint64_t M1 = 0xBF58476D1CE4E5B9ULL
cdef uint64_t M2 = 0x94D049BB133111EBULL
cdef double INV_2_53 = 1.0 / 9007199254740992.0


cdef inline uint64_t _mix(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * M1
    z = (z ^ (z >> 27)) * M2
    return z ^ (z >> 31)


cdef inline double _u(uint64_t key, uint64_t c) noexcept nogil:
    return <double>(_mix(key + (c + 1) * GOLDEN) >> 11) * INV_2_53


cdef inline int _pick(const double[:] cum, int n, double u) noexcept nogil:
    cdef int a = 0
    while a < n - 1 and u >= cum[a]:
        a += 1
    return a


cdef inline void _arrivals(uint64_t key, uint64_t base, int n, const uint8_t[:] sat,
                           int64_t[:] B, int[:] env, const int64_t[:] n_env,
                           const double[:, :] arr_prob, const double[:, :, :] trans_cum,
                           const uint8_t[:] has_trans, const double[:, :] env_cum,
                           const uint8_t[:] has_resample, int64_t[:] arr) noexcept nogil:
    cdef int i
    cdef double q
    for i in range(n):
        if sat[i]:
            continue
        if has_trans[i]:
            env[i] = _pick(trans_cum[i, env[i]], <int>n_env[i], _u(key, base + 2 + 3 * i))
        q = arr_prob[i, env[i]]
        if q > 0.0 and _u(key, base + 3 + 3 * i) < q:
            B[i] += 1
            arr[i] += 1
            if has_resample[i]:
                env[i] = _pick(env_cum[i], <int>n_env[i], _u(key, base + 2 + 3 * i))


def run_csma(uint64_t seed, int64_t slots, int64_t checkpoint, const double[:] p, double b,
             int64_t sigma, const uint8_t[:] saturated, const int64_t[:] n_env,
             const double[:, :] arr_prob, const double[:, :, :] trans_cum,
             const uint8_t[:] has_trans, const double[:, :] env_cum,
             const uint8_t[:] has_resample, const int64_t[:] B0,
             int64_t[:] arrivals, int64_t[:] departures, int64_t[:] successes,
             int64_t[:] backlog, int64_t[:] counters, int64_t[:, :] trace):
    cdef int n = p.shape[0]
    cdef uint64_t key = _mix(seed)
    cdef uint64_t stride = 1 + 3 * n
    cdef uint64_t base
    cdef int64_t t, hold = 0, row = 0
    cdef int64_t idle = 0, busy = 0, coll = 0
    cdef int i, n_att, who, owner = -1
    cdef int[:] env = _zeros_int(n)
    cdef int64_t[:] B = _copy64(B0)
    for i in range(n):
        arrivals[i] = 0
        departures[i] = 0
        successes[i] = 0
        if n_env[i] > 1:
            env[i] = _pick(env_cum[i], <int>n_env[i], _u(key, 2 + 3 * i))
    with nogil:
        for t in range(1, slots + 1):
            base = <uint64_t>t * stride
            if hold > 0:
                hold -= 1
                if owner >= 0:
                    busy += 1
                    if hold == 0:
                        successes[owner] += 1
                        if not saturated[owner]:
                            B[owner] -= 1
                            departures[owner] += 1
                else:
                    coll += 1
            elif b >= 1.0 or _u(key, base) < b:
                n_att = 0
                who = -1
                for i in range(n):
                    if (saturated[i] or B[i] > 0) and _u(key, base + 1 + 3 * i) < p[i]:
                        n_att += 1
                        who = i
                if n_att == 1:
                    busy += 1
                    if sigma == 1:
                        successes[who] += 1
                        if not saturated[who]:
                            B[who] -= 1
                            departures[who] += 1
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
            _arrivals(key, base, n, saturated, B, env, n_env, arr_prob, trans_cum,
                      has_trans, env_cum, has_resample, arrivals)
            if t % checkpoint == 0:
                for i in range(n):
                    trace[row, i] = B[i]
                row += 1
    for i in range(n):
        backlog[i] = B[i]
    counters[0] = idle
    counters[1] = busy
    counters[2] = coll


def run_aloha(uint64_t seed, int64_t slots, int64_t checkpoint, const double[:] p, double b,
              const uint8_t[:] saturated, const int64_t[:] n_env,
              const double[:, :] arr_prob, const double[:, :, :] trans_cum,
              const uint8_t[:] has_trans, const double[:, :] env_cum,
              const uint8_t[:] has_resample, const int64_t[:] B0,
              int64_t[:] arrivals, int64_t[:] departures, int64_t[:] successes,
              int64_t[:] backlog, int64_t[:] counters, int64_t[:, :] trace):
    cdef int n = p.shape[0]
    cdef uint64_t key = _mix(seed)
    cdef uint64_t stride = 1 + 3 * n
    cdef uint64_t base
    cdef int64_t t, row = 0
    cdef int64_t idle = 0, busy = 0, coll = 0
    cdef int i, n_att, who
    cdef int[:] env = _zeros_int(n)
    cdef int64_t[:] B = _copy64(B0)
    for i in range(n):
        arrivals[i] = 0
        departures[i] = 0
        successes[i] = 0
        if n_env[i] > 1:
            env[i] = _pick(env_cum[i], <int>n_env[i], _u(key, 2 + 3 * i))
    with nogil:
        for t in range(1, slots + 1):
            base = <uint64_t>t * stride
            if b >= 1.0 or _u(key, base) < b:
                n_att = 0
                who = -1
                for i in range(n):
                    if (saturated[i] or B[i] > 0) and _u(key, base + 1 + 3 * i) < p[i]:
                        n_att += 1
                        who = i
                if n_att == 1:
                    successes[who] += 1
                    if not saturated[who]:
                        B[who] -= 1
                        departures[who] += 1
                    busy += 1
                elif n_att > 1:
                    coll += 1
                else:
                    idle += 1
            else:
                idle += 1
            _arrivals(key, base, n, saturated, B, env, n_env, arr_prob, trans_cum,
                      has_trans, env_cum, has_resample, arrivals)
            if t % checkpoint == 0:
                for i in range(n):
                    trace[row, i] = B[i]
                row += 1
    for i in range(n):
        backlog[i] = B[i]
    counters[0] = idle
    counters[1] = busy
    counters[2] = coll


cdef int[:] _zeros_int(int n):
    import numpy as np
    return np.zeros(n, dtype=np.intc)


cdef int64_t[:] _copy64(const int64_t[:] src):
    import numpy as np
    return np.array(src, dtype=np.int64)
