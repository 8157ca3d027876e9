"""Slot-level Monte Carlo simulation of buffered slotted Aloha / CSMA.

The inner loop lives in a compiled extension (``_kernel``) with a pure-Python
twin (``_kernel_py``) used when the extension is missing or when
``ALOHASTAB_PURE=1`` is set. Both consume the same counter-based random
stream, so a run is bit-identical whichever backend executes it.

Within a slot, contention is resolved before arrivals: a packet arriving in
slot t first competes in slot t + 1. With CSMA holding time sigma, a
transmission or a collision occupies sigma consecutive slots and a
successful packet leaves the buffer when its last slot ends.
"""
from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import _kernel_py, _rng

log = logging.getLogger(__name__)

try:
    if os.environ.get("ALOHASTAB_PURE"):
        raise ImportError("pure-Python backend forced")
    from . import _kernel as _compiled
except ImportError:  # pragma: no cover - depends on the build
    _compiled = None

BACKENDS = {"python": _kernel_py}
if _compiled is not None:
    BACKENDS["compiled"] = _compiled
DEFAULT_BACKEND = "compiled" if _compiled is not None else "python"


def _kernel_module(backend: str | None):
    name = backend or DEFAULT_BACKEND
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} unavailable; have {sorted(BACKENDS)}") from None


# --- arrival models ---------------------------------------------------------


def _stationary(P: np.ndarray) -> np.ndarray:
    n = P.shape[0]
    A = np.vstack([P.T - np.eye(n), np.ones(n)])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    pi = np.linalg.lstsq(A, rhs, rcond=None)[0]
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


@dataclass(frozen=True)
class Bernoulli:
    lam: float

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"Bernoulli rate {self.lam} outside [0, 1]")

    def with_rate(self, lam: float) -> "Bernoulli":
        return Bernoulli(lam)

    def encode(self, n_users: int):
        return [self.lam], None, [1.0], False


@dataclass(frozen=True)
class HyperGeometricMixture:
    """I.i.d. geometric inter-arrival gaps whose parameter is a fair coin flip.

    The two success parameters are a*lam and (1-a)*lam scaled by a common
    factor 1 / (2 a (1 - a)), which makes the mean gap exactly 1/lam.
    """

    lam: float
    a: float = 0.2

    def __post_init__(self):
        if not 0.0 < self.a < 1.0:
            raise ValueError("mixture parameter a must lie in (0, 1)")
        if self.lam < 0.0 or max(self.rates()) > 1.0:
            raise ValueError(f"rate {self.lam} too large for a={self.a}: a gap parameter exceeds 1")

    def rates(self) -> tuple[float, float]:
        scale = 1.0 / (2.0 * self.a * (1.0 - self.a))
        return self.a * self.lam * scale, (1.0 - self.a) * self.lam * scale

    def with_rate(self, lam: float) -> "HyperGeometricMixture":
        return HyperGeometricMixture(lam, self.a)

    def encode(self, n_users: int):
        return list(self.rates()), None, [0.5, 1.0], True


@dataclass(frozen=True)
class MarkovModulated:
    """Arrival probability lam * g[a] while the environment sits in state a.

    ``speed="fast"``: ``kernel`` is the one-step transition matrix applied
    every slot. ``speed="slow"``: ``kernel`` holds jump rates per scaled
    second and each slot moves with probability K(a, a') / N.
    """

    kernel: tuple
    g: tuple
    lam: float
    speed: str = "fast"

    def __post_init__(self):
        object.__setattr__(self, "kernel", tuple(tuple(float(x) for x in row) for row in self.kernel))
        object.__setattr__(self, "g", tuple(float(x) for x in self.g))
        K = np.asarray(self.kernel)
        if K.ndim != 2 or K.shape[0] != K.shape[1] or K.shape[0] != len(self.g):
            raise ValueError("kernel must be square and match the length of g")
        if np.any(K < 0.0) and self.speed == "fast":
            raise ValueError("transition probabilities must be nonnegative")
        if self.speed not in ("fast", "slow"):
            raise ValueError("speed must be 'fast' or 'slow'")
        if self.speed == "fast" and not np.allclose(K.sum(axis=1), 1.0):
            raise ValueError("fast kernel rows must sum to 1")
        pi = self.stationary()
        if abs(float(pi @ np.asarray(self.g)) - 1.0) > 1e-9:
            raise ValueError("modulation weights must satisfy sum_a pi(a) g_a = 1")
        if self.lam < 0.0 or self.lam * max(self.g) > 1.0:
            raise ValueError("lam * g_a must be a probability")

    def rate_matrix(self) -> np.ndarray:
        K = np.array(self.kernel)
        np.fill_diagonal(K, 0.0)
        np.fill_diagonal(K, -K.sum(axis=1))
        return K

    def slot_matrix(self, n_users: int) -> np.ndarray:
        if self.speed == "fast":
            return np.asarray(self.kernel)
        P = np.eye(len(self.g)) + self.rate_matrix() / n_users
        if np.any(np.diag(P) < 0.0):
            raise ValueError(f"jump rates too large for N={n_users}: K/N is not a probability")
        return P

    def stationary(self) -> np.ndarray:
        if self.speed == "fast":
            return _stationary(np.asarray(self.kernel))
        return _stationary(np.eye(len(self.g)) + self.rate_matrix() / (1.0 + np.abs(self.rate_matrix()).max()))

    def with_rate(self, lam: float) -> "MarkovModulated":
        return MarkovModulated(self.kernel, self.g, lam, self.speed)

    def encode(self, n_users: int):
        P = self.slot_matrix(n_users)
        return [self.lam * g for g in self.g], P, list(np.cumsum(self.stationary())), False


ArrivalModel = Bernoulli | HyperGeometricMixture | MarkovModulated


def arrival_step(model: ArrivalModel, env: int, u_env: float, u_arr: float, n_users: int = 1):
    """One slot of a user's arrival process.

    ``u_env`` and ``u_arr`` are the slot's environment and arrival uniforms.
    Returns ``(arrived, env')``.
    """
    probs, P, env_cum, resample = model.encode(n_users)
    if P is not None and len(probs) > 1:
        env = _kernel_py._pick(list(np.cumsum(P[env])), u_env)
    q = probs[env]
    arrived = bool(q > 0.0 and u_arr < q)
    if arrived and resample:
        env = _kernel_py._pick(list(env_cum), u_env)
    return arrived, env


# --- system description -----------------------------------------------------


@dataclass(frozen=True)
class FiniteSystemSpec:
    p: tuple
    arrivals: tuple
    b: float = 1.0
    sigma: int = 1
    saturated: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "p", tuple(float(x) for x in self.p))
        object.__setattr__(self, "arrivals", tuple(self.arrivals))
        object.__setattr__(self, "saturated", frozenset(int(i) for i in self.saturated))
        if len(self.p) != len(self.arrivals) or not self.p:
            raise ValueError("need one arrival model per user")
        if any(not 0.0 < x <= 1.0 for x in self.p):
            raise ValueError("attempt probabilities must lie in (0, 1]")
        if not 0.0 < self.b <= 1.0:
            raise ValueError("slot availability b must lie in (0, 1]")
        if int(self.sigma) != self.sigma or self.sigma < 1:
            raise ValueError("sigma must be an integer >= 1")
        if any(i < 0 or i >= len(self.p) for i in self.saturated):
            raise ValueError("saturated index out of range")

    @property
    def n(self) -> int:
        return len(self.p)

    @property
    def rates(self) -> np.ndarray:
        return np.array([m.lam for m in self.arrivals])

    def with_rates(self, lam: Sequence[float]) -> "FiniteSystemSpec":
        return replace(self, arrivals=tuple(m.with_rate(float(x)) for m, x in zip(self.arrivals, lam)))

    def with_saturated(self, users) -> "FiniteSystemSpec":
        return replace(self, saturated=frozenset(users))

    @classmethod
    def bernoulli(cls, p, lam, **kw) -> "FiniteSystemSpec":
        return cls(p=tuple(p), arrivals=tuple(Bernoulli(float(x)) for x in lam), **kw)


def _encode(spec: FiniteSystemSpec):
    n = spec.n
    parts = [m.encode(n) for m in spec.arrivals]
    width = max(len(pr) for pr, *_ in parts)
    n_env = np.array([len(pr) for pr, *_ in parts], dtype=np.int64)
    arr_prob = np.zeros((n, width))
    trans_cum = np.ones((n, width, width))
    env_cum = np.ones((n, width))
    has_trans = np.zeros(n, dtype=np.uint8)
    has_resample = np.zeros(n, dtype=np.uint8)
    for i, (probs, P, dist, resample) in enumerate(parts):
        k = len(probs)
        arr_prob[i, :k] = probs
        env_cum[i, :k] = dist
        env_cum[i, k - 1] = 1.0
        if P is not None and k > 1:
            has_trans[i] = 1
            trans_cum[i, :k, :k] = np.cumsum(P, axis=1)
            trans_cum[i, :k, k - 1] = 1.0
        has_resample[i] = bool(resample)
    sat = np.zeros(n, dtype=np.uint8)
    for j in spec.saturated:
        sat[j] = 1
    return sat, n_env, arr_prob, trans_cum, has_trans, env_cum, has_resample


# --- single-slot reference stepper -------------------------------------------


@dataclass
class SimState:
    """Mutable state of one replication; ``owner`` is -1 during a collision."""

    buffers: list
    env: list
    key: int
    t: int = 0
    hold: int = 0
    owner: int = -1

    @classmethod
    def initial(cls, spec: FiniteSystemSpec, seed: int, buffers=None) -> "SimState":
        key = _rng.stream_key(seed)
        _, n_env, _, _, _, env_cum, _ = _encode(spec)
        env = _kernel_py._initial_env(key, spec.n, _rng.stride(spec.n), n_env.tolist(), env_cum.tolist())
        return cls(buffers=list(buffers or [0] * spec.n), env=env, key=key)


def slot_step(state: SimState, spec: FiniteSystemSpec) -> SimState:
    """Advance one slot and return the new state (the input is not modified).

    Departures are reported through the returned state's buffers only; use
    ``run_sim`` for counted statistics.
    """
    s = replace(state, buffers=list(state.buffers), env=list(state.env))
    s.t += 1
    n = spec.n
    base = s.t * _rng.stride(n)
    draw = lambda c: _rng.uniform(s.key, base + c)  # noqa: E731
    sat = spec.saturated
    if s.hold > 0:
        s.hold -= 1
        if s.hold == 0 and s.owner >= 0:
            if s.owner not in sat:
                s.buffers[s.owner] -= 1
            s.owner = -1
    elif spec.b >= 1.0 or draw(0) < spec.b:
        attempters = [i for i in range(n)
                      if (i in sat or s.buffers[i] > 0) and draw(1 + 3 * i) < spec.p[i]]
        if len(attempters) == 1:
            who = attempters[0]
            if spec.sigma == 1:
                if who not in sat:
                    s.buffers[who] -= 1
            else:
                s.hold, s.owner = spec.sigma - 1, who
        elif len(attempters) > 1 and spec.sigma > 1:
            s.hold, s.owner = spec.sigma - 1, -1
    for i, model in enumerate(spec.arrivals):
        if i in sat:
            continue
        arrived, s.env[i] = arrival_step(model, s.env[i], draw(2 + 3 * i), draw(3 + 3 * i), n)
        if arrived:
            s.buffers[i] += 1
    return s


# --- full runs --------------------------------------------------------------


@dataclass
class SimReport:
    spec: FiniteSystemSpec
    seed: int
    slots: int
    arrivals: np.ndarray
    departures: np.ndarray
    successes: np.ndarray
    backlog: np.ndarray
    idle_slots: int
    success_slots: int
    collision_slots: int
    checkpoints: np.ndarray
    trace: np.ndarray

    @property
    def total_backlog(self) -> np.ndarray:
        return self.trace.sum(axis=1)

    @property
    def empty_fraction(self) -> float:
        return self.idle_slots / self.slots

    @property
    def collision_fraction(self) -> float:
        return self.collision_slots / self.slots

    @property
    def throughput(self) -> np.ndarray:
        return self.successes / self.slots

    def conserved(self) -> bool:
        return bool(np.all(self.arrivals == self.departures + self.backlog))

    def write_trace(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["checkpoint_slot", "total_backlog"] + [f"backlog_{i}" for i in range(self.spec.n)])
            for t, row in zip(self.checkpoints, self.trace):
                w.writerow([int(t), int(row.sum())] + [int(x) for x in row])


def run_sim(spec: FiniteSystemSpec, slots: int, seed: int, checkpoint_interval: int | None = None,
            backend: str | None = None, path: str = "auto", initial_backlog=None) -> SimReport:
    """Simulate ``slots`` slots from empty buffers (or ``initial_backlog``).

    ``path`` picks the slot loop: ``"aloha"`` (sigma must be 1), ``"csma"``,
    or ``"auto"`` (the Aloha loop when sigma == 1).
    """
    if slots < 1:
        raise ValueError("slots must be >= 1")
    if checkpoint_interval is None:
        checkpoint_interval = max(1, slots // 1000)
    if checkpoint_interval < 1:
        raise ValueError("checkpoint_interval must be >= 1")
    if path == "auto":
        path = "aloha" if spec.sigma == 1 else "csma"
    if path == "aloha" and spec.sigma != 1:
        raise ValueError("the Aloha loop needs sigma == 1")
    kern = _kernel_module(backend)
    n = spec.n
    sat, n_env, arr_prob, trans_cum, has_trans, env_cum, has_resample = _encode(spec)
    B0 = np.zeros(n, dtype=np.int64) if initial_backlog is None else np.asarray(initial_backlog, dtype=np.int64)
    B0 = np.where(sat.astype(bool), 0, B0)
    arrivals = np.zeros(n, dtype=np.int64)
    departures = np.zeros(n, dtype=np.int64)
    successes = np.zeros(n, dtype=np.int64)
    backlog = np.zeros(n, dtype=np.int64)
    counters = np.zeros(3, dtype=np.int64)
    n_ckpt = slots // checkpoint_interval
    trace = np.zeros((n_ckpt, n), dtype=np.int64)
    seed = int(seed) & _rng.MASK
    p = np.asarray(spec.p, dtype=float)
    common = (n_env, arr_prob, trans_cum, has_trans, env_cum, has_resample, B0,
              arrivals, departures, successes, backlog, counters, trace)
    if path == "aloha":
        kern.run_aloha(seed, int(slots), int(checkpoint_interval), p, float(spec.b), sat, *common)
    else:
        kern.run_csma(seed, int(slots), int(checkpoint_interval), p, float(spec.b), int(spec.sigma), sat, *common)
    # an initial backlog counts as arrived before slot 1
    arrivals += B0
    return SimReport(
        spec=spec, seed=seed, slots=int(slots),
        arrivals=arrivals, departures=departures, successes=successes, backlog=backlog,
        idle_slots=int(counters[0]), success_slots=int(counters[1]), collision_slots=int(counters[2]),
        checkpoints=np.arange(1, n_ckpt + 1, dtype=np.int64) * checkpoint_interval,
        trace=trace,
    )


# --- drift-based stability verdicts ------------------------------------------

STABLE, UNSTABLE, INCONCLUSIVE = "Stable", "Unstable", "Inconclusive"


@dataclass(frozen=True)
class DriftReport:
    slope: float
    slope_se: float
    verdict: str
    max_backlog: float = 0.0
    cap: float = math.inf


def drift_test(checkpoints, backlog, total_lambda: float, theta: float = 0.02,
               n_se: float = 4.0, cap_factor: float = 50.0) -> DriftReport:
    """Classify a backlog trace by the least-squares slope of its second half.

    Unstable: slope > theta * total_lambda and more than ``n_se`` standard
    errors above zero. Stable: slope < theta * total_lambda / 2 and the
    second-half maximum stays below cap_factor * sqrt(slots) * total_lambda.
    Anything else is Inconclusive.
    """
    x = np.asarray(checkpoints, dtype=float)
    y = np.asarray(backlog, dtype=float)
    if x.shape != y.shape or x.size < 20:
        raise ValueError("drift test needs at least 20 checkpoints")
    half = x.size // 2
    xs, ys = x[half:], y[half:]
    xc = xs - xs.mean()
    sxx = float(xc @ xc)
    slope = float(xc @ (ys - ys.mean())) / sxx
    resid = ys - ys.mean() - slope * xc
    se = math.sqrt(float(resid @ resid) / max(xs.size - 2, 1) / sxx)
    cap = cap_factor * math.sqrt(x[-1]) * total_lambda
    peak = float(ys.max())
    thr = theta * total_lambda
    if slope > thr and slope > n_se * se:
        verdict = UNSTABLE
    elif slope < thr / 2 and peak < cap:
        verdict = STABLE
    else:
        verdict = INCONCLUSIVE
    return DriftReport(slope=slope, slope_se=se, verdict=verdict, max_backlog=peak, cap=cap)


def drift_verdict(report: SimReport, **kw) -> DriftReport:
    tracked = [i for i in range(report.spec.n) if i not in report.spec.saturated]
    lam = float(report.spec.rates[tracked].sum())
    return drift_test(report.checkpoints, report.trace[:, tracked].sum(axis=1), lam, **kw)


def run_replications(spec: FiniteSystemSpec, slots: int, seeds: Sequence[int],
                     checkpoint_interval: int | None = None, workers: int | None = None,
                     backend: str | None = None) -> list[SimReport]:
    """Independent runs, one per seed, returned in seed order."""
    def one(sd):
        return run_sim(spec, slots, sd, checkpoint_interval, backend=backend)

    workers = workers or min(len(seeds), os.cpu_count() or 1)
    if workers <= 1:
        return [one(sd) for sd in seeds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, seeds))


# --- empirical ray limit -----------------------------------------------------


@dataclass
class SStarEstimate:
    s_hat: float
    half_width: float
    inconclusive: bool
    seeds: list
    probes: list = field(default_factory=list)  # (s, verdict, [slopes])


class BracketError(ValueError):
    pass


def estimate_sstar_sim(alpha, template: FiniteSystemSpec, s_bracket: tuple[float, float],
                       slots: int = 10_000_000, replications: int = 3, seed: int = 0,
                       resolution: float | None = None, extra_replications: int = 4,
                       max_probes: int = 40, workers: int | None = None,
                       backend: str | None = None, check_bracket: bool = True) -> SStarEstimate:
    """Bisect on the total rate s where simulated queues stop being stable.

    Each probe sets lambda = s * alpha, runs ``replications`` replications
    (replication r uses seed + r) and takes the majority drift verdict.
    Inconclusive probes get up to ``extra_replications`` more runs and are
    finally decided by the sign of the mean slope. Bisection stops when the
    bracket half-width drops below ``resolution`` (default 1% of its midpoint).
    """
    alpha = np.asarray(alpha, dtype=float)
    alpha = alpha / alpha.sum()
    lo, hi = map(float, s_bracket)
    if not 0.0 <= lo < hi:
        raise BracketError(f"invalid bracket {s_bracket}")
    probes: list = []
    used_seeds: set = set()

    def decide(s):
        spec = template.with_rates(s * alpha)
        seeds = [seed + r for r in range(replications)]
        reps = run_replications(spec, slots, seeds, workers=workers, backend=backend)
        reports = [drift_verdict(r) for r in reps]
        nxt = seed + replications
        while True:
            votes = [d.verdict for d in reports]
            n_st, n_un = votes.count(STABLE), votes.count(UNSTABLE)
            decided = None
            if n_un > len(votes) / 2:
                decided = UNSTABLE
            elif n_st > len(votes) / 2:
                decided = STABLE
            if decided is not None or nxt >= seed + replications + extra_replications:
                break
            reports.append(drift_verdict(run_sim(spec, slots, nxt, backend=backend)))
            seeds.append(nxt)
            nxt += 1
        if decided is None:
            decided = UNSTABLE if np.mean([d.slope for d in reports]) > 0.0 else STABLE
        used_seeds.update(seeds)
        probes.append((s, decided, [d.slope for d in reports]))
        log.debug("probe s=%.5f -> %s %s", s, decided, [d.verdict for d in reports])
        return decided

    if check_bracket:
        if decide(lo) != STABLE:
            raise BracketError(f"lower bracket end s={lo} is not stable")
        if decide(hi) != UNSTABLE:
            raise BracketError(f"upper bracket end s={hi} is not unstable")
    count = 0
    while True:
        mid = 0.5 * (lo + hi)
        tol = resolution if resolution is not None else 0.01 * mid
        if 0.5 * (hi - lo) < tol:
            return SStarEstimate(mid, 0.5 * (hi - lo), False, sorted(used_seeds), probes)
        if count >= max_probes:
            log.warning("probe budget exhausted with bracket [%g, %g]", lo, hi)
            return SStarEstimate(mid, 0.5 * (hi - lo), True, sorted(used_seeds), probes)
        if decide(mid) == STABLE:
            lo = mid
        else:
            hi = mid
        count += 1
