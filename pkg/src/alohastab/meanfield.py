"""Mean-field limit of a large buffered Aloha population.

A class-v user sees Poisson-like arrivals of intensity lam_v (modulated by
an environment chain in the slow case) and is served at rate
b p_v exp(-gamma), where gamma = sum_v beta_v p_v (1 - Q_{v,0}) is the mean
attempt intensity of the population. The distribution Q over
(class, environment, buffer length) follows the Kolmogorov equations of these
M/M_tau/1 queues, truncated at K_max buffered packets.

Fast modulation collapses the environment: only the averaged rate lam_v
enters, and Q has a single environment slot per class.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

E_INV = math.exp(-1.0)
ROOT_TOL = 1e-12
CLASSIFY_TOL = 1e-9
DEFAULT_KMAX = 200
DEFAULT_DT = 0.01

GLOBALLY_STABLE = "GloballyStable"
UNSTABLE = "Unstable"
NOT_GLOBALLY_STABLE = "NotGloballyStable"
INDETERMINATE = "Indeterminate"


class SupercriticalLoadError(ValueError):
    pass


class TruncationError(RuntimeError):
    pass


def xi(x):
    """x exp(-x): aggregate success rate at attempt intensity x."""
    return x * np.exp(-x)


def gamma_roots(lam_total: float, b: float = 1.0) -> tuple[float, float]:
    """Both roots of gamma exp(-gamma) = lam_total / b, by bisection.

    The lower root lies in (0, 1), the upper in (1, inf). A load equal to
    exp(-1) (within 1e-12) gives the double root (1, 1).
    """
    x = lam_total / b
    if x <= 0.0:
        raise ValueError("load must be positive")
    if abs(x - E_INV) <= 1e-12:
        return 1.0, 1.0
    if x > E_INV:
        raise SupercriticalLoadError(f"supercritical load {x:.6g} > exp(-1)")

    def bisect(lo, hi, rising):
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if (xi(mid) < x) == rising:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-16 * max(1.0, hi):
                break
        return 0.5 * (lo + hi)

    lower = bisect(0.0, 1.0, rising=True)
    upper = bisect(1.0, max(50.0, -2.0 * math.log(x)), rising=False)
    return lower, upper


# --- model ------------------------------------------------------------------


def _stationary_from_generator(G: np.ndarray) -> np.ndarray:
    n = G.shape[0]
    A = np.vstack([G.T, np.ones(n)])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    pi = np.linalg.lstsq(A, rhs, rcond=None)[0]
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def _generator(rates: np.ndarray) -> np.ndarray:
    G = np.array(rates, dtype=float)
    np.fill_diagonal(G, 0.0)
    np.fill_diagonal(G, -G.sum(axis=1))
    return G


@dataclass(frozen=True)
class ClassSpec:
    """One user class.

    ``kernel`` is a one-step transition matrix for fast modulation, a jump
    rate matrix (transitions per scaled second) for slow modulation, or None
    for unmodulated arrivals. ``g`` are the per-state rate multipliers.
    """

    beta: float
    p: float
    lam: float
    kernel: tuple | None = None
    g: tuple | None = None


@dataclass(frozen=True)
class ClassModel:
    classes: tuple
    speed: str = "fast"
    b: float = 1.0
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        if not self.classes:
            raise ValueError("need at least one class")
        if self.speed not in ("fast", "slow"):
            raise ValueError("speed must be 'fast' or 'slow'")
        if not 0.0 < self.b <= 1.0:
            raise ValueError("slot availability b must lie in (0, 1]")
        if abs(sum(c.beta for c in self.classes) - 1.0) > 1e-9:
            raise ValueError("class fractions must sum to 1")
        for c in self.classes:
            if c.beta < 0 or c.p <= 0 or c.lam < 0:
                raise ValueError(f"invalid class parameters {c}")
        self._build()

    @classmethod
    def single(cls, p: float, lam: float, b: float = 1.0) -> "ClassModel":
        return cls((ClassSpec(1.0, p, lam),), b=b)

    def _build(self):
        V = len(self.classes)
        sizes = {len(c.g) for c in self.classes if c.g is not None}
        if len(sizes) > 1:
            raise ValueError("all modulated classes must share the environment space")
        A_full = sizes.pop() if sizes else 1
        pis, gs, gens = [], [], []
        for c in self.classes:
            if c.kernel is None:
                pi = np.full(A_full, 1.0 / A_full)
                g = np.ones(A_full)
                gen = np.zeros((A_full, A_full))
            else:
                K = np.asarray(c.kernel, dtype=float)
                g = np.asarray(c.g, dtype=float)
                if self.speed == "fast":
                    if not np.allclose(K.sum(axis=1), 1.0):
                        raise ValueError("fast kernels are one-step transition matrices")
                    gen = K - np.eye(len(g))
                else:
                    gen = _generator(K)
                pi = _stationary_from_generator(gen)
            if abs(float(pi @ g) - 1.0) > 1e-9:
                raise ValueError("modulation weights must satisfy sum_a pi(a) g_a = 1")
            pis.append(pi)
            gs.append(g)
            gens.append(gen)
        c = self._cache
        c["beta"] = np.array([k.beta for k in self.classes])
        c["p"] = np.array([k.p for k in self.classes])
        c["lam"] = np.array([k.lam for k in self.classes])
        if self.speed == "fast":
            c["pi"] = np.ones((V, 1))
            c["rates"] = c["lam"][:, None].copy()
            c["gen"] = np.zeros((V, 1, 1))
        else:
            c["pi"] = np.array(pis)
            c["rates"] = c["lam"][:, None] * np.array(gs)
            c["gen"] = np.array(gens)

    beta = property(lambda self: self._cache["beta"])
    p = property(lambda self: self._cache["p"])
    lam = property(lambda self: self._cache["lam"])
    pi = property(lambda self: self._cache["pi"])
    arrival_rates = property(lambda self: self._cache["rates"])
    env_generator = property(lambda self: self._cache["gen"])

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def n_env(self) -> int:
        return self.pi.shape[1]

    @property
    def zeta(self) -> float:
        return float(self.beta @ self.p)

    @property
    def lam_total(self) -> float:
        return float(self.beta @ self.lam)


# --- state ------------------------------------------------------------------


@dataclass
class MeanFieldState:
    Q: np.ndarray  # (V, A, K_max + 1)
    tail: np.ndarray  # (V,) mass pushed past K_max

    @property
    def k_max(self) -> int:
        return self.Q.shape[2] - 1

    @classmethod
    def at_level(cls, model: ClassModel, k: int = 0, k_max: int = DEFAULT_KMAX) -> "MeanFieldState":
        """Every user holds exactly k packets; environments stationary."""
        Q = np.zeros((model.n_classes, model.n_env, k_max + 1))
        Q[:, :, k] = model.pi
        return cls(Q, np.zeros(model.n_classes))

    @classmethod
    def empty(cls, model: ClassModel, k_max: int = DEFAULT_KMAX) -> "MeanFieldState":
        return cls.at_level(model, 0, k_max)

    def copy(self) -> "MeanFieldState":
        return MeanFieldState(self.Q.copy(), self.tail.copy())

    def empty_prob(self) -> np.ndarray:
        return self.Q[:, :, 0].sum(axis=1)

    def gamma(self, model: ClassModel) -> float:
        return float(model.beta @ (model.p * (1.0 - self.empty_prob())))

    def class_workload(self) -> np.ndarray:
        k = np.arange(self.Q.shape[2])
        return (self.Q.sum(axis=1) * k).sum(axis=1)

    def workload(self, model: ClassModel) -> float:
        return float(model.beta @ self.class_workload())

    def mass(self) -> np.ndarray:
        return self.Q.sum(axis=(1, 2)) + self.tail


def stochastically_leq(first: MeanFieldState, second: MeanFieldState, tol: float = 0.0) -> bool:
    """first <=_st second: per class and environment state, every cumulative
    mass sum_{l<=k} of ``first`` is at least that of ``second``."""
    c1 = np.cumsum(first.Q, axis=2)
    c2 = np.cumsum(second.Q, axis=2)
    return bool(np.all(c1 >= c2 - tol))


# --- dynamics ---------------------------------------------------------------


def _rhs(Q, model: ClassModel):
    gamma = float(model.beta @ (model.p * (1.0 - Q[:, :, 0].sum(axis=1))))
    mu = model.b * model.p * math.exp(-gamma)
    lam = model.arrival_rates[:, :, None]
    dQ = np.einsum("vba,vbk->vak", model.env_generator, Q) if model.n_env > 1 else np.zeros_like(Q)
    dQ -= lam * Q
    dQ[:, :, 1:] += lam * Q[:, :, :-1]
    served = mu[:, None, None] * Q[:, :, 1:]
    dQ[:, :, :-1] += served
    dQ[:, :, 1:] -= served
    dtail = (lam[:, :, 0] * Q[:, :, -1]).sum(axis=1)
    return dQ, dtail, gamma


def mf_derivative(state: MeanFieldState, model: ClassModel):
    """Time derivative of (Q, tail) under the mean-field equations."""
    dQ, dtail, _ = _rhs(state.Q, model)
    return dQ, dtail


@dataclass
class Trajectory:
    model: ClassModel
    taus: np.ndarray
    gamma: np.ndarray
    W: np.ndarray
    Wv: np.ndarray
    q0: np.ndarray  # per-class empty probability
    final: MeanFieldState
    snapshots: list
    max_mass_drift: float
    max_workload_residual: float
    max_tail: float

    def write_csv(self, path) -> None:
        V = self.q0.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tau", "gamma", "W"] + [f"Q_{v}_0" for v in range(V)])
            for i, t in enumerate(self.taus):
                w.writerow([repr(float(t)), repr(float(self.gamma[i])), repr(float(self.W[i]))]
                           + [repr(float(x)) for x in self.q0[i]])


def mf_integrate(Q0: MeanFieldState, model: ClassModel, tau_end: float, dt: float = DEFAULT_DT,
                 sample_every: int = 1, check_every: int | None = None,
                 keep_states: bool = False, tail_limit: float = 1e-4,
                 mass_tol: float = 1e-7) -> Trajectory:
    """Classical fixed-step RK4 integration of the mean-field equations.

    Scalars (gamma, workloads, empty probabilities) are recorded every
    ``sample_every`` steps. Every ``check_every`` steps the run verifies mass
    conservation (including the truncation tail) and the aggregate workload
    balance dW/dtau = lam - b gamma exp(-gamma); a mass breach or tail mass
    above ``tail_limit`` raises TruncationError.
    """
    if dt <= 0 or tau_end <= 0:
        raise ValueError("dt and tau_end must be positive")
    steps = int(round(tau_end / dt))
    check_every = check_every or max(1, int(round(1.0 / dt)))
    Q = Q0.Q.astype(float, copy=True)
    tail = Q0.tail.astype(float, copy=True)
    kgrid = np.arange(Q.shape[2])
    mass0 = Q.sum(axis=(1, 2)) + tail
    taus, gam, W, Wv, q0, snaps = [], [], [], [], [], []
    worst_mass = worst_res = 0.0

    def record(step, Qc, g):
        per_class = (Qc.sum(axis=1) * kgrid).sum(axis=1)
        taus.append(step * dt)
        gam.append(g)
        Wv.append(per_class)
        W.append(float(model.beta @ per_class))
        q0.append(Qc[:, :, 0].sum(axis=1))
        if keep_states:
            snaps.append(Qc.copy())

    def check(Qc, tc, dQ, g):
        nonlocal worst_mass, worst_res
        drift = float(np.max(np.abs(Qc.sum(axis=(1, 2)) + tc - mass0)))
        worst_mass = max(worst_mass, drift)
        if drift > mass_tol:
            raise TruncationError(f"mass drift {drift:.3g}; use a smaller dt")
        if float(tc.max()) > tail_limit:
            raise TruncationError(f"tail mass {float(tc.max()):.3g} beyond K_max; raise K_max")
        dW = float(model.beta @ (dQ.sum(axis=1) * kgrid).sum(axis=1))
        res = abs(dW - (model.lam_total - model.b * g * math.exp(-g)))
        worst_res = max(worst_res, res)

    h2, h6 = dt / 2.0, dt / 6.0
    for step in range(steps + 1):
        k1, t1, g = _rhs(Q, model)
        if step % sample_every == 0 or step == steps:
            record(step, Q, g)
        if step % check_every == 0 or step == steps:
            check(Q, tail, k1, g)
        if step == steps:
            break
        k2, t2, _ = _rhs(Q + h2 * k1, model)
        k3, t3, _ = _rhs(Q + h2 * k2, model)
        k4, t4, _ = _rhs(Q + dt * k3, model)
        Q = Q + h6 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        tail = tail + h6 * (t1 + 2.0 * t2 + 2.0 * t3 + t4)
    return Trajectory(
        model=model, taus=np.array(taus), gamma=np.array(gam), W=np.array(W),
        Wv=np.array(Wv), q0=np.array(q0), final=MeanFieldState(Q, tail), snapshots=snaps,
        max_mass_drift=worst_mass, max_workload_residual=worst_res, max_tail=float(tail.max()),
    )


# --- stationary queues and fixed points --------------------------------------


def modulated_mm1_stationary(kernel, g, lam_v: float, c: float, k_max: int = DEFAULT_KMAX) -> np.ndarray:
    """Stationary law over (environment, queue length) of an M^K/M/1 queue.

    Arrivals at rate lam_v * g[a] in environment a, environment jumps at the
    rates in ``kernel`` (None: a single state), service at rate c. The
    truncated chain reflects at k_max; the global-balance system is solved
    with one equation replaced by normalization. Returns shape (A, k_max + 1).
    """
    if c <= 0 or lam_v / c >= 1.0:
        raise ValueError(f"load {lam_v / c if c > 0 else math.inf:.6g} >= 1: no stationary law")
    if kernel is None:
        gen = np.zeros((1, 1))
        g = np.ones(1)
    else:
        gen = _generator(np.asarray(kernel, dtype=float))
        g = np.asarray(g, dtype=float)
    A = len(g)
    K1 = k_max + 1
    n = A * K1
    idx = lambda a, k: a * K1 + k  # noqa: E731
    rows, cols, vals = [], [], []

    def add(i, j, r):
        rows.append(i)
        cols.append(j)
        vals.append(r)

    for a in range(A):
        birth = lam_v * g[a]
        for k in range(K1):
            i = idx(a, k)
            out = 0.0
            if k < k_max and birth > 0:
                add(i, idx(a, k + 1), birth)
                out += birth
            if k > 0:
                add(i, idx(a, k - 1), c)
                out += c
            for b in range(A):
                if b != a and gen[a, b] > 0:
                    add(i, idx(b, k), gen[a, b])
                    out += gen[a, b]
            add(i, i, -out)
    Gt = sparse.csr_matrix((vals, (cols, rows)), shape=(n, n)).tolil()
    Gt[0, :] = np.ones(n)
    rhs = np.zeros(n)
    rhs[0] = 1.0
    pi = spsolve(Gt.tocsc(), rhs)
    pi = np.clip(pi, 0.0, None)
    return (pi / pi.sum()).reshape(A, K1)


@dataclass
class FixedPoint:
    gamma: float
    state: MeanFieldState
    kind: str
    consistency: float  # |gamma - gamma(state)|
    residual: float  # sup-norm of the derivative at state


def _stationary_state(model: ClassModel, gamma: float, k_max: int) -> MeanFieldState:
    V = model.n_classes
    Q = np.zeros((V, model.n_env, k_max + 1))
    mu = model.b * model.p * math.exp(-gamma)
    for v, cls in enumerate(model.classes):
        if model.speed == "fast" or cls.kernel is None:
            dist = modulated_mm1_stationary(None, None, cls.lam, mu[v], k_max)
            Q[v] = model.pi[v][:, None] * dist[0][None, :]
        else:
            Q[v] = modulated_mm1_stationary(cls.kernel, cls.g, cls.lam, mu[v], k_max)
    return MeanFieldState(Q, np.zeros(V))


def fixed_points(model: ClassModel, k_max: int = DEFAULT_KMAX) -> list[FixedPoint]:
    """Equilibria of the mean-field dynamics.

    The lower point (gamma at the smaller root) exists when every class is
    stable at capacity b p_v exp(-gamma_lower); the upper point likewise at
    the larger root.
    """
    lam = model.lam_total
    if lam == 0.0:
        st = MeanFieldState.empty(model, k_max)
        return [FixedPoint(0.0, st, "lower", 0.0, float(np.max(np.abs(mf_derivative(st, model)[0]))))]
    if lam / model.b >= E_INV:
        return []
    out = []
    for gamma, kind in zip(gamma_roots(lam, model.b), ("lower", "upper")):
        cap = model.b * model.p * math.exp(-gamma)
        if np.all(model.lam < cap):
            st = _stationary_state(model, gamma, k_max)
            dQ, _ = mf_derivative(st, model)
            out.append(FixedPoint(gamma, st, kind, abs(st.gamma(model) - gamma), float(np.max(np.abs(dQ)))))
    return out


# --- stability classification -----------------------------------------------


@dataclass(frozen=True)
class StabilityVerdict:
    verdict: str
    gamma_lower: float | None
    gamma_upper: float | None
    zeta: float
    margins: tuple  # b p_v exp(-gamma_lower) - lam_v per class


def classify_stability(model: ClassModel, tol: float = CLASSIFY_TOL) -> StabilityVerdict:
    """Global stability of the mean-field dynamics from the two roots.

    Unstable when some class is overloaded at the lower root's capacity or
    when the total attempt intensity cannot reach the lower root;
    NotGloballyStable when it exceeds the upper root (a second equilibrium
    appears); GloballyStable when neither happens with strict margins.
    Comparisons within ``tol`` of equality are Indeterminate.
    """
    zeta = model.zeta
    lam = model.lam_total
    if lam == 0.0:
        return StabilityVerdict(GLOBALLY_STABLE, 0.0, math.inf, zeta, tuple(model.b * model.p))
    x = lam / model.b
    if abs(x - E_INV) <= tol:
        return StabilityVerdict(INDETERMINATE, 1.0, 1.0, zeta, ())
    if x > E_INV:
        return StabilityVerdict(UNSTABLE, None, None, zeta, ())
    lo, hi = gamma_roots(lam, model.b)
    margins = model.b * model.p * math.exp(-lo) - model.lam
    m = tuple(float(v) for v in margins)
    if np.any(margins < -tol) or zeta < lo - tol:
        return StabilityVerdict(UNSTABLE, lo, hi, zeta, m)
    if zeta > hi + tol:
        return StabilityVerdict(NOT_GLOBALLY_STABLE, lo, hi, zeta, m)
    if np.all(margins > tol) and zeta < hi - tol:
        return StabilityVerdict(GLOBALLY_STABLE, lo, hi, zeta, m)
    return StabilityVerdict(INDETERMINATE, lo, hi, zeta, m)
