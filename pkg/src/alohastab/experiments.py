"""Scripted sweeps: three-user and N-user ray limits, finite-N convergence of
the class-level region, and the two-equilibria mean-field demonstration."""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import meanfield as mf
from .region import shat_star
from .sim import Bernoulli, FiniteSystemSpec, HyperGeometricMixture, estimate_sstar_sim

AGREE_TOL = 1e-10
EX2_BREAK = 47.0 / 7.0
DEFAULT_SLOTS = 10_000_000
DEFAULT_REPLICATIONS = 3
HG_A = 0.2

log = logging.getLogger(__name__)


class PreconditionError(ValueError):
    pass


# --- closed forms -------------------------------------------------------------


def three_user_direction(x: float) -> np.ndarray:
    """lambda_1 = l, lambda_2 = l (1 + 1/x) / 2, lambda_3 = l / x, normalized."""
    a = np.array([1.0, (1.0 + 1.0 / x) / 2.0, 1.0 / x])
    return a / a.sum()


def example1_formula(x: float) -> float:
    return 4.0 * x * (x + 1.0) / ((2.0 * x + 1.0) * (5.0 * x + 1.0))


def example2_formula(x: float, branch: str | None = None) -> float:
    """Reference piecewise expression for example 2, kept verbatim.

    The ``low`` branch does not match the ray limit along this direction
    (which is 24.3 (x+1) / ((x+9)(x+19)) with user 3 saturated) and is not
    continuous with the ``high`` branch at 47/7.  Sweeps flag the mismatch in
    ``closed_form_agrees`` rather than failing.
    """
    if branch is None:
        branch = "low" if x < EX2_BREAK else "high"
    if branch == "low":
        return 7.2 * x * (x + 1.0) / ((7.0 * x + 3.0) * (2.0 * x + 3.0))
    return 44.1 * (x + 1.0) ** 2 / ((13.0 * x + 7.0) * (7.0 * x + 13.0))


def linear_direction(n: int) -> np.ndarray:
    """alpha_i proportional to N + 1 - i."""
    a = np.arange(n, 0, -1, dtype=float)
    return a / a.sum()


def example3_formula(alpha) -> float:
    alpha = np.asarray(alpha, dtype=float)
    n = alpha.size
    a1 = alpha[0]
    return float(np.prod(1.0 - alpha[1:] / (alpha[1:] + (n - 1) * a1)) / (n * a1))


# --- sweeps ---------------------------------------------------------------------


@dataclass
class SweepRow:
    param: float
    s_analytic: float
    s_closed_form: float
    i_star: int
    closed_form_agrees: bool = True
    arrival_model: str = ""
    s_simulated: float | None = None
    half_width: float | None = None
    inconclusive: bool | None = None
    seeds: list = field(default_factory=list)


@dataclass
class SweepResult:
    name: str
    rows: list
    config: dict

    def write_csv(self, path) -> None:
        cols = ["param", "s_analytic", "s_closed_form", "closed_form_agrees", "i_star", "arrival_model",
                "s_simulated", "half_width", "inconclusive"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in self.rows:
                w.writerow([_fmt(getattr(r, c)) for c in cols])

    def manifest(self) -> dict:
        return {"sweep": self.name, "config": self.config,
                "seeds": {f"{r.param}:{r.arrival_model}": r.seeds for r in self.rows if r.seeds}}


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return "" if v is None else v


def _arrival(tag: str, lam: float = 0.0):
    if tag == "bernoulli":
        return Bernoulli(lam)
    if tag == "hypergeometric":
        return HyperGeometricMixture(lam, HG_A)
    raise ValueError(f"unknown arrival model {tag!r}")


def _simulate_point(alpha, p, tag, s_ref, sim):
    tmpl = FiniteSystemSpec(tuple(p), tuple(_arrival(tag) for _ in p))
    lo, hi = sim.get("bracket", (0.7, 1.3))
    est = estimate_sstar_sim(
        alpha, tmpl, (lo * s_ref, hi * s_ref),
        slots=sim.get("slots", DEFAULT_SLOTS),
        replications=sim.get("replications", DEFAULT_REPLICATIONS),
        seed=sim.get("seed", 0), backend=sim.get("backend"),
        workers=sim.get("replication_workers", 1),
    )
    return est


def _sweep(name, params, build, closed, simulate, models, sim, workers, extra_check=None):
    """build(param) -> (alpha, p); closed(param, alpha) -> closed-form s."""
    sim = dict(sim or {})
    rows = []
    jobs = []
    for x in params:
        alpha, p = build(x)
        res = shat_star(alpha, p)
        s_cf = closed(x, alpha)
        if abs(res.s_star - s_cf) > AGREE_TOL:
            log.warning("%s: closed form %r and ray solver %r disagree at %r", name, s_cf, res.s_star, x)
        if extra_check:
            extra_check(x, res)
        for tag in (models if simulate else ("",)):
            row = SweepRow(float(x), float(res.s_star), float(s_cf), res.i_star,
                           bool(abs(res.s_star - s_cf) <= AGREE_TOL), tag)
            rows.append(row)
            if simulate:
                jobs.append((row, alpha, p))
    if jobs:
        def run(job):
            row, alpha, p = job
            return _simulate_point(alpha, p, row.arrival_model, row.s_analytic, sim)

        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            for (row, _, _), est in zip(jobs, pool.map(run, jobs)):
                row.s_simulated = est.s_hat
                row.half_width = est.half_width
                row.inconclusive = est.inconclusive
                row.seeds = est.seeds
    config = {"params": [float(x) for x in params], "simulate": simulate, "models": list(models),
              "simulation": {k: v for k, v in sim.items()}, "agree_tol": AGREE_TOL,
              "hg_a": HG_A}
    return SweepResult(name, rows, config)


def example1(x_values, simulate: bool = False, models=("bernoulli", "hypergeometric"),
             sim: dict | None = None, workers: int = 1) -> SweepResult:
    """Three users with p = 1/3, traffic shares 1 : (1 + 1/x)/2 : 1/x."""
    for x in x_values:
        if x < 1:
            raise ValueError("example 1 needs x >= 1")
    return _sweep("example1", list(x_values), lambda x: (three_user_direction(x), [1 / 3] * 3),
                  lambda x, a: example1_formula(x), simulate, models, sim, workers)


def _example2_switch(x, res):
    # users are 0-based: queue 3 -> 2, queue 2 -> 1
    if abs(x - EX2_BREAK) < 1e-9:
        ok = res.i_star in (1, 2)
    else:
        ok = res.i_star == (2 if x < EX2_BREAK else 1)
    if not ok:
        raise RuntimeError(f"example2: unexpected saturated user {res.i_star} at x={x}")


def example2(x_values, simulate: bool = False, models=("bernoulli", "hypergeometric"),
             sim: dict | None = None, workers: int = 1) -> SweepResult:
    """Three users with p = (0.6, 0.3, 0.1) and the example-1 traffic shares."""
    for x in x_values:
        if not 0.1 <= x <= 10:
            raise ValueError("example 2 covers x in [0.1, 10]")
    return _sweep("example2", list(x_values), lambda x: (three_user_direction(x), [0.6, 0.3, 0.1]),
                  lambda x, a: example2_formula(x), simulate, models, sim, workers,
                  extra_check=_example2_switch)


def example3(n_values, simulate: bool = False, models=("bernoulli",),
             sim: dict | None = None, workers: int = 1) -> SweepResult:
    """N users with p = 1/N and linearly decreasing traffic shares."""
    for n in n_values:
        if n < 2:
            raise ValueError("example 3 needs N >= 2")
    return _sweep("example3", [int(n) for n in n_values],
                  lambda n: (linear_direction(n), [1.0 / n] * n),
                  lambda n, a: example3_formula(a), simulate, models, sim, workers)


# --- finite-N region versus its mean-field limit --------------------------------


def class_ray_limit_finite(model: mf.ClassModel, n: int, alpha=None) -> float:
    """Ray limit of the finite-N class region with per-user attempt p_v / N.

    lambda_v = b p_v rho_v / (1 - rho_v p_v / N) * prod_u (1 - rho_u p_u / N)^(n_u)
    along lambda = s * alpha; n_u = round(beta_u N) users per class.
    """
    alpha = _class_direction(model, alpha)
    counts = np.rint(model.beta * n)
    x_sat = model.p / n
    live = alpha > 0
    h = np.where(live, alpha * (1.0 - x_sat) / model.p, -np.inf)
    v = int(np.argmax(h))
    ratio = x_sat[v] / (1.0 - x_sat[v]) / alpha[v]
    odds = alpha * ratio  # x_u / (1 - x_u)
    x = odds / (1.0 + odds)
    x[v] = x_sat[v]
    lam_v = model.b * n * x[v] / (1.0 - x[v]) * float(np.prod((1.0 - x) ** counts))
    return lam_v / alpha[v]


def class_ray_limit_expanded(model: mf.ClassModel, n: int, alpha=None) -> float:
    """Same limit via the generic N-user ray solver on the replicated users."""
    alpha = _class_direction(model, alpha)
    counts = np.rint(model.beta * n).astype(int)
    p_users = np.repeat(model.p / n, counts)
    a_users = np.repeat(alpha, counts)
    total = shat_star(a_users, p_users).s_star
    return model.b * n * total / float(counts @ alpha)


def class_ray_limit_meanfield(model: mf.ClassModel, alpha=None) -> float:
    """Ray limit of lambda_v = b p_v rho_v exp(-sum_u beta_u rho_u p_u)."""
    alpha = _class_direction(model, alpha)
    h = np.where(alpha > 0, alpha / model.p, -np.inf)
    v = int(np.argmax(h))
    rho = (alpha / model.p) / h[v]
    return model.b * model.p[v] * math.exp(-float(model.beta @ (rho * model.p))) / alpha[v]


def _class_direction(model, alpha):
    if alpha is None:
        alpha = model.lam if model.lam.sum() > 0 else np.ones(model.n_classes)
    alpha = np.asarray(alpha, dtype=float)
    return alpha / alpha.sum()


@dataclass
class ConvergenceRow:
    n: int
    s_n: float
    s_n_expanded: float
    s_inf: float
    scaled_gap: float


def finite_region_check(model: mf.ClassModel, n_values, alpha=None, expanded_max: int = 2000):
    """Table of finite-N ray limits against the mean-field limit.

    Returns (rows, bound) where bound = max_N |s_N - s_inf| * N over the sweep.
    The replicated-user solver is evaluated up to ``expanded_max`` users.
    """
    s_inf = class_ray_limit_meanfield(model, alpha)
    rows = []
    for n in n_values:
        s_n = class_ray_limit_finite(model, int(n), alpha)
        s_e = class_ray_limit_expanded(model, int(n), alpha) if n <= expanded_max else math.nan
        if not math.isnan(s_e) and abs(s_e - s_n) > AGREE_TOL * max(1.0, s_n):
            raise RuntimeError(f"finite-N limits disagree at N={n}: {s_n!r} vs {s_e!r}")
        rows.append(ConvergenceRow(int(n), float(s_n), float(s_e), float(s_inf), float((s_n - s_inf) * n)))
    bound = max(abs(r.scaled_gap) for r in rows)
    return rows, bound


def write_convergence_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["N", "s_N", "s_N_expanded", "s_inf", "scaled_gap"])
        for r in rows:
            w.writerow([r.n] + [repr(float(v)) for v in (r.s_n, r.s_n_expanded, r.s_inf, r.scaled_gap)])


# --- two equilibria ---------------------------------------------------------------


@dataclass
class BistabilityReport:
    verdict: str
    gamma_lower: float
    gamma_upper: float
    limit_from_empty: float
    limit_from_upper: float
    gap: float
    tau_end: float


def bistability_demo(model: mf.ClassModel, tau_end: float = 100.0, dt: float = mf.DEFAULT_DT,
                     k_max: int = mf.DEFAULT_KMAX) -> BistabilityReport:
    """Integrate from the empty state and from the upper equilibrium."""
    v = mf.classify_stability(model)
    if v.verdict != mf.NOT_GLOBALLY_STABLE:
        raise PreconditionError(f"model is {v.verdict}, not NotGloballyStable")
    fps = {f.kind: f for f in mf.fixed_points(model, k_max)}
    if set(fps) != {"lower", "upper"}:
        raise PreconditionError("the model does not have both equilibria")
    from_empty = mf.mf_integrate(mf.MeanFieldState.empty(model, k_max), model, tau_end, dt, sample_every=100)
    from_upper = mf.mf_integrate(fps["upper"].state, model, tau_end, dt, sample_every=100)
    a, b = float(from_empty.gamma[-1]), float(from_upper.gamma[-1])
    return BistabilityReport(v.verdict, v.gamma_lower, v.gamma_upper, a, b, abs(b - a), tau_end)


def write_manifest(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if hasattr(o, "__dataclass_fields__"):
        return asdict(o)
    if isinstance(o, (set, frozenset)):
        return sorted(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")
