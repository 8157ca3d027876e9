"""Stability and capacity regions of buffered slotted Aloha and CSMA.

Everything here is a pure function of its arguments. Vectors are accepted as
any sequence of floats and returned as numpy arrays.

Conventions
-----------
``p``      per-slot attempt probabilities, each in (0, 1)
``alpha``  traffic direction, nonnegative, normalized to unit L1 norm
``rho``    occupancy (probability a buffer is non-empty), each in [0, 1]
``s``      total arrival rate along a direction, so that ``lambda = s * alpha``
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

ROOT_TOL = 1e-10
TIE_RTOL = 1e-12
# Relative slack applied to strict boundary comparisons so that a point
# computed *on* the boundary is not reported inside through rounding.
BOUNDARY_RTOL = 1e-12


class NotKHomogeneousError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class BoundaryPoint:
    rho: np.ndarray
    j: int
    lam: np.ndarray


@dataclass(frozen=True)
class SStar:
    s_star: float
    i_star: int
    rho_star: np.ndarray


def _vec(x, name: str) -> np.ndarray:
    a = np.atleast_1d(np.asarray(x, dtype=float))
    if a.ndim != 1 or a.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-d vector")
    return a


def _attempts(p) -> np.ndarray:
    p = _vec(p, "p")
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise ValueError("attempt probabilities must lie in (0, 1)")
    return p


def _direction(alpha, n: int) -> np.ndarray:
    alpha = _vec(alpha, "alpha")
    if alpha.size != n:
        raise ValueError(f"alpha has {alpha.size} entries, expected {n}")
    if np.any(alpha < 0.0):
        raise ValueError("alpha entries must be nonnegative")
    total = alpha.sum()
    if total <= 0.0:
        raise ValueError("all-zero traffic direction")
    return alpha / total


def _prod_except(x: np.ndarray) -> np.ndarray:
    """prod_{k != i} x_k for every i, without dividing by x_i."""
    n = x.size
    left = np.ones(n)
    right = np.ones(n)
    left[1:] = np.cumprod(x[:-1])
    right[:-1] = np.cumprod(x[::-1][:-1])[::-1]
    return left * right


def saturated_throughput(rho, p, b: float = 1.0) -> np.ndarray:
    """Per-user success rate when user k is non-empty with probability rho_k.

    lambda_i = b * rho_i * p_i * prod_{k != i} (1 - rho_k p_k)
    """
    rho = _vec(rho, "rho")
    p = _vec(p, "p")
    if rho.size != p.size:
        raise ValueError(f"dimension mismatch: rho has {rho.size}, p has {p.size}")
    return b * rho * p * _prod_except(1.0 - rho * p)


def boundary_point(rho, j: int, p, b: float = 1.0) -> BoundaryPoint:
    rho = _vec(rho, "rho").copy()
    rho[j] = 1.0
    return BoundaryPoint(rho=rho, j=j, lam=saturated_throughput(rho, p, b))


def shat_star(alpha, p) -> SStar:
    """Largest total rate s with s * alpha in the closure of the approximate region.

    The saturated user is the one maximizing alpha_i (1 - p_i) / p_i (lowest
    index on ties); every other user's occupancy follows from equating the
    ratios alpha_i (1 - rho_i p_i) / (rho_i p_i).
    """
    p = _attempts(p)
    alpha = _direction(alpha, p.size)
    h = np.where(alpha > 0.0, alpha * (1.0 - p) / p, -np.inf)
    i_star = int(np.argmax(h))
    c = h[i_star]
    # rho_i p_i = alpha_i / (c + alpha_i); zero-share users stay empty
    rho = alpha / (p * (c + alpha))
    rho[i_star] = 1.0
    factors = c * p[i_star] / (alpha * p[i_star] + c * p[i_star])
    factors[i_star] = 1.0
    s = p[i_star] / alpha[i_star] * float(np.prod(factors))
    return SStar(s_star=s, i_star=i_star, rho_star=rho)


def _ray_limits(A: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Ray limit for every row of A (rows already normalized to unit sum)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        h = np.where(A > 0.0, A * (1.0 - p) / p, -np.inf)
        i_star = np.argmax(h, axis=1)
        rows = np.arange(A.shape[0])
        c = h[rows, i_star][:, None]
        ps = p[i_star][:, None]
        factors = c * ps / (A * ps + c * ps)
        factors[rows, i_star] = 1.0
        return ps[:, 0] / A[rows, i_star] * np.prod(factors, axis=1)


def _rate_rows(lam, n: int) -> tuple[np.ndarray, bool]:
    a = np.asarray(lam, dtype=float)
    single = a.ndim <= 1
    a = np.atleast_2d(a)
    if a.ndim != 2 or a.shape[1] != n:
        raise ValueError(f"dimension mismatch: lambda has {a.shape[-1]} entries per point, p has {n}")
    if np.any(a < 0.0):
        raise ValueError("arrival rates must be nonnegative")
    return a, single


def approx_region_contains(lam, p):
    """Membership in the approximate region, decided along the ray through lam.

    The zero vector is inside. ``lam`` may also be an (M, N) array of points,
    in which case a boolean array of length M is returned.
    """
    p = _attempts(p)
    a, single = _rate_rows(lam, p.size)
    s = a.sum(axis=1)
    out = s == 0.0
    nz = ~out
    if nz.any():
        limits = _ray_limits(a[nz] / s[nz, None], p)
        out[nz] = s[nz] < limits * (1.0 - BOUNDARY_RTOL)
    return bool(out[0]) if single else out


def exact_region2_contains(lam, p):
    """Exact two-user stability region (Tsybakov-Mikhailov / Rao-Ephremides).

    Accepts one point or an (M, 2) array like approx_region_contains.
    """
    p = _vec(p, "p")
    if p.size != 2:
        raise ValueError("the exact region is only known for two users")
    a, single = _rate_rows(lam, 2)
    l1, l2 = a[:, 0], a[:, 1]
    p1, p2 = p
    first = (l1 < p1 * (1.0 - p2)) & (l2 < p2 * (1.0 - l1 / (1.0 - p2)))
    second = (l2 < p2 * (1.0 - p1)) & (l1 < p1 * (1.0 - l2 / (1.0 - p1)))
    out = first | second
    return bool(out[0]) if single else out


def k_homogeneous_sstar(alpha, p) -> float:
    """Closed-form ray limit along a k-homogeneous direction.

    Users are ordered by decreasing alpha_i (1 - p_i) / p_i. The first k share
    the maximal value, at most one further user carries traffic, and

        s* = prod_{i<=k} (1 - p_i) / ((1 - p_1) / p_1 * alpha_1 + alpha_{k+1})

    Raises NotKHomogeneousError when the direction does not have that shape.
    """
    p = _attempts(p)
    alpha = _direction(alpha, p.size)
    h = alpha * (1.0 - p) / p
    order = np.argsort(-h, kind="stable")
    hs, ps, als = h[order], p[order], alpha[order]
    top = hs[0]
    tied = np.abs(hs - top) <= TIE_RTOL * top
    k = int(np.argmin(tied)) if not tied.all() else p.size
    if not tied[:k].all() or tied[k:].any():
        raise NotKHomogeneousError("not a k-homogeneous direction")
    if np.any(als[k + 1:] > 0.0):
        raise NotKHomogeneousError(
            "not a k-homogeneous direction: more than one unsaturated user carries traffic"
        )
    a_next = als[k] if k < p.size else 0.0
    return float(np.prod(1.0 - ps[:k]) / ((1.0 - ps[0]) / ps[0] * als[0] + a_next))


def capacity_forward(p) -> np.ndarray:
    """Rates reached when every user is saturated: p_i prod_{j != i} (1 - p_j)."""
    p = _vec(p, "p")
    return saturated_throughput(np.ones_like(p), p)


def capacity_region_solve(lam, tol: float = ROOT_TOL, max_iter: int = 10_000):
    """Attempt vector p in (0,1)^N whose all-saturated throughput equals lam.

    Fixed-point iteration p_i <- lam_i / prod_{j != i} (1 - p_j) started from
    p = lam. The map is increasing in p, so the iterates climb monotonically
    to the smallest solution when one exists. Returns None when the iterates
    leave (0, 1) or fail to settle within max_iter.
    """
    lam = _vec(lam, "lambda")
    if np.any(lam <= 0.0):
        raise ValueError("capacity solve needs strictly positive rates")
    p = lam.copy()
    damp = 1.0
    prev_step = None
    for it in range(max_iter):
        if np.any(p >= 1.0):
            log.info("capacity solve: iterate left (0,1) at step %d, rates infeasible", it)
            return None
        new = lam / _prod_except(1.0 - p)
        step = new - p
        if prev_step is not None and damp == 1.0 and np.any(step * prev_step < 0.0):
            damp = 0.5
        p = p + damp * step
        prev_step = step
        if np.all(p < 1.0) and np.max(np.abs(capacity_forward(p) - lam)) < tol:
            return p
    log.warning(
        "capacity solve did not converge in %d iterations (residual %.3g)",
        max_iter,
        float(np.max(np.abs(capacity_forward(np.minimum(p, 1 - 1e-15)) - lam))),
    )
    return None


# --- CSMA -------------------------------------------------------------------


def _check_sigma(sigma) -> int:
    if int(sigma) != sigma or sigma < 1:
        raise ValueError("sigma must be an integer >= 1")
    return int(sigma)


def csma_saturation_throughput(rho, p, sigma: int = 1) -> np.ndarray:
    """Packets per slot for CSMA users whose transmissions hold sigma slots.

    gamma_i = P_i / (sigma (sum_j P_j + C) + E) with P_i the lone-attempt
    probability of user i, E the idle probability and C the collision
    probability of a contention slot.
    """
    sigma = _check_sigma(sigma)
    P = saturated_throughput(rho, p)
    rho = _vec(rho, "rho")
    p = _vec(p, "p")
    E = float(np.prod(1.0 - rho * p))
    busy = float(P.sum())
    C = 1.0 - E - busy
    assert C >= -1e-12, f"negative collision probability {C}"
    C = max(C, 0.0)
    return P / (sigma * (busy + C) + E)


def _csma_occupancy(s, alpha, p, sigma, j, tol, max_iter):
    """Solve rho_i = s alpha_i / (gamma_i(rho) / rho_i) for i != j, rho_j = 1.

    Returns None when the iteration runs away (some rho_i exceeds 1), which
    signals that s is beyond this boundary sheet. The map is increasing in
    rho and the iterates start at 0, so they rise monotonically towards the
    smallest solution; once one coordinate passes 1 that solution lies
    outside the cube.
    """
    n = p.size
    rho = np.zeros(n)
    rho[j] = 1.0
    for _ in range(max_iter):
        x = rho * p
        P = p * _prod_except(1.0 - x)  # P_i / rho_i
        E = float(np.prod(1.0 - x))
        # sigma (sum_j P_j + C) + E with sum_j P_j + C = 1 - E
        denom = sigma * (1.0 - E) + E
        new = s * alpha * denom / P
        new[j] = 1.0
        if np.any(new * p >= 1.0):
            return None
        upd = rho + 0.5 * (new - rho)
        if np.any(upd > 1.0 + 1e-12):
            return None
        if np.max(np.abs(upd - rho)) < tol:
            return upd
        rho = upd
    raise ConvergenceError(f"occupancy iteration stalled at s={s:.6g}, sheet j={j}")


def csma_shat_star(alpha, p, sigma: int = 1, tol: float = ROOT_TOL, max_iter: int = 100_000) -> float:
    """Largest total rate s such that s * alpha lies on a CSMA boundary sheet.

    For every candidate saturated user j the occupancies of the others are
    found by damped fixed-point iteration at a trial s, and s is bisected on
    the saturated user's balance gamma_j(rho(s)) = s alpha_j. Sheets whose
    solution needs some rho_i > 1 are discarded.
    """
    sigma = _check_sigma(sigma)
    p = _attempts(p)
    alpha = _direction(alpha, p.size)
    inner_tol = tol * 1e-3
    best = None
    for j in np.flatnonzero(alpha > 0.0):
        def balance(s):
            rho = _csma_occupancy(s, alpha, p, sigma, j, inner_tol, max_iter)
            if rho is None:
                return -1.0, None
            return csma_saturation_throughput(rho, p, sigma)[j] - s * alpha[j], rho

        lo = 0.0
        # gamma_j <= 1 / sigma, so the balance is negative here
        hi = 1.0 / (alpha[j] * sigma)
        if balance(hi)[0] > 0.0:
            raise ConvergenceError(f"bracket [0, {hi}] does not contain the sheet-{j} crossing")
        while hi - lo > tol * max(lo, 1e-3):
            mid = 0.5 * (lo + hi)
            if balance(mid)[0] > 0.0:
                lo = mid
            else:
                hi = mid
        s = 0.5 * (lo + hi)
        rho = _csma_occupancy(s, alpha, p, sigma, j, inner_tol, max_iter)
        if rho is None:
            rho = _csma_occupancy(lo, alpha, p, sigma, j, inner_tol, max_iter)
            s = lo
        if rho is None or np.any(rho > 1.0 + 1e-9):
            continue
        # a bracket squeezed against the edge of the feasible range is not a crossing
        if abs(csma_saturation_throughput(rho, p, sigma)[j] - s * alpha[j]) > 1e-7 * max(s * alpha[j], 1e-12):
            continue
        if best is None or s > best:
            best = s
    if best is None:
        raise ConvergenceError("no feasible boundary sheet found along this direction")
    return float(best)
