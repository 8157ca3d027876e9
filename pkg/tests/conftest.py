import numpy as np
import pytest

from alohastab import sim


def pytest_report_header(config):
    return f"alohastab simulation backends: {sorted(sim.BACKENDS)} (default {sim.DEFAULT_BACKEND})"


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def grid_ray_limit(alpha, p, points: int = 201) -> float:
    """Brute-force ray limit from the dominance definition of the region.

    Scans every face rho_j = 1 of the occupancy cube on a regular grid and
    returns max over the grid of min_i lambda_i(rho) / alpha_i. The grid value
    can only undershoot the true supremum.
    """
    alpha = np.asarray(alpha, float) / np.sum(alpha)
    p = np.asarray(p, float)
    n = p.size
    axis = np.linspace(0.0, 1.0, points)
    best = 0.0
    for j in range(n):
        others = [k for k in range(n) if k != j]
        mesh = np.meshgrid(*([axis] * len(others)), indexing="ij")
        rho = np.empty((n,) + mesh[0].shape)
        rho[j] = 1.0
        for k, m in zip(others, mesh):
            rho[k] = m
        x = rho * p.reshape((n,) + (1,) * (n - 1))
        idle = 1.0 - x
        total = np.prod(idle, axis=0)
        lam = x * total / idle
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(alpha.reshape((n,) + (1,) * (n - 1)) > 0,
                             lam / alpha.reshape((n,) + (1,) * (n - 1)), np.inf)
        best = max(best, float(np.max(np.min(ratio, axis=0))))
    return best


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one acceptance line; the lines are repeated in the terminal summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        print(line)
        lines.append((number, line))
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
