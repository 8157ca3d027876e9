import math

import numpy as np
import pytest
from scipy.optimize import brentq

from alohastab import meanfield as mf
from alohastab.meanfield import ClassModel, ClassSpec, MeanFieldState

SLOW_KERNEL = ((0.0, 1.0), (1.0, 0.0))  # symmetric on/off, one jump per unit time


def _bisect_root(x, lo, hi):
    f = lambda g: g * math.exp(-g) - x  # noqa: E731
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if (f(lo) < 0) == (f(mid) < 0):
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13:
            break
    return 0.5 * (lo + hi)


# --- roots and xi -----------------------------------------------------------------


def test_gamma_roots_against_independent_solvers():
    lo, hi = mf.gamma_roots(0.2)
    assert lo == pytest.approx(_bisect_root(0.2, 0.0, 1.0), abs=1e-12)
    assert hi == pytest.approx(_bisect_root(0.2, 1.0, 50.0), abs=1e-12)
    assert lo == pytest.approx(brentq(lambda g: g * math.exp(-g) - 0.2, 0, 1, xtol=1e-15), abs=1e-12)
    assert round(lo, 5) == 0.25917 and round(hi, 4) == 2.5426


@pytest.mark.parametrize("lam,b", [(0.01, 1.0), (0.1, 0.5), (0.3, 1.0), (0.36, 1.0), (1e-6, 1.0)])
def test_gamma_roots_residual(lam, b):
    lo, hi = mf.gamma_roots(lam, b)
    assert 0 < lo < 1 < hi
    assert abs(mf.xi(lo) - lam / b) < 1e-12
    assert abs(mf.xi(hi) - lam / b) < 1e-12


def test_gamma_roots_critical_and_supercritical():
    assert mf.gamma_roots(math.exp(-1)) == (1.0, 1.0)
    with pytest.raises(mf.SupercriticalLoadError):
        mf.gamma_roots(0.36788)
    with pytest.raises(mf.SupercriticalLoadError):
        mf.gamma_roots(0.2, b=0.5)


def test_xi_peak():
    x = np.linspace(0, 5, 501)
    assert x[np.argmax(mf.xi(x))] == pytest.approx(1.0)


# --- classification -------------------------------------------------------------------


@pytest.mark.parametrize("p,verdict", [(1.0, mf.GLOBALLY_STABLE), (0.25, mf.UNSTABLE),
                                       (3.0, mf.NOT_GLOBALLY_STABLE)])
def test_classify_examples(p, verdict):
    assert mf.classify_stability(ClassModel.single(p, 0.2)).verdict == verdict


def test_classify_equality_is_indeterminate():
    _, hi = mf.gamma_roots(0.2)
    assert mf.classify_stability(ClassModel.single(hi, 0.2)).verdict == mf.INDETERMINATE
    assert mf.classify_stability(ClassModel.single(1.0, math.exp(-1))).verdict == mf.INDETERMINATE


def test_classify_supercritical_is_unstable():
    assert mf.classify_stability(ClassModel.single(1.0, 0.4)).verdict == mf.UNSTABLE


def test_classify_overloaded_class():
    # total load is fine but class 0 cannot be served at the lower root
    model = ClassModel((ClassSpec(0.5, 0.1, 0.2), ClassSpec(0.5, 1.5, 0.05)))
    v = mf.classify_stability(model)
    assert v.verdict == mf.UNSTABLE and v.margins[0] < 0


def test_class_model_validation():
    with pytest.raises(ValueError):
        ClassModel((ClassSpec(0.5, 1.0, 0.1),))
    with pytest.raises(ValueError):
        ClassModel((ClassSpec(1.0, 1.0, 0.1, ((0.5, 0.5), (0.5, 0.5)), (1.0, 2.0)),))
    with pytest.raises(ValueError):
        ClassModel.single(1.0, 0.1, b=0.0)


# --- derivative ---------------------------------------------------------------------


def test_derivative_empty_system_without_arrivals():
    model = ClassModel.single(1.0, 0.0)
    dQ, dtail = mf.mf_derivative(MeanFieldState.empty(model), model)
    assert np.all(dQ == 0) and np.all(dtail == 0)


def test_derivative_only_arrivals_from_empty():
    model = ClassModel.single(1.0, 0.2)
    dQ, _ = mf.mf_derivative(MeanFieldState.empty(model), model)
    assert dQ[0, 0, 0] == pytest.approx(-0.2) and dQ[0, 0, 1] == pytest.approx(0.2)
    assert np.all(dQ[0, 0, 2:] == 0)


def test_derivative_conserves_mass_with_tail():
    model = ClassModel((ClassSpec(0.4, 0.8, 0.1), ClassSpec(0.6, 1.2, 0.15)))
    st = MeanFieldState.at_level(model, 10, k_max=10)
    dQ, dtail = mf.mf_derivative(st, model)
    assert np.allclose(dQ.sum(axis=(1, 2)) + dtail, 0.0, atol=1e-15)
    assert np.all(dtail > 0)


# --- stationary modulated queue ----------------------------------------------------


def test_mm1_single_environment_is_geometric():
    dist = mf.modulated_mm1_stationary(None, None, 0.2, 0.5, 200)[0]
    k = np.arange(201)
    assert np.allclose(dist, 0.6 * 0.4 ** k, atol=1e-15)


def test_mm1_no_arrivals_sits_at_zero():
    dist = mf.modulated_mm1_stationary(SLOW_KERNEL, (2.0, 0.0), 0.0, 0.5, 50)
    assert np.allclose(dist[:, 0], [0.5, 0.5]) and dist[:, 1:].sum() == 0


def test_mm1_overload_rejected():
    with pytest.raises(ValueError):
        mf.modulated_mm1_stationary(None, None, 0.5, 0.5, 50)


def _gillespie(kernel, g, lam, c, events, seed):
    """Time-weighted occupation of (env, k) for the modulated birth-death chain."""
    rng = np.random.default_rng(seed)
    rates = np.asarray(kernel, float)
    A = len(g)
    occ = {}
    a, k = 0, 0
    u = rng.random((events, 2))
    for n in range(events):
        birth = lam * g[a]
        death = c if k > 0 else 0.0
        jump = rates[a].sum()
        total = birth + death + jump
        dt = -math.log(1.0 - u[n, 0]) / total
        occ[(a, k)] = occ.get((a, k), 0.0) + dt
        r = u[n, 1] * total
        if r < birth:
            k += 1
        elif r < birth + death:
            k -= 1
        else:
            a = (a + 1) % A
    kmax = max(kk for _, kk in occ) + 1
    out = np.zeros((A, kmax))
    for (aa, kk), t in occ.items():
        out[aa, kk] = t
    return out / out.sum()


def test_mm1_two_state_matches_monte_carlo():
    exact = mf.modulated_mm1_stationary(SLOW_KERNEL, (2.0, 0.0), 0.1, 0.5, 200)
    mc = _gillespie(SLOW_KERNEL, (2.0, 0.0), 0.1, 0.5, 1_000_000, seed=12)
    width = max(mc.shape[1], exact.shape[1])
    pad = lambda m: np.pad(m, ((0, 0), (0, width - m.shape[1])))  # noqa: E731
    tv = 0.5 * np.abs(pad(exact) - pad(mc)).sum()
    assert tv < 0.01


# --- fixed points ---------------------------------------------------------------------


def test_fixed_points_only_lower_for_unit_attempt():
    fps = mf.fixed_points(ClassModel.single(1.0, 0.2))
    assert [f.kind for f in fps] == ["lower"]
    assert fps[0].gamma == pytest.approx(0.25917, abs=1e-5)


def test_fixed_points_two_for_large_attempt():
    model = ClassModel.single(3.0, 0.2)
    fps = mf.fixed_points(model)
    assert [f.kind for f in fps] == ["lower", "upper"]
    for f in fps:
        assert abs(mf.xi(f.gamma) - 0.2) < 1e-9
        assert f.consistency < 1e-9 and f.residual < 1e-8


def test_fixed_point_without_arrivals_is_empty():
    fps = mf.fixed_points(ClassModel.single(1.0, 0.0))
    assert len(fps) == 1 and fps[0].gamma == 0.0 and fps[0].state.empty_prob()[0] == 1.0


def test_fixed_points_slow_modulation():
    model = ClassModel((ClassSpec(0.5, 2.0, 0.05, SLOW_KERNEL, (2.0, 0.0)),
                        ClassSpec(0.5, 1.0, 0.1)), speed="slow")
    fps = mf.fixed_points(model)
    assert fps
    for f in fps:
        assert f.consistency < 1e-9 and f.residual < 1e-8
        assert np.allclose(f.state.Q.sum(axis=(1, 2)), 1.0)


def test_fixed_points_with_availability():
    model = ClassModel.single(3.0, 0.15, b=0.8)
    for f in mf.fixed_points(model):
        assert abs(mf.xi(f.gamma) - 0.15 / 0.8) < 1e-9 and f.residual < 1e-8


# --- integration ----------------------------------------------------------------------


def test_integrate_zero_load_is_constant():
    model = ClassModel.single(1.0, 0.0)
    tr = mf.mf_integrate(MeanFieldState.empty(model, 50), model, 5.0)
    assert np.all(tr.gamma == 0.0) and np.array_equal(tr.final.Q, MeanFieldState.empty(model, 50).Q)


def test_integrate_converges_to_lower_root_and_is_monotone():
    model = ClassModel.single(1.0, 0.2)
    tr = mf.mf_integrate(MeanFieldState.empty(model), model, 100.0, sample_every=10)
    lo, _ = mf.gamma_roots(0.2)
    assert abs(tr.gamma[-1] - lo) < 1e-3
    assert np.all(np.diff(tr.gamma) >= -1e-9)
    assert tr.max_mass_drift < 1e-7 and tr.max_workload_residual < 1e-6


def test_integrate_upper_fixed_point_persists():
    model = ClassModel.single(3.0, 0.2)
    up = [f for f in mf.fixed_points(model) if f.kind == "upper"][0]
    tr = mf.mf_integrate(up.state, model, 100.0, sample_every=50)
    assert np.max(np.abs(tr.gamma - up.gamma)) < 1e-3


def test_integrate_heavy_start_reaches_lower_root():
    model = ClassModel.single(1.0, 0.2)
    heavy = MeanFieldState.at_level(model, 50, k_max=100)
    tr = mf.mf_integrate(heavy, model, 600.0, dt=0.02, sample_every=100)
    assert abs(tr.gamma[-1] - mf.gamma_roots(0.2)[0]) < 1e-3


def test_integrate_ordered_starts_stay_ordered():
    model = ClassModel((ClassSpec(0.3, 0.6, 0.05), ClassSpec(0.7, 1.4, 0.1)))
    low = MeanFieldState.at_level(model, 0, 80)
    high = MeanFieldState.at_level(model, 3, 80)
    assert mf.stochastically_leq(low, high)
    a = mf.mf_integrate(low, model, 30.0, sample_every=5)
    b = mf.mf_integrate(high, model, 30.0, sample_every=5)
    assert np.all(a.gamma <= b.gamma + 1e-9)


def test_integrability_partial_sums_are_cauchy():
    model = ClassModel.single(1.0, 0.2)
    lo, _ = mf.gamma_roots(0.2)
    tr = mf.mf_integrate(MeanFieldState.empty(model), model, 160.0, sample_every=1)
    f = mf.xi(lo) - mf.xi(tr.gamma)
    partial = np.cumsum(f) * 0.01
    sums = [partial[int(round(t / 0.01))] for t in (20, 40, 80, 160)]
    assert abs(sums[-1] - sums[-2]) < 1e-3


def test_integrate_truncation_error():
    model = ClassModel.single(0.5, 0.2)
    with pytest.raises(mf.TruncationError):
        mf.mf_integrate(MeanFieldState.empty(model, 5), model, 50.0)


def test_integrate_slow_modulation_conserves_mass():
    model = ClassModel((ClassSpec(1.0, 1.0, 0.1, SLOW_KERNEL, (2.0, 0.0)),), speed="slow")
    tr = mf.mf_integrate(MeanFieldState.empty(model, 100), model, 50.0, sample_every=20)
    assert tr.max_mass_drift < 1e-7
    assert np.allclose(tr.final.Q.sum(axis=2), 0.5, atol=1e-6)


def test_trajectory_csv(tmp_path):
    model = ClassModel((ClassSpec(0.5, 1.0, 0.1), ClassSpec(0.5, 0.8, 0.05)))
    tr = mf.mf_integrate(MeanFieldState.empty(model, 40), model, 1.0, sample_every=10)
    path = tmp_path / "t.csv"
    tr.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "tau,gamma,W,Q_0_0,Q_1_0"
    assert len(lines) == 1 + len(tr.taus)


def test_integrate_validation():
    model = ClassModel.single(1.0, 0.1)
    with pytest.raises(ValueError):
        mf.mf_integrate(MeanFieldState.empty(model), model, 1.0, dt=0.0)
