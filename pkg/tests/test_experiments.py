import csv
import json
import math

import numpy as np
import pytest

from alohastab import experiments as ex
from alohastab import meanfield as mf
from alohastab.meanfield import ClassModel, ClassSpec
from alohastab.region import shat_star


def _example2_low_rederived(x):
    # user 3 saturated along (2x, x+1, 2) / (3x+3) with p = (0.6, 0.3, 0.1):
    # s = p3/alpha3 * prod_{i != 3} alpha3 (1-p3) / (alpha_i p3 + alpha3 (1-p3))
    return 24.3 * (x + 1) / ((x + 9) * (x + 19))


def test_three_user_direction():
    assert np.allclose(ex.three_user_direction(1.0), [1 / 3] * 3)
    a = ex.three_user_direction(4.0)
    assert np.allclose(a / a[0], [1.0, 0.625, 0.25])


@pytest.mark.parametrize("x,value", [(1, 4 / 9), (50, 4 * 50 * 51 / (101 * 251))])
def test_example1_formula_values(x, value):
    assert ex.example1_formula(x) == pytest.approx(value, abs=1e-15)


def test_example1_sweep_agrees_with_ray_solver():
    res = ex.example1([1, 2, 5, 10, 50])
    for r in res.rows:
        assert r.closed_form_agrees and abs(r.s_analytic - r.s_closed_form) < 1e-10


def test_example1_rejects_small_x():
    with pytest.raises(ValueError):
        ex.example1([0.5])


def test_example2_high_branch_and_switch():
    res = ex.example2([47 / 7, 8.0, 10.0])
    for r in res.rows:
        assert r.i_star == 1 and abs(r.s_analytic - r.s_closed_form) < 1e-10
    assert ex.example2_formula(10.0) == pytest.approx(44.1 * 121 / (137 * 83), abs=1e-15)


def test_example2_low_branch_follows_rederived_expression():
    xs = [0.1, 0.5, 1.0, 2.0, 5.0, 6.5]
    res = ex.example2(xs)
    for x, r in zip(xs, res.rows):
        assert r.i_star == 2
        assert r.s_analytic == pytest.approx(_example2_low_rederived(x), abs=1e-12)


def test_example2_rederived_branch_is_continuous_at_breakpoint():
    x0 = 47 / 7
    assert _example2_low_rederived(x0) == pytest.approx(ex.example2_formula(x0, "high"), abs=1e-12)


def test_example2_literal_low_branch_mismatch_is_flagged():
    res = ex.example2([1.0])
    assert not res.rows[0].closed_form_agrees
    assert res.rows[0].s_closed_form == pytest.approx(0.288, abs=1e-12)


def test_example2_range_checked():
    with pytest.raises(ValueError):
        ex.example2([0.05])
    with pytest.raises(ValueError):
        ex.example2([11])


def test_example3_two_users():
    assert ex.example3_formula([2 / 3, 1 / 3]) == pytest.approx(0.5, abs=1e-15)
    res = ex.example3(range(2, 11))
    assert all(abs(r.s_analytic - r.s_closed_form) < 1e-10 for r in res.rows)
    assert np.allclose(ex.linear_direction(4), [0.4, 0.3, 0.2, 0.1])


def test_sweep_csv_and_manifest(tmp_path):
    res = ex.example1([1, 2])
    path = tmp_path / "e1.csv"
    res.write_csv(path)
    rows = list(csv.DictReader(path.open()))
    assert len(rows) == 2 and float(rows[0]["s_analytic"]) == pytest.approx(4 / 9)
    m = res.manifest()
    assert m["sweep"] == "example1" and m["config"]["params"] == [1.0, 2.0]
    json.dumps(m)


def test_sweep_with_simulation_records_seeds():
    res = ex.example1([1.0], simulate=True, models=("bernoulli",),
                      sim={"slots": 200_000, "replications": 1, "seed": 3, "bracket": (0.3, 2.0)})
    row = res.rows[0]
    assert row.s_simulated is not None and row.seeds
    assert row.arrival_model == "bernoulli"


# --- finite-N versus limit -------------------------------------------------------------


def test_finite_region_single_class_closed_form():
    rows, bound = ex.finite_region_check(ClassModel.single(1.0, 0.1), [10, 20, 100, 1000])
    for r in rows:
        assert r.s_n == pytest.approx((1 - 1 / r.n) ** (r.n - 1), rel=1e-12)
        assert r.s_n_expanded == pytest.approx(r.s_n, rel=1e-10)
        assert r.s_inf == pytest.approx(math.exp(-1), rel=1e-14)
    assert rows[0].s_n == pytest.approx(0.38742, abs=5e-6)
    assert bound < 0.2


def test_finite_region_two_classes_converges():
    model = ClassModel((ClassSpec(0.3, 0.5, 0.05), ClassSpec(0.7, 0.8, 0.1)), b=0.9)
    rows, bound = ex.finite_region_check(model, [10, 100, 1000, 5000])
    gaps = [abs(r.s_n - r.s_inf) for r in rows]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    assert math.isnan(rows[-1].s_n_expanded)
    assert bound < 1.0


def test_meanfield_ray_limit_is_on_limit_region():
    model = ClassModel((ClassSpec(0.4, 0.6, 0.05), ClassSpec(0.6, 1.2, 0.1)))
    alpha = np.array([0.3, 0.7])
    s = ex.class_ray_limit_meanfield(model, alpha)
    lam = s * alpha
    # lambda_v = p_v rho_v exp(-sum beta rho p) with one class saturated
    sat = np.argmax(alpha / model.p)
    rho = (alpha / model.p) / (alpha / model.p)[sat]
    assert np.allclose(lam, model.p * rho * math.exp(-(model.beta @ (rho * model.p))))


def test_convergence_csv(tmp_path):
    rows, _ = ex.finite_region_check(ClassModel.single(1.0, 0.1), [10, 20])
    path = tmp_path / "c.csv"
    ex.write_convergence_csv(rows, path)
    assert path.read_text().splitlines()[0] == "N,s_N,s_N_expanded,s_inf,scaled_gap"


# --- bistability -------------------------------------------------------------------------


def test_bistability_demo():
    rep = ex.bistability_demo(ClassModel.single(3.0, 0.2), tau_end=50.0)
    assert rep.verdict == mf.NOT_GLOBALLY_STABLE
    assert abs(rep.limit_from_empty - rep.gamma_lower) < 1e-3
    assert abs(rep.limit_from_upper - rep.gamma_upper) < 1e-3


def test_bistability_precondition():
    with pytest.raises(ex.PreconditionError):
        ex.bistability_demo(ClassModel.single(1.0, 0.2), tau_end=1.0)


def test_manifest_writer(tmp_path):
    path = tmp_path / "m.json"
    ex.write_manifest(path, {"a": np.float64(1.5), "b": np.arange(3)})
    assert json.loads(path.read_text()) == {"a": 1.5, "b": [0, 1, 2]}
