import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alohastab import region
from conftest import grid_ray_limit


def test_saturated_throughput_all_saturated():
    p = [0.6, 0.3, 0.1]
    lam = region.saturated_throughput([1, 1, 1], p)
    expected = [0.6 * 0.7 * 0.9, 0.3 * 0.4 * 0.9, 0.1 * 0.4 * 0.7]
    assert np.allclose(lam, expected, rtol=0, atol=1e-15)


def test_saturated_throughput_availability_scales():
    lam = region.saturated_throughput([1, 0.5], [0.5, 0.4], b=0.5)
    assert np.allclose(lam, [0.5 * 0.5 * 0.8, 0.5 * 0.2 * 0.5])


def test_saturated_throughput_dimension_mismatch():
    with pytest.raises(ValueError):
        region.saturated_throughput([1, 1], [0.5, 0.5, 0.5])


def test_boundary_point_pins_saturated_user():
    bp = region.boundary_point([0.2, 0.3, 0.4], 1, [0.5, 0.5, 0.5])
    assert bp.rho[1] == 1.0
    assert np.allclose(bp.lam, region.saturated_throughput(bp.rho, [0.5] * 3))


def test_shat_star_uniform_three_users():
    res = region.shat_star([1, 1, 1], [1 / 3] * 3)
    assert res.s_star == pytest.approx(4 / 9, abs=1e-12)
    assert res.i_star == 0
    assert np.allclose(res.rho_star, 1.0)


def test_shat_star_tie_goes_to_lowest_index():
    assert region.shat_star([1, 1], [0.4, 0.4]).i_star == 0


def test_shat_star_rejects_bad_inputs():
    with pytest.raises(ValueError):
        region.shat_star([1, 1], [0.0, 0.5])
    with pytest.raises(ValueError):
        region.shat_star([0, 0], [0.5, 0.5])
    with pytest.raises(ValueError):
        region.shat_star([-1, 2], [0.5, 0.5])


def test_shat_star_zero_share_user_stays_empty():
    res = region.shat_star([1, 0, 1], [0.3, 0.3, 0.3])
    assert res.rho_star[1] == 0.0
    assert res.s_star == pytest.approx(region.shat_star([1, 1], [0.3, 0.3]).s_star, rel=0, abs=1e-12)


def test_shat_star_ray_point_is_on_boundary():
    alpha = np.array([0.5, 0.3, 0.2])
    p = np.array([0.4, 0.25, 0.5])
    res = region.shat_star(alpha, p)
    lam = region.saturated_throughput(res.rho_star, p)
    assert np.allclose(lam, res.s_star * alpha, rtol=1e-12)
    assert np.all(res.rho_star <= 1.0 + 1e-12)


@pytest.mark.parametrize("seed", range(6))
def test_shat_star_matches_grid_search(seed):
    r = np.random.default_rng(seed)
    alpha = r.uniform(0.05, 1.0, 3)
    p = r.uniform(0.05, 0.9, 3)
    s = region.shat_star(alpha, p).s_star
    grid = grid_ray_limit(alpha, p, points=301)
    assert grid <= s + 1e-12
    assert s - grid < 5e-3 * s


def test_approx_region_contains_examples():
    p = [1 / 3] * 3
    assert region.approx_region_contains([0.1, 0.1, 0.1], p)
    assert not region.approx_region_contains([0.2, 0.2, 0.2], p)
    assert region.approx_region_contains([0, 0, 0], p)


def test_approx_region_boundary_point_is_outside():
    p = np.array([0.5, 0.2])
    bp = region.boundary_point([1.0, 0.6], 0, p)
    assert not region.approx_region_contains(bp.lam, p)
    assert region.approx_region_contains(bp.lam * (1 - 1e-9), p)


def test_exact_region2_inequalities():
    p = [0.5, 0.4]
    # first branch: l1 < p1(1-p2) = 0.3 and l2 < p2(1 - l1/(1-p2))
    assert region.exact_region2_contains([0.29, 0.01], p)
    l1 = 0.2
    edge = 0.4 * (1 - l1 / 0.6)
    assert region.exact_region2_contains([l1, edge - 1e-9], p)
    assert not region.exact_region2_contains([l1, edge + 1e-9], p)
    with pytest.raises(ValueError):
        region.exact_region2_contains([0.1, 0.1, 0.1], [0.5, 0.5, 0.5])


def test_k_homogeneous_two_user_example():
    assert region.k_homogeneous_sstar([0.6, 0.4], [0.5, 0.5]) == pytest.approx(0.5, abs=1e-12)


def test_k_homogeneous_rejects_general_direction():
    with pytest.raises(region.NotKHomogeneousError):
        region.k_homogeneous_sstar([0.5, 0.3, 0.2], [0.3, 0.3, 0.3])


def test_capacity_round_trip_examples():
    p = region.capacity_region_solve([0.28, 0.18])
    assert np.allclose(p, [0.4, 0.3], atol=1e-9)
    assert region.capacity_region_solve([0.6, 0.6]) is None
    assert np.allclose(region.capacity_region_solve([0.5]), [0.5])


def test_capacity_solve_returns_smallest_preimage():
    # (0.7, 0.6) maps to the same rates as (0.4, 0.3)
    assert np.allclose(region.capacity_forward([0.7, 0.6]), [0.28, 0.18])
    assert np.allclose(region.capacity_region_solve([0.28, 0.18]), [0.4, 0.3], atol=1e-9)


def test_capacity_solve_rejects_nonpositive():
    with pytest.raises(ValueError):
        region.capacity_region_solve([0.1, 0.0])


def test_csma_sigma_one_is_aloha():
    rho = np.array([0.7, 1.0, 0.4])
    p = np.array([0.3, 0.2, 0.6])
    assert np.allclose(region.csma_saturation_throughput(rho, p, 1), region.saturated_throughput(rho, p))


def test_csma_two_saturated_users_sigma_ten():
    g = region.csma_saturation_throughput([1, 1], [0.5, 0.5], 10)
    assert np.allclose(g, 0.25 / 7.75, rtol=1e-12)


def test_csma_shat_star_sigma_one_equals_aloha():
    alpha, p = [1, 1, 1], [1 / 3] * 3
    assert region.csma_shat_star(alpha, p, 1) == pytest.approx(4 / 9, rel=1e-8)


def _csma_ratio_oracle(alpha, p, sigma):
    # successes keep the ratios of the Aloha saturated rates, so the occupancy
    # vector at the ray limit is the Aloha one
    rho = region.shat_star(alpha, p).rho_star
    return float(region.csma_saturation_throughput(rho, p, sigma).sum())


@pytest.mark.parametrize("sigma", [1, 2, 5, 10, 50])
@pytest.mark.parametrize("case", [([1, 1], [0.5, 0.5]), ([0.5, 0.3, 0.2], [0.3, 0.4, 0.2]),
                                  ([1, 2, 3, 4], [0.25, 0.2, 0.3, 0.1])])
def test_csma_shat_star_matches_ratio_oracle(sigma, case):
    alpha, p = case
    assert region.csma_shat_star(alpha, p, sigma) == pytest.approx(_csma_ratio_oracle(alpha, p, sigma), rel=1e-7)


def test_csma_utilization_grows_with_sigma():
    sig = [1, 2, 5, 10, 20, 50]
    util = [s * region.csma_shat_star([1, 1, 1], [1 / 3] * 3, s) for s in sig]
    assert all(b >= a - 1e-12 for a, b in zip(util, util[1:]))


def test_csma_rejects_bad_sigma():
    with pytest.raises(ValueError):
        region.csma_shat_star([1, 1], [0.5, 0.5], 0)
    with pytest.raises(ValueError):
        region.csma_saturation_throughput([1, 1], [0.5, 0.5], 2.5)


# --- properties --------------------------------------------------------------------

probs = st.floats(0.02, 0.95)
shares = st.floats(0.01, 1.0)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 6).flatmap(lambda n: st.tuples(st.lists(shares, min_size=n, max_size=n),
                                                     st.lists(probs, min_size=n, max_size=n))))
def test_ray_limit_is_a_boundary_point(data):
    alpha, p = map(np.array, data)
    res = region.shat_star(alpha, p)
    a = alpha / alpha.sum()
    assert np.all(res.rho_star >= 0) and np.all(res.rho_star <= 1 + 1e-12)
    assert res.rho_star[res.i_star] == 1.0
    lam = region.saturated_throughput(res.rho_star, p)
    assert np.allclose(lam, res.s_star * a, rtol=1e-10, atol=1e-15)


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 5).flatmap(lambda n: st.tuples(st.lists(shares, min_size=n, max_size=n),
                                                     st.lists(probs, min_size=n, max_size=n))),
       st.floats(0.0, 0.999))
def test_scaling_below_limit_is_inside(data, frac):
    alpha, p = map(np.array, data)
    a = alpha / alpha.sum()
    s = region.shat_star(a, p).s_star
    assert region.approx_region_contains(frac * s * a, p)
    assert not region.approx_region_contains(1.001 * s * a, p)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 6).flatmap(lambda n: st.lists(st.floats(0.05, 0.6), min_size=n, max_size=n)))
def test_capacity_round_trip(p):
    p = np.array(p)
    if p.sum() >= 1.0:
        p = p * 0.95 / p.sum()
    back = region.capacity_region_solve(region.capacity_forward(p), tol=1e-13)
    assert back is not None
    assert np.allclose(back, p, rtol=1e-8, atol=1e-10)


@settings(max_examples=100, deadline=None)
@given(st.lists(probs, min_size=2, max_size=2), st.floats(0.05, 0.95))
def test_two_user_regions_agree_on_rays(p, t):
    lam_dir = np.array([t, 1 - t])
    s = region.shat_star(lam_dir, p).s_star
    for f in (0.98, 1.02):
        assert region.exact_region2_contains(f * s * lam_dir, p) == (f < 1)


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 5).flatmap(lambda n: st.tuples(st.lists(st.floats(0.0, 0.5), min_size=n, max_size=n),
                                                     st.lists(probs, min_size=n, max_size=n),
                                                     st.lists(st.floats(0.0, 1.0), min_size=n, max_size=n))))
def test_pareto_monotone(data):
    lam, p, shrink = map(np.array, data)
    if region.approx_region_contains(lam, p):
        assert region.approx_region_contains(lam * shrink, p)


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 5).flatmap(lambda n: st.tuples(st.lists(st.floats(0.0, 1.0), min_size=n, max_size=n),
                                                     st.lists(probs, min_size=n, max_size=n))),
       st.data())
def test_boundary_consistency(data, draw):
    rho, p = map(np.array, data)
    j = draw.draw(st.integers(0, rho.size - 1))
    bp = region.boundary_point(rho, j, p)
    assert region.approx_region_contains(bp.lam * (1 - 1e-9), p)
    assert not region.approx_region_contains(bp.lam * (1 + 1e-9), p)


def test_batched_membership_matches_pointwise(rng):
    p = np.array([0.45, 0.3])
    pts = rng.uniform(0.0, 0.4, size=(300, 2))
    batch_a = region.approx_region_contains(pts, p)
    batch_e = region.exact_region2_contains(pts, p)
    assert batch_a.shape == (300,) and batch_a.dtype == bool
    for row, a, e in zip(pts, batch_a, batch_e):
        assert a == region.approx_region_contains(row, p)
        assert e == region.exact_region2_contains(row, p)
        assert a == (row.sum() < region.shat_star(row, p).s_star * (1 - 1e-12))
