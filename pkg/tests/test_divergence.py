import math

import numpy as np
import pytest

from qosdeploy.divergence import (
    AxisForm,
    Pose,
    ServiceProfile,
    agent_covariance,
    axes_from_cov,
    cost_at_pose,
    cov_from_axes,
    kld_gaussian,
    optimal_pose,
)
from qosdeploy.gmm import GaussianComponent


def random_spd(rng, scale=1.0):
    a = rng.normal(size=(2, 2))
    return scale * (a @ a.T + 0.3 * np.eye(2))


def basis(weight, mean, cov):
    return GaussianComponent(weight=weight, mean=np.asarray(mean, float), cov=np.asarray(cov, float))


# ------------------------------------------------------------------- KLD

def test_kld_identical_is_zero():
    cov = np.array([[2.0, 0.5], [0.5, 1.0]])
    assert kld_gaussian([1, 2], cov, [1, 2], cov) == 0.0


def test_kld_unit_shift_hand_value():
    # 0.5 * (ln 1 + 1 + tr(I) - 2) = 0.5
    assert kld_gaussian([0, 0], np.eye(2), [1, 0], np.eye(2)) == pytest.approx(0.5, abs=1e-14)


def test_kld_matches_monte_carlo():
    rng = np.random.default_rng(2024)
    mean0, cov0 = np.array([0.4, -0.2]), random_spd(rng)
    mean1, cov1 = np.array([-0.5, 0.9]), random_spd(rng)
    closed = kld_gaussian(mean0, cov0, mean1, cov1)

    # MC oracle: E_p[ln p - ln q] over draws from p.
    n = 1_000_000
    chol = np.linalg.cholesky(cov0)
    x = rng.standard_normal((n, 2)) @ chol.T + mean0

    def logpdf(pts, mean, cov):
        inv = np.linalg.inv(cov)
        d = pts - mean
        quad = np.einsum("mi,ij,mj->m", d, inv, d)
        return -np.log(2 * np.pi) - 0.5 * np.log(np.linalg.det(cov)) - 0.5 * quad

    samples = logpdf(x, mean0, cov0) - logpdf(x, mean1, cov1)
    mc = samples.mean()
    se = samples.std(ddof=1) / math.sqrt(n)
    assert abs(closed - mc) < 3 * se


def test_kld_nonnegative_and_positive_for_distinct_pairs():
    rng = np.random.default_rng(6)
    for _ in range(200):
        v = kld_gaussian(rng.normal(size=2), random_spd(rng), rng.normal(size=2), random_spd(rng))
        assert v > 0.0  # distinct random pairs; zero only at equality


def test_kld_rejects_non_spd():
    with pytest.raises(ValueError):
        kld_gaussian([0, 0], np.eye(2), [0, 0], np.array([[1.0, 2.0], [2.0, 1.0]]))


# --------------------------------------------------------------- axis form

def test_cov_from_axes_zero_angle():
    assert np.allclose(cov_from_axes(AxisForm(4, 1, 0.0)), np.diag([4.0, 1.0]))


def test_cov_from_axes_quarter_turn_swaps_axes():
    got = cov_from_axes(AxisForm(4, 1, math.pi / 2))
    assert np.allclose(got, np.diag([1.0, 4.0]), atol=1e-12)


def test_cov_from_axes_45_degrees_hand_matrix():
    got = cov_from_axes(AxisForm(4, 1, math.pi / 4))
    assert np.allclose(got, [[2.5, 1.5], [1.5, 2.5]], atol=1e-12)


def test_axes_from_cov_diagonal():
    axes = axes_from_cov(np.diag([4.0, 1.0]))
    assert (axes.sigma_major, axes.sigma_minor, axes.theta) == (4.0, 1.0, 0.0)


def test_axes_from_cov_isotropic_convention():
    axes = axes_from_cov(2.5 * np.eye(2))
    assert axes.sigma_major == pytest.approx(2.5)
    assert axes.sigma_minor == pytest.approx(2.5)
    assert axes.theta == 0.0


def test_axes_round_trip():
    src = AxisForm(7.0, 2.0, 1.1)
    back = axes_from_cov(cov_from_axes(src))
    assert back.sigma_major == pytest.approx(7.0, abs=1e-10)
    assert back.sigma_minor == pytest.approx(2.0, abs=1e-10)
    assert back.theta == pytest.approx(1.1, abs=1e-10)


def test_axes_round_trip_random():
    rng = np.random.default_rng(9)
    for _ in range(100):
        cov = random_spd(rng, scale=rng.uniform(0.5, 40))
        back = cov_from_axes(axes_from_cov(cov))
        assert np.allclose(back, cov, atol=1e-10 * max(1.0, np.abs(cov).max()))


def test_axes_from_cov_rejects_asymmetric():
    with pytest.raises(ValueError, match="symmetric"):
        axes_from_cov(np.array([[1.0, 0.5], [0.2, 1.0]]))


# -------------------------------------------------------------------- costs

def profile(rel_weight, sx, sy):
    return ServiceProfile(scale=1.0, rel_weight=rel_weight, sigma_x=sx, sigma_y=sy)


def test_cost_zero_for_perfectly_matched_pair():
    p = profile(0.25, 30.0, 30.0)
    b = basis(0.25, [3.0, 4.0], 30.0 * np.eye(2))
    pose, c_star = optimal_pose(p, b)
    assert c_star == pytest.approx(0.0, abs=1e-14)
    assert cost_at_pose(p, pose, b) == pytest.approx(0.0, abs=1e-14)
    assert np.allclose(pose.position, [3.0, 4.0])
    assert pose.heading == 0.0


def test_displaced_position_strictly_worse():
    rng = np.random.default_rng(12)
    p = profile(0.3, 5.0, 2.0)
    b = basis(0.4, [1.0, -2.0], random_spd(rng, 3.0))
    pose_opt, _ = optimal_pose(p, b)
    at_mean = cost_at_pose(p, pose_opt, b)
    for _ in range(50):
        shifted = Pose(position=b.mean + rng.normal(size=2), heading=pose_opt.heading)
        if np.allclose(shifted.position, b.mean):
            continue
        assert cost_at_pose(p, shifted, b) > at_mean


def test_cost_composes_kld_and_weight_penalty():
    p = profile(0.2, 6.0, 3.0)
    b = basis(0.5, [0.0, 0.0], np.diag([4.0, 2.0]))
    pose = Pose(position=np.array([1.0, 1.0]), heading=0.7)
    want = 0.5 * (
        math.log(0.5 / 0.2)
        + kld_gaussian(b.mean, b.cov, pose.position, agent_covariance(p, 0.7))
    )
    assert cost_at_pose(p, pose, b) == pytest.approx(want, rel=1e-14)


def test_cost_can_be_negative_when_agent_outweighs_basis():
    p = profile(0.9, 4.0, 4.0)
    b = basis(0.1, [0.0, 0.0], 4.0 * np.eye(2))
    _, c_star = optimal_pose(p, b)
    assert c_star < 0


def test_optimal_cost_hand_value():
    # Agent variances (1, 1) vs basis (4, 1), equal weights:
    # 0.5 * (ln(1/4) + (4 + 1)/1 - 2) = 0.5 * (ln(0.25) + 3) ~= 0.80685.
    p = ServiceProfile(scale=1.0, rel_weight=1.0, sigma_x=1.0, sigma_y=1.0)
    b = basis(1.0, [0.0, 0.0], np.diag([4.0, 1.0]))
    _, c_star = optimal_pose(p, b)
    assert 0.5 * (math.log(0.25) + 3.0) == pytest.approx(0.8068528194400547, abs=1e-15)
    assert c_star == pytest.approx(0.8068528194400547, abs=1e-12)


def test_closed_form_equals_cost_at_returned_pose():
    rng = np.random.default_rng(3)
    for _ in range(300):
        sy = rng.uniform(0.5, 30)
        p = profile(rng.uniform(0.05, 1.0), sy + rng.uniform(0, 40), sy)
        b = basis(rng.uniform(0.05, 1.0), rng.normal(size=2) * 20, random_spd(rng, rng.uniform(1, 30)))
        pose, c_star = optimal_pose(p, b)
        assert cost_at_pose(p, pose, b) == pytest.approx(c_star, abs=1e-12)


def test_grid_search_never_beats_closed_form():
    rng = np.random.default_rng(8)
    p = profile(0.3, 9.0, 4.0)
    b = basis(0.45, [2.0, -1.0], random_spd(rng, 5.0))
    pose, c_star = optimal_pose(p, b)
    # Grid oracle over position offsets and 1-degree heading steps.
    axes = axes_from_cov(b.cov)
    radius = 3 * math.sqrt(axes.sigma_major)
    offsets = np.linspace(-radius, radius, 21)
    best = np.inf
    for dx in offsets:
        for dy in offsets:
            for deg in range(0, 180, 3):
                cand = Pose(position=b.mean + [dx, dy], heading=math.radians(deg))
                best = min(best, cost_at_pose(p, cand, b))
    assert best >= c_star - 1e-9


def test_heading_pi_periodicity():
    rng = np.random.default_rng(4)
    p = profile(0.4, 11.0, 3.0)
    b = basis(0.3, [0.5, 0.5], random_spd(rng, 2.0))
    for _ in range(25):
        pose = Pose(position=rng.normal(size=2), heading=rng.uniform(0, 2 * math.pi))
        flipped = Pose(position=pose.position, heading=pose.heading + math.pi)
        assert cost_at_pose(p, pose, b) == pytest.approx(cost_at_pose(p, flipped, b), abs=1e-12)


def test_isotropic_agent_cost_ignores_heading():
    p = profile(0.25, 7.0, 7.0)
    b = basis(0.3, [1.0, 2.0], np.array([[5.0, 1.0], [1.0, 3.0]]))
    pos = np.array([0.0, 0.0])
    costs = [cost_at_pose(p, Pose(position=pos, heading=h), b) for h in np.linspace(0, math.pi, 37)]
    assert max(costs) - min(costs) < 1e-12


def test_profile_validation():
    with pytest.raises(ValueError):
        ServiceProfile(scale=1.0, rel_weight=0.5, sigma_x=1.0, sigma_y=2.0)
    with pytest.raises(ValueError):
        ServiceProfile(scale=0.0, rel_weight=0.5, sigma_x=2.0, sigma_y=1.0)
    with pytest.raises(ValueError):
        ServiceProfile(scale=1.0, rel_weight=1.5, sigma_x=2.0, sigma_y=1.0)
