"""Gaussian KL divergence and pose-optimal assignment costs.

A service agent's footprint is a scaled planar Gaussian whose covariance is
an agent-fixed diagonal shape rotated by the agent's heading. The cost of
serving a mixture basis is the KL divergence between the weighted basis and
the weighted agent footprint; minimising over the agent's pose has a closed
form: sit on the basis mean and align the major axes.
"""

import math
from dataclasses import dataclass

import numpy as np

from .gmm import GaussianComponent
from .validation import as_float_array, as_vec2, check_spd


@dataclass(frozen=True)
class ServiceProfile:
    """Fixed service shape of one agent.

    `sigma_x` and `sigma_y` are the variances along the footprint's major and
    minor axes (major first), `scale` the raw service capability and
    `rel_weight` the capability normalised across the team.
    """

    scale: float
    rel_weight: float
    sigma_x: float
    sigma_y: float

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        if not 0.0 < self.rel_weight <= 1.0:
            raise ValueError("rel_weight must lie in (0, 1]")
        if not self.sigma_x >= self.sigma_y > 0:
            raise ValueError("variances must satisfy sigma_x >= sigma_y > 0")


@dataclass(frozen=True)
class AxisForm:
    """Principal-axis form of a planar covariance: variances plus axis angle."""

    sigma_major: float
    sigma_minor: float
    theta: float

    def __post_init__(self):
        if not self.sigma_major >= self.sigma_minor > 0:
            raise ValueError("axis variances must satisfy sigma_major >= sigma_minor > 0")
        if not np.isfinite(self.theta):
            raise ValueError("theta must be finite")


@dataclass(frozen=True)
class Pose:
    """Planar pose: position and heading, heading stored in [0, 2*pi)."""

    position: np.ndarray
    heading: float

    def __post_init__(self):
        object.__setattr__(self, "position", as_vec2(self.position, "position"))
        if not np.isfinite(self.heading):
            raise ValueError("heading must be finite")
        object.__setattr__(self, "heading", float(self.heading) % (2.0 * math.pi))


def rotation(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def kld_gaussian(mean0, cov0, mean1, cov1):
    """Closed-form KL divergence D(N(mean0, cov0) || N(mean1, cov1)).

    0.5 * (ln(|S1|/|S0|) + (m0-m1)^T S1^-1 (m0-m1) + tr(S1^-1 S0) - 2)
    for planar Gaussians; nonnegative, zero iff the inputs coincide.
    """
    mean0 = as_vec2(mean0, "mean0")
    mean1 = as_vec2(mean1, "mean1")
    cov0 = check_spd(as_float_array(cov0, "cov0", shape=(2, 2)), "cov0")
    cov1 = check_spd(as_float_array(cov1, "cov1", shape=(2, 2)), "cov1")
    inv1 = np.linalg.inv(cov1)
    diff = mean0 - mean1
    val = 0.5 * (
        math.log(np.linalg.det(cov1) / np.linalg.det(cov0))
        + diff @ inv1 @ diff
        + np.trace(inv1 @ cov0)
        - 2.0
    )
    return max(val, 0.0)


def cov_from_axes(axes: AxisForm) -> np.ndarray:
    """Covariance R(theta) diag(sigma_major, sigma_minor) R(theta)^T."""
    rot = rotation(axes.theta)
    return rot @ np.diag([axes.sigma_major, axes.sigma_minor]) @ rot.T


def axes_from_cov(cov) -> AxisForm:
    """Principal-axis decomposition with the major-axis angle in [0, pi).

    Ties (isotropic covariances) use theta = 0 by convention. Round-trips
    with cov_from_axes to 1e-10.
    """
    cov = as_float_array(cov, "cov", shape=(2, 2))
    if abs(cov[0, 1] - cov[1, 0]) > 1e-9:
        raise ValueError("covariance must be symmetric within 1e-9")
    cov = check_spd(0.5 * (cov + cov.T), "cov")
    vals, vecs = np.linalg.eigh(cov)
    major, minor = float(vals[1]), float(vals[0])
    if major - minor <= 1e-12 * major:
        return AxisForm(sigma_major=major, sigma_minor=minor, theta=0.0)
    vx, vy = vecs[:, 1]
    theta = math.atan2(vy, vx) % math.pi
    if math.pi - theta < 1e-12:
        theta = 0.0
    return AxisForm(sigma_major=major, sigma_minor=minor, theta=theta)


def agent_covariance(profile: ServiceProfile, heading) -> np.ndarray:
    """Footprint covariance of an agent with the given heading."""
    return cov_from_axes(AxisForm(profile.sigma_x, profile.sigma_y, float(heading) % math.pi))


def cost_at_pose(profile: ServiceProfile, pose: Pose, basis: GaussianComponent) -> float:
    """Assignment cost of serving `basis` from `pose`.

    weight_k * (ln(weight_k / rel_weight) + D_KL(basis || footprint at pose));
    can be negative when the agent's relative weight exceeds the basis weight.
    """
    if basis.weight <= 0:
        raise ValueError("basis weight must be positive to form the cost")
    div = kld_gaussian(basis.mean, basis.cov, pose.position, agent_covariance(profile, pose.heading))
    return basis.weight * (math.log(basis.weight / profile.rel_weight) + div)


def optimal_pose(profile: ServiceProfile, basis: GaussianComponent):
    """Pose minimising cost_at_pose and the minimum value in closed form.

    The minimiser sits on the basis mean with the heading of the basis' major
    axis (returned as the representative in [0, pi); adding pi gives the same
    cost). The minimum is

        w_k * ( ln(w_k / w_s)
                + 0.5*( ln(sx*sy / (skx*sky))
                        + (skx*sy + sky*sx) / (sx*sy) - 2 ) )

    with (sx, sy) the agent's axis variances and (skx, sky) the basis'.
    """
    axes = axes_from_cov(basis.cov)
    sx, sy = profile.sigma_x, profile.sigma_y
    skx, sky = axes.sigma_major, axes.sigma_minor
    c_star = basis.weight * (
        math.log(basis.weight / profile.rel_weight)
        + 0.5 * (math.log(sx * sy / (skx * sky)) + (skx * sy + sky * sx) / (sx * sy) - 2.0)
    )
    return Pose(position=basis.mean, heading=axes.theta), c_star
