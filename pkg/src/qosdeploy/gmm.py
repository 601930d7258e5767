"""Gaussian mixture modelling of a planar target density.

Provides the mixture data model, a centralized EM fitter, and a distributed
EM in which the global M-step averages are reproduced on every node of a
communication graph by weighted-average consensus. Nodes that own no data
participate as passive consensus parties and still obtain the full estimate.
"""

from dataclasses import dataclass

import numpy as np

from .consensus import DEFAULT_STEP, run_consensus_batch
from .network import Graph, is_connected
from .validation import as_float_array, as_points, as_vec2, check_spd

# Smallest determinant treated as a usable covariance.
SINGULAR_DET = 1e-300
# Weight clamp applied before E-steps on consensus copies, whose weights can
# transiently leave the simplex. Scale-free: responsibilities are invariant
# under a common rescaling of the weights.
WEIGHT_FLOOR = 1e-12


@dataclass(frozen=True)
class GaussianComponent:
    """One mixture basis: weight, mean and SPD covariance."""

    weight: float
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        if not 0.0 <= self.weight <= 1.0:
            raise ValueError(f"component weight must lie in [0, 1], got {self.weight}")
        mean = as_vec2(self.mean, "mean")
        cov = as_float_array(self.cov, "cov", shape=(2, 2))
        if abs(cov[0, 1] - cov[1, 0]) > 1e-12:
            raise ValueError("covariance must be symmetric within 1e-12")
        check_spd(cov, "cov", tol=1e-12)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)


@dataclass(frozen=True)
class Mixture:
    """A finite Gaussian mixture with weights summing to one."""

    components: tuple

    def __post_init__(self):
        comps = tuple(self.components)
        if len(comps) < 1:
            raise ValueError("a mixture needs at least one component")
        total = sum(c.weight for c in comps)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"mixture weights must sum to 1, got {total}")
        object.__setattr__(self, "components", comps)

    @property
    def n_components(self):
        return len(self.components)

    def as_arrays(self):
        w = np.array([c.weight for c in self.components])
        mu = np.stack([c.mean for c in self.components])
        cov = np.stack([c.cov for c in self.components])
        return w, mu, cov

    @classmethod
    def from_arrays(cls, weights, means, covs):
        return cls(tuple(
            GaussianComponent(weight=float(w), mean=m, cov=c)
            for w, m, c in zip(weights, means, covs)
        ))

    def pdf(self, x):
        return mixture_pdf(self, x)

    def logpdf(self, x):
        w, mu, cov = self.as_arrays()
        return _mixture_logpdf(np.atleast_2d(np.asarray(x, dtype=float)), w, mu, cov)


@dataclass(frozen=True)
class TargetSet:
    """Detected target positions together with the id of the detecting node."""

    points: np.ndarray
    owner: np.ndarray

    def __post_init__(self):
        points = as_points(self.points, "points")
        owner = np.asarray(self.owner, dtype=np.int64)
        if owner.shape != (points.shape[0],):
            raise ValueError("owner must assign exactly one node id per point")
        if points.shape[0] and owner.min() < 0:
            raise ValueError("owner ids must be nonnegative")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "owner", owner)

    def owned_by(self, i):
        return self.points[self.owner == i]

    def counts(self, n_nodes):
        return np.bincount(self.owner, minlength=n_nodes)


def gaussian_pdf(mean, cov, x):
    """Bivariate normal density N(x | mean, cov); x may be (2,) or (M, 2)."""
    mean = as_vec2(mean, "mean")
    cov = as_float_array(cov, "cov", shape=(2, 2))
    det = cov[0, 0] * cov[1, 1] - cov[0, 1] * cov[1, 0]
    if det < SINGULAR_DET:
        raise ValueError(f"singular covariance (det = {det:g})")
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    diff = pts - mean
    inv = np.array([[cov[1, 1], -cov[0, 1]], [-cov[1, 0], cov[0, 0]]]) / det
    quad = np.einsum("mi,ij,mj->m", diff, inv, diff)
    vals = np.exp(-0.5 * quad) / (2.0 * np.pi * np.sqrt(det))
    return vals if np.ndim(x) == 2 else float(vals[0])


def mixture_pdf(m: Mixture, x):
    """Mixture density: sum_k weight_k * N(x | mean_k, cov_k)."""
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    total = np.zeros(pts.shape[0])
    for c in m.components:
        total += c.weight * gaussian_pdf(c.mean, c.cov, pts)
    return total if np.ndim(x) == 2 else float(total[0])


def _log_gaussian(points, mean, cov):
    """Log N(points | mean, cov) via Cholesky, shape (M,)."""
    chol = np.linalg.cholesky(cov)
    diff = (points - mean) @ np.linalg.inv(chol).T
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    with np.errstate(over="ignore"):  # far points saturate to -inf cleanly
        quad = (diff ** 2).sum(axis=1)
    return -np.log(2.0 * np.pi) - 0.5 * logdet - 0.5 * quad


def _component_logpdfs(points, means, covs):
    return np.stack([_log_gaussian(points, means[k], covs[k]) for k in range(len(means))], axis=1)


def _mixture_logpdf(points, weights, means, covs):
    logs = _component_logpdfs(points, means, covs) + np.log(np.maximum(weights, WEIGHT_FLOOR))
    peak = logs.max(axis=1, keepdims=True)
    return (peak + np.log(np.exp(logs - peak).sum(axis=1, keepdims=True)))[:, 0]


def _responsibilities(points, weights, means, covs):
    """Posterior component probabilities, one row per point, rows sum to 1.

    Weights may be an unnormalised positive vector; only ratios matter. Rows
    where every component underflows to zero density fall back to uniform.
    """
    w = np.maximum(np.asarray(weights, dtype=float), WEIGHT_FLOOR)
    logs = _component_logpdfs(points, means, covs) + np.log(w)
    peak = logs.max(axis=1, keepdims=True)
    bad = ~np.isfinite(peak[:, 0])
    peak[bad] = 0.0
    gamma = np.exp(logs - peak)
    norm = gamma.sum(axis=1, keepdims=True)
    ok = (norm[:, 0] > 0) & ~bad
    gamma[ok] /= norm[ok]
    gamma[~ok] = 1.0 / len(w)
    return gamma


def e_step(m: Mixture, targets):
    """Responsibility matrix gamma (M x N) for the given mixture."""
    pts = as_points(targets, "targets")
    w, mu, cov = m.as_arrays()
    return _responsibilities(pts, w, mu, cov)


def _m_step(points, gamma, prev_means, prev_covs):
    """Closed-form weight/mean/covariance update from responsibilities.

    Components with vanishing total responsibility keep their previous mean
    and covariance.
    """
    m_count = points.shape[0]
    tot = gamma.sum(axis=0)
    weights = tot / m_count
    means = prev_means.copy()
    covs = prev_covs.copy()
    for k in range(gamma.shape[1]):
        if tot[k] <= 1e-12:
            continue
        means[k] = (gamma[:, k, None] * points).sum(axis=0) / tot[k]
        diff = points - means[k]
        covs[k] = (gamma[:, k, None, None] * (diff[:, :, None] * diff[:, None, :])).sum(axis=0) / tot[k]
    return weights, means, covs


def _floor_covariance(cov, floor):
    """Symmetrise and clamp eigenvalues from below; returns (cov, clamped?)."""
    sym = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(sym)
    if vals.min() >= floor:
        return sym, False
    vals = np.maximum(vals, floor)
    return (vecs * vals) @ vecs.T, True


def default_cov_floor(points):
    """Eigenvalue floor tied to the squared extent of the data."""
    pts = as_points(points)
    if pts.shape[0] == 0:
        return 1e-12
    span = pts.max(axis=0) - pts.min(axis=0)
    return max(1e-6 * float(span @ span), 1e-12)


def centralized_em(targets, n_components, n_iter, init: Mixture, cov_floor=None,
                   return_log_likelihoods=False):
    """Fit a mixture by plain EM over all points at once.

    Runs `n_iter` E/M alternations from `init`. The log-likelihood is
    non-decreasing across iterations (checked; iterations where the
    covariance floor fires are exempt).
    """
    pts = as_points(targets, "targets")
    if pts.shape[0] < n_components:
        raise ValueError("need at least as many points as components")
    if init.n_components != n_components:
        raise ValueError("init component count does not match n_components")
    if cov_floor is None:
        cov_floor = default_cov_floor(pts)

    weights, means, covs = init.as_arrays()
    lls = [float(_mixture_logpdf(pts, weights, means, covs).sum())]
    for _ in range(n_iter):
        gamma = _responsibilities(pts, weights, means, covs)
        weights, means, covs = _m_step(pts, gamma, means, covs)
        clamped = False
        for k in range(n_components):
            covs[k], hit = _floor_covariance(covs[k], cov_floor)
            clamped = clamped or hit
        ll = float(_mixture_logpdf(pts, weights, means, covs).sum())
        if not clamped and ll < lls[-1] - 1e-8 * (1.0 + abs(lls[-1])):
            raise AssertionError(
                f"EM log-likelihood decreased: {lls[-1]} -> {ll}"
            )
        lls.append(ll)
    fitted = Mixture.from_arrays(weights / weights.sum(), means, covs)
    if return_log_likelihoods:
        return fitted, lls
    return fitted


def local_stats(points_i, gamma_i, k, current_mu):
    """Per-node consensus injections for component k's three M-step averages.

    Returns ((eta, r) for the weight stream, (eta, r) for the mean stream,
    (eta, r) for the covariance stream). A node with no points is passive in
    all three; a node whose component-k responsibility mass vanishes is
    passive in the mean and covariance streams for this round.
    """
    pts = as_points(points_i, "points_i")
    n_owned = pts.shape[0]
    if n_owned == 0:
        return (0.0, 0.0), (0.0, np.zeros(2)), (0.0, np.zeros((2, 2)))
    gamma_i = np.asarray(gamma_i, dtype=float)
    if gamma_i.shape[0] != n_owned:
        raise ValueError("gamma_i must have one row per owned point")
    gk = gamma_i[:, k]
    mass = float(gk.sum())
    pi_pair = (float(n_owned), mass / n_owned)
    if mass <= 1e-12:
        return pi_pair, (0.0, np.zeros(2)), (0.0, np.zeros((2, 2)))
    mu = as_vec2(current_mu, "current_mu")
    mean_ref = (gk[:, None] * pts).sum(axis=0) / mass
    diff = pts - mu
    cov_ref = (gk[:, None, None] * (diff[:, :, None] * diff[:, None, :])).sum(axis=0) / mass
    return pi_pair, (mass, mean_ref), (mass, cov_ref)


def distributed_em(g: Graph, targets: TargetSet, n_components, n_outer, n_consensus,
                   delta_c=DEFAULT_STEP, init=None, cov_floor=None, trace_sink=None,
                   return_diagnostics=False):
    """Consensus-based EM: every node ends up with its own mixture estimate.

    Per outer loop, nodes owning targets compute responsibilities against
    their local parameter copies; then, per component, three warm-started
    consensus streams average the weight, mean and covariance statistics
    across the graph. The covariance stream uses the freshly averaged mean,
    mirroring the centralized M-step. After the final loop each node's
    weights are renormalised to sum to one.

    `init` is the common starting mixture (or an explicit per-node list).
    `trace_sink`, if given, collects the weight-stream outputs per consensus
    round as (n_nodes, n_components) arrays.

    Returns one Mixture per node; with `return_diagnostics` also a dict with
    the pre-normalisation weight-sum error and the cross-node mean spread.
    """
    if not is_connected(g):
        raise ValueError("distributed EM requires a connected graph")
    if n_components < 1 or n_outer < 1 or n_consensus < 1:
        raise ValueError("n_components, n_outer and n_consensus must be >= 1")
    if init is None:
        raise ValueError("an initial mixture is required")
    if targets.points.shape[0] and targets.owner.max() >= g.n:
        raise ValueError("target owners must be node ids of the graph")

    inits = list(init) if isinstance(init, (list, tuple)) else [init] * g.n
    if len(inits) != g.n:
        raise ValueError(f"expected {g.n} initial mixtures, got {len(inits)}")

    n = g.n
    nk = n_components
    owned = [targets.owned_by(i) for i in range(n)]
    counts = targets.counts(n).astype(float)
    if counts.sum() == 0:
        raise ValueError("no node owns any target")
    if cov_floor is None:
        cov_floor = default_cov_floor(targets.points)

    pi = np.stack([m.as_arrays()[0] for m in inits])          # (n, nk)
    mu = np.stack([m.as_arrays()[1] for m in inits])          # (n, nk, 2)
    cov = np.stack([m.as_arrays()[2] for m in inits])         # (n, nk, 2, 2)

    # Warm-started consensus states. The weight and mean streams ride in one
    # padded batch (dim 2, weight stream padded with a zero column); the
    # covariance streams use their own dim-4 batch.
    z_pm = np.zeros((n, 2 * nk, 2))
    v_pm = np.zeros((n, 2 * nk, 2))
    z_cv = np.zeros((n, nk, 4))
    v_cv = np.zeros((n, nk, 4))

    for _ in range(n_outer):
        gammas = [
            _responsibilities(owned[i], pi[i], mu[i], cov[i]) if counts[i] else None
            for i in range(n)
        ]

        eta_pm = np.zeros((n, 2 * nk))
        ref_pm = np.zeros((n, 2 * nk, 2))
        for i in range(n):
            if gammas[i] is None:
                continue
            mass = gammas[i].sum(axis=0)                      # (nk,)
            eta_pm[i, :nk] = counts[i]
            ref_pm[i, :nk, 0] = mass / counts[i]
            live = mass > 1e-12
            eta_pm[i, nk:][live] = mass[live]
            mean_ref = np.zeros((nk, 2))
            mean_ref[live] = (gammas[i].T[live] @ owned[i]) / mass[live, None]
            ref_pm[i, nk:] = mean_ref
        collector = [] if trace_sink is not None else None
        y_pm, z_pm, v_pm = run_consensus_batch(
            g.adj, eta_pm, ref_pm, z_pm, v_pm, n_consensus, delta_c, trace=collector
        )
        if trace_sink is not None:
            trace_sink.extend(y_round[:, :nk, 0].copy() for y_round in collector)
        fresh = ~np.isnan(y_pm[:, :, 0])
        pi[fresh[:, :nk]] = y_pm[:, :nk, 0][fresh[:, :nk]]
        mu[fresh[:, nk:]] = y_pm[:, nk:][fresh[:, nk:]]

        eta_cv = np.zeros((n, nk))
        ref_cv = np.zeros((n, nk, 4))
        for i in range(n):
            if gammas[i] is None:
                continue
            mass = gammas[i].sum(axis=0)
            live = mass > 1e-12
            eta_cv[i][live] = mass[live]
            for k in np.flatnonzero(live):
                diff = owned[i] - mu[i, k]
                scatter = (gammas[i][:, k, None, None] * (diff[:, :, None] * diff[:, None, :])).sum(axis=0)
                ref_cv[i, k] = scatter.reshape(4) / mass[k]
        y_cv, z_cv, v_cv = run_consensus_batch(
            g.adj, eta_cv, ref_cv, z_cv, v_cv, n_consensus, delta_c
        )
        fresh_cv = ~np.isnan(y_cv[:, :, 0])
        for i in range(n):
            for k in range(nk):
                if fresh_cv[i, k]:
                    cov[i, k] = y_cv[i, k].reshape(2, 2)
                cov[i, k], _ = _floor_covariance(cov[i, k], cov_floor)

    results = []
    for i in range(n):
        w = np.maximum(pi[i], 0.0)
        w = w / w.sum() if w.sum() > 0 else np.full(nk, 1.0 / nk)
        results.append(Mixture.from_arrays(w, mu[i], cov[i]))
    if return_diagnostics:
        diag = {
            "weight_sum_error": float(np.max(np.abs(pi.sum(axis=1) - 1.0))),
            "mean_spread": float(np.max(np.linalg.norm(mu - mu[0], axis=2))),
        }
        return results, diag
    return results


def sample_mixture(m: Mixture, size, rng):
    """Draw `size` i.i.d. points: categorical component draw, then normal."""
    w, mu, cov = m.as_arrays()
    comp = rng.choice(len(w), size=size, p=w / w.sum())
    z = rng.standard_normal((size, 2))
    chols = np.linalg.cholesky(cov)
    return mu[comp] + np.einsum("mij,mj->mi", chols[comp], z)
