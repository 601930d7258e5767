"""Scikit-learn style estimators wrapping the mixture fitters.

`CentralizedGMM` and `DistributedGMM` expose the usual fit / predict /
predict_proba / score_samples surface (plus get_params via BaseEstimator) so
the density-estimation stage composes with sklearn pipelines and model
selection tooling. The distributed variant takes the per-sample owner ids as
the `y` argument of fit.
"""

import numpy as np
from sklearn.base import BaseEstimator

from .gmm import (
    Mixture,
    TargetSet,
    _mixture_logpdf,
    _responsibilities,
    centralized_em,
    distributed_em,
)
from .network import Graph
from .validation import as_points


def seeded_init(points, n_components, random_state):
    """Common deterministic initial mixture over the data bounding box.

    Component means are drawn uniformly over the box, covariances are
    (diag/4)^2 I with diag the box diagonal, weights uniform.
    """
    pts = as_points(points)
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    span = np.maximum(hi - lo, 1e-6)
    rng = np.random.default_rng(random_state)
    means = rng.uniform(lo, hi, size=(n_components, 2))
    scale = (float(np.linalg.norm(span)) / 4.0) ** 2
    covs = np.stack([scale * np.eye(2)] * n_components)
    weights = np.full(n_components, 1.0 / n_components)
    return Mixture.from_arrays(weights, means, covs)


class _MixtureEstimatorMixin:
    """Prediction helpers shared by both estimators; requires fitted arrays."""

    def _check_fitted(self):
        if not hasattr(self, "weights_"):
            raise RuntimeError("estimator is not fitted yet; call fit first")

    def predict_proba(self, X):
        self._check_fitted()
        return _responsibilities(as_points(X, "X"), self.weights_, self.means_, self.covariances_)

    def predict(self, X):
        return self.predict_proba(X).argmax(axis=1)

    def score_samples(self, X):
        self._check_fitted()
        return _mixture_logpdf(as_points(X, "X"), self.weights_, self.means_, self.covariances_)

    def score(self, X, y=None):
        return float(self.score_samples(X).mean())


class CentralizedGMM(_MixtureEstimatorMixin, BaseEstimator):
    """Plain EM mixture fit over all samples at once.

    Parameters
    ----------
    n_components : number of Gaussian bases.
    n_iter : EM alternations.
    cov_floor : optional eigenvalue floor for the covariances; derived from
        the data extent when None.
    random_state : seed for the deterministic default initialisation.
    init : optional explicit initial Mixture, overriding the seeded default.
    """

    def __init__(self, n_components=2, n_iter=50, cov_floor=None, random_state=0, init=None):
        self.n_components = n_components
        self.n_iter = n_iter
        self.cov_floor = cov_floor
        self.random_state = random_state
        self.init = init

    def fit(self, X, y=None):
        pts = as_points(X, "X")
        init = self.init or seeded_init(pts, self.n_components, self.random_state)
        mixture, lls = centralized_em(
            pts, self.n_components, self.n_iter, init,
            cov_floor=self.cov_floor, return_log_likelihoods=True,
        )
        self.mixture_ = mixture
        self.weights_, self.means_, self.covariances_ = mixture.as_arrays()
        self.log_likelihoods_ = lls
        return self


class DistributedGMM(_MixtureEstimatorMixin, BaseEstimator):
    """Consensus EM over a communication graph.

    fit(X, y) takes the sample coordinates and, as `y`, the integer id of the
    node that detected each sample. Every node of `adjacency` ends up with a
    full mixture estimate; nodes absent from `y` participate passively.
    Prediction methods use node 0's estimate, which agrees with the others up
    to the consensus tolerance.
    """

    def __init__(self, adjacency=None, n_components=2, n_outer=50, n_consensus=20,
                 delta_c=0.05, cov_floor=None, random_state=0, init=None):
        self.adjacency = adjacency
        self.n_components = n_components
        self.n_outer = n_outer
        self.n_consensus = n_consensus
        self.delta_c = delta_c
        self.cov_floor = cov_floor
        self.random_state = random_state
        self.init = init

    def fit(self, X, y):
        if self.adjacency is None:
            raise ValueError("an adjacency matrix is required")
        pts = as_points(X, "X")
        owner = np.asarray(y, dtype=np.int64)
        graph = Graph.from_adjacency(self.adjacency)
        targets = TargetSet(points=pts, owner=owner)
        init = self.init or seeded_init(pts, self.n_components, self.random_state)
        estimates = distributed_em(
            graph, targets, self.n_components, self.n_outer, self.n_consensus,
            delta_c=self.delta_c, init=init, cov_floor=self.cov_floor,
        )
        self.node_mixtures_ = estimates
        self.weights_, self.means_, self.covariances_ = estimates[0].as_arrays()
        mus = np.stack([m.as_arrays()[1] for m in estimates])
        self.agreement_spread_ = float(np.max(np.abs(mus - mus[0])))
        return self
