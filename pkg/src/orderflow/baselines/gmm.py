"""One-dimensional Gaussian mixture fitted by expectation-maximisation."""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from ..errors import EmDegenerate, InsufficientData

_VAR_FLOOR_REL = 1e-10


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        for name in ("weights", "means", "variances"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not np.isclose(self.weights.sum(), 1.0, rtol=0, atol=1e-9):
            raise ValueError("mixture weights must sum to 1")
        if np.any(self.variances <= 0):
            raise ValueError("mixture variances must be positive")

    @property
    def k(self):
        return len(self.weights)

    def component_logpdf(self, x):
        x = np.asarray(x, dtype=float)[:, None]
        return (
            np.log(self.weights)
            - 0.5 * np.log(2 * np.pi * self.variances)
            - 0.5 * (x - self.means) ** 2 / self.variances
        )

    def logpdf(self, x):
        return logsumexp(self.component_logpdf(x), axis=1)

    def sample(self, n, rng):
        comp = rng.choice(self.k, size=n, p=self.weights)
        return rng.normal(self.means[comp], np.sqrt(self.variances[comp]))

    def __eq__(self, other):
        if not isinstance(other, GaussianMixture):
            return NotImplemented
        return all(np.array_equal(getattr(self, n), getattr(other, n)) for n in ("weights", "means", "variances"))


def _em_once(x, k, rng, tol, max_iter, var_floor):
    n = len(x)
    means = rng.choice(x, size=k, replace=False)
    variances = np.full(k, x.var())
    weights = np.full(k, 1.0 / k)
    prev = -np.inf
    for _ in range(max_iter):
        logp = (
            np.log(weights)
            - 0.5 * np.log(2 * np.pi * variances)
            - 0.5 * (x[:, None] - means) ** 2 / variances
        )
        norm = logsumexp(logp, axis=1)
        ll = norm.sum()
        resp = np.exp(logp - norm[:, None])
        nk = resp.sum(axis=0)
        if np.any(nk < 1e-8 * n):
            return None
        weights = nk / n
        means = resp.T @ x / nk
        variances = (resp * (x[:, None] - means) ** 2).sum(axis=0) / nk
        if np.any(variances < var_floor):
            return None
        if ll - prev < tol * max(1.0, abs(ll)):
            break
        prev = ll
    order = np.argsort(means)
    return ll, GaussianMixture(weights[order] / weights.sum(), means[order], variances[order])


def fit_gmm(samples, k=3, restarts=10, tol=1e-8, max_iter=2000, seed=0):
    """Best-of-``restarts`` EM fit. Runs whose components collapse are discarded.

    Convergence is declared when the log-likelihood gain falls below
    ``tol`` (relative to the log-likelihood magnitude once it exceeds 1).
    """
    x = np.asarray(samples, dtype=float)
    x = x[np.isfinite(x)]
    if len(x) < max(2 * k, 10):
        raise InsufficientData(f"{len(x)} samples for a {k}-component mixture")
    if x.var() == 0:
        raise EmDegenerate("all samples identical")
    rng = np.random.default_rng(seed)
    var_floor = _VAR_FLOOR_REL * x.var()
    best = None
    for _ in range(restarts):
        out = _em_once(x, k, rng, tol, max_iter, var_floor)
        if out is not None and (best is None or out[0] > best[0]):
            best = out
    if best is None:
        raise EmDegenerate(f"all {restarts} EM restarts collapsed")
    return best[1]
