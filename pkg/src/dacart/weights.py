"""Importance weights for source rows.

Propensity-odds weights clamp ``P(W=1|x)`` to ``[lo, hi]`` before taking the
odds ``p / (1 - p)``; every estimator finishes by rescaling to sum ``n``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist, pdist
from scipy.special import expit, logit

from .data import Dataset
from .errors import NumericalError, UserError

log = logging.getLogger(__name__)

DEFAULT_TRUNC = (0.05, 0.95)
ESTIMATORS = ("propensity_odds", "kliep", "true_mechanism", "unit")
MECHANISMS = ("restricted", "shifted", "none")


class DegenerateWeightsError(NumericalError):
    pass


class KliepError(NumericalError):
    pass


@dataclass(frozen=True, eq=False)
class WeightVector:
    """Normalized weights (sum ``n``) plus what produced them."""

    values: np.ndarray
    source_estimator: str = "unit"
    trunc_interval: tuple = DEFAULT_TRUNC
    raw: np.ndarray | None = None
    propensity: np.ndarray | None = None
    trunc_hits: int = 0
    info: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.values)

    @property
    def ess(self) -> float:
        return effective_sample_size(self)

    def summary(self) -> dict:
        return {
            "estimator": self.source_estimator,
            "n": len(self.values),
            "ess": self.ess,
            "min": float(self.values.min()),
            "max": float(self.values.max()),
            "trunc_hits": int(self.trunc_hits),
        }


def _check_trunc(trunc):
    lo, hi = trunc
    if not (0.0 < lo < hi < 1.0):
        raise UserError(f"truncation interval must satisfy 0 < lo < hi < 1, got {trunc}")
    return float(lo), float(hi)


def odds_from_propensity(p, trunc=DEFAULT_TRUNC) -> np.ndarray:
    """Clamp probabilities to ``trunc`` and return ``p / (1 - p)``."""
    lo, hi = _check_trunc(trunc)
    p = np.asarray(p, dtype=np.float64)
    if np.any(~np.isfinite(p)) or np.any((p < 0) | (p > 1)):
        raise UserError("propensities must lie in [0, 1]")
    c = np.clip(p, lo, hi)
    return c / (1.0 - c)


def normalize_weights(raw, estimator: str = "unit", trunc=DEFAULT_TRUNC, **extra) -> WeightVector:
    """Rescale non-negative ``raw`` weights so they sum to ``n``."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 1 or raw.size == 0:
        raise UserError("raw weights must be a non-empty vector")
    if np.any(~np.isfinite(raw)) or np.any(raw < 0):
        raise UserError("raw weights must be finite and non-negative")
    total = raw.sum()
    if not total > 0:
        raise DegenerateWeightsError("all raw weights are zero")
    n = raw.size
    values = n * raw / total
    values.flags.writeable = False
    return WeightVector(values, estimator, tuple(trunc), raw, **extra)


def propensity_weights(p, trunc=DEFAULT_TRUNC) -> WeightVector:
    """Truncated propensity odds, normalized."""
    p = np.asarray(p, dtype=np.float64)
    lo, hi = _check_trunc(trunc)
    odds = odds_from_propensity(p, trunc)
    hits = int(np.sum((p < lo) | (p > hi)))
    return normalize_weights(odds, "propensity_odds", trunc, propensity=p, trunc_hits=hits)


def unit_weights(n: int) -> WeightVector:
    return normalize_weights(np.ones(n), "unit")


def selection_logit(score, mechanism: str, score_mean: float) -> np.ndarray:
    """Logit of ``P(W=1)`` under a simulated selection mechanism.

    restricted: ``2 - |score - mean|`` (target concentrated near the centre);
    shifted: ``score - mean`` (target shifted to larger scores);
    none: 0.
    """
    score = np.asarray(score, dtype=np.float64)
    if mechanism == "restricted":
        return 2.0 - np.abs(score - score_mean)
    if mechanism == "shifted":
        return score - score_mean
    if mechanism == "none":
        return np.zeros_like(score)
    raise UserError(f"unknown selection mechanism {mechanism!r}")


def true_weights(score, mechanism: str, score_mean: float, trunc=DEFAULT_TRUNC) -> WeightVector:
    """Weights from the known selection mechanism."""
    return true_weights_from_logit(selection_logit(score, mechanism, score_mean), trunc)


def true_weights_from_logit(z, trunc=DEFAULT_TRUNC) -> WeightVector:
    """Weights for rows selected into the target with probability ``sigmoid(z)``.

    The odds are ``exp(z)``; ``z`` is clamped to ``[logit(lo), logit(hi)]``
    first, which is the truncation the propensity path applies.
    """
    lo, hi = _check_trunc(trunc)
    z = np.asarray(z, dtype=np.float64)
    zc = np.clip(z, logit(lo), logit(hi))
    hits = int(np.sum((z < logit(lo)) | (z > logit(hi))))
    return normalize_weights(
        np.exp(zc), "true_mechanism", trunc, propensity=expit(z), trunc_hits=hits
    )


def effective_sample_size(w) -> float:
    """Kish effective sample size ``(sum w)^2 / sum w^2``."""
    v = np.asarray(getattr(w, "values", w), dtype=np.float64)
    sq = np.dot(v, v)
    if not sq > 0:
        return 0.0
    return float(v.sum() ** 2 / sq)


# ---------------------------------------------------------------- KLIEP


def gaussian_kernel(X, C, sigma: float) -> np.ndarray:
    return np.exp(-cdist(X, C, "sqeuclidean") / (2.0 * sigma * sigma))


def _project(alpha, b):
    alpha = alpha + (1.0 - b @ alpha) * b / (b @ b)
    alpha = np.maximum(alpha, 0.0)
    s = b @ alpha
    if not s > 0:
        raise KliepError("projection collapsed every kernel coefficient to zero")
    return alpha / s


def _mean_log(A, alpha):
    with np.errstate(divide="ignore"):
        return float(np.mean(np.log(A @ alpha)))


def kliep_solve(A, b, max_iter: int = 100, steps=tuple(10.0 ** np.arange(3, -4, -1))):
    """Maximize ``mean(log(A @ alpha))`` s.t. ``b @ alpha = 1``, ``alpha >= 0``.

    Projected gradient ascent over a decreasing ladder of step sizes; a step
    size is abandoned as soon as it fails to improve the objective.
    """
    m = A.shape[0]
    alpha = _project(np.ones(A.shape[1]), b)
    score = _mean_log(A, alpha)
    for eps in steps:
        for _ in range(max_iter):
            grad = A.T @ (1.0 / (A @ alpha)) / m
            cand = _project(alpha + eps * grad, b)
            new = _mean_log(A, cand)
            if not new > score:
                break
            alpha, score = cand, new
    return alpha, score


def median_distance(X, max_points: int = 1000, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    if len(X) > max_points:
        X = X[rng.choice(len(X), max_points, replace=False)]
    d = pdist(X)
    d = d[d > 0]
    return float(np.median(d)) if d.size else 1.0


@dataclass(frozen=True)
class KliepFit:
    sigma: float
    centers: np.ndarray
    alpha: np.ndarray
    cv_scores: dict

    def ratio(self, X) -> np.ndarray:
        return gaussian_kernel(X, self.centers, self.sigma) @ self.alpha


def fit_kliep(
    Xs: np.ndarray,
    Xt: np.ndarray,
    sigma: float | None = None,
    n_centers: int = 100,
    cv_folds: int = 5,
    grid=(0.25, 0.5, 1.0, 2.0, 4.0),
    seed: int = 0,
) -> KliepFit:
    """Fit the Gaussian-kernel density-ratio model on ``(n, d)`` source and ``(m, d)`` target arrays.

    Without a fixed ``sigma`` the bandwidth is chosen from ``grid`` times the
    median pairwise distance of the pooled sample, by held-out target
    log-likelihood over ``cv_folds`` target folds.
    """
    Xs = np.asarray(Xs, dtype=np.float64)
    Xt = np.asarray(Xt, dtype=np.float64)
    if len(Xs) == 0 or len(Xt) == 0:
        raise UserError("KLIEP needs non-empty source and target samples")
    rng = np.random.default_rng(seed)
    m = len(Xt)
    center_idx = np.sort(rng.choice(m, min(n_centers, m), replace=False))
    cv_scores = {}
    if sigma is None:
        base = median_distance(np.vstack([Xs, Xt]), seed=seed)
        folds = rng.permutation(m) % cv_folds
        is_center = np.zeros(m, dtype=bool)
        is_center[center_idx] = True
        for mult in grid:
            s = base * mult
            scores = []
            for k in range(cv_folds):
                train = folds != k
                cidx = np.flatnonzero(train & is_center)
                if cidx.size == 0:
                    continue
                C = Xt[cidx]
                A = gaussian_kernel(Xt[train], C, s)
                b = gaussian_kernel(Xs, C, s).mean(axis=0)
                alpha, _ = kliep_solve(A, b)
                scores.append(_mean_log(gaussian_kernel(Xt[~train], C, s), alpha))
            cv_scores[s] = float(np.mean(scores))
        sigma = max(cv_scores, key=lambda s: (cv_scores[s], -s))
    C = Xt[center_idx]
    A = gaussian_kernel(Xt, C, sigma)
    b = gaussian_kernel(Xs, C, sigma).mean(axis=0)
    alpha, _ = kliep_solve(A, b)
    return KliepFit(float(sigma), C, alpha, cv_scores)


def kliep_weights(
    z_source: Dataset,
    z_target: Dataset,
    sigma: float | None = None,
    n_centers: int = 100,
    cv_folds: int = 5,
    seed: int = 0,
    tol: float = 1e-6,
) -> WeightVector:
    """KLIEP density-ratio weights over the source rows.

    Raises :class:`KliepError` when the fitted ratio violates the source-mean
    constraint ``mean(w_hat(source)) = 1`` by more than ``tol``.
    """
    if z_source.names != z_target.names:
        raise UserError("source and target must share one schema")
    Xs = z_source.columns.T
    Xt = z_target.feature_matrix(z_source.names).T
    fit = fit_kliep(Xs, Xt, sigma, n_centers, cv_folds, seed=seed)
    ratio = fit.ratio(Xs)
    resid = abs(ratio.mean() - 1.0)
    if not resid <= tol:
        raise KliepError(
            f"source-mean constraint violated: |mean(w) - 1| = {resid:.3g} > {tol:g} "
            f"(sigma={fit.sigma:.4g}, nonzero coefficients={int(np.sum(fit.alpha > 0))})"
        )
    log.debug("kliep sigma=%.4g constraint residual=%.2e", fit.sigma, resid)
    return normalize_weights(
        ratio, "kliep", info={"sigma": fit.sigma, "constraint_residual": resid, "fit": fit}
    )
