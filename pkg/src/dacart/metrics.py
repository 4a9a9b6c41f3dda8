"""Evaluation metrics and the two-sample Kolmogorov-Smirnov statistic."""
from __future__ import annotations

import math

import numpy as np
from scipy.stats import rankdata

from .errors import UserError


def rmse(pred, truth) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise UserError(f"length mismatch: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise UserError("rmse of empty vectors")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def auc(scores, labels) -> float:
    """Area under the ROC curve via the Mann-Whitney U statistic; ties count 1/2."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise UserError("scores and labels differ in length")
    pos = labels == 1
    n1 = int(pos.sum())
    n0 = int((labels == 0).sum())
    if n1 + n0 != labels.size:
        raise UserError("labels must be 0/1")
    if n1 == 0 or n0 == 0:
        raise UserError("AUC needs both classes present")
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


def kolmogorov_sf(lam: float, terms: int = 100) -> float:
    """``P(K > lam)`` for the Kolmogorov distribution.

    Uses the alternating series ``2 sum (-1)^(k-1) exp(-2 k^2 lam^2)`` for
    large ``lam`` and the Jacobi-theta form of the CDF for small ``lam``,
    where the alternating series converges slowly.
    """
    if lam <= 0:
        return 1.0
    if lam < 1.18:
        # CDF = sqrt(2 pi)/lam * sum exp(-(2k-1)^2 pi^2 / (8 lam^2))
        s = 0.0
        for k in range(1, terms + 1):
            term = math.exp(-((2 * k - 1) ** 2) * math.pi**2 / (8 * lam * lam))
            s += term
            if term < 1e-17 * s:
                break
        return min(1.0, max(0.0, 1.0 - math.sqrt(2 * math.pi) / lam * s))
    s = 0.0
    for k in range(1, terms + 1):
        term = math.exp(-2.0 * k * k * lam * lam)
        s += term if k % 2 else -term
        if term < 1e-17:
            break
    return min(1.0, max(0.0, 2.0 * s))


def ks_two_sample(a, b) -> tuple[float, float]:
    """Sup-distance between the two empirical CDFs and its asymptotic p-value."""
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    if a.size == 0 or b.size == 0:
        raise UserError("KS test needs two non-empty samples")
    pooled = np.concatenate([a, b])
    fa = np.searchsorted(a, pooled, side="right") / a.size
    fb = np.searchsorted(b, pooled, side="right") / b.size
    stat = float(np.max(np.abs(fa - fb)))
    en = a.size * b.size / (a.size + b.size)
    return stat, kolmogorov_sf(math.sqrt(en) * stat)


def ks_critical_value(n: int, m: int, coef: float = 1.63) -> float:
    """Asymptotic critical value; ``coef`` 1.63 is the 1% level."""
    return coef * math.sqrt((n + m) / (n * m))
