"""Differential-entropy estimators for sample ensembles (nats).

Each estimator returns an :class:`EntropyEstimate` whose ``stderr_proxy`` is a
delete-a-group jackknife over 10 interleaved subsamples (index ``i`` belongs to
group ``i % 10``).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import digamma, gammaln, logsumexp

__all__ = [
    "EntropyEstimate",
    "DegenerateSampleWarning",
    "spacing_entropy_1d",
    "knn_entropy",
    "kde_mc_entropy",
    "gaussian_entropy",
    "scott_bandwidth",
]

SPACING_FLOOR = 1e-12
DISTANCE_FLOOR = 1e-12
JACKKNIFE_GROUPS = 10


class DegenerateSampleWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class EntropyEstimate:
    value: float
    estimator: str
    n: int
    stderr_proxy: float
    warning: bool = False

    def __float__(self):
        return self.value


def _jackknife(samples, fn, groups=JACKKNIFE_GROUPS):
    n = len(samples)
    idx = np.arange(n)
    reps = []
    for g in range(groups):
        keep = idx % groups != g
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateSampleWarning)
            reps.append(fn(samples[keep]))
    reps = np.asarray(reps)
    return float(math.sqrt((groups - 1) / groups * np.sum((reps - reps.mean()) ** 2)))


def _as_1d(samples):
    x = np.asarray(samples, dtype=float)
    if x.ndim == 2 and x.shape[1] == 1:
        x = x[:, 0]
    if x.ndim != 1:
        raise ValueError(f"expected scalar samples, got shape {x.shape}")
    return x


def _as_2d(samples):
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError(f"expected an (n, d) sample array, got shape {x.shape}")
    return x


def default_window(n: int) -> int:
    return int(math.floor(math.sqrt(n) + 0.5))


def _spacing_value(x, m, corrected):
    n = x.size
    xs = np.sort(x)
    i = np.arange(n)
    hi = xs[np.minimum(i + m, n - 1)]
    lo = xs[np.maximum(i - m, 0)]
    gaps = hi - lo
    floored = gaps < SPACING_FLOOR
    gaps = np.maximum(gaps, SPACING_FLOOR)
    if corrected:
        # boundary weights c_i of the Ebrahimi-Pflughoeft-Soofi correction
        c = np.full(n, 2.0)
        head = i < m
        tail = i >= n - m
        c[head] = 1.0 + i[head] / m
        c[tail] = 1.0 + (n - 1 - i[tail]) / m
        val = np.mean(np.log(n / (c * m) * gaps))
    else:
        val = np.mean(np.log(n / (2.0 * m) * gaps))
    return float(val), bool(np.any(floored))


def spacing_entropy_1d(samples, m: int | None = None, corrected: bool = False) -> EntropyEstimate:
    """m-spacing estimator ``mean log[(n / 2m)(x_(i+m) - x_(i-m))]`` with clamped order statistics.

    ``corrected=True`` applies the boundary-weighted variant.  The window
    defaults to ``round(sqrt(n))``.
    """
    x = _as_1d(samples)
    n = x.size
    if n < 10:
        raise ValueError(f"spacing estimator needs n >= 10, got {n}")
    if m is None:
        m = default_window(n)
    if m < 1 or n < 2 * m + 1:
        raise ValueError(f"window m={m} needs n >= 2m + 1 (n={n})")
    value, floored = _spacing_value(x, m, corrected)
    if floored:
        warnings.warn("zero spacings floored at 1e-12", DegenerateSampleWarning, stacklevel=2)
    se = _jackknife(x, lambda s: _spacing_value(s, m, corrected)[0])
    return EntropyEstimate(value, "spacing-1d", n, se, floored)


def _unit_ball_log_volume(d):
    return 0.5 * d * math.log(math.pi) - gammaln(0.5 * d + 1)


def _knn_value(x, k):
    n, d = x.shape
    dist, _ = cKDTree(x).query(x, k=k + 1)
    r = dist[:, k]
    floored = r < DISTANCE_FLOOR
    r = np.maximum(r, DISTANCE_FLOOR)
    val = digamma(n) - digamma(k) + _unit_ball_log_volume(d) + d * np.mean(np.log(r))
    return float(val), bool(np.any(floored))


def knn_entropy(samples, k: int = 3) -> EntropyEstimate:
    """Kozachenko-Leonenko estimator ``psi(n) - psi(k) + log V_d + (d/n) sum log r_ik``."""
    x = _as_2d(samples)
    n = x.shape[0]
    if k < 1 or n <= k:
        raise ValueError(f"knn estimator needs n > k >= 1 (n={n}, k={k})")
    value, floored = _knn_value(x, k)
    if floored:
        warnings.warn("coincident points: neighbour distances floored at 1e-12",
                      DegenerateSampleWarning, stacklevel=2)
    se = _jackknife(x, lambda s: _knn_value(s, k)[0]) if n // JACKKNIFE_GROUPS > k + 1 else 0.0
    return EntropyEstimate(value, "knn", n, se, floored)


def scott_bandwidth(x) -> np.ndarray:
    """Per-dimension bandwidth ``n^{-1/(d+4)} * std``."""
    x = _as_2d(x)
    n, d = x.shape
    return n ** (-1.0 / (d + 4)) * x.std(axis=0, ddof=1)


def _kde_group_terms(points, data, h, groups, chunk=1024):
    """Per-group log-sum-exp of scaled kernels: ``out[i, g] = log sum_{j in g} K_h(p_i - x_j)``."""
    n, d = data.shape
    zd = data / h
    dd = np.sum(zd * zd, axis=1)
    norm = -0.5 * d * math.log(2 * math.pi) - float(np.sum(np.log(h)))
    labels = np.unique(groups)
    out = np.empty((points.shape[0], labels.size))
    for lo in range(0, points.shape[0], chunk):
        zp = points[lo:lo + chunk] / h
        sq = np.sum(zp * zp, axis=1)[:, None] - 2.0 * zp @ zd.T + dd[None, :]
        logk = -0.5 * np.maximum(sq, 0.0)
        for c, g in enumerate(labels):
            out[lo:lo + chunk, c] = logsumexp(logk[:, groups == g], axis=1)
    return out + norm, labels


def _check_bandwidth(bandwidth, d):
    h = np.broadcast_to(np.asarray(bandwidth, dtype=float), (d,))
    if np.any(~np.isfinite(h)) or np.any(h <= 0):
        raise ValueError("KDE bandwidth must be positive and finite")
    return h


def kde_log_density(points, data, bandwidth) -> np.ndarray:
    """Log density of a product-Gaussian KDE fitted on ``data`` evaluated at ``points``."""
    points = _as_2d(points)
    data = _as_2d(data)
    h = _check_bandwidth(bandwidth, data.shape[1])
    terms, _ = _kde_group_terms(points, data, h, np.zeros(data.shape[0], dtype=int))
    return terms[:, 0] - math.log(data.shape[0])


def kde_mc_entropy(samples, bandwidth=None) -> EntropyEstimate:
    """Fit a Gaussian KDE on the even-indexed half, average ``-log p`` over the odd half.

    ``bandwidth`` is a scalar, a per-dimension vector, or ``None`` for the
    Scott rule on the fitting half.  Jackknife replicates drop one index
    pair group from both halves and keep the bandwidth fixed, so the kernel matrix
    is evaluated only once.
    """
    x = _as_2d(samples)
    n, d = x.shape
    if n < 20:
        raise ValueError(f"KDE-MC estimator needs n >= 20, got {n}")
    idx = np.arange(n)
    fit, held = x[0::2], x[1::2]
    if bandwidth is None:
        bandwidth = scott_bandwidth(fit)
        if np.any(bandwidth <= 0):
            raise ValueError("degenerate sample: zero Scott bandwidth")
    h = _check_bandwidth(bandwidth, d)
    # group by pair index so each replicate drops matching rows of both halves
    fit_groups = (idx[0::2] // 2) % JACKKNIFE_GROUPS
    held_groups = (idx[1::2] // 2) % JACKKNIFE_GROUPS
    terms, labels = _kde_group_terms(held, fit, h, fit_groups)
    counts = np.array([np.sum(fit_groups == g) for g in labels])
    logp = logsumexp(terms, axis=1) - math.log(fit.shape[0])
    value = float(-np.mean(logp))
    reps = []
    for c, g in enumerate(labels):
        rest = np.delete(terms, c, axis=1)
        lp = logsumexp(rest, axis=1) - math.log(fit.shape[0] - counts[c])
        reps.append(-np.mean(lp[held_groups != g]))
    reps = np.asarray(reps)
    G = reps.size
    se = float(math.sqrt((G - 1) / G * np.sum((reps - reps.mean()) ** 2)))
    return EntropyEstimate(value, "kde-mc", n, se)


def gaussian_entropy(cov) -> float:
    """``0.5 * log((2 pi e)^d det cov)``."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.shape[0] != cov.shape[1] or np.max(np.abs(cov - cov.T)) > 1e-12:
        raise ValueError("covariance must be a symmetric square matrix")
    lam = np.linalg.eigvalsh(cov)
    if lam[0] <= 0:
        raise ValueError("covariance must be positive definite")
    d = cov.shape[0]
    return 0.5 * (d * math.log(2 * math.pi * math.e) + float(np.sum(np.log(lam))))
