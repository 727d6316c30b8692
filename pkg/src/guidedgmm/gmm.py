"""Gaussian mixture models with a shared covariance and their closed-form
diffusion functionals.

Every function here accepts a single state ``x`` of shape ``(d,)`` or a batch
of shape ``(n, d)``; outputs follow the same leading shape.  Guidance strengths
may be a scalar or an array broadcastable against the batch axis, which lets a
whole grid of strengths be integrated as one batch.

Labels are 0-based indices into ``MixtureModel.means``.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import logsumexp

__all__ = [
    "MixtureModel",
    "Assumption1Report",
    "DriftEval",
    "sigma_t",
    "posterior",
    "log_posterior",
    "conditional_score",
    "unconditional_score",
    "classifier_gradient",
    "confidence",
    "marginal_log_density",
    "guided_drift_ddim",
    "guided_drift_ddpm",
    "check_assumption1",
    "symmetric_1d",
    "equidistant_2d",
    "aligned_three",
]

_CACHE_LIMIT = 8192


@dataclass(frozen=True, eq=False)
class MixtureModel:
    """``sum_y w_y N(mu_y, Sigma)`` with one covariance shared by all components."""

    weights: np.ndarray
    means: np.ndarray
    covariance: np.ndarray
    _cache: dict = field(default_factory=dict, init=False, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False)

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        mu = np.array(self.means, dtype=float)
        if mu.ndim == 1:
            mu = mu[:, None]
        cov = np.array(self.covariance, dtype=float)
        if cov.ndim == 0:
            cov = cov.reshape(1, 1)
        if mu.ndim != 2 or mu.shape[0] != w.shape[0]:
            raise ValueError(f"means must be a ({w.shape[0]}, d) array, got shape {mu.shape}")
        d = mu.shape[1]
        if cov.shape != (d, d):
            raise ValueError(f"covariance must be {d}x{d}, got shape {cov.shape}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(mu)) and np.all(np.isfinite(cov))):
            raise ValueError("model parameters must be finite")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must be non-negative and sum to 1, got sum {w.sum()!r}")
        if np.max(np.abs(cov - cov.T)) > 1e-12:
            raise ValueError("covariance must be symmetric")
        if np.linalg.eigvalsh(cov)[0] <= 0:
            raise ValueError("covariance must be positive definite")
        for arr in (w, mu, cov):
            arr.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covariance", cov)

    @property
    def num_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dimension(self) -> int:
        return self.means.shape[1]

    @cached_property
    def _eig(self):
        lam, vec = np.linalg.eigh(self.covariance)
        return lam, vec

    @cached_property
    def sigma_min(self) -> float:
        return float(self._eig[0][0])

    @cached_property
    def is_isotropic(self) -> bool:
        return bool(np.max(np.abs(self.covariance - np.eye(self.dimension))) <= 1e-12)

    @cached_property
    def _log_weights(self):
        with np.errstate(divide="ignore"):
            return np.log(self.weights)

    def time_terms(self, t: float):
        """Return ``(P, PM, quad, logdet)`` at diffusion time ``t``.

        ``P`` is the precision of ``Sigma_t``, ``PM[y] = P mu_y``,
        ``quad[y] = <mu_y, P mu_y>`` and ``logdet = log det Sigma_t``.
        """
        t = float(t)
        hit = self._cache.get(t)
        if hit is not None:
            return hit
        lam, vec = self._eig
        decay = np.exp(-2.0 * t)
        lam_t = decay * lam + (1.0 - decay)
        prec = (vec / lam_t) @ vec.T
        prec = 0.5 * (prec + prec.T)
        pm = self.means @ prec
        quad = np.einsum("yd,yd->y", pm, self.means)
        terms = (prec, pm, quad, float(np.sum(np.log(lam_t))))
        with self._lock:
            if len(self._cache) >= _CACHE_LIMIT:
                self._cache.clear()
            self._cache[t] = terms
        return terms

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariance": self.covariance.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MixtureModel":
        missing = {"weights", "means"} - set(data)
        if missing:
            raise ValueError(f"model document lacks keys: {sorted(missing)}")
        means = np.array(data["means"], dtype=float)
        if means.ndim == 1:
            means = means[:, None]
        cov = data.get("covariance")
        if cov is None:
            cov = np.eye(means.shape[1])
        return cls(np.array(data["weights"], dtype=float), means, np.array(cov, dtype=float))

    @classmethod
    def isotropic(cls, means, weights=None) -> "MixtureModel":
        means = np.array(means, dtype=float)
        if means.ndim == 1:
            means = means[:, None]
        if weights is None:
            weights = np.full(means.shape[0], 1.0 / means.shape[0])
        return cls(np.asarray(weights, dtype=float), means, np.eye(means.shape[1]))


@dataclass(frozen=True)
class Assumption1Report:
    center: np.ndarray
    epsilon: float
    max_cross_inner: float
    max_inner_incl_self: float
    cross_inner_ok: bool
    epsilon_ok: bool
    positive_weights: bool
    isotropic: bool
    # Reading where y' = y is also bounded by epsilon; reported, not enforced.
    cross_inner_incl_self_ok: bool
    center_gap_sq: float

    @property
    def satisfied(self) -> bool:
        return self.cross_inner_ok and self.epsilon_ok and self.positive_weights and self.isotropic

    @property
    def separation(self) -> float:
        """``||mu_y - mu_0||^2 - 3 eps``; positive when the quantitative bounds are informative."""
        return self.center_gap_sq - 3.0 * self.epsilon


@dataclass(frozen=True)
class DriftEval:
    drift: np.ndarray
    posterior: np.ndarray
    guidance_term: np.ndarray


def _check_x(x, op):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{op}: state contains non-finite entries")
    return x


def _check_t(t, op):
    t = float(t)
    if not np.isfinite(t) or t < 0:
        raise ValueError(f"{op}: time must be finite and non-negative, got {t!r}")
    return t


def _check_label(model, y, op):
    if not 0 <= int(y) < model.num_components:
        raise IndexError(f"{op}: label {y} out of range for {model.num_components} components")
    return int(y)


def _eta_column(eta, x):
    eta = np.asarray(eta, dtype=float)
    if np.any(eta < 0):
        raise ValueError("guidance strength must be non-negative")
    if eta.ndim == 0 or x.ndim == 1:
        return eta
    return eta.reshape(eta.shape + (1,) * (x.ndim - eta.ndim))


def sigma_t(model: MixtureModel, t: float) -> np.ndarray:
    """Covariance of the forward process at time ``t``: ``e^{-2t} Sigma + (1 - e^{-2t}) I``."""
    t = float(t)
    if not np.isfinite(t):
        raise ValueError("sigma_t: time must be finite")
    if t < 0:
        raise ValueError("sigma_t: time must be non-negative")
    decay = np.exp(-2.0 * t)
    return decay * model.covariance + (1.0 - decay) * np.eye(model.dimension)


def _logits(model, x, t):
    _, pm, quad, _ = model.time_terms(t)
    et = np.exp(-t)
    return model._log_weights + et * (x @ pm.T) - 0.5 * et * et * quad


def log_posterior(model: MixtureModel, x, t: float) -> np.ndarray:
    x = _check_x(x, "posterior")
    t = _check_t(t, "posterior")
    z = _logits(model, x, t)
    return z - logsumexp(z, axis=-1, keepdims=True)


def posterior(model: MixtureModel, x, t: float) -> np.ndarray:
    """Posterior label probabilities ``q_t(x, .)`` of the noised mixture."""
    x = _check_x(x, "posterior")
    t = _check_t(t, "posterior")
    z = _logits(model, x, t)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def confidence(model: MixtureModel, x, y: int) -> np.ndarray | float:
    """Classification confidence ``q_0(x, y)``."""
    y = _check_label(model, y, "confidence")
    q = posterior(model, x, 0.0)[..., y]
    return float(q) if q.ndim == 0 else q


def conditional_score(model: MixtureModel, x, y: int, t: float) -> np.ndarray:
    x = _check_x(x, "conditional_score")
    t = _check_t(t, "conditional_score")
    y = _check_label(model, y, "conditional_score")
    prec, pm, _, _ = model.time_terms(t)
    return -x @ prec + np.exp(-t) * pm[y]


def unconditional_score(model: MixtureModel, x, t: float) -> np.ndarray:
    """Score of the full noised mixture, ``grad_x log p_t(x)``."""
    x = _check_x(x, "unconditional_score")
    t = _check_t(t, "unconditional_score")
    prec, pm, _, _ = model.time_terms(t)
    q = posterior(model, x, t)
    return -x @ prec + np.exp(-t) * (q @ pm)


def classifier_gradient(model: MixtureModel, x, y: int, t: float) -> np.ndarray:
    """``grad_x log q_t(x, y)``."""
    x = _check_x(x, "classifier_gradient")
    t = _check_t(t, "classifier_gradient")
    y = _check_label(model, y, "classifier_gradient")
    _, pm, _, _ = model.time_terms(t)
    q = posterior(model, x, t)
    return np.exp(-t) * (pm[y] - q @ pm)


def marginal_log_density(model: MixtureModel, x, t: float, conditional_on: int | None = None):
    """Log density of the forward marginal at time ``t``, optionally for one component."""
    x = _check_x(x, "marginal_log_density")
    t = _check_t(t, "marginal_log_density")
    prec, pm, quad, logdet = model.time_terms(t)
    et = np.exp(-t)
    d = model.dimension
    xpx = np.einsum("...i,ij,...j->...", x, prec, x)
    # (x - m)^T P (x - m) with m = e^{-t} mu_y, expanded per component
    maha = xpx[..., None] - 2.0 * et * (x @ pm.T) + et * et * quad
    comp = -0.5 * (d * np.log(2.0 * np.pi) + logdet + maha)
    if conditional_on is not None:
        y = _check_label(model, conditional_on, "marginal_log_density")
        out = comp[..., y]
    else:
        out = logsumexp(comp + model._log_weights, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def _drift_parts(model, x, y, eta, tau):
    prec, pm, _, _ = model.time_terms(tau)
    et = np.exp(-tau)
    q = posterior(model, x, tau)
    score = -x @ prec + et * pm[y]
    guide = _eta_column(eta, x) * (et * (pm[y] - q @ pm))
    return score, guide, q


def drift_ddim(model, x, y, eta, tau):
    """Array-only DDIM drift used by the integrators (no validation)."""
    score, guide, _ = _drift_parts(model, x, y, eta, tau)
    return x + score + guide


def drift_ddpm(model, x, y, eta, tau):
    score, guide, _ = _drift_parts(model, x, y, eta, tau)
    return x + 2.0 * (score + guide)


def guided_drift_ddim(model: MixtureModel, x, y: int, eta, tau: float) -> DriftEval:
    """Drift of the guided probability-flow ODE at backward time ``tau = T - t``."""
    x = _check_x(x, "guided_drift_ddim")
    tau = _check_t(tau, "guided_drift_ddim")
    y = _check_label(model, y, "guided_drift_ddim")
    score, guide, q = _drift_parts(model, x, y, eta, tau)
    return DriftEval(drift=x + score + guide, posterior=q, guidance_term=guide)


def guided_drift_ddpm(model: MixtureModel, x, y: int, eta, tau: float) -> DriftEval:
    """Drift of the guided reverse SDE; score and guidance enter doubled."""
    x = _check_x(x, "guided_drift_ddpm")
    tau = _check_t(tau, "guided_drift_ddpm")
    y = _check_label(model, y, "guided_drift_ddpm")
    score, guide, q = _drift_parts(model, x, y, eta, tau)
    return DriftEval(drift=x + 2.0 * (score + guide), posterior=q, guidance_term=2.0 * guide)


def check_assumption1(model: MixtureModel, y: int, mu0=None, epsilon: float | None = None) -> Assumption1Report:
    """Evaluate the near-orthogonality conditions on the centers relative to ``mu0``.

    ``epsilon`` defaults to the largest cross inner product, the smallest value
    for which the first clause can hold.
    """
    y = _check_label(model, y, "check_assumption1")
    mu0 = np.zeros(model.dimension) if mu0 is None else np.asarray(mu0, dtype=float).reshape(-1)
    centered = model.means - mu0
    inner = centered @ centered[y]
    others = np.delete(inner, y)
    max_cross = float(np.max(np.abs(others))) if others.size else 0.0
    if epsilon is None:
        epsilon = max_cross
    epsilon = float(epsilon)
    sep_sq = float(inner[y])
    return Assumption1Report(
        center=mu0,
        epsilon=epsilon,
        max_cross_inner=max_cross,
        max_inner_incl_self=float(np.max(np.abs(inner))),
        cross_inner_ok=max_cross <= epsilon,
        epsilon_ok=epsilon <= sep_sq / 3.0,
        positive_weights=bool(np.all(model.weights > 0)),
        isotropic=model.is_isotropic,
        cross_inner_incl_self_ok=float(np.max(np.abs(inner))) <= epsilon,
        center_gap_sq=sep_sq,
    )


def symmetric_1d() -> MixtureModel:
    """``N(1, 1)/2 + N(-1, 1)/2``; label 0 is the ``+1`` component."""
    return MixtureModel.isotropic([[1.0], [-1.0]])


def equidistant_2d() -> MixtureModel:
    """Three unit-covariance components on the unit circle, equal weights."""
    r = np.sqrt(3.0) / 2.0
    return MixtureModel.isotropic([[r, 0.5], [-r, 0.5], [0.0, -1.0]])


def aligned_three(mu) -> MixtureModel:
    """``N(-mu, I)/3 + N(0, I)/3 + N(mu, I)/3``; label 1 is the center component."""
    mu = np.asarray(mu, dtype=float).reshape(-1)
    if not np.any(mu):
        raise ValueError("aligned model needs a non-zero side mean")
    return MixtureModel.isotropic(np.stack([-mu, np.zeros_like(mu), mu]))
