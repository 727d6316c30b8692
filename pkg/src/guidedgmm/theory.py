"""Deterministic bounds and thresholds for guided sampling on mixtures.

Confidence lower bounds are defined implicitly through a self-consistency
inequality ``U < A + B * min{F(p_max, c U), xi}``.  The right-hand side is
non-increasing in ``U``, so the admissible set is an interval ``[0, U*)``; the
functions below locate ``U*`` by bisection and report the bound obtained in the
limit ``U -> U*``.

The phase-transition helpers study the aligned three-component model
``N(-mu, I)/3 + N(0, I)/3 + N(mu, I)/3`` guided to its center, where the
discretised DDIM update acts on ``v_k = <X_k, mu>`` alone.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import bisect

from . import gmm
from .dynamics import Schedule
from .gmm import MixtureModel

__all__ = [
    "cal_F",
    "BoundInputs",
    "ConfidenceBound",
    "init_gap",
    "ddim_confidence_bound",
    "ddpm_confidence_bound",
    "two_cluster_bound",
    "discrete_confidence_bound",
    "confidence_bound",
    "ddim_large_eta_diagnostic",
    "StepCondition",
    "entropy_step_condition",
    "PhaseInputs",
    "PhaseThresholds",
    "Phase",
    "phase_h",
    "phase_h_derivative",
    "admissible_steps",
    "phase_thresholds",
    "classify_phase",
]

U_TOL = 1e-10


def cal_F(p, u):
    """``(1 - p) e^{-u} / (p + (1 - p) e^{-u})``."""
    p = np.asarray(p, dtype=float)
    u = np.asarray(u, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("cal_F: p must lie in [0, 1]")
    if np.any(u < 0):
        raise ValueError("cal_F: u must be non-negative")
    e = np.exp(-u)
    out = (1 - p) * e / (p + (1 - p) * e)
    return float(out) if out.ndim == 0 else out


def xi_w(weights, y):
    w = np.asarray(weights, dtype=float)
    others = np.delete(w, y)
    return float(1.0 - w[y] / (w[y] + others.min()))


def mean_norm_spread(means, y):
    """``max_y' | ||mu_y||^2 - ||mu_y'||^2 |``; invariant to permuting the other labels."""
    sq = np.einsum("yd,yd->y", means, means)
    return float(np.max(np.abs(sq[y] - sq)))


def init_gap(model: MixtureModel, y: int, x0, z0) -> float:
    """``min_{y' != y} <x0 - z0, mu_y - mu_y'>``; zero for shared initialisation."""
    diff = np.asarray(x0, dtype=float) - np.asarray(z0, dtype=float)
    gaps = [(diff @ (model.means[y] - model.means[j])) for j in range(model.num_components) if j != y]
    return float(min(gaps)) if gaps else 0.0


@dataclass(frozen=True)
class BoundInputs:
    """Arguments of the confidence bounds.

    ``max_unguided_conf`` and ``terminal_unguided_conf`` come from a measured
    unguided baseline run; ``center_gap_sq`` is ``||mu_y - mu_0||^2``.
    """

    xi_w: float
    Delta: float
    center_gap_sq: float
    epsilon: float
    eta: float
    horizon: float
    init_gap: float
    max_unguided_conf: float
    terminal_unguided_conf: float
    mu0: np.ndarray | None = None
    Delta1: float | None = None
    delta_max: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.xi_w < 1.0:
            raise ValueError(f"xi_w must lie in (0, 1), got {self.xi_w}")
        if self.Delta < 0 or (self.Delta1 is not None and self.Delta1 < 0):
            raise ValueError("Delta must be non-negative")
        if self.eta < 0:
            raise ValueError("guidance strength must be non-negative")
        for p in (self.max_unguided_conf, self.terminal_unguided_conf):
            if not 0.0 <= p <= 1.0:
                raise ValueError("confidences must lie in [0, 1]")

    @property
    def separation(self) -> float:
        return self.center_gap_sq - 3.0 * self.epsilon

    @classmethod
    def from_baseline(cls, model: MixtureModel, y: int, eta: float, horizon: float, unguided_conf,
                      gap: float = 0.0, mu0=None, epsilon=None, delta_max: float = 0.0) -> "BoundInputs":
        """Assemble inputs from a model and the confidence series of its unguided run.

        With two components and no ``mu0``, the midpoint of the two means is used.
        """
        conf = np.asarray(unguided_conf, dtype=float)
        if mu0 is None and model.num_components == 2:
            mu0 = model.means.mean(axis=0)
        rep = gmm.check_assumption1(model, y, mu0, epsilon)
        delta1 = mean_norm_spread(model.means, y) if model.num_components == 2 else None
        return cls(
            xi_w=xi_w(model.weights, y),
            Delta=mean_norm_spread(model.means, y),
            center_gap_sq=rep.center_gap_sq,
            epsilon=rep.epsilon,
            eta=float(eta),
            horizon=float(horizon),
            init_gap=float(gap),
            max_unguided_conf=float(conf.max()),
            terminal_unguided_conf=float(conf[-1]),
            mu0=rep.center,
            Delta1=delta1,
            delta_max=float(delta_max),
        )


class ConfidenceBound(NamedTuple):
    U_star: float
    bound: float
    degenerate: bool = False


def _solve_U(A, B, p_max, xi, scale):
    def g(U):
        return A + B * min(cal_F(p_max, scale * U), xi) - U

    if g(0.0) <= 0.0:
        return 0.0
    hi = A + B
    if g(hi) >= 0.0:
        return hi
    return bisect(g, 0.0, hi, xtol=U_TOL, maxiter=500)


def _lift(p, U, rate=1.0):
    e = math.exp(-rate * U)
    return p / (p + (1.0 - p) * e)


def _bound(inp: BoundInputs, A, B, scale=1.0, rate=1.0, xi=None):
    """Bound for the general-position theorems; degenerate when the centers are too correlated."""
    p_T = inp.terminal_unguided_conf
    if inp.separation <= 0.0:
        return ConfidenceBound(0.0, p_T, True)
    U = _solve_U(A, B, inp.max_unguided_conf, inp.xi_w if xi is None else xi, scale)
    return ConfidenceBound(U, _lift(p_T, U, rate), False)


def ddim_confidence_bound(inp: BoundInputs) -> ConfidenceBound:
    """Terminal confidence lower bound for the continuous guided DDIM sampler."""
    T = inp.horizon
    B = (1 - math.exp(-T)) * inp.eta * math.exp(-inp.Delta / 8) * inp.separation
    return _bound(inp, inp.init_gap, B)


def ddpm_confidence_bound(inp: BoundInputs) -> ConfidenceBound:
    """Terminal confidence lower bound for the continuous guided DDPM sampler (per path)."""
    T = inp.horizon
    A = math.exp(-T) * inp.init_gap
    B = inp.eta * (1 - math.exp(-2 * T)) * math.exp(-inp.Delta / 8) * inp.separation
    return _bound(inp, A, B, scale=math.exp(T))


def two_cluster_bound(inp: BoundInputs, kind: str = "ddim") -> ConfidenceBound:
    """Bound specialised to two components, ``mu = mu_1 - mu_0`` with ``mu_0`` the midpoint.

    ``inp.init_gap`` is ``<x0 - z0, mu_1 - mu_2>``, i.e. ``2 <x0 - z0, mu>``.
    """
    if inp.Delta1 is None:
        raise ValueError("two_cluster_bound requires a two-component model (Delta1 unset)")
    T = inp.horizon
    mu_sq = inp.center_gap_sq
    coef = 4 * inp.eta * math.exp(-inp.Delta1 / 8) * mu_sq
    if kind == "ddim":
        return _bound_two(inp, inp.init_gap, coef * (1 - math.exp(-T)), 1.0)
    if kind == "ddpm":
        return _bound_two(inp, math.exp(-T) * inp.init_gap, coef * (1 - math.exp(-2 * T)), math.exp(T))
    raise ValueError("kind must be 'ddim' or 'ddpm'")


def _bound_two(inp, A, B, scale):
    U = _solve_U(A, B, inp.max_unguided_conf, inp.xi_w, scale)
    return ConfidenceBound(U, _lift(inp.terminal_unguided_conf, U), False)


def discrete_confidence_bound(inp: BoundInputs, kind: str = "ddim") -> ConfidenceBound:
    """Bounds for the discretised samplers; ``inp.delta_max`` is the largest step."""
    T = inp.horizon
    dm = inp.delta_max
    base = inp.eta * math.exp(-inp.Delta / 8) * inp.separation
    if kind == "ddim":
        return _bound(inp, inp.init_gap, math.exp(-dm) * (1 - math.exp(-T)) * base)
    if kind == "ddpm":
        if dm > 0.5:
            raise ValueError(
                f"discrete DDPM bound requires max step <= 1/2 (Delta_max = {dm}); "
                "see the step restriction of the discrete DDPM confidence theorem"
            )
        A = math.exp(-T - dm) * inp.init_gap
        B = (math.exp(-T) - math.exp(-3 * T)) * base
        return _bound(inp, A, B, rate=math.exp(-2 * T))
    raise ValueError("kind must be 'ddim' or 'ddpm'")


def confidence_bound(inp: BoundInputs, kind: str) -> ConfidenceBound:
    """Dispatch on sampler kind; two-component inputs use the two-cluster form where one exists."""
    if kind in ("ddim-disc", "ddpm-disc"):
        return discrete_confidence_bound(inp, kind[:4])
    if kind not in ("ddim", "ddpm"):
        raise ValueError(f"unknown sampler kind {kind!r}")
    if inp.Delta1 is not None:
        return two_cluster_bound(inp, kind)
    return ddim_confidence_bound(inp) if kind == "ddim" else ddpm_confidence_bound(inp)


def ddim_large_eta_diagnostic(model: MixtureModel, y: int, x0, eta: float, T: float, mu0=None,
                              epsilon=None) -> float:
    """Asymptotic form ``1 - (log eta - C0 - logit P(x0, y)) / (eta C1)``.

    Only meaningful for sufficiently large ``eta``; never used as an assertion.
    """
    rep = gmm.check_assumption1(model, y, mu0, epsilon)
    mu = model.means
    C0 = min((1 - math.exp(-T)) * float(mu[y] @ (mu[y] - mu[j])) for j in range(model.num_components))
    C1 = math.exp(-mean_norm_spread(mu, y) / 8) * rep.separation
    p0 = gmm.confidence(model, x0, y)
    logit = math.log(p0 / (1 - p0))
    return 1.0 - (-C0 - logit + math.log(eta)) / (eta * C1)


@dataclass(frozen=True)
class StepCondition:
    lhs_gain: np.ndarray
    condition_growth: np.ndarray
    condition_small: np.ndarray
    eta_limit: float

    @property
    def holds(self) -> bool:
        return bool(np.all(self.condition_growth) and np.all(self.condition_small))


def entropy_step_condition(model: MixtureModel, eta: float, schedule: Schedule | np.ndarray) -> StepCondition:
    """Step-size requirements under which discrete DDIM guidance cannot raise entropy.

    Per step ``k`` with ``g_k = delta_k / (s ^ 1) + delta_k eta M / (s^2 ^ 1)``,
    ``s = sigma_min(Sigma)`` and ``M = max_y ||mu_y||^2``, checks
    ``1 + delta_k > g_k`` and ``delta_k + g_k < 1/2``.  ``eta_limit`` is the
    supremum of strengths for which both hold at every step.
    """
    steps = schedule.steps if isinstance(schedule, Schedule) else np.asarray(schedule, dtype=float)
    s = model.sigma_min
    m_sup = float(np.max(np.einsum("yd,yd->y", model.means, model.means)))
    lin = steps / min(s, 1.0)
    per_eta = steps * m_sup / min(s * s, 1.0)
    g = lin + eta * per_eta
    cond_growth = 1.0 + steps > g
    cond_small = steps + g < 0.5
    with np.errstate(divide="ignore", invalid="ignore"):
        lim_growth = np.where(per_eta > 0, (1.0 + steps - lin) / per_eta, np.inf)
        lim_small = np.where(per_eta > 0, (0.5 - steps - lin) / per_eta, np.inf)
    limit = float(min(lim_growth.min(), lim_small.min()))
    return StepCondition(g, cond_growth, cond_small, max(limit, 0.0))


@dataclass(frozen=True)
class PhaseInputs:
    mu: np.ndarray
    schedule: Schedule
    eta: float = 0.0
    horizon: float | None = None

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float).reshape(-1)
        if not np.any(mu):
            raise ValueError("side mean must be non-zero")
        object.__setattr__(self, "mu", mu)
        if self.horizon is None:
            object.__setattr__(self, "horizon", self.schedule.horizon)
        if self.eta < 0:
            raise ValueError("guidance strength must be non-negative")

    @property
    def mu_sq(self) -> float:
        return float(self.mu @ self.mu)

    def decay(self, k):
        """``e^{-T + t_k}``."""
        return np.exp(-self.horizon + self.schedule.knots[k])

    def with_eta(self, eta: float) -> "PhaseInputs":
        return PhaseInputs(self.mu, self.schedule, eta, self.horizon)


def _ratio(u, c):
    """``(e^u - e^-u) / (e^c + e^u + e^-u)`` for ``u >= 0`` without overflow."""
    e2 = np.exp(-2.0 * u)
    return (1.0 - e2) / (np.exp(c - u) + 1.0 + e2)


def phase_h(v, k: int, inputs: PhaseInputs):
    """``h(v, k)``: the center-guided DDIM increment of ``v = <X, mu>`` plus ``2v`` mirrored.

    One discrete step maps ``v_k`` to ``-v_k - h(v_k, k)``.
    """
    v = np.asarray(v, dtype=float)
    a = inputs.decay(k)
    m2 = inputs.mu_sq
    delta = inputs.schedule.steps[k]
    r = _ratio(a * np.abs(v), a * a * m2 / 2.0)
    out = delta * inputs.eta * a * np.sign(v) * r * m2 - 2.0 * v
    return float(out) if out.ndim == 0 else out


def phase_h_derivative(v, k: int, inputs: PhaseInputs):
    v = np.asarray(v, dtype=float)
    a = inputs.decay(k)
    m2 = inputs.mu_sq
    delta = inputs.schedule.steps[k]
    u = a * np.abs(v)
    e2 = np.exp(-2.0 * u)
    Ae = np.exp(a * a * m2 / 2.0 - u)
    frac = (Ae * (1.0 + e2) + 4.0 * e2) / (Ae + 1.0 + e2) ** 2
    out = delta * inputs.eta * a * a * m2 * frac - 2.0
    return float(out) if out.ndim == 0 else out


def admissible_steps(inputs: PhaseInputs) -> np.ndarray:
    """Step indices ``k < K`` with ``e^{-T + t_k} >= 1/2``."""
    k = np.arange(inputs.schedule.K)
    return k[inputs.decay(k) >= 0.5]


class Phase(str, enum.Enum):
    CONVERGENT = "Convergent"
    SPLITTING = "Splitting"
    INDETERMINATE = "Indeterminate"


@dataclass(frozen=True)
class PhaseThresholds:
    """Thresholds of the aligned-model phase transition.

    ``a`` and ``b`` are numerically derived (bisection), not closed forms; they
    are ``None`` below ``eta0_prime``.
    """

    eta0: float
    eta0_prime: float
    s0: float | None
    s1: float | None
    a: float | None
    b: float | None


def _s0(inputs):
    m2 = inputs.mu_sq
    c = inputs.schedule.delta_min * inputs.eta * m2 * math.exp(m2 / 8) / 8.0
    half = math.exp(m2 / 2)
    disc = (c - 2 * half) ** 2 - 4 * math.exp(m2)
    if disc < 0:
        return None
    return (c - 2 * half + math.sqrt(disc)) / 2.0


def _s1(inputs):
    m2 = inputs.mu_sq
    cm = inputs.schedule.delta_max * inputs.eta * m2
    disc = (cm * math.exp(m2 / 2) / 2 - 2 * math.exp(m2 / 8)) ** 2 - 4 * math.exp(m2 / 4) + 8 * cm
    if disc < 0:
        return None
    return cm * math.exp(m2 / 2) / 4 - math.exp(m2 / 8) + math.sqrt(disc) / 2.0


def eta0(mu, schedule: Schedule) -> float:
    mu = np.asarray(mu, dtype=float)
    return 1.0 / (float(mu @ mu) * schedule.delta_max)


def eta0_prime(mu, schedule: Schedule) -> float:
    mu = np.asarray(mu, dtype=float)
    m2 = float(mu @ mu)
    combined = (16 + 16 * math.exp(m2 / 2) + max(16.0, 8 * math.exp(m2))) / (
        m2 * math.exp(m2 / 8) * schedule.delta_min
    )
    # s1 >= 2 requirement; never binding in practice but kept for completeness
    for_s1 = (16 + 16 * math.exp(m2 / 8)) / (m2 * math.exp(m2 / 2) * schedule.delta_max)
    return max(combined, for_s1)


def _worst_h(v, ks, inputs):
    return max(phase_h(v, int(k), inputs) for k in ks)


def phase_thresholds(inputs: PhaseInputs) -> PhaseThresholds:
    e0 = eta0(inputs.mu, inputs.schedule)
    e0p = eta0_prime(inputs.mu, inputs.schedule)
    s0 = _s0(inputs)
    s1 = _s1(inputs)
    a = b = None
    ks = admissible_steps(inputs)
    if inputs.eta >= e0p and ks.size and s0 is not None and s0 >= 2 and s1 is not None and s1 >= 2:
        decays = inputs.decay(ks)
        a = math.acosh(s0 / 2.0) / decays.max()
        b_prime = math.acosh(s1 / 2.0) / decays.min()
        # beyond b' every h(., k) is decreasing, so the worst case over k crosses zero once
        if _worst_h(b_prime, ks, inputs) < 0:
            b = b_prime
        else:
            hi = max(b_prime, 1.0)
            while _worst_h(hi, ks, inputs) >= 0:
                hi *= 2.0
            b = bisect(lambda v: _worst_h(v, ks, inputs), b_prime, hi, xtol=1e-12, maxiter=500)
    return PhaseThresholds(e0, e0p, s0, s1, a, b)


def classify_phase(inputs: PhaseInputs) -> Phase:
    if inputs.eta <= eta0(inputs.mu, inputs.schedule):
        return Phase.CONVERGENT
    if inputs.eta >= eta0_prime(inputs.mu, inputs.schedule):
        return Phase.SPLITTING
    return Phase.INDETERMINATE
