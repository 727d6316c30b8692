"""Guided and unguided reverse samplers for shared-covariance mixtures.

Four process kinds are supported:

``ddim``       probability-flow ODE, integrated with fixed-step Euler or RK4
``ddpm``       reverse SDE, Euler-Maruyama on a fixed grid
``ddim-disc``  the Euler-discretised DDIM update on an arbitrary schedule
``ddpm-disc``  the discretised DDPM update with injected Gaussian noise

Everything funnels through :func:`simulate_batch`, which integrates a batch of
paths whose guidance strengths, initial states and noise rows may differ per
row.  Coupled guided/unguided comparisons are batches whose rows share an
initial state and a noise-tape row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import gmm
from .gmm import MixtureModel

__all__ = [
    "Schedule",
    "NoiseTape",
    "Trajectory",
    "CoupledRun",
    "IntegrationError",
    "simulate_batch",
    "integrate_ddim",
    "integrate_ddpm",
    "run_discrete",
    "step_ddim_discrete",
    "step_ddpm_discrete",
    "run_coupled",
    "sample_ensemble",
]

KINDS = ("ddim", "ddpm", "ddim-disc", "ddpm-disc")
_NOISE_STREAM = 1
_INIT_STREAM = 2


class IntegrationError(FloatingPointError):
    """A path left the finite floats mid-integration."""


@dataclass(frozen=True)
class Schedule:
    """Time grid ``0 = t_0 < ... < t_K <= T`` for the backward samplers."""

    knots: np.ndarray
    horizon: float
    # exact step sizes when known; differences of rounded knots drift by an ulp
    step_sizes: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float).reshape(-1)
        if knots.size < 2 or knots[0] != 0.0:
            raise ValueError("schedule needs at least two knots starting at 0")
        if np.any(np.diff(knots) <= 0):
            raise ValueError("schedule steps must be strictly positive")
        if knots[-1] > self.horizon * (1 + 1e-12):
            raise ValueError(f"last knot {knots[-1]} exceeds horizon {self.horizon}")
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)
        steps = np.diff(knots) if self.step_sizes is None else np.asarray(self.step_sizes, dtype=float)
        if steps.shape != (knots.size - 1,) or np.max(np.abs(steps - np.diff(knots))) > 1e-9:
            raise ValueError("step sizes disagree with the knots")
        steps.setflags(write=False)
        object.__setattr__(self, "step_sizes", steps)
        object.__setattr__(self, "horizon", float(self.horizon))

    @classmethod
    def uniform(cls, T: float, K: int) -> "Schedule":
        if K < 1:
            raise ValueError("need at least one step")
        return cls(T * np.arange(K + 1) / K, T)

    @classmethod
    def with_step(cls, T: float, delta: float) -> "Schedule":
        """Constant step ``delta``; ``K = floor(T / delta)`` so that ``t_K <= T``."""
        if delta <= 0:
            raise ValueError("step size must be positive")
        K = int(math.floor(T / delta + 1e-9))
        return cls(delta * np.arange(K + 1), T, np.full(K, float(delta)))

    @classmethod
    def from_steps(cls, steps, T: float | None = None) -> "Schedule":
        steps = np.asarray(steps, dtype=float)
        knots = np.concatenate([[0.0], np.cumsum(steps)])
        return cls(knots, knots[-1] if T is None else T, steps)

    @property
    def steps(self) -> np.ndarray:
        return self.step_sizes

    @property
    def K(self) -> int:
        return self.knots.size - 1

    @property
    def delta_max(self) -> float:
        return float(self.steps.max())

    @property
    def delta_min(self) -> float:
        return float(self.steps.min())


class NoiseTape:
    """Counter-based standard-normal increments.

    The increment for ``(path, step)`` is row ``path`` of a stream keyed by
    ``(seed, step)``, so any subset of paths or steps can be regenerated
    independently and in any order.
    """

    def __init__(self, seed: int, zero: bool = False):
        self.seed = int(seed)
        self.zero = zero

    def __repr__(self):
        return f"NoiseTape(seed={self.seed}{', zero=True' if self.zero else ''})"

    def block(self, step: int, n_paths: int, d: int) -> np.ndarray:
        if self.zero:
            return np.zeros((n_paths, d))
        ss = np.random.SeedSequence([self.seed, _NOISE_STREAM, int(step)])
        return np.random.Generator(np.random.Philox(ss)).standard_normal((n_paths, d))

    def increment(self, path: int, step: int, d: int) -> np.ndarray:
        return self.block(step, path + 1, d)[path]

    def rows(self, step: int, paths: np.ndarray, d: int) -> np.ndarray:
        return self.block(step, int(paths.max()) + 1, d)[paths]


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray | None
    confidence: np.ndarray
    label: int
    eta: float
    kind: str
    final_state: np.ndarray

    @property
    def final_confidence(self) -> float:
        return float(self.confidence[-1])


@dataclass
class CoupledRun:
    guided: Trajectory
    unguided: Trajectory
    shared_init: np.ndarray
    shared_noise: NoiseTape | None
    path: int = 0


def _tau(T, t):
    return max(T - t, 0.0)


def _conf(model, x, y):
    z = gmm._logits(model, x, 0.0)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e[..., y] / e.sum(axis=-1)


def _guard(x, conf, etas, k, kind):
    bad = ~np.all(np.isfinite(x), axis=-1) | ~np.isfinite(conf)
    if np.any(bad):
        row = int(np.argmax(bad))
        raise IntegrationError(
            f"{kind}: non-finite state or confidence at step {k} (row {row}, eta={float(etas[row])!r})"
        )


def simulate_batch(
    model: MixtureModel,
    y: int,
    etas,
    x0,
    schedule: Schedule,
    kind: str = "ddim",
    *,
    T: float | None = None,
    method: str = "rk4",
    noise: NoiseTape | None = None,
    paths=None,
    keep_states: bool = False,
):
    """Integrate a batch of paths on ``schedule``.

    Parameters
    ----------
    etas : array (B,)
        Guidance strength per row.
    x0 : array (B, d)
        Initial state per row.
    paths : array (B,) of int, optional
        Noise-tape row used by each batch row (stochastic kinds only).
        Rows sharing a path index receive identical increments.

    Returns
    -------
    final : (B, d) terminal states
    conf : (K + 1, B) confidence of the guided label at every knot
    states : (K + 1, B, d) or None
    """
    if kind not in KINDS:
        raise ValueError(f"unknown process kind {kind!r}; expected one of {KINDS}")
    if method not in ("euler", "rk4"):
        raise ValueError(f"unknown method {method!r}")
    y = gmm._check_label(model, y, "simulate_batch")
    T = schedule.horizon if T is None else float(T)
    x = np.array(x0, dtype=float, copy=True)
    if x.ndim != 2 or x.shape[1] != model.dimension:
        raise ValueError(f"x0 must have shape (B, {model.dimension}), got {x.shape}")
    B, d = x.shape
    etas = np.broadcast_to(np.asarray(etas, dtype=float), (B,))
    if np.any(etas < 0):
        raise ValueError("guidance strength must be non-negative")
    eta_col = etas[:, None]
    gmm._check_x(x, kind)
    stochastic = kind.startswith("ddpm")
    if stochastic:
        if noise is None:
            raise ValueError(f"{kind} needs a NoiseTape")
        paths = np.zeros(B, dtype=int) if paths is None else np.broadcast_to(np.asarray(paths, dtype=int), (B,))
    use_rk4 = kind == "ddim" and method == "rk4"

    knots, widths = schedule.knots, schedule.steps
    K = schedule.K
    conf = np.empty((K + 1, B))
    conf[0] = _conf(model, x, y)
    states = None
    if keep_states:
        states = np.empty((K + 1, B, d))
        states[0] = x

    def f(xs, t):
        tau = _tau(T, t)
        if stochastic:
            return gmm.drift_ddpm(model, xs, y, eta_col, tau)
        return gmm.drift_ddim(model, xs, y, eta_col, tau)

    # overflow surfaces as a non-finite state or confidence, reported by _guard
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(K):
            t, h = knots[k], widths[k]
            if use_rk4:
                k1 = f(x, t)
                k2 = f(x + 0.5 * h * k1, t + 0.5 * h)
                k3 = f(x + 0.5 * h * k2, t + 0.5 * h)
                k4 = f(x + h * k3, t + h)
                x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            else:
                x = x + h * f(x, t)
            if stochastic:
                x = x + math.sqrt(2.0 * h) * noise.rows(k, paths, d)
            conf[k + 1] = _conf(model, x, y)
            _guard(x, conf[k + 1], etas, k, kind)
            if keep_states:
                states[k + 1] = x
    return x, conf, states


def _trajectory(schedule, states, conf, final, y, eta, kind):
    return Trajectory(schedule.knots, states, conf, y, float(eta), kind, final)


def _single(model, y, eta, x0, schedule, kind, T, method, noise, path, keep_states, label):
    x0 = np.asarray(x0, dtype=float).reshape(1, -1)
    final, conf, states = simulate_batch(
        model, y, [eta], x0, schedule, kind, T=T, method=method, noise=noise,
        paths=[path], keep_states=keep_states,
    )
    return _trajectory(
        schedule, None if states is None else states[:, 0], conf[:, 0], final[0], y, eta, label
    )


def _as_schedule(steps, T):
    if isinstance(steps, Schedule):
        return steps
    return Schedule.uniform(T, int(steps))


def integrate_ddim(model, y, eta, x0, T, n_substeps=1000, method="rk4", keep_states=True) -> Trajectory:
    """Fine fixed-step solution of the guided probability-flow ODE on ``[0, T]``."""
    if n_substeps < 1:
        raise ValueError("n_substeps must be >= 1")
    sched = Schedule.uniform(T, n_substeps)
    return _single(model, y, eta, x0, sched, "ddim", T, method, None, 0, keep_states, "ddim-cont")


def integrate_ddpm(model, y, eta, x0, T, steps=1000, noise: NoiseTape | None = None, path=0,
                   keep_states=True) -> Trajectory:
    """Euler-Maruyama solution of the guided reverse SDE driven by ``noise``."""
    if noise is None:
        raise ValueError("integrate_ddpm needs an explicit NoiseTape")
    sched = _as_schedule(steps, T)
    return _single(model, y, eta, x0, sched, "ddpm", T, "euler", noise, path, keep_states, "ddpm-cont")


def run_discrete(model, y, eta, x0, schedule: Schedule, kind="ddim", T=None, noise=None, path=0,
                 keep_states=True) -> Trajectory:
    """Iterate the discretised DDIM or DDPM update over ``schedule``."""
    if kind not in ("ddim", "ddpm"):
        raise ValueError("kind must be 'ddim' or 'ddpm'")
    return _single(model, y, eta, x0, schedule, f"{kind}-disc", T, "euler", noise, path, keep_states,
                   f"{kind}-disc")


def _step_args(model, y, eta, X_k, k, schedule, T):
    if not 0 <= k < schedule.K:
        raise IndexError(f"step index {k} outside [0, {schedule.K})")
    if eta < 0:
        raise ValueError("guidance strength must be non-negative")
    X_k = gmm._check_x(X_k, "discrete step")
    T = schedule.horizon if T is None else float(T)
    return X_k, float(schedule.steps[k]), _tau(T, schedule.knots[k])


def step_ddim_discrete(model, y, eta, X_k, k, schedule: Schedule, T=None) -> np.ndarray:
    """``X_{k+1} = X_k + delta_k (X_k + score + eta * classifier gradient)`` at ``T - t_k``."""
    X_k, delta, tau = _step_args(model, y, eta, X_k, k, schedule, T)
    return X_k + delta * gmm.guided_drift_ddim(model, X_k, y, eta, tau).drift


def step_ddpm_discrete(model, y, eta, X_k, k, schedule: Schedule, T=None, w_k=None) -> np.ndarray:
    X_k, delta, tau = _step_args(model, y, eta, X_k, k, schedule, T)
    w_k = np.zeros_like(X_k) if w_k is None else np.asarray(w_k, dtype=float)
    return X_k + delta * gmm.guided_drift_ddpm(model, X_k, y, eta, tau).drift + math.sqrt(2.0 * delta) * w_k


def run_coupled(model, y, etas, init, T, steps=1000, kind="ddim", seed=0, n_paths=1, method="rk4",
                keep_states=False) -> list[CoupledRun]:
    """Guided runs paired with the ``eta = 0`` baseline under shared init and noise.

    ``init`` is a single state or one state per path.  Each of the ``n_paths``
    paths uses its own noise-tape row; all strengths on that path share it.
    The result holds one :class:`CoupledRun` per (path, eta), path-major.
    """
    etas = [float(e) for e in etas]
    if 0.0 not in etas:
        raise ValueError("etas must include 0, the unguided baseline")
    sched = _as_schedule(steps, T)
    d = model.dimension
    init = np.asarray(init, dtype=float)
    inits = np.broadcast_to(init.reshape(-1, d), (n_paths, d))
    E = len(etas)
    x0 = np.repeat(inits, E, axis=0)
    eta_rows = np.tile(etas, n_paths)
    path_rows = np.repeat(np.arange(n_paths), E)
    stochastic = kind.startswith("ddpm")
    tape = NoiseTape(seed) if stochastic else None
    final, conf, states = simulate_batch(
        model, y, eta_rows, x0, sched, kind, T=T, method=method, noise=tape, paths=path_rows,
        keep_states=keep_states,
    )
    label = kind if kind.endswith("disc") else f"{kind}-cont"
    base_idx = etas.index(0.0)
    runs = []
    for p in range(n_paths):
        trajs = []
        for j, eta in enumerate(etas):
            r = p * E + j
            trajs.append(_trajectory(sched, None if states is None else states[:, r], conf[:, r],
                                     final[r], y, eta, label))
        for j in range(E):
            runs.append(CoupledRun(trajs[j], trajs[base_idx], inits[p].copy(), tape, p))
    return runs


def initial_states(d, n, seed, init=None):
    """``n`` initial states: a point mass at ``init`` or, if ``None``, standard Gaussian draws."""
    if init is None:
        ss = np.random.SeedSequence([int(seed), _INIT_STREAM])
        return np.random.Generator(np.random.Philox(ss)).standard_normal((n, d))
    init = np.asarray(init, dtype=float).reshape(-1)
    if init.size != d:
        raise ValueError(f"initial state has length {init.size}, expected {d}")
    return np.tile(init, (n, 1))


def sample_ensemble(model, y, eta, n, T, kind="ddim", steps=1000, method="rk4", init=None, seed=0,
                    chunk=20000) -> np.ndarray:
    """Terminal states of ``n`` independent paths.

    ``steps`` is a substep count (uniform grid) or a :class:`Schedule`.
    ``init`` of ``None`` draws the initial law ``N(0, I_d)`` from ``seed``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    sched = _as_schedule(steps, T)
    x0 = initial_states(model.dimension, n, seed, init)
    tape = NoiseTape(seed) if kind.startswith("ddpm") else None
    out = np.empty_like(x0)
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        out[lo:hi], _, _ = simulate_batch(
            model, y, eta, x0[lo:hi], sched, kind, T=T, method=method, noise=tape,
            paths=np.arange(lo, hi),
        )
    return out
