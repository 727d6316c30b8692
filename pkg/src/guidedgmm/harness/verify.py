"""End-to-end property suite behind ``guidedgmm verify``.

Each check returns ``(passed, detail)``; the runner attaches the citation of
the result it exercises.  Sizes are kept small so the whole suite runs in a
few seconds; the acceptance tests repeat the same checks at full scale.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .. import dynamics, entropy, gmm, theory
from ..dynamics import Schedule

DOMINANCE_SLACK = 1e-8
BOUND_SLACK = 1e-6


@dataclass
class PropertyResult:
    name: str
    citation: str
    passed: bool
    detail: str
    seconds: float


def random_separated_model(rng: np.random.Generator, d: int, K: int, y: int = 0,
                           max_tries: int = 10000) -> gmm.MixtureModel:
    """Unit-sphere means and Dirichlet weights, redrawn until the near-orthogonality check holds for ``y``."""
    for _ in range(max_tries):
        mu = rng.standard_normal((K, d))
        mu /= np.linalg.norm(mu, axis=1, keepdims=True)
        w = rng.dirichlet(np.full(K, 2.0))
        model = gmm.MixtureModel.isotropic(mu, w)
        if gmm.check_assumption1(model, y).satisfied:
            return model
    raise RuntimeError(f"no admissible model found in {max_tries} draws (d={d}, K={K})")


def gradient_errors(rng: np.random.Generator, n_points: int = 100, h: float = 1e-5):
    """Worst relative error of the analytic gradients against central differences.

    The classifier gradient is looked up on the ``gmm`` module at call time so
    that a patched implementation is the one under test.
    """
    worst_score = worst_cls = 0.0
    for _ in range(n_points):
        K = int(rng.integers(2, 6))
        d = int(rng.integers(1, 17))
        A = rng.standard_normal((d, d))
        model = gmm.MixtureModel(rng.dirichlet(np.ones(K)), rng.standard_normal((K, d)),
                                 A @ A.T / d + 0.5 * np.eye(d))
        x = rng.standard_normal(d)
        t = float(rng.uniform(0.0, 5.0))
        y = int(rng.integers(K))
        fd_score = np.empty(d)
        fd_cls = np.empty(d)
        for i in range(d):
            e = np.zeros(d)
            e[i] = h
            fd_score[i] = (gmm.marginal_log_density(model, x + e, t, y)
                           - gmm.marginal_log_density(model, x - e, t, y)) / (2 * h)
            fd_cls[i] = (gmm.log_posterior(model, x + e, t)[y] - gmm.log_posterior(model, x - e, t)[y]) / (2 * h)
        score = gmm.conditional_score(model, x, y, t)
        cls = gmm.classifier_gradient(model, x, y, t)
        worst_score = max(worst_score, _rel(score, fd_score))
        worst_cls = max(worst_cls, _rel(cls, fd_cls))
    return worst_score, worst_cls


def _rel(a, b, floor=1e-3):
    # absolute error once gradients are tiny; central differences carry ~1e-10 roundoff
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), floor))


def coupled_checks(model, y, etas, x0, T, steps, kind, seed=0, n_paths=1):
    """Worst dominance gap over knots and worst ``final - bound`` over all coupled runs."""
    runs = dynamics.run_coupled(model, y, etas, x0, T, steps, kind, seed=seed, n_paths=n_paths)
    dm = steps.delta_max if isinstance(steps, Schedule) else 0.0
    dom = slack = math.inf
    degenerate = 0
    for r in runs:
        dom = min(dom, float(np.min(r.guided.confidence - r.unguided.confidence)))
        inp = theory.BoundInputs.from_baseline(model, y, r.guided.eta, T, r.unguided.confidence, delta_max=dm)
        b = theory.confidence_bound(inp, kind)
        degenerate += b.degenerate
        slack = min(slack, r.guided.final_confidence - b.bound)
    return dom, slack, degenerate


def _check_gradients():
    s, c = gradient_errors(np.random.default_rng(11), n_points=20)
    return s < 1e-6 and c < 1e-6, f"score rel err {s:.2e}, classifier-gradient rel err {c:.2e}"


def _models(seed=5):
    rng = np.random.default_rng(seed)
    return [random_separated_model(rng, 8, K) for K in (2, 3, 4)], rng


def _dominance(kind, steps, paths, two_cluster=False):
    def check():
        if two_cluster:
            models, rng = [gmm.symmetric_1d()], np.random.default_rng(6)
        else:
            models, rng = _models()
        worst_dom = worst_slack = math.inf
        for m in models:
            x0 = rng.standard_normal(m.dimension)
            dom, slack, _ = coupled_checks(m, 0, [0.0, 0.5, 2.0, 5.0], x0, 10.0, steps, kind, seed=1,
                                           n_paths=paths)
            worst_dom = min(worst_dom, dom)
            worst_slack = min(worst_slack, slack)
        ok = worst_dom >= -DOMINANCE_SLACK and worst_slack >= -BOUND_SLACK
        return ok, f"min conf gap {worst_dom:.3e}, min bound slack {worst_slack:.3e}"
    return check


def _check_entropy_reduction():
    model = gmm.symmetric_1d()
    est = []
    for eta in (0.0, 4.0):
        x = dynamics.sample_ensemble(model, 0, eta, 4000, 10.0, steps=100, seed=3)
        est.append(entropy.spacing_entropy_1d(x[:, 0]))
    drop = est[0].value - est[1].value
    se = math.hypot(est[0].stderr_proxy, est[1].stderr_proxy)
    return drop > 3 * se, f"H(eta=0) - H(eta=4) = {drop:.4f}, combined stderr {se:.4f}"


def _check_discrete_entropy():
    model = gmm.MixtureModel.isotropic(np.array([[1.0, 0.0], [0.0, 1.0]]))
    sched = Schedule.with_step(10.0, 0.01)
    cond = theory.entropy_step_condition(model, 1.0, sched)
    bad = theory.entropy_step_condition(model, 1.0, np.array([0.4])).holds
    est = []
    for eta in (0.0, 1.0):
        x = dynamics.sample_ensemble(model, 0, eta, 3000, 10.0, kind="ddim-disc", steps=sched, seed=4)
        est.append(entropy.knn_entropy(x))
    se = math.hypot(est[0].stderr_proxy, est[1].stderr_proxy)
    ok = cond.holds and not bad and est[1].value <= est[0].value + 3 * se
    return ok, (f"step condition holds={cond.holds}, coarse step rejected={not bad}, "
                f"H(1) - H(0) = {est[1].value - est[0].value:.4f} (3 stderr {3 * se:.4f})")


def _check_phase():
    mu = np.array([2.0, 2.0])
    sched = Schedule.with_step(10.0, 0.1)
    base = theory.PhaseInputs(mu, sched)
    ks = theory.admissible_steps(base)
    v = np.linspace(-10, 10, 1000)
    v = v[v != 0]
    weak = base.with_eta(1.0)
    conv = all(np.all(theory.phase_h(v, int(k), weak) * np.sign(v) < 0) for k in ks)
    th = theory.phase_thresholds(base)
    strong = base.with_eta(2 * th.eta0_prime)
    th2 = theory.phase_thresholds(strong)
    inner = np.linspace(0, th2.a, 201)[1:]
    outer = np.linspace(th2.b, 10 * th2.b, 201)[1:]
    split = all(np.all(theory.phase_h(inner, int(k), strong) > 0) and np.all(theory.phase_h(outer, int(k), strong) < 0)
                for k in ks)
    eta0_ok = math.isclose(th.eta0, 1.25, rel_tol=1e-12)
    ok = conv and split and eta0_ok
    return ok, (f"eta0 = {th.eta0:.6g}, eta0' = {th.eta0_prime:.6g}, convergent sign grid {conv}, "
                f"splitting sign grid {split} (a = {th2.a:.4g}, b = {th2.b:.4g})")


def _check_calibration():
    rng = np.random.default_rng(7)
    sp = entropy.spacing_entropy_1d(rng.standard_normal(10000)).value
    kn = entropy.knn_entropy(rng.standard_normal((10000, 2))).value
    g1 = entropy.gaussian_entropy(np.eye(1))
    g2 = entropy.gaussian_entropy(np.eye(2))
    ok = abs(sp - g1) < 0.05 and abs(kn - g2) < 0.08
    return ok, f"spacing {sp:.4f} vs {g1:.5f}, knn {kn:.4f} vs {g2:.5f}"


def _properties() -> list[tuple[str, str, Callable]]:
    disc = Schedule.with_step(10.0, 0.05)
    return [
        ("gradient-oracle", "score and classifier gradient used by Thm 3.1-3.8", _check_gradients),
        ("ddim-dominance-and-bound", "Thm 3.1, Thm 3.2", _dominance("ddim", 200, 1)),
        ("ddpm-dominance-and-bound", "Thm 3.3, Thm 3.4", _dominance("ddpm", 200, 20)),
        ("two-cluster-ddim", "Thm 3.7", _dominance("ddim", 200, 1, two_cluster=True)),
        ("two-cluster-ddpm", "Thm 3.8", _dominance("ddpm", 200, 20, two_cluster=True)),
        ("entropy-reduction", "Thm 4.2", _check_entropy_reduction),
        ("discrete-ddim-dominance-and-bound", "Thm 5.1", _dominance("ddim-disc", disc, 1)),
        ("discrete-entropy-conditions", "Thm 5.2", _check_discrete_entropy),
        ("discrete-ddpm-dominance-and-bound", "Thm 5.3", _dominance("ddpm-disc", disc, 20)),
        ("phase-h-sign-grid", "Prop 6.1 / Lemma C.3", _check_phase),
        ("estimator-calibration", "entropy estimators vs analytic Gaussian entropy", _check_calibration),
    ]


def run_suite() -> list[PropertyResult]:
    results = []
    for name, cite, fn in _properties():
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failed property, not a crashed suite
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(PropertyResult(name, cite, bool(ok), detail, time.perf_counter() - t0))
    return results


def write_report(results: list[PropertyResult], path: Path) -> Path:
    payload = {
        "passed": all(r.passed for r in results),
        "properties": [{k: v for k, v in asdict(r).items() if k != "seconds"} for r in results],
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2) + "\n")
    return path
