"""Experiment commands.  Each returns the list of files it wrote."""

from __future__ import annotations

import itertools
import math
from pathlib import Path

import numpy as np

from .. import dynamics, entropy, theory
from ..dynamics import NoiseTape, simulate_batch
from .config import ConfigError, ExperimentConfig
from .output import svg_lines, svg_scatter, write_csv

CONFIDENCE_HEADER = ["eta", "ddim_conf", "ddpm_mean", "ddpm_q025", "ddpm_q975", "n", "seed"]
ENTROPY_HEADER = ["eta", "entropy", "stderr_proxy", "estimator", "n", "seed"]
PHASE_HEADER = ["eta", "delta", "phase", "eta0", "eta0_prime", "a", "b", "frac_split", "sign_balance",
                "n", "seed"]


def _coords(d):
    return [f"x{i + 1}" for i in range(d)]


def _pair_kinds(kind):
    suffix = "-disc" if kind.endswith("-disc") else ""
    return "ddim" + suffix, "ddpm" + suffix


def _initial_states(cfg: ExperimentConfig, default: str):
    point = cfg.initial_point(default)
    return dynamics.initial_states(cfg.model.dimension, cfg.n_samples, cfg.seed, point)


def cmd_simulate(cfg: ExperimentConfig) -> list[Path]:
    """Coupled guided/unguided runs: terminal confidences, the worst knot-wise gap, terminal states."""
    etas = sorted(set(cfg.etas) | {0.0})
    x0 = _initial_states(cfg, "origin")
    runs = dynamics.run_coupled(
        cfg.model, cfg.label, etas, x0, cfg.horizon, steps=cfg.schedule(), kind=cfg.kind,
        seed=cfg.seed, n_paths=cfg.n_samples, method=cfg.method,
    )
    keep = set(cfg.etas)
    rows = []
    for run in runs:
        g = run.guided
        if g.eta not in keep:
            continue
        gap = float(np.min(g.confidence - run.unguided.confidence))
        rows.append([g.eta, run.path, g.final_confidence, run.unguided.final_confidence, gap,
                     *g.final_state])
    rows.sort(key=lambda r: (r[0], r[1]))
    header = ["eta", "path", "conf_T", "conf_unguided_T", "min_conf_gap", *_coords(cfg.model.dimension)]
    return [write_csv(cfg.out / "simulate.csv", header, rows)]


def confidence_rows(cfg: ExperimentConfig) -> list[list]:
    point = cfg.initial_point("origin")
    if point is None:
        raise ConfigError("confidence-sweep starts every path from one point; set init to a point or 'origin'")
    ddim_kind, ddpm_kind = _pair_kinds(cfg.kind)
    sched = cfg.schedule()
    etas = np.asarray(cfg.etas)
    E, n = etas.size, cfg.n_samples
    x0 = np.tile(point, (E, 1))
    _, ddim_conf, _ = simulate_batch(cfg.model, cfg.label, etas, x0, sched, ddim_kind, T=cfg.horizon,
                                     method=cfg.method)
    tape = NoiseTape(cfg.seed)
    rows = []
    for j, eta in enumerate(etas):
        # each strength reuses the same noise rows, so the columns are coupled across eta
        _, conf, _ = simulate_batch(
            cfg.model, cfg.label, eta, np.tile(point, (n, 1)), sched, ddpm_kind, T=cfg.horizon,
            noise=tape, paths=np.arange(n),
        )
        term = conf[-1]
        rows.append([float(eta), float(ddim_conf[-1, j]), float(term.mean()),
                     float(np.quantile(term, 0.025)), float(np.quantile(term, 0.975)), n, cfg.seed])
    return rows


def cmd_confidence_sweep(cfg: ExperimentConfig) -> list[Path]:
    rows = confidence_rows(cfg)
    files = [write_csv(cfg.out / "confidence_sweep.csv", CONFIDENCE_HEADER, rows)]
    if cfg.emit_svg:
        cols = list(zip(*rows))
        files.append(svg_lines(cfg.out / "confidence_sweep.svg", cols[0], {
            "ddim": cols[1], "ddpm mean": cols[2], "ddpm q2.5": cols[3], "ddpm q97.5": cols[4]}))
    return files


def estimate_entropy(samples: np.ndarray, estimator: str) -> entropy.EntropyEstimate:
    d = samples.shape[1]
    if estimator == "auto":
        estimator = "spacing-1d" if d == 1 else "kde-mc"
    if estimator == "spacing-1d":
        if d != 1:
            raise ConfigError("the spacing estimator needs one-dimensional samples")
        return entropy.spacing_entropy_1d(samples[:, 0])
    if estimator == "knn":
        return entropy.knn_entropy(samples)
    return entropy.kde_mc_entropy(samples)


def entropy_rows(cfg: ExperimentConfig) -> list[list]:
    point = cfg.initial_point("standard-gaussian")
    rows = []
    for eta in cfg.etas:
        x = dynamics.sample_ensemble(cfg.model, cfg.label, eta, cfg.n_samples, cfg.horizon, kind=cfg.kind,
                                     steps=cfg.schedule(), method=cfg.method, init=point, seed=cfg.seed)
        est = estimate_entropy(x, cfg.estimator)
        rows.append([eta, est.value, est.stderr_proxy, est.estimator, est.n, cfg.seed])
    return rows


def cmd_entropy_sweep(cfg: ExperimentConfig) -> list[Path]:
    rows = entropy_rows(cfg)
    files = [write_csv(cfg.out / "entropy_sweep.csv", ENTROPY_HEADER, rows)]
    if cfg.emit_svg:
        cols = list(zip(*rows))
        files.append(svg_lines(cfg.out / "entropy_sweep.svg", cols[0], {"entropy": cols[1]}))
    return files


def cmd_density_grid(cfg: ExperimentConfig) -> list[Path]:
    """Terminal ensembles per strength, plus a KDE evaluated on a regular grid when d <= 3."""
    d = cfg.model.dimension
    point = cfg.initial_point("standard-gaussian")
    sample_rows, grid_rows, panels = [], [], []
    size = cfg.grid_size if d < 3 else min(cfg.grid_size, 21)
    axis = np.linspace(-cfg.grid_extent, cfg.grid_extent, size)
    grid = np.array(list(itertools.product(axis, repeat=d))) if d <= 3 else None
    for eta in cfg.etas:
        x = dynamics.sample_ensemble(cfg.model, cfg.label, eta, cfg.n_samples, cfg.horizon, kind=cfg.kind,
                                     steps=cfg.schedule(), method=cfg.method, init=point, seed=cfg.seed)
        sample_rows.extend([eta, i, *x[i]] for i in range(x.shape[0]))
        if grid is not None:
            h = entropy.scott_bandwidth(x)
            if np.all(h > 0):
                dens = np.exp(entropy.kde_log_density(grid, x, h))
            else:
                dens = np.full(grid.shape[0], math.nan)
            grid_rows.extend([eta, *g, v] for g, v in zip(grid, dens))
        if d <= 3:
            pts = x[:, :2] if d >= 2 else np.column_stack([x[:, 0], np.zeros(x.shape[0])])
            panels.append((f"eta = {eta:g}", pts))
    files = [write_csv(cfg.out / "density_samples.csv", ["eta", "sample_id", *_coords(d)], sample_rows)]
    if grid is not None:
        header = ["eta", *[f"g{i + 1}" for i in range(d)], "kde_value"]
        files.append(write_csv(cfg.out / "density_grid.csv", header, grid_rows))
    if cfg.emit_svg and panels:
        files.append(svg_scatter(cfg.out / "density.svg", panels))
    return files


def aligned_center(model) -> tuple[np.ndarray, int]:
    """Side mean ``mu`` and center label of ``N(-mu, I)/3 + N(0, I)/3 + N(mu, I)/3``.

    Raises :class:`ConfigError` for any other model, since the phase analysis
    only covers this aligned family.
    """
    why = None
    if model.num_components != 3:
        why = "three components required"
    elif not np.allclose(model.weights, 1.0 / 3.0, atol=1e-12):
        why = "equal weights required"
    elif not np.allclose(model.covariance, np.eye(model.dimension), atol=1e-12):
        why = "identity covariance required"
    else:
        norms = np.linalg.norm(model.means, axis=1)
        c = int(np.argmin(norms))
        sides = [j for j in range(3) if j != c]
        mu = model.means[sides[0]]
        if norms[c] > 1e-12 or not np.allclose(model.means[sides[1]], -mu, atol=1e-12):
            why = "means must be -mu, 0, mu"
    if why:
        raise ConfigError(
            "phase-scan needs the aligned model N(-mu, I)/3 + N(0, I)/3 + N(mu, I)/3 guided to its "
            f"center component: {why}"
        )
    return mu.copy(), c


def phase_rows(cfg: ExperimentConfig) -> list[list]:
    mu, center = aligned_center(cfg.model)
    if cfg.label != center:
        raise ConfigError(f"phase-scan guides the center component (label {center}), got label {cfg.label}")
    base = cfg.kind.split("-")[0] + "-disc"
    norm = float(np.linalg.norm(mu))
    radius = norm / 2.0 if cfg.split_radius is None else float(cfg.split_radius)
    point = cfg.initial_point("standard-gaussian")
    rows = []
    for delta in cfg.phase_deltas:
        sched = dynamics.Schedule.with_step(cfg.horizon, delta)
        for eta in cfg.etas:
            inp = theory.PhaseInputs(mu, sched, eta=eta, horizon=cfg.horizon)
            th = theory.phase_thresholds(inp)
            x = dynamics.sample_ensemble(cfg.model, center, eta, cfg.n_samples, cfg.horizon, kind=base,
                                         steps=sched, init=point, seed=cfg.seed)
            proj = x @ mu / norm
            rows.append([
                eta, delta, theory.classify_phase(inp).value, th.eta0, th.eta0_prime, th.a, th.b,
                float(np.mean(np.abs(proj) > radius)), float(np.mean(proj > 0)), cfg.n_samples, cfg.seed,
            ])
    return rows


def cmd_phase_scan(cfg: ExperimentConfig) -> list[Path]:
    return [write_csv(cfg.out / "phase_scan.csv", PHASE_HEADER, phase_rows(cfg))]
