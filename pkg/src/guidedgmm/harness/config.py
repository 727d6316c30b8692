"""Experiment manifests: YAML files, named presets and command-line overrides."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .. import gmm
from ..gmm import MixtureModel

SAMPLER_KINDS = ("ddim", "ddpm", "ddim-disc", "ddpm-disc")


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration (CLI exit code 2)."""


DEFAULTS: dict[str, Any] = {
    "model": {"preset": "symmetric_1d"},
    "guidance": {"etas": [0.0, 1.0, 2.0, 4.0, 8.0]},
    "sampler": {"kind": "ddim", "horizon": 10.0, "steps": 1000, "delta": None, "method": "rk4"},
    "init": None,
    "n_samples": 10000,
    "seed": 0,
    "out": "results",
    "emit": {"csv": True, "svg": False},
    "entropy": {"estimator": "auto"},
    "grid": {"size": 41, "extent": 3.0},
    "phase": {"deltas": [0.1, 0.04], "split_radius": None},
}

_SQ3 = math.sqrt(3.0)


def _aligned(mu, center_first=True):
    mu = list(map(float, mu))
    zero = [0.0] * len(mu)
    neg = [-v for v in mu]
    means = [zero, mu, neg] if center_first else [neg, zero, mu]
    return {"means": means, "label": 0 if center_first else 1}


PRESETS: dict[str, dict[str, Any]] = {
    "fig1": {
        "model": {"preset": "equidistant_2d"},
        "guidance": {"etas": [0.0, 1.0, 3.0, 10.0]},
        "init": "standard-gaussian",
        "emit": {"svg": True},
    },
    "fig2a": {
        "model": {"preset": "symmetric_1d"},
        "guidance": {"etas": [0.0, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]},
    },
    "fig2b": {
        "model": {"preset": "symmetric_1d"},
        "guidance": {"etas": [0.0, 1.0, 2.0, 4.0, 8.0]},
        "init": "standard-gaussian",
    },
    "fig4": {
        "model": {"preset": "aligned_three", "mu": [2.0, 2.0]},
        "guidance": {"etas": [0.0, 1.0, 5.0, 20.0, 30000.0, 60000.0]},
        "sampler": {"kind": "ddim-disc"},
        "init": "standard-gaussian",
        "n_samples": 2000,
        "phase": {"deltas": [0.1, 0.04]},
    },
    "figD1": {
        "model": _aligned([0.0, _SQ3, 0.0]),
        "guidance": {"etas": [0.0, 1.0, 10.0, 100.0, 1000.0, 10000.0]},
        "sampler": {"kind": "ddim-disc", "delta": 0.01},
        "init": "standard-gaussian",
        "phase": {"deltas": [0.01]},
    },
    "figD2": {
        "model": _aligned([3.0, 3.0]),
        "guidance": {"etas": [0.0, 1.0, 10.0, 100.0, 1000.0, 10000.0]},
        "sampler": {"kind": "ddim-disc", "delta": 0.01},
        "init": "standard-gaussian",
        "phase": {"deltas": [0.01]},
    },
    "figD3": {
        "model": _aligned([0.0, _SQ3, 0.0]),
        "guidance": {"etas": [0.0, 1.0, 10.0, 100.0, 1000.0, 10000.0]},
        "sampler": {"kind": "ddpm-disc", "delta": 0.01},
        "init": "standard-gaussian",
        "phase": {"deltas": [0.01]},
    },
    "figD4": {
        "model": _aligned([3.0, 3.0]),
        "guidance": {"etas": [0.0, 1.0, 10.0, 100.0, 1000.0, 10000.0]},
        "sampler": {"kind": "ddpm-disc", "delta": 0.01},
        "init": "standard-gaussian",
        "phase": {"deltas": [0.01]},
    },
    "figD5": {
        "model": {"means": [[0.0, 0.0], [0.5, 0.5], [4.0, 4.0]], "label": 1},
        "guidance": {"etas": [0.0, 1.0, 10.0, 100.0, 1000.0]},
        "sampler": {"kind": "ddpm-disc", "delta": 0.01},
        "init": "standard-gaussian",
    },
    "figD6": {
        "model": {"means": [[0.0, 0.0, 0.0], [0.5, 0.5, 0.0], [5.0, 5.0, 0.0]], "label": 1},
        "guidance": {"etas": [0.0, 1.0, 10.0, 100.0, 1000.0]},
        "sampler": {"kind": "ddim-disc", "delta": 0.01},
        "init": "standard-gaussian",
    },
    "figD7": {
        "model": {"means": [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], "label": 0},
        "guidance": {"etas": [0.0, 1.0, 3.0, 10.0]},
        "sampler": {"kind": "ddim"},
        "init": "standard-gaussian",
    },
    "figD8": {
        "model": {"means": [[0.0, 1.0], [_SQ3 / 2, -0.5], [-_SQ3 / 2, -0.5]], "label": 0},
        "guidance": {"etas": [0.0, 1.0, 2.0, 4.0, 8.0]},
        "entropy": {"estimator": "kde-mc"},
    },
}


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _key_lines(text: str) -> dict[str, int]:
    """1-based line of every top-level and second-level key, as ``a`` / ``a.b``."""
    lines: dict[str, int] = {}
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return lines
    if not isinstance(root, yaml.MappingNode):
        return lines
    for knode, vnode in root.value:
        lines[str(knode.value)] = knode.start_mark.line + 1
        if isinstance(vnode, yaml.MappingNode):
            for k2, _ in vnode.value:
                lines[f"{knode.value}.{k2.value}"] = k2.start_mark.line + 1
    return lines


def read_config_file(path: str | Path) -> tuple[dict, dict[str, int]]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigError(f"{path}: {where}: {getattr(exc, 'problem', exc)}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: line 1: top level must be a mapping")
    return data, _key_lines(text)


@dataclass
class ExperimentConfig:
    model: MixtureModel
    label: int
    etas: list[float]
    kind: str
    horizon: float
    steps: int | None
    delta: float | None
    method: str
    init: str | list[float] | None
    n_samples: int
    seed: int
    out: Path
    emit_csv: bool = True
    emit_svg: bool = False
    estimator: str = "auto"
    grid_size: int = 41
    grid_extent: float = 3.0
    phase_deltas: list[float] = field(default_factory=lambda: [0.1, 0.04])
    split_radius: float | None = None
    model_spec: dict = field(default_factory=dict)

    def schedule(self, delta: float | None = None):
        from ..dynamics import Schedule

        delta = self.delta if delta is None else delta
        if delta is not None:
            return Schedule.with_step(self.horizon, delta)
        return Schedule.uniform(self.horizon, self.steps)

    def initial_point(self, default: str = "origin"):
        """The fixed initial state, or ``None`` for standard-Gaussian draws.

        ``default`` applies when the configuration leaves ``init`` unset; each
        command passes the initial law its protocol calls for.
        """
        init = default if self.init is None else self.init
        if init == "standard-gaussian":
            return None
        if init == "origin":
            return np.zeros(self.model.dimension)
        return np.asarray(init, dtype=float)


def _fail(msg, key, lines, source):
    where = f"line {lines[key]}: " if key in lines else ""
    raise ConfigError(f"{source}: {where}{key}: {msg}")


def build_model(spec: dict, source="config", lines=None) -> tuple[MixtureModel, int]:
    lines = lines or {}
    spec = dict(spec)
    if "file" in spec:
        data, _ = read_config_file(spec.pop("file"))
        spec = _merge(data, spec)
    try:
        preset = spec.get("preset")
        if preset == "symmetric_1d":
            return gmm.symmetric_1d(), int(spec.get("label", 0))
        if preset == "equidistant_2d":
            return gmm.equidistant_2d(), int(spec.get("label", 0))
        if preset == "aligned_three":
            return gmm.aligned_three(spec.get("mu", [2.0, 2.0])), int(spec.get("label", 1))
        if preset is not None:
            _fail(f"unknown model preset {preset!r}", "model.preset", lines, source)
        if "means" not in spec:
            _fail("needs 'means' (or 'preset' / 'file')", "model", lines, source)
        means = np.asarray(spec["means"], dtype=float)
        if means.ndim != 2:
            _fail("'means' must be a list of vectors", "model.means", lines, source)
        K, d = means.shape
        weights = np.asarray(spec.get("weights", np.full(K, 1.0 / K)), dtype=float)
        cov = spec.get("covariance")
        cov = np.eye(d) if cov is None else np.asarray(cov, dtype=float)
        model = MixtureModel(weights, means, cov)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        _fail(str(exc), "model", lines, source)
    label = spec.get("label", 0)
    if not isinstance(label, int) or not 0 <= label < model.num_components:
        _fail(f"label must be an integer in [0, {model.num_components})", "model.label", lines, source)
    return model, label


def resolve(preset: str | None = None, path: str | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Defaults, then preset, then file, then flags; later layers win."""
    raw = copy.deepcopy(DEFAULTS)
    lines: dict[str, int] = {}
    source = "config"
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {', '.join(sorted(PRESETS))}")
        raw = _merge(raw, PRESETS[preset])
        source = f"preset {preset}"
    if path is not None:
        data, lines = read_config_file(path)
        unknown = sorted(set(data) - set(DEFAULTS))
        if unknown:
            _fail("unknown key", unknown[0], lines, str(path))
        if "model" in data:
            raw["model"] = data.pop("model")
        raw = _merge(raw, data)
        source = str(path)
    for k, v in (overrides or {}).items():
        if v is not None:
            raw[k] = v
    return _validate(raw, lines, source)


def _validate(raw: dict, lines: dict, source: str) -> ExperimentConfig:
    if not isinstance(raw["model"], dict):
        _fail("must be a mapping", "model", lines, source)
    model, label = build_model(raw["model"], source, lines)
    etas = raw["guidance"].get("etas")
    try:
        etas = [float(e) for e in etas]
    except (TypeError, ValueError):
        _fail("must be a list of numbers", "guidance.etas", lines, source)
    if not etas or any(not math.isfinite(e) or e < 0 for e in etas):
        _fail("needs at least one finite, non-negative strength", "guidance.etas", lines, source)
    smp = raw["sampler"]
    kind = smp.get("kind")
    if kind not in SAMPLER_KINDS:
        _fail(f"must be one of {', '.join(SAMPLER_KINDS)}", "sampler.kind", lines, source)
    horizon = smp.get("horizon")
    if not isinstance(horizon, (int, float)) or horizon <= 0:
        _fail("must be a positive number", "sampler.horizon", lines, source)
    delta = smp.get("delta")
    if delta is not None and (not isinstance(delta, (int, float)) or not 0 < delta <= horizon):
        _fail("must lie in (0, horizon]", "sampler.delta", lines, source)
    steps = smp.get("steps")
    if delta is None and (not isinstance(steps, int) or steps < 1):
        _fail("must be a positive integer", "sampler.steps", lines, source)
    method = smp.get("method", "rk4")
    if method not in ("rk4", "euler"):
        _fail("must be 'rk4' or 'euler'", "sampler.method", lines, source)
    init = raw["init"]
    if isinstance(init, list):
        if len(init) != model.dimension:
            _fail(f"initial point must have {model.dimension} entries", "init", lines, source)
    elif init not in (None, "origin", "standard-gaussian"):
        _fail("must be 'origin', 'standard-gaussian' or a point", "init", lines, source)
    n = raw["n_samples"]
    if not isinstance(n, int) or n < 1:
        _fail("must be a positive integer", "n_samples", lines, source)
    seed = raw["seed"]
    if not isinstance(seed, int) or seed < 0:
        _fail("a non-negative integer seed is required", "seed", lines, source)
    est = raw["entropy"].get("estimator", "auto")
    if est not in ("auto", "spacing-1d", "knn", "kde-mc"):
        _fail("must be auto, spacing-1d, knn or kde-mc", "entropy.estimator", lines, source)
    grid = raw["grid"]
    phase = raw["phase"]
    deltas = [float(x) for x in phase.get("deltas", [])]
    if any(x <= 0 for x in deltas):
        _fail("step sizes must be positive", "phase.deltas", lines, source)
    return ExperimentConfig(
        model=model,
        label=label,
        etas=etas,
        kind=kind,
        horizon=float(horizon),
        steps=steps,
        delta=None if delta is None else float(delta),
        method=method,
        init=init,
        n_samples=n,
        seed=seed,
        out=Path(raw["out"]),
        emit_csv=bool(raw["emit"].get("csv", True)),
        emit_svg=bool(raw["emit"].get("svg", False)),
        estimator=est,
        grid_size=int(grid.get("size", 41)),
        grid_extent=float(grid.get("extent", 3.0)),
        phase_deltas=deltas,
        split_radius=phase.get("split_radius"),
        model_spec=raw["model"],
    )
