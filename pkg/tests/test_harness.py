import csv
import json
import math

import numpy as np
import pytest

from guidedgmm import gmm
from guidedgmm.dynamics import sample_ensemble
from guidedgmm.entropy import gaussian_entropy
from guidedgmm.harness import PRESETS, ConfigError, resolve
from guidedgmm.harness.cli import main
from guidedgmm.harness.commands import CONFIDENCE_HEADER, ENTROPY_HEADER, PHASE_HEADER, aligned_center
from guidedgmm.harness.output import fmt, write_csv

SMALL = """\
n_samples: 150
guidance:
  etas: [0, 1, 4]
sampler:
  steps: 80
"""


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def read_csv(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


# ---- config ------------------------------------------------------------------------------

def test_every_preset_resolves():
    for name in PRESETS:
        cfg = resolve(preset=name)
        assert cfg.etas and all(e >= 0 for e in cfg.etas)
    assert resolve(preset="fig2a").model.num_components == 2
    assert resolve(preset="fig4").kind == "ddim-disc"


def test_flags_override_file(tmp_path):
    path = write(tmp_path, "c.yaml", SMALL + "seed: 3\nout: here\n")
    cfg = resolve(path=path, overrides={"seed": 9, "out": str(tmp_path / "x")})
    assert cfg.seed == 9 and str(cfg.out).endswith("x")
    assert cfg.n_samples == 150 and cfg.steps == 80


def test_inline_model_schema(tmp_path):
    path = write(tmp_path, "m.yaml", """\
model:
  weights: [0.25, 0.75]
  means: [[1, 0], [0, 1]]
  covariance: [[1, 0], [0, 1]]
  label: 1
""")
    cfg = resolve(path=path)
    assert cfg.label == 1
    np.testing.assert_allclose(cfg.model.weights, [0.25, 0.75])


def test_model_file_reference(tmp_path):
    write(tmp_path, "model.yaml", "weights: [0.5, 0.5]\nmeans: [[2.0], [-2.0]]\n")
    path = write(tmp_path, "c.yaml", f"model:\n  file: {tmp_path / 'model.yaml'}\n  label: 1\n")
    cfg = resolve(path=path)
    assert cfg.model.means[0, 0] == 2.0 and cfg.label == 1


@pytest.mark.parametrize("text, needle", [
    ("seed: [1\n", "line 2"),
    ("sampler:\n  kind: rk9\n", "line 2: sampler.kind"),
    ("guidance:\n  etas: [-1]\n", "line 2: guidance.etas"),
    ("guidance:\n  etas: []\n", "guidance.etas"),
    ("bogus: 1\n", "line 1: bogus"),
    ("seed: -2\n", "seed"),
    ("model:\n  means: [[0, 0], [1]]\n", "model"),
    ("model:\n  means: [[1.0], [2.0]]\n  label: 5\n", "model.label"),
    ("init: [1, 2]\n", "init"),
])
def test_config_errors_have_locations(tmp_path, text, needle):
    with pytest.raises(ConfigError, match=needle.replace(".", r"\.")):
        resolve(path=write(tmp_path, "bad.yaml", text))


def test_unknown_preset():
    with pytest.raises(ConfigError):
        resolve(preset="fig99")


# ---- output ------------------------------------------------------------------------------

def test_float_format_round_trips():
    for v in (0.1, 1 / 3, 1e-300, 12345.678901234567, -2.5e17):
        assert float(fmt(v)) == v
    assert fmt(3) == "3" and fmt(None) == "" and fmt(np.float64(0.5)) == "0.5"


def test_write_csv_checks_width(tmp_path):
    with pytest.raises(ValueError):
        write_csv(tmp_path / "x.csv", ["a", "b"], [[1]])


# ---- commands ----------------------------------------------------------------------------

@pytest.mark.parametrize("command, files", [
    ("simulate", ["simulate.csv"]),
    ("confidence-sweep", ["confidence_sweep.csv"]),
    ("entropy-sweep", ["entropy_sweep.csv"]),
    ("density-grid", ["density_samples.csv", "density_grid.csv"]),
])
def test_commands_are_byte_deterministic(tmp_path, command, files):
    cfg = write(tmp_path, "c.yaml", SMALL)
    for out in ("a", "b"):
        assert main([command, "--config", cfg, "--out", str(tmp_path / out)]) == 0
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert main([command, "--config", cfg, "--seed", "1", "--out", str(tmp_path / "c")]) == 0
    assert (tmp_path / "c" / files[0]).exists()


def test_confidence_sweep_rows(tmp_path):
    cfg = write(tmp_path, "c.yaml", "n_samples: 400\nguidance:\n  etas: [0, 0.5, 1, 2, 4, 8]\n")
    assert main(["--config", cfg, "--out", str(tmp_path), "confidence-sweep"]) == 0
    header, rows = read_csv(tmp_path / "confidence_sweep.csv")
    assert header == CONFIDENCE_HEADER
    ddim = [float(r[1]) for r in rows]
    assert ddim[0] == pytest.approx(1 / (1 + math.exp(-2 * (1 - math.exp(-10)))), abs=1e-8)
    assert ddim[0] == pytest.approx(0.8808, abs=1e-4)
    assert np.all(np.diff(ddim) >= -1e-8)
    for r in rows:
        q025, mean, q975 = float(r[3]), float(r[2]), float(r[4])
        assert q025 <= mean <= q975
        assert r[5] == "400" and r[6] == "0"


def test_entropy_sweep_single_component_control(tmp_path):
    cfg = write(tmp_path, "c.yaml", """\
model:
  means: [[1.5]]
  covariance: [[4.0]]
guidance:
  etas: [0]
n_samples: 4000
sampler:
  steps: 200
""")
    assert main(["entropy-sweep", "--config", cfg, "--out", str(tmp_path)]) == 0
    header, rows = read_csv(tmp_path / "entropy_sweep.csv")
    assert header == ENTROPY_HEADER
    assert rows[0][3] == "spacing-1d"
    assert float(rows[0][1]) == pytest.approx(gaussian_entropy([[4.0]]), abs=0.1)


def test_entropy_sweep_reduction_symmetric(tmp_path):
    cfg = write(tmp_path, "c.yaml", "n_samples: 3000\nguidance:\n  etas: [0, 8]\nsampler:\n  steps: 100\n")
    assert main(["entropy-sweep", "--config", cfg, "--out", str(tmp_path)]) == 0
    _, rows = read_csv(tmp_path / "entropy_sweep.csv")
    (h0, s0), (h8, s8) = [(float(r[1]), float(r[2])) for r in rows]
    assert h0 - h8 > 3 * math.hypot(s0, s8)


def test_density_grid_outputs(tmp_path):
    cfg = write(tmp_path, "c.yaml", """\
model:
  preset: equidistant_2d
guidance:
  etas: [0]
n_samples: 2000
sampler:
  steps: 100
grid:
  size: 9
""")
    assert main(["density-grid", "--config", cfg, "--out", str(tmp_path / "plain")]) == 0
    assert not (tmp_path / "plain" / "density.svg").exists()
    header, rows = read_csv(tmp_path / "plain" / "density_samples.csv")
    assert header == ["eta", "sample_id", "x1", "x2"] and len(rows) == 2000
    x = np.array([[float(v) for v in r[2:]] for r in rows])
    ref = sample_ensemble(gmm.equidistant_2d(), 0, 0.0, 2000, 10.0, steps=1000, seed=0)
    se = np.sqrt(x.var(axis=0) / 2000 + ref.var(axis=0) / 2000)
    assert np.all(np.abs(x.mean(axis=0) - ref.mean(axis=0)) < 4 * se)
    gh, grows = read_csv(tmp_path / "plain" / "density_grid.csv")
    assert gh == ["eta", "g1", "g2", "kde_value"] and len(grows) == 81
    assert main(["density-grid", "--config", cfg, "--out", str(tmp_path / "svg"), "--preset", "fig1"]) == 0
    assert (tmp_path / "svg" / "density.svg").read_text().startswith("<svg")


def test_density_grid_high_dimension_skips_plots(tmp_path):
    cfg = write(tmp_path, "c.yaml", """\
model:
  means: [[1, 0, 0, 0], [0, 1, 0, 0]]
guidance:
  etas: [1]
n_samples: 30
sampler:
  steps: 20
emit:
  svg: true
""")
    assert main(["density-grid", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert (tmp_path / "density_samples.csv").exists()
    assert not (tmp_path / "density_grid.csv").exists()
    assert not (tmp_path / "density.svg").exists()


def test_phase_scan(tmp_path):
    cfg = write(tmp_path, "c.yaml", """\
model:
  preset: aligned_three
  mu: [2, 2]
guidance:
  etas: [0, 1, 23000]
n_samples: 300
phase:
  deltas: [0.1]
""")
    for out in ("a", "b"):
        assert main(["phase-scan", "--config", cfg, "--out", str(tmp_path / out)]) == 0
    assert (tmp_path / "a" / "phase_scan.csv").read_bytes() == (tmp_path / "b" / "phase_scan.csv").read_bytes()
    header, rows = read_csv(tmp_path / "a" / "phase_scan.csv")
    assert header == PHASE_HEADER
    assert float(rows[0][3]) == 1.25
    assert rows[0][2] == "Convergent" and rows[1][2] == "Convergent"
    assert rows[2][2] == "Splitting" and float(rows[2][5]) > 0 and float(rows[2][6]) > 0
    assert rows[0][5] == "" and rows[0][6] == ""
    assert float(rows[2][7]) > 0.9 and 0.3 <= float(rows[2][8]) <= 0.7


def test_phase_scan_refuses_other_models(tmp_path, capsys):
    cfg = write(tmp_path, "c.yaml", SMALL)
    assert main(["phase-scan", "--config", cfg, "--out", str(tmp_path)]) == 2
    assert "aligned" in capsys.readouterr().err
    with pytest.raises(ConfigError):
        aligned_center(gmm.MixtureModel.isotropic(np.array([[1.0, 0.0], [0.0, 0.0], [-1.0, 0.1]])))
    mu, c = aligned_center(gmm.aligned_three([1.0, 3.0]))
    assert c == 1 and np.allclose(np.abs(mu), [1.0, 3.0])


def test_confidence_sweep_needs_point_init(tmp_path):
    cfg = write(tmp_path, "c.yaml", SMALL + "init: standard-gaussian\n")
    assert main(["confidence-sweep", "--config", cfg, "--out", str(tmp_path)]) == 2


def test_cli_usage_errors():
    assert main([]) == 2
    assert main(["nonsense"]) == 2
    assert main(["simulate", "--preset", "nope"]) == 2


# ---- verify ------------------------------------------------------------------------------

def test_verify_passes_and_reports(tmp_path, capsys):
    assert main(["verify", "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "verify.json").read_text())
    assert report["passed"]
    cites = " ".join(p["citation"] for p in report["properties"])
    for tag in ("3.1", "3.2", "3.3", "3.4", "3.7", "3.8", "4.2", "5.1", "5.2", "5.3", "6.1", "C.3"):
        assert tag in cites
    assert "PASS" in capsys.readouterr().out


def test_verify_catches_gradient_sign_error(monkeypatch):
    original = gmm.classifier_gradient
    monkeypatch.setattr(gmm, "classifier_gradient", lambda *a, **k: -original(*a, **k))
    from guidedgmm.harness import verify

    results = {r.name: r for r in verify.run_suite()}
    assert not results["gradient-oracle"].passed
    assert main(["verify"]) == 1
