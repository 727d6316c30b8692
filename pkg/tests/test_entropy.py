import math
import warnings

import numpy as np
import pytest
from scipy.stats import differential_entropy

from guidedgmm.entropy import (
    DegenerateSampleWarning,
    gaussian_entropy,
    kde_log_density,
    kde_mc_entropy,
    knn_entropy,
    scott_bandwidth,
    spacing_entropy_1d,
)

H1 = 0.5 * math.log(2 * math.pi * math.e)


def ci(a, b):
    return 3 * math.hypot(a.stderr_proxy, b.stderr_proxy)


def test_gaussian_entropy_examples():
    assert gaussian_entropy(np.eye(1)) == pytest.approx(1.41894, abs=1e-5)
    assert gaussian_entropy(np.eye(2)) == pytest.approx(2.83788, abs=1e-5)
    assert gaussian_entropy([[4.0]]) == pytest.approx(H1 + math.log(2), rel=1e-14)
    with pytest.raises(ValueError):
        gaussian_entropy([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(ValueError):
        gaussian_entropy([[1.0, 0.1], [0.0, 1.0]])


def test_spacing_matches_scipy():
    x = np.random.default_rng(0).standard_normal(5000)
    assert spacing_entropy_1d(x).value == pytest.approx(differential_entropy(x, method="vasicek"), rel=1e-12)
    assert spacing_entropy_1d(x, corrected=True).value == pytest.approx(
        differential_entropy(x, method="ebrahimi"), rel=1e-12)
    assert spacing_entropy_1d(x, m=20).value == pytest.approx(
        differential_entropy(x, window_length=20, method="vasicek"), rel=1e-12)


def test_spacing_examples():
    rng = np.random.default_rng(1)
    assert spacing_entropy_1d(rng.standard_normal(10000)).value == pytest.approx(H1, abs=0.05)
    assert spacing_entropy_1d(rng.uniform(size=10000)).value == pytest.approx(0.0, abs=0.05)
    x = rng.standard_normal(10000)
    a, b = spacing_entropy_1d(x), spacing_entropy_1d(2 * x)
    assert b.value - a.value == pytest.approx(math.log(2), abs=max(ci(a, b), 1e-9))


def test_spacing_preconditions():
    with pytest.raises(ValueError):
        spacing_entropy_1d(np.arange(9.0))
    with pytest.raises(ValueError):
        spacing_entropy_1d(np.arange(20.0), m=10)
    with pytest.raises(ValueError):
        spacing_entropy_1d(np.zeros((5, 2)))


def test_spacing_zero_gaps_flagged():
    x = np.repeat(np.arange(5.0), 40)
    with pytest.warns(DegenerateSampleWarning):
        est = spacing_entropy_1d(x, m=3)
    assert est.warning


def test_knn_examples():
    rng = np.random.default_rng(2)
    est = knn_entropy(rng.standard_normal((10000, 2)))
    assert est.value == pytest.approx(2 * H1, abs=0.08)
    assert est.estimator == "knn" and est.n == 10000 and est.stderr_proxy > 0
    x = rng.standard_normal(10000)
    a, b = knn_entropy(x), spacing_entropy_1d(x)
    assert abs(a.value - b.value) < ci(a, b)


def test_knn_matches_brute_force():
    from scipy.special import digamma, gammaln

    x = np.random.default_rng(3).standard_normal((300, 3))
    k = 4
    dist = np.sqrt(((x[:, None, :] - x[None, :, :]) ** 2).sum(-1))
    r = np.sort(dist, axis=1)[:, k]
    logv = 1.5 * math.log(math.pi) - gammaln(2.5)
    ref = digamma(300) - digamma(k) + logv + 3 * np.mean(np.log(r))
    assert knn_entropy(x, k=k).value == pytest.approx(ref, rel=1e-12)


def test_knn_degenerate_support():
    x = 1e-12 * np.random.default_rng(4).standard_normal((200, 2))
    x[:50] = 0.0
    with pytest.warns(DegenerateSampleWarning):
        est = knn_entropy(x)
    assert est.warning and est.value < -20
    with pytest.raises(ValueError):
        knn_entropy(np.zeros((3, 1)), k=3)


def test_kde_examples():
    rng = np.random.default_rng(5)
    assert kde_mc_entropy(rng.standard_normal(10000)).value == pytest.approx(H1, abs=0.10)
    y = rng.standard_normal((10000, 2))
    a, b = kde_mc_entropy(y), knn_entropy(y)
    assert abs(a.value - b.value) < ci(a, b)
    with pytest.raises(ValueError):
        kde_mc_entropy(np.ones(100))
    with pytest.raises(ValueError):
        kde_mc_entropy(np.arange(19.0))
    with pytest.raises(ValueError):
        kde_mc_entropy(rng.standard_normal(100), bandwidth=0.0)


def test_kde_matches_scipy_gaussian_kde():
    from scipy.stats import gaussian_kde

    rng = np.random.default_rng(6)
    x = rng.standard_normal(2000)
    fit, held = x[0::2], x[1::2]
    h = scott_bandwidth(fit)[0]
    ref = -np.mean(gaussian_kde(fit, bw_method=h / fit.std(ddof=1)).logpdf(held))
    assert kde_mc_entropy(x).value == pytest.approx(ref, rel=1e-10)
    pts = rng.standard_normal((7, 2))
    data = rng.standard_normal((50, 2))
    hv = np.array([0.3, 0.5])
    direct = [math.log(np.mean(np.prod(np.exp(-0.5 * ((p - data) / hv) ** 2) / (math.sqrt(2 * math.pi) * hv), axis=1)))
              for p in pts]
    np.testing.assert_allclose(kde_log_density(pts, data, hv), direct, rtol=1e-10)


def test_stderr_proxy_tracks_seed_spread():
    vals, ses = [], []
    for s in range(20):
        est = spacing_entropy_1d(np.random.default_rng(100 + s).standard_normal(2000))
        vals.append(est.value)
        ses.append(est.stderr_proxy)
    ratio = np.mean(ses) / np.std(vals)
    assert 0.5 < ratio < 2.5


def test_error_decreases_with_n():
    med = []
    for n in (100, 1000, 10000):
        errs = [abs(spacing_entropy_1d(np.random.default_rng(s).standard_normal(n)).value - H1) for s in range(10)]
        med.append(np.median(errs))
    assert med[0] > med[1] > med[2]


def test_estimates_are_deterministic():
    x = np.random.default_rng(7).standard_normal((500, 2))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert knn_entropy(x) == knn_entropy(x.copy())
        assert kde_mc_entropy(x) == kde_mc_entropy(x.copy())
