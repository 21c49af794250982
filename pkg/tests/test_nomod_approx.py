import itertools
import logging
from math import comb

import numpy as np
import pytest
from scipy.special import erf

from nomodlwe.instances import (
    BINARY,
    BINARY_HW,
    CBD,
    CBD_HW,
    GAUSSIAN,
    TERNARY,
    TERNARY_HW,
    ErrorSpec,
    SecretSpec,
    sample_secret,
)
from nomodlwe.nomod_approx import (
    MomentEstimate,
    RowStats,
    as_moments,
    btilde_moments,
    candidates,
    error_moments,
    expected_inliers,
    inlier_prob,
    most_likely_preimages,
    retention_alpha,
    row_stats,
)


def _cbd_pmf(eta):
    return {v: comb(2 * eta, eta + v) / 4**eta for v in range(-eta, eta + 1)}


def _secret_law(spec):
    """Every secret of the family with its probability, enumerated exhaustively."""
    n = spec.n_total
    if spec.family == BINARY:
        for s in itertools.product((0, 1), repeat=n):
            k = sum(s)
            yield np.array(s), spec.p**k * (1 - spec.p) ** (n - k)
    elif spec.family == BINARY_HW:
        total = comb(n, spec.h)
        for support in itertools.combinations(range(n), spec.h):
            s = np.zeros(n, dtype=np.int64)
            s[list(support)] = 1
            yield s, 1.0 / total
    elif spec.family == TERNARY:
        for s in itertools.product((-1, 0, 1), repeat=n):
            yield np.array(s), 1.0 / 3**n
    elif spec.family == TERNARY_HW:
        total = comb(n, spec.h) * 2**spec.h
        for support in itertools.combinations(range(n), spec.h):
            for signs in itertools.product((-1, 1), repeat=spec.h):
                s = np.zeros(n, dtype=np.int64)
                s[list(support)] = signs
                yield s, 1.0 / total
    elif spec.family == CBD:
        pmf = _cbd_pmf(spec.eta)
        for s in itertools.product(range(-spec.eta, spec.eta + 1), repeat=n):
            yield np.array(s), float(np.prod([pmf[v] for v in s]))
    else:
        # CBD draw, then a uniform choice of h survivors among the nonzeros
        pmf = _cbd_pmf(spec.eta)
        for raw in itertools.product(range(-spec.eta, spec.eta + 1), repeat=n):
            prob = float(np.prod([pmf[v] for v in raw]))
            nonzero = [i for i, v in enumerate(raw) if v]
            if len(nonzero) <= spec.h:
                yield np.array(raw), prob
                continue
            subsets = list(itertools.combinations(nonzero, spec.h))
            for keep in subsets:
                s = np.zeros(n, dtype=np.int64)
                s[list(keep)] = np.array(raw)[list(keep)]
                yield s, prob / len(subsets)


def _exact_moments(row, spec):
    mean = second = 0.0
    for s, prob in _secret_law(spec):
        value = float(row @ s)
        mean += prob * value
        second += prob * value * value
    return mean, second - mean * mean


FAMILIES = [
    SecretSpec(BINARY, 8, p=0.5),
    SecretSpec(BINARY, 8, p=0.3),
    SecretSpec(BINARY_HW, 8, h=3),
    SecretSpec(TERNARY, 6),
    SecretSpec(TERNARY_HW, 6, h=2),
    SecretSpec(CBD, 4, eta=2),
    SecretSpec(CBD_HW, 4, eta=1, h=2),
    SecretSpec(CBD_HW, 5, eta=1, h=1),
]


def test_row_stats():
    assert row_stats([1, -2, 3]) == RowStats(2, 14)
    assert row_stats(np.zeros(4, dtype=np.int64)) == RowStats(0, 0)


def test_small_examples():
    est = as_moments(RowStats(2, 2), SecretSpec(BINARY_HW, 2, h=1))
    assert est.mean == pytest.approx(1.0)
    assert est.variance == pytest.approx(0.0)
    est = as_moments(RowStats(0, 2), SecretSpec(TERNARY, 2))
    assert est.mean == 0.0
    assert est.variance == pytest.approx(4.0 / 3.0)
    assert as_moments(RowStats(3, 5), SecretSpec(CBD_HW, 8, eta=2, h=0)) == MomentEstimate(0.0, 0.0)


@pytest.mark.parametrize("spec", FAMILIES, ids=lambda s: f"{s.family}-{s.n_total}")
def test_moments_match_exhaustive_enumeration(spec):
    rng = np.random.default_rng(spec.n_total)
    for _ in range(3):
        row = rng.integers(-20, 21, spec.n_total)
        mean, var = _exact_moments(row, spec)
        est = as_moments(row_stats(row), spec)
        assert est.mean == pytest.approx(mean, rel=1e-12, abs=1e-9)
        assert est.variance == pytest.approx(var, rel=1e-12, abs=1e-9)


@pytest.mark.slow
@pytest.mark.parametrize(
    "spec",
    [
        SecretSpec(BINARY, 16),
        SecretSpec(BINARY_HW, 16, h=5),
        SecretSpec(TERNARY, 16),
        SecretSpec(TERNARY_HW, 16, h=6),
        SecretSpec(CBD, 16, eta=2),
        # about 10 raw nonzeros on average, so the weight cap of 4 almost always truncates
        SecretSpec(CBD_HW, 16, eta=2, h=4),
    ],
    ids=lambda s: s.family,
)
def test_moments_monte_carlo(spec):
    rng = np.random.default_rng(1)
    row = rng.integers(-30, 31, 16)
    values = np.array([row @ sample_secret(spec, rng) for _ in range(100_000)], dtype=np.float64)
    est = as_moments(row_stats(row), spec)
    stderr_mean = np.sqrt(est.variance / values.shape[0])
    assert abs(values.mean() - est.mean) < 4 * stderr_mean
    stderr_var = est.variance * np.sqrt(2.0 / values.shape[0])
    assert abs(values.var() - est.variance) < 4 * stderr_var + 1e-12


def test_retention_alpha():
    assert retention_alpha(8, 8, 2) == pytest.approx(1.0)
    assert 0 < retention_alpha(16, 2, 2) < 1
    values = [retention_alpha(32, h, 2) for h in range(1, 33)]
    assert all(x <= y + 1e-15 for x, y in zip(values, values[1:]))
    with pytest.raises(ValueError):
        retention_alpha(8, 0, 2)
    with pytest.raises(ValueError):
        retention_alpha(8, 9, 2)


@pytest.mark.slow
def test_retention_alpha_monte_carlo():
    rng = np.random.default_rng(0)
    n, h, eta, trials = 4, 1, 2, 1_000_000
    raw = rng.binomial(eta, 0.5, (trials, n)) - rng.binomial(eta, 0.5, (trials, n))
    nonzero = raw != 0
    count = nonzero.sum(axis=1)
    first = nonzero[:, 0]
    # coordinate 0 survives with probability min(1, h / count) given it is nonzero
    survive = np.minimum(1.0, h / np.maximum(count, 1))[first]
    assert retention_alpha(n, h, eta) == pytest.approx(survive.mean(), abs=0.002)


def test_error_and_btilde_moments():
    err = ErrorSpec(GAUSSIAN, sigma=3.0)
    assert error_moments(err) == MomentEstimate(0.0, 9.0)
    assert error_moments(ErrorSpec(CBD, eta=2)).variance == pytest.approx(1.0)
    zero = btilde_moments(np.zeros(4, dtype=np.int64), SecretSpec(TERNARY, 4), err)
    assert zero == MomentEstimate(0.0, 9.0)
    scaled = btilde_moments(np.zeros(4, dtype=np.int64), SecretSpec(TERNARY, 4), err, error_scale=5)
    assert scaled.variance == pytest.approx(45.0)


def test_btilde_variance_grows_with_row():
    spec = SecretSpec(TERNARY, 6)
    err = ErrorSpec(GAUSSIAN, sigma=1.0)
    row = np.array([3, -1, 0, 0, 0, 0])
    longer = np.array([3, -1, 2, 0, 0, 0])
    assert btilde_moments(longer, spec, err).variance > btilde_moments(row, spec, err).variance


def test_candidates_example():
    cs = candidates(250, MomentEstimate(0.0, 100.0), q=251, t_sigma=4.0)
    assert cs.values == [-1]
    assert cs.shifts == [-1]
    assert cs.probabilities == [pytest.approx(1.0)]


def test_candidates_prefer_nearest_preimage():
    cs = candidates(0, MomentEstimate(0.0, 251.0**2), q=251, t_sigma=4.0)
    assert 0 in cs.values
    assert cs.best == 0
    assert sum(cs.probabilities) == pytest.approx(1.0)
    for value, prob in zip(cs.values, cs.probabilities):
        if value != 0:
            assert prob < cs.probabilities[cs.values.index(0)]


def test_candidates_window_bound():
    rng = np.random.default_rng(5)
    q = 97
    logging.disable(logging.WARNING)
    try:
        for _ in range(10_000):
            sigma = float(rng.uniform(1.0, 400.0))
            mu = float(rng.uniform(-300.0, 300.0))
            b = int(rng.integers(-48, 49))
            cs = candidates(b, MomentEstimate(mu, sigma * sigma), q, t_sigma=4.0)
            assert 1 <= len(cs) <= int(np.ceil(8 * sigma / q)) + 1
            assert all((v - b) % q == 0 for v in cs.values)
            assert sum(cs.probabilities) == pytest.approx(1.0)
            assert abs(cs.best - mu) <= min(abs(v - mu) for v in cs.values) + 1e-9
    finally:
        logging.disable(logging.NOTSET)


def test_candidates_empty_window_warns(caplog):
    with caplog.at_level(logging.WARNING):
        cs = candidates(40, MomentEstimate(0.0, 1.0), q=251, t_sigma=2.0)
    assert cs.values == [40]
    assert "No pre-image" in caplog.text
    with pytest.raises(ValueError):
        candidates(0, MomentEstimate(0.0, 0.0), q=251)


def test_most_likely_preimages():
    out = most_likely_preimages([100, -120, 5], [300.0, -400.0, 0.0], 251)
    assert out.tolist() == [351, -371, 5]


def test_inlier_prob():
    assert inlier_prob(251, 0.0) == 1.0
    assert inlier_prob(251, 1e6) < 1e-3
    # erf saturates to exactly 1.0 in float64 for small sigma
    saturated = [inlier_prob(251, s) for s in (1.0, 10.0, 50.0)]
    assert all(x >= y for x, y in zip(saturated, saturated[1:]))
    probs = [inlier_prob(251, s) for s in (50.0, 100.0, 500.0, 1e6)]
    assert all(x > y for x, y in zip(probs, probs[1:]))
    assert inlier_prob(251, 100.0) == pytest.approx(float(erf(251 / (2 * np.sqrt(2) * 100.0))))
    with pytest.raises(ValueError):
        inlier_prob(251, -1.0)


@pytest.mark.parametrize("ratio", [0.1, 0.3, 0.5, 1.0])
def test_inlier_prob_monte_carlo(ratio):
    q = 251
    sigma = ratio * q
    draws = np.random.default_rng(3).normal(0.0, sigma, 100_000)
    empirical = np.mean(np.abs(draws) < q / 2)
    assert inlier_prob(q, sigma) == pytest.approx(empirical, abs=0.02)


def test_expected_inliers():
    spec = SecretSpec(TERNARY, 4)
    err = ErrorSpec(GAUSSIAN, sigma=2.0)
    assert expected_inliers([], spec, err, 251) == 0.0
    row = np.array([100, -80, 60, 90])
    single = inlier_prob(251, btilde_moments(row, spec, err).stddev)
    assert 0 < single < 1
    assert expected_inliers([row] * 7, spec, err, 251) == pytest.approx(7 * single)
    scaled = expected_inliers([row, row], spec, err, 251, error_scales=[1.0, 1000.0])
    assert scaled < 2 * single
    noisy = inlier_prob(251, btilde_moments(row, spec, err, error_scale=1000.0).stddev)
    assert scaled == pytest.approx(single + noisy)
