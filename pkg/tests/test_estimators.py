import numpy as np
import pytest

from nomodlwe.estimators import (
    HUBER_K,
    TUKEY_C,
    RegressionProblem,
    fit,
    fit_huber,
    fit_ols,
    fit_ransac,
    fit_tukey,
    huber_loss,
    normalize_round_clip,
    robust_scale,
    tukey_loss,
    verify_secret,
)
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
    gen_lwe,
    lwe_from_parts,
    sample_secret,
)


def _planted(seed, n=8, M=200, noise=1.0, outliers=0.0, offset=251, scale=10.0):
    """Binary secret, Gaussian rows, Gaussian noise, a fraction of targets shifted by +-offset."""
    rng = np.random.default_rng(seed)
    s = rng.integers(0, 2, n)
    X = np.rint(rng.normal(0.0, scale, size=(M, n)))
    y = X @ s + rng.normal(0.0, noise, M)
    bad = rng.choice(M, int(outliers * M), replace=False)
    y[bad] += offset * rng.choice([-1, 1], bad.shape[0])
    return X, y, s, bad


def test_ols_exact_and_identity():
    assert np.allclose(fit_ols(RegressionProblem(np.eye(3), [1.0, 2.0, 3.0])).coef, [1.0, 2.0, 3.0])
    rng = np.random.default_rng(0)
    X = rng.normal(size=(10, 3))
    y = rng.normal(size=10)
    expected = np.linalg.solve(X.T @ X, X.T @ y)
    assert np.allclose(fit_ols(RegressionProblem(X, y)).coef, expected)


def test_ols_rank_deficient_uses_ridge():
    X = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    result = fit_ols(RegressionProblem(X, [2.0, 4.0, 6.0]))
    assert "ridge" in result.flags
    assert np.allclose(X @ result.coef, [2.0, 4.0, 6.0], atol=1e-4)


def test_problem_shape_checks():
    with pytest.raises(ValueError):
        RegressionProblem(np.zeros((3, 2)), np.zeros(4))
    with pytest.raises(ValueError):
        RegressionProblem(np.zeros((3, 2)), np.zeros(3), weights=np.ones(2))


def test_loss_functions():
    eps = 2.0
    assert huber_loss(np.array([eps]), eps)[0] == pytest.approx(0.5 * eps * eps)
    below = huber_loss(np.array([eps - 1e-9]), eps)[0]
    above = huber_loss(np.array([eps + 1e-9]), eps)[0]
    assert above - below == pytest.approx(0.0, abs=1e-7)
    c = 3.0
    assert tukey_loss(np.array([0.0]), c)[0] == 0.0
    assert np.allclose(tukey_loss(np.array([c, 2 * c, -10 * c]), c), c * c / 6)


def test_robust_scale_is_normal_consistent():
    r = np.random.default_rng(1).normal(0.0, 2.0, 100_000)
    assert robust_scale(r) == pytest.approx(2.0, rel=0.02)
    assert robust_scale(np.zeros(10)) > 0


def test_huber_clean_data_matches_ols():
    X, y, _, _ = _planted(2, outliers=0.0, noise=0.0)
    problem = RegressionProblem(X, y)
    assert np.allclose(fit_huber(problem).coef, fit_ols(problem).coef, atol=1e-6)


def test_huber_recovers_with_outliers():
    X, y, s, _ = _planted(3, outliers=0.1)
    result = fit_huber(RegressionProblem(X, y))
    assert np.array_equal(np.rint(result.coef).astype(np.int64), s)


def test_huber_fixed_epsilon_loss_decreases():
    X, y, _, _ = _planted(4, outliers=0.2)
    result = fit_huber(RegressionProblem(X, y), epsilon=HUBER_K * 1.0)
    history = result.loss_history
    assert len(history) >= 1
    assert all(b <= a * (1 + 1e-9) + 1e-9 for a, b in zip(history, history[1:]))


def test_tukey_fixed_c_loss_decreases():
    X, y, s, _ = _planted(4, outliers=0.2)
    result = fit_tukey(RegressionProblem(X, y), c=TUKEY_C * 1.0)
    history = result.loss_history
    assert len(history) >= 1
    assert all(b <= a * (1 + 1e-9) + 1e-9 for a, b in zip(history, history[1:]))
    assert np.array_equal(np.rint(result.coef), s)


def test_huber_scale_equivariant():
    X, y, _, _ = _planted(5, outliers=0.1)
    base = fit_huber(RegressionProblem(X, y), epsilon=3.0)
    scaled = fit_huber(RegressionProblem(10 * X, 10 * y), epsilon=30.0)
    assert np.allclose(base.coef, scaled.coef, atol=1e-6)


def test_huber_rejects_bad_epsilon():
    X, y, _, _ = _planted(6)
    with pytest.raises(ValueError):
        fit_huber(RegressionProblem(X, y), epsilon=0.0)


def test_tukey_clean_data_matches_ols():
    X, y, _, _ = _planted(7, noise=0.0)
    problem = RegressionProblem(X, y)
    assert np.allclose(fit_tukey(problem).coef, fit_ols(problem).coef, atol=1e-6)


def test_tukey_rejects_bad_c():
    X, y, _, _ = _planted(8)
    with pytest.raises(ValueError):
        fit_tukey(RegressionProblem(X, y), c=-1.0)


def test_tukey_recovers_under_heavy_wrap_outliers():
    recovered = 0
    for seed in range(100):
        X, y, s, _ = _planted(1000 + seed, n=16, M=500, noise=3.0, outliers=0.3)
        result = fit_tukey(RegressionProblem(X, y))
        recovered += np.array_equal(np.rint(result.coef).astype(np.int64), s)
    assert recovered >= 90


def test_tukey_downweights_outliers():
    X, y, _, bad = _planted(9, outliers=0.2)
    result = fit_tukey(RegressionProblem(X, y))
    assert np.all(result.weights[bad] == 0.0)
    assert result.estimator == "tukey"
    assert TUKEY_C > HUBER_K


def test_ransac_without_outliers():
    X, y, _, _ = _planted(10, n=4, M=100)
    result = fit_ransac(RegressionProblem(X, y), subset_size=8, n_trials=50, residual_tol=5.0, seed=1)
    assert result.converged
    assert result.inlier_mask.all()


def test_ransac_finds_clean_core():
    found = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        M, n = 100, 4
        s = rng.integers(0, 2, n)
        X = np.rint(rng.normal(0.0, 10.0, size=(M, n)))
        y = X @ s + rng.normal(0.0, 1.0, M)
        bad = rng.choice(M, 40, replace=False)
        y[bad] += rng.choice([-1, 1], 40) * rng.uniform(50.0, 500.0, 40)
        clean = np.ones(M, dtype=bool)
        clean[bad] = False
        result = fit_ransac(RegressionProblem(X, y), n_trials=100, residual_tol=5.0, seed=seed)
        found += np.array_equal(result.inlier_mask, clean)
    assert found >= 95


def test_ransac_argument_checks():
    X, y, _, _ = _planted(11, n=4, M=20)
    problem = RegressionProblem(X, y)
    with pytest.raises(ValueError):
        fit_ransac(problem, n_trials=0)
    with pytest.raises(ValueError):
        fit_ransac(problem, subset_size=3)
    with pytest.raises(ValueError):
        fit_ransac(problem, subset_size=21)


def test_ransac_no_consensus():
    rng = np.random.default_rng(12)
    X = rng.normal(size=(30, 4))
    y = rng.uniform(-1000, 1000, 30)
    # overdetermined trial fits cannot pass exactly through their own subset
    result = fit_ransac(RegressionProblem(X, y), subset_size=8, n_trials=20, residual_tol=1e-6, seed=0)
    assert not result.converged
    assert "ransac_no_consensus" in result.flags


def test_fit_dispatch():
    X, y, _, _ = _planted(13)
    problem = RegressionProblem(X, y)
    for name in ("ols", "huber", "tukey"):
        assert fit(problem, name).estimator == name
    assert fit(problem, "ransac", seed=0).estimator == "ransac"
    with pytest.raises(ValueError):
        fit(problem, "lasso")


def test_normalize_round_clip_examples():
    assert normalize_round_clip([0.4, 0.6, 1.7, -0.3], SecretSpec(BINARY, 4)).tolist() == [0, 1, 1, 0]
    assert normalize_round_clip([-1.6, 0.2, 0.8], SecretSpec(TERNARY, 3)).tolist() == [-1, 0, 1]
    assert normalize_round_clip([0.1, 0.9, 0.3, 0.2], SecretSpec(BINARY_HW, 4, h=2)).tolist() == [0, 1, 1, 0]
    assert normalize_round_clip([0.1, -0.2, 0.05], SecretSpec(TERNARY_HW, 3, h=1)).tolist() == [0, -1, 0]
    assert normalize_round_clip([3.4, -0.2], SecretSpec(CBD, 2, eta=2)).tolist() == [2, 0]
    with pytest.raises(ValueError):
        normalize_round_clip([0.0, 1.0], SecretSpec(BINARY, 3))


@pytest.mark.parametrize(
    "spec",
    [
        SecretSpec(BINARY, 16),
        SecretSpec(BINARY_HW, 16, h=5),
        SecretSpec(TERNARY, 16),
        SecretSpec(TERNARY_HW, 16, h=4),
        SecretSpec(CBD, 16, eta=2),
        SecretSpec(CBD_HW, 16, eta=2, h=6),
    ],
    ids=lambda s: s.family,
)
def test_normalize_round_clip_fixes_valid_secrets(spec):
    for seed in range(20):
        s = sample_secret(spec, seed)
        assert np.array_equal(normalize_round_clip(s.astype(np.float64), spec), s)


def test_verify_accepts_truth_without_noise():
    spec = SecretSpec(BINARY, 16)
    rng = np.random.default_rng(14)
    A = rng.integers(0, 251, size=(64, 16))
    s = sample_secret(spec, rng)
    inst = lwe_from_parts(A, s, np.zeros(64, dtype=np.int64), 251, spec, ErrorSpec(GAUSSIAN, sigma=3.0))
    report = verify_secret(inst.public(), s, ErrorSpec(GAUSSIAN, sigma=3.0))
    assert report.accept and report.sigma == 0.0 and report.max_abs == 0


def test_verify_gaussian_truth_and_wrong_guesses():
    err = ErrorSpec(GAUSSIAN, sigma=3.0)
    spec = SecretSpec(BINARY, 16)
    accepted = rejected = 0
    for seed in range(100):
        inst = gen_lwe(16, 128, 251, spec, err, seed=seed)
        accepted += verify_secret(inst.public(), inst.secret, err).accept
        wrong = sample_secret(spec, seed + 1000)
        if not np.array_equal(wrong, inst.secret):
            rejected += not verify_secret(inst.public(), wrong, err).accept
        else:
            rejected += 1
    assert accepted >= 99
    assert rejected == 100


def test_verify_cbd_support_bound():
    spec = SecretSpec(TERNARY, 8)
    err = ErrorSpec(CBD, eta=2)
    rng = np.random.default_rng(15)
    A = rng.integers(0, 251, size=(40, 8))
    s = sample_secret(spec, rng)
    e = np.zeros(40, dtype=np.int64)
    e[0] = 7
    inst = lwe_from_parts(A, s, e, 251, spec, err)
    report = verify_secret(inst, s, err)
    assert report.sigma <= report.threshold
    assert report.max_abs == 7
    assert report.support_bound == pytest.approx(2 + 3 * 1.0)
    assert not report.accept
