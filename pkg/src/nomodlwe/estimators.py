"""
Robust linear regression for secret recovery: OLS, Huber and Tukey biweight by
iteratively reweighted least squares, RANSAC, plus rounding of the real-valued
fit to a valid secret and residual-based verification.
"""

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional
import logging

import numpy as np
from scipy import linalg
from scipy.stats import median_abs_deviation

from nomodlwe.instances import BINARY_HW, ErrorSpec, LweInstance, SecretSpec, center_mod
from nomodlwe.utils import Seed, make_rng

# Classical 95%-efficiency tuning constants, in units of the residual scale
HUBER_K = 1.345
TUKEY_C = 4.685

RIDGE_FACTOR = 1e-8

ESTIMATORS = ("ols", "huber", "tukey", "ransac")


@dataclass
class RegressionProblem:
    """Rows X (reduced public rows) and targets y (reduced targets), as reals."""

    X: np.ndarray
    y: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.X.ndim != 2 or self.y.shape != (self.X.shape[0],):
            raise ValueError(f"Shape mismatch: X {self.X.shape}, y {self.y.shape}.")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=np.float64)
            if self.weights.shape != self.y.shape:
                raise ValueError("Weights must have one entry per sample.")
        if self.M < self.n:
            logging.warning(f"Only {self.M} samples for {self.n} unknowns; the fit is not identifiable.")

    @property
    def M(self) -> int:
        return self.X.shape[0]

    @property
    def n(self) -> int:
        return self.X.shape[1]

    def base_weights(self) -> np.ndarray:
        return np.ones(self.M) if self.weights is None else self.weights

    def subset(self, idx) -> "RegressionProblem":
        w = None if self.weights is None else self.weights[idx]
        return RegressionProblem(self.X[idx], self.y[idx], w)


@dataclass
class FitResult:
    coef: np.ndarray
    weights: np.ndarray
    inlier_mask: Optional[np.ndarray] = None
    iterations: int = 0
    converged: bool = True
    flags: List[str] = field(default_factory=list)
    loss_history: List[float] = field(default_factory=list)
    estimator: str = "ols"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "estimator": self.estimator,
            "coef": self.coef.tolist(),
            "iterations": self.iterations,
            "converged": self.converged,
            "flags": list(self.flags),
            "inliers": None if self.inlier_mask is None else int(self.inlier_mask.sum()),
        }


def robust_scale(residuals: np.ndarray) -> float:
    """Normal-consistent MAD (MAD / 0.6745) with a floor for exact fits."""
    residuals = np.asarray(residuals, dtype=np.float64)
    scale = float(median_abs_deviation(residuals, scale="normal"))
    floor = 1e-12 * (1.0 + float(np.max(np.abs(residuals), initial=0.0)))
    return max(scale, floor)


def huber_loss(r: np.ndarray, epsilon: float) -> np.ndarray:
    a = np.abs(r)
    return np.where(a <= epsilon, 0.5 * a * a, epsilon * a - 0.5 * epsilon * epsilon)


def tukey_loss(r: np.ndarray, c: float) -> np.ndarray:
    u = np.minimum(np.abs(r) / c, 1.0)
    return c * c / 6.0 * (1.0 - (1.0 - u * u) ** 3)


def _weighted_lstsq(X: np.ndarray, y: np.ndarray, w: np.ndarray, flags: List[str]) -> np.ndarray:
    XtW = X.T * w
    gram = XtW @ X
    rhs = XtW @ y
    n = gram.shape[0]
    if np.linalg.matrix_rank(gram) < n:
        lam = RIDGE_FACTOR * max(float(np.trace(gram)), 1.0)
        logging.warning(f"Singular normal equations; solving with ridge lambda={lam:.3g}.")
        if "ridge" not in flags:
            flags.append("ridge")
        gram = gram + lam * np.eye(n)
    try:
        return linalg.solve(gram, rhs, assume_a="pos")
    except (linalg.LinAlgError, ValueError):
        return np.linalg.lstsq(gram, rhs, rcond=None)[0]


def fit_ols(problem: RegressionProblem) -> FitResult:
    """Weighted least squares; rank-deficient systems get a tiny ridge and the 'ridge' flag."""
    flags: List[str] = []
    w = problem.base_weights()
    coef = _weighted_lstsq(problem.X, problem.y, w, flags)
    return FitResult(coef, np.ones(problem.M), None, 1, True, flags, [], "ols")


def _irls(
    problem: RegressionProblem,
    coef: np.ndarray,
    weight_fn: Callable[[np.ndarray, float], np.ndarray],
    loss_fn: Callable[[np.ndarray, float], np.ndarray],
    threshold: Optional[float],
    factor: float,
    max_iter: int,
    tol: float,
    name: str,
    flags: List[str],
) -> FitResult:
    base = problem.base_weights()
    history: List[float] = []
    best_coef, best_loss = coef, np.inf
    weights = np.ones(problem.M)
    converged = False
    it = 0
    # roundoff on exact data must not read as an outlier
    floor = 1e-9 * (1.0 + float(np.max(np.abs(problem.y), initial=0.0)))
    for it in range(1, max_iter + 1):
        r = problem.y - problem.X @ coef
        t = threshold if threshold is not None else max(factor * robust_scale(r), floor)
        weights = weight_fn(r, t)
        if not np.any(weights * base > 0):
            flags.append(f"{name}_zero_weights")
            break
        new = _weighted_lstsq(problem.X, problem.y, weights * base, flags)
        loss = float(np.sum(base * loss_fn(problem.y - problem.X @ new, t)))
        history.append(loss)
        if loss <= best_loss:
            best_coef, best_loss = new, loss
        step = float(np.linalg.norm(new - coef))
        coef = new
        if step < tol * (1.0 + float(np.linalg.norm(coef))):
            converged = True
            break
    if not converged:
        logging.debug(f"{name} IRLS stopped after {it} iterations without converging.")
        coef = best_coef
    return FitResult(coef, weights, None, it, converged, flags, history, name)


def _huber_weights(r: np.ndarray, epsilon: float) -> np.ndarray:
    a = np.abs(r)
    return np.where(a <= epsilon, 1.0, epsilon / np.maximum(a, 1e-300))


def _tukey_weights(r: np.ndarray, c: float) -> np.ndarray:
    u = r / c
    return np.where(np.abs(u) <= 1.0, (1.0 - u * u) ** 2, 0.0)


def fit_huber(
    problem: RegressionProblem,
    epsilon: Optional[float] = None,
    max_iter: int = 100,
    tol: float = 1e-8,
) -> FitResult:
    """
    Huber regression by IRLS, started from OLS.

    Args:
        problem (RegressionProblem): Samples to fit.
        epsilon (float): Transition point. Default: 1.345 times the MAD scale of the
            current residuals, refreshed every iteration.
        max_iter (int): Iteration cap.
        tol (float): Relative coefficient-change tolerance.

    Returns:
        FitResult: Coefficients, final weights and per-iteration loss.
    """
    if epsilon is not None and epsilon <= 0:
        raise ValueError(f"Huber epsilon must be positive, got {epsilon}.")
    start = fit_ols(problem)
    return _irls(
        problem, start.coef, _huber_weights, huber_loss, epsilon, HUBER_K, max_iter, tol, "huber", list(start.flags)
    )


def fit_tukey(
    problem: RegressionProblem,
    c: Optional[float] = None,
    max_iter: int = 100,
    tol: float = 1e-8,
) -> FitResult:
    """
    Tukey biweight regression by IRLS, warm-started from the Huber fit.

    Samples beyond c get zero weight; if every sample does, the Huber result is
    returned with the 'tukey_zero_weights' flag.
    """
    if c is not None and c <= 0:
        raise ValueError(f"Tukey c must be positive, got {c}.")
    warm = fit_huber(problem, max_iter=max_iter, tol=tol)
    flags = list(warm.flags)
    result = _irls(problem, warm.coef, _tukey_weights, tukey_loss, c, TUKEY_C, max_iter, tol, "tukey", flags)
    if "tukey_zero_weights" in result.flags and not result.loss_history:
        logging.warning("Tukey weights vanished on every sample; falling back to the Huber fit.")
        warm.flags = result.flags
        return warm
    return result


def fit_ransac(
    problem: RegressionProblem,
    subset_size: Optional[int] = None,
    n_trials: int = 100,
    residual_tol: Optional[float] = None,
    seed: Seed = None,
) -> FitResult:
    """
    RANSAC: fit random minimal subsets, keep the largest consensus set and refit on it.

    Args:
        problem (RegressionProblem): Samples to fit.
        subset_size (int): Samples per trial, at least n. Default: n.
        n_trials (int): Number of random subsets, at least 1.
        residual_tol (float): Absolute residual below which a sample agrees with a
            trial model. Default: 2.5 times the MAD scale of the OLS residuals.
        seed (Seed): Sampling seed.

    Returns:
        FitResult: Refit on the winning consensus set, or converged=False with the
        'ransac_no_consensus' flag when no model gathered n inliers.
    """
    n, M = problem.n, problem.M
    if n_trials < 1:
        raise ValueError(f"RANSAC needs at least one trial, got {n_trials}.")
    size = n if subset_size is None else subset_size
    if not n <= size <= M:
        raise ValueError(f"Subset size must lie in [{n}, {M}], got {size}.")
    if residual_tol is None:
        residual_tol = 2.5 * robust_scale(problem.y - problem.X @ fit_ols(problem).coef)
    rng = make_rng(seed)

    best_mask, best_count, best_var = None, -1, np.inf
    for _ in range(n_trials):
        idx = rng.choice(M, size=size, replace=False)
        if np.linalg.matrix_rank(problem.X[idx]) < n:
            continue
        coef = _weighted_lstsq(problem.X[idx], problem.y[idx], np.ones(size), [])
        r = np.abs(problem.y - problem.X @ coef)
        mask = r <= residual_tol
        count = int(mask.sum())
        var = float(np.var(r[mask])) if count else np.inf
        if count > best_count or (count == best_count and var < best_var):
            best_mask, best_count, best_var = mask, count, var

    if best_mask is None or best_count < n:
        logging.info("RANSAC found no consensus set of at least n samples.")
        return FitResult(
            np.zeros(n), np.zeros(M), np.zeros(M, dtype=bool), n_trials, False, ["ransac_no_consensus"], [], "ransac"
        )
    flags: List[str] = []
    w = problem.base_weights()[best_mask]
    coef = _weighted_lstsq(problem.X[best_mask], problem.y[best_mask], w, flags)
    mask = np.abs(problem.y - problem.X @ coef) <= residual_tol
    if mask.sum() < best_count:
        mask = best_mask
    return FitResult(coef, mask.astype(np.float64), mask, n_trials, True, flags, [], "ransac")


def fit(problem: RegressionProblem, estimator: str = "tukey", **params) -> FitResult:
    """Dispatch to one of the fitters by name."""
    if estimator == "ols":
        return fit_ols(problem)
    if estimator == "huber":
        return fit_huber(problem, **params)
    if estimator == "tukey":
        return fit_tukey(problem, **params)
    if estimator == "ransac":
        return fit_ransac(problem, **params)
    raise ValueError(f"Unknown estimator '{estimator}'. Choose from {ESTIMATORS}.")


def normalize_round_clip(s_real, spec: SecretSpec) -> np.ndarray:
    """
    Round a real-valued estimate into the secret family's support.

    Fixed-weight families keep only the h coordinates of largest |s_real| (ties
    broken by index); those coordinates are forced nonzero.
    """
    s_real = np.asarray(s_real, dtype=np.float64)
    if s_real.shape != (spec.n_total,):
        raise ValueError(f"Estimate has length {s_real.shape}, expected {spec.n_total}.")
    low, high = spec.bounds
    rounded = np.clip(np.rint(s_real), low, high).astype(np.int64)
    if not spec.is_fixed_hw:
        return rounded
    keep = np.argsort(-np.abs(s_real), kind="stable")[: spec.h]
    out = np.zeros(spec.n_total, dtype=np.int64)
    if spec.family == BINARY_HW:
        out[keep] = 1
        return out
    signs = np.where(s_real[keep] < 0, -1, 1)
    values = rounded[keep]
    out[keep] = np.where(values == 0, signs, values)
    return out


@dataclass
class VerificationReport:
    residuals: np.ndarray
    sigma: float
    accept: bool
    threshold: float
    max_abs: int
    support_bound: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "sigma": self.sigma,
            "accept": self.accept,
            "threshold": self.threshold,
            "max_abs": self.max_abs,
            "support_bound": self.support_bound,
        }


def verify_secret(
    inst: LweInstance,
    s_hat,
    error_spec: ErrorSpec,
    tau: float = 1.5,
) -> VerificationReport:
    """
    Accept a candidate secret when the centered residuals b - A·s_hat look like errors.

    Accept iff the RMS residual is at most tau·sigma_e and, for bounded error
    families, every |residual| is at most the support bound plus 3·sigma_e.
    """
    s_hat = np.asarray(s_hat, dtype=np.int64)
    if s_hat.shape != (inst.n,):
        raise ValueError(f"Candidate has length {s_hat.shape}, expected {inst.n}.")
    residuals = center_mod(inst.b - inst.A @ s_hat, inst.q)
    sigma = float(np.sqrt(np.mean(residuals.astype(np.float64) ** 2))) if residuals.size else 0.0
    threshold = tau * error_spec.stddev
    max_abs = int(np.max(np.abs(residuals), initial=0))
    accept = sigma <= threshold
    bound = None
    if error_spec.support_bound is not None:
        bound = error_spec.support_bound + 3 * error_spec.stddev
        accept = accept and max_abs <= bound
    return VerificationReport(residuals, sigma, bool(accept), threshold, max_abs, bound)
