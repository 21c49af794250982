"""
Moments of the pre-modular target b~ = A·s + e for every secret/error family,
candidate unwrapping of residues, and inlier-rate prediction.
"""

from dataclasses import dataclass
from math import ceil, floor, sqrt
from typing import Iterable, List, Optional, Sequence
import logging

import numpy as np
from scipy.special import erf, softmax
from scipy.stats import binom

from nomodlwe.instances import (
    BINARY,
    BINARY_HW,
    CBD,
    CBD_HW,
    TERNARY,
    TERNARY_HW,
    ErrorSpec,
    SecretSpec,
    cbd_zero_probability,
)


@dataclass(frozen=True)
class RowStats:
    S1: int
    S2: int


@dataclass(frozen=True)
class MomentEstimate:
    mean: float
    variance: float

    @property
    def stddev(self) -> float:
        return sqrt(max(self.variance, 0.0))

    def __add__(self, other: "MomentEstimate") -> "MomentEstimate":
        return MomentEstimate(self.mean + other.mean, self.variance + other.variance)


def row_stats(row) -> RowStats:
    """Exact S1 = sum(a_j) and S2 = sum(a_j^2) of an integer row."""
    row = np.asarray(row, dtype=np.int64)
    return RowStats(int(row.sum()), int(row @ row))


def retention_alpha(n: int, h: int, eta: int) -> float:
    """
    Probability that a nonzero CBD_eta coordinate survives truncation to weight h.

    The other n-1 coordinates are nonzero with probability 1 - P0 each; when m of
    them are nonzero and m + 1 > h, a uniform choice of h survivors keeps this
    coordinate with probability h / (m + 1).

    Args:
        n (int): Secret dimension.
        h (int): Target Hamming weight, 1 <= h <= n.
        eta (int): CBD parameter.

    Returns:
        float: alpha in (0, 1].
    """
    if not 1 <= h <= n:
        raise ValueError(f"Need 1 <= h <= n, got h={h}, n={n}.")
    nonzero = 1.0 - cbd_zero_probability(eta)
    m = np.arange(n)
    pmf = binom.pmf(m, n - 1, nonzero)
    keep = np.where(m < h, 1.0, h / (m + 1.0))
    return float(min(1.0, np.sum(pmf * keep)))


def as_moments(stats: RowStats, spec: SecretSpec, n: Optional[int] = None) -> MomentEstimate:
    """
    Mean and variance of a·s for a row with statistics (S1, S2) and s drawn from spec.

    Args:
        stats (RowStats): Row sums of the public row a.
        spec (SecretSpec): Secret distribution.
        n (int): Row length; defaults to spec.n_total.

    Returns:
        MomentEstimate: (mean, variance) of the inner product.
    """
    n = spec.n_total if n is None else n
    S1, S2 = float(stats.S1), float(stats.S2)
    family = spec.family
    if family == BINARY:
        return MomentEstimate(spec.p * S1, spec.p * (1 - spec.p) * S2)
    if family == BINARY_HW:
        h = spec.h
        if n <= 1:
            return MomentEstimate(h * S1 / max(n, 1), 0.0)
        var = h * (n - h) / (n * (n - 1)) * (S2 - S1 * S1 / n)
        return MomentEstimate(h / n * S1, max(var, 0.0))
    if family == TERNARY:
        return MomentEstimate(0.0, 2.0 / 3.0 * S2)
    if family == TERNARY_HW:
        return MomentEstimate(0.0, spec.h / n * S2)
    if family == CBD:
        return MomentEstimate(0.0, spec.eta / 2.0 * S2)
    if family == CBD_HW:
        if spec.h == 0:
            return MomentEstimate(0.0, 0.0)
        alpha = retention_alpha(n, spec.h, spec.eta)
        return MomentEstimate(0.0, spec.eta / 2.0 * alpha * S2)
    raise ValueError(f"Unknown secret family '{family}'.")


def error_moments(spec: ErrorSpec) -> MomentEstimate:
    return MomentEstimate(0.0, spec.variance)


def btilde_moments(
    row,
    secret_spec: SecretSpec,
    error_spec: ErrorSpec,
    n: Optional[int] = None,
    error_scale: float = 1.0,
) -> MomentEstimate:
    """
    Moments of b~ = a·s + e', where e' has error_scale times the variance of one error.

    For a reduced sample (r·A, r·b) pass error_scale = ||r||^2.
    """
    err = error_moments(error_spec)
    return as_moments(row_stats(row), secret_spec, n) + MomentEstimate(
        err.mean, err.variance * error_scale
    )


@dataclass(frozen=True)
class CandidateSet:
    """Integer pre-images b + k·q of a residue inside a t_sigma window, with likelihoods."""

    shifts: List[int]
    values: List[int]
    log_likelihoods: List[float]
    probabilities: List[float]
    t_sigma: float

    def __len__(self) -> int:
        return len(self.values)

    @property
    def best(self) -> int:
        return self.values[int(np.argmax(self.probabilities))]


def candidates(b: int, moments: MomentEstimate, q: int, t_sigma: float = 4.0) -> CandidateSet:
    """
    Enumerate pre-images b + k·q within [mu - t_sigma·sigma, mu + t_sigma·sigma].

    Each candidate is scored with the Gaussian log-likelihood -(v - mu)^2 / (2 sigma^2)
    and the scores are softmax-normalized. An empty window yields the single
    candidate nearest mu.
    """
    sigma = moments.stddev
    if sigma <= 0:
        raise ValueError("Candidate scoring needs a positive standard deviation.")
    mu = moments.mean
    b = int(b)
    low = ceil((mu - t_sigma * sigma - b) / q)
    high = floor((mu + t_sigma * sigma - b) / q)
    if high < low:
        nearest = int(round((mu - b) / q))
        logging.warning(
            f"No pre-image of {b} within {t_sigma} sigma of {mu:.2f}; using nearest shift {nearest}."
        )
        shifts = [nearest]
    else:
        shifts = list(range(low, high + 1))
    values = [b + k * q for k in shifts]
    loglik = np.array([-((v - mu) ** 2) / (2 * sigma * sigma) for v in values])
    probs = softmax(loglik)
    return CandidateSet(shifts, values, loglik.tolist(), probs.tolist(), t_sigma)


def most_likely_preimages(residues, means, q: int) -> np.ndarray:
    """Per sample, the value b + k·q closest to its predicted mean."""
    residues = np.asarray(residues, dtype=np.int64)
    means = np.asarray(means, dtype=np.float64)
    shifts = np.rint((means - residues) / q).astype(np.int64)
    return residues + shifts * q


def inlier_prob(q: int, sigma: float) -> float:
    """
    Probability that a centered Gaussian b~ with deviation sigma needs no modular
    shift: erf(q / (2·sqrt(2)·sigma)). sigma = 0 gives 1.
    """
    if sigma < 0:
        raise ValueError(f"Standard deviation must be nonnegative, got {sigma}.")
    if sigma == 0:
        return 1.0
    return float(erf(q / (2 * sqrt(2) * sigma)))


def expected_inliers(
    rows: Iterable,
    secret_spec: SecretSpec,
    error_spec: ErrorSpec,
    q: int,
    error_scales: Optional[Sequence[float]] = None,
) -> float:
    """Sum of per-row inlier probabilities."""
    total = 0.0
    for i, row in enumerate(rows):
        scale = 1.0 if error_scales is None else float(error_scales[i])
        moments = btilde_moments(row, secret_spec, error_spec, error_scale=scale)
        total += inlier_prob(q, moments.stddev)
    return total
