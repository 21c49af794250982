"""
Lattice reduction for the error-penalized dual embedding.

The basis is kept in exact int64 arithmetic together with the unimodular transform
T (current basis = T · original), while the Gram-Schmidt data lives in float64 and
is rebuilt from the integer basis every ``reorth_interval`` swaps and after every
block insertion.
"""

from dataclasses import asdict, dataclass, field, fields, replace
from math import e, exp, lgamma, log, log2, pi, sqrt
from typing import Any, Dict, List, Optional, Sequence, Tuple
import heapq
import logging

import numpy as np

from nomodlwe.instances import ErrorSpec, LweInstance, SecretSpec, center_mod
from nomodlwe.nomod_approx import btilde_moments

# Enumeration radius is capped at this multiple of the block's Gaussian heuristic
GH_RADIUS_FACTOR = 1.05

# Relative margin a block insertion must beat to count as progress
IMPROVEMENT_MARGIN = 1e-9

# Largest magnitude an exact basis or transform entry may reach
INT64_HEADROOM = 2**62


class ReductionError(RuntimeError):
    """Floating-point Gram-Schmidt data could not be repaired by re-orthogonalization."""


def add_multiple(arrays: Sequence[np.ndarray], i: int, j: int, c: int) -> None:
    """
    Row i += c * row j in every array, in place.

    All arrays are checked before any is touched, so a ReductionError leaves them
    unchanged and consistent with each other.
    """
    c = int(c)
    for M in arrays:
        bound = abs(c) * int(np.abs(M[j]).max(initial=0)) + int(np.abs(M[i]).max(initial=0))
        if bound >= INT64_HEADROOM:
            raise ReductionError(f"Row update {i} += {c} * row {j} would exceed the int64 range.")
    for M in arrays:
        M[i] += c * M[j]


@dataclass
class ReductionConfig:
    """Parameters of the preprocessing reduction (LLL warm-up + progressive BKZ)."""

    delta_lll: float = 0.99
    delta_bkz: float = 0.99
    block_start: int = 20
    block_cap: int = 40
    block_step: int = 10
    stall_tours: int = 4
    pre_passes: int = 4
    tour_budget: int = 60
    pool_capacity: int = 64
    reorth_interval: int = 50

    def __post_init__(self):
        for name in ("delta_lll", "delta_bkz"):
            value = getattr(self, name)
            if not 0.25 < value <= 1:
                raise ValueError(f"{name} must lie in (0.25, 1], got {value}.")
        if self.block_start < 2 or self.block_cap < self.block_start:
            raise ValueError(
                f"Block schedule must satisfy 2 <= start <= cap, got {self.block_start} -> {self.block_cap}."
            )
        if self.block_step < 1:
            raise ValueError(f"Block increment must be positive, got {self.block_step}.")
        if self.pool_capacity < 1:
            raise ValueError(f"Pool capacity must be at least 1, got {self.pool_capacity}.")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ReductionConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})


@dataclass
class LatticeBasis:
    """Integer row basis with the accumulated unimodular transform."""

    basis: np.ndarray
    transform: np.ndarray
    original: np.ndarray

    @classmethod
    def from_rows(cls, rows) -> "LatticeBasis":
        B = np.array(rows, dtype=np.int64)
        return cls(B.copy(), np.eye(B.shape[0], dtype=np.int64), B.copy())

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    def with_rows(self, basis: np.ndarray, transform: np.ndarray):
        return replace(self, basis=basis.copy(), transform=transform.copy())

    def verify_unimodular(self) -> bool:
        """Exact check of |det T| = 1 and T · original = basis."""
        if not np.array_equal(self.transform @ self.original, self.basis):
            return False
        return abs(integer_det(self.transform)) == 1


@dataclass
class EmbeddedBasis(LatticeBasis):
    """
    Basis of the lattice spanned by [[omega·I_m, A], [0, q·I_n]].

    Reduced rows have the shape (omega·r | rA + qc): r combines the m samples and
    rA + qc is the reduced sample's public part.
    """

    omega: int = 1
    q: int = 2
    m: int = 0
    n: int = 0

    @property
    def sample_matrix(self) -> np.ndarray:
        return self.original[: self.m, self.m :]

    def split_row(self, row: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Return (r, a_part) for an embedded row (omega·r | a_part)."""
        row = np.asarray(row, dtype=np.int64)
        head = row[: self.m]
        if np.any(head % self.omega):
            raise ValueError("Row is not in the embedded lattice: r-part not divisible by omega.")
        return head // self.omega, row[self.m :]

    def contains(self, vector) -> bool:
        """Exact membership test against the original embedding."""
        v = np.asarray(vector, dtype=np.int64)
        if v.shape != (self.m + self.n,):
            return False
        head = v[: self.m]
        if np.any(head % self.omega):
            return False
        r = head // self.omega
        tail = v[self.m :] - r @ self.sample_matrix
        return bool(np.all(tail % self.q == 0))


def embed(A: np.ndarray, omega: int, q: int) -> EmbeddedBasis:
    """
    Build the error-penalized dual embedding [[omega·I_m, A], [0, q·I_n]].

    Args:
        A (np.ndarray): m x n sample matrix.
        omega (int): Error penalty, at least 1.
        q (int): Modulus.

    Returns:
        EmbeddedBasis: Basis with identity transform.
    """
    if omega < 1:
        raise ValueError(f"omega must be at least 1, got {omega}.")
    A = np.asarray(A, dtype=np.int64)
    m, n = A.shape
    B = np.zeros((m + n, m + n), dtype=np.int64)
    B[:m, :m] = omega * np.eye(m, dtype=np.int64)
    B[:m, m:] = A
    B[m:, m:] = q * np.eye(n, dtype=np.int64)
    return EmbeddedBasis(B.copy(), np.eye(m + n, dtype=np.int64), B.copy(), omega, q, m, n)


def integer_det(M) -> int:
    """Exact determinant by fraction-free (Bareiss) elimination."""
    M = [[int(x) for x in row] for row in np.asarray(M)]
    n = len(M)
    if n == 0:
        return 1
    sign, prev = 1, 1
    for k in range(n - 1):
        if M[k][k] == 0:
            pivot = next((i for i in range(k + 1, n) if M[i][k] != 0), None)
            if pivot is None:
                return 0
            M[k], M[pivot] = M[pivot], M[k]
            sign = -sign
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                M[i][j] = (M[i][j] * M[k][k] - M[i][k] * M[k][j]) // prev
        prev = M[k][k]
    return sign * M[n - 1][n - 1]


def gram_schmidt(B: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Gram-Schmidt coefficients of a row basis.

    Returns:
        Tuple[np.ndarray, np.ndarray]: (mu, bsq) with mu lower-unitriangular and
        bsq[i] = ||b_i*||^2.
    """
    L = np.linalg.qr(np.asarray(B, dtype=np.float64).T, mode="r").T
    diag = np.diag(L).copy()
    if not np.all(np.isfinite(L)) or np.any(np.abs(diag) < 1e-12):
        raise ReductionError("Gram-Schmidt orthogonalization failed: basis is singular or ill-conditioned.")
    return L / diag[None, :], diag**2


def is_lll_reduced(B: np.ndarray, delta: float, tol: float = 1e-6) -> bool:
    """Check size reduction |mu_ij| <= 1/2 and the Lovasz condition directly."""
    mu, bsq = gram_schmidt(B)
    d = bsq.shape[0]
    lower = np.tril(mu, -1)
    if np.any(np.abs(lower) > 0.5 + tol):
        return False
    for k in range(1, d):
        if bsq[k] < (delta - mu[k, k - 1] ** 2) * bsq[k - 1] * (1 - tol):
            return False
    return True


class _GSOState:
    """Mutable reduction state: exact basis/transform plus float GSO."""

    def __init__(self, B: np.ndarray, T: np.ndarray, delta: float, reorth_interval: int = 50):
        self.B = np.array(B, dtype=np.int64)
        self.T = np.array(T, dtype=np.int64)
        self.d = self.B.shape[0]
        self.delta = delta
        self.reorth_interval = max(1, reorth_interval)
        self.swaps = 0
        self.refresh()

    def refresh(self):
        self.mu, self.bsq = gram_schmidt(self.B)

    def _size_reduce(self, k: int):
        mu = self.mu
        for j in range(k - 1, -1, -1):
            c = mu[k, j]
            if abs(c) <= 0.5:
                continue
            if not np.isfinite(c) or abs(c) > 2.0**50:
                raise ReductionError(f"Size-reduction coefficient out of range at ({k}, {j}).")
            c = int(np.rint(c))
            add_multiple((self.B, self.T), k, j, -c)
            mu[k, :j] -= c * mu[j, :j]
            mu[k, j] -= c

    def _swap(self, k: int):
        mu, bsq = self.mu, self.bsq
        self.B[[k - 1, k]] = self.B[[k, k - 1]]
        self.T[[k - 1, k]] = self.T[[k, k - 1]]
        mu_k = mu[k, k - 1]
        b_new = bsq[k] + mu_k * mu_k * bsq[k - 1]
        if not np.isfinite(b_new) or b_new <= 0:
            raise ReductionError(f"Non-positive Gram-Schmidt norm after swap at {k}.")
        mu[k, k - 1] = mu_k * bsq[k - 1] / b_new
        bsq[k] = bsq[k - 1] * bsq[k] / b_new
        bsq[k - 1] = b_new
        mu[[k - 1, k], : k - 1] = mu[[k, k - 1], : k - 1]
        if k + 1 < self.d:
            t = mu[k + 1 :, k].copy()
            mu[k + 1 :, k] = mu[k + 1 :, k - 1] - mu_k * t
            mu[k + 1 :, k - 1] = t + mu[k, k - 1] * mu[k + 1 :, k]
        self.swaps += 1
        if self.swaps % self.reorth_interval == 0:
            self.refresh()

    def lll(self, start: int = 0, end: Optional[int] = None):
        """LLL on rows [start, end), size-reducing against every earlier row."""
        end = self.d if end is None else end
        for attempt in range(3):
            try:
                self._lll_pass(start, end)
                return
            except ReductionError as err:
                logging.warning(f"LLL precision problem ({err}); re-orthogonalizing (attempt {attempt + 1}).")
                self.refresh()
        raise ReductionError("LLL failed after repeated re-orthogonalization.")

    def _lll_pass(self, start: int, end: int):
        k = start
        steps = 0
        limit = 200 * self.d * self.d + 10_000
        while k < end:
            steps += 1
            if steps > limit:
                raise ReductionError("LLL did not terminate within its iteration limit.")
            self._size_reduce(k)
            if k == start:
                k += 1
                continue
            if self.bsq[k] >= (self.delta - self.mu[k, k - 1] ** 2) * self.bsq[k - 1]:
                k += 1
            else:
                self._swap(k)
                k = max(k - 1, start)

    def insert(self, kappa: int, end: int, coeffs: Sequence[int]):
        """
        Make sum(coeffs[i] * b_{kappa+i}) the row at kappa by unimodular row operations.

        Euclid on the coefficient vector: adding c·b_j to b_i while subtracting c·x_i
        from x_j keeps the combination fixed, until a single +-1 coefficient remains.
        """
        x = [int(c) for c in coeffs]
        rows = self.B[kappa:end]
        trans = self.T[kappa:end]
        while sum(1 for c in x if c) > 1:
            nonzero = [i for i, c in enumerate(x) if c]
            i = min(nonzero, key=lambda idx: abs(x[idx]))
            for j in nonzero:
                if j == i:
                    continue
                c = int(round(x[j] / x[i]))
                if c:
                    add_multiple((rows, trans), i, j, c)
                    x[j] -= c * x[i]
        p = next(i for i, c in enumerate(x) if c)
        if x[p] < 0:
            rows[p] *= -1
            trans[p] *= -1
        order = [p] + [i for i in range(end - kappa) if i != p]
        self.B[kappa:end] = rows[order]
        self.T[kappa:end] = trans[order]
        self.refresh()


def lll(basis: LatticeBasis, delta: float = 0.99) -> LatticeBasis:
    """
    LLL-reduce a basis: size reduction plus the Lovasz condition for every index.

    Args:
        basis (LatticeBasis): Basis to reduce (not modified).
        delta (float): Lovasz parameter in (0.25, 1].

    Returns:
        LatticeBasis: Reduced basis of the same type, transform updated.
    """
    if not 0.25 < delta <= 1:
        raise ValueError(f"LLL delta must lie in (0.25, 1], got {delta}.")
    state = _GSOState(basis.basis, basis.transform, delta)
    state.lll()
    return basis.with_rows(state.B, state.T)


def _block_gh_sq(bsq: np.ndarray) -> float:
    beta = bsq.shape[0]
    log_vol = 0.5 * float(np.sum(np.log(bsq)))
    log_gh = lgamma(beta / 2.0 + 1) / beta - 0.5 * log(pi) + log_vol / beta
    return exp(2 * log_gh)


def _enumerate(mu, bsq, radius_sq: float) -> Tuple[Optional[List[int]], float]:
    """Schnorr-Euchner depth-first enumeration; returns (coefficients, squared norm)."""
    n = len(bsq)
    mu = [[float(v) for v in row] for row in np.asarray(mu)]
    bsq = [float(v) for v in bsq]
    best: Optional[List[int]] = None
    best_sq = radius_sq * (1 + 1e-10)
    x = [0] * n
    c = [0.0] * n
    partial = [0.0] * (n + 1)
    dx = [0] * n
    ddx = [0] * n
    # zero_above[k]: every x_j with j > k is zero, so only x_k >= 0 is enumerated
    zero_above = [True] * n

    def advance(level: int):
        if zero_above[level]:
            x[level] += 1
        else:
            x[level] += dx[level]
            ddx[level] = -ddx[level]
            dx[level] = ddx[level] - dx[level]

    k = n - 1
    while True:
        diff = x[k] - c[k]
        node = partial[k + 1] + diff * diff * bsq[k]
        if node <= best_sq:
            if k == 0:
                if not (zero_above[0] and x[0] == 0) and (best is None or node < best_sq):
                    best_sq = node
                    best = list(x)
                advance(0)
            else:
                partial[k] = node
                zero_above[k - 1] = zero_above[k] and x[k] == 0
                k -= 1
                center = -sum(x[j] * mu[j][k] for j in range(k + 1, n))
                c[k] = center
                if zero_above[k]:
                    x[k] = 0
                else:
                    x[k] = int(round(center))
                    dx[k] = ddx[k] = 1 if center >= x[k] else -1
        else:
            k += 1
            if k >= n:
                break
            advance(k)
    return best, best_sq


def enumerate_svp(mu: np.ndarray, bsq: np.ndarray, radius: float) -> Optional[List[int]]:
    """
    Shortest nonzero vector of a (projected) block within a radius.

    Args:
        mu (np.ndarray): Block Gram-Schmidt coefficients (lower-unitriangular).
        bsq (np.ndarray): Block squared Gram-Schmidt norms.
        radius (float): Search radius (length, not squared).

    Returns:
        Optional[List[int]]: Integer coefficients over the block rows of a vector of
        minimal norm <= radius, or None if the radius admits no nonzero vector.
    """
    coeffs, _ = _enumerate(mu, bsq, float(radius) ** 2)
    return coeffs


def _tour(state: _GSOState, beta: int) -> bool:
    improved = False
    d = state.d
    for kappa in range(d - 1):
        end = min(kappa + beta, d)
        state.lll(kappa, end)
        bsq_block = state.bsq[kappa:end]
        mu_block = state.mu[kappa:end, kappa:end]
        capped = GH_RADIUS_FACTOR**2 * _block_gh_sq(bsq_block)
        coeffs, norm_sq = _enumerate(mu_block, bsq_block, min(float(bsq_block[0]), capped))
        if coeffs is None and capped < bsq_block[0]:
            # small blocks often have lambda_1 above the heuristic
            coeffs, norm_sq = _enumerate(mu_block, bsq_block, float(bsq_block[0]))
        if coeffs is None or norm_sq >= bsq_block[0] * (1 - IMPROVEMENT_MARGIN):
            continue
        state.insert(kappa, end, coeffs)
        state.lll(kappa, end)
        improved = True
    return improved


def bkz_tour(basis: LatticeBasis, beta: int, delta: float = 0.99) -> Tuple[LatticeBasis, bool]:
    """
    One BKZ tour: for each index, enumerate the projected block and insert its
    shortest vector when it beats the current Gram-Schmidt norm.

    Args:
        basis (LatticeBasis): Basis to reduce (not modified).
        beta (int): Block size, 2 <= beta <= dimension.
        delta (float): Lovasz parameter of the LLL pre/post-processing.

    Returns:
        Tuple[LatticeBasis, bool]: Reduced basis and whether any insertion shortened a
        Gram-Schmidt norm.
    """
    if not 2 <= beta <= basis.dim:
        raise ValueError(f"Block size must lie in [2, {basis.dim}], got {beta}.")
    state = _GSOState(basis.basis, basis.transform, delta)
    state.lll()
    improved = _tour(state, beta)
    return basis.with_rows(state.B, state.T), improved


def _polish_arrays(B: np.ndarray, T: np.ndarray, max_sweeps: int = 200) -> Tuple[np.ndarray, np.ndarray]:
    B = np.array(B, dtype=np.int64)
    T = np.array(T, dtype=np.int64)
    d = B.shape[0]
    for _ in range(max_sweeps):
        order = np.argsort(np.einsum("ij,ij->i", B, B), kind="stable")
        B, T = B[order], T[order]
        G = B @ B.T
        changed = False
        for i in range(d):
            diag = np.diag(G)
            c = np.rint(G[i] / diag).astype(np.int64)
            c[i] = 0
            gain = 2 * c * G[i] - c * c * diag
            j = int(np.argmax(gain))
            if gain[j] <= 0:
                continue
            add_multiple((B, T), i, j, -c[j])
            row = B @ B[i]
            G[i, :] = row
            G[:, i] = row
            changed = True
        if not changed:
            break
    order = np.argsort(np.einsum("ij,ij->i", B, B), kind="stable")
    return B[order], T[order]


def polish(basis: LatticeBasis) -> LatticeBasis:
    """
    Sort rows by norm and apply pairwise size reduction b_i -= round(<b_i,b_j>/<b_j,b_j>)·b_j
    whenever it shortens b_i, until nothing changes. No row norm ever increases.
    """
    B, T = _polish_arrays(basis.basis, basis.transform)
    return basis.with_rows(B, T)


@dataclass(frozen=True)
class PoolEntry:
    vector: Tuple[int, ...]
    priority: float
    source_matrix_id: int = 0
    tour: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "vector": list(self.vector),
            "priority": self.priority,
            "source_matrix_id": self.source_matrix_id,
            "tour": self.tour,
        }


def _sign_normalize(vector) -> Tuple[int, ...]:
    v = [int(x) for x in vector]
    for x in v:
        if x:
            return tuple(v) if x > 0 else tuple(-y for y in v)
    return tuple(v)


class ShortVectorPool:
    """
    Bounded collection of the lowest-priority distinct vectors seen so far.

    A max-heap on priority keeps the current worst entry on top; a new vector is
    accepted while the pool is not full or when it beats that worst entry. Vectors
    are stored sign-normalized (first nonzero entry positive) and deduplicated per
    source matrix. Equal priorities are ordered by the vector, then the source id.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"Pool capacity must be at least 1, got {capacity}.")
        self.capacity = capacity
        self._heap: List[Tuple] = []
        self._keys = set()

    def __len__(self) -> int:
        return len(self._heap)

    @staticmethod
    def _rank(entry: PoolEntry) -> Tuple:
        return (-entry.priority, tuple(-x for x in entry.vector), -entry.source_matrix_id)

    def offer(self, vector, priority: float, source_matrix_id: int = 0, tour: int = 0) -> bool:
        """Offer a vector; returns True if it was stored."""
        vec = _sign_normalize(vector)
        key = (source_matrix_id, vec)
        if key in self._keys:
            return False
        entry = PoolEntry(vec, float(priority), int(source_matrix_id), int(tour))
        item = self._rank(entry) + (entry,)
        if len(self._heap) < self.capacity:
            heapq.heappush(self._heap, item)
            self._keys.add(key)
            return True
        if item[:3] <= self._heap[0][:3]:
            return False
        evicted = heapq.heapreplace(self._heap, item)[3]
        self._keys.discard((evicted.source_matrix_id, evicted.vector))
        self._keys.add(key)
        return True

    def entries(self) -> List[PoolEntry]:
        """Stored entries, best (lowest priority) first."""
        return [item[3] for item in sorted(self._heap, key=lambda it: it[:3], reverse=True)]

    @property
    def worst_priority(self) -> float:
        return -self._heap[0][0] if self._heap else float("inf")

    def mean_priority(self) -> float:
        if not self._heap:
            return float("nan")
        return float(np.mean([-item[0] for item in self._heap]))

    def merge(self, other: "ShortVectorPool") -> "ShortVectorPool":
        """Offer every entry of other to this pool (capacity of this pool applies)."""
        for entry in other.entries():
            self.offer(entry.vector, entry.priority, entry.source_matrix_id, entry.tour)
        return self

    def to_dict(self) -> Dict[str, Any]:
        return {"capacity": self.capacity, "rows": [entry.to_dict() for entry in self.entries()]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ShortVectorPool":
        pool = cls(int(data["capacity"]))
        for row in data["rows"]:
            pool.offer(row["vector"], row["priority"], row.get("source_matrix_id", 0), row.get("tour", 0))
        return pool


def priority(
    row: np.ndarray,
    secret_spec: SecretSpec,
    error_spec: ErrorSpec,
    m: int,
    omega: int,
    q: int,
) -> float:
    """
    Estimated standard deviation of the pre-modular target of a reduced sample.

    The row is (omega·r | u) with u = rA + qc. The reduced sample (u mod q, r·b) has
    variance Var(u·s) + ||r||^2·Var(e).
    """
    row = np.asarray(row, dtype=np.int64)
    head = row[:m]
    if np.any(head % omega):
        raise ValueError("Row does not decompose as (omega·r | rA + qc).")
    r = head // omega
    u = center_mod(row[m:], q)
    moments = btilde_moments(u, secret_spec, error_spec, n=u.shape[0], error_scale=float(r @ r))
    return sqrt(moments.variance)


@dataclass
class ReductionResult:
    """Outcome of progressive_reduce: the pool plus the final basis and schedule trace."""

    pool: ShortVectorPool
    basis: EmbeddedBasis
    tours: int = 0
    block_sizes: List[int] = field(default_factory=list)


def _offer_rows(
    pool: ShortVectorPool,
    B: np.ndarray,
    basis: EmbeddedBasis,
    secret_spec: SecretSpec,
    error_spec: ErrorSpec,
    matrix_id: int,
    tour: int,
) -> int:
    accepted = 0
    for row in B:
        if not np.any(row[: basis.m]):
            # pure q-vector: carries no sample relation
            continue
        if not np.any(row[basis.m :] % basis.q):
            # r·A = 0 mod q: a relation among repeated rows, the sample is pure noise
            continue
        prio = priority(row, secret_spec, error_spec, basis.m, basis.omega, basis.q)
        accepted += pool.offer(row, prio, matrix_id, tour)
    return accepted


def progressive_reduce(
    basis: EmbeddedBasis,
    config: ReductionConfig,
    pool: ShortVectorPool,
    secret_spec: SecretSpec,
    error_spec: ErrorSpec,
    matrix_id: int = 0,
) -> ReductionResult:
    """
    LLL warm-up followed by progressive BKZ with polish, saving short vectors.

    After every tour all basis rows are offered to the pool. When no insertion
    improves a Gram-Schmidt norm for ``stall_tours`` consecutive tours, the block
    size grows by ``block_step`` up to ``block_cap``; the run stops on a stall at the
    cap or when ``tour_budget`` tours have run.

    Args:
        basis (EmbeddedBasis): Embedded sample matrix.
        config (ReductionConfig): Schedule and LLL/BKZ parameters.
        pool (ShortVectorPool): Pool to fill (modified in place).
        secret_spec (SecretSpec): Secret law used by the priority.
        error_spec (ErrorSpec): Error law used by the priority.
        matrix_id (int): Source id recorded with each pooled vector.

    Returns:
        ReductionResult: The pool, the final basis and the schedule trace.
    """
    d = basis.dim
    state = _GSOState(basis.basis, basis.transform, config.delta_lll, config.reorth_interval)
    for _ in range(config.pre_passes):
        state.lll()
    _offer_rows(pool, state.B, basis, secret_spec, error_spec, matrix_id, 0)

    beta = min(config.block_start, d)
    cap = min(config.block_cap, d)
    stall = 0
    tours = 0
    trace: List[int] = []
    state.delta = config.delta_bkz
    while tours < config.tour_budget:
        state.lll()
        improved = _tour(state, beta)
        tours += 1
        trace.append(beta)
        B, T = _polish_arrays(state.B, state.T)
        state = _GSOState(B, T, config.delta_bkz, config.reorth_interval)
        accepted = _offer_rows(pool, state.B, basis, secret_spec, error_spec, matrix_id, tours)
        logging.debug(
            f"Matrix {matrix_id} tour {tours} (beta={beta}): improved={improved}, "
            f"pool accepted {accepted}, pool mean sigma {pool.mean_priority():.2f}"
        )
        stall = 0 if improved else stall + 1
        if stall >= config.stall_tours:
            if beta >= cap:
                break
            beta = min(beta + config.block_step, cap)
            stall = 0
            logging.info(f"Matrix {matrix_id}: progress stalled, block size raised to {beta}.")

    logging.info(
        f"Matrix {matrix_id}: {tours} tours, final block size {beta}, pool size {len(pool)}, "
        f"mean sigma {pool.mean_priority():.2f}"
    )
    return ReductionResult(pool, basis.with_rows(state.B, state.T), tours, trace)


def root_hermite(beta: int) -> float:
    """Root-Hermite factor delta_0 of BKZ-beta: (beta/(2 pi e)·(pi beta)^(1/beta))^(1/(2(beta-1)))."""
    if beta < 2:
        raise ValueError(f"Block size must be at least 2, got {beta}.")
    return (beta / (2 * pi * e) * (pi * beta) ** (1.0 / beta)) ** (1.0 / (2 * (beta - 1)))


def gaussian_heuristic(
    d: int,
    volume: Optional[float] = None,
    delta0: float = 1.0,
    log_volume: Optional[float] = None,
) -> float:
    """
    Expected shortest-vector length delta0^d · vol^(1/d).

    Pass ``log_volume`` (natural log) instead of ``volume`` when the volume overflows.
    """
    if d < 1:
        raise ValueError(f"Dimension must be at least 1, got {d}.")
    if log_volume is None:
        if volume is None or volume <= 0:
            raise ValueError(f"Volume must be positive, got {volume}.")
        log_volume = log(volume)
    return exp(d * log(delta0) + log_volume / d)


def optimal_sample_count(
    n: int,
    k: int,
    q: int,
    omega: int,
    beta: int,
    max_samples: Optional[int] = None,
) -> int:
    """
    Sample count m minimizing the Gaussian-heuristic length of the embedding.

    m = round(sqrt(n·k·(log q - log omega) / log delta_0) - n·k), clamped to >= 1
    (and to <= max_samples when given).
    """
    if omega < 1:
        raise ValueError(f"omega must be at least 1, got {omega}.")
    delta0 = root_hermite(beta)
    if delta0 <= 1:
        raise ValueError(f"Block size {beta} gives root-Hermite factor {delta0:.5f} <= 1.")
    nk = n * k
    ratio = max(0.0, nk * (log(q) - log(omega)) / log(delta0))
    m = int(round(sqrt(ratio) - nk))
    if m < 1:
        logging.warning(f"Optimal sample count formula gave {m}; clamping to 1.")
        m = 1
    if max_samples is not None and m > max_samples:
        m = max_samples
    return m


@dataclass(frozen=True)
class CostReport:
    beta: int
    dim: int
    delta0: float
    expected_length: float
    log2_svp_classical: float
    log2_svp_quantum: float
    log2_rop_classical: float
    log2_rop_quantum: float

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def bkz_cost(beta: int, d: int, log_volume: float = 0.0) -> CostReport:
    """
    BKZ running-time model T = 16·d·t_beta with log2 t_beta = 0.292 beta + 16.4
    (classical) or 0.265 beta + 16.4 (quantum).
    """
    if beta < 2:
        raise ValueError(f"Block size must be at least 2, got {beta}.")
    delta0 = root_hermite(beta)
    svp_classical = 0.292 * beta + 16.4
    svp_quantum = 0.265 * beta + 16.4
    overhead = log2(16 * d)
    return CostReport(
        beta=beta,
        dim=d,
        delta0=delta0,
        expected_length=gaussian_heuristic(d, delta0=delta0, log_volume=log_volume),
        log2_svp_classical=svp_classical,
        log2_svp_quantum=svp_quantum,
        log2_rop_classical=overhead + svp_classical,
        log2_rop_quantum=overhead + svp_quantum,
    )


def primal_usvp_attack(
    inst: LweInstance,
    block_size: int = 20,
    tours: int = 8,
    delta: float = 0.99,
    max_samples: Optional[int] = None,
) -> Optional[np.ndarray]:
    """
    Kannan-embedding baseline for tiny dimensions.

    Reduces the basis of {(x, A x + q c + t·b, t)} and looks for a row (+-s | -+e | -+1);
    candidates are accepted only after residual verification.

    Returns:
        Optional[np.ndarray]: The secret, or None if the attack failed.
    """
    from nomodlwe.estimators import verify_secret

    m = inst.m if max_samples is None else min(inst.m, max_samples)
    n, q = inst.n, inst.q
    d = n + m + 1
    B = np.zeros((d, d), dtype=np.int64)
    B[:n, :n] = np.eye(n, dtype=np.int64)
    B[:n, n : n + m] = inst.A[:m].T
    B[n : n + m, n : n + m] = q * np.eye(m, dtype=np.int64)
    B[d - 1, n : n + m] = inst.b[:m]
    B[d - 1, d - 1] = 1

    state = _GSOState(B, np.eye(d, dtype=np.int64), delta)
    state.lll()
    beta = min(block_size, d)
    for tour in range(tours):
        if beta >= 2 and not _tour(state, beta):
            break
    error_spec = inst.error_spec
    for row in state.B:
        if abs(int(row[-1])) != 1:
            continue
        candidate = -int(row[-1]) * row[:n]
        if error_spec is None:
            logging.warning("Instance has no error spec; cannot verify uSVP candidates.")
            return None
        if verify_secret(inst, candidate, error_spec).accept:
            logging.info("Primal uSVP attack recovered the secret.")
            return candidate
    logging.info("Primal uSVP attack found no verified candidate.")
    return None
