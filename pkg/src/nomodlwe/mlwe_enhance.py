"""
Sample amplification for structured (Ring/Module) LWE.

Public rows of an unrolled Module-LWE instance come in negacyclic orbits: row j
of sample i is x^j·v_i, where v_i is the row polynomial of sample i. Reduction
matrices are assembled from rotated copies of these orbits, and every short
vector found by reduction yields n samples through the ring automorphisms.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple
import logging

import numpy as np

from nomodlwe.instances import LweInstance, center_mod
from nomodlwe.polyOps import rotate_blocks, rotate_negacyclic
from nomodlwe.reduction import EmbeddedBasis, integer_det
from nomodlwe.utils import Seed, make_rng


class PruneError(ValueError):
    """The projected and pruned embedding lost rank."""


@dataclass
class CirculantBlock:
    """
    One structured sample: row polynomials (one per module component) and the n
    target coefficients of its orbit. ``errors`` holds the true error coefficients
    when the instance carries ground truth.
    """

    block_id: int
    coeffs: np.ndarray
    targets: np.ndarray
    errors: Optional[np.ndarray] = None

    def __post_init__(self):
        self.coeffs = np.atleast_2d(np.asarray(self.coeffs, dtype=np.int64))
        self.targets = np.asarray(self.targets, dtype=np.int64)
        if self.targets.shape != (self.n,):
            raise ValueError(f"Block {self.block_id}: {self.targets.shape[0]} targets for degree {self.n}.")

    @property
    def n(self) -> int:
        return self.coeffs.shape[1]

    def _signed(self, values: np.ndarray, exponent: int) -> int:
        e = exponent % (2 * self.n)
        return int(values[e]) if e < self.n else -int(values[e - self.n])

    def row(self, exponent: int) -> np.ndarray:
        """Coefficients of x^exponent·v, components concatenated."""
        return rotate_negacyclic(self.coeffs, exponent).reshape(-1)

    def target(self, exponent: int) -> int:
        return self._signed(self.targets, exponent)

    def error(self, exponent: int) -> Optional[int]:
        return None if self.errors is None else self._signed(self.errors, exponent)

    def to_dict(self) -> Dict[str, Any]:
        return {"block_id": self.block_id, "coeffs": self.coeffs, "targets": self.targets, "errors": self.errors}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CirculantBlock":
        errors = data.get("errors")
        return cls(
            int(data["block_id"]),
            np.array(data["coeffs"], dtype=np.int64),
            np.array(data["targets"], dtype=np.int64),
            None if errors is None else np.array(errors, dtype=np.int64),
        )


def blocks_from_instance(inst: LweInstance) -> List[CirculantBlock]:
    """Recover one circulant block per structured sample of an unrolled RLWE/MLWE instance."""
    if inst.ring is None:
        raise ValueError("Instance carries no ring layout; it was not built from RLWE/MLWE.")
    n, rank, samples = inst.ring.degree, inst.ring.rank, inst.ring.samples
    blocks = []
    for i in range(samples):
        rows = slice(i * n, (i + 1) * n)
        blocks.append(
            CirculantBlock(
                block_id=i,
                coeffs=inst.A[i * n].reshape(rank, n),
                targets=inst.b[rows],
                errors=None if inst.error is None else inst.error[rows],
            )
        )
    return blocks


@dataclass
class SampleMatrix:
    """Rows of a reduction matrix with their targets and (block_id, exponent) provenance."""

    rows: np.ndarray
    targets: np.ndarray
    provenance: List[Tuple[int, int]] = field(default_factory=list)
    errors: Optional[np.ndarray] = None

    @property
    def m(self) -> int:
        return self.rows.shape[0]

    @classmethod
    def from_provenance(cls, blocks: Sequence[CirculantBlock], provenance: List[Tuple[int, int]]) -> "SampleMatrix":
        by_id = {block.block_id: block for block in blocks}
        rows = np.array([by_id[b].row(e) for b, e in provenance], dtype=np.int64)
        targets = np.array([by_id[b].target(e) for b, e in provenance], dtype=np.int64)
        errors = None
        if all(block.errors is not None for block in blocks):
            errors = np.array([by_id[b].error(e) for b, e in provenance], dtype=np.int64)
        return cls(rows, targets, list(provenance), errors)

    def head(self, m: int) -> "SampleMatrix":
        errors = None if self.errors is None else self.errors[:m]
        return SampleMatrix(self.rows[:m], self.targets[:m], self.provenance[:m], errors)

    def automorphed(self, t: int, blocks: Sequence[CirculantBlock]) -> "SampleMatrix":
        """Every row multiplied by x^t, with the targets and errors that go with it."""
        n = blocks[0].n
        shifted = [(b, (e + t) % (2 * n)) for b, e in self.provenance]
        return SampleMatrix.from_provenance(blocks, shifted)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "rows": self.rows,
            "targets": self.targets,
            "provenance": [list(p) for p in self.provenance],
            "errors": self.errors,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SampleMatrix":
        errors = data.get("errors")
        return cls(
            np.array(data["rows"], dtype=np.int64),
            np.array(data["targets"], dtype=np.int64),
            [tuple(p) for p in data.get("provenance", [])],
            None if errors is None else np.array(errors, dtype=np.int64),
        )


def offset_schedule(
    n: int,
    spacing: int,
    num_blocks: int,
    seed: Seed = None,
    length: Optional[int] = None,
) -> List[List[int]]:
    """
    Offsets rho in [0, n) to draw for each block.

    Each sequence starts with the deterministic stride 0, spacing, 2·spacing, ...
    (mod n) until it revisits an offset, continues with the unused offsets in
    random order, and only then repeats offsets at random.

    Args:
        n (int): Ring degree.
        spacing (int): Stride of the deterministic prefix.
        num_blocks (int): Number of blocks B.
        seed (Seed): Seed for the random part.
        length (int): Sequence length per block. Default: n.

    Returns:
        List[List[int]]: One offset sequence per block.
    """
    if n < 1 or num_blocks < 1:
        raise ValueError(f"Need n >= 1 and at least one block, got n={n}, B={num_blocks}.")
    spacing = max(1, spacing)
    length = n if length is None else length
    rng = make_rng(seed)
    schedule = []
    for _ in range(num_blocks):
        offsets: List[int] = []
        rho = 0
        while rho not in offsets:
            offsets.append(rho)
            rho = (rho + spacing) % n
        unused = np.array(sorted(set(range(n)) - set(offsets)), dtype=np.int64)
        offsets.extend(int(x) for x in rng.permutation(unused))
        while len(offsets) < length:
            offsets.append(int(rng.integers(0, n)))
        schedule.append(offsets[:length])
    return schedule


def build_subsample(block: CirculantBlock, rho: int) -> SampleMatrix:
    """
    The (n+1)-row subsample for offset rho: rows x^(j - rho)·v for j < n, then the
    first row negated, which is x^(n - rho)·v.
    """
    n = block.n
    if not 0 <= rho < n:
        raise ValueError(f"Offset must lie in [0, {n}), got {rho}.")
    provenance = [(block.block_id, (j - rho) % (2 * n)) for j in range(n + 1)]
    return SampleMatrix.from_provenance([block], provenance)


def assemble_matrix(
    blocks: Sequence[CirculantBlock],
    schedule: List[List[int]],
    rows_needed: int,
    matrix_index: int = 0,
    seed: Seed = None,
) -> SampleMatrix:
    """
    Concatenate subsamples until at least ``rows_needed`` rows are available.

    Blocks are not reused within a matrix until all of them have appeared, and the
    first block of matrix i is block i mod B, so the first B matrices start with
    distinct blocks. Offsets are read from each block's schedule starting at
    position ``matrix_index``.
    """
    if rows_needed < 1:
        raise ValueError(f"Need at least one row, got {rows_needed}.")
    B = len(blocks)
    rng = make_rng(seed)
    cursors = [matrix_index] * B
    first = matrix_index % B
    order = [first] + [int(i) for i in rng.permutation([i for i in range(B) if i != first])]
    provenance: List[Tuple[int, int]] = []
    used = 0
    warned = False
    while len(provenance) < rows_needed:
        if used == len(order):
            if not warned:
                logging.warning(
                    f"{B} block(s) cannot supply {rows_needed} rows without reuse; reusing blocks."
                )
                warned = True
            order.extend(int(i) for i in rng.permutation(B))
        idx = order[used]
        used += 1
        offsets = schedule[idx]
        rho = offsets[cursors[idx] % len(offsets)]
        cursors[idx] += 1
        provenance.extend(build_subsample(blocks[idx], rho).provenance)
    return SampleMatrix.from_provenance(blocks, provenance)


@dataclass
class PruneBookkeeping:
    g: int
    n: int
    original_dim: int
    sample_rows: int
    kept_rows: np.ndarray
    kept_cols: np.ndarray

    @property
    def zeroed_rows(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.original_dim), self.kept_rows)

    @property
    def zeroed_cols(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.original_dim), self.kept_cols)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "g": self.g,
            "n": self.n,
            "original_dim": self.original_dim,
            "sample_rows": self.sample_rows,
            "kept_rows": self.kept_rows,
            "kept_cols": self.kept_cols,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PruneBookkeeping":
        return cls(
            int(data["g"]),
            int(data["n"]),
            int(data["original_dim"]),
            int(data["sample_rows"]),
            np.array(data["kept_rows"], dtype=np.int64),
            np.array(data["kept_cols"], dtype=np.int64),
        )


def _has_full_rank(M: np.ndarray) -> bool:
    d = M.shape[0]
    if M.shape != (d, d):
        return False
    if not np.any(np.tril(M, -1)) or not np.any(np.triu(M, 1)):
        return bool(np.all(np.diag(M) != 0))
    return integer_det(M) != 0


def project_and_prune(raw: EmbeddedBasis, g: int, n: int) -> Tuple[EmbeddedBasis, PruneBookkeeping]:
    """
    Restrict an embedding over (h+1)·n sample rows to m = h·n + g rows.

    The projector zeros the last n - g sample coordinates; the rows and columns
    left entirely zero are removed, and the remaining basis must be of full rank.

    Raises:
        PruneError: The pruned basis is rank deficient.
    """
    if not 0 <= g < n:
        raise ValueError(f"Need 0 <= g < n, got g={g}, n={n}.")
    if raw.m % n or raw.m < n:
        raise ValueError(f"Raw embedding has {raw.m} sample rows, not a positive multiple of n={n}.")
    h = raw.m // n - 1
    m = h * n + g
    B = raw.basis.copy()
    B[m : raw.m, :] = 0
    B[:, m : raw.m] = 0
    kept_rows = np.flatnonzero(np.any(B != 0, axis=1))
    kept_cols = np.flatnonzero(np.any(B != 0, axis=0))
    pruned = B[np.ix_(kept_rows, kept_cols)]
    if not _has_full_rank(pruned):
        raise PruneError(f"Pruned embedding ({pruned.shape[0]}x{pruned.shape[1]}) is rank deficient.")
    original = raw.original[np.ix_(kept_rows, kept_cols)].copy()
    bk = PruneBookkeeping(g, n, raw.dim, raw.m, kept_rows, kept_cols)
    basis = EmbeddedBasis(pruned.copy(), np.eye(pruned.shape[0], dtype=np.int64), original, raw.omega, raw.q, m, raw.n)
    return basis, bk


def reinsert(vectors, bk: PruneBookkeeping) -> np.ndarray:
    """Put zeros back at the pruned coordinates."""
    vectors = np.asarray(vectors, dtype=np.int64)
    single = vectors.ndim == 1
    vectors = np.atleast_2d(vectors)
    if vectors.shape[1] != bk.kept_cols.shape[0]:
        raise ValueError(f"Vector length {vectors.shape[1]} does not match pruned width {bk.kept_cols.shape[0]}.")
    out = np.zeros((vectors.shape[0], bk.original_dim), dtype=np.int64)
    out[:, bk.kept_cols] = vectors
    return out[0] if single else out


def _orbit(row: np.ndarray, n: int) -> List[Tuple[int, np.ndarray]]:
    row = np.asarray(row, dtype=np.int64)
    if row.shape[-1] % n:
        raise ValueError(f"Row length {row.shape[-1]} is not a multiple of n={n}.")
    seen = set()
    orbit = []
    for t in range(n):
        rotated = rotate_blocks(row, t, n)
        key = tuple(rotated.tolist())
        if key in seen:
            continue
        seen.add(key)
        orbit.append((t, rotated))
    return orbit


def orbit_expand(row, n: int) -> List[np.ndarray]:
    """The distinct vectors x^t·row (every length-n block rotated together), t < n."""
    return [vec for _, vec in _orbit(row, n)]


def apply_automorphism(A, b, t: int, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Rotate every length-n block of every row of A by x^t.

    For rows laid out in full negacyclic orbits (an unrolled RLWE/MLWE instance)
    the matching targets are b's blocks rotated by x^-t, so the rotated system
    keeps the same secret.
    """
    if not 0 <= t < n:
        raise ValueError(f"Rotation must lie in [0, {n}), got {t}.")
    A_t = rotate_blocks(np.asarray(A, dtype=np.int64), t, n)
    b_t = rotate_blocks(np.asarray(b, dtype=np.int64), -t, n)
    return A_t, b_t


@dataclass
class AmplifiedSample:
    """A reduced sample (a, target) with target = a·s + noise (mod q)."""

    source_row: int
    matrix_id: int
    t: int
    a: np.ndarray
    target: int
    r_norm_sq: int
    noise: Optional[int] = None


def amplify_entry(
    vector,
    source_row: int,
    matrix: SampleMatrix,
    omega: int,
    q: int,
    matrix_id: int = 0,
    blocks: Optional[Sequence[CirculantBlock]] = None,
    rotation_targets: Optional[Dict[int, SampleMatrix]] = None,
) -> List[AmplifiedSample]:
    """
    Turn a pooled vector (omega·r | rA + qc) over ``matrix`` into reduced samples.

    Without ring structure this is the single sample (rA mod q, r·b). With blocks,
    each distinct rotation x^t of rA gives the sample (x^t·rA, r·b_t) where b_t are
    the targets of the automorphed matrix; its noise r·e_t has the same norm
    profile as r·e.
    """
    vector = np.asarray(vector, dtype=np.int64)
    head = vector[: matrix.m]
    if np.any(head % omega):
        raise ValueError("Vector is not of the form (omega·r | rA + qc).")
    r, u = head // omega, vector[matrix.m :]
    rows = [(0, u)] if blocks is None else _orbit(u, blocks[0].n)
    out = []
    for t, rotated in rows:
        if t == 0:
            shifted = matrix
        elif rotation_targets is not None and t in rotation_targets:
            shifted = rotation_targets[t]
        else:
            shifted = matrix.automorphed(t, blocks)
        target = center_mod(int(r @ shifted.targets), q)
        noise = None if shifted.errors is None else int(r @ shifted.errors)
        out.append(
            AmplifiedSample(source_row, matrix_id, t, center_mod(rotated, q), target, int(r @ r), noise)
        )
    return out
