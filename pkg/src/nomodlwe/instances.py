"""
LWE, Ring-LWE and Module-LWE instance generation.

Secrets and errors follow the families used in lattice cryptanalysis benchmarks
(binary, ternary, centered binomial, each optionally with a fixed Hamming weight).
All residues are stored centered in (-q/2, q/2].
"""

from dataclasses import dataclass, field
from math import comb
from typing import Any, Dict, Optional, Union
import logging

import numpy as np

from nomodlwe.polyOps import polymul_negacyclic
from nomodlwe.utils import Seed, load_json, make_rng, write_json

BINARY = "binary"
BINARY_HW = "binary_hw"
TERNARY = "ternary"
TERNARY_HW = "ternary_hw"
CBD = "cbd"
CBD_HW = "cbd_hw"
SECRET_FAMILIES = (BINARY, BINARY_HW, TERNARY, TERNARY_HW, CBD, CBD_HW)
FIXED_HW_FAMILIES = (BINARY_HW, TERNARY_HW, CBD_HW)

GAUSSIAN = "gaussian"
ERROR_FAMILIES = (GAUSSIAN, CBD)


def center_mod(x, q: int):
    """
    Reduce x modulo q into the centered range (-q/2, q/2].

    Works on Python integers and on integer numpy arrays.
    """
    if q < 2:
        raise ValueError(f"Modulus must be at least 2, got {q}.")
    if isinstance(x, np.ndarray):
        r = np.mod(x, q)
        return np.where(r > q // 2, r - q, r)
    r = int(x) % q
    return r - q if r > q // 2 else r


def cbd_zero_probability(eta: int) -> float:
    """P[s = 0] for CBD_eta, i.e. C(2 eta, eta) / 4^eta."""
    return comb(2 * eta, eta) / 4**eta


def sample_cbd(eta: int, size, rng: np.random.Generator) -> np.ndarray:
    """Centered binomial draws: sum of eta (u - v) with u, v ~ Bernoulli(1/2)."""
    return (rng.binomial(eta, 0.5, size) - rng.binomial(eta, 0.5, size)).astype(np.int64)


def _sample_cbd_nonzero(eta: int, count: int, rng: np.random.Generator) -> np.ndarray:
    out = np.zeros(count, dtype=np.int64)
    filled = 0
    while filled < count:
        draws = sample_cbd(eta, 2 * (count - filled) + 4, rng)
        draws = draws[draws != 0][: count - filled]
        out[filled : filled + draws.shape[0]] = draws
        filled += draws.shape[0]
    return out


@dataclass(frozen=True)
class SecretSpec:
    """Secret distribution: family name, dimension and family parameters."""

    family: str
    n_total: int
    p: float = 0.5
    h: Optional[int] = None
    eta: Optional[int] = None

    def __post_init__(self):
        if self.family not in SECRET_FAMILIES:
            raise ValueError(f"Unknown secret family '{self.family}'. Choose from {SECRET_FAMILIES}.")
        if self.n_total < 1:
            raise ValueError(f"Secret dimension must be positive, got {self.n_total}.")
        if self.family == BINARY and not 0 < self.p < 1:
            raise ValueError(f"Bernoulli parameter must lie in (0, 1), got {self.p}.")
        if self.family in FIXED_HW_FAMILIES:
            if self.h is None:
                raise ValueError(f"Family '{self.family}' needs a Hamming weight h.")
            if not 0 <= self.h <= self.n_total:
                raise ValueError(f"Hamming weight h={self.h} outside [0, {self.n_total}].")
        if self.family in (CBD, CBD_HW) and (self.eta is None or self.eta < 1):
            raise ValueError(f"Family '{self.family}' needs eta >= 1, got {self.eta}.")

    @property
    def is_fixed_hw(self) -> bool:
        return self.family in FIXED_HW_FAMILIES

    @property
    def is_binary(self) -> bool:
        return self.family in (BINARY, BINARY_HW)

    @property
    def bounds(self):
        """Inclusive (low, high) range of a single coordinate."""
        if self.is_binary:
            return 0, 1
        if self.family in (TERNARY, TERNARY_HW):
            return -1, 1
        return -self.eta, self.eta

    def with_dimension(self, n_total: int) -> "SecretSpec":
        return SecretSpec(self.family, n_total, self.p, self.h, self.eta)

    def to_dict(self) -> Dict[str, Any]:
        data = {"family": self.family, "n_total": self.n_total}
        if self.family == BINARY:
            data["p"] = self.p
        if self.h is not None:
            data["h"] = self.h
        if self.eta is not None:
            data["eta"] = self.eta
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SecretSpec":
        return cls(
            family=data["family"],
            n_total=int(data["n_total"]),
            p=float(data.get("p", 0.5)),
            h=None if data.get("h") is None else int(data["h"]),
            eta=None if data.get("eta") is None else int(data["eta"]),
        )


@dataclass(frozen=True)
class ErrorSpec:
    """Error distribution: rounded Gaussian(sigma) or CBD(eta)."""

    family: str
    sigma: Optional[float] = None
    eta: Optional[int] = None

    def __post_init__(self):
        if self.family not in ERROR_FAMILIES:
            raise ValueError(f"Unknown error family '{self.family}'. Choose from {ERROR_FAMILIES}.")
        if self.family == GAUSSIAN and (self.sigma is None or self.sigma <= 0):
            raise ValueError(f"Gaussian errors need sigma > 0, got {self.sigma}.")
        if self.family == CBD and (self.eta is None or self.eta < 1):
            raise ValueError(f"CBD errors need eta >= 1, got {self.eta}.")

    @property
    def variance(self) -> float:
        if self.family == GAUSSIAN:
            return float(self.sigma) ** 2
        return self.eta / 2.0

    @property
    def stddev(self) -> float:
        return float(np.sqrt(self.variance))

    @property
    def support_bound(self) -> Optional[int]:
        """Largest possible |e_i|, or None for unbounded families."""
        return self.eta if self.family == CBD else None

    def to_dict(self) -> Dict[str, Any]:
        if self.family == GAUSSIAN:
            return {"family": GAUSSIAN, "sigma": self.sigma}
        return {"family": CBD, "eta": self.eta}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ErrorSpec":
        return cls(
            family=data["family"],
            sigma=None if data.get("sigma") is None else float(data["sigma"]),
            eta=None if data.get("eta") is None else int(data["eta"]),
        )


def parse_spec_string(text: str, n_total: Optional[int] = None) -> Union[SecretSpec, ErrorSpec]:
    """
    Parse the compact CLI form ``family[:key=value,...]``.

    Examples: ``binary``, ``binary_hw:h=8``, ``cbd_hw:eta=2,h=6``, ``gaussian:sigma=3``.
    Error families are recognised by name; ``cbd`` is read as a secret family when
    n_total is given and as an error family otherwise.
    """
    params = spec_fields(text)
    family = params["family"]
    if family == GAUSSIAN or (family == CBD and n_total is None):
        return ErrorSpec.from_dict(params)
    if n_total is None:
        raise ValueError(f"Secret spec '{text}' needs the secret dimension.")
    return SecretSpec.from_dict({**params, "n_total": n_total})


_INT_PARAMS = ("h", "eta")
_FLOAT_PARAMS = ("p", "sigma")


def spec_fields(text: str) -> Dict[str, Any]:
    """Split ``family[:key=value,...]`` into a typed dict, e.g. {"family": "cbd_hw", "eta": 2, "h": 8}."""
    family, _, rest = text.strip().partition(":")
    params: Dict[str, Any] = {"family": family.strip()}
    for item in filter(None, rest.split(",")):
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep or key not in _INT_PARAMS + _FLOAT_PARAMS:
            raise ValueError(f"Cannot parse '{item}' in spec '{text}'.")
        params[key] = int(value) if key in _INT_PARAMS else float(value)
    return params


def sample_secret(spec: SecretSpec, seed: Seed = None) -> np.ndarray:
    """
    Draw a secret vector of length spec.n_total from its family.

    Fixed-weight families have exactly spec.h nonzero entries. For CBD with a fixed
    weight, a raw CBD vector is drawn first; excess nonzeros are zeroed uniformly at
    random and missing ones are promoted from uniformly chosen zero coordinates with
    fresh nonzero CBD values.

    Args:
        spec (SecretSpec): Secret family and dimension.
        seed (Seed): Integer seed or Generator.

    Returns:
        np.ndarray: int64 secret vector.
    """
    rng = make_rng(seed)
    n = spec.n_total
    if spec.family == BINARY:
        return (rng.random(n) < spec.p).astype(np.int64)
    if spec.family == TERNARY:
        return rng.integers(-1, 2, n).astype(np.int64)
    if spec.family == CBD:
        return sample_cbd(spec.eta, n, rng)

    s = np.zeros(n, dtype=np.int64)
    if spec.family == BINARY_HW:
        s[rng.choice(n, spec.h, replace=False)] = 1
        return s
    if spec.family == TERNARY_HW:
        support = rng.choice(n, spec.h, replace=False)
        s[support] = rng.choice(np.array([-1, 1]), spec.h)
        return s

    # CBD_HW
    s = sample_cbd(spec.eta, n, rng)
    nonzero = np.flatnonzero(s)
    if nonzero.shape[0] > spec.h:
        s[rng.choice(nonzero, nonzero.shape[0] - spec.h, replace=False)] = 0
    elif nonzero.shape[0] < spec.h:
        zeros = np.flatnonzero(s == 0)
        promote = rng.choice(zeros, spec.h - nonzero.shape[0], replace=False)
        s[promote] = _sample_cbd_nonzero(spec.eta, promote.shape[0], rng)
    return s


def sample_error(spec: ErrorSpec, m: int, seed: Seed = None) -> np.ndarray:
    """
    Draw m error coordinates: rounded continuous Gaussian or CBD.

    Args:
        spec (ErrorSpec): Error family.
        m (int): Number of coordinates, at least 1.
        seed (Seed): Integer seed or Generator.

    Returns:
        np.ndarray: int64 error vector.
    """
    if m < 1:
        raise ValueError(f"Error vector length must be at least 1, got {m}.")
    rng = make_rng(seed)
    if spec.family == GAUSSIAN:
        return np.rint(rng.normal(0.0, spec.sigma, m)).astype(np.int64)
    return sample_cbd(spec.eta, m, rng)


@dataclass(frozen=True)
class RingInfo:
    """Ring structure of an LWE instance obtained from RLWE/MLWE (x^degree + 1)."""

    degree: int
    rank: int
    samples: int

    def to_dict(self) -> Dict[str, int]:
        return {"degree": self.degree, "rank": self.rank, "samples": self.samples}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RingInfo":
        return cls(int(data["degree"]), int(data["rank"]), int(data["samples"]))


@dataclass
class LweInstance:
    """
    Plain LWE samples b = A s + e (mod q), optionally with ground truth.

    A and b are centered in (-q/2, q/2]. When the instance was derived from a ring
    variant, ``ring`` records the layout (k groups of n rows, l blocks of n columns).
    """

    A: np.ndarray
    b: np.ndarray
    q: int
    secret_spec: Optional[SecretSpec] = None
    error_spec: Optional[ErrorSpec] = None
    secret: Optional[np.ndarray] = None
    error: Optional[np.ndarray] = None
    ring: Optional[RingInfo] = None

    def __post_init__(self):
        if self.q < 2:
            raise ValueError(f"Modulus must be at least 2, got {self.q}.")
        self.A = center_mod(np.asarray(self.A, dtype=np.int64), self.q)
        self.b = center_mod(np.asarray(self.b, dtype=np.int64), self.q)
        if self.A.ndim != 2 or self.b.shape != (self.A.shape[0],):
            raise ValueError(f"Shape mismatch: A {self.A.shape}, b {self.b.shape}.")

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def has_truth(self) -> bool:
        return self.secret is not None and self.error is not None

    def public(self) -> "LweInstance":
        """Copy without ground truth."""
        return LweInstance(self.A, self.b, self.q, self.secret_spec, self.error_spec, ring=self.ring)

    def check_truth(self) -> bool:
        """True iff b - A s - e = 0 (mod q) entrywise."""
        if not self.has_truth:
            return False
        residual = self.b - self.A @ self.secret - self.error
        return bool(np.all(np.mod(residual, self.q) == 0))

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            "n": self.n,
            "m": self.m,
            "q": self.q,
            "A": self.A,
            "b": self.b,
            "secret_spec": None if self.secret_spec is None else self.secret_spec.to_dict(),
            "error_spec": None if self.error_spec is None else self.error_spec.to_dict(),
        }
        if self.has_truth:
            data["truth"] = {"s": self.secret, "e": self.error}
        if self.ring is not None:
            data["ring"] = self.ring.to_dict()
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LweInstance":
        truth = data.get("truth") or {}
        A = np.array(data["A"], dtype=np.int64).reshape(int(data["m"]), int(data["n"]))
        return cls(
            A=A,
            b=np.array(data["b"], dtype=np.int64),
            q=int(data["q"]),
            secret_spec=None if data.get("secret_spec") is None else SecretSpec.from_dict(data["secret_spec"]),
            error_spec=None if data.get("error_spec") is None else ErrorSpec.from_dict(data["error_spec"]),
            secret=None if "s" not in truth else np.array(truth["s"], dtype=np.int64),
            error=None if "e" not in truth else np.array(truth["e"], dtype=np.int64),
            ring=None if data.get("ring") is None else RingInfo.from_dict(data["ring"]),
        )


def save_instance(inst: LweInstance, path: str) -> None:
    write_json(inst.to_dict(), path)


def load_instance(path: str) -> LweInstance:
    return LweInstance.from_dict(load_json(path))


def lwe_from_parts(
    A: np.ndarray,
    s: np.ndarray,
    e: np.ndarray,
    q: int,
    secret_spec: Optional[SecretSpec] = None,
    error_spec: Optional[ErrorSpec] = None,
) -> LweInstance:
    """Assemble an instance from explicit A, s, e (e may be all zero)."""
    A = np.asarray(A, dtype=np.int64)
    s = np.asarray(s, dtype=np.int64)
    e = np.asarray(e, dtype=np.int64)
    return LweInstance(A, center_mod(A @ s + e, q), q, secret_spec, error_spec, s, e)


def gen_lwe(
    n: int,
    m: int,
    q: int,
    secret_spec: SecretSpec,
    error_spec: ErrorSpec,
    seed: Seed = None,
) -> LweInstance:
    """
    Generate m LWE samples in dimension n with uniform A and stored ground truth.

    Args:
        n (int): Secret dimension.
        m (int): Number of samples.
        q (int): Modulus.
        secret_spec (SecretSpec): Secret family, n_total must equal n.
        error_spec (ErrorSpec): Error family.
        seed (Seed): Integer seed or Generator.

    Returns:
        LweInstance: Instance with truth (s, e).
    """
    if secret_spec.n_total != n:
        raise ValueError(f"Secret spec dimension {secret_spec.n_total} does not match n={n}.")
    if m < n:
        logging.warning(f"Generating m={m} < n={n} samples; the secret is not uniquely determined.")
    rng = make_rng(seed)
    A = rng.integers(0, q, size=(m, n), dtype=np.int64)
    s = sample_secret(secret_spec, rng)
    e = sample_error(error_spec, m, rng)
    return lwe_from_parts(A, s, e, q, secret_spec, error_spec)


def negacyclic_matrix(a: np.ndarray) -> np.ndarray:
    """
    Matrix of multiplication by a(x) in Z[x]/(x^n + 1).

    Column j holds the coefficients of x^j·a(x): a cyclic shift of a whose wrapped
    entries are negated, so that ``negacyclic_matrix(a) @ s`` is a(x)s(x).
    """
    a = np.asarray(a, dtype=np.int64)
    n = a.shape[0]
    if n < 1:
        raise ValueError("Polynomial must have at least one coefficient.")
    i = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    return np.where(i >= j, 1, -1) * a[(i - j) % n]


@dataclass
class MlweInstance:
    """
    Module-LWE samples b_i = sum_j a_ij s_j + e_i in R_q = Z_q[x]/(x^n + 1).

    Shapes: a (k, l, n), b (k, n), secret (l, n), error (k, n) with k samples
    and module rank l. Ring-LWE is the rank-1 case.
    """

    n: int
    q: int
    a: np.ndarray
    b: np.ndarray
    secret_spec: Optional[SecretSpec] = None
    error_spec: Optional[ErrorSpec] = None
    secret: Optional[np.ndarray] = None
    error: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.n < 1 or self.n & (self.n - 1):
            raise ValueError(f"Ring degree must be a power of two, got {self.n}.")
        self.a = center_mod(np.asarray(self.a, dtype=np.int64), self.q)
        self.b = center_mod(np.asarray(self.b, dtype=np.int64), self.q)
        if self.a.ndim != 3 or self.a.shape[2] != self.n or self.b.shape != (self.a.shape[0], self.n):
            raise ValueError(f"Shape mismatch: a {self.a.shape}, b {self.b.shape}, n={self.n}.")

    @property
    def samples(self) -> int:
        return self.a.shape[0]

    @property
    def rank(self) -> int:
        return self.a.shape[1]


@dataclass
class RlweInstance:
    """
    Ring-LWE samples b_i = a_i s + e_i in Z_q[x]/(x^n + 1).

    Shapes: a (k, n), b (k, n), secret (n,), error (k, n).
    """

    n: int
    q: int
    a: np.ndarray
    b: np.ndarray
    secret_spec: Optional[SecretSpec] = None
    error_spec: Optional[ErrorSpec] = None
    secret: Optional[np.ndarray] = None
    error: Optional[np.ndarray] = None
    _module: MlweInstance = field(init=False, repr=False)

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.int64)
        if a.ndim == 1:
            a = a[None, :]
        b = np.asarray(self.b, dtype=np.int64).reshape(a.shape[0], -1)
        self._module = MlweInstance(
            self.n,
            self.q,
            a[:, None, :],
            b,
            self.secret_spec,
            self.error_spec,
            None if self.secret is None else np.asarray(self.secret, dtype=np.int64).reshape(1, -1),
            None if self.error is None else np.asarray(self.error, dtype=np.int64).reshape(a.shape[0], -1),
        )
        self.a = self._module.a[:, 0, :]
        self.b = self._module.b

    def as_module(self) -> MlweInstance:
        """The same samples viewed as rank-1 Module-LWE."""
        return self._module


def _module_products(a: np.ndarray, s: np.ndarray) -> np.ndarray:
    k, rank, n = a.shape
    out = np.zeros((k, n), dtype=np.int64)
    for i in range(k):
        for j in range(rank):
            out[i] += polymul_negacyclic(a[i, j], s[j])
    return out


def gen_mlwe(
    n: int,
    rank: int,
    samples: int,
    q: int,
    secret_spec: SecretSpec,
    error_spec: ErrorSpec,
    seed: Seed = None,
) -> MlweInstance:
    """
    Generate Module-LWE samples with uniform a and stored ground truth.

    The secret spec describes the concatenated secret of dimension rank·n.
    """
    if secret_spec.n_total != rank * n:
        raise ValueError(f"Secret spec dimension {secret_spec.n_total} does not match rank*n={rank * n}.")
    rng = make_rng(seed)
    a = rng.integers(0, q, size=(samples, rank, n), dtype=np.int64)
    s = sample_secret(secret_spec, rng).reshape(rank, n)
    e = sample_error(error_spec, samples * n, rng).reshape(samples, n)
    b = center_mod(_module_products(a, s) + e, q)
    return MlweInstance(n, q, a, b, secret_spec, error_spec, s, e)


def gen_rlwe(
    n: int,
    samples: int,
    q: int,
    secret_spec: SecretSpec,
    error_spec: ErrorSpec,
    seed: Seed = None,
) -> RlweInstance:
    """Generate Ring-LWE samples (rank-1 Module-LWE)."""
    inst = gen_mlwe(n, 1, samples, q, secret_spec, error_spec, seed)
    return RlweInstance(
        n, q, inst.a[:, 0, :], inst.b, secret_spec, error_spec, inst.secret[0], inst.error
    )


def mlwe_to_lwe(inst: MlweInstance) -> LweInstance:
    """
    Unroll Module-LWE into plain LWE with a (k·n) x (l·n) block-negacyclic matrix.

    Row group i holds the n coefficient equations of sample i; column block j
    multiplies the j-th secret polynomial.
    """
    A = np.block(
        [[negacyclic_matrix(inst.a[i, j]) for j in range(inst.rank)] for i in range(inst.samples)]
    )
    b = inst.b.reshape(-1)
    secret = None if inst.secret is None else inst.secret.reshape(-1)
    error = None if inst.error is None else inst.error.reshape(-1)
    return LweInstance(
        A,
        b,
        inst.q,
        inst.secret_spec,
        inst.error_spec,
        secret,
        error,
        RingInfo(inst.n, inst.rank, inst.samples),
    )


def rlwe_to_lwe(inst: RlweInstance) -> LweInstance:
    """Unroll Ring-LWE into plain LWE with stacked negacyclic matrices."""
    return mlwe_to_lwe(inst.as_module())
