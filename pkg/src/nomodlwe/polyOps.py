"""Coefficient-vector arithmetic in Z[x]/(x^n + 1)."""

import numpy as np


def polymul_negacyclic(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    Multiply two polynomials modulo x^n + 1 (schoolbook, no modular reduction).

    Args:
        a (np.ndarray): Coefficients of a(x), length n.
        b (np.ndarray): Coefficients of b(x), length n.

    Returns:
        np.ndarray: Coefficients of a(x)·b(x) mod (x^n + 1), length n.
    """
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("Operands must be coefficient vectors of equal length.")
    n = a.shape[0]
    full = np.convolve(a, b)
    result = full[:n].copy()
    # x^n = -1 folds the upper half back with a sign flip
    result[: n - 1] -= full[n:]
    return result


def rotate_negacyclic(v: np.ndarray, t: int) -> np.ndarray:
    """
    Coefficients of x^t · v(x) mod (x^n + 1), for any integer t.

    Args:
        v (np.ndarray): Coefficient vector of length n.
        t (int): Exponent; negative values rotate the other way.

    Returns:
        np.ndarray: Rotated vector, entries that wrap past x^n change sign.
    """
    v = np.asarray(v)
    n = v.shape[-1]
    t = int(t) % (2 * n)
    sign = 1
    if t >= n:
        t -= n
        sign = -1
    rotated = np.roll(v, t, axis=-1)
    rotated[..., :t] *= -1
    return sign * rotated


def rotate_blocks(vec: np.ndarray, t: int, n: int) -> np.ndarray:
    """Apply x^t to every consecutive length-n block of vec."""
    vec = np.asarray(vec)
    if vec.shape[-1] % n != 0:
        raise ValueError(f"Vector length {vec.shape[-1]} is not a multiple of n={n}.")
    blocks = vec.reshape(vec.shape[:-1] + (vec.shape[-1] // n, n))
    return rotate_negacyclic(blocks, t).reshape(vec.shape)
