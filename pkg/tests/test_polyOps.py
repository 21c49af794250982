import numpy as np
import pytest

import nomodlwe.polyOps as polyOps
from nomodlwe.polyOps import polymul_negacyclic, rotate_blocks, rotate_negacyclic


def _schoolbook(a, b):
    n = len(a)
    out = [0] * n
    for i in range(n):
        for j in range(n):
            k = i + j
            if k < n:
                out[k] += a[i] * b[j]
            else:
                out[k - n] -= a[i] * b[j]
    return out


@pytest.mark.parametrize("n", [1, 2, 4, 8])
def test_polymul_matches_schoolbook(n):
    rng = np.random.default_rng(n)
    for _ in range(5):
        a = rng.integers(-50, 51, n)
        b = rng.integers(-50, 51, n)
        assert polymul_negacyclic(a, b).tolist() == _schoolbook(a.tolist(), b.tolist())


def test_polymul_rejects_mismatched_lengths():
    with pytest.raises(ValueError):
        polymul_negacyclic([1, 2], [1, 2, 3])


@pytest.mark.parametrize("t", [-9, -1, 0, 1, 3, 7, 8, 13])
def test_rotation_is_monomial_product(t):
    n = 8
    v = np.arange(1, n + 1)
    monomial = np.zeros(n, dtype=np.int64)
    monomial[t % n] = 1 if (t % (2 * n)) < n else -1
    assert np.array_equal(rotate_negacyclic(v, t), polymul_negacyclic(monomial, v))


def test_rotation_by_n_negates():
    v = np.array([3, -1, 4, 1])
    assert np.array_equal(rotate_negacyclic(v, 4), -v)
    assert np.array_equal(rotate_negacyclic(v, 8), v)


def test_rotate_blocks():
    vec = np.arange(8)
    out = rotate_blocks(vec, 1, 4)
    assert out.tolist() == [-3, 0, 1, 2, -7, 4, 5, 6]
    with pytest.raises(ValueError):
        rotate_blocks(np.arange(6), 1, 4)


def test_public_surface():
    public = {name for name in dir(polyOps) if not name.startswith("_") and callable(getattr(polyOps, name))}
    assert public == {"polymul_negacyclic", "rotate_negacyclic", "rotate_blocks"}
