import logging

import numpy as np
import pytest

from nomodlwe.instances import (
    GAUSSIAN,
    TERNARY,
    ErrorSpec,
    SecretSpec,
    center_mod,
    gen_lwe,
    gen_mlwe,
    gen_rlwe,
    mlwe_to_lwe,
    rlwe_to_lwe,
)
from nomodlwe.mlwe_enhance import (
    CirculantBlock,
    PruneError,
    SampleMatrix,
    amplify_entry,
    apply_automorphism,
    assemble_matrix,
    blocks_from_instance,
    build_subsample,
    offset_schedule,
    orbit_expand,
    project_and_prune,
    reinsert,
)
from nomodlwe.polyOps import rotate_blocks
from nomodlwe.reduction import embed


def _mlwe(n=8, rank=2, samples=3, q=251, seed=0):
    spec = SecretSpec(TERNARY, rank * n)
    return mlwe_to_lwe(gen_mlwe(n, rank, samples, q, spec, ErrorSpec(GAUSSIAN, sigma=1.0), seed=seed))


def _relation_holds(matrix: SampleMatrix, secret, q):
    return np.all(np.mod(matrix.rows @ secret + matrix.errors - matrix.targets, q) == 0)


def test_offset_schedule_prefix_and_coverage():
    (seq,) = offset_schedule(4, 2, 1, seed=0)
    assert seq[:2] == [0, 2]
    assert sorted(seq[2:]) == [1, 3]
    for seq in offset_schedule(8, 3, 4, seed=1):
        assert sorted(seq) == list(range(8))
        assert seq[:3] == [0, 3, 6]
    assert offset_schedule(4, 1, 1, seed=2)[0] == [0, 1, 2, 3]
    long = offset_schedule(4, 2, 2, seed=3, length=7)
    assert all(len(seq) == 7 and sorted(seq[:4]) == [0, 1, 2, 3] for seq in long)
    with pytest.raises(ValueError):
        offset_schedule(0, 1, 1)


def test_build_subsample_rows():
    block = CirculantBlock(0, [1, 0, 0, 0], [10, 20, 30, 40])
    sub = build_subsample(block, 0)
    assert sub.m == 5
    assert np.array_equal(sub.rows[:4], np.eye(4, dtype=np.int64))
    assert sub.rows[4].tolist() == [-1, 0, 0, 0]
    assert sub.targets.tolist() == [10, 20, 30, 40, -10]

    shifted = build_subsample(block, 1)
    assert shifted.rows[0].tolist() == [0, 0, 0, -1]
    assert shifted.targets[0] == -40
    # the extra row is x^(n - rho)·v
    assert shifted.rows[4].tolist() == [0, 0, 0, 1]
    with pytest.raises(ValueError):
        build_subsample(block, 4)


def test_subsample_rows_share_coefficient_multiset():
    block = CirculantBlock(3, [5, -2, 0, 7, 1, 0, -3, 4], np.arange(8))
    reference = sorted(np.abs(block.coeffs[0]))
    for rho in range(8):
        for row in build_subsample(block, rho).rows:
            assert sorted(np.abs(row)) == reference


def test_block_rejects_wrong_target_count():
    with pytest.raises(ValueError):
        CirculantBlock(0, [1, 2, 3, 4], [1, 2, 3])


def test_blocks_reproduce_unrolled_rows():
    inst = _mlwe()
    n = inst.ring.degree
    for block in blocks_from_instance(inst):
        group = slice(block.block_id * n, (block.block_id + 1) * n)
        assert np.array_equal(np.array([block.row(j) for j in range(n)]), inst.A[group])
        assert [block.target(j) for j in range(n)] == inst.b[group].tolist()
    with pytest.raises(ValueError):
        blocks_from_instance(gen_lwe(8, 8, 251, SecretSpec(TERNARY, 8), ErrorSpec(GAUSSIAN, sigma=1.0), seed=0))


def test_assemble_matrix_first_blocks_distinct():
    inst = _mlwe(samples=4)
    blocks = blocks_from_instance(inst)
    schedule = offset_schedule(8, 2, len(blocks), seed=0)
    firsts = []
    for i in range(len(blocks)):
        matrix = assemble_matrix(blocks, schedule, 27, matrix_index=i, seed=i)
        assert matrix.m >= 27
        firsts.append(matrix.provenance[0][0])
        used = [matrix.provenance[j * 9][0] for j in range(matrix.m // 9)]
        assert len(set(used)) == len(used)
        assert _relation_holds(matrix, inst.secret, inst.q)
    assert firsts == list(range(len(blocks)))


def test_assemble_matrix_single_subsample_and_reuse(caplog):
    inst = _mlwe(samples=1)
    blocks = blocks_from_instance(inst)
    schedule = offset_schedule(8, 4, 1, seed=0)
    assert assemble_matrix(blocks, schedule, 9).m == 9
    with caplog.at_level(logging.WARNING):
        matrix = assemble_matrix(blocks, schedule, 20, seed=1)
    assert matrix.m == 27
    assert "reusing blocks" in caplog.text
    assert _relation_holds(matrix, inst.secret, inst.q)


def test_automorphed_matrix_keeps_relation():
    inst = _mlwe(seed=4)
    blocks = blocks_from_instance(inst)
    matrix = assemble_matrix(blocks, offset_schedule(8, 2, len(blocks), seed=0), 18, seed=0)
    for t in range(8):
        assert _relation_holds(matrix.automorphed(t, blocks), inst.secret, inst.q)


def _raw_embedding(seed=0, h=2, n=8):
    inst = rlwe_to_lwe(
        gen_rlwe(n, h + 1, 251, SecretSpec(TERNARY, n), ErrorSpec(GAUSSIAN, sigma=1.0), seed=seed)
    )
    return embed(inst.A, 10, 251)


@pytest.mark.parametrize("g", [0, 3, 7])
def test_project_and_prune_shapes(g):
    raw = _raw_embedding()
    basis, bk = project_and_prune(raw, g, 8)
    m = 2 * 8 + g
    assert basis.m == m and basis.n == 8
    assert basis.dim == m + 8
    assert basis.basis.shape == (m + 8, m + 8)
    assert bk.zeroed_rows.tolist() == list(range(m, 24))
    assert bk.zeroed_cols.tolist() == list(range(m, 24))
    assert np.array_equal(basis.original, basis.basis)
    assert np.array_equal(basis.sample_matrix, raw.sample_matrix[:m])


def test_project_and_prune_rejects_bad_input():
    raw = _raw_embedding()
    with pytest.raises(ValueError):
        project_and_prune(raw, 8, 8)
    broken = raw.with_rows(raw.basis, raw.transform)
    broken.basis[0] = broken.basis[1]
    with pytest.raises(PruneError):
        project_and_prune(broken, 3, 8)


def test_reinsert_restores_layout():
    raw = _raw_embedding(seed=1)
    basis, bk = project_and_prune(raw, 3, 8)
    rng = np.random.default_rng(0)
    vectors = rng.integers(-5, 6, size=(4, basis.dim))
    full = reinsert(vectors, bk)
    assert full.shape == (4, raw.dim)
    assert np.array_equal(full[:, bk.kept_cols], vectors)
    assert not np.any(full[:, bk.zeroed_cols])
    assert np.array_equal(np.linalg.norm(full, axis=1), np.linalg.norm(vectors, axis=1))
    assert reinsert(vectors[0], bk).shape == (raw.dim,)
    with pytest.raises(ValueError):
        reinsert(vectors[:, :-1], bk)


def test_pruned_lattice_vectors_lift_into_raw_lattice():
    raw = _raw_embedding(seed=2)
    basis, bk = project_and_prune(raw, 5, 8)
    rng = np.random.default_rng(1)
    for _ in range(20):
        v = rng.integers(-3, 4, basis.dim) @ basis.basis
        assert basis.contains(v)
        assert raw.contains(reinsert(v, bk))


def test_orbit_expand_degree_two():
    orbit = orbit_expand(np.array([1, 2]), 2)
    assert [v.tolist() for v in orbit] == [[1, 2], [-2, 1]]
    assert len(orbit_expand(np.zeros(4, dtype=np.int64), 4)) == 1
    with pytest.raises(ValueError):
        orbit_expand(np.array([1, 2, 3]), 2)


def test_orbit_expand_preserves_norm_per_block():
    rng = np.random.default_rng(2)
    row = rng.integers(-10, 11, 16)
    orbit = orbit_expand(row, 8)
    assert 1 <= len(orbit) <= 8
    for vec in orbit:
        assert vec @ vec == row @ row
        assert vec[:8] @ vec[:8] == row[:8] @ row[:8]


def test_apply_automorphism_identity_and_negation():
    inst = _mlwe(n=4, rank=2, samples=2, seed=3)
    A_t, b_t = apply_automorphism(inst.A, inst.b, 0, 4)
    assert np.array_equal(A_t, inst.A) and np.array_equal(b_t, inst.b)
    A_t, b_t = inst.A, inst.b
    for _ in range(4):
        A_t, b_t = apply_automorphism(A_t, b_t, 1, 4)
    assert np.array_equal(A_t, -inst.A) and np.array_equal(b_t, -inst.b)
    with pytest.raises(ValueError):
        apply_automorphism(inst.A, inst.b, 4, 4)


@pytest.mark.parametrize("t", range(4))
def test_apply_automorphism_keeps_secret(t):
    inst = _mlwe(n=4, rank=2, samples=2, seed=5)
    A_t, b_t = apply_automorphism(inst.A, inst.b, t, 4)
    e_t = rotate_blocks(inst.error, -t, 4)
    assert np.all(np.mod(A_t @ inst.secret + e_t - b_t, inst.q) == 0)


def _amplified_relation_violations(vectors_per_matrix, seed):
    inst = _mlwe(n=8, rank=2, samples=3, seed=seed)
    blocks = blocks_from_instance(inst)
    matrix = assemble_matrix(blocks, offset_schedule(8, 2, len(blocks), seed=seed), 18, seed=seed)
    basis = embed(matrix.rows, 10, inst.q)
    rotations = {t: matrix.automorphed(t, blocks) for t in range(1, 8)}
    rng = np.random.default_rng(seed)
    violations = total = 0
    for i in range(vectors_per_matrix):
        vector = rng.integers(-2, 3, basis.dim) @ basis.basis
        samples = amplify_entry(vector, i, matrix, 10, inst.q, 0, blocks, rotations)
        u = center_mod(vector[matrix.m :], inst.q)
        assert 1 <= len(samples) <= 8
        assert len({s.t for s in samples}) == len(samples)
        for sample in samples:
            total += 1
            assert sample.a @ sample.a == u @ u
            assert sample.r_norm_sq == int((vector[: matrix.m] // 10) @ (vector[: matrix.m] // 10))
            if (sample.a @ inst.secret + sample.noise - sample.target) % inst.q:
                violations += 1
    return violations, total


def test_amplified_samples_satisfy_relation():
    violations, total = _amplified_relation_violations(200, seed=6)
    assert total > 0
    assert violations == 0


@pytest.mark.slow
def test_amplified_samples_satisfy_relation_many():
    violations, total = _amplified_relation_violations(1250, seed=7)
    assert total >= 10_000 * 0.9
    assert violations == 0


def test_amplify_without_ring_gives_single_sample():
    inst = gen_lwe(8, 12, 251, SecretSpec(TERNARY, 8), ErrorSpec(GAUSSIAN, sigma=1.0), seed=2)
    matrix = SampleMatrix(inst.A, inst.b, [(i, 0) for i in range(12)], inst.error)
    basis = embed(matrix.rows, 10, 251)
    vector = np.arange(-10, 10) @ basis.basis
    (sample,) = amplify_entry(vector, 0, matrix, 10, 251)
    assert sample.t == 0
    assert (sample.a @ inst.secret + sample.noise - sample.target) % 251 == 0
    with pytest.raises(ValueError):
        amplify_entry(vector + 1, 0, matrix, 10, 251)


def test_sample_matrix_dict_round_trip():
    inst = _mlwe(seed=8)
    blocks = blocks_from_instance(inst)
    matrix = assemble_matrix(blocks, offset_schedule(8, 2, len(blocks), seed=0), 9, seed=0)
    again = SampleMatrix.from_dict(matrix.to_dict())
    assert np.array_equal(again.rows, matrix.rows)
    assert again.provenance == matrix.provenance
    restored = [CirculantBlock.from_dict(b.to_dict()) for b in blocks]
    assert np.array_equal(SampleMatrix.from_provenance(restored, again.provenance).targets, matrix.targets)
