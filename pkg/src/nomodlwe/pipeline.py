"""
End-to-end attack orchestration: instance, preprocessing fan-out over reduction
matrices, amplification into a sample store, sigma-ranked training subsets and the
fit/round/verify loop.
"""

from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, fields, replace
from math import ceil
from time import perf_counter
from typing import Any, Callable, Dict, List, Optional, Tuple
import csv
import logging
import os

import numpy as np

from nomodlwe.estimators import (
    ESTIMATORS,
    FitResult,
    RegressionProblem,
    fit,
    normalize_round_clip,
    verify_secret,
)
from nomodlwe.instances import (
    CBD,
    ErrorSpec,
    LweInstance,
    SecretSpec,
    center_mod,
    gen_lwe,
    gen_mlwe,
    gen_rlwe,
    mlwe_to_lwe,
    rlwe_to_lwe,
)
from nomodlwe.mlwe_enhance import (
    AmplifiedSample,
    CirculantBlock,
    PruneBookkeeping,
    SampleMatrix,
    amplify_entry,
    assemble_matrix,
    blocks_from_instance,
    offset_schedule,
    project_and_prune,
    reinsert,
)
from nomodlwe.nomod_approx import btilde_moments, expected_inliers, most_likely_preimages
from nomodlwe.reduction import (
    EmbeddedBasis,
    ReductionConfig,
    ReductionError,
    ShortVectorPool,
    embed,
    optimal_sample_count,
    progressive_reduce,
)
from nomodlwe.utils import load_json, make_rng, open_text, write_json

STRUCTURES = ("lwe", "rlwe", "mlwe")
SUBSET_FRACTIONS = (0.05, 0.10, 0.25, 0.50)


@dataclass
class PipelineConfig:
    """Full attack configuration. ``n`` is the LWE dimension, or the ring degree for rlwe/mlwe."""

    structure: str = "lwe"
    n: int = 32
    k: int = 1
    q: int = 251
    secret: Dict[str, Any] = field(default_factory=lambda: {"family": "binary"})
    error: Dict[str, Any] = field(default_factory=lambda: {"family": "gaussian", "sigma": 3.0})
    base_samples: Optional[int] = None
    omega: Optional[int] = None
    reduction: ReductionConfig = field(default_factory=ReductionConfig)
    matrices: int = 4
    sample_count: Optional[int] = None
    train_fraction: float = 0.75
    subset_fractions: List[float] = field(default_factory=lambda: list(SUBSET_FRACTIONS))
    estimator: str = "tukey"
    estimator_params: Dict[str, Any] = field(default_factory=dict)
    tau: float = 1.5
    t_sigma: float = 4.0
    workers: int = 1
    seed: Optional[int] = None
    interleaved: bool = True
    output_dir: Optional[str] = None

    def __post_init__(self):
        if isinstance(self.reduction, dict):
            self.reduction = ReductionConfig.from_dict(self.reduction)
        if self.structure not in STRUCTURES:
            raise ValueError(f"Unknown structure '{self.structure}'. Choose from {STRUCTURES}.")
        if not 0 < self.train_fraction <= 1:
            raise ValueError(f"train_fraction must lie in (0, 1], got {self.train_fraction}.")
        if self.matrices < 1:
            raise ValueError(f"Need at least one reduction matrix, got {self.matrices}.")
        if self.sample_count is not None and self.sample_count < 1:
            raise ValueError(f"sample_count must be at least 1, got {self.sample_count}.")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"Unknown estimator '{self.estimator}'. Choose from {ESTIMATORS}.")
        if self.structure == "lwe" and self.k != 1:
            raise ValueError("Plain LWE has module rank k = 1.")

    @property
    def dimension(self) -> int:
        """Secret dimension of the unrolled LWE instance."""
        return self.n * self.k

    @property
    def pool_capacity(self) -> int:
        return self.reduction.pool_capacity

    def secret_spec(self) -> SecretSpec:
        return SecretSpec.from_dict({**self.secret, "n_total": self.dimension})

    def error_spec(self) -> ErrorSpec:
        return ErrorSpec.from_dict(self.error)

    def resolved_omega(self) -> int:
        if self.omega is not None:
            return self.omega
        return 4 if self.error.get("family") == CBD else 10

    def resolved_base_samples(self) -> int:
        return self.base_samples if self.base_samples is not None else 4 * self.dimension

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["reduction"] = self.reduction.to_dict()
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            logging.warning(f"Ignoring unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**{key: value for key, value in data.items() if key in known})


def load_config(path: str) -> PipelineConfig:
    return PipelineConfig.from_dict(load_json(path))


def apply_overrides(config: PipelineConfig, overrides: Dict[str, Any]) -> PipelineConfig:
    """
    Return a copy of config with every non-None override applied.

    Keys naming a PipelineConfig field replace it; keys naming a ReductionConfig
    field replace it inside ``config.reduction``. Other keys are ignored.
    """
    top = {f.name for f in fields(PipelineConfig)}
    nested = {f.name for f in fields(ReductionConfig)}
    updates, reduction_updates = {}, {}
    for key, value in overrides.items():
        if value is None:
            continue
        if key in top and key != "reduction":
            updates[key] = value
        elif key in nested:
            reduction_updates[key] = value
    reduction = replace(config.reduction, **reduction_updates) if reduction_updates else config.reduction
    return replace(config, reduction=reduction, **updates)


def make_instance(config: PipelineConfig, seed=None) -> LweInstance:
    """Generate the attacked instance (unrolled to plain LWE for rlwe/mlwe)."""
    secret_spec, error_spec = config.secret_spec(), config.error_spec()
    rows = config.resolved_base_samples()
    if config.structure == "lwe":
        return gen_lwe(config.n, rows, config.q, secret_spec, error_spec, seed)
    samples = max(1, ceil(rows / config.n))
    if config.structure == "rlwe":
        return rlwe_to_lwe(gen_rlwe(config.n, samples, config.q, secret_spec, error_spec, seed))
    return mlwe_to_lwe(gen_mlwe(config.n, config.k, samples, config.q, secret_spec, error_spec, seed))


@dataclass
class MatrixTask:
    """One reduction job: the sample rows, their embedding and optional pruning record."""

    matrix_id: int
    matrix: SampleMatrix
    basis: EmbeddedBasis
    bookkeeping: Optional[PruneBookkeeping] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "matrix_id": self.matrix_id,
            "matrix": self.matrix.to_dict(),
            "bookkeeping": None if self.bookkeeping is None else self.bookkeeping.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any], omega: int, q: int, m: int) -> "MatrixTask":
        matrix = SampleMatrix.from_dict(data["matrix"])
        bk = data.get("bookkeeping")
        return cls(
            int(data["matrix_id"]),
            matrix,
            embed(matrix.head(m).rows, omega, q),
            None if bk is None else PruneBookkeeping.from_dict(bk),
        )


def build_tasks(
    inst: LweInstance,
    config: PipelineConfig,
    m: int,
    seed=None,
) -> Tuple[List[MatrixTask], Optional[List[CirculantBlock]]]:
    """
    Assemble the reduction matrices.

    Ring instances use offset subsamples of circulant blocks with projection and
    pruning down to m rows; plain instances draw m rows uniformly without
    replacement for each matrix.
    """
    rng = make_rng(seed)
    omega, q = config.resolved_omega(), inst.q
    tasks = []
    if inst.ring is None:
        if m > inst.m:
            raise ValueError(f"sample_count={m} exceeds the {inst.m} rows of the instance.")
        for i in range(config.matrices):
            idx = np.sort(rng.choice(inst.m, size=m, replace=False))
            errors = None if inst.error is None else inst.error[idx]
            matrix = SampleMatrix(inst.A[idx], inst.b[idx], [(int(j), 0) for j in idx], errors)
            tasks.append(MatrixTask(i, matrix, embed(matrix.rows, omega, q)))
        return tasks, None

    n = inst.ring.degree
    blocks = blocks_from_instance(inst)
    schedule = offset_schedule(n, max(1, n // config.matrices), len(blocks), rng)
    h, g = divmod(m, n)
    raw_rows = (h + 1) * n
    for i in range(config.matrices):
        raw = assemble_matrix(blocks, schedule, raw_rows, i, rng).head(raw_rows)
        basis, bk = project_and_prune(embed(raw.rows, omega, q), g, n)
        tasks.append(MatrixTask(i, raw, basis, bk))
    return tasks, blocks


def _reduce_task(
    task: MatrixTask,
    reduction: Dict[str, Any],
    secret: Dict[str, Any],
    error: Dict[str, Any],
) -> Tuple[int, Dict[str, Any], int, List[int]]:
    config = ReductionConfig.from_dict(reduction)
    pool = ShortVectorPool(config.pool_capacity)
    result = progressive_reduce(
        task.basis, config, pool, SecretSpec.from_dict(secret), ErrorSpec.from_dict(error), task.matrix_id
    )
    return task.matrix_id, pool.to_dict(), result.tours, result.block_sizes


@dataclass
class SampleStore:
    """Amplified reduced samples with their predicted moments."""

    samples: List[AmplifiedSample] = field(default_factory=list)
    means: List[float] = field(default_factory=list)
    sigmas: List[float] = field(default_factory=list)
    noise_sigmas: List[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.samples)

    def add(self, sample: AmplifiedSample, secret_spec: SecretSpec, error_spec: ErrorSpec):
        moments = btilde_moments(sample.a, secret_spec, error_spec, error_scale=sample.r_norm_sq)
        self.samples.append(sample)
        self.means.append(moments.mean)
        self.sigmas.append(moments.stddev)
        self.noise_sigmas.append(float(np.sqrt(sample.r_norm_sq)) * error_spec.stddev)

    @property
    def X(self) -> np.ndarray:
        return np.array([s.a for s in self.samples], dtype=np.int64)

    @property
    def targets(self) -> np.ndarray:
        return np.array([s.target for s in self.samples], dtype=np.int64)

    @property
    def has_noise(self) -> bool:
        return bool(self.samples) and all(s.noise is not None for s in self.samples)

    def write_csv(self, path: str) -> None:
        """Columns: sample_id, source_row, matrix_id, t, r_norm_sq, a_0.., target, mean, sigma, noise_sigma[, noise]."""
        width = len(self.samples[0].a) if self.samples else 0
        header = ["sample_id", "source_row", "matrix_id", "t", "r_norm_sq"]
        header += [f"a_{j}" for j in range(width)] + ["target", "mean", "sigma", "noise_sigma"]
        if self.has_noise:
            header.append("noise")
        with open_text(path, "w") as handle:
            writer = csv.writer(handle, delimiter=",")
            writer.writerow(header)
            for i, s in enumerate(self.samples):
                row = [i, s.source_row, s.matrix_id, s.t, s.r_norm_sq, *s.a.tolist(), s.target]
                row += [repr(self.means[i]), repr(self.sigmas[i]), repr(self.noise_sigmas[i])]
                if self.has_noise:
                    row.append(s.noise)
                writer.writerow(row)
        logging.info(f"Wrote {len(self)} samples to: {path}")

    @classmethod
    def read_csv(cls, path: str) -> "SampleStore":
        store = cls()
        logging.info(f"Loading samples from: {path}")
        with open_text(path, "r") as handle:
            reader = csv.DictReader(handle, delimiter=",")
            a_cols = [c for c in reader.fieldnames if c.startswith("a_")]
            for row in reader:
                noise = row.get("noise")
                store.samples.append(
                    AmplifiedSample(
                        int(row["source_row"]),
                        int(row["matrix_id"]),
                        int(row["t"]),
                        np.array([int(row[c]) for c in a_cols], dtype=np.int64),
                        int(row["target"]),
                        int(row["r_norm_sq"]),
                        None if noise in (None, "") else int(noise),
                    )
                )
                store.means.append(float(row["mean"]))
                store.sigmas.append(float(row["sigma"]))
                store.noise_sigmas.append(float(row["noise_sigma"]))
        return store


@dataclass
class PreprocessResult:
    store: SampleStore
    pool: ShortVectorPool
    tasks: List[MatrixTask]
    blocks: Optional[List[CirculantBlock]]
    omega: int
    m: int
    rho_a: float
    reduced: int = 0
    failed: int = 0
    traces: Dict[int, List[int]] = field(default_factory=dict)

    def pool_document(self, q: int, secret_spec: SecretSpec, error_spec: ErrorSpec) -> Dict[str, Any]:
        """Everything amplify needs to run from a file: pool, matrices, blocks and specs."""
        return {
            "q": q,
            "secret_spec": secret_spec.to_dict(),
            "error_spec": error_spec.to_dict(),
            "omega": self.omega,
            "m": self.m,
            "pool": self.pool.to_dict(),
            "matrices": [task.to_dict() for task in self.tasks],
            "blocks": None if self.blocks is None else [block.to_dict() for block in self.blocks],
        }


def amplify_pool(
    pool: ShortVectorPool,
    tasks: List[MatrixTask],
    blocks: Optional[List[CirculantBlock]],
    omega: int,
    q: int,
    secret_spec: SecretSpec,
    error_spec: ErrorSpec,
    store: Optional[SampleStore] = None,
) -> SampleStore:
    """
    Expand pooled vectors into samples, mapping pruned vectors back to their raw
    matrix first. Ring matrices give up to n samples per vector, plain ones one.
    """
    store = SampleStore() if store is None else store
    by_id = {task.matrix_id: task for task in tasks}
    rotations: Dict[int, Dict[int, SampleMatrix]] = {}
    for row_index, entry in enumerate(pool.entries()):
        task = by_id.get(entry.source_matrix_id)
        if task is None:
            logging.warning(f"Pool row {row_index} refers to unknown matrix {entry.source_matrix_id}; skipped.")
            continue
        vector = np.array(entry.vector, dtype=np.int64)
        if task.bookkeeping is not None:
            vector = reinsert(vector, task.bookkeeping)
        if blocks is not None and task.matrix_id not in rotations:
            n = blocks[0].n
            rotations[task.matrix_id] = {t: task.matrix.automorphed(t, blocks) for t in range(1, n)}
        for sample in amplify_entry(
            vector, row_index, task.matrix, omega, q, task.matrix_id, blocks, rotations.get(task.matrix_id)
        ):
            store.add(sample, secret_spec, error_spec)
    return store


def amplify_document(doc: Dict[str, Any]) -> SampleStore:
    """Amplify a saved pool document (see PreprocessResult.pool_document)."""
    omega, q, m = int(doc["omega"]), int(doc["q"]), int(doc["m"])
    tasks = [MatrixTask.from_dict(item, omega, q, m) for item in doc["matrices"]]
    blocks = None if doc.get("blocks") is None else [CirculantBlock.from_dict(b) for b in doc["blocks"]]
    return amplify_pool(
        ShortVectorPool.from_dict(doc["pool"]),
        tasks,
        blocks,
        omega,
        q,
        SecretSpec.from_dict(doc["secret_spec"]),
        ErrorSpec.from_dict(doc["error_spec"]),
    )


def reduction_factor(pool: ShortVectorPool, tasks: List[MatrixTask], q: int) -> float:
    """rho_A: std of the reduced public entries over std of the original entries."""
    by_id = {task.matrix_id: task for task in tasks}
    reduced = []
    for entry in pool.entries():
        task = by_id.get(entry.source_matrix_id)
        if task is None:
            continue
        reduced.append(center_mod(np.array(entry.vector[task.basis.m :], dtype=np.int64), q))
    if not reduced or not tasks:
        return float("nan")
    original = np.concatenate([task.matrix.rows.reshape(-1) for task in tasks])
    return float(np.std(np.concatenate(reduced)) / np.std(center_mod(original, q)))


def run_preprocess(
    config: PipelineConfig,
    inst: LweInstance,
    seed=None,
    on_matrix: Optional[Callable[[SampleStore], bool]] = None,
) -> PreprocessResult:
    """
    Build and reduce ``config.matrices`` matrices, merge their pools and amplify.

    Matrices whose reduction fails numerically are skipped with a warning; if all
    fail a ReductionError is raised. ``on_matrix`` is called with the samples of
    every finished matrix and may return True to stop early.
    """
    secret_spec, error_spec = config.secret_spec(), config.error_spec()
    omega = config.resolved_omega()
    m = config.sample_count
    if m is None:
        m = optimal_sample_count(
            config.n, config.k, inst.q, omega, config.reduction.block_cap, max_samples=inst.m
        )
    logging.info(f"Preprocessing: {config.matrices} matrices of {m} samples, omega={omega}, pool capacity {config.pool_capacity}.")
    tasks, blocks = build_tasks(inst, config, m, seed)
    store_pool = ShortVectorPool(config.matrices * config.pool_capacity)
    store = SampleStore()
    by_id = {task.matrix_id: task for task in tasks}
    traces: Dict[int, List[int]] = {}
    reduced = failed = 0
    args = (config.reduction.to_dict(), secret_spec.to_dict(), error_spec.to_dict())

    def finish(matrix_id: int, pool_data: Dict[str, Any], tours: int, trace: List[int]) -> bool:
        pool = ShortVectorPool.from_dict(pool_data)
        store_pool.merge(pool)
        traces[matrix_id] = trace
        amplify_pool(pool, [by_id[matrix_id]], blocks, omega, inst.q, secret_spec, error_spec, store)
        logging.info(f"Matrix {matrix_id} done after {tours} tours; store holds {len(store)} samples.")
        return bool(on_matrix and on_matrix(store))

    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as executor:
            futures = {executor.submit(_reduce_task, task, *args): task.matrix_id for task in tasks}
            stop = False
            for future in as_completed(futures):
                if stop:
                    future.cancel()
                    continue
                try:
                    outcome = future.result()
                except ReductionError as err:
                    logging.warning(f"Matrix {futures[future]} failed to reduce: {err}")
                    failed += 1
                    continue
                reduced += 1
                stop = finish(*outcome)
    else:
        for task in tasks:
            try:
                outcome = _reduce_task(task, *args)
            except ReductionError as err:
                logging.warning(f"Matrix {task.matrix_id} failed to reduce: {err}")
                failed += 1
                continue
            reduced += 1
            if finish(*outcome):
                break

    if reduced == 0:
        raise ReductionError(f"All {failed} reduction matrices failed.")
    rho_a = reduction_factor(store_pool, tasks, inst.q)
    logging.info(f"Preprocessing done: {len(store)} samples, rho_A = {rho_a:.3f}.")
    return PreprocessResult(store, store_pool, tasks, blocks, omega, m, rho_a, reduced, failed, traces)


def rank_subsets(
    sigmas,
    n: int,
    train_fraction: float = 0.75,
    fractions=SUBSET_FRACTIONS,
) -> List[np.ndarray]:
    """
    Nested training subsets of the lowest-sigma samples.

    Sizes: 5%, 10%, 25%, 50% of the store, then train_fraction of it, each at
    least 2n and at most train_fraction of the store. A store smaller than 2n
    gives one subset holding everything.
    """
    sigmas = np.asarray(sigmas, dtype=np.float64)
    total = sigmas.shape[0]
    if total == 0:
        raise ValueError("Cannot rank an empty sample store.")
    order = np.argsort(sigmas, kind="stable")
    if total < 2 * n:
        logging.warning(f"Only {total} samples for dimension {n}; training on all of them.")
        return [order]
    cap = max(2 * n, int(train_fraction * total))
    sizes = [min(max(2 * n, ceil(fraction * total)), cap) for fraction in fractions]
    sizes.append(cap)
    return [order[:size] for size in sorted(set(sizes))]


def build_problem(
    store: SampleStore,
    idx: np.ndarray,
    secret_spec: SecretSpec,
    q: int,
) -> RegressionProblem:
    """Regression on the chosen samples; binary secrets unwrap targets to their most likely pre-image."""
    X = store.X[idx]
    y = store.targets[idx]
    if secret_spec.is_binary:
        y = most_likely_preimages(y, np.asarray(store.means)[idx], q)
    return RegressionProblem(X, y)


@dataclass
class RunReport:
    recovered: bool = False
    secret: Optional[List[int]] = None
    rho_a: float = float("nan")
    predicted_inlier_rate: float = float("nan")
    expected_inliers: float = 0.0
    empirical_inlier_rate: Optional[float] = None
    samples_total: int = 0
    samples_used: int = 0
    matrices_reduced: int = 0
    matrices_failed: int = 0
    sample_count: int = 0
    omega: int = 0
    attempts: List[Dict[str, Any]] = field(default_factory=list)
    timings: Dict[str, float] = field(default_factory=dict)

    def to_dict(self, include_timings: bool = True) -> Dict[str, Any]:
        data = asdict(self)
        if not include_timings:
            data.pop("timings")
        return data


def inlier_statistics(
    store: SampleStore,
    idx: np.ndarray,
    q: int,
    secret_spec: SecretSpec,
    error_spec: ErrorSpec,
    secret=None,
) -> Dict[str, Any]:
    """Predicted inlier count/rate of the chosen samples and, with the true secret, the observed rate."""
    idx = np.asarray(idx, dtype=np.int64)
    scales = [store.samples[i].r_norm_sq for i in idx]
    expected = expected_inliers(store.X[idx], secret_spec, error_spec, q, error_scales=scales) if len(idx) else 0.0
    stats: Dict[str, Any] = {
        "expected_inliers": expected,
        "predicted_inlier_rate": expected / len(idx) if len(idx) else float("nan"),
        "empirical_inlier_rate": None,
    }
    if secret is not None and store.has_noise and len(idx):
        btilde = store.X[idx] @ np.asarray(secret, dtype=np.int64) + np.array(
            [store.samples[i].noise for i in idx], dtype=np.int64
        )
        inside = (btilde > -q / 2) & (btilde <= q / 2)
        stats["empirical_inlier_rate"] = float(np.mean(inside))
    return stats


def run_train(
    config: PipelineConfig,
    store: SampleStore,
    inst: LweInstance,
    subsets: List[np.ndarray],
    report: Optional[RunReport] = None,
    seed=None,
) -> RunReport:
    """
    Fit, round and verify on each subset in rank order until a candidate is accepted.

    Only verified candidates are reported as recovered; otherwise the report keeps
    the candidate of the last attempt with recovered=False.
    """
    report = RunReport() if report is None else report
    secret_spec, error_spec = config.secret_spec(), config.error_spec()
    public = inst.public()
    rng = make_rng(seed)
    for rung, idx in enumerate(subsets):
        problem = build_problem(store, idx, secret_spec, inst.q)
        params = dict(config.estimator_params)
        if config.estimator == "ransac":
            params.setdefault("seed", rng)
            params.setdefault("residual_tol", 3.0 * float(np.median(np.asarray(store.noise_sigmas)[idx])))
        result: FitResult = fit(problem, config.estimator, **params)
        candidate = normalize_round_clip(result.coef, secret_spec)
        verdict = verify_secret(public, candidate, error_spec, config.tau)
        report.attempts.append(
            {"rung": rung, "samples": int(len(idx)), "fit": result.to_dict(), "verification": verdict.to_dict()}
        )
        report.samples_used = max(report.samples_used, int(len(idx)))
        logging.info(
            f"Subset {rung} ({len(idx)} samples, {config.estimator}): residual sigma {verdict.sigma:.2f} "
            f"vs threshold {verdict.threshold:.2f} -> {'accepted' if verdict.accept else 'rejected'}"
        )
        report.secret = candidate.tolist()
        if verdict.accept:
            report.recovered = True
            return report
    report.recovered = False
    return report


def run_full(config: PipelineConfig, inst: Optional[LweInstance] = None) -> RunReport:
    """
    Generate (unless given) the instance, preprocess, rank, train and report.

    The run is deterministic for a fixed ``config.seed``; only the timings differ.
    """
    instance_seq, matrix_seq, train_seq = np.random.SeedSequence(config.seed).spawn(3)
    timings: Dict[str, float] = {}
    start = perf_counter()
    if inst is None:
        inst = make_instance(config, np.random.default_rng(instance_seq))
    timings["generate"] = perf_counter() - start

    report = RunReport()
    n = inst.n
    early: Dict[str, Any] = {}

    def try_early(store: SampleStore) -> bool:
        if not config.interleaved or len(store) < 2 * n:
            return False
        first = rank_subsets(store.sigmas, n, config.train_fraction, config.subset_fractions)[:1]
        attempt = run_train(config, store, inst, first, RunReport(), np.random.default_rng(train_seq))
        if attempt.recovered:
            early["report"] = attempt
            early["subset"] = first[0]
            logging.info("Interleaved attempt recovered the secret; stopping preprocessing.")
        return attempt.recovered

    start = perf_counter()
    pre = run_preprocess(config, inst, np.random.default_rng(matrix_seq), on_matrix=try_early)
    timings["preprocess"] = perf_counter() - start

    store = pre.store
    report.rho_a = pre.rho_a
    report.samples_total = len(store)
    report.matrices_reduced = pre.reduced
    report.matrices_failed = pre.failed
    report.sample_count = pre.m
    report.omega = pre.omega
    if config.output_dir:
        os.makedirs(config.output_dir, exist_ok=True)
        write_json(pre.pool_document(inst.q, config.secret_spec(), config.error_spec()), f"{config.output_dir}/pool.json")
        store.write_csv(f"{config.output_dir}/samples.csv")

    start = perf_counter()
    if len(store) == 0:
        logging.warning("Preprocessing produced no samples; nothing to train on.")
        subsets: List[np.ndarray] = []
    else:
        subsets = rank_subsets(store.sigmas, n, config.train_fraction, config.subset_fractions)
    if "report" in early:
        trained = early["report"]
        report.attempts = trained.attempts
        report.secret = trained.secret
        report.recovered = trained.recovered
        report.samples_used = trained.samples_used
    elif subsets:
        run_train(config, store, inst, subsets, report, np.random.default_rng(train_seq))
    timings["train"] = perf_counter() - start

    if subsets:
        if "subset" in early:
            used = early["subset"]
        else:
            used = subsets[min(len(report.attempts), len(subsets)) - 1] if report.attempts else subsets[0]
        stats = inlier_statistics(
            store, used, inst.q, config.secret_spec(), config.error_spec(), inst.secret if inst.has_truth else None
        )
        report.expected_inliers = stats["expected_inliers"]
        report.predicted_inlier_rate = stats["predicted_inlier_rate"]
        report.empirical_inlier_rate = stats["empirical_inlier_rate"]
    report.timings = timings
    if report.recovered and inst.has_truth:
        logging.info(f"Recovered secret matches truth: {bool(np.array_equal(report.secret, inst.secret))}")
    if config.output_dir:
        write_json(report.to_dict(), f"{config.output_dir}/report.json", indent=2)
    return report
