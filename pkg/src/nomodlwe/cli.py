from typing import Any, Dict
import argparse
import logging
import sys

import numpy as np

from nomodlwe.estimators import ESTIMATORS, RegressionProblem, fit, normalize_round_clip, verify_secret
from nomodlwe.instances import (
    ErrorSpec,
    gen_lwe,
    gen_mlwe,
    gen_rlwe,
    load_instance,
    mlwe_to_lwe,
    parse_spec_string,
    rlwe_to_lwe,
    save_instance,
    spec_fields,
)
from nomodlwe.logs import init_logging
from nomodlwe.nomod_approx import btilde_moments, candidates, expected_inliers, inlier_prob
from nomodlwe.pipeline import (
    STRUCTURES,
    PipelineConfig,
    SampleStore,
    amplify_document,
    apply_overrides,
    build_problem,
    load_config,
    rank_subsets,
    run_full,
    run_preprocess,
    run_train,
)
from nomodlwe.reduction import ReductionError, bkz_cost
from nomodlwe.utils import is_valid_csv_file, is_valid_json_file, load_json, write_json


def _fail(message: str):
    logging.error(message)
    sys.exit(1)


def _parse_specs(args, n_total: int):
    try:
        secret_spec = parse_spec_string(args.secret_spec, n_total)
        error_spec = parse_spec_string(args.error_spec) if getattr(args, "error_spec", None) else None
    except ValueError as err:
        _fail(f"Invalid distribution spec: {err}")
    return secret_spec, error_spec


def _add_config_args(parser: argparse.ArgumentParser):
    # Every flag defaults to None so that only explicit values override the config file
    parser.add_argument("-c", "--config", default=None, help="JSON config file mirroring PipelineConfig.")
    parser.add_argument("--omega", type=int, default=None, help="Error penalty. Default: 4 for CBD errors, 10 for Gaussian.")
    parser.add_argument("--matrices", type=int, default=None, help="Number of reduction matrices (l). Default: 4")
    parser.add_argument("--sample_count", type=int, default=None, help="Samples per matrix (m). Default: closed-form optimum.")
    parser.add_argument("--pool_capacity", type=int, default=None, help="Short vectors kept per matrix (t). Default: 64")
    parser.add_argument("--block_start", type=int, default=None, help="First BKZ block size. Default: 20")
    parser.add_argument("--block_cap", type=int, default=None, help="Largest BKZ block size. Default: 40")
    parser.add_argument("--block_step", type=int, default=None, help="Block size increment on stall. Default: 10")
    parser.add_argument("--stall_tours", type=int, default=None, help="Tours without progress before raising the block size. Default: 4")
    parser.add_argument("--tour_budget", type=int, default=None, help="Maximum BKZ tours per matrix. Default: 60")
    parser.add_argument("--workers", type=int, default=None, help="Parallel reduction workers. Default: 1")
    parser.add_argument("--seed", type=int, default=None, help="Seed for every random choice of the run.")


def _config_from_args(args, **extra) -> PipelineConfig:
    config = PipelineConfig()
    if args.config is not None:
        if not is_valid_json_file(args.config):
            sys.exit(1)
        config = load_config(args.config)
    overrides: Dict[str, Any] = {key: value for key, value in vars(args).items() if key != "config"}
    overrides.update(extra)
    try:
        return apply_overrides(config, overrides)
    except ValueError as err:
        _fail(f"Invalid configuration: {err}")


def cmd_gen(args):
    n_total = args.n * (args.k if args.structure == "mlwe" else 1)
    secret_spec, error_spec = _parse_specs(args, n_total)
    if args.structure == "lwe":
        inst = gen_lwe(args.n, args.samples, args.q, secret_spec, error_spec, args.seed)
    elif args.structure == "rlwe":
        inst = rlwe_to_lwe(gen_rlwe(args.n, args.samples, args.q, secret_spec, error_spec, args.seed))
    else:
        inst = mlwe_to_lwe(gen_mlwe(args.n, args.k, args.samples, args.q, secret_spec, error_spec, args.seed))
    logging.info(f"Generated {args.structure} instance: {inst.m} samples, dimension {inst.n}, q={inst.q}.")
    save_instance(inst, args.out)


def _pipeline_config_for(inst, args) -> PipelineConfig:
    secret = inst.secret_spec.to_dict()
    secret.pop("n_total")
    if inst.ring is None:
        structural = {"structure": "lwe", "n": inst.n, "k": 1}
    else:
        structure = "rlwe" if inst.ring.rank == 1 else "mlwe"
        structural = {"structure": structure, "n": inst.ring.degree, "k": inst.ring.rank}
    return _config_from_args(args, q=inst.q, secret=secret, error=inst.error_spec.to_dict(), **structural)


def cmd_reduce(args):
    if not is_valid_json_file(args.instance):
        sys.exit(1)
    inst = load_instance(args.instance)
    if inst.secret_spec is None or inst.error_spec is None:
        _fail(f"Instance '{args.instance}' does not declare its secret and error distributions.")
    config = _pipeline_config_for(inst, args)
    try:
        result = run_preprocess(config, inst, np.random.default_rng(config.seed))
    except ReductionError as err:
        _fail(str(err))
    logging.info(f"rho_A = {result.rho_a:.3f}, pool size {len(result.pool)}")
    write_json(result.pool_document(inst.q, config.secret_spec(), config.error_spec()), args.out)


def cmd_amplify(args):
    if not is_valid_json_file(args.pool):
        sys.exit(1)
    store = amplify_document(load_json(args.pool))
    if len(store) == 0:
        _fail("Pool produced no samples.")
    store.write_csv(args.out)


def cmd_estimate(args):
    if not is_valid_csv_file(args.samples):
        sys.exit(1)
    store = SampleStore.read_csv(args.samples)
    if len(store) == 0:
        _fail(f"No samples in '{args.samples}'.")
    secret_spec, error_spec = _parse_specs(args, len(store.samples[0].a))
    rows = []
    for i, sample in enumerate(store.samples):
        moments = btilde_moments(sample.a, secret_spec, error_spec, error_scale=sample.r_norm_sq)
        row = {
            "sample_id": i,
            "mean": moments.mean,
            "sigma": moments.stddev,
            "inlier_prob": inlier_prob(args.q, moments.stddev),
        }
        if moments.stddev > 0:
            cs = candidates(sample.target, moments, args.q, args.t_sigma)
            row["candidates"] = cs.values
            row["candidate_probabilities"] = cs.probabilities
            row["best"] = cs.best
        rows.append(row)
    scales = [sample.r_norm_sq for sample in store.samples]
    expected = expected_inliers(store.X, secret_spec, error_spec, args.q, error_scales=scales)
    logging.info(f"Expected inliers: {expected:.1f} of {len(rows)} ({expected / len(rows):.1%}).")
    write_json({"q": args.q, "expected_inliers": expected, "samples": rows}, args.report, indent=2)


def cmd_train(args):
    if not is_valid_csv_file(args.samples):
        sys.exit(1)
    store = SampleStore.read_csv(args.samples)
    if len(store) == 0:
        _fail(f"No samples in '{args.samples}'.")
    n_total = len(store.samples[0].a)
    secret_spec, error_spec = _parse_specs(args, n_total)
    secret = secret_spec.to_dict()
    secret.pop("n_total")
    config = PipelineConfig(
        n=n_total,
        q=args.q,
        secret=secret,
        error=error_spec.to_dict(),
        estimator=args.estimator,
        train_fraction=args.train_fraction,
        tau=args.tau,
    )
    subsets = rank_subsets(store.sigmas, n_total, config.train_fraction, config.subset_fractions)
    if args.instance is not None:
        if not is_valid_json_file(args.instance):
            sys.exit(1)
        report = run_train(config, store, load_instance(args.instance), subsets, seed=args.seed)
        write_json(report.to_dict(), args.out, indent=2)
        return
    params = {"seed": args.seed} if args.estimator == "ransac" else {}
    problem: RegressionProblem = build_problem(store, subsets[-1], secret_spec, args.q)
    result = fit(problem, args.estimator, **params)
    candidate = normalize_round_clip(result.coef, secret_spec)
    write_json({"fit": result.to_dict(), "secret": candidate.tolist()}, args.out, indent=2)


def cmd_verify(args):
    for path in (args.instance, args.candidate):
        if not is_valid_json_file(path):
            sys.exit(1)
    inst = load_instance(args.instance)
    candidate = load_json(args.candidate).get("secret")
    if candidate is None:
        _fail(f"No 'secret' entry in '{args.candidate}'.")
    error_spec = inst.error_spec
    if args.error_spec is not None:
        error_spec = ErrorSpec.from_dict(spec_fields(args.error_spec))
    if error_spec is None:
        _fail("No error distribution given or stored with the instance.")
    report = verify_secret(inst.public(), np.array(candidate, dtype=np.int64), error_spec, args.tau)
    logging.info(
        f"Residual sigma {report.sigma:.3f} (threshold {report.threshold:.3f}), max |r| {report.max_abs}: "
        f"{'ACCEPT' if report.accept else 'REJECT'}"
    )
    if args.out is not None:
        write_json(report.to_dict(), args.out, indent=2)


def cmd_run(args):
    extra: Dict[str, Any] = {"output_dir": args.outdir}
    if args.secret_spec is not None:
        extra["secret"] = spec_fields(args.secret_spec)
    if args.error_spec is not None:
        extra["error"] = spec_fields(args.error_spec)
    for key in ("structure", "n", "k", "q", "estimator"):
        if getattr(args, key) is not None:
            extra[key] = getattr(args, key)
    for key in ("structure", "n", "k", "q", "estimator", "secret_spec", "error_spec", "outdir"):
        delattr(args, key)
    config = _config_from_args(args, **extra)
    try:
        report = run_full(config)
    except ReductionError as err:
        _fail(str(err))
    status = "recovered" if report.recovered else "not recovered"
    logging.info(f"Secret {status}; rho_A = {report.rho_a:.3f}, {report.samples_total} samples.")


def cmd_cost(args):
    report = bkz_cost(args.beta, args.dim, args.log_volume)
    for key, value in report.to_dict().items():
        print(f"{key}\t{value}")


def getArgs(argv=None):
    # Set up argparse
    parser = argparse.ArgumentParser(
        description="Module-LWE key recovery by lattice reduction, sample amplification and robust regression.",
        prog="nomod",
    )
    parser.add_argument("-v", "--verbose", default=False, action="store_true", help="Log per-tour detail.")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="Generate an LWE/RLWE/MLWE instance with ground truth.")
    gen.add_argument("--structure", choices=STRUCTURES, default="lwe", help="Instance structure. Default: lwe")
    gen.add_argument("-n", "--n", type=int, required=True, help="LWE dimension, or ring degree (power of two).")
    gen.add_argument("-k", "--k", type=int, default=1, help="Module rank (mlwe only). Default: 1")
    gen.add_argument("-q", "--q", type=int, required=True, help="Modulus.")
    gen.add_argument(
        "-m",
        "--samples",
        type=int,
        required=True,
        help="Number of samples: LWE rows for lwe, ring samples for rlwe/mlwe.",
    )
    gen.add_argument("--secret_spec", required=True, help="Secret family, e.g. 'binary', 'cbd_hw:eta=2,h=8'.")
    gen.add_argument("--error_spec", required=True, help="Error family, e.g. 'gaussian:sigma=3', 'cbd:eta=2'.")
    gen.add_argument("--seed", type=int, default=None, help="Random seed.")
    gen.add_argument("-o", "--out", required=True, help="Output instance JSON.")
    gen.set_defaults(func=cmd_gen)

    red = sub.add_parser("reduce", help="Reduce embedded sample matrices and save the short-vector pool.")
    red.add_argument("-i", "--instance", required=True, help="Instance JSON (can be gzipped).")
    _add_config_args(red)
    red.add_argument("-o", "--out", required=True, help="Output pool JSON.")
    red.set_defaults(func=cmd_reduce)

    amp = sub.add_parser("amplify", help="Expand a saved pool into reduced samples (CSV).")
    amp.add_argument("-p", "--pool", required=True, help="Pool JSON written by 'reduce'.")
    amp.add_argument("-o", "--out", required=True, help="Output samples CSV.")
    amp.set_defaults(func=cmd_amplify)

    est = sub.add_parser("estimate", help="Predict per-sample sigma and inlier rates.")
    est.add_argument("-s", "--samples", required=True, help="Samples CSV.")
    est.add_argument("-q", "--q", type=int, required=True, help="Modulus.")
    est.add_argument("--secret_spec", required=True, help="Secret family.")
    est.add_argument("--error_spec", required=True, help="Error family of the original instance.")
    est.add_argument(
        "--t_sigma", type=float, default=4.0, help="Candidate window half-width in sigmas. Default: 4"
    )
    est.add_argument("-r", "--report", required=True, help="Output report JSON.")
    est.set_defaults(func=cmd_estimate)

    train = sub.add_parser("train", help="Fit a robust estimator on ranked samples.")
    train.add_argument("-s", "--samples", required=True, help="Samples CSV.")
    train.add_argument("-q", "--q", type=int, required=True, help="Modulus.")
    train.add_argument("--secret_spec", required=True, help="Secret family.")
    train.add_argument("--error_spec", required=True, help="Error family of the original instance.")
    train.add_argument("-e", "--estimator", choices=ESTIMATORS, default="tukey", help="Default: tukey")
    train.add_argument("--train_fraction", type=float, default=0.75, help="Largest share of samples used. Default: 0.75")
    train.add_argument("--tau", type=float, default=1.5, help="Verification threshold factor. Default: 1.5")
    train.add_argument("-i", "--instance", default=None, help="Instance JSON; enables the verify-and-retry loop.")
    train.add_argument("--seed", type=int, default=None, help="Random seed (RANSAC).")
    train.add_argument("-o", "--out", required=True, help="Output fit JSON.")
    train.set_defaults(func=cmd_train)

    ver = sub.add_parser("verify", help="Check a candidate secret against an instance.")
    ver.add_argument("-i", "--instance", required=True, help="Instance JSON.")
    ver.add_argument("--candidate", required=True, help="Fit JSON with a 'secret' entry.")
    ver.add_argument("--error_spec", default=None, help="Error family. Default: the instance's own.")
    ver.add_argument("--tau", type=float, default=1.5, help="Threshold factor. Default: 1.5")
    ver.add_argument("-o", "--out", default=None, help="Optional report JSON.")
    ver.set_defaults(func=cmd_verify)

    run = sub.add_parser("run", help="Full attack: generate, preprocess, train, verify.")
    _add_config_args(run)
    run.add_argument("--structure", choices=STRUCTURES, default=None, help="Instance structure.")
    run.add_argument("-n", "--n", type=int, default=None, help="LWE dimension or ring degree.")
    run.add_argument("-k", "--k", type=int, default=None, help="Module rank.")
    run.add_argument("-q", "--q", type=int, default=None, help="Modulus.")
    run.add_argument("--secret_spec", default=None, help="Secret family.")
    run.add_argument("--error_spec", default=None, help="Error family.")
    run.add_argument("-e", "--estimator", choices=ESTIMATORS, default=None, help="Robust estimator.")
    run.add_argument("-o", "--outdir", default=None, help="Directory for pool.json, samples.csv and report.json.")
    run.set_defaults(func=cmd_run)

    cost = sub.add_parser("cost", help="Root-Hermite factor and BKZ cost for a block size.")
    cost.add_argument("-b", "--beta", type=int, required=True, help="BKZ block size.")
    cost.add_argument("-d", "--dim", type=int, required=True, help="Lattice dimension.")
    cost.add_argument("--log_volume", type=float, default=0.0, help="Natural log of the lattice volume. Default: 0")
    cost.set_defaults(func=cmd_cost)

    args = parser.parse_args(argv)
    if args.command == "run" and args.seed is None:
        parser.error("run requires --seed")
    return args


def main(argv=None):
    # Parse command line arguments
    args = getArgs(argv)

    # Set up logging
    init_logging(verbose=args.verbose)

    func = args.func
    for key in ("func", "command", "verbose"):
        delattr(args, key)
    func(args)


if __name__ == "__main__":
    main()
