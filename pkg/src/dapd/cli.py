"""Command-line interface.

Verbs:
  run        execute an experiment config, writing trace CSVs + manifest
  validate   step-size feasibility report for the config's problem
  reference  compute and cache the certified optimal value
  stats      matrix norm / density report for a dataset file

Flags override the corresponding config fields; see README for the config
schema.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .datasets import load_libsvm
from .deterministic import schedule_for_problem, validate_schedule
from .errors import CertificationError, ConfigurationError, DivergenceError, ParseError
from .harness import RunConfig, build_problem, compute_reference, run_experiment
from .matrix import stats as matrix_stats
from .proxlib import composite_gamma, problem_constants


def _load_config(args) -> RunConfig:
    config = RunConfig.from_json(args.config)
    if getattr(args, "epochs", None) is not None:
        config.solver["epochs"] = args.epochs
    if getattr(args, "seeds", None):
        config.solver["seeds"] = [int(s) for s in args.seeds.split(",")]
    if getattr(args, "method", None):
        config.solver["methods"] = args.method
    if getattr(args, "out", None):
        config.output["dir"] = args.out
    return config


def _cmd_run(args) -> int:
    config = _load_config(args)
    result = run_experiment(config)
    print(f"manifest: {result.manifest_path}")
    for path in result.trace_paths:
        print(f"trace: {path}")
    for cell, error in result.failures.items():
        print(f"FAILED {cell}: {error}", file=sys.stderr)
    return 0 if result.ok else 1


def _cmd_validate(args) -> int:
    config = _load_config(args)
    problem = build_problem(config)
    schedule = schedule_for_problem(problem, case_iv_tau=config.solver["case_iv_tau"])
    gamma_f = composite_gamma(problem)
    _, mu, _, R, _ = problem_constants(problem)
    violations = validate_schedule(schedule, gamma_f, mu, R, horizon=args.horizon)
    print(f"regime: {schedule.regime}")
    print(f"composite gamma: {gamma_f:.6g}  mu: {mu:.6g}  R: {R:.6g}")
    if not violations:
        print(f"feasible over t <= {args.horizon}")
        return 0
    for v in violations[:20]:
        print(f"violation t={v.t} {v.condition}: lhs={v.lhs:.12g} rhs={v.rhs:.12g}")
    print(f"{len(violations)} violation(s)")
    return 1


def _cmd_reference(args) -> int:
    config = _load_config(args)
    problem = build_problem(config)
    accuracy = args.accuracy or config.output["reference_accuracy"]
    ref = compute_reference(problem, accuracy)
    outdir = Path(config.output["dir"])
    outdir.mkdir(parents=True, exist_ok=True)
    np.save(outdir / "reference_x.npy", ref.x)
    payload = {
        "value": ref.value,
        "method": ref.method,
        "certified_gap": ref.certified_gap,
        "accuracy": accuracy,
    }
    with open(outdir / "reference.json", "w") as fh:
        json.dump(payload, fh, indent=2)
    print(f"P* = {ref.value:.17g} ({ref.method}, certified gap {ref.certified_gap:.3e})")
    print(f"cached in {outdir}")
    return 0


def _cmd_stats(args) -> int:
    dataset = load_libsvm(args.data, expected_dim=args.expected_dim)
    st = matrix_stats(dataset.matrix)
    print(f"file: {args.data}")
    print(f"n: {dataset.n}")
    print(f"d: {dataset.dim}")
    print(f"nnz: {dataset.matrix.nnz}")
    print(f"density: {st.density:.6g}")
    print(f"spectral_norm (R): {st.spectral_norm:.12g}")
    print(f"max_row_norm (Rbar): {st.max_row_norm:.12g}")
    if not st.spectral_norm_converged:
        print("warning: power iteration did not converge; R is a best estimate")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dapd", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    def add_config_flags(p):
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--epochs", type=int, help="override solver.epochs")
        p.add_argument("--seeds", help="override solver.seeds, comma separated")
        p.add_argument("--method", action="append", help="override solver.methods (repeatable)")
        p.add_argument("--out", help="override output.dir")

    p_run = sub.add_parser("run", help="execute an experiment")
    add_config_flags(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_val = sub.add_parser("validate", help="schedule feasibility report")
    add_config_flags(p_val)
    p_val.add_argument("--horizon", type=int, default=10_000)
    p_val.set_defaults(func=_cmd_validate)

    p_ref = sub.add_parser("reference", help="compute and cache the optimal value")
    add_config_flags(p_ref)
    p_ref.add_argument("--accuracy", type=float, help="certification accuracy")
    p_ref.set_defaults(func=_cmd_reference)

    p_stats = sub.add_parser("stats", help="dataset R / Rbar / density report")
    p_stats.add_argument("--data", required=True, help="LIBSVM file (.gz ok)")
    p_stats.add_argument("--expected-dim", type=int, dest="expected_dim")
    p_stats.set_defaults(func=_cmd_stats)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, ParseError, CertificationError, DivergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
