"""Experiment driver: config parsing, reference solutions, trace emission.

Runs (method x seed) cells over one problem, writing one trace CSV per cell
plus a flat key=value manifest holding every resolved constant (matrix norms,
step sizes, perturbations, seeds), so any curve can be re-derived from the
manifest alone.

Suboptimality is always reported against the *unperturbed* objective, even
for methods that solve a perturbed problem; epsilon-accuracy means accuracy
on the original problem.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import BASELINE_METHODS, BaselineConfig, run_baseline
from .datasets import Dataset, load_libsvm, synth_ridge, synth_sparse_classification
from .deterministic import run_dapd, schedule_for_problem, validate_schedule
from .errors import CertificationError, ConfigurationError, DivergenceError
from .matrix import matvec
from .proxlib import (
    CompositeProblem,
    Regularizer,
    composite_gamma,
    dual_objective,
    elastic_net_reg,
    feasible_dual_point,
    huber_reg,
    kl_reg,
    l1_reg,
    l2_reg,
    make_problem,
    primal_objective,
    problem_constants,
    squared_loss,
    svm_problem,
)
from .sparse_engine import run_sparse
from .stochastic import params_for_problem, perturb_problem, run_sdapd
from .traces import write_trace

DATA_DIR_ENV = "DAPD_DATA_DIR"

NATIVE_METHODS = ("dapd", "sdapd", "sdapd_sparse")
ALL_METHODS = NATIVE_METHODS + BASELINE_METHODS

# methods that require smoothness/strong convexity and therefore receive the
# perturbed problem when an epsilon target is configured
PERTURBATION_METHODS = ("sdapd", "sdapd_sparse", "spdc", "apgm", "proxsvrg")


@dataclass(frozen=True)
class ReferenceSolution:
    x: np.ndarray
    value: float
    method: str
    certified_gap: float


def _is_ridge_form(problem: CompositeProblem) -> bool:
    return (
        problem.loss.kind == "squared"
        and problem.reg.kind == "l2"
        and problem.loss.dual_perturbation == 0.0
        and problem.reg.primal_perturbation == 0.0
    )


def _direct_ridge_reference(problem: CompositeProblem, accuracy: float) -> ReferenceSolution:
    dense = problem.matrix.to_dense()
    c = problem.loss_scale
    lam = problem.reg.lam
    d = problem.dim
    x = np.linalg.solve(c * dense.T @ dense + lam * np.eye(d), c * dense.T @ problem.loss.targets)
    grad = c * matvec(
        problem.matrix, matvec(problem.matrix, x) - problem.loss.targets, transpose=True
    ) + lam * x
    gap = float(grad @ grad) / (2.0 * lam)  # strong-convexity suboptimality bound
    if gap > accuracy:
        raise CertificationError(f"direct solve certified only to {gap:.3e} > {accuracy:.3e}")
    return ReferenceSolution(x=x, value=primal_objective(problem, x), method="direct_solve",
                             certified_gap=gap)


def _certify(problem, x, y_candidate, accuracy, method):
    value = primal_objective(problem, x)
    y_feas = feasible_dual_point(problem, y_candidate)
    gap = value - dual_objective(problem, y_feas)
    if not np.isfinite(gap) or gap > accuracy:
        raise CertificationError(
            f"{method} reference certified only to gap {gap:.3e} > {accuracy:.3e}"
        )
    return ReferenceSolution(x=x, value=value, method=method, certified_gap=float(gap))


def _cvxpy_reference(problem: CompositeProblem, accuracy: float) -> ReferenceSolution:
    try:
        import cvxpy as cp
    except ImportError as exc:  # pragma: no cover
        raise CertificationError("cvxpy is not installed; install dapd[reference]") from exc
    dense = problem.matrix.to_dense()
    c = problem.loss_scale
    n, d = problem.n, problem.dim
    x = cp.Variable(d)
    u = dense @ x
    constraints = []
    hinge_cons = None
    if problem.loss.kind == "squared":
        loss_expr = c * 0.5 * cp.sum_squares(u - problem.loss.targets)
    else:
        t = cp.Variable(n)
        hinge_cons = 1.0 - u - t <= 0
        constraints += [t >= 0, hinge_cons]
        loss_expr = c * cp.sum(t)
    reg = problem.reg
    if reg.kind == "l2":
        reg_expr = 0.5 * reg.lam * cp.sum_squares(x)
    elif reg.kind == "l1":
        reg_expr = reg.lam * cp.norm1(x)
    elif reg.kind == "elastic_net":
        reg_expr = reg.lam * cp.norm1(x) + 0.5 * reg.lam2 * cp.sum_squares(x)
    elif reg.kind == "huber":
        reg_expr = reg.huber_mu * cp.sum(cp.huber(x, reg.lam / (2.0 * reg.huber_mu)))
    else:  # kl
        w = reg.weight() * np.ones(d)
        reg_expr = cp.sum(cp.multiply(w, np.log(w)) - cp.multiply(w, cp.log(x)))
    prob = cp.Problem(cp.Minimize(loss_expr + reg_expr), constraints)
    solved = False
    for solver_kw in ({"solver": "CLARABEL"}, {"solver": "ECOS"}, {}):
        try:
            prob.solve(**solver_kw)
        except (cp.error.SolverError, ValueError):
            continue
        if prob.status in ("optimal", "optimal_inaccurate"):
            solved = True
            break
    if not solved:
        raise CertificationError(f"cvxpy failed to solve the reference problem ({prob.status})")
    x_val = np.asarray(x.value, dtype=np.float64).reshape(d)
    if problem.loss.kind == "squared":
        y_candidate = c * (dense @ x_val - problem.loss.targets)
    else:
        # duals of (1 - u - t <= 0) are the negated saddle duals
        y_candidate = -np.asarray(hinge_cons.dual_value, dtype=np.float64).reshape(n)
    return _certify(problem, x_val, y_candidate, accuracy, "cvxpy")


def _solver_reference(problem: CompositeProblem, accuracy: float) -> ReferenceSolution:
    """High-accuracy run of the native deterministic solver, duality-gap
    certified.  Used when cvxpy is unavailable."""
    schedule = schedule_for_problem(problem)
    iterations = 2000
    last_exc = None
    for _ in range(8):
        res = run_dapd(problem, schedule, iterations, record_every=iterations)
        if problem.loss.kind == "squared":
            u = matvec(problem.matrix, res.x)
            y_candidate = problem.loss_scale * (u - problem.loss.targets)
        else:
            y_candidate = res.y
        try:
            return _certify(problem, res.x, y_candidate, accuracy, "dapd_run")
        except CertificationError as exc:
            last_exc = exc
            iterations *= 2
    raise last_exc


def compute_reference(
    problem: CompositeProblem, accuracy: float, method: str = "auto"
) -> ReferenceSolution:
    """Certified optimal value: direct linear solve for ridge-form problems,
    otherwise an independent convex solver (or a native high-accuracy run)
    whose result is certified by a feasible-dual-point duality gap."""
    if accuracy <= 0:
        raise ConfigurationError("accuracy must be positive")
    if method == "auto":
        if _is_ridge_form(problem):
            return _direct_ridge_reference(problem, accuracy)
        try:
            return _cvxpy_reference(problem, accuracy)
        except ImportError:  # pragma: no cover
            return _solver_reference(problem, accuracy)
    if method == "direct":
        return _direct_ridge_reference(problem, accuracy)
    if method == "cvxpy":
        return _cvxpy_reference(problem, accuracy)
    if method == "solver":
        return _solver_reference(problem, accuracy)
    raise ConfigurationError(f"unknown reference method {method!r}")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

_SOURCE_KEYS = {
    "synth_ridge": {"kind", "n", "d", "cov", "ar1_r", "noise_sigma", "seed"},
    "synth_sparse_classification": {"kind", "n", "d", "density", "seed"},
    "libsvm": {"kind", "path", "expected_dim"},
}
_REG_KEYS = {"kind", "lam", "lam2", "huber_mu", "kl_weight"}
_PROBLEM_KEYS = {"source", "loss", "regularizer", "scaling"}
_SOLVER_KEYS = {"methods", "epochs", "seeds", "epsilon", "c1", "c2", "overrides", "case_iv_tau"}
_OUTPUT_KEYS = {"dir", "mode", "reference_accuracy", "wall_clock"}
_TOP_KEYS = {"name", "problem", "solver", "output"}


def _check_keys(section: dict, allowed: set, where: str):
    unknown = set(section) - allowed
    if unknown:
        raise ConfigurationError(f"unknown key(s) {sorted(unknown)} in {where}")


@dataclass
class RunConfig:
    """Validated experiment configuration; see ``RunConfig.from_dict``."""

    name: str
    problem: dict
    solver: dict
    output: dict

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        _check_keys(raw, _TOP_KEYS, "config")
        problem = dict(raw.get("problem") or {})
        solver = dict(raw.get("solver") or {})
        output = dict(raw.get("output") or {})
        _check_keys(problem, _PROBLEM_KEYS, "problem")
        _check_keys(solver, _SOLVER_KEYS, "solver")
        _check_keys(output, _OUTPUT_KEYS, "output")
        source = dict(problem.get("source") or {})
        kind = source.get("kind")
        if kind not in _SOURCE_KEYS:
            raise ConfigurationError(f"problem.source.kind must be one of {sorted(_SOURCE_KEYS)}")
        _check_keys(source, _SOURCE_KEYS[kind], f"problem.source ({kind})")
        problem["source"] = source
        if problem.get("loss") not in ("squared", "hinge"):
            raise ConfigurationError("problem.loss must be 'squared' or 'hinge'")
        regspec = dict(problem.get("regularizer") or {})
        _check_keys(regspec, _REG_KEYS, "problem.regularizer")
        problem["regularizer"] = regspec
        problem.setdefault("scaling", "finite_sum")
        methods = solver.get("methods") or []
        for m in methods:
            if m not in ALL_METHODS:
                raise ConfigurationError(f"unknown method {m!r}; known: {ALL_METHODS}")
        if not methods:
            raise ConfigurationError("solver.methods must be a nonempty list")
        solver.setdefault("epochs", 50)
        solver.setdefault("seeds", [0])
        solver.setdefault("epsilon", None)
        solver.setdefault("c1", 0.1)
        solver.setdefault("c2", 0.1)
        solver.setdefault("overrides", {})
        solver.setdefault("case_iv_tau", None)
        output.setdefault("dir", "traces")
        output.setdefault("mode", "last")
        output.setdefault("reference_accuracy", 1e-9)
        output.setdefault("wall_clock", True)
        return cls(raw.get("name", "experiment"), problem, solver, output)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _build_regularizer(spec: dict) -> Regularizer:
    kind = spec.get("kind")
    if kind == "l2":
        return l2_reg(float(spec["lam"]))
    if kind == "l1":
        return l1_reg(float(spec["lam"]))
    if kind == "elastic_net":
        return elastic_net_reg(float(spec["lam"]), float(spec["lam2"]))
    if kind == "huber":
        return huber_reg(float(spec["lam"]), float(spec["huber_mu"]))
    if kind == "kl":
        return kl_reg(float(spec.get("kl_weight", 1.0)))
    raise ConfigurationError(f"unknown regularizer kind {kind!r}")


def _load_dataset(source: dict) -> Dataset:
    kind = source["kind"]
    if kind == "synth_ridge":
        cov = source.get("cov", "identity")
        if cov == "ar1":
            cov = ("ar1", float(source.get("ar1_r", 0.5)))
        ds, _ = synth_ridge(
            int(source["n"]),
            int(source["d"]),
            cov=cov,
            noise_sigma=float(source.get("noise_sigma", 0.1)),
            seed=int(source.get("seed", 0)),
        )
        return ds
    if kind == "synth_sparse_classification":
        return synth_sparse_classification(
            int(source["n"]), int(source["d"]),
            float(source["density"]), seed=int(source.get("seed", 0)),
        )
    path = Path(source["path"])
    if not path.exists():
        data_dir = os.environ.get(DATA_DIR_ENV)
        if data_dir and (Path(data_dir) / path).exists():
            path = Path(data_dir) / path
    return load_libsvm(path, expected_dim=source.get("expected_dim"))


def build_problem(config: RunConfig) -> CompositeProblem:
    dataset = _load_dataset(config.problem["source"])
    reg = _build_regularizer(config.problem["regularizer"])
    if config.problem["loss"] == "hinge":
        labels = dataset.labels
        if not set(np.unique(labels)) <= {-1.0, 1.0}:
            raise ConfigurationError("hinge loss requires +-1 labels")
        return svm_problem(dataset.matrix, labels, reg)
    return make_problem(
        dataset.matrix, squared_loss(dataset.labels), reg, config.problem["scaling"]
    )


# ---------------------------------------------------------------------------
# experiment execution
# ---------------------------------------------------------------------------


def _run_native(method, problem, epochs, seed, reference, output_mode, wall_clock,
                case_iv_tau):
    if method == "dapd":
        schedule = schedule_for_problem(problem, case_iv_tau=case_iv_tau)
        violations = validate_schedule(
            schedule,
            composite_gamma(problem),
            problem_constants(problem)[1],
            problem.stats.spectral_norm,
            horizon=min(epochs, 1000),
        )
        if violations:
            raise ConfigurationError(f"schedule infeasible: {violations[:3]}")
        return run_dapd(
            problem, schedule, epochs,
            output=output_mode, reference_value=reference, wall_clock=wall_clock,
        )
    params = params_for_problem(problem)
    iterations = epochs * problem.n
    if method == "sdapd":
        return run_sdapd(
            problem, params, iterations, seed,
            output=output_mode, reference_value=reference, wall_clock=wall_clock,
        )
    return run_sparse(
        problem, params, iterations, seed,
        reference_value=reference, wall_clock=wall_clock,
    )


@dataclass
class ExperimentResult:
    manifest_path: Path
    trace_paths: list
    failures: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failures


def run_experiment(config: RunConfig, base_dir=None) -> ExperimentResult:
    """Execute every (method, seed) cell; one CSV per cell plus a manifest."""
    if not isinstance(config, RunConfig):
        config = RunConfig.from_dict(config)
    outdir = Path(base_dir) if base_dir is not None else Path(config.output["dir"])
    outdir.mkdir(parents=True, exist_ok=True)
    problem = build_problem(config)
    gamma, mu, L, R, rbar = problem_constants(problem)
    manifest = {
        "experiment.name": config.name,
        "problem.n": problem.n,
        "problem.d": problem.dim,
        "problem.loss": problem.loss.kind,
        "problem.regularizer": problem.reg.kind,
        "problem.scaling": problem.scaling,
        "problem.R": R,
        "problem.Rbar": rbar,
        "problem.density": problem.stats.density,
        "problem.gamma": gamma,
        "problem.mu": mu,
        "problem.spectral_norm_converged": problem.stats.spectral_norm_converged,
    }
    reference = compute_reference(problem, config.output["reference_accuracy"])
    manifest["reference.value"] = reference.value
    manifest["reference.method"] = reference.method
    manifest["reference.certified_gap"] = reference.certified_gap

    epsilon = config.solver["epsilon"]
    perturbed = None
    if epsilon is not None:
        perturbed = perturb_problem(
            problem, float(epsilon), float(config.solver["c1"]), float(config.solver["c2"])
        )
        manifest["perturbation.epsilon"] = epsilon
        manifest["perturbation.delta1"] = perturbed.loss.dual_perturbation
        manifest["perturbation.delta2"] = perturbed.reg.primal_perturbation

    epochs = int(config.solver["epochs"])
    wall_clock = bool(config.output["wall_clock"])
    output_mode = config.output["mode"]
    trace_paths = []
    failures = {}
    for method in config.solver["methods"]:
        seeds = config.solver["seeds"]
        if method in ("dapd", "pdhg", "apgm", "da"):
            seeds = [None]  # deterministic: seed list collapses to one run
        cell_problem = problem
        if perturbed is not None and method in PERTURBATION_METHODS:
            cell_problem = perturbed
        for seed in seeds:
            cell = method if seed is None else f"{method}_seed{seed}"
            try:
                if method in NATIVE_METHODS:
                    res = _run_native(
                        method, cell_problem, epochs, seed or 0, reference.value,
                        output_mode, wall_clock, config.solver["case_iv_tau"],
                    )
                else:
                    res = run_baseline(
                        BaselineConfig(
                            method, epochs=epochs, seed=seed or 0,
                            steps=config.solver["overrides"].get(method, {}),
                        ),
                        cell_problem,
                        reference_value=reference.value,
                        wall_clock=wall_clock,
                    )
            except (DivergenceError, ConfigurationError) as exc:
                failures[cell] = str(exc)
                manifest[f"cell.{cell}.error"] = str(exc)
                continue
            path = outdir / f"{cell}.csv"
            write_trace(res.trace, path)
            trace_paths.append(path)
            for key, value in sorted(res.resolved.items()):
                if key == "samples":
                    continue
                manifest[f"cell.{cell}.{key}"] = value
    manifest_path = outdir / "manifest.txt"
    with open(manifest_path, "w") as fh:
        for key in sorted(manifest):
            fh.write(f"{key}={manifest[key]}\n")
    return ExperimentResult(manifest_path, trace_paths, failures)
