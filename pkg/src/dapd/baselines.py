"""Comparison solvers sharing the matrix/prox substrate.

All baselines run dense (for SPDC and ProxSGD on sparse data this is exactly
the per-epoch cost difference the coordinate-touch counters expose) and emit
the same trace schema and epoch convention as the native solvers: one epoch
is one iteration for deterministic methods and n row accesses for stochastic
ones.

Step rules follow each method's original reference and are fixed, not tuned;
every resolved constant is returned for the experiment manifest.

  pdhg      Chambolle & Pock (2011), J Math Imaging Vis 40(1); algorithm 1,
            with the accelerated variants (their algorithms 2-3) when strong
            convexity / smoothness are available
  apgm      Nesterov's accelerated proximal gradient in its FISTA form,
            Beck & Teboulle (2009), SIAM J Imaging Sci 2(1); constant-momentum
            variant when the regularizer is strongly convex
  da        Nesterov (2009), Math Program 120(1), simple dual averaging on
            the full subgradient
  rda       Xiao (2010), JMLR 11, regularized dual averaging with the
            sqrt(t) auxiliary strong convexity
  proxsgd   proximal stochastic (sub)gradient, 1/(mu t) steps when strongly
            convex (Shamir & Zhang 2013 style), else c/sqrt(t)
  proxsvrg  Xiao & Zhang (2014), SIAM J Optim 24(4); step 1/(10 L), epoch
            length m = 2n
  spdc      Zhang & Xiao (2017), Math Program 165; published (tau, sigma,
            theta) triple
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DivergenceError
from .matrix import matvec
from .proxlib import (
    CompositeProblem,
    composite_gamma,
    dual_prox,
    loss_grad_at,
    loss_grads,
    primal_objective,
    problem_constants,
    prox_conjugate,
    prox_reg,
)
from .traces import RunResult, TraceRecord, nnz_fraction

DETERMINISTIC_METHODS = ("pdhg", "apgm", "da")
STOCHASTIC_METHODS = ("rda", "proxsgd", "proxsvrg", "spdc")
BASELINE_METHODS = DETERMINISTIC_METHODS + STOCHASTIC_METHODS


@dataclass(frozen=True)
class BaselineConfig:
    """Method name, budget in epochs, seed (stochastic only), and optional
    per-method step overrides."""

    method: str
    epochs: int
    seed: int = 0
    steps: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in BASELINE_METHODS:
            raise ConfigurationError(f"unknown baseline method {self.method!r}")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be at least 1")


def _reg_subgradient(reg, x):
    """A subgradient of the (perturbed) regularizer; sign(0) taken as 0."""
    if reg.kind == "l2":
        out = reg.lam * x
    elif reg.kind == "l1":
        out = reg.lam * np.sign(x)
    elif reg.kind == "elastic_net":
        out = reg.lam * np.sign(x) + reg.lam2 * x
    elif reg.kind == "huber":
        cut = reg.lam / (2.0 * reg.huber_mu)
        out = np.where(np.abs(x) <= cut, 2.0 * reg.huber_mu * x, reg.lam * np.sign(x))
    else:  # kl
        out = -reg.weight() / x
    if reg.primal_perturbation > 0:
        out = out + reg.primal_perturbation * x
    return out


def _loss_gradient(problem, x):
    """Gradient (or subgradient) of the composite loss term at x."""
    u = matvec(problem.matrix, x)
    return problem.loss_scale * matvec(
        problem.matrix, loss_grads(problem.loss, u), transpose=True
    )


class _Tracer:
    """Shared per-epoch trace bookkeeping."""

    def __init__(self, problem, reference_value, wall_clock):
        self.problem = problem
        self.reference = reference_value
        self.wall_clock = wall_clock
        self.records = []
        self.touches = 0
        self.start = time.perf_counter()

    def record(self, epoch, x):
        value = primal_objective(self.problem, x)
        if not np.isfinite(value):
            raise DivergenceError(f"non-finite objective at epoch {epoch}", iteration=epoch)
        subopt = value - self.reference if self.reference is not None else np.nan
        self.records.append(
            TraceRecord(
                epoch=epoch,
                primal_value=value,
                suboptimality=subopt,
                nnz_fraction=nnz_fraction(x),
                touches=self.touches,
                elapsed_seconds=time.perf_counter() - self.start if self.wall_clock else 0.0,
            )
        )


def _run_pdhg(problem, epochs, steps, tracer):
    A = problem.matrix
    reg = problem.reg
    gamma_f = composite_gamma(problem)
    _, mu, _, R, _ = problem_constants(problem)
    if R <= 0:
        raise ConfigurationError("pdhg needs a nonzero matrix")
    variant = "vanilla"
    theta = 1.0
    if gamma_f > 0 and mu > 0:
        # constant-step linearly convergent variant
        mu_pd = steps.get("mu_pd", 2.0 * np.sqrt(gamma_f * mu) / R)
        tau = mu_pd / (2.0 * mu)
        sigma = mu_pd / (2.0 * gamma_f)
        theta = 1.0 / (1.0 + mu_pd)
        variant = "strongly_convex_smooth"
    else:
        tau = steps.get("tau", 1.0 / R)
        sigma = steps.get("sigma", 1.0 / R)
        if mu > 0:
            variant = "primal_accelerated"
        elif gamma_f > 0:
            variant = "dual_accelerated"
    d, n = problem.dim, problem.n
    x = np.zeros(d)
    y = np.zeros(n)
    x_ext = x.copy()
    for t in range(epochs):
        y = dual_prox(problem.loss, problem.loss_scale, sigma, y + sigma * matvec(A, x_ext))
        x_new = prox_reg(reg, tau, x - tau * matvec(A, y, transpose=True))
        if variant == "primal_accelerated":
            theta = 1.0 / np.sqrt(1.0 + 2.0 * mu * tau)
            tau, sigma = theta * tau, sigma / theta
        elif variant == "dual_accelerated":
            theta = 1.0 / np.sqrt(1.0 + 2.0 * gamma_f * sigma)
            sigma, tau = theta * sigma, tau / theta
        x_ext = x_new + theta * (x_new - x)
        x = x_new
        tracer.touches += 2 * A.nnz + 2 * d + n
        tracer.record(t + 1, x)
    return x, {"variant": variant, "tau": tau, "sigma": sigma, "theta": theta}


def _run_apgm(problem, epochs, steps, tracer):
    gamma_f = composite_gamma(problem)
    if gamma_f <= 0:
        raise ConfigurationError("apgm requires a smooth loss (gamma > 0)")
    _, mu, _, R, _ = problem_constants(problem)
    zeta = steps.get("zeta", R**2 / gamma_f)
    momentum_kind = "strongly_convex" if mu > 0 else "fista"
    if mu > 0:
        mom = (np.sqrt(zeta) - np.sqrt(mu)) / (np.sqrt(zeta) + np.sqrt(mu))
    t_k = 1.0
    x = np.zeros(problem.dim)
    z = x.copy()
    for t in range(epochs):
        grad = _loss_gradient(problem, z)
        x_new = prox_reg(problem.reg, 1.0 / zeta, z - grad / zeta)
        if mu > 0:
            z = x_new + mom * (x_new - x)
        else:
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_k**2))
            z = x_new + ((t_k - 1.0) / t_next) * (x_new - x)
            t_k = t_next
        x = x_new
        tracer.touches += 2 * problem.matrix.nnz + 3 * problem.dim
        tracer.record(t + 1, x)
    return x, {"zeta": zeta, "momentum": momentum_kind}


def _run_da(problem, epochs, steps, tracer):
    x0 = np.zeros(problem.dim)
    g0 = _loss_gradient(problem, x0) + _reg_subgradient(problem.reg, x0)
    gamma_hat = steps.get("gamma_hat", max(float(np.linalg.norm(g0)), 1e-12))
    x = x0.copy()
    s = np.zeros(problem.dim)
    for t in range(epochs):
        s += _loss_gradient(problem, x) + _reg_subgradient(problem.reg, x)
        x = x0 - s / (gamma_hat * np.sqrt(t + 1.0))
        tracer.touches += 2 * problem.matrix.nnz + 3 * problem.dim
        tracer.record(t + 1, x)
    return x, {"gamma_hat": gamma_hat}


def _run_rda(problem, epochs, steps, seed, tracer):
    from .proxlib import recover_primal

    n = problem.n
    _, mu, _, _, rbar = problem_constants(problem)
    gamma_hat = steps.get("gamma_hat", max(rbar, 1e-12))
    rng = np.random.default_rng(seed)
    sample_factor = problem.loss_scale * n  # per-sample gradient scale
    x0 = np.zeros(problem.dim)
    x = x0.copy()
    gbar = np.zeros(problem.dim)
    # with a strongly convex regularizer and bounded subgradients (Lipschitz
    # loss) the auxiliary sqrt(t) term is unnecessary: the update is
    # argmin <gbar, x> + g(x), the infinite-step prox limit
    lipschitz_loss = np.isfinite(problem.loss.lipschitz) or problem.loss.smoothness_gamma == 0
    variant = "strongly_convex" if (mu > 0 and lipschitz_loss) else "sqrt_t"
    iterations = epochs * n
    for t in range(1, iterations + 1):
        i = int(rng.integers(n))
        cols, vals = problem.matrix.row(i)
        u_i = float(vals @ x[cols]) if vals.size else 0.0
        gi = sample_factor * loss_grad_at(problem.loss, i, u_i)
        gbar *= (t - 1) / t
        if vals.size:
            gbar[cols] += (gi / t) * vals
        if variant == "strongly_convex":
            x = recover_primal(problem.reg, x0, gbar, 1.0, 0.0)
        else:
            step = np.sqrt(t) / gamma_hat
            x = prox_reg(problem.reg, step, x0 - step * gbar)
        tracer.touches += 2 * problem.dim + 2 * vals.size
        if t % n == 0:
            tracer.record(t // n, x)
    return x, {"gamma_hat": gamma_hat, "variant": variant}


def _run_proxsgd(problem, epochs, steps, seed, tracer):
    n = problem.n
    gamma, mu, _, _, rbar = problem_constants(problem)
    alpha0 = steps.get("alpha0", 1.0 / max(rbar, 1e-12))
    rng = np.random.default_rng(seed)
    sample_factor = problem.loss_scale * n
    # 1/(mu t) steps need the usual inverse-smoothness cap to avoid the
    # huge-first-step blowup on smooth losses; the schedule is unchanged
    # asymptotically
    if gamma > 0:
        alpha_cap = steps.get("alpha_cap", gamma / (sample_factor * rbar**2))
    else:
        alpha_cap = steps.get("alpha_cap", np.inf)
    x = np.zeros(problem.dim)
    rule = "inverse_mu_t" if mu > 0 else "inverse_sqrt_t"
    iterations = epochs * n
    for t in range(iterations):
        i = int(rng.integers(n))
        cols, vals = problem.matrix.row(i)
        u_i = float(vals @ x[cols]) if vals.size else 0.0
        gi = sample_factor * loss_grad_at(problem.loss, i, u_i)
        alpha = min(1.0 / (mu * (t + 1.0)), alpha_cap) if mu > 0 else alpha0 / np.sqrt(t + 1.0)
        step_vec = x.copy()
        if vals.size:
            step_vec[cols] -= alpha * gi * vals
        x = prox_reg(problem.reg, alpha, step_vec)
        tracer.touches += 2 * problem.dim + 2 * vals.size
        if (t + 1) % n == 0:
            tracer.record((t + 1) // n, x)
    return x, {"rule": rule, "alpha0": alpha0}


def _run_proxsvrg(problem, epochs, steps, seed, tracer):
    gamma, _, _, _, rbar = problem_constants(problem)
    if gamma <= 0:
        raise ConfigurationError("proxsvrg requires a smooth loss (gamma > 0)")
    n = problem.n
    sample_factor = problem.loss_scale * n
    L_sample = sample_factor * rbar**2 / gamma
    eta = steps.get("eta", 1.0 / (10.0 * L_sample))
    m = steps.get("m", 2 * n)
    rng = np.random.default_rng(seed)
    x = np.zeros(problem.dim)
    accesses = 0
    budget = epochs * n
    while accesses < budget:
        x_snap = x.copy()
        u_snap = matvec(problem.matrix, x_snap)
        grads_snap = loss_grads(problem.loss, u_snap)
        full = problem.loss_scale * matvec(problem.matrix, grads_snap, transpose=True)
        tracer.touches += 2 * problem.matrix.nnz + problem.dim
        for _ in range(n):  # snapshot costs one access per row
            accesses += 1
            if accesses % n == 0:
                tracer.record(accesses // n, x)
        for _ in range(m):
            i = int(rng.integers(n))
            cols, vals = problem.matrix.row(i)
            u_i = float(vals @ x[cols]) if vals.size else 0.0
            gi = loss_grad_at(problem.loss, i, u_i)
            v = full.copy()
            if vals.size:
                v[cols] += (sample_factor / n) * (gi - grads_snap[i]) * vals
            x = prox_reg(problem.reg, eta, x - eta * v)
            accesses += 1
            tracer.touches += 3 * problem.dim + 2 * vals.size
            if accesses % n == 0:
                tracer.record(accesses // n, x)
            if accesses >= budget:
                break
    return x, {"eta": eta, "m": m}


def _run_spdc(problem, epochs, steps, seed, tracer):
    gamma, mu, _, _, rbar = problem_constants(problem)
    if gamma <= 0 or mu <= 0:
        raise ConfigurationError(
            "spdc requires gamma > 0 and mu > 0; perturb the problem first"
        )
    n = problem.n
    tau = steps.get("tau", (1.0 / (2.0 * rbar)) * np.sqrt(gamma / (n * mu)))
    sigma = steps.get("sigma", (1.0 / (2.0 * rbar)) * np.sqrt(n * mu / gamma))
    theta = steps.get("theta", 1.0 - 1.0 / (n + 2.0 * rbar * np.sqrt(n / (gamma * mu))))
    rng = np.random.default_rng(seed)
    d = problem.dim
    x = np.zeros(d)
    x_ext = x.copy()
    y = np.zeros(n)
    u = matvec(problem.matrix, y, transpose=True) / n
    iterations = epochs * n
    for t in range(iterations):
        i = int(rng.integers(n))
        cols, vals = problem.matrix.row(i)
        dot = float(vals @ x_ext[cols]) if vals.size else 0.0
        y_new_i = prox_conjugate(problem.loss, i, sigma, y[i] + sigma * dot)
        dy = y_new_i - y[i]
        y[i] = y_new_i
        grad = u.copy()
        if vals.size:
            grad[cols] += dy * vals
        x_new = prox_reg(problem.reg, tau, x - tau * grad)
        if vals.size:
            u[cols] += (dy / n) * vals
        x_ext = x_new + theta * (x_new - x)
        x = x_new
        tracer.touches += 4 * d + 3 * vals.size
        if (t + 1) % n == 0:
            tracer.record((t + 1) // n, x)
    return x, {"tau": tau, "sigma": sigma, "theta": theta}


def run_baseline(
    config: BaselineConfig,
    problem: CompositeProblem,
    reference_value: float | None = None,
    wall_clock: bool = True,
) -> RunResult:
    """Run the configured baseline; deterministic methods ignore the seed."""
    tracer = _Tracer(problem, reference_value, wall_clock)
    method = config.method
    if method == "pdhg":
        x, resolved = _run_pdhg(problem, config.epochs, config.steps, tracer)
    elif method == "apgm":
        x, resolved = _run_apgm(problem, config.epochs, config.steps, tracer)
    elif method == "da":
        x, resolved = _run_da(problem, config.epochs, config.steps, tracer)
    elif method == "rda":
        x, resolved = _run_rda(problem, config.epochs, config.steps, config.seed, tracer)
    elif method == "proxsgd":
        x, resolved = _run_proxsgd(problem, config.epochs, config.steps, config.seed, tracer)
    elif method == "proxsvrg":
        x, resolved = _run_proxsvrg(problem, config.epochs, config.steps, config.seed, tracer)
    else:
        x, resolved = _run_spdc(problem, config.epochs, config.steps, config.seed, tracer)
    resolved = {"method": method, "epochs": config.epochs, **resolved}
    if method in STOCHASTIC_METHODS:
        resolved["seed"] = config.seed
    if not tracer.records:
        tracer.record(1, x)
    return RunResult(x=x, trace=tracer.records, resolved=resolved)
