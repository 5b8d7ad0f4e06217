"""Lazy sparse SDAPD: per-iteration cost proportional to the sampled row.

The dual-averaged gradient sum  s^{t+1} = sum_{k<=t} (beta_k/n) A^T ybar^{k+1}
is a sum of dense vectors, but with geometric weights beta_t = beta0 / theta^t
it decomposes into two sequences driven only by the sparse per-iteration
updates  delta^t = ((y^{t+1}_i - y^t_i)/n) a_i:

    v^{t+1} = -(beta0 theta/(n(1-theta))) A^T y^0
              + sum_{k<=t} beta_k (n - 1/(1-theta)) delta^k
    w^{t+1} = (1/(n(1-theta))) A^T y^0 + (1/(1-theta)) sum_{k<=t} delta^k
    s^{t+1} = v^{t+1} + beta_t w^{t+1}

so each iteration writes only the sampled row's support in v, w, u, and any
primal coordinate is recovered on demand:

    x^t_j    = prox_{B_{t-1} g_j}(x^0_j - s^t_j)
    xbar^t_j = prox_{eta g_j}(x^t_j  - eta u^t_j)

This needs g separable and a single prox per touched coordinate, so it works
for any separable regularizer with a computable scalar prox (including the
KL divergence, where repeated-prox shortcuts are unavailable).

beta_t and B_t grow geometrically without bound.  ``rebase`` divides
(v, beta, B) by the current growth factor and accumulates its log in
``log_scale``; w needs no scaling (w is identically u/(1-theta) once seeded).
Recoveries evaluate the prox in rescaled form via ``recover_primal``, so no
stored quantity ever overflows, while recovered coordinates are unchanged.

Ergodic averaging is intentionally unavailable here: maintaining the average
would cost O(d) per iteration.  The last iterate is the practical output
anyway (it preserves sparsity); ergodic bounds are validated on the dense
path.
"""

from __future__ import annotations

import time

import numpy as np

from .errors import ConfigurationError, DivergenceError, StructuralError
from .matrix import SparseRowMatrix, matvec
from .proxlib import (
    CompositeProblem,
    primal_objective,
    prox_conjugate,
    recover_primal,
)
from .stochastic import StochasticParams
from .traces import RunResult, TraceRecord, nnz_fraction

DEFAULT_REBASE_THRESHOLD = 1e150
DEFAULT_REBASE_PERIOD = 2**20


class LazyState:
    """Two-sequence decomposition state.

    ``v`` and the scalars ``beta_hat`` (beta_t), ``beta_prev_hat``
    (beta_{t-1}) and ``B_hat`` (B_{t-1}) are stored divided by
    exp(log_scale); ``w`` and ``u`` are unscaled.  Only coordinates in the
    sampled row's support are written per iteration.
    """

    def __init__(self, x0, y0, A: SparseRowMatrix, params: StochasticParams, seed=0,
                 rebase_threshold=DEFAULT_REBASE_THRESHOLD,
                 rebase_period=DEFAULT_REBASE_PERIOD):
        theta = params.theta
        if not 0.0 < theta < 1.0:
            raise ConfigurationError("geometric schedule requires theta = 1/xi in (0, 1)")
        n = A.n_rows
        if params.n != n:
            raise ConfigurationError("params were built for a different sample count")
        self.x0 = np.asarray(x0, dtype=np.float64).copy()
        self.y = np.asarray(y0, dtype=np.float64).copy()
        if self.x0.shape != (A.n_cols,) or self.y.shape != (n,):
            raise StructuralError("x0/y0 shapes do not match the matrix")
        if np.any(self.y):
            aty0 = matvec(A, self.y, transpose=True)
        else:
            aty0 = np.zeros(A.n_cols)
        self.u = aty0 / n
        self.v = -(params.beta0 * theta / (n * (1.0 - theta))) * aty0
        self.w = aty0 / (n * (1.0 - theta))
        self.beta_hat = params.beta0
        self.beta_prev_hat = params.beta0 * theta
        self.B_hat = 0.0
        self.log_scale = 0.0
        self.inv_scale = 1.0
        self.theta = theta
        self.eta = params.eta
        self.tau = params.tau
        self.beta0 = params.beta0
        self.n = n
        self.t = 0
        self.touch_counter = 0
        self.rebase_count = 0
        self.rebase_threshold = rebase_threshold
        self.rebase_period = rebase_period
        self.rng = np.random.default_rng(seed)
        self.last_sample = -1


def init_lazy(x0, y0, A: SparseRowMatrix, params: StochasticParams, **kwargs) -> LazyState:
    """Seed the decomposition; the single O(nnz) setup cost is A^T y^0
    (zero work when y^0 = 0)."""
    return LazyState(x0, y0, A, params, **kwargs)


def _recover_coords(state: LazyState, reg, cols):
    """(x_j, xbar_j) for the given coordinates; the only primal work."""
    s_hat = state.v[cols] + state.beta_prev_hat * state.w[cols]
    x = recover_primal(reg, state.x0[cols], s_hat, state.B_hat, state.inv_scale, coords=cols)
    xbar = recover_primal(
        reg, x - state.eta * state.u[cols], np.zeros_like(x), state.eta, 1.0, coords=cols
    )
    return x, xbar


def lazy_primal_coord(state: LazyState, j: int, reg):
    """Recover (x_j, xbar_j) in O(1); increments the touch counter by 2."""
    if not 0 <= j < state.x0.size:
        raise StructuralError(f"coordinate {j} out of range")
    x, xbar = _recover_coords(state, reg, np.array([j]))
    state.touch_counter += 2
    return float(x[0]), float(xbar[0])


def sparse_iterate(state: LazyState, problem: CompositeProblem, params: StochasticParams):
    """One SDAPD iteration touching only the sampled row's support."""
    A = problem.matrix
    reg = problem.reg
    n = state.n
    i = int(state.rng.integers(n))
    state.last_sample = i
    cols, vals = A.row(i)
    k = int(vals.size)

    if k:
        _, xbar_c = _recover_coords(state, reg, cols)
        dot = float(vals @ xbar_c)
    else:
        dot = 0.0
    y_new = prox_conjugate(problem.loss, i, state.tau, state.y[i] + state.tau * dot)
    if not (np.isfinite(dot) and np.isfinite(y_new)):
        raise DivergenceError(f"non-finite iterate at iteration {state.t}", iteration=state.t)
    dy = y_new - state.y[i]
    state.y[i] = y_new

    if k:
        delta = (dy / n) * vals
        state.u[cols] += delta
        state.v[cols] += (state.beta_hat * (n - 1.0 / (1.0 - state.theta))) * delta
        state.w[cols] += delta / (1.0 - state.theta)

    state.B_hat += state.beta_hat
    state.beta_prev_hat = state.beta_hat
    state.beta_hat /= state.theta
    state.t += 1
    # audit: 2 recoveries + row read + 3 support writes per coordinate
    state.touch_counter += 6 * k + 2

    if state.beta_hat > state.rebase_threshold or (
        state.rebase_period and state.t % state.rebase_period == 0
    ):
        rebase(state)
    return state


def materialize_s(state: LazyState) -> np.ndarray:
    """The full gradient sum v + beta_{t-1} w; O(d) test/verification surface.

    Returns true (unscaled) values, which can overflow for very long runs;
    recoveries never take this path.
    """
    with np.errstate(over="ignore"):
        return (state.v + state.beta_prev_hat * state.w) / state.inv_scale


def rebase(state: LazyState) -> LazyState:
    """Rescale (v, beta, B) by the accumulated growth so stored values stay
    bounded; recovered coordinates are unchanged (to roundoff) because the
    recovery divides the same factor back out via ``inv_scale``."""
    factor = state.beta_hat / state.beta0
    if factor == 1.0:
        state.rebase_count += 1
        return state
    state.v /= factor
    state.B_hat /= factor
    state.beta_hat = state.beta0
    state.beta_prev_hat /= factor
    state.log_scale += np.log(factor)
    state.inv_scale = np.exp(-state.log_scale)
    state.rebase_count += 1
    return state


def finalize_x(state: LazyState, reg) -> np.ndarray:
    """Recover the full last iterate x^t (vectorized form of
    ``lazy_primal_coord``'s x-recovery); O(d), done once at termination."""
    all_cols = np.arange(state.x0.size)
    s_hat = state.v + state.beta_prev_hat * state.w
    return recover_primal(reg, state.x0, s_hat, state.B_hat, state.inv_scale, coords=all_cols)


def run_sparse(
    problem: CompositeProblem,
    params: StochasticParams,
    iterations: int,
    seed: int,
    x0=None,
    y0=None,
    reference_value: float | None = None,
    wall_clock: bool = True,
    rebase_threshold: float = DEFAULT_REBASE_THRESHOLD,
    rebase_period: int = DEFAULT_REBASE_PERIOD,
) -> RunResult:
    """Drive the lazy engine; per-epoch traces, last-iterate output only."""
    if iterations < 1:
        raise ConfigurationError("iterations must be at least 1")
    d, n = problem.dim, problem.n
    x0 = np.zeros(d) if x0 is None else x0
    y0 = np.zeros(n) if y0 is None else y0
    state = init_lazy(
        x0, y0, problem.matrix, params, seed=seed,
        rebase_threshold=rebase_threshold, rebase_period=rebase_period,
    )
    trace = []
    start = time.perf_counter()
    for t in range(iterations):
        sparse_iterate(state, problem, params)
        if (t + 1) % n == 0 or t + 1 == iterations:
            x_now = finalize_x(state, problem.reg)
            value = primal_objective(problem, x_now)
            subopt = value - reference_value if reference_value is not None else np.nan
            trace.append(
                TraceRecord(
                    epoch=(t + n) // n,
                    primal_value=value,
                    suboptimality=subopt,
                    nnz_fraction=nnz_fraction(x_now),
                    touches=state.touch_counter,
                    elapsed_seconds=time.perf_counter() - start if wall_clock else 0.0,
                )
            )
    x_final = finalize_x(state, problem.reg)
    resolved = {
        "eta": params.eta,
        "tau": params.tau,
        "beta0": params.beta0,
        "xi": params.xi,
        "theta": state.theta,
        "seed": seed,
        "iterations": iterations,
        "rebase_count": state.rebase_count,
        "delta1": problem.loss.dual_perturbation,
        "delta2": problem.reg.primal_perturbation,
    }
    return RunResult(x=x_final, trace=trace, y=state.y, resolved=resolved)
