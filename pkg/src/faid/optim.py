"""Bound-constrained quasi-Newton minimization and the ID-vs-FAID
campaign runner.

The minimizer is a projected L-BFGS: two-loop recursion over the last m
curvature pairs, backtracking line search with an Armijo sufficient-
decrease test, and projection of every trial point onto the bound box.
Accepted steps therefore never increase the objective, which is what makes
the recorded loss traces monotone.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigError, FaidError
from .fdfd import FomValue, SolveCounter
from .geometry import DesignParams, DeviceSpec
from .gradients import (
    GradientMethod,
    Pipeline,
    grad_chain_rule,
    grad_numeric_perturbation,
)
from .grids import GridSpec
from .litho import IdentityModel


@dataclass(frozen=True)
class OptConfig:
    max_iterations: int = 100
    history: int = 8
    grad_tol: float = 1e-5
    initial_step: float = 1.0
    c1: float = 1e-4
    max_linesearch: int = 20

    def __post_init__(self):
        if self.history < 1:
            raise ConfigError("L-BFGS history must be >= 1")
        if not 0 < self.c1 < 1:
            raise ConfigError("sufficient-decrease constant must lie in (0, 1)")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")


class OptStatus(Enum):
    CONVERGED = "converged"
    MAX_ITERATIONS = "max_iterations"
    LINE_SEARCH_FAILED = "line_search_failed"
    OBJECTIVE_ERROR = "objective_error"


@dataclass
class MinimizeStep:
    iteration: int
    p: np.ndarray
    f: float
    grad_norm: float
    step: float


@dataclass
class MinimizeResult:
    p: np.ndarray
    f: float
    status: OptStatus
    trace: list[MinimizeStep]
    n_evals: int
    error: FaidError | None = None


def _project(p, lower, upper):
    return np.minimum(np.maximum(p, lower), upper)


def _two_loop(grad, s_list, y_list):
    """Standard L-BFGS two-loop recursion; returns the descent direction."""
    q = grad.copy()
    alphas = []
    rhos = [1.0 / float(np.dot(y, s)) for s, y in zip(s_list, y_list)]
    for s, y, rho in zip(reversed(s_list), reversed(y_list), reversed(rhos)):
        a = rho * float(np.dot(s, q))
        alphas.append(a)
        q -= a * y
    if s_list:
        s, y = s_list[-1], y_list[-1]
        q *= float(np.dot(s, y)) / float(np.dot(y, y))
    for (s, y, rho), a in zip(zip(s_list, y_list, rhos), reversed(alphas)):
        b = rho * float(np.dot(y, q))
        q += (a - b) * s
    return -q


def minimize(
    fun,
    p0: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    cfg: OptConfig,
    callback=None,
    fun_value=None,
) -> MinimizeResult:
    """Projected L-BFGS with backtracking.

    fun(p) must return (f, grad); fun_value(p) -> f, when given, is used
    for line-search trials so gradient work is spent only on accepted
    points. callback(step) fires after the initial evaluation and after
    every accepted iterate. Convergence is measured on the projected
    gradient. A history pair is discarded when its curvature <s, y> drops
    below 1e-12.
    """
    p = _project(np.asarray(p0, dtype=np.float64).copy(), lower, upper)
    if not np.allclose(p, p0, atol=0.0):
        raise ConfigError("initial point lies outside the bounds")
    value_of = fun_value if fun_value is not None else (lambda q: fun(q)[0])

    trace: list[MinimizeStep] = []
    n_evals = 0
    s_list: list[np.ndarray] = []
    y_list: list[np.ndarray] = []

    def record(k, f, g, step):
        gproj = np.linalg.norm(_project(p - g, lower, upper) - p)
        st = MinimizeStep(k, p.copy(), f, gproj, step)
        trace.append(st)
        if callback is not None:
            callback(st)
        return gproj

    try:
        f, g = fun(p)
        n_evals += 1
        gnorm = record(0, f, g, 0.0)
        if gnorm < cfg.grad_tol:
            return MinimizeResult(p, f, OptStatus.CONVERGED, trace, n_evals)

        for k in range(1, cfg.max_iterations + 1):
            d = _two_loop(g, s_list, y_list)
            if float(np.dot(d, g)) >= 0:  # not a descent direction: restart
                s_list.clear()
                y_list.clear()
                d = -g
            alpha = cfg.initial_step if s_list else cfg.initial_step / max(
                np.linalg.norm(g), 1.0
            )
            accepted = False
            for _ in range(cfg.max_linesearch):
                p_try = _project(p + alpha * d, lower, upper)
                dp = p_try - p
                if np.linalg.norm(dp) < 1e-15:
                    break
                f_try = value_of(p_try)
                n_evals += 1
                if f_try <= f + cfg.c1 * float(np.dot(g, dp)):
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                return MinimizeResult(p, f, OptStatus.LINE_SEARCH_FAILED, trace, n_evals)

            f_new, g_new = fun(p_try)
            n_evals += 1
            s = p_try - p
            y = g_new - g
            if float(np.dot(s, y)) > 1e-12:
                s_list.append(s)
                y_list.append(y)
                if len(s_list) > cfg.history:
                    s_list.pop(0)
                    y_list.pop(0)
            p, f, g = p_try, f_new, g_new
            gnorm = record(k, f, g, alpha)
            if gnorm < cfg.grad_tol:
                return MinimizeResult(p, f, OptStatus.CONVERGED, trace, n_evals)

        return MinimizeResult(p, f, OptStatus.MAX_ITERATIONS, trace, n_evals)
    except FaidError as exc:
        last_f = trace[-1].f if trace else np.nan
        return MinimizeResult(p, last_f, OptStatus.OBJECTIVE_ERROR, trace, n_evals, error=exc)


# ---------------------------------------------------------------------------
# ID-vs-FAID campaign


@dataclass
class IterationRecord:
    iteration: int
    p: np.ndarray
    ideal_fom: FomValue
    predicted_fom: FomValue
    grad_norm: float
    step: float
    em_solves: int


@dataclass
class RunTrace:
    records: list[IterationRecord]
    final_p: np.ndarray
    status: OptStatus
    error: FaidError | None = None


@dataclass
class CampaignResult:
    """Paired optimization runs from one starting point: standard ID
    (identity litho in the objective) and FAID (the campaign's litho model
    in the objective), each trace carrying both the ideal and the
    predicted FOM at every iterate, plus the four cross-evaluations of the
    final designs."""

    id_run: RunTrace
    faid_run: RunTrace
    cross: dict[tuple[str, str], FomValue]
    fingerprint: str


def _pipeline_objective(pipeline: Pipeline):
    """(value_and_grad, value_only) pair minimizing the transmission
    deficit 1 - mean(T) on the pipeline's predicted geometry."""
    if getattr(pipeline.litho, "differentiable", False):
        grad_fn = grad_chain_rule
    else:
        grad_fn = grad_numeric_perturbation

    def value_and_grad(p):
        res = grad_fn(pipeline, p)
        return 1.0 - res.fom.transmission, -res.grad

    def value_only(p):
        return 1.0 - pipeline.eval_fom(p).transmission

    return value_and_grad, value_only


def run_campaign(
    device: DeviceSpec,
    grid: GridSpec,
    litho_model,
    cfg: OptConfig,
    p0: DesignParams,
    eps_clad: float,
    eps_core: float,
    wavelengths: tuple[float, ...],
    pml: int = 10,
    fingerprint: str = "",
    n_threads: int = 1,
) -> CampaignResult:
    """Run standard ID and FAID from the same starting point and record the
    ideal and litho-predicted FOM at every iteration of both runs."""

    def one_run(objective_litho, cross_litho) -> RunTrace:
        counter = SolveCounter()
        obj_pipe = Pipeline(
            device, grid, objective_litho, eps_clad, eps_core, wavelengths, pml,
            n_threads=n_threads, counter=counter,
        )
        cross_pipe = Pipeline(
            device, grid, cross_litho, eps_clad, eps_core, wavelengths, pml,
            n_threads=n_threads, counter=counter,
        )
        objective_is_identity = isinstance(objective_litho, IdentityModel)
        value_and_grad, value_only = _pipeline_objective(obj_pipe)
        records: list[IterationRecord] = []

        def callback(st: MinimizeStep):
            own = FomValue(1.0 - st.f)
            other = cross_pipe.eval_fom(st.p)
            ideal, predicted = (own, other) if objective_is_identity else (other, own)
            records.append(
                IterationRecord(
                    st.iteration, st.p, ideal, predicted, st.grad_norm, st.step, counter.count
                )
            )

        res = minimize(
            value_and_grad, p0.values, p0.lower, p0.upper, cfg,
            callback=callback, fun_value=value_only,
        )
        return RunTrace(records, res.p, res.status, res.error)

    id_run = one_run(IdentityModel(), litho_model)
    faid_run = one_run(litho_model, IdentityModel())

    cross: dict[tuple[str, str], FomValue] = {}
    for run_name, trace in (("id", id_run), ("faid", faid_run)):
        for model_name, model in (("ideal", IdentityModel()), ("predicted", litho_model)):
            pipe = Pipeline(device, grid, model, eps_clad, eps_core, wavelengths, pml)
            cross[(run_name, model_name)] = pipe.eval_fom(trace.final_p)

    return CampaignResult(id_run, faid_run, cross, fingerprint)


def fingerprint_config(text: str) -> str:
    """Stable hash of a canonical config dump, stamped into every CSV."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]
