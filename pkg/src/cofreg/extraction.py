"""Sequential and parallel extraction of sparse unit-rank components.

Both drivers repeatedly solve a tuned single-component problem and differ
only in the offsets that remove the signal attributed to the other
components.  Sequential extraction deflates the components fitted so far,
stopping when a step comes back empty; parallel extraction deflates
reduced-rank initial estimates of the non-target components, so its solves
are independent and may run concurrently.  Controls and dispersions are
taken from the last executed solve.

Every component's cross-validation folds derive from (seed, component
index), so results are reproducible and independent of scheduling.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .families import ObservedOutcomes, as_family_ops
from .model import DesignMatrices, FitResult, UnitRankComponent
from .reduced_rank import adaptive_weights, fit_reduced_rank
from .tuning import CvCurve, TuningConfig, kfold_cv, lambda_path
from .unit_rank import PenaltyConfig, SolverConfig, SolverError, SolverState, fit_unit_rank


def _child_seed(seed: int, k: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(k)]).generate_state(1)[0])


def predictor_effect(X, component: UnitRankComponent) -> np.ndarray:
    """X C_k for one component, computed as (X (d u)) v^T."""
    if component.is_null:
        return np.zeros((X.shape[0], component.v.size))
    return np.outer(X @ (component.d * component.u), component.v)


def _tuned_component(y, design_k, ops, tuning_k, init_state, weights, *, lam,
                     alpha, gamma, epsilon, max_iter, alpha_p):
    """Tune lam by cross-validation (unless fixed) and refit on the full data."""
    w_d, w_u, w_v = weights
    penalty = PenaltyConfig(lam=0.0, w_u=w_u, w_v=w_v, w_d=w_d, alpha=alpha, gamma=gamma)
    diag = {}
    if lam is None:
        null_fit = fit_reduced_rank(y, design_k, ops, r=0, epsilon=epsilon,
                                    max_iter=max_iter, alpha_p=alpha_p)
        path = lambda_path(y, design_k, ops, null_fit.beta, tuning_k)
        curve = kfold_cv(y, design_k, ops, init_state, penalty, path, tuning_k,
                         epsilon=epsilon, max_iter=max_iter, alpha_p=alpha_p)
        lam_k = curve.chosen_lambda
        diag["lambda_max"] = float(path[0])
        diag["cv"] = curve.to_dict()
        diag["lambda_max_selected"] = bool(curve.chosen_index == 0 and path[0] > 0.0
                                           and path.size > 1)
    else:
        lam_k = float(lam)
    config = SolverConfig(penalty=penalty.with_lam(lam_k), epsilon=epsilon,
                          max_iter=max_iter, alpha_p=alpha_p)
    fit = fit_unit_rank(y, design_k, ops, init_state, config)
    diag.update({
        "lambda": lam_k,
        "iterations": fit.iterations,
        "converged": fit.converged,
        "objective_trace": [float(v) for v in fit.objective_trace],
        "d": fit.component.d,
    })
    return fit, diag


def _gram_diagnostics(components, X) -> dict:
    live = [c for c in components if not c.is_null]
    if not live:
        return {}
    n = X.shape[0]
    XU = np.column_stack([X @ c.u for c in live])
    V = np.column_stack([c.v for c in live])
    return {
        "gram_xu": (XU.T @ XU / n).tolist(),
        "gram_v": (V.T @ V).tolist(),
    }


def fit_sequential(y: ObservedOutcomes, design: DesignMatrices, families, r_max: int,
                   tuning: TuningConfig, *, lam=None, alpha: float = 0.95,
                   gamma: float = 1.0, epsilon: float = 1e-6, max_iter: int = 500,
                   alpha_p: float = 10.0) -> FitResult:
    """Extract up to r_max components one at a time with offset deflation.

    Step k fits at the offset O + X * (sum of components 1..k-1): a rank-1
    reduced-rank warm start supplies the initial point and the adaptive
    weights, cross-validation picks lam, and the step's refit is appended.
    Extraction stops early when a step returns the null component (or
    selects lam_max, which is the same statement).
    """
    ops = as_family_ops(families)
    y.validate(ops.families)
    if r_max < 1:
        raise ValueError(f"r_max must be >= 1, got {r_max}")
    q = y.q
    base_offset = design.offset(q)
    deflation = np.zeros((design.n, q))
    components = []
    step_diags = []
    beta_hat = None
    phi_hat = None
    for k in range(1, r_max + 1):
        try:
            design_k = design.with_offset(base_offset + deflation)
            start = fit_reduced_rank(y, design_k, ops, r=1, epsilon=epsilon,
                                     max_iter=max_iter, alpha_p=alpha_p)
            init_comp = start.components[0]
            diag = {"step": k, "init_iterations": start.iterations, "init_d": init_comp.d}
            if init_comp.is_null:
                if beta_hat is None:
                    beta_hat, phi_hat = start.beta, start.phi
                step_diags.append(diag)
                break
            tuning_k = dataclasses.replace(tuning, seed=_child_seed(tuning.seed, k))
            fit, tdiag = _tuned_component(
                y, design_k, ops, tuning_k,
                SolverState(init_comp, start.beta, start.phi),
                adaptive_weights(init_comp, gamma),
                lam=lam, alpha=alpha, gamma=gamma,
                epsilon=epsilon, max_iter=max_iter, alpha_p=alpha_p,
            )
        except SolverError as err:
            raise SolverError(err.step, f"component {k}: {err}") from err
        diag.update(tdiag)
        step_diags.append(diag)
        beta_hat, phi_hat = fit.beta, fit.phi
        if fit.component.is_null or diag.get("lambda_max_selected", False):
            break
        components.append(fit.component)
        deflation += predictor_effect(design.X, fit.component)

    diagnostics = {
        "method": "sequential",
        "components": step_diags,
        "lambdas": [d["lambda"] for d in step_diags if "lambda" in d],
    }
    diagnostics.update(_gram_diagnostics(components, design.X))
    return FitResult.build(components, beta_hat, phi_hat, design.p, q, diagnostics)


def fit_parallel(y: ObservedOutcomes, design: DesignMatrices, families, r: int,
                 tuning: TuningConfig, *, lam=None, alpha: float = 0.95,
                 gamma: float = 1.0, epsilon: float = 1e-6, max_iter: int = 500,
                 alpha_p: float = 10.0, threads: int = 1) -> FitResult:
    """Extract r components against offsets built from a rank-r warm start.

    A single reduced-rank fit supplies initial components; each target k is
    then solved at the offset O + X * (sum of the other initial components).
    The solves are independent: with threads > 1 they run concurrently and
    the output is identical to the serial schedule.
    """
    ops = as_family_ops(families)
    y.validate(ops.families)
    if r < 1:
        raise ValueError(f"r must be >= 1, got {r}")
    if r > min(design.p, y.q):
        raise ValueError(f"r = {r} exceeds min(p, q) = {min(design.p, y.q)}")
    q = y.q
    start = fit_reduced_rank(y, design, ops, r=r, epsilon=epsilon,
                             max_iter=max_iter, alpha_p=alpha_p)
    effects = [predictor_effect(design.X, c) for c in start.components]
    total_effect = sum(effects)
    base_offset = design.offset(q)

    def solve_one(k: int):
        comp0 = start.components[k]
        diag = {"step": k + 1, "init_iterations": start.iterations, "init_d": comp0.d}
        if comp0.is_null:
            return None, diag
        try:
            design_k = design.with_offset(base_offset + total_effect - effects[k])
            tuning_k = dataclasses.replace(tuning, seed=_child_seed(tuning.seed, k + 1))
            fit, tdiag = _tuned_component(
                y, design_k, ops, tuning_k,
                SolverState(comp0, start.beta, start.phi),
                adaptive_weights(comp0, gamma),
                lam=lam, alpha=alpha, gamma=gamma,
                epsilon=epsilon, max_iter=max_iter, alpha_p=alpha_p,
            )
        except SolverError as err:
            raise SolverError(err.step, f"component {k + 1}: {err}") from err
        diag.update(tdiag)
        return fit, diag

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(solve_one, range(r)))
    else:
        results = [solve_one(k) for k in range(r)]

    components = [
        fit.component if fit is not None else UnitRankComponent.null(design.p, q)
        for fit, _ in results
    ]
    beta_hat, phi_hat = start.beta, start.phi
    for fit, _ in results:
        if fit is not None:
            beta_hat, phi_hat = fit.beta, fit.phi  # last executed solve wins

    diagnostics = {
        "method": "parallel",
        "components": [diag for _, diag in results],
        "lambdas": [diag["lambda"] for _, diag in results if "lambda" in diag],
    }
    diagnostics.update(_gram_diagnostics(components, design.X))
    return FitResult.build(components, beta_hat, phi_hat, design.p, q, diagnostics)


def sequential_cv_curve(y: ObservedOutcomes, design: DesignMatrices, families,
                        component: int, tuning: TuningConfig, **options) -> CvCurve:
    """Cross-validation curve of the given sequential extraction step (1-based)."""
    if component < 1:
        raise ValueError("component index must be >= 1")
    result = fit_sequential(y, design, families, r_max=component, tuning=tuning, **options)
    steps = result.diagnostics["components"]
    if len(steps) < component or "cv" not in steps[component - 1]:
        raise ValueError(f"extraction produced no tuned component {component}")
    cv = steps[component - 1]["cv"]
    return CvCurve(np.asarray(cv["lambdas"]), np.asarray(cv["mean_nll"]),
                   np.asarray(cv["sd_nll"]), int(cv["chosen_index"]))
