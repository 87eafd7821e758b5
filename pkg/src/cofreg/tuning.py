"""Penalty-path construction, entrywise K-fold cross-validation, one-SD rule.

The path runs log-equispaced from lam_max = ||X^T (Y - mu0)||_inf (mu0 the
null-model mean) down to lam_max * lambda_min_ratio.  Cross-validation
partitions the observed cells (not rows) into K folds: held-out cells are
treated as missing during training, exactly the mechanism the estimator
already uses for incomplete data, and scored by their negative
log-likelihood under the trained parameters.  Within a fold the path is
swept warm-started from large to small lam.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .families import ObservedOutcomes, as_family_ops, dispersion_nll_terms, neg_log_likelihood
from .model import DesignMatrices
from .unit_rank import PenaltyConfig, SolverConfig, SolverState, fit_unit_rank, _theta


@dataclass
class TuningConfig:
    """Cross-validation controls; seed is required for fold reproducibility."""

    seed: int
    n_lambda: int = 40
    lambda_min_ratio: float = 1e-6
    n_folds: int = 5
    use_one_sd: bool = True
    threads: int = 1

    def __post_init__(self):
        if self.seed < 0:
            raise ValueError("seed must be a nonnegative integer")
        if self.n_lambda < 2:
            raise ValueError(f"n_lambda must be >= 2, got {self.n_lambda}")
        if self.n_folds < 2:
            raise ValueError(f"n_folds must be >= 2, got {self.n_folds}")
        if not 0.0 < self.lambda_min_ratio < 1.0:
            raise ValueError(f"lambda_min_ratio must be in (0, 1), got {self.lambda_min_ratio}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


@dataclass(eq=False)
class CvCurve:
    """Held-out NLL along the penalty path (descending lambdas)."""

    lambdas: np.ndarray
    mean_nll: np.ndarray
    sd_nll: np.ndarray
    chosen_index: int

    def __post_init__(self):
        self.lambdas = np.asarray(self.lambdas, dtype=float)
        self.mean_nll = np.asarray(self.mean_nll, dtype=float)
        self.sd_nll = np.asarray(self.sd_nll, dtype=float)
        if not (self.lambdas.size == self.mean_nll.size == self.sd_nll.size):
            raise ValueError("lambda/mean/sd lengths differ")
        if not 0 <= self.chosen_index < self.lambdas.size:
            raise ValueError(f"chosen_index {self.chosen_index} out of range")

    @property
    def chosen_lambda(self) -> float:
        return float(self.lambdas[self.chosen_index])

    def to_dict(self) -> dict:
        return {
            "schema": 1,
            "lambdas": self.lambdas.tolist(),
            "mean_nll": self.mean_nll.tolist(),
            "sd_nll": self.sd_nll.tolist(),
            "chosen_index": int(self.chosen_index),
            "chosen_lambda": self.chosen_lambda,
        }

    def to_csv(self) -> str:
        lines = ["lambda,mean_nll,sd_nll"]
        for lam, m, s in zip(self.lambdas, self.mean_nll, self.sd_nll):
            lines.append(f"{lam!r},{m!r},{s!r}")
        return "\n".join(lines) + "\n"


def lambda_path(y: ObservedOutcomes, design: DesignMatrices, families, beta0,
                cfg: TuningConfig) -> np.ndarray:
    """Descending log-equispaced path from lam_max = ||X^T (Y - mu0)||_inf.

    beta0 must be the null-model (C = 0) control fit at the design's offset.
    A zero lam_max (controls explain everything) collapses to the single
    point {0}.
    """
    ops = as_family_ops(families)
    beta0 = np.asarray(beta0, dtype=float)
    mu0 = ops.b_prime(design.offset(y.q) + design.Z @ beta0)
    resid = y.y_observed - y.mask * mu0
    lam_max = float(np.max(np.abs(design.X.T @ resid)))
    if lam_max == 0.0:
        return np.array([0.0])
    lam_min = lam_max * cfg.lambda_min_ratio
    return np.geomspace(lam_max, lam_min, cfg.n_lambda)


def _fold_membership(y: ObservedOutcomes, n_folds: int, seed: int):
    """Assign observed cells to folds; no fold may exhaust a column's training set."""
    cells = np.argwhere(y.mask)
    col_counts = y.mask.sum(axis=0)
    rng = np.random.default_rng(seed)
    for _ in range(100):
        fold_of = rng.permutation(len(cells)) % n_folds
        held = np.zeros((n_folds, y.q), dtype=int)
        np.add.at(held, (fold_of, cells[:, 1]), 1)
        if ((col_counts[None, :] - held) > 0).all():
            return cells, fold_of
    raise ValueError("could not draw folds without emptying a column's training set")


def _held_out_nll(theta, y: ObservedOutcomes, held_mask, families, phi) -> float:
    held = ObservedOutcomes(y.values, held_mask)
    ops = as_family_ops(families)
    return neg_log_likelihood(theta, ops, held, phi) + dispersion_nll_terms(ops, held, phi)


def kfold_cv(y: ObservedOutcomes, design: DesignMatrices, families, init,
             penalty: PenaltyConfig, path, cfg: TuningConfig,
             epsilon: float = 1e-6, max_iter: int = 500,
             alpha_p: float = 10.0) -> CvCurve:
    """Cross-validate the unit-rank solver over a penalty path.

    Every fold sweeps the whole path warm-started from the previous solution;
    the validation score is the masked NLL of the held-out cells under the
    fold-trained natural parameters and dispersions.
    """
    path = np.asarray(path, dtype=float)
    if path.size == 0:
        raise ValueError("empty penalty path")
    ops = as_family_ops(families)
    cells, fold_of = _fold_membership(y, cfg.n_folds, cfg.seed)

    init_state = init if isinstance(init, SolverState) else SolverState(*init)

    def run_fold(f: int) -> np.ndarray:
        held_mask = np.zeros_like(y.mask)
        sel = cells[fold_of == f]
        held_mask[sel[:, 0], sel[:, 1]] = True
        y_train = ObservedOutcomes(y.values, y.mask & ~held_mask)
        # the null component is a fixed point of the solver, so a warm start
        # carries the component forward only while it is nonzero
        comp = init_state.component
        beta, phi = init_state.beta, init_state.phi
        scores = np.empty(path.size)
        for j, lam in enumerate(path):
            config = SolverConfig(penalty=penalty.with_lam(float(lam)),
                                  epsilon=epsilon, max_iter=max_iter, alpha_p=alpha_p)
            fit = fit_unit_rank(y_train, design, ops, SolverState(comp, beta, phi), config)
            if not fit.component.is_null:
                comp = fit.component
            beta, phi = fit.beta, fit.phi
            theta = _theta(design, fit.component, fit.beta, y.q)
            scores[j] = _held_out_nll(theta, y, held_mask, ops, fit.phi)
        return scores

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            per_fold = list(pool.map(run_fold, range(cfg.n_folds)))
    else:
        per_fold = [run_fold(f) for f in range(cfg.n_folds)]

    stacked = np.vstack(per_fold)
    mean = stacked.mean(axis=0)
    sd = stacked.std(axis=0, ddof=1)
    curve = CvCurve(path, mean, sd, 0)
    curve.chosen_index = select_one_sd(curve, use_one_sd=cfg.use_one_sd)
    return curve


def select_one_sd(curve: CvCurve, use_one_sd: bool = True) -> int:
    """Largest lambda whose mean NLL is within one SD of the minimum.

    Ties at the minimum resolve to the larger lambda; with use_one_sd False
    the plain minimiser is returned.
    """
    j_star = int(np.argmin(curve.mean_nll))
    if not use_one_sd:
        return j_star
    threshold = curve.mean_nll[j_star] + curve.sd_nll[j_star]
    return int(np.flatnonzero(curve.mean_nll <= threshold)[0])
