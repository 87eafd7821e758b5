"""Penalised unit-rank estimation by blockwise majorisation-minimisation.

At a fixed penalty level lam the solver minimises

    F(d, u, v, beta, phi) = masked NLL(Theta, phi)
                            + alpha*lam*||W o C||_1 + (1-alpha)*lam*||C||_F^2,

with C = d u v^T, Theta = O + Z beta + X C, subject to ||X u|| = sqrt(n) and
||v|| = 1.  A cycle updates the blocks (d, u), (d, v), beta and phi in that
order.  The u and v blocks work on the product variables d*u and d*v: a
gradient step scaled by 1/s, elementwise soft-thresholding against the
weighted l1 penalty, ridge shrinkage, then renormalisation back onto the
constraint set.  The scaling factors s_u = kappa0*||X||^2/phi_min,
s_v = n*kappa0/phi_min and s_beta = kappa0*||Z||^2/phi_min dominate the block
curvature, so every cycle decreases the objective; the trace is checked and
an increase beyond round-off aborts the run.

The objective tracked here includes the gaussian phi-dependent likelihood
terms (see families.dispersion_nll_terms): the dispersion update is the exact
per-column gaussian MLE, which is only monotone against the full likelihood.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .families import (
    GAUSSIAN,
    GAUSSIAN_VAR_FLOOR,
    ObservedOutcomes,
    as_family_ops,
    dispersion_nll_terms,
    neg_log_likelihood,
)
from .model import DesignMatrices, UnitRankComponent, rescale_component, spectral_norm_sq

# absolute slack added to the relative descent guard so exactly-zero
# objectives do not trip it on round-off
_DESCENT_ABS_SLACK = 1e-12
_DESCENT_REL_SLACK = 1e-8


class SolverError(RuntimeError):
    """Solver abort carrying the name of the offending step."""

    def __init__(self, step: str, message: str):
        super().__init__(f"{step}: {message}")
        self.step = step


@dataclass(eq=False)
class PenaltyConfig:
    """Adaptive elastic-net penalty: alpha*lam*||W o C||_1 + (1-alpha)*lam*||C||_F^2.

    Entrywise weights factor as w_d * w_u[i] * w_v[j]; an infinite weight
    marks the coordinate as excluded, pinning it to exactly zero in every
    step regardless of lam.
    """

    lam: float
    w_u: np.ndarray
    w_v: np.ndarray
    w_d: float = 1.0
    alpha: float = 0.95
    gamma: float = 1.0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lam must be nonnegative, got {self.lam}")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be nonnegative, got {self.gamma}")
        self.w_u = np.asarray(self.w_u, dtype=float)
        self.w_v = np.asarray(self.w_v, dtype=float)
        if (self.w_u <= 0).any() or (self.w_v <= 0).any() or self.w_d <= 0:
            raise ValueError("penalty weights must be positive (np.inf = excluded)")

    @classmethod
    def unit(cls, lam: float, p: int, q: int, alpha: float = 0.95) -> "PenaltyConfig":
        """Plain elastic net: all weights one, nothing excluded."""
        return cls(lam=lam, w_u=np.ones(p), w_v=np.ones(q), w_d=1.0, alpha=alpha, gamma=0.0)

    def with_lam(self, lam: float) -> "PenaltyConfig":
        return dataclasses.replace(self, lam=lam)

    @property
    def active_u(self) -> np.ndarray:
        return np.isfinite(self.w_u)

    @property
    def active_v(self) -> np.ndarray:
        return np.isfinite(self.w_v)

    @property
    def all_excluded(self) -> bool:
        return (
            not np.isfinite(self.w_d)
            or not self.active_u.any()
            or not self.active_v.any()
        )


@dataclass
class SolverConfig:
    """Solver controls for one penalised unit-rank problem."""

    penalty: PenaltyConfig
    epsilon: float = 1e-6
    max_iter: int = 500
    alpha_p: float = 10.0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")


@dataclass(eq=False)
class SolverState:
    """Current iterate: component (d, u, v), controls beta, dispersions phi."""

    component: UnitRankComponent
    beta: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        self.phi = np.asarray(self.phi, dtype=float)


@dataclass(eq=False)
class UnitRankFit:
    """Solver output; objective_trace is non-increasing up to round-off."""

    component: UnitRankComponent
    beta: np.ndarray
    phi: np.ndarray
    objective_trace: list
    iterations: int
    converged: bool


def soft_threshold(t, tau):
    """Elementwise sign(t) * max(|t| - tau, 0)."""
    t = np.asarray(t, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if tau.shape != t.shape:
        raise ValueError(f"threshold shape {tau.shape} != input shape {t.shape}")
    if (tau < 0).any():
        raise ValueError("thresholds must be nonnegative")
    return np.sign(t) * np.maximum(np.abs(t) - tau, 0.0)


def scaling_factors(X, Z, n, kappa0, phi, x_norm_sq=None, z_norm_sq=None):
    """Surrogate curvatures (s_u, s_v, s_beta) for the current dispersions."""
    phi_min = float(np.min(phi))
    if not phi_min > 0:
        raise ValueError(f"dispersions must be positive, got min {phi_min}")
    if not kappa0 > 0:
        raise ValueError(f"kappa0 must be positive, got {kappa0}")
    if x_norm_sq is None:
        x_norm_sq = spectral_norm_sq(X)
    if z_norm_sq is None:
        z_norm_sq = spectral_norm_sq(Z)
    s_u = kappa0 * x_norm_sq / phi_min
    s_v = n * kappa0 / phi_min
    s_beta = kappa0 * z_norm_sq / phi_min
    return s_u, s_v, s_beta


def _theta(design: DesignMatrices, comp: UnitRankComponent, beta, q: int) -> np.ndarray:
    th = design.offset(q) + design.Z @ beta
    if not comp.is_null:
        th = th + np.outer(design.X @ (comp.d * comp.u), comp.v)
    return th


def _residual(y: ObservedOutcomes, ops, theta) -> np.ndarray:
    return y.y_observed - y.mask * ops.b_prime(theta)


def u_step(y, design, families, state, penalty, s_u) -> UnitRankComponent:
    """Majorised update of the (d, u) block at fixed v, beta, phi."""
    ops = as_family_ops(families)
    comp = state.component
    theta = _theta(design, comp, state.beta, y.q)
    resid = _residual(y, ops, theta)
    grad = design.X.T @ ((resid / state.phi) @ comp.v)
    if not np.isfinite(grad).all():
        raise SolverError("u-step", "non-finite gradient")
    target = comp.d * comp.u + grad / s_u
    act_u, act_v = penalty.active_u, penalty.active_v
    tau = np.zeros_like(target)
    if penalty.lam > 0:
        sv = float(np.abs(comp.v[act_v]) @ penalty.w_v[act_v])
        tau[act_u] = penalty.alpha * penalty.lam * sv * penalty.w_d * penalty.w_u[act_u] / s_u
    a = soft_threshold(target, tau)
    a[~act_u] = 0.0
    a /= 1.0 + 2.0 * penalty.lam * (1.0 - penalty.alpha) * float(comp.v @ comp.v) / s_u
    return rescale_component(a, comp.v, design.X)


def v_step(y, design, families, state, penalty, s_v) -> UnitRankComponent:
    """Majorised update of the (d, v) block at fixed u, beta, phi."""
    ops = as_family_ops(families)
    comp = state.component
    theta = _theta(design, comp, state.beta, y.q)
    resid = _residual(y, ops, theta)
    grad = (resid / state.phi).T @ (design.X @ comp.u)
    if not np.isfinite(grad).all():
        raise SolverError("v-step", "non-finite gradient")
    target = comp.d * comp.v + grad / s_v
    act_u, act_v = penalty.active_u, penalty.active_v
    tau = np.zeros_like(target)
    if penalty.lam > 0:
        su = float(np.abs(comp.u[act_u]) @ penalty.w_u[act_u])
        tau[act_v] = penalty.alpha * penalty.lam * su * penalty.w_d * penalty.w_v[act_v] / s_v
    b = soft_threshold(target, tau)
    b[~act_v] = 0.0
    b /= 1.0 + 2.0 * penalty.lam * (1.0 - penalty.alpha) * float(comp.u @ comp.u) / s_v
    return rescale_component(comp.u, b, design.X)


def beta_step(y, design, families, state, s_beta) -> np.ndarray:
    """Unpenalised gradient step for the control coefficients."""
    ops = as_family_ops(families)
    theta = _theta(design, state.component, state.beta, y.q)
    resid = _residual(y, ops, theta)
    beta = state.beta + design.Z.T @ (resid / state.phi) / s_beta
    if not np.isfinite(beta).all():
        raise SolverError("beta-step", "non-finite update")
    return beta


def phi_step(theta, y: ObservedOutcomes, families) -> np.ndarray:
    """Dispersion update: exact per-column gaussian MLE, others stay 1."""
    ops = as_family_ops(families)
    theta = np.asarray(theta, dtype=float)
    phi = np.ones(y.q)
    gidx = ops.columns(GAUSSIAN)
    if gidx.size:
        if gidx.size == y.q:
            resid = y.y_observed - y.mask * theta
        else:
            resid = y.y_observed[:, gidx] - y.mask[:, gidx] * theta[:, gidx]
        sumsq = np.einsum("ij,ij->j", resid, resid)
        counts = y.observed_per_column()[gidx]
        phi[gidx] = np.maximum(sumsq / counts, GAUSSIAN_VAR_FLOOR)
    return phi


def penalty_value(comp: UnitRankComponent, penalty: PenaltyConfig) -> float:
    """rho(C) = alpha*lam*||W o C||_1 + (1-alpha)*lam*||C||_F^2 for C = d u v^T."""
    if comp.is_null or penalty.lam == 0:
        return 0.0
    act_u, act_v = penalty.active_u, penalty.active_v
    l1 = (
        penalty.w_d
        * float(np.abs(comp.u[act_u]) @ penalty.w_u[act_u])
        * float(np.abs(comp.v[act_v]) @ penalty.w_v[act_v])
        * comp.d
    )
    fro_sq = comp.d**2 * float(comp.u @ comp.u) * float(comp.v @ comp.v)
    return penalty.alpha * penalty.lam * l1 + (1.0 - penalty.alpha) * penalty.lam * fro_sq


def objective_value(y, design, families, state, penalty) -> float:
    """Penalised masked NLL, including the gaussian dispersion terms."""
    ops = as_family_ops(families)
    theta = _theta(design, state.component, state.beta, y.q)
    nll = neg_log_likelihood(theta, ops, y, state.phi) + dispersion_nll_terms(ops, y, state.phi)
    return nll + penalty_value(state.component, penalty)


def _as_state(init, p: int, q: int, p_z: int) -> SolverState:
    if isinstance(init, SolverState):
        comp, beta, phi = init.component, init.beta, init.phi
    else:
        comp, beta, phi = init
    if comp is None:
        comp = UnitRankComponent.null(p, q)
    if beta is None:
        beta = np.zeros((p_z, q))
    if phi is None:
        phi = np.ones(q)
    state = SolverState(UnitRankComponent(comp.d, comp.u.copy(), comp.v.copy()),
                        np.array(beta, dtype=float), np.array(phi, dtype=float))
    if state.component.u.size != p or state.component.v.size != q:
        raise ValueError("initial component shape does not match the design")
    if state.beta.shape != (p_z, q):
        raise ValueError(f"initial beta shape {state.beta.shape} != ({p_z}, {q})")
    return state


def _stacked(state: SolverState) -> np.ndarray:
    comp = state.component
    return np.concatenate([comp.d * comp.u, comp.d * comp.v, state.beta.ravel()])


def fit_unit_rank(y: ObservedOutcomes, design: DesignMatrices, families, init,
                  config: SolverConfig) -> UnitRankFit:
    """Run the blockwise solver to convergence at a fixed penalty level.

    init is a SolverState or a (component, beta, phi) triple; the component
    must already satisfy the normalisation constraints (or be null).  Stops
    when the relative l2 change of the stacked parameters (d*u, d*v, beta)
    drops below config.epsilon, or after config.max_iter cycles.
    """
    ops = as_family_ops(families)
    y.validate(ops.families)
    penalty = config.penalty
    if penalty.w_u.size != design.p or penalty.w_v.size != y.q:
        raise ValueError("penalty weight lengths do not match the problem")
    state = _as_state(init, design.p, y.q, design.p_z)
    if penalty.all_excluded and not state.component.is_null:
        state.component = UnitRankComponent.null(design.p, y.q)
    kap = ops.kappa0(config.alpha_p)
    x_nsq = design.x_norm_sq()
    z_nsq = design.z_norm_sq()

    trace = [objective_value(y, design, ops, state, penalty)]
    params_prev = _stacked(state)
    converged = False
    iterations = 0
    for iterations in range(1, config.max_iter + 1):
        s_u, s_v, s_beta = scaling_factors(
            design.X, design.Z, design.n, kap, state.phi, x_nsq, z_nsq
        )
        if not penalty.all_excluded:
            state.component = u_step(y, design, ops, state, penalty, s_u)
            state.component = v_step(y, design, ops, state, penalty, s_v)
        state.beta = beta_step(y, design, ops, state, s_beta)
        theta = _theta(design, state.component, state.beta, y.q)
        state.phi = phi_step(theta, y, ops)

        obj = objective_value(y, design, ops, state, penalty)
        if not np.isfinite(obj):
            raise SolverError("objective", f"non-finite objective at iteration {iterations}")
        prev = trace[-1]
        if obj > prev + _DESCENT_REL_SLACK * abs(prev) + _DESCENT_ABS_SLACK:
            raise SolverError(
                "objective",
                f"objective increased at iteration {iterations}: {prev!r} -> {obj!r}",
            )
        trace.append(obj)

        params = _stacked(state)
        denom = max(float(np.linalg.norm(params_prev)), 1e-12)
        rel = float(np.linalg.norm(params - params_prev)) / denom
        params_prev = params
        if rel < config.epsilon:
            converged = True
            break

    return UnitRankFit(
        component=state.component,
        beta=state.beta,
        phi=state.phi,
        objective_trace=trace,
        iterations=iterations,
        converged=converged,
    )
