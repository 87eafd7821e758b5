"""Unpenalised reduced-rank warm start and design-orthogonal SVD retrieval.

Fits rank(C) <= r by projected gradient: each cycle takes a scaled gradient
step on the full coefficient matrix, truncates it to its top-r SVD, then
updates the controls and dispersions.  The fitted matrix is afterwards
decomposed into unit-rank components orthogonal in the X inner product,
which supply both warm starts and adaptive penalty weights for the
penalised solves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .families import ObservedOutcomes, as_family_ops, dispersion_nll_terms, neg_log_likelihood
from .model import DesignMatrices, UnitRankComponent
from .unit_rank import SolverError, phi_step, scaling_factors

# initial-estimate magnitudes below this exclude the coordinate from the
# adaptive penalty (|x|^-gamma would blow up)
WEIGHT_EXCLUSION_TOL = 1e-12


@dataclass(eq=False)
class ReducedRankFit:
    """Rank-r fit: components ordered by decreasing d, dense C, controls, dispersions."""

    components: list
    C: np.ndarray
    beta: np.ndarray
    phi: np.ndarray
    nll_trace: list
    iterations: int
    converged: bool


def svd_truncate(M, r: int) -> np.ndarray:
    """Best rank-r approximation of M (top-r SVD reconstruction)."""
    M = np.asarray(M, dtype=float)
    if not 1 <= r <= min(M.shape):
        raise ValueError(f"rank {r} out of range for shape {M.shape}")
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    return (U[:, :r] * s[:r]) @ Vt[:r]


def xsvd_decompose(C, X, r: int) -> list:
    """Split C into r unit-rank components orthogonal under the X inner product.

    From the SVD (1/sqrt(n)) X C = P S Q^T: v_k = q_k, d_k = S_kk and
    u_k = C q_k / S_kk, so (X U)^T (X U)/n = I, V^T V = I and the components
    sum back to C.  Singular values below 1e-10 * S_11 yield null components.
    """
    C = np.asarray(C, dtype=float)
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    p, q = C.shape
    _, s, Qt = np.linalg.svd((X @ C) / np.sqrt(n), full_matrices=False)
    cutoff = 1e-10 * s[0] if s.size and s[0] > 0 else 0.0
    components = []
    for k in range(r):
        if k >= s.size or s[k] <= cutoff:
            components.append(UnitRankComponent.null(p, q))
            continue
        v = Qt[k]
        u = C @ v / s[k]
        j = int(np.argmax(np.abs(v)))
        if v[j] < 0:
            u, v = -u, -v
        components.append(UnitRankComponent(float(s[k]), u, v))
    return components


def adaptive_weights(component: UnitRankComponent, gamma: float):
    """Penalty weights (w_d, w_u, w_v) = |initial estimate|^-gamma.

    For gamma > 0, magnitudes below WEIGHT_EXCLUSION_TOL map to np.inf
    (coordinate excluded); a null component therefore comes back fully
    excluded.  gamma = 0 gives unit weights with nothing excluded.
    """
    if gamma < 0:
        raise ValueError(f"gamma must be nonnegative, got {gamma}")

    def weights(x):
        ax = np.abs(np.asarray(x, dtype=float))
        if gamma == 0:
            return np.ones_like(ax)
        out = np.full_like(ax, np.inf)
        nz = ax >= WEIGHT_EXCLUSION_TOL
        out[nz] = ax[nz] ** (-gamma)
        return out

    if gamma == 0:
        w_d = 1.0
    else:
        w_d = float("inf") if abs(component.d) < WEIGHT_EXCLUSION_TOL else abs(component.d) ** (-gamma)
    return w_d, weights(component.u), weights(component.v)


def fit_reduced_rank(y: ObservedOutcomes, design: DesignMatrices, families, r: int,
                     epsilon: float = 1e-6, max_iter: int = 500,
                     alpha_p: float = 10.0) -> ReducedRankFit:
    """Rank-constrained unpenalised fit from C = 0, beta = 0, phi = 1.

    r = 0 fits the controls only (C pinned to zero), giving the null model.
    Stops when the relative Frobenius change of [C beta] drops below epsilon.
    """
    ops = as_family_ops(families)
    y.validate(ops.families)
    if r < 0 or r > min(design.p, y.q):
        raise ValueError(f"rank {r} out of range for p = {design.p}, q = {y.q}")
    if not epsilon > 0 or max_iter < 1:
        raise ValueError("epsilon must be positive and max_iter >= 1")

    n, q = design.n, y.q
    O = design.offset(q)
    C = np.zeros((design.p, q))
    beta = np.zeros((design.p_z, q))
    phi = np.ones(q)
    kap = ops.kappa0(alpha_p)
    x_nsq = design.x_norm_sq()
    z_nsq = design.z_norm_sq()
    ytil = y.y_observed

    def masked_nll(theta):
        return neg_log_likelihood(theta, ops, y, phi) + dispersion_nll_terms(ops, y, phi)

    trace = [masked_nll(O + design.Z @ beta + design.X @ C)]
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        s_c, _, s_beta = scaling_factors(design.X, design.Z, n, kap, phi, x_nsq, z_nsq)
        prev = np.concatenate([C.ravel(), beta.ravel()])

        if r > 0:
            theta = O + design.Z @ beta + design.X @ C
            resid = ytil - y.mask * ops.b_prime(theta)
            C = svd_truncate(C + design.X.T @ (resid / phi) / s_c, r)
            if not np.isfinite(C).all():
                raise SolverError("c-step", f"diverged at iteration {iterations}")

        theta = O + design.Z @ beta + design.X @ C
        resid = ytil - y.mask * ops.b_prime(theta)
        beta = beta + design.Z.T @ (resid / phi) / s_beta
        if not np.isfinite(beta).all():
            raise SolverError("beta-step", f"diverged at iteration {iterations}")

        theta = O + design.Z @ beta + design.X @ C
        phi = phi_step(theta, y, ops)
        trace.append(masked_nll(theta))

        cur = np.concatenate([C.ravel(), beta.ravel()])
        denom = max(float(np.linalg.norm(prev)), 1e-12)
        if float(np.linalg.norm(cur - prev)) / denom < epsilon:
            converged = True
            break

    components = xsvd_decompose(C, design.X, r) if r > 0 else []
    return ReducedRankFit(
        components=components,
        C=C,
        beta=beta,
        phi=phi,
        nll_trace=trace,
        iterations=iterations,
        converged=converged,
    )
