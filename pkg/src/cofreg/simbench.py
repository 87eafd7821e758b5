"""Synthetic benchmark generators and recovery metrics.

The rank-3 coefficient truth uses overlapping sparse supports: the three
left factors occupy predictor positions 1-8, 6-14 and 12-20 with entries
drawn from {-1, +1}; single-type right factors occupy response positions
1-5, 6-10 and 11-15 with magnitudes uniform on [0.3, 1] and random signs.
Mixed-type right factors are built on half the columns and repeated across
both type blocks so every factor loads on both response types, with a few
entries copied (sign-flipped) between factors to overlap their supports.
Singular values are 6, 5, 4 scaled by 0.4 whenever poisson outcomes are
present.  The predictor matrix is gaussian with a rotation correction making
the latent factors X U / sqrt(n) exactly orthonormal.  Gaussian noise is
scaled so the weakest component's signal-to-noise ratio
||d_r X u_r v_r^T||_F / (sigma * sqrt(n * q_gaussian)) matches the requested
value.  Missing data is uniform over cells.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .families import BERNOULLI, GAUSSIAN, POISSON, FamilySpec, ObservedOutcomes, _sigmoid
from .model import FitResult, UnitRankComponent

_U_SUPPORTS = [(0, 8), (5, 14), (11, 20)]
_V_SUPPORTS_SINGLE = [(0, 5), (5, 10), (10, 15)]
_SINGULAR_VALUES = (6.0, 5.0, 4.0)


@dataclass
class SimSpec:
    """Scenario description: dimensions, family layout, signal and masking."""

    n: int
    p: int
    q_gaussian: int
    q_bernoulli: int
    q_poisson: int
    seed: int
    rank: int = 3
    snr: float = 0.5
    missing_fraction: float = 0.0
    scale: float | None = None

    def __post_init__(self):
        if self.n < 2 or self.p < 20:
            raise ValueError("need n >= 2 and p >= 20 (left supports reach position 20)")
        if min(self.q_gaussian, self.q_bernoulli, self.q_poisson) < 0 or self.q == 0:
            raise ValueError("response counts must be nonnegative with at least one column")
        if self.rank != 3:
            raise ValueError("coefficient recipes are defined for rank 3")
        if not 0.0 <= self.missing_fraction < 1.0:
            raise ValueError(f"missing_fraction must be in [0, 1), got {self.missing_fraction}")
        if self.seed < 0:
            raise ValueError("seed must be a nonnegative integer")
        if not self.snr > 0:
            raise ValueError(f"snr must be positive, got {self.snr}")
        kinds = self.kind_counts()
        if len(kinds) == 1:
            if self.q < 15:
                raise ValueError("single-type scenarios need q >= 15 (right supports reach 15)")
        elif len(kinds) == 2:
            a, b = (cnt for _, cnt in kinds)
            if a != b or self.q % 2 or self.q // 2 < 10:
                raise ValueError("mixed scenarios need two equal blocks with q/2 >= 10")
        else:
            raise ValueError("scenarios use one or two response types")

    @property
    def q(self) -> int:
        return self.q_gaussian + self.q_bernoulli + self.q_poisson

    def kind_counts(self):
        pairs = [(GAUSSIAN, self.q_gaussian), (BERNOULLI, self.q_bernoulli),
                 (POISSON, self.q_poisson)]
        return [(k, c) for k, c in pairs if c > 0]

    @property
    def mixed(self) -> bool:
        return len(self.kind_counts()) == 2

    def resolved_scale(self) -> float:
        if self.scale is not None:
            return float(self.scale)
        return 0.4 if self.q_poisson > 0 else 1.0

    def families(self) -> list:
        return [FamilySpec(kind) for kind, count in self.kind_counts() for _ in range(count)]

    def to_dict(self) -> dict:
        return {
            "schema": 1,
            "n": self.n, "p": self.p,
            "q_gaussian": self.q_gaussian, "q_bernoulli": self.q_bernoulli,
            "q_poisson": self.q_poisson,
            "seed": self.seed, "rank": self.rank, "snr": self.snr,
            "missing_fraction": self.missing_fraction,
            "scale": self.resolved_scale(),
        }


@dataclass(eq=False)
class SimTruth:
    """Ground truth of one replicate plus the generated data."""

    spec: SimSpec
    U: np.ndarray
    V: np.ndarray
    d: np.ndarray
    C: np.ndarray
    beta: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    theta: np.ndarray
    y: ObservedOutcomes

    @property
    def rank(self) -> int:
        return self.d.size

    def to_dict(self) -> dict:
        return {
            "schema": 1,
            "spec": self.spec.to_dict(),
            "families": [f.kind for f in self.spec.families()],
            "U": self.U.tolist(),
            "V": self.V.tolist(),
            "d": self.d.tolist(),
            "C": self.C.tolist(),
            "beta": self.beta.tolist(),
            "X": self.X.tolist(),
            "Z": self.Z.tolist(),
            "theta": self.theta.tolist(),
            "mask": self.y.mask.astype(int).tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict, values=None) -> "SimTruth":
        spec = SimSpec(
            n=data["spec"]["n"], p=data["spec"]["p"],
            q_gaussian=data["spec"]["q_gaussian"],
            q_bernoulli=data["spec"]["q_bernoulli"],
            q_poisson=data["spec"]["q_poisson"],
            seed=data["spec"]["seed"], rank=data["spec"]["rank"],
            snr=data["spec"]["snr"],
            missing_fraction=data["spec"]["missing_fraction"],
            scale=data["spec"]["scale"],
        )
        mask = np.asarray(data["mask"], dtype=bool)
        if values is None:
            values = np.zeros(mask.shape)
        return cls(
            spec=spec,
            U=np.asarray(data["U"], dtype=float),
            V=np.asarray(data["V"], dtype=float),
            d=np.asarray(data["d"], dtype=float),
            C=np.asarray(data["C"], dtype=float),
            beta=np.asarray(data["beta"], dtype=float),
            X=np.asarray(data["X"], dtype=float),
            Z=np.asarray(data["Z"], dtype=float),
            theta=np.asarray(data["theta"], dtype=float),
            y=ObservedOutcomes(np.asarray(values, dtype=float), mask),
        )


def _pm_one(rng, m: int) -> np.ndarray:
    return rng.choice(np.array([-1.0, 1.0]), size=m)


def _signed_unif(rng, m: int) -> np.ndarray:
    # uniform on [-1, -0.3] U [0.3, 1]
    return rng.uniform(0.3, 1.0, size=m) * _pm_one(rng, m)


def gen_coef(spec: SimSpec):
    """True factors (U, V, d, beta) for the scenario in `spec`."""
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0]))
    p, q = spec.p, spec.q

    U = np.zeros((p, 3))
    for k, (lo, hi) in enumerate(_U_SUPPORTS):
        U[lo:hi, k] = _pm_one(rng, hi - lo)
    U /= np.linalg.norm(U, axis=0)

    V = np.zeros((q, 3))
    if not spec.mixed:
        for k, (lo, hi) in enumerate(_V_SUPPORTS_SINGLE):
            V[lo:hi, k] = _signed_unif(rng, hi - lo)
    else:
        h = q // 2
        bar1 = np.zeros(h)
        bar1[0:5] = _pm_one(rng, 5)
        bar2 = np.zeros(h)
        bar2[3] = bar1[3]
        bar2[4] = -bar1[4]
        bar2[5:8] = _pm_one(rng, 3)
        bar3 = np.zeros(h)
        bar3[0] = bar1[0]
        bar3[1] = -bar1[1]
        bar3[6] = bar2[6]
        bar3[7] = -bar2[7]
        bar3[8:10] = _pm_one(rng, 2)
        for k, bar in enumerate([bar1, bar2, bar3]):
            V[:, k] = np.concatenate([bar, bar])
    V /= np.linalg.norm(V, axis=0)

    d = spec.resolved_scale() * np.array(_SINGULAR_VALUES)
    beta = np.full((1, q), 0.5)
    return U, V, d, beta


def gen_design(n: int, p: int, U, seed: int) -> np.ndarray:
    """Gaussian predictors corrected so (X U)^T (X U) / n is exactly the identity.

    With B = X0 U and M = (B^T B / n)^{-1/2}, the correction
    X = X0 + B (M - I)(U^T U)^{-1} U^T maps X U to B M, whose columns are
    orthonormal after the 1/sqrt(n) scaling.
    """
    U = np.asarray(U, dtype=float)
    r = U.shape[1]
    for child in np.random.SeedSequence(seed).spawn(10):
        rng = np.random.default_rng(child)
        X0 = rng.standard_normal((n, p))
        B = X0 @ U
        G = B.T @ B / n
        w, Q = np.linalg.eigh(G)
        if w.min() <= 1e-10 * w.max():
            continue  # singular Gram; redraw
        M = (Q / np.sqrt(w)) @ Q.T
        X = X0 + B @ (M - np.eye(r)) @ np.linalg.solve(U.T @ U, U.T)
        check = (X @ U).T @ (X @ U) / n
        if np.abs(check - np.eye(r)).max() < 1e-8:
            return X
    raise ValueError("could not generate a design with orthonormal latent factors")


def gen_responses(theta, families, snr: float, seed: int,
                  weak_signal_fro: float | None = None) -> ObservedOutcomes:
    """Sample outcomes at the true natural parameters; everything observed.

    Gaussian noise sd solves weak_signal_fro / (sigma * sqrt(n * q_gaussian))
    = snr, tying the ratio to the weakest true component.
    """
    theta = np.asarray(theta, dtype=float)
    families = list(families)
    rng = np.random.default_rng(seed)
    n = theta.shape[0]
    values = np.empty_like(theta)
    kinds = np.array([f.kind for f in families])
    gidx = np.flatnonzero(kinds == GAUSSIAN)
    bidx = np.flatnonzero(kinds == BERNOULLI)
    pidx = np.flatnonzero(kinds == POISSON)
    if gidx.size:
        if weak_signal_fro is None:
            raise ValueError("weak_signal_fro required when gaussian columns are present")
        sigma = weak_signal_fro / (snr * np.sqrt(n * gidx.size))
        values[:, gidx] = theta[:, gidx] + sigma * rng.standard_normal((n, gidx.size))
    if bidx.size:
        values[:, bidx] = rng.binomial(1, _sigmoid(theta[:, bidx])).astype(float)
    if pidx.size:
        values[:, pidx] = rng.poisson(np.exp(theta[:, pidx])).astype(float)
    return ObservedOutcomes(values, np.ones_like(values, dtype=bool))


def mask_missing(y: ObservedOutcomes, fraction: float, seed: int) -> ObservedOutcomes:
    """Mark floor(fraction * n * q) uniformly chosen cells as unobserved.

    Redraws (up to 100 times) if a column would lose all its observations.
    """
    if not 0.0 <= fraction < 1.0:
        raise ValueError(f"fraction must be in [0, 1), got {fraction}")
    if fraction == 0.0:
        return ObservedOutcomes(y.values, y.mask.copy())
    total = y.values.size
    count = int(np.floor(fraction * total))
    for child in np.random.SeedSequence(seed).spawn(100):
        rng = np.random.default_rng(child)
        cells = rng.choice(total, size=count, replace=False)
        mask = y.mask.copy()
        mask.flat[cells] = False
        if (mask.sum(axis=0) > 0).all():
            return ObservedOutcomes(y.values, mask)
    raise ValueError("could not mask cells without emptying a column")


def simulate(spec: SimSpec) -> SimTruth:
    """Full replicate: coefficients, design, responses, missingness."""
    U, V, d, beta = gen_coef(spec)
    X = gen_design(spec.n, spec.p, U, _child(spec.seed, 1))
    Z = np.ones((spec.n, 1))
    C = (U * d) @ V.T
    theta = Z @ beta + X @ C
    weak = d[-1] * float(np.linalg.norm(np.outer(X @ U[:, -1], V[:, -1])))
    y = gen_responses(theta, spec.families(), spec.snr, _child(spec.seed, 2),
                      weak_signal_fro=weak if spec.q_gaussian else None)
    y = mask_missing(y, spec.missing_fraction, _child(spec.seed, 3))
    return SimTruth(spec=spec, U=U, V=V, d=d, C=C, beta=beta, X=X, Z=Z, theta=theta, y=y)


def _child(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(tag)]).generate_state(1)[0])


def metrics(fit: FitResult, truth: SimTruth) -> dict:
    """Recovery metrics against the ground truth.

    ErC = ||C_hat - C*||_F / (p q); ErTheta = ||Theta_hat - Theta*||_F / (n q)
    on the full grid.  FPR/FNR (percent) compare the supports of the k-th
    estimated (u, v) pair with the k-th true pair, pooled over all u and v
    coordinates for k <= true rank; estimates missing a component count it
    as all-zero.  Rpct is the share of squared singular values past the true
    rank (zero when the rank is not over-estimated).
    """
    p, q = truth.C.shape
    n = truth.X.shape[0]
    er_c = float(np.linalg.norm(fit.C - truth.C)) / (p * q)
    theta_hat = truth.Z @ fit.beta + truth.X @ fit.C
    er_theta = float(np.linalg.norm(theta_hat - truth.theta)) / (n * q)

    fp = tn = fn = tp = 0
    for k in range(truth.rank):
        if k < len(fit.components):
            est_u = fit.components[k].u != 0.0
            est_v = fit.components[k].v != 0.0
        else:
            est_u = np.zeros(p, dtype=bool)
            est_v = np.zeros(q, dtype=bool)
        true_u = truth.U[:, k] != 0.0
        true_v = truth.V[:, k] != 0.0
        for est, true in ((est_u, true_u), (est_v, true_v)):
            fp += int(np.sum(est & ~true))
            tn += int(np.sum(~est & ~true))
            fn += int(np.sum(~est & true))
            tp += int(np.sum(est & true))
    fpr = 100.0 * fp / (fp + tn) if fp + tn else 0.0
    fnr = 100.0 * fn / (fn + tp) if fn + tp else 0.0

    d_sq = np.array([c.d**2 for c in fit.components])
    if fit.rank <= truth.rank or d_sq.size <= truth.rank:
        rpct = 0.0
    else:
        rpct = 100.0 * float(d_sq[truth.rank:].sum()) / float(d_sq.sum())

    return {
        "ErC": er_c,
        "ErTheta": er_theta,
        "FPR": fpr,
        "FNR": fnr,
        "Rpct": rpct,
        "rank": fit.rank,
    }
