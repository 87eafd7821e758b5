"""Exponential-dispersion families for mixed multivariate outcomes.

Each response column follows a distribution with density
exp{(y*theta - b(theta))/a(phi) + c(y; phi)} under the canonical link, so
b'(theta) is the conditional mean and b''(theta) the variance function.
Three families are supported: gaussian (a(phi) = sigma^2, estimated),
bernoulli and poisson (a(phi) fixed at 1).

Poisson cumulant evaluation clips theta at POISSON_THETA_CLIP before
exponentiation (exp(30) ~ 1e13) so b, b' and b'' stay finite; solvers bound
the poisson curvature by the empirical constant alpha_p instead of sup b''.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GAUSSIAN = "gaussian"
BERNOULLI = "bernoulli"
POISSON = "poisson"
KINDS = (GAUSSIAN, BERNOULLI, POISSON)

POISSON_THETA_CLIP = 30.0
DEFAULT_POISSON_BOUND = 10.0
GAUSSIAN_VAR_FLOOR = 1e-8


@dataclass(frozen=True)
class FamilySpec:
    """One response column: distribution tag plus dispersion a(phi)."""

    kind: str
    dispersion: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown family kind {self.kind!r}; expected one of {KINDS}")
        if not self.dispersion > 0:
            raise ValueError(f"dispersion must be positive, got {self.dispersion}")
        if self.kind != GAUSSIAN and self.dispersion != 1.0:
            raise ValueError(f"{self.kind} dispersion is fixed at 1.0")


def families_to_strings(families) -> list[str]:
    """Wire format: JSON array of family tags ordered by response column."""
    return [f.kind for f in families]


def families_from_strings(kinds) -> list[FamilySpec]:
    return [FamilySpec(str(k)) for k in kinds]


def _sigmoid(t):
    # exp(-|t|) <= 1 never overflows; both branches rebuilt from it
    e = np.exp(-np.abs(t))
    return np.where(t >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _b_gaussian(t):
    return 0.5 * np.square(t)


def _b_bernoulli(t):
    # log(1 + e^t), overflow-free for any representable t
    return np.log1p(np.exp(-np.abs(t))) + np.maximum(t, 0.0)


def _b_poisson(t):
    return np.exp(np.minimum(t, POISSON_THETA_CLIP))


def _bp_gaussian(t):
    return np.asarray(t, dtype=float) * 1.0


def _bpp_gaussian(t):
    return np.ones_like(np.asarray(t, dtype=float))


def _bpp_bernoulli(t):
    s = _sigmoid(t)
    return s * (1.0 - s)


_B = {GAUSSIAN: _b_gaussian, BERNOULLI: _b_bernoulli, POISSON: _b_poisson}
_BP = {GAUSSIAN: _bp_gaussian, BERNOULLI: _sigmoid, POISSON: _b_poisson}
_BPP = {GAUSSIAN: _bpp_gaussian, BERNOULLI: _bpp_bernoulli, POISSON: _b_poisson}
_CURV_BOUND = {GAUSSIAN: 1.0, BERNOULLI: 0.25}


def _family_eval(table, family: FamilySpec, theta):
    th = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(th)):
        raise ValueError("natural parameter must be finite")
    out = table[family.kind](th)
    return float(out) if np.ndim(theta) == 0 else out


def b_value(family: FamilySpec, theta):
    """Cumulant b(theta): gaussian theta^2/2, bernoulli log(1+e^theta), poisson e^theta."""
    return _family_eval(_B, family, theta)


def b_prime(family: FamilySpec, theta):
    """Mean function b'(theta) = E(y) at natural parameter theta."""
    return _family_eval(_BP, family, theta)


def b_second(family: FamilySpec, theta):
    """Variance function b''(theta); strictly positive."""
    return _family_eval(_BPP, family, theta)


def kappa0(families, alpha_p: float = DEFAULT_POISSON_BOUND) -> float:
    """Uniform curvature bound: max over columns of 1 (gaussian), 1/4 (bernoulli), alpha_p (poisson)."""
    families = list(families)
    if not families:
        raise ValueError("family list is empty")
    if not alpha_p > 0:
        raise ValueError(f"alpha_p must be positive, got {alpha_p}")
    return max(_CURV_BOUND.get(f.kind, float(alpha_p)) for f in families)


class FamilyOps:
    """Columnwise family evaluation over an n-by-q natural-parameter matrix.

    Precomputes the column index per family kind so mixed-type matrices are
    evaluated with one vectorised call per kind present.
    """

    def __init__(self, families):
        self.families = tuple(families)
        if not self.families:
            raise ValueError("family list is empty")
        kinds = [f.kind for f in self.families]
        self.q = len(kinds)
        self._single = kinds[0] if len(set(kinds)) == 1 else None
        arr = np.array(kinds)
        self._cols = {k: np.flatnonzero(arr == k) for k in KINDS if k in kinds}

    def columns(self, kind: str) -> np.ndarray:
        return self._cols.get(kind, np.empty(0, dtype=int))

    def _apply(self, table, theta: np.ndarray) -> np.ndarray:
        if self._single is not None:
            return table[self._single](theta)
        out = np.empty(theta.shape, dtype=float)
        for kind, idx in self._cols.items():
            out[:, idx] = table[kind](theta[:, idx])
        return out

    def b(self, theta):
        return self._apply(_B, theta)

    def b_prime(self, theta):
        return self._apply(_BP, theta)

    def b_second(self, theta):
        return self._apply(_BPP, theta)

    def kappa0(self, alpha_p: float = DEFAULT_POISSON_BOUND) -> float:
        return kappa0(self.families, alpha_p)


def as_family_ops(families) -> FamilyOps:
    return families if isinstance(families, FamilyOps) else FamilyOps(families)


@dataclass(eq=False)
class ObservedOutcomes:
    """Response matrix with an entrywise observation mask.

    Values at unobserved cells are never read; computations go through
    ``y_observed`` which zeroes them, so whatever sits there (NaN included)
    cannot leak into results.
    """

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.values.ndim != 2:
            raise ValueError(f"values must be 2-d, got shape {self.values.shape}")
        if self.mask.shape != self.values.shape:
            raise ValueError(f"mask shape {self.mask.shape} != values shape {self.values.shape}")
        self._y_obs = None
        self._col_counts = None
        self._col_sumsq = None

    @classmethod
    def from_values(cls, values) -> "ObservedOutcomes":
        """Treat non-finite cells (NaN from 'NA') as unobserved."""
        v = np.asarray(values, dtype=float)
        return cls(v, np.isfinite(v))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def q(self) -> int:
        return self.values.shape[1]

    @property
    def y_observed(self) -> np.ndarray:
        """Values with unobserved cells replaced by exact zeros."""
        if self._y_obs is None:
            self._y_obs = np.where(self.mask, self.values, 0.0)
        return self._y_obs

    def observed_per_column(self) -> np.ndarray:
        if self._col_counts is None:
            self._col_counts = self.mask.sum(axis=0)
        return self._col_counts

    def observed_sumsq_per_column(self) -> np.ndarray:
        """Per-column sum of squared observed values (solver hot path)."""
        if self._col_sumsq is None:
            yo = self.y_observed
            self._col_sumsq = np.einsum("ij,ij->j", yo, yo)
        return self._col_sumsq

    def validate(self, families) -> None:
        """Reject columns with no observations and values a family cannot emit."""
        families = list(families)
        if len(families) != self.q:
            raise ValueError(f"{len(families)} families for {self.q} response columns")
        counts = self.observed_per_column()
        if (counts == 0).any():
            k = int(np.argmin(counts))
            raise ValueError(f"response column {k} has no observed entries")
        bad = self.mask & ~np.isfinite(self.values)
        if bad.any():
            i, k = map(int, np.argwhere(bad)[0])
            raise ValueError(f"non-finite observed value at row {i}, column {k}")
        for k, fam in enumerate(families):
            if fam.kind == GAUSSIAN:
                continue
            col = self.values[self.mask[:, k], k]
            rows = np.flatnonzero(self.mask[:, k])
            if fam.kind == BERNOULLI:
                off = (col != 0.0) & (col != 1.0)
                if off.any():
                    i = int(rows[np.argmax(off)])
                    raise ValueError(
                        f"bernoulli column {k} has non-binary value {col[np.argmax(off)]} at row {i}"
                    )
            else:  # poisson
                off = (col < 0.0) | (col != np.floor(col))
                if off.any():
                    i = int(rows[np.argmax(off)])
                    raise ValueError(
                        f"poisson column {k} has non-count value {col[np.argmax(off)]} at row {i}"
                    )


def neg_log_likelihood(theta, families, y: ObservedOutcomes, phi=None) -> float:
    """Masked negative log-likelihood in trace form.

    Sums (b(theta) - y*theta)/a(phi) over observed cells only; terms constant
    in theta are dropped (see ``dispersion_nll_terms`` for the gaussian
    phi-dependent remainder).
    """
    theta = np.asarray(theta, dtype=float)
    ops = as_family_ops(families)
    if theta.shape != y.values.shape:
        raise ValueError(f"theta shape {theta.shape} != response shape {y.values.shape}")
    if ops.q != y.q:
        raise ValueError(f"{ops.q} families for {y.q} response columns")
    if phi is None:
        phi = np.array([f.dispersion for f in ops.families])
    inv = 1.0 / np.asarray(phi, dtype=float)
    val = float(np.sum((y.mask * ops.b(theta) - y.y_observed * theta) * inv))
    if not np.isfinite(val):
        raise FloatingPointError("non-finite log-likelihood; natural parameters too large")
    return val


def dispersion_nll_terms(families, y: ObservedOutcomes, phi) -> float:
    """Gaussian phi-dependent likelihood terms dropped by the trace form.

    Per observed gaussian cell: y^2/(2 phi_k) + log(2 pi phi_k)/2.  Required
    whenever likelihood values are compared across different dispersion
    estimates (dispersion updates, cross-validation scores).
    """
    ops = as_family_ops(families)
    gidx = ops.columns(GAUSSIAN)
    if gidx.size == 0:
        return 0.0
    phi = np.asarray(phi, dtype=float)[gidx]
    counts = y.observed_per_column()[gidx]
    sumsq = y.observed_sumsq_per_column()[gidx]
    return float(np.sum(0.5 * sumsq / phi + 0.5 * counts * np.log(2.0 * np.pi * phi)))
