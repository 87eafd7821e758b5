"""Linear-predictor assembly and the unit-rank component representation.

The natural-parameter model is Theta = O + Z beta + X C, with the predictor
coefficient C decomposed into unit-rank components d * u v^T normalised so
that ||X u||_2 = sqrt(n) and ||v||_2 = 1.  The sign ambiguity of each
component is resolved by making the largest-magnitude entry of v positive.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def spectral_norm_sq(M, iters: int = 100, tol: float = 1e-10) -> float:
    """Squared spectral norm of M by power iteration on M^T M."""
    M = np.asarray(M, dtype=float)
    if not M.any():
        raise ValueError("spectral norm of an all-zero matrix requested")
    v = np.random.default_rng(0).standard_normal(M.shape[1])
    v /= np.linalg.norm(v)
    lam_prev = 0.0
    lam = 0.0
    for _ in range(iters):
        w = M.T @ (M @ v)
        lam = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            # start vector fell in the null space; restart deterministically
            v = np.ones(M.shape[1]) / np.sqrt(M.shape[1])
            continue
        v = w / nw
        if abs(lam - lam_prev) <= tol * max(abs(lam), 1.0):
            break
        lam_prev = lam
    return lam


@dataclass(eq=False)
class DesignMatrices:
    """Predictors X (n x p), controls Z (n x p_z) and a fixed offset O (n x q).

    Z holds the unpenalised columns (first column all ones when an intercept
    is wanted).  O defaults to zero and is the mechanism by which extraction
    drivers remove signal attributed to other components.
    """

    X: np.ndarray
    Z: np.ndarray
    O: np.ndarray | None = None
    _x_norm_sq: float | None = field(default=None, repr=False)
    _z_norm_sq: float | None = field(default=None, repr=False)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.Z = np.asarray(self.Z, dtype=float)
        if self.X.ndim != 2 or self.Z.ndim != 2:
            raise ValueError("X and Z must be 2-d")
        n, p = self.X.shape
        if n < 2 or p < 1:
            raise ValueError(f"need n >= 2 and p >= 1, got X shape {self.X.shape}")
        if self.Z.shape[0] != n or self.Z.shape[1] < 1:
            raise ValueError(f"Z shape {self.Z.shape} incompatible with X shape {self.X.shape}")
        if not np.isfinite(self.X).all() or not np.isfinite(self.Z).all():
            raise ValueError("X and Z must be finite")
        if self.O is not None:
            self.O = np.asarray(self.O, dtype=float)
            if self.O.ndim != 2 or self.O.shape[0] != n:
                raise ValueError(f"offset shape {self.O.shape} incompatible with n = {n}")
            if not np.isfinite(self.O).all():
                raise ValueError("offset must be finite")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def p_z(self) -> int:
        return self.Z.shape[1]

    def offset(self, q: int) -> np.ndarray:
        if self.O is None:
            return np.zeros((self.n, q))
        if self.O.shape[1] != q:
            raise ValueError(f"offset has {self.O.shape[1]} columns, expected {q}")
        return self.O

    def with_offset(self, O) -> "DesignMatrices":
        """Same X and Z (spectral-norm caches carried over) with a new offset."""
        out = DesignMatrices(self.X, self.Z, O)
        out._x_norm_sq = self._x_norm_sq
        out._z_norm_sq = self._z_norm_sq
        return out

    def x_norm_sq(self) -> float:
        if self._x_norm_sq is None:
            self._x_norm_sq = spectral_norm_sq(self.X)
        return self._x_norm_sq

    def z_norm_sq(self) -> float:
        if self._z_norm_sq is None:
            self._z_norm_sq = spectral_norm_sq(self.Z)
        return self._z_norm_sq


@dataclass(eq=False)
class UnitRankComponent:
    """One factor (d, u, v) with ||X u|| = sqrt(n), ||v|| = 1, d >= 0.

    The null component (d = 0, u = 0, v = 0) marks an extraction step that
    found no signal.
    """

    d: float
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.d = float(self.d)
        self.u = np.asarray(self.u, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.u.ndim != 1 or self.v.ndim != 1:
            raise ValueError("u and v must be vectors")
        if self.d < 0:
            raise ValueError(f"singular value must be nonnegative, got {self.d}")

    @classmethod
    def null(cls, p: int, q: int) -> "UnitRankComponent":
        return cls(0.0, np.zeros(p), np.zeros(q))

    @property
    def is_null(self) -> bool:
        return self.d == 0.0

    def coefficient(self) -> np.ndarray:
        """Dense p x q contribution d * u v^T."""
        return self.d * np.outer(self.u, self.v)


def compose_coefficient(components, shape=None) -> np.ndarray:
    """Sum of d_k u_k v_k^T over components; `shape` required when the list is empty."""
    components = list(components)
    if not components:
        if shape is None:
            raise ValueError("shape required to compose an empty component list")
        return np.zeros(shape)
    p, q = components[0].u.size, components[0].v.size
    C = np.zeros((p, q))
    for c in components:
        if c.u.size != p or c.v.size != q:
            raise ValueError("components have inconsistent shapes")
        if not c.is_null:
            C += c.coefficient()
    return C


def rescale_component(u_raw, v_raw, X) -> UnitRankComponent:
    """Normalise a raw (u, v) pair onto the constraint set.

    Returns (d, u, v) with u = u_raw * sqrt(n)/||X u_raw||, v = v_raw/||v_raw||
    and d = ||X u_raw|| * ||v_raw|| / sqrt(n), so d * u v^T reconstructs
    u_raw v_raw^T exactly.  A zero X u_raw or v_raw yields the null component.
    """
    u_raw = np.asarray(u_raw, dtype=float)
    v_raw = np.asarray(v_raw, dtype=float)
    X = np.asarray(X, dtype=float)
    if not np.isfinite(u_raw).all() or not np.isfinite(v_raw).all():
        raise ValueError("non-finite component input")
    norm_xu = float(np.linalg.norm(X @ u_raw))
    norm_v = float(np.linalg.norm(v_raw))
    if norm_xu == 0.0 or norm_v == 0.0:
        return UnitRankComponent.null(u_raw.size, v_raw.size)
    root_n = np.sqrt(X.shape[0])
    u = u_raw * (root_n / norm_xu)
    v = v_raw / norm_v
    d = norm_xu * norm_v / root_n
    j = int(np.argmax(np.abs(v)))  # ties resolved at the lowest index
    if v[j] < 0:
        u = -u
        v = -v
    return UnitRankComponent(d, u, v)


def natural_params(design: DesignMatrices, C, beta) -> np.ndarray:
    """Theta = O + Z beta + X C."""
    C = np.asarray(C, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if C.shape[0] != design.p:
        raise ValueError(f"C has {C.shape[0]} rows, expected p = {design.p}")
    if beta.shape != (design.p_z, C.shape[1]):
        raise ValueError(f"beta shape {beta.shape} != ({design.p_z}, {C.shape[1]})")
    return design.offset(C.shape[1]) + design.Z @ beta + design.X @ C


@dataclass(eq=False)
class FitResult:
    """Final extraction output: components, dense C, controls, dispersions."""

    components: list
    C: np.ndarray
    beta: np.ndarray
    phi: np.ndarray
    rank: int
    diagnostics: dict

    @classmethod
    def build(cls, components, beta, phi, p: int, q: int, diagnostics=None) -> "FitResult":
        components = list(components)
        C = compose_coefficient(components, shape=(p, q))
        rank = sum(1 for c in components if not c.is_null)
        return cls(
            components=components,
            C=C,
            beta=np.asarray(beta, dtype=float),
            phi=np.asarray(phi, dtype=float),
            rank=rank,
            diagnostics=dict(diagnostics or {}),
        )

    def to_dict(self) -> dict:
        return {
            "schema": 1,
            "p": int(self.C.shape[0]),
            "q": int(self.C.shape[1]),
            "components": [
                {"d": c.d, "u": c.u.tolist(), "v": c.v.tolist()} for c in self.components
            ],
            "beta": self.beta.tolist(),
            "phi": self.phi.tolist(),
            "rank": self.rank,
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FitResult":
        components = [
            UnitRankComponent(c["d"], np.asarray(c["u"]), np.asarray(c["v"]))
            for c in data["components"]
        ]
        beta = np.asarray(data["beta"], dtype=float)
        phi = np.asarray(data["phi"], dtype=float)
        p = int(data["p"]) if "p" in data else components[0].u.size
        q = int(data["q"]) if "q" in data else components[0].v.size
        return cls(
            components=components,
            C=compose_coefficient(components, shape=(p, q)),
            beta=beta,
            phi=phi,
            rank=int(data["rank"]),
            diagnostics=dict(data.get("diagnostics", {})),
        )
