"""Least-squares conditional expectation estimators on a finite basis."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations_with_replacement

import numpy as np

from ._parallel import chunk_slices, map_chunks
from .errors import RegressionRankDeficient, ValidationError

RANK_TOL = 1e-10


@dataclass(frozen=True)
class RegressionBasis:
    """Basis for ``E[target | x]``.

    ``polynomial``: all monomials of total degree <= ``degree`` in the
    standardized state. ``indicator``: one indicator per occupied cell of an
    ``n_bins``-per-coordinate grid over the sample range; with
    ``saturate=True`` one indicator per distinct state value instead.
    The normal equations are ``(B^T B / n + ridge I) c = B^T y / n``.
    """

    kind: str = "polynomial"
    degree: int = 2
    n_bins: int = 16
    saturate: bool = False
    ridge: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("polynomial", "indicator"):
            raise ValidationError(f"unknown basis kind {self.kind!r}")
        if self.ridge < 0:
            raise ValidationError("ridge must be nonnegative")
        if self.kind == "polynomial" and self.degree < 0:
            raise ValidationError("polynomial degree must be nonnegative")
        if self.kind == "indicator" and not self.saturate and self.n_bins < 1:
            raise ValidationError("n_bins must be positive")

    @classmethod
    def saturating(cls) -> RegressionBasis:
        """Exact conditional expectation on finitely many states (tree oracles)."""
        return cls(kind="indicator", saturate=True, ridge=0.0)

    def to_config(self) -> dict:
        return {"kind": self.kind, "degree": self.degree, "n_bins": self.n_bins,
                "saturate": self.saturate, "ridge": self.ridge}


def _monomials(m: int, degree: int) -> list[tuple[int, ...]]:
    out: list[tuple[int, ...]] = [()]
    for p in range(1, degree + 1):
        out.extend(combinations_with_replacement(range(m), p))
    return out


def _design(xs: np.ndarray, terms: list[tuple[int, ...]]) -> np.ndarray:
    cols = np.empty((xs.shape[0], len(terms)))
    for j, term in enumerate(terms):
        col = np.ones(xs.shape[0])
        for i in term:
            col = col * xs[:, i]
        cols[:, j] = col
    return cols


def _solve_normal(gram: np.ndarray, rhs: np.ndarray, ridge: float) -> np.ndarray:
    g = gram + ridge * np.eye(gram.shape[0])
    if np.linalg.eigvalsh(g).min() < RANK_TOL:
        raise RegressionRankDeficient("design is rank deficient; increase the ridge")
    return np.linalg.solve(g, rhs)


def _fit_polynomial(basis: RegressionBasis, x: np.ndarray, y: np.ndarray, threads: int) -> np.ndarray:
    n, m = x.shape
    center = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0.0] = 1.0
    xs = (x - center) / scale
    terms = _monomials(m, basis.degree)

    def partial(sl: slice):
        b = _design(xs[sl], terms)
        return np.einsum("ni,nj->ij", b, b), np.einsum("ni,nq->iq", b, y[sl])

    parts = map_chunks(partial, n, threads)
    gram = parts[0][0].copy()
    rhs = parts[0][1].copy()
    for g, r in parts[1:]:
        gram += g
        rhs += r
    coef = _solve_normal(gram / n, rhs / n, basis.ridge)

    out = np.empty_like(y)

    def predict(sl: slice) -> None:
        out[sl] = _design(xs[sl], terms) @ coef

    map_chunks(predict, n, threads)
    return out


def _cell_ids(basis: RegressionBasis, x: np.ndarray) -> np.ndarray:
    if basis.saturate:
        _, ids = np.unique(np.round(x, 9), axis=0, return_inverse=True)
        return ids.reshape(-1)
    lo, hi = x.min(axis=0), x.max(axis=0)
    width = np.where(hi > lo, (hi - lo) / basis.n_bins, 1.0)
    idx = np.clip(((x - lo) / width).astype(np.int64), 0, basis.n_bins - 1)
    flat = np.ravel_multi_index(idx.T, (basis.n_bins,) * x.shape[1])
    _, ids = np.unique(flat, return_inverse=True)
    return ids.reshape(-1)


def _fit_indicator(basis: RegressionBasis, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    n = x.shape[0]
    ids = _cell_ids(basis, x)
    n_cells = int(ids.max()) + 1
    counts = np.zeros(n_cells)
    sums = np.zeros((n_cells, y.shape[1]))
    for sl in chunk_slices(n):
        counts += np.bincount(ids[sl], minlength=n_cells)
        for q in range(y.shape[1]):
            sums[:, q] += np.bincount(ids[sl], weights=y[sl, q], minlength=n_cells)
    # one-hot Gram is diagonal: (counts/n + ridge) c = sums/n
    denom = counts / n + basis.ridge
    if denom.min() < RANK_TOL:
        raise RegressionRankDeficient("empty indicator cell")
    coef = (sums / n) / denom[:, None]
    return coef[ids]


def conditional_expectation(basis: RegressionBasis, x: np.ndarray, targets: np.ndarray,
                            threads: int = 1) -> np.ndarray:
    """Fitted values of the regression of each target column on ``basis(x)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(targets, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    squeeze = y.ndim == 1
    if squeeze:
        y = y[:, None]
    if basis.kind == "polynomial":
        out = _fit_polynomial(basis, x, y, threads)
    else:
        out = _fit_indicator(basis, x, y)
    return out[:, 0] if squeeze else out
