"""Empirical probability measures and the Wasserstein-2 distance."""

from __future__ import annotations

import csv
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import CountMismatch, DimensionMismatch, NonUniformWeights, TooLarge

WEIGHT_TOL = 1e-12
EXACT_MAX_PARTICLES = 64


class EmpiricalMeasure:
    """A weighted particle cloud ``sum_i w_i delta_{x_i}`` on R^k.

    ``points`` has shape (n, k). Uniform weights are the default and are stored
    as ``None`` so that the common case costs nothing.

    For joint laws of ``(X, Y, Z)`` the points are the concatenation
    ``[x | y | z.ravel(row-major)]`` and ``layout`` records ``(m, d, l)``.
    """

    def __init__(self, points, weights=None, layout: tuple[int, int, int] | None = None):
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise DimensionMismatch(f"points must be a nonempty (n, k) array, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("measure support contains non-finite points")
        if weights is not None:
            w = np.asarray(weights, dtype=float)
            if w.shape != (pts.shape[0],):
                raise CountMismatch("one weight per point is required")
            if np.any(w < 0) or abs(w.sum() - 1.0) > WEIGHT_TOL:
                raise ValueError("weights must be nonnegative and sum to 1")
            if np.allclose(w, 1.0 / w.size, rtol=0, atol=1e-15):
                w = None
            weights = w
        self.points = pts
        self._weights = weights
        self.layout = layout

    @classmethod
    def dirac(cls, point) -> EmpiricalMeasure:
        return cls(np.atleast_1d(np.asarray(point, dtype=float))[None, :])

    @classmethod
    def joint(cls, x, y, z) -> EmpiricalMeasure:
        """Index-paired joint law of per-particle (x, y, z); z of shape (n, d, l)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        z = np.asarray(z, dtype=float)
        n = x.shape[0]
        m, d = x.reshape(n, -1).shape[1], y.reshape(n, -1).shape[1]
        l = z.shape[-1] if z.ndim == 3 else 1
        pts = np.hstack([x.reshape(n, -1), y.reshape(n, -1), z.reshape(n, -1)])
        return cls(pts, layout=(m, d, l))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def uniform(self) -> bool:
        return self._weights is None

    @property
    def weights(self) -> np.ndarray:
        if self._weights is None:
            return np.full(self.n, 1.0 / self.n)
        return self._weights

    @cached_property
    def mean(self) -> np.ndarray:
        if self._weights is None:
            return self.points.mean(axis=0)
        return self._weights @ self.points

    def _part(self, start: int, stop: int) -> np.ndarray:
        if self.layout is None:
            raise ValueError("measure has no joint layout")
        return self.points[:, start:stop]

    def x_part(self) -> np.ndarray:
        m, _, _ = self.layout
        return self._part(0, m)

    def y_part(self) -> np.ndarray:
        m, d, _ = self.layout
        return self._part(m, m + d)

    def z_part(self) -> np.ndarray:
        m, d, l = self.layout
        return self._part(m + d, m + d + d * l).reshape(self.n, d, l)

    def yz(self) -> EmpiricalMeasure:
        """Marginal on the (Y, Z) coordinates."""
        m, d, l = self.layout
        return EmpiricalMeasure(self.points[:, m:], self._weights)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow([f"x{j}" for j in range(self.dim)] + ["weight"])
            for row, w in zip(self.points, self.weights):
                writer.writerow([repr(float(v)) for v in row] + [repr(float(w))])

    @classmethod
    def from_csv(cls, path: str | Path) -> EmpiricalMeasure:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, :-1], data[:, -1])

    def __repr__(self) -> str:
        return f"EmpiricalMeasure(n={self.n}, dim={self.dim}, uniform={self.uniform})"


def second_moment_norm(mu: EmpiricalMeasure) -> float:
    sq = np.einsum("ij,ij->i", mu.points, mu.points)
    return float(np.sqrt(mu.weights @ sq))


def wasserstein2_1d(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """Exact W2 between two weighted 1D measures via the quantile coupling.

    Both quantile functions are step functions; on the merged grid of their
    cumulative-weight breakpoints they are constant, so the integral of the
    squared difference is a finite sum.
    """
    if mu.dim != 1 or nu.dim != 1:
        raise DimensionMismatch("wasserstein2_1d needs 1-dimensional measures")
    xa = mu.points[:, 0]
    xb = nu.points[:, 0]
    ia, ib = np.argsort(xa, kind="stable"), np.argsort(xb, kind="stable")
    xa, wa = xa[ia], mu.weights[ia]
    xb, wb = xb[ib], nu.weights[ib]
    ca, cb = np.cumsum(wa), np.cumsum(wb)
    ca[-1] = cb[-1] = 1.0
    grid = np.union1d(ca, cb)
    du = np.diff(np.concatenate(([0.0], grid)))
    # quantile at the midpoint of every merged cell
    mids = grid - 0.5 * du
    qa = xa[np.minimum(np.searchsorted(ca, mids, side="left"), xa.size - 1)]
    qb = xb[np.minimum(np.searchsorted(cb, mids, side="left"), xb.size - 1)]
    return float(np.sqrt(max(np.sum(du * (qa - qb) ** 2), 0.0)))


def wasserstein2_exact(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """Exact W2 between equal-size uniform clouds by optimal assignment."""
    if mu.dim != nu.dim:
        raise DimensionMismatch("measures live in different dimensions")
    if mu.n != nu.n:
        raise CountMismatch("exact assignment needs equal particle counts")
    if mu.n > EXACT_MAX_PARTICLES:
        raise TooLarge(f"n = {mu.n} exceeds {EXACT_MAX_PARTICLES}")
    if not (mu.uniform and nu.uniform):
        raise NonUniformWeights("exact assignment needs uniform weights")
    diff = mu.points[:, None, :] - nu.points[None, :, :]
    cost = np.einsum("ijk,ijk->ij", diff, diff)
    rows, cols = linear_sum_assignment(cost)
    return float(np.sqrt(cost[rows, cols].sum() / mu.n))


def wasserstein2_upper(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """Cost of the index-paired (synchronous) coupling; an upper bound on W2."""
    if mu.n != nu.n:
        raise CountMismatch(f"paired clouds need equal counts, got {mu.n} and {nu.n}")
    if mu.dim != nu.dim:
        raise DimensionMismatch("measures live in different dimensions")
    diff = mu.points - nu.points
    sq = np.einsum("ij,ij->i", diff, diff)
    return float(np.sqrt(mu.weights @ sq))
