"""Exhaustive backward induction on the binary Rademacher tree.

Conditional expectations are exact child averages, so this is the equality
oracle for the regression solver. Only the implicit monotone step is shared
with the main solver.
"""

from __future__ import annotations

import math

import numpy as np

from .backward_solver import BackwardSolution, Driver, PicardSettings, TerminalCondition
from .errors import DepthTooLarge, ValidationError
from .forward_mvsde import ForwardCoefficients, TimeGrid
from .measures import EmpiricalMeasure
from .monotone_ops import MonotoneOperator, Zero, yosida_resolvent

MAX_DEPTH = 12


def tree_forward(coeffs: ForwardCoefficients, grid: TimeGrid, x0: float) -> list[np.ndarray]:
    """Node states per level; level k holds 2^k nodes in lexicographic sign order."""
    if coeffs.m != 1 or coeffs.l != 1:
        raise ValidationError("the tree oracle is one-dimensional")
    h = grid.h
    sq = math.sqrt(h)
    levels = [np.array([[float(x0)]])]
    for k in range(grid.n_steps):
        x = levels[-1]
        mu = EmpiricalMeasure(x)
        t = grid.time(k)
        drift = np.asarray(coeffs.b(t, x, mu), dtype=float).reshape(-1, 1)
        sig = np.asarray(np.broadcast_to(coeffs.sigma(t, x, mu), (x.shape[0], 1, 1)))[:, :, 0]
        nxt = np.empty((2 * x.shape[0], 1))
        nxt[0::2] = x + drift * h + sig * sq
        nxt[1::2] = x + drift * h + sig * (-sq)
        levels.append(nxt)
    return levels


def _sweep(levels, grid, op, eps, driver, terminal, thetas):
    """Backward pass over the tree; ``thetas[k]`` is the law fed to the driver at level k."""
    h = grid.h
    sq = math.sqrt(h)
    n_steps = grid.n_steps
    ys: list[np.ndarray] = [None] * (n_steps + 1)
    zs: list[np.ndarray] = [None] * n_steps
    dks: list[np.ndarray] = [None] * n_steps
    leaves = levels[-1]
    ys[-1] = np.asarray(terminal(leaves, EmpiricalMeasure(leaves)), dtype=float).reshape(-1, 1)
    for k in range(n_steps - 1, -1, -1):
        up, down = ys[k + 1][0::2], ys[k + 1][1::2]
        cond_mean = 0.5 * (up + down)
        z = (0.5 * (up * sq + down * (-sq)) / h)[:, :, None]
        theta = thetas[k] if driver.measure_dependent else None
        p = cond_mean + h * driver(grid.time(k), levels[k], cond_mean, z, theta)
        y = p if isinstance(op, Zero) else yosida_resolvent(op, eps, h, p)
        ys[k], zs[k], dks[k] = y, z, p - y
    return ys, zs, dks


def _expand(per_level: list[np.ndarray], depth: int, n_levels: int) -> np.ndarray:
    """Node values to particle paths: particle i sits on node i >> (depth - k) at level k."""
    n = 2 ** depth
    idx = np.arange(n)
    return np.stack([per_level[k][idx >> (depth - k)] for k in range(n_levels)], axis=1)


def tree_oracle(depth: int, x0: float, t0: float, T: float, coeffs: ForwardCoefficients,
                op: MonotoneOperator, driver: Driver, terminal: TerminalCondition, eps: float,
                picard: PicardSettings = PicardSettings(max_iters=50, tol=1e-13)) -> BackwardSolution:
    """Exact penalized solution on the depth-``depth`` tree, laid out per particle
    in the same order as :class:`RademacherTreeDriver`."""
    if depth > MAX_DEPTH:
        raise DepthTooLarge(f"depth {depth} > {MAX_DEPTH}")
    if depth < 1:
        raise ValidationError("depth must be at least 1")
    grid = TimeGrid(t0, T, depth)
    levels = tree_forward(coeffs, grid, x0)
    residuals: list[float] = []
    if driver.measure_dependent:
        delta = EmpiricalMeasure.joint(np.zeros((1, 1)), np.zeros((1, 1)), np.zeros((1, 1, 1)))
        ys, zs, _ = _sweep(levels, grid, Zero(), eps, driver, terminal, [delta] * depth)
        for _ in range(picard.max_iters):
            thetas = [EmpiricalMeasure.joint(levels[k], ys[k], zs[k]) for k in range(depth)]
            new_ys, new_zs, dks = _sweep(levels, grid, op, eps, driver, terminal, thetas)
            # every node at a level carries weight 2^-k
            r = max(
                math.sqrt(np.mean((new_ys[k] - ys[k]) ** 2)
                          + (np.mean((new_zs[k] - zs[k]) ** 2) if k < depth else 0.0))
                for k in range(depth + 1)
            )
            residuals.append(r)
            ys, zs = new_ys, new_zs
            if r <= picard.tol:
                break
    else:
        ys, zs, dks = _sweep(levels, grid, op, eps, driver, terminal, None)

    y = _expand(ys, depth, depth + 1)
    z = _expand(zs, depth, depth)
    dk = _expand(dks, depth, depth)
    k = np.zeros_like(y)
    np.cumsum(dk, axis=1, out=k[:, 1:, :])
    diag = {"picard_iters": len(residuals), "picard_residuals": residuals,
            "x_levels": [lv[:, 0].tolist() for lv in levels]}
    return BackwardSolution(y, z, k, float(eps), grid, diag)
