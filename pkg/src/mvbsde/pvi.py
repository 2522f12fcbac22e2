"""Value function u(t, x, mu) of the decoupled forward-backward system.

The probabilistic route simulates the interacting system started from the law
``mu`` to freeze the law flow, then the decoupled system started from ``x``,
then solves the backward equation. The finite-difference route solves the
penalized PDE directly and is restricted to measure-independent 1D data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy.linalg import solve_banded

from .backward_solver import (
    Driver,
    PicardSettings,
    TerminalCondition,
    solve_bmmvsde,
    solve_penalized_backward,
)
from .errors import GridTooCoarse, ValidationError
from .forward_mvsde import (
    BrownianDriver,
    ForwardCoefficients,
    InitialLaw,
    TimeGrid,
    simulate_decoupled,
    simulate_mckean,
)
from .measures import EmpiricalMeasure
from .monotone_ops import MonotoneOperator, Zero, yosida_resolvent
from .regression import RegressionBasis


@dataclass
class Model:
    """Resolved object graph of one experiment."""

    coeffs: ForwardCoefficients
    initial: InitialLaw
    op: MonotoneOperator
    driver: Driver
    terminal: TerminalCondition
    basis: RegressionBasis
    grid: TimeGrid
    n_particles: int
    seed: int
    eps: float
    picard: PicardSettings = PicardSettings()
    threads: int = 1


@dataclass
class ValueEstimate:
    value: np.ndarray
    std_error: np.ndarray
    t: float
    snapped: bool
    diagnostics: dict[str, Any] = field(default_factory=dict)


def evaluate_u(model: Model, t: float, x, eps: float | None = None,
               initial: InitialLaw | None = None) -> ValueEstimate:
    """Monte Carlo estimate of ``u(t, x, law)`` with a standard error.

    ``t`` snaps to the nearest grid node. The initial law is a law description,
    never a raw sample, so the result can only depend on eta through its law.
    """
    eps = model.eps if eps is None else eps
    law = initial or model.initial
    grid = model.grid
    k0 = grid.snap(t)
    t_node = grid.time(k0)
    snapped = not math.isclose(t_node, t, rel_tol=0.0, abs_tol=1e-12)
    x = np.atleast_1d(np.asarray(x, dtype=float)).reshape(1, model.coeffs.m)
    if k0 == grid.n_steps:
        eta = law.sample(model.n_particles, model.seed)
        value = model.terminal(x, EmpiricalMeasure(eta))[0]
        return ValueEstimate(value, np.zeros_like(value), t_node, snapped)

    sub = TimeGrid(t_node, grid.T, grid.n_steps - k0)
    noise = BrownianDriver(model.seed, model.n_particles, model.coeffs.l, stream="forward")
    mv_paths, mv_flow = simulate_mckean(model.coeffs, sub, law, noise, model.seed, model.threads)
    theta = None
    diag: dict[str, Any] = {}
    if model.driver.measure_dependent:
        mv_sol = solve_bmmvsde(eps, mv_paths, model.op, model.driver, model.terminal, model.basis,
                               noise, model.picard, mv_flow, model.threads)
        theta = mv_sol.joint_flow(mv_paths)
        diag["picard_residuals"] = mv_sol.diagnostics["picard_residuals"]
    dec_paths = simulate_decoupled(model.coeffs, sub, x, mv_flow, noise, model.threads)
    sol = solve_penalized_backward(eps, dec_paths, model.op, model.driver, model.terminal, model.basis,
                                   noise, mv_flow, theta, model.threads)
    diag.update({k: sol.diagnostics[k] for k in ("sup_norm_y", "l2_norm_z", "k_total_variation")})
    return ValueEstimate(np.asarray(sol.diagnostics["y0_mean"]), np.asarray(sol.diagnostics["y0_stderr"]),
                         t_node, snapped, diag)


# Finite differences ---------------------------------------------------------


@dataclass(frozen=True)
class FDGrid:
    x_lo: float = -6.0
    x_hi: float = 6.0
    n_x: int = 401
    boundary: str = "dirichlet-from-terminal"

    def __post_init__(self):
        if self.n_x < 16:
            raise ValidationError("FD grid needs at least 16 nodes")
        if not self.x_hi > self.x_lo:
            raise ValidationError("need x_lo < x_hi")
        if self.boundary not in ("dirichlet-from-terminal", "one-sided-extrapolation"):
            raise ValidationError(f"unknown boundary {self.boundary!r}")

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_lo, self.x_hi, self.n_x)

    def refined(self) -> FDGrid:
        return FDGrid(self.x_lo, self.x_hi, 2 * self.n_x - 1, self.boundary)


@dataclass
class FDSolution:
    x: np.ndarray
    times: np.ndarray
    u: np.ndarray  # (n_t + 1, n_x)

    def value_at(self, t: float, x) -> np.ndarray:
        k = int(np.argmin(np.abs(self.times - t)))
        return np.interp(np.asarray(x, dtype=float), self.x, self.u[k])


def fd_solve_penalized_pde(eps: float, coeffs: ForwardCoefficients, driver: Driver,
                           op: MonotoneOperator, terminal: TerminalCondition, fd_grid: FDGrid,
                           time_grid: TimeGrid) -> FDSolution:
    """Backward Euler for ``u_t + b u_x + sigma^2 u_xx / 2 + H(t, x, u, sigma u_x) = A_eps(u)``.

    Each step solves the diffusion implicitly with the driver explicit, then
    applies the same closed-form resolvent step as the probabilistic solver.
    """
    if coeffs.m != 1 or coeffs.l != 1 or terminal.d != 1:
        raise ValidationError("the FD oracle is one-dimensional")
    if coeffs.measure_dependent or driver.measure_dependent or terminal.measure_dependent:
        raise ValidationError("the FD oracle needs measure-independent data")
    x = fd_grid.x
    dx = x[1] - x[0]
    nx = x.size
    h = time_grid.h
    dummy = EmpiricalMeasure.dirac([0.0])
    xcol = x[:, None]
    u = np.empty((time_grid.n_steps + 1, nx))
    u[-1] = terminal(xcol, dummy)[:, 0]
    theta = EmpiricalMeasure.joint(np.zeros((1, 1)), np.zeros((1, 1)), np.zeros((1, 1, 1)))
    for k in range(time_grid.n_steps - 1, -1, -1):
        t = time_grid.time(k)
        b = np.broadcast_to(np.asarray(coeffs.b(t, xcol, dummy), dtype=float).reshape(-1), (nx,))
        sig = np.broadcast_to(np.asarray(coeffs.sigma(t, xcol, dummy), dtype=float).reshape(-1), (nx,))
        un = u[k + 1]
        ux = np.gradient(un, dx)
        gen = driver(t, xcol, un[:, None], (sig * ux)[:, None, None], theta)[:, 0]
        rhs = un + h * gen
        diff = 0.5 * sig * sig / dx**2
        adv = 0.5 * b / dx
        lower = -h * (diff - adv)  # coefficient of u_{i-1}
        main = 1.0 + 2.0 * h * diff
        upper = -h * (diff + adv)  # coefficient of u_{i+1}
        ab = np.zeros((3, nx))
        ab[1] = main
        ab[0, 1:] = upper[:-1]
        ab[2, :-1] = lower[1:]
        if fd_grid.boundary == "dirichlet-from-terminal":
            ab[1, 0] = ab[1, -1] = 1.0
            ab[0, 1] = 0.0
            ab[2, -2] = 0.0
            ustar = solve_banded((1, 1), ab, rhs)
        else:
            # u_0 = 2 u_1 - u_2 and u_{n-1} = 2 u_{n-2} - u_{n-3}, substituted into rows 1 and n-2
            inner = ab[:, 1:-1].copy()
            inner[1, 0] += 2.0 * lower[1]
            inner[0, 1] -= lower[1]
            inner[1, -1] += 2.0 * upper[-2]
            inner[2, -2] -= upper[-2]
            core = solve_banded((1, 1), inner, rhs[1:-1])
            ustar = np.concatenate(([2 * core[0] - core[1]], core, [2 * core[-1] - core[-2]]))
        u[k] = ustar if isinstance(op, Zero) else yosida_resolvent(op, eps, h, ustar)
    return FDSolution(x, time_grid.times, u)


def fd_doubling_errors(eps: float, coeffs, driver, op, terminal, fd_grid: FDGrid, time_grid: TimeGrid,
                       t: float, xq, levels: int = 3) -> list[float]:
    """Sup-differences at ``xq`` between successive grid doublings (space and time)."""
    values = []
    g, tg = fd_grid, time_grid
    for _ in range(levels):
        values.append(fd_solve_penalized_pde(eps, coeffs, driver, op, terminal, g, tg).value_at(t, xq))
        g, tg = g.refined(), TimeGrid(tg.t0, tg.T, 2 * tg.n_steps)
    return [float(np.max(np.abs(a - b))) for a, b in zip(values, values[1:])]


def fd_check_resolution(eps, coeffs, driver, op, terminal, fd_grid, time_grid, t, xq, tol: float) -> float:
    """Raise GridTooCoarse when one doubling moves the answer by more than ``tol``."""
    err = fd_doubling_errors(eps, coeffs, driver, op, terminal, fd_grid, time_grid, t, xq, levels=2)[0]
    if err > tol:
        raise GridTooCoarse(f"doubling the FD grid moved u by {err:.3e} > {tol:.3e}")
    return err


def compare_probabilistic_vs_fd(model: Model, eps: float, xs: Sequence[float],
                                fd_grid: FDGrid = FDGrid(), t: float | None = None) -> dict[str, Any]:
    """Sup over query points of ``|u_prob - u_fd|`` on the same time grid."""
    t = model.grid.t0 if t is None else t
    fd = fd_solve_penalized_pde(eps, model.coeffs, model.driver, model.op, model.terminal, fd_grid, model.grid)
    xs = np.asarray(xs, dtype=float)
    u_fd = fd.value_at(t, xs)
    fd_refined = fd_solve_penalized_pde(eps, model.coeffs, model.driver, model.op, model.terminal,
                                        fd_grid.refined(), model.grid).value_at(t, xs)
    rows = []
    for xi, ufd in zip(xs, u_fd):
        est = evaluate_u(model, t, xi, eps)
        up, se = float(est.value[0]), float(est.std_error[0])
        rows.append({"x": float(xi), "u_prob": up, "stderr": se, "u_fd": float(ufd), "abs_diff": abs(up - ufd)})
    return {
        "eps": eps,
        "sup_error": max(r["abs_diff"] for r in rows),
        "statistical_budget": 3.0 * max(r["stderr"] for r in rows),
        "discretization_budget": float(np.max(np.abs(u_fd - fd_refined))),
        "table": rows,
    }
