"""Backward induction for the penalized mean-field backward equation.

Sign convention: ``dY = [A_eps(Y) - H(t, X, Y, Z, theta)] dt + Z dW`` with
``Y_T = Phi(X_T, mu_T)``. One step of the scheme reads

    Z_k  = E[Y_{k+1} dW_k^T | X_k] / h
    P_k  = E[Y_{k+1} | X_k] + h H(t_k, X_k, E[Y_{k+1} | X_k], Z_k, theta_k)
    Y_k  solves  Y_k + h A_eps(Y_k) = P_k        (closed form, no inner loop)
    dK_k = P_k - Y_k = h A_eps(Y_k)

The driver is explicit; the stiff 1/eps-Lipschitz term is implicit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    MissingLawFlow,
    NonFinite,
    PicardDiverged,
    TooLarge,
    ValidationError,
)
from .forward_mvsde import LawFlow, PathBundle, TimeGrid
from .measures import EmpiricalMeasure, wasserstein2_exact, wasserstein2_upper
from .monotone_ops import (
    GraphPoint,
    MonotoneOperator,
    Zero,
    project_domain_closure,
    require_interior,
    yosida_resolvent,
)
from .regression import RegressionBasis, conditional_expectation


@dataclass
class Driver:
    """``fn(t, x, y, z, theta) -> (n, d)``; ``theta`` is the joint law of (X, Y, Z) or None."""

    fn: Callable
    d: int = 1
    lipschitz_hint: float | None = None
    measure_dependent: bool = False
    config: dict[str, Any] = field(default_factory=dict)

    def __call__(self, t, x, y, z, theta):
        return np.asarray(self.fn(t, x, y, z, theta), dtype=float).reshape(y.shape)

    def spot_check(self, m: int = 1, l: int = 1) -> None:
        if self.measure_dependent:
            return
        x = np.linspace(-1.0, 1.0, 4)[:, None] * np.ones((1, m))
        y = np.linspace(-0.5, 2.0, 4)[:, None] * np.ones((1, self.d))
        z = np.linspace(0.3, -1.0, 4)[:, None, None] * np.ones((1, self.d, l))
        a = self(0.5, x, y, z, dirac_joint(m, self.d, l))
        b = self(0.5, x, y, z, EmpiricalMeasure.joint(x * 3 + 1, y - 2, z * 5))
        if not np.array_equal(a, b):
            raise ValidationError("driver flagged measure-independent depends on the law")


@dataclass
class TerminalCondition:
    """``phi(x, mu) -> (n, d)`` valued in the closure of the operator domain."""

    phi: Callable
    d: int = 1
    measure_dependent: bool = False
    config: dict[str, Any] = field(default_factory=dict)

    def __call__(self, x, mu):
        n = np.asarray(x).shape[0]
        return np.asarray(self.phi(x, mu), dtype=float).reshape(n, self.d)

    def check_domain(self, op: MonotoneOperator, x: np.ndarray, mu, tol: float = 1e-12) -> None:
        v = self(x, mu)
        gap = np.abs(project_domain_closure(op, v) - v).max()
        if gap > tol:
            raise ValidationError(
                f"terminal values leave the closed domain of {op.kind} (distance {gap:.3e})"
            )


@dataclass(frozen=True)
class PenalizationSchedule:
    eps_list: tuple[float, ...] = (0.2, 0.1, 0.05, 0.025)

    def __post_init__(self):
        eps = tuple(float(e) for e in self.eps_list)
        if not eps:
            raise ValidationError("penalization schedule is empty")
        if any(e <= 0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValidationError("schedule must be strictly decreasing and positive")
        object.__setattr__(self, "eps_list", eps)


@dataclass(frozen=True)
class PicardSettings:
    max_iters: int = 20
    tol: float = 1e-10
    metric: str = "synchronous"

    def __post_init__(self):
        if self.metric not in ("synchronous", "exact"):
            raise ValidationError(f"unknown Picard metric {self.metric!r}")


@dataclass
class BackwardSolution:
    """Per-particle discrete paths.

    ``y``: (n, n_steps+1, d); ``z``: (n, n_steps, d, l); ``k``: (n, n_steps+1, d)
    with ``k[:, j] = sum_{i<j} dK_i`` so ``k[:, 0] = 0`` and ``k[:, -1] = K_T``.
    """

    y: np.ndarray
    z: np.ndarray
    k: np.ndarray
    eps: float
    grid: TimeGrid
    diagnostics: dict[str, Any] = field(default_factory=dict)

    @property
    def dk(self) -> np.ndarray:
        return np.diff(self.k, axis=1)

    def y0(self) -> np.ndarray:
        return self.y[:, 0, :].mean(axis=0)

    def joint_flow(self, x_paths: PathBundle) -> list[EmpiricalMeasure]:
        """Index-paired joint laws of (X_k, Y_k, Z_k) for k < n_steps."""
        return [EmpiricalMeasure.joint(x_paths.at(j), self.y[:, j, :], self.z[:, j])
                for j in range(self.grid.n_steps)]


def dirac_joint(m: int, d: int, l: int) -> EmpiricalMeasure:
    return EmpiricalMeasure.joint(np.zeros((1, m)), np.zeros((1, d)), np.zeros((1, d, l)))


def solve_penalized_backward(eps: float, x_paths: PathBundle, op: MonotoneOperator, driver: Driver,
                             terminal: TerminalCondition, basis: RegressionBasis, noise,
                             x_flow: LawFlow | None = None,
                             yz_flow: Sequence[EmpiricalMeasure] | None = None,
                             threads: int = 1, skip_monotone: bool = False) -> BackwardSolution:
    """One backward sweep with the law argument of the driver frozen to ``yz_flow``.

    ``noise`` must be the increment stream that generated ``x_paths``;
    ``yz_flow[k]`` is the joint law of (X_k, Y_k, Z_k) fed to the driver.
    """
    if not eps > 0:
        raise ValidationError("eps must be positive")
    require_interior(op)
    grid = x_paths.grid
    n, n_nodes, m = x_paths.values.shape
    d, l, h = terminal.d, noise.l, grid.h
    if op.dim != 1 and op.dim != d:
        raise DimensionMismatch(f"operator acts on R^{op.dim}, Y lives in R^{d}")
    if driver.d != d:
        raise DimensionMismatch("driver and terminal disagree on d")
    if driver.measure_dependent:
        if yz_flow is None:
            raise MissingLawFlow("a measure-dependent driver needs the frozen (X, Y, Z) law flow")
        if len(yz_flow) < grid.n_steps:
            raise MissingLawFlow(f"law flow has {len(yz_flow)} entries, need {grid.n_steps}")
    x_flow = x_flow if x_flow is not None else x_paths.flow()
    if x_flow.grid != grid:
        raise ValidationError("x_flow and x_paths live on different grids")

    y = np.empty((n, n_nodes, d))
    z = np.empty((n, grid.n_steps, d, l))
    dk = np.empty((n, grid.n_steps, d))
    y[:, -1, :] = terminal(x_paths.at(grid.n_steps), x_flow.laws[-1])
    pathwise = y[:, -1, :].copy()

    for j in range(grid.n_steps - 1, -1, -1):
        xj = x_paths.at(j)
        y_next = y[:, j + 1, :]
        dw = noise.increments(j, h)
        targets = np.hstack([y_next, (y_next[:, :, None] * dw[:, None, :]).reshape(n, d * l)])
        fitted = conditional_expectation(basis, xj, targets, threads)
        y_pred = fitted[:, :d]
        z[:, j] = fitted[:, d:].reshape(n, d, l) / h
        theta = yz_flow[j] if driver.measure_dependent else None
        gen = h * driver(grid.time(j), xj, y_pred, z[:, j], theta)
        p = y_pred + gen
        if skip_monotone:
            y[:, j, :] = p
        else:
            y[:, j, :] = yosida_resolvent(op, eps, h, p)
        dk[:, j] = p - y[:, j, :]
        pathwise += gen - dk[:, j]
        bad = ~np.isfinite(y[:, j, :]).all(axis=1)
        if bad.any():
            i = int(np.argmax(bad))
            raise NonFinite(f"Y left the finite range for particle {i} at step {j}", particle=i, step=j)

    k = np.zeros((n, n_nodes, d))
    np.cumsum(dk, axis=1, out=k[:, 1:, :])
    diagnostics = {
        "picard_iters": 0,
        "picard_residuals": [],
        "sup_norm_y": float(np.sqrt(np.mean(np.max(np.sum(y * y, axis=2), axis=1)))),
        "l2_norm_z": float(np.sqrt(np.mean(h * np.sum(z * z, axis=(1, 2, 3))))),
        "k_total_variation": float(np.mean(np.sum(np.sqrt(np.sum(dk * dk, axis=2)), axis=1))),
        "y0_mean": y[:, 0, :].mean(axis=0).tolist(),
        "y0_stderr": (pathwise.std(axis=0, ddof=1) / math.sqrt(n)).tolist() if n > 1 else [0.0] * d,
    }
    return BackwardSolution(y, z, k, float(eps), grid, diagnostics)


def _flow_distance(a: BackwardSolution, b: BackwardSolution, metric: str) -> float:
    dist = 0.0
    n_steps = a.grid.n_steps
    n = a.y.shape[0]
    for j in range(n_steps + 1):
        if j < n_steps:
            pa = np.hstack([a.y[:, j, :], a.z[:, j].reshape(n, -1)])
            pb = np.hstack([b.y[:, j, :], b.z[:, j].reshape(n, -1)])
        else:
            pa, pb = a.y[:, j, :], b.y[:, j, :]
        mu, nu = EmpiricalMeasure(pa), EmpiricalMeasure(pb)
        if metric == "exact":
            if n > 64:
                raise TooLarge("exact Picard metric needs at most 64 particles")
            rho = wasserstein2_exact(mu, nu)
        else:
            rho = wasserstein2_upper(mu, nu)
        dist = max(dist, rho)
    return dist


def solve_bmmvsde(eps: float, x_paths: PathBundle, op: MonotoneOperator, driver: Driver,
                  terminal: TerminalCondition, basis: RegressionBasis, noise,
                  picard: PicardSettings = PicardSettings(), x_flow: LawFlow | None = None,
                  threads: int = 1) -> BackwardSolution:
    """Mean-field fixed point over the law of (Y, Z).

    The first iterate comes from a pass with ``A = 0`` and the law argument
    frozen at the Dirac mass at the origin; every later pass freezes the law at
    the previous iterate. Stops when the sup over the grid of the paired
    distance between successive (Y, Z) flows drops to ``picard.tol``.
    """
    m, d, l = x_paths.values.shape[2], terminal.d, noise.l
    n_steps = x_paths.grid.n_steps
    delta = [dirac_joint(m, d, l)] * n_steps
    prev = solve_penalized_backward(eps, x_paths, Zero(op.dim), driver, terminal, basis, noise,
                                    x_flow, delta, threads)
    residuals: list[float] = []
    rises = 0
    sol = prev
    for it in range(1, picard.max_iters + 1):
        sol = solve_penalized_backward(eps, x_paths, op, driver, terminal, basis, noise, x_flow,
                                       prev.joint_flow(x_paths), threads)
        r = _flow_distance(sol, prev, picard.metric)
        residuals.append(r)
        if len(residuals) > 1 and r > residuals[-2] and r > residuals[0]:
            rises += 1
            if rises >= 3:
                raise PicardDiverged(f"Picard residual rose 3 times in a row (last {r:.3e})")
        else:
            rises = 0
        prev = sol
        if r <= picard.tol:
            break
    sol.diagnostics["picard_iters"] = len(residuals)
    sol.diagnostics["picard_residuals"] = residuals
    sol.diagnostics["picard_converged"] = bool(residuals and residuals[-1] <= picard.tol)
    return sol


@dataclass
class BackwardProblem:
    """Everything shared by the runs of a sweep or probe: same paths, same noise."""

    x_paths: PathBundle
    op: MonotoneOperator
    driver: Driver
    terminal: TerminalCondition
    basis: RegressionBasis
    noise: Any
    x_flow: LawFlow | None = None
    picard: PicardSettings = PicardSettings()
    threads: int = 1

    def solve(self, eps: float, terminal: TerminalCondition | None = None) -> BackwardSolution:
        term = terminal or self.terminal
        if self.driver.measure_dependent:
            return solve_bmmvsde(eps, self.x_paths, self.op, self.driver, term, self.basis, self.noise,
                                 self.picard, self.x_flow, self.threads)
        return solve_penalized_backward(eps, self.x_paths, self.op, self.driver, term, self.basis,
                                        self.noise, self.x_flow, None, self.threads)

    def with_op(self, op: MonotoneOperator) -> BackwardProblem:
        return replace(self, op=op)


def sup_l2_distance(a: BackwardSolution, b: BackwardSolution) -> float:
    """``sqrt(mean_i sup_k |Y^a_ik - Y^b_ik|^2)``."""
    diff = a.y - b.y
    return float(np.sqrt(np.mean(np.max(np.sum(diff * diff, axis=2), axis=1))))


@dataclass
class SweepResult:
    eps: list[float]
    solutions: dict[float, BackwardSolution]
    distances: list[float]
    rate: float
    y0_limit: list[float]

    def summary(self) -> dict[str, Any]:
        return {
            "eps": self.eps,
            "pairwise_l2": self.distances,
            "eps_rate": self.rate,
            "y0_limit": self.y0_limit,
            "y0_by_eps": {repr(e): s.diagnostics["y0_mean"] for e, s in self.solutions.items()},
            "k_total_variation": {repr(e): s.diagnostics["k_total_variation"]
                                  for e, s in self.solutions.items()},
        }


def epsilon_sweep(schedule: PenalizationSchedule, problem: BackwardProblem) -> SweepResult:
    """Solve for every eps on the same paths and noise; fit log D(eps) against log eps.

    ``D(eps_i)`` is the sup-L2 distance between the solutions at ``eps_i`` and
    ``eps_{i+1}``; the rate is NaN when any distance vanishes.
    """
    eps = list(schedule.eps_list)
    sols = {e: problem.solve(e) for e in eps}
    dists = [sup_l2_distance(sols[a], sols[b]) for a, b in zip(eps, eps[1:])]
    if len(dists) >= 2 and all(dd > 0 for dd in dists):
        rate = float(np.polyfit(np.log(eps[:-1]), np.log(dists), 1)[0])
    else:
        rate = math.nan
    return SweepResult(eps, sols, dists, rate, sols[eps[-1]].diagnostics["y0_mean"])


def verify_skorokhod(solution: BackwardSolution, op: MonotoneOperator,
                     probes: Sequence[GraphPoint]) -> dict[str, Any]:
    """Worst discrete violation of ``<Y_k - x, dK_k - y h> >= 0`` over graph probes,
    plus the largest distance of Y from the closed domain."""
    h = solution.grid.h
    yk = solution.y[:, :-1, :]
    dk = solution.dk
    worst, where = 0.0, None
    for pi, probe in enumerate(probes):
        px = np.asarray(probe.x, dtype=float).reshape(-1)
        py = np.asarray(probe.y, dtype=float).reshape(-1)
        val = np.sum((yk - px) * (dk - py * h), axis=2)
        viol = np.maximum(-val, 0.0)
        flat = int(np.argmax(viol))
        if viol.flat[flat] > worst:
            i, j = np.unravel_index(flat, viol.shape)
            worst, where = float(viol.flat[flat]), (int(i), int(j), pi)
    y = solution.y
    proj = project_domain_closure(op, y)
    dom = float(np.max(np.sqrt(np.sum((y - proj) ** 2, axis=2))))
    return {"max_violation": worst, "worst": where, "domain_violation": dom}


def terminal_continuity_probe(problem: BackwardProblem, eps: float, scales: Sequence[float],
                              g: Callable) -> list[dict[str, Any]]:
    """Ratio ``R(s) = mean sup|dY|^2 / mean |dxi|^2`` for terminals ``Phi + s g``."""
    base = problem.solve(eps)
    rows = []
    for s in scales:
        if s < 0:
            raise ValidationError("perturbation scales must be nonnegative")
        term = problem.terminal
        shifted = TerminalCondition(lambda x, mu, _s=s, _t=term: _t(x, mu) + _s * np.asarray(g(x), float).reshape(-1, _t.d),
                                    term.d, term.measure_dependent, {**term.config, "shift": s})
        sol = problem.solve(eps, shifted)
        dy = sol.y - base.y
        num = float(np.mean(np.max(np.sum(dy * dy, axis=2), axis=1)))
        dxi = sol.y[:, -1, :] - base.y[:, -1, :]
        den = float(np.mean(np.sum(dxi * dxi, axis=1)))
        rows.append({"scale": float(s), "ratio": num / den if den > 0 else math.nan,
                     "mean_sup_dy2": num, "mean_dxi2": den})
    return rows
