"""Particle Euler-Maruyama for the forward McKean-Vlasov SDE and its decoupled twin."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from . import rng
from ._parallel import map_chunks
from .errors import CountMismatch, GridMismatch, NonFinite, ValidationError
from .measures import EmpiricalMeasure, wasserstein2_upper


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    T: float
    n_steps: int

    def __post_init__(self):
        if not self.T > self.t0:
            raise ValidationError(f"need t0 < T, got t0={self.t0}, T={self.T}")
        if self.n_steps < 1:
            raise ValidationError("n_steps must be positive")

    @property
    def h(self) -> float:
        return (self.T - self.t0) / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.h * np.arange(self.n_steps + 1)

    def time(self, k: int) -> float:
        return self.t0 + self.h * k

    def tail(self, k: int) -> TimeGrid:
        """The same grid restarted at node ``k``."""
        if not 0 <= k < self.n_steps:
            raise ValidationError(f"tail node {k} outside [0, {self.n_steps})")
        return TimeGrid(self.time(k), self.T, self.n_steps - k)

    def snap(self, t: float) -> int:
        return int(min(max(round((t - self.t0) / self.h), 0), self.n_steps))


@dataclass
class ForwardCoefficients:
    """Vectorized drift and diffusion.

    ``b(t, x, mu)`` maps ``x`` of shape (n, m) to (n, m); ``sigma(t, x, mu)``
    returns (n, m, l) or anything broadcastable to it.
    """

    b: Callable
    sigma: Callable
    m: int = 1
    l: int = 1
    lipschitz_hint: float | None = None
    measure_dependent: bool = True
    config: dict[str, Any] = field(default_factory=dict)

    def spot_check(self, t: float = 0.0) -> None:
        """A measure-independent coefficient must not react to mu."""
        if self.measure_dependent:
            return
        x = np.linspace(-1.0, 1.0, 4)[:, None] * np.ones((1, self.m))
        delta = EmpiricalMeasure(np.zeros((1, self.m)))
        other = EmpiricalMeasure(np.linspace(-3.0, 5.0, 7)[:, None] * np.ones((1, self.m)))
        for fn in (self.b, self.sigma):
            if not np.array_equal(np.asarray(fn(t, x, delta)), np.asarray(fn(t, x, other))):
                raise ValidationError("coefficient flagged measure-independent depends on the law")


class BrownianDriver:
    """Gaussian increments keyed by ``(seed, particle, step)``.

    ``step_offset`` shifts the step counter; ``tail(k)`` gives the stream a
    process restarted at node ``k`` must see.
    """

    def __init__(self, seed: int, n_particles: int, l: int = 1, stream: str = "forward",
                 step_offset: int = 0):
        self.seed = int(seed)
        self.n_particles = int(n_particles)
        self.l = int(l)
        self.stream = stream
        self.step_offset = int(step_offset)

    def increments(self, step: int, h: float, idx: slice | None = None) -> np.ndarray:
        idx = idx or slice(0, self.n_particles)
        particles = np.arange(idx.start, idx.stop)
        z = rng.normals(self.seed, self.stream, step + self.step_offset, particles, self.l)
        return math.sqrt(h) * z

    def tail(self, k: int) -> BrownianDriver:
        return BrownianDriver(self.seed, self.n_particles, self.l, self.stream, self.step_offset + k)


class RademacherTreeDriver:
    """All ``2^depth`` sign paths ``dW = +-sqrt(h)`` (l = 1), one per particle.

    Particle ``i`` takes sign ``+`` at step ``k`` iff bit ``depth-1-k`` of ``i``
    is 0, so particles are in lexicographic order of their sign paths.
    """

    def __init__(self, depth: int, step_offset: int = 0):
        self.depth = int(depth)
        self.n_particles = 2 ** self.depth
        self.l = 1
        self.step_offset = int(step_offset)

    def signs(self, step: int) -> np.ndarray:
        k = step + self.step_offset
        bits = (np.arange(self.n_particles) >> (self.depth - 1 - k)) & 1
        return 1.0 - 2.0 * bits

    def increments(self, step: int, h: float, idx: slice | None = None) -> np.ndarray:
        s = self.signs(step)[:, None] * math.sqrt(h)
        return s if idx is None else s[idx]

    def tail(self, k: int) -> RademacherTreeDriver:
        return RademacherTreeDriver(self.depth, self.step_offset + k)


@dataclass
class LawFlow:
    grid: TimeGrid
    laws: list[EmpiricalMeasure]

    def __post_init__(self):
        if len(self.laws) != self.grid.n_steps + 1:
            raise GridMismatch(f"need {self.grid.n_steps + 1} laws, got {len(self.laws)}")
        if len({mu.n for mu in self.laws}) != 1:
            raise CountMismatch("every law in a flow must have the same particle count")

    def tail(self, k: int) -> LawFlow:
        return LawFlow(self.grid.tail(k), self.laws[k:])


@dataclass
class PathBundle:
    """Per-particle paths, ``values`` of shape (n_particles, n_steps + 1, m)."""

    values: np.ndarray
    grid: TimeGrid

    @property
    def n_particles(self) -> int:
        return self.values.shape[0]

    def at(self, k: int) -> np.ndarray:
        return self.values[:, k, :]

    def flow(self) -> LawFlow:
        return LawFlow(self.grid, [EmpiricalMeasure(self.at(k)) for k in range(self.grid.n_steps + 1)])


@dataclass(frozen=True)
class InitialLaw:
    """A named family of initial laws for ``eta``.

    kinds: ``constant`` (value), ``gaussian`` (mean, std), ``uniform`` (lo, hi),
    ``two_point`` (a, b, p = P(eta = a)). Draws come from the ``initial``
    substream; ``seed_offset`` selects an independent draw of the same law.
    """

    kind: str = "constant"
    params: dict[str, float] = field(default_factory=dict)
    m: int = 1
    seed_offset: int = 0

    def sample(self, n: int, seed: int) -> np.ndarray:
        p = self.params
        idx = np.arange(n)
        s = seed + self.seed_offset
        if self.kind == "constant":
            return np.full((n, self.m), float(p.get("value", 0.0)))
        if self.kind == "gaussian":
            z = rng.normals(s, "initial", 0, idx, self.m)
            return float(p.get("mean", 0.0)) + float(p.get("std", 1.0)) * z
        if self.kind == "uniform":
            u = rng.uniforms(s, "initial", 0, idx, self.m)
            lo, hi = float(p.get("lo", 0.0)), float(p.get("hi", 1.0))
            return lo + (hi - lo) * u
        if self.kind == "two_point":
            u = rng.uniforms(s, "initial", 0, idx, self.m)
            return np.where(u < float(p.get("p", 0.5)), float(p.get("a", -1.0)), float(p.get("b", 1.0)))
        raise ValidationError(f"unknown initial law {self.kind!r}")

    def shifted(self, delta: float) -> InitialLaw:
        p = dict(self.params)
        if self.kind == "constant":
            p["value"] = p.get("value", 0.0) + delta
        elif self.kind == "gaussian":
            p["mean"] = p.get("mean", 0.0) + delta
        elif self.kind == "uniform":
            p["lo"], p["hi"] = p.get("lo", 0.0) + delta, p.get("hi", 1.0) + delta
        else:
            p["a"], p["b"] = p.get("a", -1.0) + delta, p.get("b", 1.0) + delta
        return InitialLaw(self.kind, p, self.m, self.seed_offset)


def _euler(coeffs: ForwardCoefficients, grid: TimeGrid, x0: np.ndarray, driver,
           law_at: Callable[[int, np.ndarray], EmpiricalMeasure], threads: int) -> np.ndarray:
    n, m = x0.shape
    if driver.n_particles != n:
        raise CountMismatch(f"driver has {driver.n_particles} particles, paths have {n}")
    h = grid.h
    paths = np.empty((n, grid.n_steps + 1, m))
    paths[:, 0, :] = x0
    for k in range(grid.n_steps):
        t = grid.time(k)
        xk = paths[:, k, :]
        mu = law_at(k, xk)

        def step(sl: slice) -> None:
            x = xk[sl]
            dw = driver.increments(k, h, sl)
            sig = np.broadcast_to(coeffs.sigma(t, x, mu), (x.shape[0], m, coeffs.l))
            noise = sig[:, :, 0] * dw[:, None, 0]
            for j in range(1, coeffs.l):
                noise = noise + sig[:, :, j] * dw[:, None, j]
            paths[sl, k + 1, :] = x + coeffs.b(t, x, mu) * h + noise

        map_chunks(step, n, threads)
        bad = ~np.isfinite(paths[:, k + 1, :]).all(axis=1)
        if bad.any():
            i = int(np.argmax(bad))
            raise NonFinite(f"particle {i} left the finite range at step {k + 1}", particle=i, step=k + 1)
    return paths


def simulate_mckean(coeffs: ForwardCoefficients, grid: TimeGrid, initial, driver,
                    seed: int = 0, threads: int = 1) -> tuple[PathBundle, LawFlow]:
    """Interacting particle system: the law at step k is the empirical law of all particles.

    ``initial`` is an :class:`InitialLaw` (sampled with ``seed``) or an explicit
    (n, m) array of starting points.
    """
    n = driver.n_particles
    if n < 2:
        raise ValidationError("the particle system needs at least 2 particles")
    x0 = initial.sample(n, seed) if isinstance(initial, InitialLaw) else np.asarray(initial, dtype=float)
    if x0.size != n * coeffs.m:
        raise CountMismatch(f"{x0.size // coeffs.m} starting points for {n} driver particles")
    x0 = x0.reshape(n, coeffs.m)
    paths = _euler(coeffs, grid, x0, driver, lambda k, xk: EmpiricalMeasure(xk), threads)
    bundle = PathBundle(paths, grid)
    return bundle, bundle.flow()


def simulate_decoupled(coeffs: ForwardCoefficients, grid: TimeGrid, x0, frozen_flow: LawFlow,
                       driver, threads: int = 1) -> PathBundle:
    """Euler paths started at ``x0`` (a point, or one point per particle) with the law frozen."""
    if frozen_flow.grid != grid:
        raise GridMismatch(f"frozen flow grid {frozen_flow.grid} differs from {grid}")
    n = driver.n_particles
    x0 = np.asarray(x0, dtype=float)
    start = np.broadcast_to(x0.reshape(-1, coeffs.m) if x0.ndim > 1 else x0.reshape(1, coeffs.m),
                            (n, coeffs.m)).copy()
    paths = _euler(coeffs, grid, start, driver, lambda k, xk: frozen_flow.laws[k], threads)
    return PathBundle(paths, grid)


def law_stability_probe(coeffs: ForwardCoefficients, grid: TimeGrid, eta1, eta2, driver,
                        seed: int = 0) -> dict[str, float]:
    """Sup over the grid of the paired distance between the two law flows vs the initial distance."""
    _, flow1 = simulate_mckean(coeffs, grid, eta1, driver, seed)
    _, flow2 = simulate_mckean(coeffs, grid, eta2, driver, seed)
    dists = [wasserstein2_upper(a, b) for a, b in zip(flow1.laws, flow2.laws)]
    lhs, rhs = max(dists), dists[0]
    if rhs == 0.0:
        ratio = 0.0 if lhs == 0.0 else math.inf
    else:
        ratio = lhs / rhs
    return {"lhs": lhs, "rhs": rhs, "ratio": ratio}
