"""Closed-form maximal monotone operators on R^d.

Every operator exposes its resolvent ``J_eps = (I + eps*A)^{-1}`` in closed
form, the projection of an arbitrary vector onto the image set ``A(x)`` (which
gives graph membership and the minimal section for free), the Euclidean
projection onto the closure of its domain, and a coercivity certificate
``(a, m1, m2)``.

Array conventions: operators of ``dim == 1`` act elementwise on arrays of any
shape. Operators with ``dim > 1`` act on arrays whose trailing axis has length
``dim``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from . import rng
from .errors import ConfigError, DegenerateDomain, DimensionMismatch, UnsupportedOperator

CONSTRUCTION_TOL = 1e-10
GRAPH_TOL = 1e-9


@dataclass(frozen=True)
class CoercivityCertificate:
    """Constants with <A_eps(x), x - a> >= m1 |A_eps(x)| - m2 |x - a| - m1 m2."""

    a: np.ndarray
    m1: float
    m2: float


@dataclass(frozen=True)
class GraphPoint:
    x: np.ndarray
    y: np.ndarray

    @classmethod
    def checked(cls, op: MonotoneOperator, x, y, tol: float = GRAPH_TOL) -> GraphPoint:
        if not bool(np.all(graph_contains(op, x, y, tol))):
            raise ValueError(f"({x}, {y}) is not in the graph of {op.kind}")
        return cls(np.asarray(x, dtype=float), np.asarray(y, dtype=float))


class MonotoneOperator:
    """Base class. Subclasses implement the closed forms."""

    kind: str = "abstract"
    dim: int = 1

    def resolvent(self, eps: float, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def project_image(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Projection of ``v`` onto the closed convex set A(x); NaN where A(x) is empty."""
        raise NotImplementedError

    def in_domain(self, x: np.ndarray) -> np.ndarray:
        return np.ones(self._batch_shape(x), dtype=bool)

    def project_domain_closure(self, x: np.ndarray) -> np.ndarray:
        return np.array(x, dtype=float, copy=True)

    def certificate(self) -> CoercivityCertificate:
        raise NotImplementedError

    @property
    def has_interior(self) -> bool:
        return True

    # helpers shared by subclasses

    def _batch_shape(self, x: np.ndarray) -> tuple[int, ...]:
        x = np.asarray(x)
        return x.shape if self.dim == 1 else x.shape[:-1]

    def norm(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return np.abs(v) if self.dim == 1 else np.linalg.norm(v, axis=-1)

    def inner(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        prod = np.asarray(u, dtype=float) * np.asarray(v, dtype=float)
        return prod if self.dim == 1 else prod.sum(axis=-1)

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.dim > 1 and (x.ndim == 0 or x.shape[-1] != self.dim):
            raise DimensionMismatch(f"{self.kind} acts on R^{self.dim}, got shape {x.shape}")
        return x


def _interval_image(x, v, lo, hi):
    """Projection of v onto the normal cone of [lo, hi] at x (NaN outside)."""
    x, v = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(v, dtype=float))
    out = np.zeros(x.shape)
    at_lo = x == lo
    at_hi = x == hi
    out = np.where(at_lo, np.minimum(v, 0.0), out)
    out = np.where(at_hi, np.maximum(v, 0.0), out)
    out = np.where(at_lo & at_hi, v, out)
    return np.where((x < lo) | (x > hi), np.nan, out)


class Zero(MonotoneOperator):
    kind = "zero"

    def __init__(self, dim: int = 1):
        self.dim = int(dim)

    def resolvent(self, eps, x):
        return np.array(self._check(x), copy=True)

    def project_image(self, x, v):
        return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(v)))

    def certificate(self):
        return CoercivityCertificate(np.zeros(self.dim), 1.0, 0.0)


class LinearMonotone(MonotoneOperator):
    """``A(x) = M x`` with ``M + M^T`` positive semidefinite."""

    kind = "linear"

    def __init__(self, matrix):
        m = np.atleast_2d(np.asarray(matrix, dtype=float))
        if m.shape[0] != m.shape[1]:
            raise DimensionMismatch(f"matrix must be square, got {m.shape}")
        sym_eigs = np.linalg.eigvalsh(m + m.T)
        if sym_eigs.min() < -CONSTRUCTION_TOL:
            raise UnsupportedOperator(
                f"M + M^T has eigenvalue {sym_eigs.min():.3e} < 0; operator is not monotone"
            )
        self.matrix = m
        self.dim = m.shape[0]

    @classmethod
    def scaled_identity(cls, c: float, dim: int = 1) -> LinearMonotone:
        return cls(c * np.eye(dim))

    @property
    def scalar(self) -> float | None:
        """The ``c`` in ``M = c I``, or None."""
        c = self.matrix[0, 0]
        if np.array_equal(self.matrix, c * np.eye(self.dim)):
            return float(c)
        return None

    def _apply(self, x):
        if self.dim == 1:
            return self.matrix[0, 0] * x
        return x @ self.matrix.T

    def resolvent(self, eps, x):
        x = self._check(x)
        if self.dim == 1:
            return x / (1.0 + eps * self.matrix[0, 0])
        lhs = np.eye(self.dim) + eps * self.matrix
        flat = x.reshape(-1, self.dim)
        return np.linalg.solve(lhs, flat.T).T.reshape(x.shape)

    def project_image(self, x, v):
        x = self._check(x)
        return np.broadcast_to(self._apply(x), np.broadcast_shapes(x.shape, np.shape(v))).copy()

    def certificate(self):
        return CoercivityCertificate(np.zeros(self.dim), 1.0, float(np.linalg.norm(self.matrix, 2)))


class SubdiffAbs(MonotoneOperator):
    """Subdifferential of ``|x|`` (componentwise, i.e. of the l1 norm, when dim > 1)."""

    kind = "subdiff_abs"

    def __init__(self, dim: int = 1):
        self.dim = int(dim)

    def resolvent(self, eps, x):
        x = self._check(x)
        return np.sign(x) * np.maximum(np.abs(x) - eps, 0.0)

    def project_image(self, x, v):
        x, v = np.broadcast_arrays(self._check(x), np.asarray(v, dtype=float))
        return np.where(x > 0, 1.0, np.where(x < 0, -1.0, np.clip(v, -1.0, 1.0)))

    def certificate(self):
        return CoercivityCertificate(np.zeros(self.dim), 1.0, math.sqrt(self.dim))


def _parse_bound(value) -> float:
    if isinstance(value, str):
        s = value.strip().lower()
        if s in ("inf", "+inf", "infinity"):
            return math.inf
        if s in ("-inf", "-infinity"):
            return -math.inf
        try:
            return float(s)
        except ValueError:
            raise ConfigError(f"cannot parse interval bound {value!r}") from None
    return float(value)


class NormalConeInterval(MonotoneOperator):
    """Normal cone of the closed interval ``[lo, hi]`` (infinite ends allowed)."""

    kind = "normal_cone_interval"

    def __init__(self, lo=-math.inf, hi=math.inf, degenerate: bool = False):
        lo, hi = _parse_bound(lo), _parse_bound(hi)
        if lo > hi:
            raise DegenerateDomain(f"empty interval [{lo}, {hi}]")
        if lo == hi and not degenerate:
            raise DegenerateDomain(f"interval [{lo}, {hi}] has empty interior; pass degenerate=True")
        self.lo, self.hi = lo, hi
        self.degenerate = lo == hi
        self.dim = 1

    @property
    def has_interior(self):
        return self.lo < self.hi

    def resolvent(self, eps, x):
        return np.clip(self._check(x), self.lo, self.hi)

    def project_image(self, x, v):
        return _interval_image(x, v, self.lo, self.hi)

    def in_domain(self, x):
        x = np.asarray(x, dtype=float)
        return (x >= self.lo) & (x <= self.hi)

    def project_domain_closure(self, x):
        return np.clip(np.asarray(x, dtype=float), self.lo, self.hi)

    def certificate(self):
        if not self.has_interior:
            raise DegenerateDomain("normal cone of a single point has no interior domain point")
        if math.isfinite(self.lo) and math.isfinite(self.hi):
            a, r = 0.5 * (self.lo + self.hi), 0.5 * (self.hi - self.lo)
        elif math.isfinite(self.lo):
            a, r = self.lo + 1.0, 1.0
        elif math.isfinite(self.hi):
            a, r = self.hi - 1.0, 1.0
        else:
            a, r = 0.0, 1.0
        return CoercivityCertificate(np.array([a]), r, 0.0)


class NormalConeBox(MonotoneOperator):
    kind = "normal_cone_box"

    def __init__(self, lo, hi):
        lo = np.array([_parse_bound(v) for v in np.ravel(np.asarray(lo, dtype=object))], dtype=float)
        hi = np.array([_parse_bound(v) for v in np.ravel(np.asarray(hi, dtype=object))], dtype=float)
        if lo.shape != hi.shape:
            raise DimensionMismatch("lo and hi must have the same length")
        if np.any(lo >= hi):
            raise DegenerateDomain("every box side must have lo < hi")
        self.lo, self.hi = lo, hi
        self.dim = lo.size

    def resolvent(self, eps, x):
        return np.clip(self._check(x), self.lo, self.hi)

    def project_image(self, x, v):
        x = self._check(x)
        out = _interval_image(x, v, self.lo, self.hi)
        # A(x) is empty as soon as one coordinate leaves its side
        bad = np.isnan(out).any(axis=-1, keepdims=True)
        return np.where(bad, np.nan, out)

    def in_domain(self, x):
        x = self._check(x)
        return np.all((x >= self.lo) & (x <= self.hi), axis=-1)

    def project_domain_closure(self, x):
        return np.clip(self._check(x), self.lo, self.hi)

    def certificate(self):
        a = np.empty(self.dim)
        radius = np.empty(self.dim)
        for i, (lo, hi) in enumerate(zip(self.lo, self.hi)):
            if math.isfinite(lo) and math.isfinite(hi):
                a[i], radius[i] = 0.5 * (lo + hi), 0.5 * (hi - lo)
            elif math.isfinite(lo):
                a[i], radius[i] = lo + 1.0, 1.0
            elif math.isfinite(hi):
                a[i], radius[i] = hi - 1.0, 1.0
            else:
                a[i], radius[i] = 0.0, 1.0
        return CoercivityCertificate(a, float(radius.min()), 0.0)


class SubdiffConvex(MonotoneOperator):
    """Subdifferential of a finite scalar convex function ``f``.

    ``prox(x, eps)`` must return ``argmin_y f(y) + |y - x|^2 / (2 eps)`` exactly and
    ``subgradient(x)`` the endpoints ``(lo, hi)`` of the interval ``df(x)``.
    """

    kind = "subdiff_convex"

    def __init__(self, f: Callable, prox: Callable, subgradient: Callable, name: str = "custom",
                 params: dict[str, Any] | None = None):
        self.f = f
        self.prox = prox
        self.subgradient = subgradient
        self.name = name
        self.params = dict(params or {})
        self.dim = 1

    @classmethod
    def quadratic_abs(cls, alpha: float = 1.0, beta: float = 1.0) -> SubdiffConvex:
        """``f(x) = alpha x^2 / 2 + beta |x|``."""
        if alpha < 0 or beta < 0:
            raise UnsupportedOperator("quadratic_abs needs alpha, beta >= 0")

        def f(x):
            return 0.5 * alpha * x * x + beta * np.abs(x)

        def prox(x, eps):
            return np.sign(x) * np.maximum(np.abs(x) - eps * beta, 0.0) / (1.0 + eps * alpha)

        def subgradient(x):
            x = np.asarray(x, dtype=float)
            s = np.sign(x)
            lo = np.where(x == 0, -beta, alpha * x + beta * s)
            hi = np.where(x == 0, beta, alpha * x + beta * s)
            return lo, hi

        return cls(f, prox, subgradient, name="quadratic_abs", params={"alpha": alpha, "beta": beta})

    def resolvent(self, eps, x):
        return np.asarray(self.prox(self._check(x), eps), dtype=float)

    def project_image(self, x, v):
        lo, hi = self.subgradient(self._check(x))
        return np.clip(np.asarray(v, dtype=float), lo, hi)

    def certificate(self):
        ends = np.array([-1.0, 1.0])
        sec = np.abs(self.project_image(ends, np.zeros(2)))
        return CoercivityCertificate(np.zeros(1), 1.0, float(sec.max()))


class Sum(MonotoneOperator):
    """``c I + B`` where one summand is a scalar multiple of the identity.

    Its resolvent is ``J^B_{eps/(1+eps c)}(x / (1 + eps c))``.
    """

    kind = "sum"

    def __init__(self, left: MonotoneOperator, right: MonotoneOperator):
        if left.dim != right.dim:
            raise DimensionMismatch("summands act on different dimensions")
        for lin, other in ((left, right), (right, left)):
            if isinstance(lin, LinearMonotone) and lin.scalar is not None:
                self.c = lin.scalar
                self.inner_op = other
                break
        else:
            raise UnsupportedOperator(
                "sum needs one summand equal to c*I; no exact resolvent is available otherwise"
            )
        self.left, self.right = left, right
        self.dim = left.dim

    @property
    def has_interior(self):
        return self.inner_op.has_interior

    def resolvent(self, eps, x):
        x = self._check(x)
        s = 1.0 + eps * self.c
        return self.inner_op.resolvent(eps / s, x / s)

    def project_image(self, x, v):
        x = self._check(x)
        return self.c * x + self.inner_op.project_image(x, np.asarray(v, dtype=float) - self.c * x)

    def in_domain(self, x):
        return self.inner_op.in_domain(x)

    def project_domain_closure(self, x):
        return self.inner_op.project_domain_closure(x)

    def certificate(self):
        inner = self.inner_op.certificate()
        bound = abs(self.c) * (float(np.linalg.norm(inner.a)) + inner.m1) + inner.m2
        return CoercivityCertificate(inner.a, inner.m1, bound)


# Public operations -----------------------------------------------------------


def resolvent(op: MonotoneOperator, eps: float, x) -> np.ndarray:
    """``J_eps(x) = (I + eps A)^{-1} x``."""
    if not np.all(np.asarray(eps) > 0):
        raise ValueError(f"eps must be positive, got {eps}")
    return op.resolvent(eps, x)


def yosida(op: MonotoneOperator, eps: float, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return (x - resolvent(op, eps, x)) / eps


def yosida_resolvent(op: MonotoneOperator, eps: float, lam: float, x) -> np.ndarray:
    """Resolvent with step ``lam`` of the Yosida approximation ``A_eps``.

    Solves ``y + lam * A_eps(y) = x`` in closed form as
    ``(eps x + lam J_{eps+lam}(x)) / (eps + lam)``. This is the implicit step of
    the backward scheme and of the finite-difference solver.
    """
    if not (np.all(np.asarray(eps) > 0) and np.all(np.asarray(lam) > 0)):
        raise ValueError("eps and lam must be positive")
    x = np.asarray(x, dtype=float)
    if isinstance(op, Zero):
        return x.copy()
    return (eps * x + lam * op.resolvent(eps + lam, x)) / (eps + lam)


def minimal_section(op: MonotoneOperator, x) -> np.ndarray:
    """Least-norm element of A(x); ``inf`` where x is outside the domain."""
    x = np.asarray(x, dtype=float)
    sec = op.project_image(x, np.zeros_like(x))
    return np.where(np.isnan(sec), np.inf, sec)


def project_domain_closure(op: MonotoneOperator, x) -> np.ndarray:
    return op.project_domain_closure(x)


def graph_contains(op: MonotoneOperator, x, y, tol: float = GRAPH_TOL):
    """True where ``dist(y, A(x)) <= tol``."""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    y = np.asarray(y, dtype=float)
    proj = op.project_image(x, y)
    dist = op.norm(y - proj)
    return np.where(np.isnan(dist), False, dist <= tol)


def coercivity_certificate(op: MonotoneOperator) -> CoercivityCertificate:
    require_interior(op)
    return op.certificate()


def require_interior(op: MonotoneOperator) -> None:
    """Solver entry points refuse operators whose domain has empty interior."""
    if not op.has_interior:
        raise DegenerateDomain(f"{op.kind} has a domain with empty interior")


def certificate_gap(op: MonotoneOperator, cert: CoercivityCertificate, eps, x) -> np.ndarray:
    """LHS minus RHS of the coercivity inequality; nonnegative when it holds."""
    x = np.asarray(x, dtype=float)
    a = cert.a[0] if op.dim == 1 else cert.a
    ye = yosida(op, eps, x)
    lhs = op.inner(ye, x - a)
    rhs = cert.m1 * op.norm(ye) - cert.m2 * op.norm(x - a) - cert.m1 * cert.m2
    return lhs - rhs


# Config grammar --------------------------------------------------------------


def from_config(spec: dict[str, Any]) -> MonotoneOperator:
    """Build an operator from a config table such as
    ``{kind = "normal_cone_interval", lo = 0, hi = "inf"}``."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    try:
        if kind == "zero":
            return Zero(int(spec.get("dim", 1)))
        if kind == "linear":
            if "matrix" in spec:
                return LinearMonotone(spec["matrix"])
            return LinearMonotone.scaled_identity(float(spec.get("scale", 1.0)), int(spec.get("dim", 1)))
        if kind == "subdiff_abs":
            return SubdiffAbs(int(spec.get("dim", 1)))
        if kind == "normal_cone_interval":
            return NormalConeInterval(spec.get("lo", "-inf"), spec.get("hi", "inf"),
                                      degenerate=bool(spec.get("degenerate", False)))
        if kind == "normal_cone_box":
            return NormalConeBox(spec["lo"], spec["hi"])
        if kind == "subdiff_convex":
            preset = spec.get("preset", "quadratic_abs")
            if preset != "quadratic_abs":
                raise ConfigError(f"unknown subdiff_convex preset {preset!r}")
            return SubdiffConvex.quadratic_abs(float(spec.get("alpha", 1.0)), float(spec.get("beta", 1.0)))
        if kind == "sum":
            return Sum(from_config(spec["left"]), from_config(spec["right"]))
    except KeyError as exc:
        raise ConfigError(f"operator kind {kind!r} is missing key {exc}") from None
    raise ConfigError(f"unknown operator kind {kind!r}")


def _bound_to_config(v: float):
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return float(v)


def to_config(op: MonotoneOperator) -> dict[str, Any]:
    if isinstance(op, Zero):
        return {"kind": "zero", "dim": op.dim}
    if isinstance(op, LinearMonotone):
        return {"kind": "linear", "matrix": op.matrix.tolist()}
    if isinstance(op, SubdiffAbs):
        return {"kind": "subdiff_abs", "dim": op.dim}
    if isinstance(op, NormalConeInterval):
        out = {"kind": "normal_cone_interval", "lo": _bound_to_config(op.lo), "hi": _bound_to_config(op.hi)}
        if op.degenerate:
            out["degenerate"] = True
        return out
    if isinstance(op, NormalConeBox):
        return {"kind": "normal_cone_box", "lo": [_bound_to_config(v) for v in op.lo],
                "hi": [_bound_to_config(v) for v in op.hi]}
    if isinstance(op, SubdiffConvex):
        if op.name != "quadratic_abs":
            raise ConfigError("only named subdiff_convex presets serialize")
        return {"kind": "subdiff_convex", "preset": op.name, **op.params}
    if isinstance(op, Sum):
        return {"kind": "sum", "left": to_config(op.left), "right": to_config(op.right)}
    raise ConfigError(f"cannot serialize operator {op!r}")


def graph_probes(op: MonotoneOperator, count: int, seed: int = 0, scale: float = 3.0) -> list[GraphPoint]:
    """Deterministic points of the graph: for any ``v``, ``(J_1(v), v - J_1(v))`` lies in Gr(A)."""
    v = scale * rng.normals(seed, "graph-probes", 0, np.arange(count), op.dim)
    if op.dim == 1:
        v = v[:, 0]
    j = resolvent(op, 1.0, v)
    return [GraphPoint(np.atleast_1d(a), np.atleast_1d(b)) for a, b in zip(j, v - j)]


def shipped_operators() -> dict[str, MonotoneOperator]:
    """One instance of every built-in kind; used by the validation suite."""
    return {
        "zero": Zero(),
        "linear_identity": LinearMonotone.scaled_identity(1.0),
        "linear_2d": LinearMonotone([[1.0, 2.0], [-2.0, 0.5]]),
        "subdiff_abs": SubdiffAbs(),
        "normal_cone_halfline": NormalConeInterval(0.0, math.inf),
        "normal_cone_interval": NormalConeInterval(-1.0, 1.0),
        "normal_cone_box": NormalConeBox([0.0, -1.0], [1.0, math.inf]),
        "subdiff_convex": SubdiffConvex.quadratic_abs(0.5, 1.0),
        "sum_identity_cone": Sum(LinearMonotone.scaled_identity(0.5), NormalConeInterval(0.0, math.inf)),
    }
