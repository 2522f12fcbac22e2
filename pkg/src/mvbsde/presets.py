"""Named coefficient, driver and terminal families used by configs and tests.

Everything here is one-dimensional in state, solution and noise
(m = d = l = 1) except where a preset says otherwise.
"""

from __future__ import annotations

from typing import Any

import numpy as np

from .backward_solver import Driver, TerminalCondition
from .errors import ConfigError
from .forward_mvsde import ForwardCoefficients, InitialLaw


def forward_from_config(spec: dict[str, Any]) -> ForwardCoefficients:
    """``affine``: ``b = c0 + c1 x + c2 mean(mu)``, ``sigma = s0 + s1 x``.
    ``nonlinear``: ``b = a sin(x) + c2 mean(mu)``, ``sigma = s0 + s1 cos(x)``."""
    spec = dict(spec)
    preset = spec.get("preset", "affine")
    if preset == "affine":
        c0, c1, c2 = (float(spec.get(k, 0.0)) for k in ("c0", "c1", "c2"))
        s0, s1 = float(spec.get("s0", 1.0)), float(spec.get("s1", 0.0))

        def b(t, x, mu):
            out = c0 + c1 * x
            if c2:
                out = out + c2 * mu.mean[: x.shape[1]]
            return out

        def sigma(t, x, mu):
            if s1:
                return (s0 + s1 * x)[:, :, None]
            return np.full((1, x.shape[1], 1), s0)

        lip = abs(c1) + abs(c2) + abs(s1)
    elif preset == "nonlinear":
        a, c2 = float(spec.get("a", 0.5)), float(spec.get("c2", 0.0))
        s0, s1 = float(spec.get("s0", 1.0)), float(spec.get("s1", 0.0))

        def b(t, x, mu):
            out = a * np.sin(x)
            if c2:
                out = out + c2 * mu.mean[: x.shape[1]]
            return out

        def sigma(t, x, mu):
            return (s0 + s1 * np.cos(x))[:, :, None]

        lip = abs(a) + abs(c2) + abs(s1)
    else:
        raise ConfigError(f"unknown forward preset {preset!r}")
    md = float(spec.get("c2", 0.0)) != 0.0
    return ForwardCoefficients(b, sigma, m=1, l=1, lipschitz_hint=lip or None,
                               measure_dependent=md, config=spec)


def driver_from_config(spec: dict[str, Any]) -> Driver:
    """Driver families, all Lipschitz:

    - ``zero``
    - ``constant``: ``c``
    - ``linear``: ``c + ax x + ay y + az z``
    - ``mean_field``: ``c + ay y + az z + kappa E_theta[y]``
    - ``lipschitz_mix``: ``alpha sin(y) + beta tanh(z) + gamma cos(x) + kappa E_theta[y]``
    """
    spec = dict(spec)
    preset = spec.get("preset", "zero")
    g = {k: float(spec.get(k, 0.0)) for k in ("c", "ax", "ay", "az", "kappa", "alpha", "beta", "gamma")}

    if preset == "zero":
        def fn(t, x, y, z, theta):
            return np.zeros_like(y)
        lip, md = 0.0, False
    elif preset == "constant":
        def fn(t, x, y, z, theta):
            return np.full_like(y, g["c"])
        lip, md = 0.0, False
    elif preset == "linear":
        def fn(t, x, y, z, theta):
            return g["c"] + g["ax"] * x + g["ay"] * y + g["az"] * z.sum(axis=2)
        lip, md = abs(g["ay"]) + abs(g["az"]), False
    elif preset == "mean_field":
        def fn(t, x, y, z, theta):
            out = g["c"] + g["ay"] * y + g["az"] * z.sum(axis=2)
            if theta is not None:
                out = out + g["kappa"] * theta.mean[theta.layout[0]:theta.layout[0] + y.shape[1]]
            return out
        lip, md = abs(g["ay"]) + abs(g["az"]) + abs(g["kappa"]), g["kappa"] != 0.0
    elif preset == "lipschitz_mix":
        def fn(t, x, y, z, theta):
            out = g["alpha"] * np.sin(y) + g["beta"] * np.tanh(z.sum(axis=2)) + g["gamma"] * np.cos(x)
            if theta is not None and g["kappa"]:
                out = out + g["kappa"] * theta.mean[theta.layout[0]:theta.layout[0] + y.shape[1]]
            return out
        lip, md = abs(g["alpha"]) + abs(g["beta"]) + abs(g["kappa"]), g["kappa"] != 0.0
    else:
        raise ConfigError(f"unknown driver preset {preset!r}")
    return Driver(fn, d=1, lipschitz_hint=lip or None, measure_dependent=md, config=spec)


_TERMINALS = {
    "identity": lambda x: x,
    "positive_part": lambda x: np.maximum(x, 0.0),
    "square": lambda x: x * x,
    "one_plus_square": lambda x: 1.0 + x * x,
    "tanh": np.tanh,
}


def terminal_from_config(spec: dict[str, Any]) -> TerminalCondition:
    """``constant`` (value), ``centered`` (x - E_mu[x], law dependent), or one of
    identity / positive_part / square / one_plus_square / tanh scaled by ``scale``."""
    spec = dict(spec)
    preset = spec.get("preset", "identity")
    if preset == "constant":
        value = float(spec.get("value", 1.0))
        return TerminalCondition(lambda x, mu: np.full((np.shape(x)[0], 1), value), 1, False, spec)
    if preset == "centered":
        return TerminalCondition(lambda x, mu: x - mu.mean[:1], 1, True, spec)
    if preset not in _TERMINALS:
        raise ConfigError(f"unknown terminal preset {preset!r}")
    f = _TERMINALS[preset]
    scale = float(spec.get("scale", 1.0))
    return TerminalCondition(lambda x, mu: scale * f(np.asarray(x, dtype=float)), 1, False, spec)


SHIPPED_DRIVERS: dict[str, dict[str, Any]] = {
    "zero": {"preset": "zero"},
    "constant": {"preset": "constant", "c": -1.0},
    "linear": {"preset": "linear", "c": 0.2, "ax": 0.5, "ay": -0.4, "az": 0.3},
    "mean_field": {"preset": "mean_field", "c": 0.1, "ay": 0.2, "az": -0.1, "kappa": 0.5},
    "lipschitz_mix": {"preset": "lipschitz_mix", "alpha": 0.3, "beta": 0.2, "gamma": -0.5, "kappa": 0.3},
}

SHIPPED_TERMINALS: dict[str, dict[str, Any]] = {
    "constant": {"preset": "constant", "value": 1.0},
    "centered": {"preset": "centered"},
    "identity": {"preset": "identity"},
    "positive_part": {"preset": "positive_part"},
    "square": {"preset": "square"},
    "one_plus_square": {"preset": "one_plus_square"},
    "tanh": {"preset": "tanh", "scale": 0.5},
}


def initial_from_config(spec: dict[str, Any]) -> InitialLaw:
    spec = dict(spec)
    kind = spec.pop("kind", "constant")
    offset = int(spec.pop("seed_offset", 0))
    if kind not in ("constant", "gaussian", "uniform", "two_point"):
        raise ConfigError(f"unknown initial law {kind!r}")
    return InitialLaw(kind, {k: float(v) for k, v in spec.items()}, 1, offset)


def perturbation(name: str):
    """Bounded terminal perturbations ``g`` for continuity probes."""
    if name == "bump":
        return lambda x: 1.0 / (1.0 + np.asarray(x, dtype=float) ** 2)
    if name == "constant":
        return lambda x: np.ones_like(np.asarray(x, dtype=float))
    raise ConfigError(f"unknown perturbation {name!r}")


# Experiment presets: partial configs merged over the defaults in config.py.
EXPERIMENTS: dict[str, dict[str, Any]] = {
    "heat-moment": {
        "task": "solve",
        "particles": 20000,
        "grid": {"t0": 0.0, "T": 1.0, "n_steps": 100},
        "forward": {"preset": "affine", "s0": 1.0},
        "initial": {"kind": "constant", "value": 0.0},
        "operator": {"kind": "zero"},
        "driver": {"preset": "zero"},
        "terminal": {"preset": "square"},
        "basis": {"kind": "polynomial", "degree": 2},
        "query": {"t": 0.0, "x": 0.0},
    },
    "constrained-sweep": {
        "task": "sweep",
        "particles": 10000,
        "grid": {"t0": 0.0, "T": 1.0, "n_steps": 50},
        "forward": {"preset": "affine", "s0": 1.0},
        "initial": {"kind": "constant", "value": 0.0},
        "operator": {"kind": "normal_cone_interval", "lo": 0.0, "hi": "inf"},
        "driver": {"preset": "constant", "c": -1.0},
        "terminal": {"preset": "positive_part"},
        "basis": {"kind": "polynomial", "degree": 4},
        "penalty": {"eps": 0.025, "schedule": [0.2, 0.1, 0.05, 0.025]},
    },
    "unconstrained-sweep": {
        "task": "sweep",
        "particles": 10000,
        "grid": {"t0": 0.0, "T": 1.0, "n_steps": 50},
        "forward": {"preset": "affine", "s0": 1.0},
        "initial": {"kind": "constant", "value": 0.0},
        "operator": {"kind": "normal_cone_interval", "lo": 0.0, "hi": "inf"},
        "driver": {"preset": "zero"},
        "terminal": {"preset": "one_plus_square"},
        "basis": {"kind": "polynomial", "degree": 2},
        "penalty": {"eps": 0.025, "schedule": [0.2, 0.1, 0.05, 0.025]},
    },
    "constrained-compare": {
        "task": "compare",
        "particles": 100000,
        "grid": {"t0": 0.0, "T": 1.0, "n_steps": 100},
        "forward": {"preset": "affine", "s0": 1.0},
        "initial": {"kind": "constant", "value": 0.0},
        "operator": {"kind": "normal_cone_interval", "lo": 0.0, "hi": "inf"},
        "driver": {"preset": "constant", "c": -1.0},
        "terminal": {"preset": "positive_part"},
        "basis": {"kind": "polynomial", "degree": 4},
        "penalty": {"eps": 0.025},
        "compare": {"x": [-2.0, -1.6, -1.2, -0.8, -0.4, 0.0, 0.4, 0.8, 1.2, 1.6, 2.0]},
    },
    "mean-field-ode": {
        "task": "solve",
        "particles": 4,
        "grid": {"t0": 0.0, "T": 1.0, "n_steps": 1000},
        "forward": {"preset": "affine", "s0": 0.0},
        "initial": {"kind": "constant", "value": 0.0},
        "operator": {"kind": "zero"},
        "driver": {"preset": "mean_field", "kappa": 1.0},
        "terminal": {"preset": "constant", "value": 1.0},
        "basis": {"kind": "polynomial", "degree": 0},
        "picard": {"max_iters": 30, "tol": 1e-12},
    },
    "monotone-ode": {
        "task": "solve",
        "particles": 4,
        "grid": {"t0": 0.0, "T": 1.0, "n_steps": 1000},
        "forward": {"preset": "affine", "s0": 0.0},
        "initial": {"kind": "constant", "value": 0.0},
        "operator": {"kind": "linear", "scale": 1.0},
        "driver": {"preset": "zero"},
        "terminal": {"preset": "constant", "value": 1.0},
        "basis": {"kind": "polynomial", "degree": 0},
        "penalty": {"eps": 0.001},
    },
    "mean-field-continuity": {
        "task": "continuity",
        "particles": 10000,
        "grid": {"t0": 0.0, "T": 1.0, "n_steps": 50},
        "forward": {"preset": "affine", "s0": 1.0, "c1": -0.5, "c2": 0.5},
        "initial": {"kind": "gaussian", "mean": 0.0, "std": 1.0},
        "operator": {"kind": "normal_cone_interval", "lo": 0.0, "hi": "inf"},
        "driver": {"preset": "lipschitz_mix", "alpha": 0.3, "beta": 0.2, "gamma": -0.5, "kappa": 0.3},
        "terminal": {"preset": "positive_part"},
        "basis": {"kind": "polynomial", "degree": 3},
        "penalty": {"eps": 0.05},
        "continuity": {"scales": [0.1, 0.01, 0.001], "g": "bump"},
    },
}


def experiment_names() -> list[str]:
    return sorted(EXPERIMENTS)
