"""Experiment configuration: TOML text, defaults, presets and ``--set`` overrides.

The resolved config is a plain nested dict. Its canonical text is produced by
``tomli_w`` with sorted keys, and its hash is the git blob SHA-1 of that text,
so two configs hash equal exactly when their canonical files are identical.
See ``docs/config.md`` for the grammar.
"""

from __future__ import annotations

import copy
import hashlib
from pathlib import Path
from typing import Any

import tomli
import tomli_w

from .errors import ConfigError

TASKS = ("solve", "sweep", "compare", "continuity")

DEFAULTS: dict[str, Any] = {
    "task": "solve",
    "seed": 0,
    "particles": 10000,
    "grid": {"t0": 0.0, "T": 1.0, "n_steps": 50},
    "forward": {"preset": "affine", "s0": 1.0},
    "initial": {"kind": "constant", "value": 0.0},
    "operator": {"kind": "zero"},
    "driver": {"preset": "zero"},
    "terminal": {"preset": "identity"},
    "basis": {"kind": "polynomial", "degree": 2, "n_bins": 16, "saturate": False, "ridge": 1e-8},
    "penalty": {"eps": 0.05, "schedule": [0.2, 0.1, 0.05, 0.025]},
    "picard": {"max_iters": 20, "tol": 1e-10, "metric": "synchronous"},
    "query": {"t": 0.0, "x": 0.0},
    "compare": {"x": [-2.0, -1.0, 0.0, 1.0, 2.0], "x_lo": -6.0, "x_hi": 6.0, "n_x": 401,
                "boundary": "dirichlet-from-terminal"},
    "continuity": {"scales": [0.1, 0.01, 0.001], "g": "bump"},
    "skorokhod": {"probes": 20},
    "outputs": {"dir": "out", "max_paths": 64, "plot": True},
}

# Tables whose content is replaced wholesale rather than merged, because their
# keys depend on the chosen kind or preset.
_REPLACED = ("forward", "initial", "operator", "driver", "terminal")


def _merge(base: dict[str, Any], over: dict[str, Any]) -> dict[str, Any]:
    out = copy.deepcopy(base)
    for key, value in over.items():
        if key in _REPLACED and isinstance(value, dict):
            out[key] = copy.deepcopy(value)
        elif isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _parse_scalar(text: str) -> Any:
    """A ``--set`` value is read as a TOML value; anything unparsable is a bare string."""
    try:
        return tomli.loads(f"v = {text}")["v"]
    except tomli.TOMLDecodeError:
        return text


def _normalize(obj: Any) -> Any:
    """Coerce tuples and numpy scalars to the plain types TOML writers accept."""
    if isinstance(obj, dict):
        return {str(k): _normalize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_normalize(v) for v in obj]
    if hasattr(obj, "item") and callable(obj.item):
        return obj.item()
    return obj


class ExperimentConfig:
    """A resolved, validated experiment description."""

    def __init__(self, data: dict[str, Any]):
        self.data = _normalize(data)
        self._validate()

    # construction ----------------------------------------------------------

    @classmethod
    def resolve(cls, preset: str | None = None, text: str | None = None,
                overrides: list[str] | tuple[str, ...] = ()) -> ExperimentConfig:
        """Defaults, then the named preset, then the file, then ``key=value`` overrides."""
        from .presets import EXPERIMENTS

        data = copy.deepcopy(DEFAULTS)
        if preset is not None:
            if preset not in EXPERIMENTS:
                raise ConfigError(f"unknown preset {preset!r}; known: {', '.join(sorted(EXPERIMENTS))}")
            data = _merge(data, EXPERIMENTS[preset])
            data["preset"] = preset
        if text is not None:
            data = _merge(data, cls._loads(text))
        for item in overrides:
            data = set_path(data, item)
        return cls(data)

    @classmethod
    def from_toml(cls, text: str) -> ExperimentConfig:
        """Read a complete config (as written by :meth:`to_toml`) without merging defaults."""
        return cls(cls._loads(text))

    @classmethod
    def load(cls, path: str | Path) -> ExperimentConfig:
        return cls.from_toml(Path(path).read_text(encoding="utf-8"))

    @staticmethod
    def _loads(text: str) -> dict[str, Any]:
        try:
            return tomli.loads(text)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"config is not valid TOML: {exc}") from None

    # serialization ---------------------------------------------------------

    def to_toml(self) -> str:
        return tomli_w.dumps(_sorted(self.data))

    @property
    def hash(self) -> str:
        """Git blob SHA-1 of the canonical text."""
        body = self.to_toml().encode("utf-8")
        return hashlib.sha1(b"blob %d\0" % len(body) + body).hexdigest()

    def __getitem__(self, key: str) -> Any:
        return self.data[key]

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ExperimentConfig) and self.to_toml() == other.to_toml()

    # validation ------------------------------------------------------------

    def _validate(self) -> None:
        d = self.data
        known = set(DEFAULTS) | {"preset"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        if d.get("task") not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {d.get('task')!r}")
        seed = d.get("seed")
        if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**63:
            raise ConfigError("seed must be an integer in [0, 2^63)")
        n = d.get("particles")
        if not isinstance(n, int) or isinstance(n, bool) or n < 2:
            raise ConfigError("particles must be an integer >= 2")
        for table in ("grid", "forward", "initial", "operator", "driver", "terminal", "basis", "penalty", "picard"):
            if not isinstance(d.get(table), dict):
                raise ConfigError(f"[{table}] must be a table")


def _sorted(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: _sorted(obj[k]) for k in sorted(obj)}
    return obj


def set_path(data: dict[str, Any], item: str) -> dict[str, Any]:
    """Apply one ``dotted.key=value`` override and return the new dict."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, _, raw = item.partition("=")
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError(f"override {item!r} has an empty key")
    out = copy.deepcopy(data)
    node = out
    for p in parts[:-1]:
        nxt = node.setdefault(p, {})
        if not isinstance(nxt, dict):
            raise ConfigError(f"cannot set {key}: {p} is not a table")
        node = nxt
    node[parts[-1]] = _parse_scalar(raw.strip())
    return out
