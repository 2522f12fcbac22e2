"""Experiment runner: resolved config in, CSV/JSON/SVG artifacts out.

Every artifact is a pure function of the resolved config, so the thread count
is deliberately not part of it. Floats are written with ``repr`` (shortest
round-trip form) and JSON keys are sorted, which makes outputs byte-stable.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from . import monotone_ops as mo
from . import presets
from .backward_solver import (
    BackwardProblem,
    BackwardSolution,
    PenalizationSchedule,
    PicardSettings,
    epsilon_sweep,
    terminal_continuity_probe,
    verify_skorokhod,
)
from .config import ExperimentConfig
from .errors import ConfigError, MVBSDEError, NumericalError, ValidationError
from .forward_mvsde import BrownianDriver, LawFlow, PathBundle, TimeGrid, simulate_mckean
from .pvi import FDGrid, Model, compare_probabilistic_vs_fd, evaluate_u
from .regression import RegressionBasis

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3


# Building objects from a config ---------------------------------------------


def build_model(cfg: ExperimentConfig, threads: int = 1) -> Model:
    d = cfg.data
    try:
        grid = TimeGrid(float(d["grid"]["t0"]), float(d["grid"]["T"]), int(d["grid"]["n_steps"]))
        basis = RegressionBasis(**d["basis"])
        picard = PicardSettings(int(d["picard"]["max_iters"]), float(d["picard"]["tol"]),
                                d["picard"].get("metric", "synchronous"))
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    coeffs = presets.forward_from_config(d["forward"])
    driver = presets.driver_from_config(d["driver"])
    coeffs.spot_check()
    driver.spot_check()
    return Model(
        coeffs=coeffs,
        initial=presets.initial_from_config(d["initial"]),
        op=mo.from_config(d["operator"]),
        driver=driver,
        terminal=presets.terminal_from_config(d["terminal"]),
        basis=basis,
        grid=grid,
        n_particles=int(d["particles"]),
        seed=int(d["seed"]),
        eps=float(d["penalty"]["eps"]),
        picard=picard,
        threads=threads,
    )


@dataclass
class _Base:
    model: Model
    paths: PathBundle
    flow: LawFlow
    problem: BackwardProblem


def _base(model: Model) -> _Base:
    noise = BrownianDriver(model.seed, model.n_particles, model.coeffs.l, stream="forward")
    paths, flow = simulate_mckean(model.coeffs, model.grid, model.initial, noise, model.seed, model.threads)
    model.terminal.check_domain(model.op, paths.at(model.grid.n_steps), flow.laws[-1])
    problem = BackwardProblem(paths, model.op, model.driver, model.terminal, model.basis, noise, flow,
                              model.picard, model.threads)
    return _Base(model, paths, flow, problem)


def build_problem(model: Model) -> BackwardProblem:
    """Simulate the forward particle system and return the backward problem on it."""
    return _base(model).problem


# Serialization helpers ------------------------------------------------------


def _clean(obj: Any) -> Any:
    """JSON-safe copy: numpy to Python, non-finite floats to null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def dumps_json(obj: Any) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _fmt(v: Any) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header: list[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    path.write_bytes(buf.getvalue().encode("utf-8"))


def _paths_rows(paths: PathBundle, sol: BackwardSolution, limit: int):
    n, n_nodes, m = paths.values.shape
    d = sol.y.shape[2]
    l = sol.z.shape[3]
    header = (["particle", "step", "t"] + [f"x{i}" for i in range(m)] + [f"y{i}" for i in range(d)]
              + [f"z{i}_{j}" for i in range(d) for j in range(l)] + [f"k{i}" for i in range(d)])
    times = paths.grid.times

    def rows():
        for p in range(min(n, limit)):
            for k in range(n_nodes):
                z = sol.z[p, k].reshape(-1) if k < n_nodes - 1 else [math.nan] * (d * l)
                yield [p, k, times[k], *paths.values[p, k], *sol.y[p, k], *z, *sol.k[p, k]]

    return header, rows()


def _solution_rows(paths: PathBundle, sol: BackwardSolution):
    header = ["step", "t", "x_mean", "y_mean", "y_std", "z_mean", "k_mean"]
    times = paths.grid.times
    n_steps = paths.grid.n_steps
    rows = []
    for k in range(n_steps + 1):
        y = sol.y[:, k, 0]
        z_mean = float(sol.z[:, k].mean()) if k < n_steps else math.nan
        rows.append([k, times[k], float(paths.values[:, k, 0].mean()), float(y.mean()),
                     float(y.std(ddof=1)) if y.size > 1 else 0.0, z_mean, float(sol.k[:, k, 0].mean())])
    return header, rows


def _write_solution(out: Path, base: _Base, sol: BackwardSolution, max_paths: int) -> None:
    write_csv(out / "paths.csv", *_paths_rows(base.paths, sol, max_paths))
    write_csv(out / "solution.csv", *_solution_rows(base.paths, sol))


def _solution_summary(sol: BackwardSolution, op: mo.MonotoneOperator, probes) -> dict[str, Any]:
    diag = sol.diagnostics
    return {
        "eps": sol.eps,
        "y0_mean": diag["y0_mean"],
        "y0_stderr": diag["y0_stderr"],
        "norms": {k: diag[k] for k in ("sup_norm_y", "l2_norm_z", "k_total_variation")},
        "picard": {"iters": diag["picard_iters"], "residuals": diag["picard_residuals"],
                   "converged": diag.get("picard_converged")},
        "skorokhod": verify_skorokhod(sol, op, probes),
    }


def write_compare_svg(path: Path, rows: list[dict[str, Any]], title: str) -> None:
    """Overlay of both routes; the hash salt and date are pinned so the bytes are stable."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "mvbsde", "svg.fonttype": "path"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        xs = [r["x"] for r in rows]
        ax.plot(xs, [r["u_fd"] for r in rows], "-", label="finite differences")
        ax.errorbar(xs, [r["u_prob"] for r in rows], yerr=[3 * r["stderr"] for r in rows], fmt="o",
                    capsize=3, label="particles (3 s.e.)")
        ax.set_xlabel("x")
        ax.set_ylabel("u(t, x)")
        ax.set_title(title)
        ax.legend()
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


# Tasks ----------------------------------------------------------------------


def _task_solve(cfg: ExperimentConfig, base: _Base, out: Path, probes) -> dict[str, Any]:
    model = base.model
    sol = base.problem.solve(model.eps)
    _write_solution(out, base, sol, cfg["outputs"]["max_paths"])
    query = cfg["query"]
    t, x = float(query["t"]), query["x"]
    k0 = model.grid.snap(t)
    starts_at_query = (model.initial.kind == "constant" and k0 == 0
                       and float(model.initial.params.get("value", 0.0)) == float(x))
    if starts_at_query:
        # Started from the Dirac mass at x, the decoupled paths are the particle
        # paths bit for bit, so the value query would repeat this very solve.
        value, stderr = sol.diagnostics["y0_mean"][0], sol.diagnostics["y0_stderr"][0]
        t_node, snapped = model.grid.t0, t != model.grid.t0
    else:
        est = evaluate_u(model, t, x)
        value, stderr, t_node, snapped = float(est.value[0]), float(est.std_error[0]), est.t, est.snapped
    return {
        **_solution_summary(sol, model.op, probes),
        "u0": value,
        "u0_stderr": stderr,
        "query": {"t": t_node, "x": x, "snapped": snapped},
    }


def _task_sweep(cfg: ExperimentConfig, base: _Base, out: Path, probes) -> dict[str, Any]:
    schedule = PenalizationSchedule(tuple(cfg["penalty"]["schedule"]))
    res = epsilon_sweep(schedule, base.problem)
    rows, checks = [], {}
    for i, e in enumerate(res.eps):
        sk = verify_skorokhod(res.solutions[e], base.model.op, probes)
        checks[repr(e)] = sk
        rows.append([e, res.distances[i] if i < len(res.distances) else math.nan,
                     res.solutions[e].diagnostics["y0_mean"][0],
                     res.solutions[e].diagnostics["k_total_variation"], sk["max_violation"],
                     sk["domain_violation"]])
    write_csv(out / "sweep.csv", ["eps", "l2_to_next", "y0_mean", "k_total_variation", "max_violation",
                                  "domain_violation"], rows)
    finest = res.solutions[res.eps[-1]]
    _write_solution(out, base, finest, cfg["outputs"]["max_paths"])
    return {**_solution_summary(finest, base.model.op, probes), "sweep": res.summary(),
            "eps_rate": res.rate, "skorokhod_by_eps": checks}


def _task_compare(cfg: ExperimentConfig, base: _Base, out: Path, probes) -> dict[str, Any]:
    model = base.model
    sol = base.problem.solve(model.eps)
    _write_solution(out, base, sol, cfg["outputs"]["max_paths"])
    c = cfg["compare"]
    fd_grid = FDGrid(float(c["x_lo"]), float(c["x_hi"]), int(c["n_x"]), c["boundary"])
    res = compare_probabilistic_vs_fd(model, model.eps, c["x"], fd_grid, float(cfg["query"]["t"]))
    write_csv(out / "compare.csv", ["x", "u_prob", "stderr", "u_fd", "abs_diff"],
              [[r["x"], r["u_prob"], r["stderr"], r["u_fd"], r["abs_diff"]] for r in res["table"]])
    if cfg["outputs"].get("plot", True):
        write_compare_svg(out / "plot.svg", res["table"], f"eps = {model.eps:g}")
    return {**_solution_summary(sol, model.op, probes),
            "compare": {k: res[k] for k in ("sup_error", "statistical_budget", "discretization_budget")}}


def _task_continuity(cfg: ExperimentConfig, base: _Base, out: Path, probes) -> dict[str, Any]:
    model = base.model
    c = cfg["continuity"]
    rows = terminal_continuity_probe(base.problem, model.eps, c["scales"], presets.perturbation(c["g"]))
    sol = base.problem.solve(model.eps)
    _write_solution(out, base, sol, cfg["outputs"]["max_paths"])
    write_csv(out / "continuity.csv", ["scale", "ratio", "mean_sup_dy2", "mean_dxi2"],
              [[r["scale"], r["ratio"], r["mean_sup_dy2"], r["mean_dxi2"]] for r in rows])
    ratios = [r["ratio"] for r in rows if math.isfinite(r["ratio"])]
    spread = (max(ratios) - min(ratios)) / max(ratios) if ratios and max(ratios) > 0 else math.nan
    return {**_solution_summary(sol, model.op, probes), "continuity": {"rows": rows, "relative_spread": spread}}


TASK_RUNNERS = {"solve": _task_solve, "sweep": _task_sweep, "compare": _task_compare,
                "continuity": _task_continuity}


def error_payload(exc: BaseException) -> tuple[int, dict[str, Any]]:
    if isinstance(exc, ValidationError):
        code = EXIT_VALIDATION
    elif isinstance(exc, NumericalError):
        code = EXIT_NUMERICAL
    else:
        raise exc
    body = {"error": exc.code if isinstance(exc, MVBSDEError) else type(exc).__name__,
            "message": str(exc), "exit_code": code}
    for attr in ("particle", "step"):
        if getattr(exc, attr, None) is not None:
            body[attr] = getattr(exc, attr)
    return code, body


def run(cfg: ExperimentConfig, out_dir: str | Path | None = None, threads: int = 1) -> tuple[int, dict[str, Any]]:
    """Run one experiment and write its artifacts.

    Returns ``(exit_code, summary_or_error)``. Validation failures give exit 2
    and numerical failures exit 3; both write ``error.json`` instead of a summary.
    """
    out = Path(out_dir if out_dir is not None else cfg["outputs"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.toml").write_text(cfg.to_toml(), encoding="utf-8")
    try:
        model = build_model(cfg, threads)
        base = _base(model)
        probes = mo.graph_probes(model.op, int(cfg["skorokhod"]["probes"]), model.seed)
        body = TASK_RUNNERS[cfg["task"]](cfg, base, out, probes)
    except (ValidationError, NumericalError) as exc:
        code, err = error_payload(exc)
        err["config_hash"] = cfg.hash
        (out / "error.json").write_text(dumps_json(err), encoding="utf-8")
        return code, err
    summary = {"task": cfg["task"], "preset": cfg.data.get("preset"), "config_hash": cfg.hash,
               "seed": cfg["seed"], "particles": cfg["particles"], **body}
    (out / "summary.json").write_text(dumps_json(summary), encoding="utf-8")
    return EXIT_OK, _clean(summary)


# Operator property suite ----------------------------------------------------


VALIDATION_TOL = 1e-9
_EPS_LEVELS = np.geomspace(1e-3, 1.0, 16)


def _rel(err, scale):
    return np.asarray(err, dtype=float) / (1.0 + np.asarray(scale, dtype=float))


def _check_kind(op: mo.MonotoneOperator, samples: int, seed: int, salt: str) -> dict[str, float]:
    from . import rng

    idx = np.arange(samples)
    shape_dim = op.dim
    x_all = 5.0 * rng.normals(seed, f"validate-x-{salt}", 0, idx, shape_dim)
    xp_all = 5.0 * rng.normals(seed, f"validate-xp-{salt}", 0, idx, shape_dim)
    bucket = idx % _EPS_LEVELS.size
    lam_bucket = (idx // _EPS_LEVELS.size) % _EPS_LEVELS.size
    worst = {"nonexpansive": 0.0, "yosida_lipschitz": 0.0, "monotonicity": 0.0, "graph_membership": 0.0,
             "yosida_resolvent_identity": 0.0, "certificate": 0.0}
    cert = mo.coercivity_certificate(op)
    for b in range(_EPS_LEVELS.size):
        for lb in range(_EPS_LEVELS.size):
            sel = (bucket == b) & (lam_bucket == lb)
            if not sel.any():
                continue
            eps, lam = float(_EPS_LEVELS[b]), float(_EPS_LEVELS[lb])
            x, xp = x_all[sel], xp_all[sel]
            if op.dim == 1:
                x, xp = x[:, 0], xp[:, 0]
            j, jp = mo.resolvent(op, eps, x), mo.resolvent(op, eps, xp)
            dx = op.norm(x - xp)
            worst["nonexpansive"] = max(worst["nonexpansive"], float(np.max(_rel(op.norm(j - jp) - dx, dx))))
            a, ap = mo.yosida(op, eps, x), mo.yosida(op, eps, xp)
            worst["yosida_lipschitz"] = max(worst["yosida_lipschitz"],
                                            float(np.max(_rel(eps * op.norm(a - ap) - dx, dx))))
            # graph monotonicity on the pairs (J x, A_eps x), which lie in Gr(A)
            mono = -op.inner(j - jp, a - ap)
            worst["monotonicity"] = max(worst["monotonicity"],
                                        float(np.max(_rel(mono, op.norm(j - jp) * op.norm(a - ap)))))
            proj = op.project_image(j, a)
            dist = op.norm(a - proj)
            dist = np.where(np.isnan(dist), np.inf, dist)
            worst["graph_membership"] = max(worst["graph_membership"], float(np.max(_rel(dist, op.norm(a)))))
            y = mo.yosida_resolvent(op, eps, lam, x)
            r1 = op.norm(y + lam * mo.yosida(op, eps, y) - x)
            r2 = lam * op.norm((x - y) / lam - mo.yosida(op, eps + lam, x))
            worst["yosida_resolvent_identity"] = max(worst["yosida_resolvent_identity"],
                                                     float(np.max(_rel(np.maximum(r1, r2), op.norm(x)))))
            gap = mo.certificate_gap(op, cert, eps, x)
            worst["certificate"] = max(worst["certificate"],
                                       float(np.max(_rel(-gap, op.norm(a) * (1.0 + op.norm(x))))))
    return {k: max(v, 0.0) for k, v in worst.items()}


def validate_operators(samples: int = 10_000, seed: int = 0,
                       operators: dict[str, mo.MonotoneOperator] | None = None) -> dict[str, Any]:
    """Run the operator property suite; ``passed`` is False if any invariant fails."""
    if samples < 1:
        raise ValidationError("samples must be positive")
    ops = operators if operators is not None else mo.shipped_operators()
    kinds, failures = {}, []
    for name in sorted(ops):
        residuals = _check_kind(ops[name], samples, seed, name)
        failed = [k for k, v in residuals.items() if not v <= VALIDATION_TOL]
        failures.extend({"kind": name, "invariant": k, "residual": residuals[k]} for k in failed)
        kinds[name] = {"max_residuals": residuals, "failed": failed}
    return {"samples": samples, "seed": seed, "tolerance": VALIDATION_TOL, "kinds": kinds,
            "failures": failures, "passed": not failures}
