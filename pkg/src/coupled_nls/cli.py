"""Config-driven runner: ``coupled-nls {spectrum,solve,verify} --config FILE``.

Exit codes: 0 success, 1 solver or verification failure, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import ast
import copy
import csv
import hashlib
import json
import logging
import operator
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import scipy.sparse as sp
import yaml

from . import __version__
from .errors import SolverError
from .functionals import FunctionalContext
from .grid import GridMode, GridSpec, build_grid
from .model import (CUSTOM_REGISTRY, PotentialSet, PowerSum, ProblemSpec, QuarticCoupled, check_hypotheses,
                    potential_family)
from .pencil import sign_normalize, solve_pencil
from .solver import SolverConfig, find_critical_point
from .verify import residual_check, run_suites

log = logging.getLogger("coupled_nls")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

DEFAULT_GRID = {"dimension": 3, "radius": 12.0, "n_nodes": 400, "mode": "radial"}
DEFAULT_POTENTIALS = {
    "b1": {"family": "harmonic", "offset": 1.0, "curvature": 1.0},
    "b2": {"family": "harmonic", "offset": 1.0, "curvature": 1.0},
    "V1": 1.0,
    "V2": 1.0,
    "gamma": 1.0,
}
PRESET_NONLINEARITY = {
    "quartic_coupled": {"kind": "quartic_coupled", "theta": 1.0},
    "power_sum": {"kind": "power_sum", "c1": 1.0, "c2": 1.0, "p1": 4.0, "p2": 4.0, "theta": 1.0},
}


class ConfigError(ValueError):
    pass


# --- config ---------------------------------------------------------------------

def _schema() -> dict:
    text = resources.files("coupled_nls").joinpath("schema/experiment.schema.json").read_text()
    return json.loads(text)


def load_config(path) -> dict:
    """Parse a YAML or JSON file, validate it and fill in preset defaults."""
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return normalize_config(raw)


def normalize_config(raw) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    try:
        jsonschema.validate(raw, _schema())
    except jsonschema.ValidationError as exc:
        loc = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {loc}: {exc.message}") from exc
    cfg = copy.deepcopy(raw)
    prob = cfg["problem"]
    preset = prob.get("preset")
    prob["grid"] = {**DEFAULT_GRID, **prob.get("grid", {})}
    prob["potentials"] = {**DEFAULT_POTENTIALS, **prob.get("potentials", {})}
    if "nonlinearity" not in prob:
        if preset is None:
            raise ConfigError("problem needs either a preset or a nonlinearity block")
        prob["nonlinearity"] = dict(PRESET_NONLINEARITY[preset])
    elif preset is not None and prob["nonlinearity"]["kind"] in PRESET_NONLINEARITY:
        prob["nonlinearity"] = {**PRESET_NONLINEARITY[prob["nonlinearity"]["kind"]], **prob["nonlinearity"]}
    cfg.setdefault("lambdas", [0.0])
    cfg.setdefault("solver", {})
    cfg.setdefault("outputs", {})
    cfg["outputs"] = {"dir": "out", "formats": ["json", "csv"], **cfg["outputs"]}
    cfg.setdefault("verify", {})
    cfg["verify"] = {"count": 1000, "corrupt_stencil": False, **cfg["verify"]}
    cfg.setdefault("seed", 0)
    cfg.setdefault("workers", 1)
    lams = cfg["lambdas"]
    if isinstance(lams, list) and not lams or isinstance(lams, dict) and lams["num"] < 1:
        raise ConfigError("lambdas must be nonempty")
    try:
        SolverConfig(**cfg["solver"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"solver block: {exc}") from exc
    return cfg


def _echo(cfg: dict) -> dict:
    """Config as recorded in outputs; the output directory is excluded so results can be compared across runs."""
    out = copy.deepcopy(cfg)
    out["outputs"].pop("dir", None)
    return out


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(_echo(cfg), sort_keys=True).encode()).hexdigest()


def _potential(spec):
    if isinstance(spec, (int, float)):
        return potential_family("constant", value=float(spec))
    params = {k: v for k, v in spec.items() if k != "family"}
    return potential_family(spec["family"], **params)


def _nonlinearity(spec: dict):
    kind = spec["kind"]
    theta = float(spec.get("theta", 1.0))
    if kind == "quartic_coupled":
        return QuarticCoupled(theta=theta)
    if kind == "power_sum":
        return PowerSum(spec.get("c1", 1.0), spec.get("c2", 1.0), spec.get("p1", 4.0), spec.get("p2", 4.0), theta)
    return CUSTOM_REGISTRY[kind]()


def build_problem(cfg: dict, lam: float = 0.0) -> ProblemSpec:
    prob = cfg["problem"]
    g = prob["grid"]
    try:
        grid = build_grid(GridSpec(int(g["dimension"]), float(g["radius"]), int(g["n_nodes"]), GridMode(g["mode"])))
        pots = prob["potentials"]
        pset = PotentialSet.sample(grid, *(_potential(pots[k]) for k in ("b1", "b2", "V1", "V2", "gamma")))
        return ProblemSpec(grid, pset, _nonlinearity(prob["nonlinearity"]), lam)
    except ValueError as exc:
        raise ConfigError(f"problem block: {exc}") from exc


def build_context(problem: ProblemSpec, corrupt_stencil: bool = False) -> FunctionalContext:
    """Context for ``problem``; ``corrupt_stencil`` perturbs one stiffness coupling (negative control)."""
    if not corrupt_stencil:
        return FunctionalContext.from_problem(problem)
    K = sp.lil_matrix(problem.grid.stiffness)
    i = problem.grid.size // 2
    K[i, i + 1] *= 1.05
    K[i + 1, i] *= 1.05
    return FunctionalContext.from_problem(problem, stiffness=K.tocsr())


# --- lambda expressions ----------------------------------------------------------

_OPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.Div: operator.truediv,
        ast.Pow: operator.pow, ast.USub: operator.neg, ast.UAdd: operator.pos}


def eval_lambda(expr, mus) -> float:
    """Evaluate a number or an arithmetic expression in ``mu1``, ``mu2``, ..."""
    if isinstance(expr, (int, float)):
        return float(expr)
    names = {f"mu{k + 1}": float(m) for k, m in enumerate(mus)}

    def walk(node):
        if isinstance(node, ast.Expression):
            return walk(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name):
            if node.id not in names:
                raise ConfigError(f"unknown name {node.id!r} in lambda {expr!r} ({len(mus)} eigenvalues known)")
            return names[node.id]
        if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](walk(node.left), walk(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](walk(node.operand))
        raise ConfigError(f"unsupported syntax in lambda {expr!r}")

    try:
        tree = ast.parse(str(expr), mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse lambda {expr!r}") from exc
    return walk(tree)


def resolve_lambdas(cfg: dict, mus) -> list[float]:
    spec = cfg["lambdas"]
    if isinstance(spec, dict):
        return [float(v) for v in np.linspace(eval_lambda(spec["start"], mus), eval_lambda(spec["stop"], mus),
                                              spec["num"])]
    return [eval_lambda(v, mus) for v in spec]


def _needs_spectrum(cfg: dict) -> bool:
    spec = cfg["lambdas"]
    vals = [spec["start"], spec["stop"]] if isinstance(spec, dict) else spec
    return any(isinstance(v, str) for v in vals)


# --- output ----------------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path: Path, payload: dict, cfg: dict) -> None:
    body = {"version": __version__, "config_hash": config_hash(cfg), **payload, "config": _echo(cfg)}
    path.write_text(json.dumps(_jsonable(body), indent=2, sort_keys=True) + "\n")


def lambda_tag(lam: float) -> str:
    return f"{lam:.10g}"


def write_profile(path: Path, grid, state) -> None:
    r = grid.nodes
    u1, u2 = grid.extend(state.u1), grid.extend(state.u2)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["r", "u1", "u2"])
        for row in zip(r, u1, u2):
            w.writerow([f"{v:.17g}" for v in row])


# --- subcommands -------------------------------------------------------------------

def run_spectrum(cfg: dict, out: Path) -> int:
    problem = build_problem(cfg)
    ctx = build_context(problem)
    k_max = int(cfg["solver"].get("k_max", SolverConfig.k_max))
    seq = solve_pencil(ctx, k_max)
    hyp = check_hypotheses(problem)
    warnings = []
    if seq.positive_V_fails:
        warnings.append("no positive pencil eigenvalue: V1 and V2 are nowhere positive on the grid")
    payload = {
        "kind": "spectrum",
        "config": cfg,
        "eigenvalues": seq.to_table(ctx),
        "negative_mus": seq.neg_mus,
        "n_zero_modes": seq.n_zero_modes,
        "complete": seq.complete,
        "positive_V_check": {"passed": hyp["positive_V"].passed, "detail": hyp["positive_V"].detail},
        "flags": {"positive_V_fails": seq.positive_V_fails},
        "warnings": warnings,
    }
    for msg in warnings:
        log.warning(msg)
    if "json" in cfg["outputs"]["formats"]:
        write_json(out / "spectrum.json", payload, cfg)
    log.info("spectrum: %s", ", ".join(f"{m:.8g}" for m in seq.mus))
    return EXIT_OK


def solve_one(cfg: dict, lam: float, out: str | None = None) -> dict:
    """Solve for one lambda and write its files; never raises on solver failure."""
    problem = build_problem(cfg, lam)
    solver_cfg = SolverConfig(**{**cfg["solver"], "seed": int(cfg["seed"])})
    record: dict = {"lambda": lam}
    try:
        cp = find_critical_point(problem, solver_cfg)
    except SolverError as exc:
        record.update({"status": "failed", "error": type(exc).__name__, "message": str(exc),
                       "info": {k: v for k, v in exc.info.items() if k != "trace"}})
    else:
        r1, r2 = residual_check(FunctionalContext.from_problem(problem), cp.state, lam)
        record.update({"status": "ok", **cp.record(), "lambda": lam, "strong_residual": [r1, r2]})
        if out is not None and "csv" in cfg["outputs"]["formats"]:
            write_profile(Path(out) / f"profile_{lambda_tag(lam)}.csv", problem.grid, cp.state)
    if out is not None and "json" in cfg["outputs"]["formats"]:
        write_json(Path(out) / f"result_{lambda_tag(lam)}.json", {"kind": "result", "config": cfg, **record}, cfg)
    return record


def run_solve(cfg: dict, out: Path) -> int:
    mus: list[float] = []
    if _needs_spectrum(cfg):
        problem = build_problem(cfg)
        seq = solve_pencil(FunctionalContext.from_problem(problem), int(cfg["solver"].get("k_max", SolverConfig.k_max)))
        mus = list(seq.mus)
    lams = resolve_lambdas(cfg, mus)
    if not lams:
        raise ConfigError("lambdas must be nonempty")
    workers = int(cfg["workers"])
    if workers > 1 and len(lams) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(solve_one, [cfg] * len(lams), lams, [str(out)] * len(lams)))
    else:
        records = [solve_one(cfg, lam, str(out)) for lam in lams]
    with (out / "sweep.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lambda", "m", "d", "residual", "norm_u1", "norm_u2", "iters", "status"])
        for rec in records:
            if rec["status"] == "ok":
                w.writerow([f"{rec['lambda']:.17g}", rec["m"], f"{rec['level']:.17g}", f"{rec['residual']:.17g}",
                            f"{rec['norm_u1']:.17g}", f"{rec['norm_u2']:.17g}", rec["iterations"], "ok"])
            else:
                w.writerow([f"{rec['lambda']:.17g}", "", "", "", "", "", "", rec["error"]])
    for rec in records:
        if rec["status"] == "ok":
            log.info("lambda=%.6g m=%d level=%.10g residual=%.3g", rec["lambda"], rec["m"], rec["level"],
                     rec["residual"])
        else:
            log.warning("lambda=%.6g failed: %s", rec["lambda"], rec["message"])
    return EXIT_OK if any(r["status"] == "ok" for r in records) else EXIT_FAIL


def run_verify(cfg: dict, out: Path) -> int:
    lam = resolve_lambdas(cfg, [])[0] if not _needs_spectrum(cfg) else 0.0
    problem = build_problem(cfg, lam)
    normalized = sign_normalize(problem)
    ctx = build_context(normalized, cfg["verify"]["corrupt_stencil"])
    hyp = check_hypotheses(problem)
    report = run_suites(ctx, normalized.lam, count=int(cfg["verify"]["count"]), seed=int(cfg["seed"]),
                        hypotheses=hyp)
    payload = {"kind": "verification", "config": cfg, "lambda": lam, **report.to_dict()}
    if "json" in cfg["outputs"]["formats"]:
        write_json(out / "verification.json", payload, cfg)
    for name, chk in report.checks.items():
        log.info("%-20s %s", name, "pass" if chk["passed"] else "FAIL")
    if not hyp.passed:
        log.warning("hypothesis failures: %s", ", ".join(hyp.failures()))
    return EXIT_OK if report.passed else EXIT_FAIL


COMMANDS = {"spectrum": run_spectrum, "solve": run_solve, "verify": run_verify}


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coupled-nls", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML or JSON experiment file")
        p.add_argument("--out", help="output directory (overrides outputs.dir)")
        p.add_argument("--seed", type=int, help="random seed (overrides the config)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.out is not None:
            cfg["outputs"]["dir"] = args.out
        out = Path(cfg["outputs"]["dir"])
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except SolverError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
