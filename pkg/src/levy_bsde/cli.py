"""Command-line entry point: ``levy-bsde run <config>``, ``list [filter]``, ``version``.

Exit status of ``run``: 0 when the experiment's verdict passes, 2 when it
fails, 1 on any configuration or execution error.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import os
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from ._io import write_csv, write_json
from .analysis import INACTIVE, estimate_norms, stability_sweep, truncation_convergence_study
from .assumptions import SamplerConfig, check_gamma, check_growth, check_monotonicity, check_rho_bounds
from .comparison import PreconditionError, comparison_experiment
from .generators import REGISTRY, make_generator
from .inequalities import bihari_bound, gronwall_bound
from .levy import LevyModel, TimeGrid, ValidationError, simulate_forward
from .rho import FAMILIES, RhoFunction
from .solver import TERMINALS, SchemeConfig, make_terminal, solve_bsde

EXIT_PASS, EXIT_ERROR, EXIT_FAIL = 0, 1, 2

_num = {"type": "number"}
_vec = {"type": "array", "items": _num}
_gen = {
    "type": "object",
    "properties": {"id": {"enum": sorted(REGISTRY)}, "p": {"type": "number", "exclusiveMinimum": 1},
                   "params": {"type": "object"}},
    "required": ["id"],
    "additionalProperties": False,
}
_term = {
    "type": "object",
    "properties": {"id": {"enum": list(TERMINALS)}, "scale": _num, "shift": _num, "value": _num},
    "required": ["id"],
    "additionalProperties": False,
}
_rho = {
    "type": "object",
    "properties": {"family": {"enum": list(FAMILIES)}, "L": _num, "x_star": _num},
    "required": ["family"],
    "additionalProperties": False,
}


def _experiment(name: str, props: dict, required=()) -> dict:
    return {
        "type": "object",
        "properties": {"type": {"const": name}, **props},
        "required": ["type", *required],
        "additionalProperties": False,
    }


EXPERIMENTS = {
    "solve": _experiment("solve", {"dump_paths": {"type": "boolean"}}),
    "sweep": _experiment("sweep", {"scales": _vec, "slack_se": _num, "p": _num, "blowup_factor": _num}),
    "compare": _experiment("compare", {
        "generator_prime": _gen, "terminal_prime": _term,
        "tol": {"oneOf": [_num, {"type": "null"}]},
        "preflight": {"type": "boolean"}, "posthoc": {"type": "boolean"},
        "sampler_seed": {"type": "integer", "minimum": 0},
    }, required=("generator_prime", "terminal_prime")),
    "truncate": _experiment("truncate", {
        "levels": {"type": "array", "items": {"oneOf": [_num, {"const": INACTIVE}]}},
        "r": _num, "p": _num, "slack_se": _num,
    }),
    "check": _experiment("check", {
        "checks": {"type": "array", "items": {"enum": ["monotonicity", "growth", "gamma", "rho_bounds"]}},
        "n_samples": {"type": "integer", "minimum": 1}, "seed": {"type": "integer", "minimum": 0},
        "tolerance": _num, "r": _num, "p_values": _vec,
        "y_bound": _num, "z_bound": _num, "u_bound": _num,
    }),
    "bihari": _experiment("bihari", {"c": _num, "K": {"oneOf": [_num, _vec]}, "rho": _rho},
                          required=("c", "K", "rho")),
}

_NEEDS = {
    "solve": ("model", "ensemble", "generator", "terminal"),
    "sweep": ("model", "ensemble", "generator", "terminal"),
    "compare": ("model", "ensemble", "generator", "terminal"),
    "truncate": ("model", "ensemble", "generator", "terminal"),
    "check": ("model", "generator"),
    "bihari": (),
}

SCHEMA = {
    "type": "object",
    "properties": {
        "model": {
            "type": "object",
            "properties": {
                "d": {"type": "integer", "minimum": 1},
                "k": {"type": "integer", "minimum": 0},
                "a": _vec,
                "sigma": {"type": "array", "items": _vec},
                "atoms": {"type": "array", "items": {
                    "type": "object",
                    "properties": {"mark": _vec, "intensity": _num},
                    "required": ["mark", "intensity"],
                    "additionalProperties": False,
                }},
            },
            "required": ["d", "k", "a", "sigma"],
            "additionalProperties": False,
        },
        "grid": {
            "type": "object",
            "properties": {"T": _num, "N": {"type": "integer", "minimum": 1}},
            "required": ["T", "N"],
            "additionalProperties": False,
        },
        "ensemble": {
            "type": "object",
            "properties": {"M": {"type": "integer", "minimum": 1},
                           "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1}},
            "required": ["M", "seed"],
            "additionalProperties": False,
        },
        "generator": _gen,
        "terminal": _term,
        "scheme": {
            "type": "object",
            "properties": {
                "basis_degree": {"type": "integer", "minimum": 0},
                "implicit_method": {"enum": ["fixed_point", "bisection"]},
                "damping": _num, "implicit_tol": _num,
                "max_iter": {"type": "integer", "minimum": 1}, "ridge": _num,
            },
            "additionalProperties": False,
        },
        "experiment": {"oneOf": list(EXPERIMENTS.values())},
        "output": {"type": "string"},
    },
    "required": ["grid", "experiment"],
    "additionalProperties": False,
    "allOf": [
        {"if": {"properties": {"experiment": {"properties": {"type": {"const": name}}}}},
         "then": {"required": list(need)}}
        for name, need in _NEEDS.items() if need
    ],
}


class ConfigError(ValueError):
    pass


def load_config(path) -> tuple[dict, bytes]:
    raw = Path(path).read_bytes()
    try:
        cfg = json.loads(raw.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise ConfigError(f"{path}: not UTF-8: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    validate_config(cfg, str(path))
    return cfg, raw


def validate_config(cfg: dict, source: str = "config") -> None:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"{source}: invalid field '{where}': {err.message}")


def build_model(block: dict) -> LevyModel:
    atoms = block.get("atoms", [])
    d, k = block["d"], block["k"]
    marks = [a["mark"] for a in atoms] if atoms else None
    lam = [a["intensity"] for a in atoms] if atoms else None
    sigma = block["sigma"] if k else np.zeros((d, 0))
    return LevyModel(d, k, block["a"], sigma, marks, lam)


def build_scheme(block: dict | None) -> SchemeConfig:
    return SchemeConfig(**(block or {}))


def _generator(block, model, grid):
    return make_generator(block["id"], model, grid, p=block.get("p", 2.0), **block.get("params", {}))


def _terminal(block):
    return make_terminal(block["id"], **{k: v for k, v in block.items() if k != "id"})


def _verdict_code(passed: bool) -> int:
    return EXIT_PASS if passed else EXIT_FAIL


def _run_solve(cfg, ctx):
    sol = solve_bsde(ctx["spec"], _terminal(cfg["terminal"]), ctx["ensemble"], ctx["grid"], ctx["scheme"])
    out = ctx["out"]
    sol.write_csv(out / "solution.csv")
    write_json(out / "diagnostics.json", sol.diagnostics_json())
    if cfg["experiment"].get("dump_paths"):
        ctx["ensemble"].write_csv(out / "paths.csv")
    finite = all(np.all(np.isfinite(a)) for a in (sol.Y, sol.Z, sol.U))
    norms = estimate_norms(sol, ctx["spec"], ctx["grid"], ctx["spec"].p)
    report = {"experiment": "solve", "Y0_mean": sol.Y[:, 0].mean(axis=0), "norms": norms.to_json(),
              "finite": finite, "pass": finite}
    return report, _verdict_code(finite)


def _run_sweep(cfg, ctx):
    e = cfg["experiment"]
    kw = {k: e[k] for k in ("slack_se", "p", "blowup_factor") if k in e}
    if "scales" in e:
        kw["scales"] = e["scales"]
    rep = stability_sweep(ctx["spec"], _terminal(cfg["terminal"]), ctx["ensemble"], ctx["grid"],
                          ctx["scheme"], threads=ctx["threads"], **kw)
    rep.write_csv(ctx["out"] / "sweep.csv")
    return {"experiment": "sweep", **rep.to_json()}, _verdict_code(rep.passed)


def _run_truncate(cfg, ctx):
    e = cfg["experiment"]
    kw = {k: e[k] for k in ("r", "p", "slack_se") if k in e}
    if "levels" in e:
        kw["levels"] = e["levels"]
    tab = truncation_convergence_study(ctx["spec"], _terminal(cfg["terminal"]), ctx["ensemble"], ctx["grid"],
                                       ctx["scheme"], threads=ctx["threads"], **kw)
    tab.write_csv(ctx["out"] / "truncation.csv")
    return {"experiment": "truncate", **tab.to_json()}, _verdict_code(tab.passed)


def _run_compare(cfg, ctx):
    e = cfg["experiment"]
    spec_p = _generator(e["generator_prime"], ctx["model"], ctx["grid"])
    sampler = SamplerConfig(n_samples=20_000, seed=e.get("sampler_seed", 0))
    try:
        rep = comparison_experiment(
            ctx["spec"], spec_p, _terminal(cfg["terminal"]), _terminal(e["terminal_prime"]),
            ctx["model"], ctx["grid"], cfg["ensemble"]["M"], cfg["ensemble"]["seed"], ctx["scheme"],
            tol=e.get("tol"), sampler=sampler, preflight=e.get("preflight", True),
            posthoc=e.get("posthoc", False), threads=ctx["threads"])
    except PreconditionError as exc:
        return {"experiment": "compare", "status": "precondition_failed", "preflight": exc.report,
                "pass": False}, EXIT_FAIL
    rep.write_csv(ctx["out"] / "comparison_nodes.csv")
    return {"experiment": "compare", "status": "compared", **rep.to_json()}, _verdict_code(rep.passed)


def _run_check(cfg, ctx):
    e = cfg["experiment"]
    spec = ctx["spec"]
    sampler = SamplerConfig(
        n_samples=e.get("n_samples", 100_000), seed=e.get("seed", 0), t_range=(0.0, ctx["grid"].T),
        **{k: e[k] for k in ("y_bound", "z_bound", "u_bound") if k in e})
    tol = e.get("tolerance", 1e-9)
    checks = e.get("checks", ["monotonicity", "growth", "rho_bounds"] + (["gamma"] if spec.d == 1 else []))
    reports = []
    for name in checks:
        if name == "monotonicity":
            reports.append(check_monotonicity(spec, sampler, tol))
        elif name == "growth":
            r = e.get("r", 1.0)
            psi = spec.psi(r) if spec.psi is not None else None
            reports.append(check_growth(spec, r, sampler, tol, times=ctx["grid"].nodes, psi=psi))
        elif name == "gamma":
            reports.append(check_gamma(spec, sampler, tol))
        elif name == "rho_bounds":
            for p in e.get("p_values", [spec.p]):
                reports.append(check_rho_bounds(spec.rho, p, tolerance=tol))
    passed = all(r.passed for r in reports)
    return {"experiment": "check", "reports": [r.to_json() for r in reports], "pass": passed}, _verdict_code(passed)


def _run_bihari(cfg, ctx):
    e = cfg["experiment"]
    grid = ctx["grid"]
    K = np.broadcast_to(np.asarray(e["K"], dtype=float), grid.nodes.shape)
    rho = RhoFunction.from_dict(e["rho"])
    b = bihari_bound(float(e["c"]), K, rho, grid)
    write_csv(ctx["out"] / "bound.csv", ("t", "bound", "in_domain"), b.rows())
    report = {"experiment": "bihari", "c": b.c, "rho": rho.to_dict(), "bound_at_0": float(b.bound[0]),
              "all_in_domain": bool(b.in_domain.all())}
    if rho.family == "linear" and rho.L == 1.0:
        g = gronwall_bound(b.c, K, grid)
        report["max_abs_diff_gronwall"] = float(np.max(np.abs(g - b.bound)))
    monotone = bool(np.all(np.diff(b.bound) <= 0)) and b.bound[-1] == b.c
    report["pass"] = monotone
    return report, _verdict_code(monotone)


RUNNERS = {"solve": _run_solve, "sweep": _run_sweep, "compare": _run_compare,
           "truncate": _run_truncate, "check": _run_check, "bihari": _run_bihari}


def resolve_threads(flag: int | None) -> int:
    if flag is not None:
        return max(1, flag)
    env = os.environ.get("LEVY_BSDE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"LEVY_BSDE_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def run(config_path, out_dir=None, threads: int | None = None) -> int:
    """Execute one experiment; returns the process exit status."""
    try:
        cfg, raw = load_config(config_path)
        threads = resolve_threads(threads)
        out = Path(out_dir or cfg.get("output") or "levy_bsde_out")
        out.mkdir(parents=True, exist_ok=True)
        grid = TimeGrid.uniform(cfg["grid"]["T"], cfg["grid"]["N"])
        ctx = {"grid": grid, "out": out, "threads": threads, "scheme": build_scheme(cfg.get("scheme"))}
        if "model" in cfg:
            ctx["model"] = build_model(cfg["model"])
        if "generator" in cfg:
            ctx["spec"] = _generator(cfg["generator"], ctx["model"], grid)
        kind = cfg["experiment"]["type"]
        if "ensemble" in cfg and kind != "compare":
            ctx["ensemble"] = simulate_forward(ctx["model"], grid, cfg["ensemble"]["M"],
                                               cfg["ensemble"]["seed"], threads)
        report, code = RUNNERS[kind](cfg, ctx)
    except (ConfigError, ValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:  # noqa: BLE001 - any failure inside an experiment is an execution error
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    write_json(out / "report.json", report)
    write_json(out / "manifest.json", {
        "config": str(config_path),
        "config_sha256": hashlib.sha256(raw).hexdigest(),
        "seed": cfg.get("ensemble", {}).get("seed"),
        "version": __version__,
        "experiment": kind,
        "exit_status": code,
        "threads": threads,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    })
    print(f"{kind}: {'pass' if code == EXIT_PASS else 'fail'} -> {out}")
    return code


def registry_listing(pattern: str = "") -> list[str]:
    groups = {"generators": sorted(REGISTRY), "terminals": sorted(TERMINALS), "rho": sorted(FAMILIES)}
    lines = []
    for name, ids in groups.items():
        hits = [i for i in ids if pattern in i]
        if hits:
            lines.append(f"{name}:")
            lines.extend(f"  {i}" for i in hits)
    return lines


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="levy-bsde", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=None,
                        help="worker cap (default: $LEVY_BSDE_THREADS or the CPU count)")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run the experiment described by a JSON config")
    p_run.add_argument("config")
    p_run.add_argument("--out", default=None, help="output directory (overrides the config)")
    p_list = sub.add_parser("list", help="list generator, terminal and rho ids")
    p_list.add_argument("filter", nargs="?", default="")
    sub.add_parser("version", help="print the version")
    args = parser.parse_args(argv)
    if args.command == "version":
        print(__version__)
        return 0
    if args.command == "list":
        print("\n".join(registry_listing(args.filter)))
        return 0
    return run(args.config, args.out, args.threads)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
