"""Command-line driver: ``simulate | identify | optimize | report``.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical or
identification failure. Relative output paths are resolved against the
``DDSINDY_OUT`` environment variable when it is set.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import shutil
import sys
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import benchmarks as bm
from .config import ConfigError, RunConfig, apply_overrides, dump_toml, from_dict, read_raw
from .dataset import DatasetError, SampledTrajectory, SplitSpec, add_noise, load_trajectory, save_trajectory, split_index
from .identify import (
    IdentificationError,
    SparseModel,
    _canon,
    bb_sindy,
    dd_sindy,
    evaluate_kernel,
    render_model,
    save_model,
    targets,
)
from .library import LibraryError
from .optimize import IdentifyProblem, OptimizeError, optimize_and_identify, ricker_postprocess
from .quadrature import make_rule
from .regression import RegressionError
from .simulate import SimulationError

OUT_ENV = "DDSINDY_OUT"
EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3

SUMMARY_FIELDS = [
    "run", "command", "benchmark", "form", "kinds", "quadrature", "K", "m", "lambda", "solver", "degree",
    "noise", "seed", "split", "window_lower", "window_upper", "n_active", "max_coef_error", "missing_terms",
    "rmse_train", "rmse_val", "eps", "evals",
]
COEF_FIELDS = ["run", "equation", "term", "coefficient", "true", "abs_error"]


class UsageError(Exception):
    pass


class StageError(Exception):
    """Numerical failure tagged with the pipeline stage it happened in."""

    def __init__(self, stage: str, exc: Exception):
        super().__init__(f"{stage}: {exc}")
        self.stage = stage


NUMERIC_ERRORS = (IdentificationError, RegressionError, SimulationError, LibraryError, OptimizeError,
                  np.linalg.LinAlgError, FloatingPointError, OverflowError, ZeroDivisionError)


def resolve_out(path: str | os.PathLike) -> Path:
    p = Path(path)
    root = os.environ.get(OUT_ENV)
    if root and not p.is_absolute():
        p = Path(root) / p
    return p


def _num(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, fields: list[str], rows: list[dict]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _num(r.get(k)) for k in fields})


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_json_safe(obj), indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- data


@dataclass
class LoadedData:
    traj: SampledTrajectory
    kinds: tuple[str, ...]
    split: float
    bench: bm.Benchmark | None
    truth: list[dict[str, float]] | None
    params: dict


def sidecar_path(csv_path: Path) -> Path:
    return csv_path.with_suffix(".meta.json")


def _benchmark(name: str, overrides: dict) -> bm.Benchmark:
    try:
        return bm.benchmark(name, **overrides)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None
    except TypeError as exc:
        raise UsageError(f"bad benchmark override: {exc}") from None


def load_data(cfg: RunConfig) -> LoadedData:
    d = cfg.data
    bench, truth, params, kinds = None, None, {}, None
    if d.benchmark is not None:
        bench = _benchmark(d.benchmark, d.overrides)
        try:
            traj = bench.simulate()
        except SimulationError as exc:
            raise StageError("simulate", exc) from None
        truth, params, kinds = bench.truth, bench.params, bench.model.kinds
        default_split = bench.recipe.train_fraction
    else:
        path = Path(d.path)
        try:
            traj = load_trajectory(path)
        except DatasetError as exc:
            raise UsageError(str(exc)) from None
        meta = {}
        if sidecar_path(path).exists():
            meta = json.loads(sidecar_path(path).read_text())
        truth, params, kinds = meta.get("truth"), meta.get("params", {}), meta.get("kinds")
        default_split = meta.get("train_fraction", 0.8)
    if d.noise > 0:
        traj = add_noise(traj, d.noise, d.seed)
    kinds = tuple(d.kinds or kinds or ())
    if len(kinds) != traj.n:
        raise UsageError(f"[data] kinds must list RE/DIDE for each of the {traj.n} components")
    split = d.split if d.split is not None else default_split
    return LoadedData(traj, kinds, float(split), bench, truth, dict(params or {}))


# ---------------------------------------------------------------- reports


def coefficient_rows(run: str, model: SparseModel, truth) -> tuple[list[dict], float | None, int]:
    """Per-term table; truth terms the library cannot express get no error."""
    rows: list[dict] = []
    worst, missing = None, 0
    library = {_canon(lab) for lab in model.labels}
    for j in range(model.n):
        got = {_canon(k): v for k, v in model.coefficients(j).items()}
        true = {} if truth is None else {_canon(k): float(v) for k, v in truth[j].items()}
        for term in dict.fromkeys([*true, *got]):
            row = {"run": run, "equation": j + 1, "term": term, "coefficient": got.get(term)}
            if truth is not None:
                row["true"] = true.get(term, 0.0)
                if term in library:
                    err = abs(got.get(term, 0.0) - true.get(term, 0.0))
                    row["abs_error"] = err
                    worst = err if worst is None else max(worst, err)
                else:
                    missing += 1
            rows.append(row)
    return rows, worst, missing


def trajectory_rows(traj: SampledTrajectory, model: SparseModel, cut: int) -> tuple[list[str], list[dict]]:
    A = model.design(traj)
    Y, _ = targets(traj, model.kinds)
    fitted = np.full_like(Y, np.nan)
    fitted[A.row_mask] = A.matrix @ model.xi
    names = list(traj.names or [f"x{j + 1}" for j in range(traj.n)])
    fields = ["t", "set"] + [f"{p}_{nm}" for nm in names for p in ("target", "fitted")]
    rows = []
    for i, t in enumerate(traj.times):
        r = {"t": t, "set": "train" if i < cut else "val"}
        for j, nm in enumerate(names):
            r[f"target_{nm}"] = Y[i, j]
            r[f"fitted_{nm}"] = fitted[i, j] if A.row_mask[i] else None
        rows.append(r)
    return fields, rows


def kernel_rows(traj: SampledTrajectory, model: SparseModel, bench: bm.Benchmark | None):
    """Recovered (and, for benchmarks, generating) kernels at the mean state."""
    if model.model_type != "dd" or model.window is None:
        return None
    a, b = model.window
    if bench is not None:
        a, b = min(a, bench.window[0]), max(b, bench.window[1])
    grid = np.linspace(a, b, 201)
    xbar = traj.states.mean(axis=0)
    names = list(traj.names or [f"x{j + 1}" for j in range(traj.n)])
    cols = {f"fitted_{nm}": evaluate_kernel(model, grid, xbar, component=j) for j, nm in enumerate(names)}
    inside = (grid >= model.window[0]) & (grid <= model.window[1])
    for k in cols:
        cols[k] = np.where(inside, cols[k], 0.0)
    if bench is not None:
        true = np.zeros((grid.size, traj.n))
        for term in bench.model.terms:
            lo, hi = term.window
            sel = (grid >= lo) & (grid <= hi)
            if sel.any():
                xs = np.broadcast_to(xbar, (int(sel.sum()), traj.n))
                true[sel] += term.kernel(grid[sel], xs, xbar)
        for j, nm in enumerate(names):
            cols[f"true_{nm}"] = true[:, j]
    fields = ["sigma", *cols]
    rows = [{"sigma": s, **{k: v[i] for k, v in cols.items()}} for i, s in enumerate(grid)]
    return fields, rows


def _summary(run, command, cfg: RunConfig, data: LoadedData, model, report, worst, missing, window, K, evals=None):
    return {
        "run": run,
        "command": command,
        "benchmark": cfg.data.benchmark or Path(cfg.data.path).stem,
        "form": cfg.library.form,
        "kinds": "+".join(data.kinds),
        "quadrature": cfg.quadrature.kind,
        "K": K,
        "m": data.traj.m,
        "lambda": cfg.solver.lam,
        "solver": cfg.solver.method,
        "degree": cfg.library.degree if cfg.library.form == "distributed" else cfg.library.bb_degree,
        "noise": cfg.data.noise,
        "seed": cfg.data.seed,
        "split": data.split,
        "window_lower": None if window is None else window[0],
        "window_upper": None if window is None else window[1],
        "n_active": int(np.count_nonzero(model.xi)),
        "max_coef_error": worst,
        "missing_terms": missing,
        "rmse_train": report.rmse_train,
        "rmse_val": report.rmse_val,
        "eps": report.eps,
        "evals": evals,
    }


def _metadata(command: str, cfg: RunConfig, config_path, files: list[str], extra: dict | None = None) -> dict:
    return {
        "command": command,
        "version": __version__,
        "numpy": np.__version__,
        "python": sys.version.split()[0],
        "config": None if config_path is None else str(config_path),
        "seed": cfg.data.seed,
        "files": sorted(files),
        **(extra or {}),
    }


def write_run(out: Path, run: str, command: str, cfg: RunConfig, raw: dict, config_path, data: LoadedData,
              model: SparseModel, report, window, K, evals=None, extra_summary=None, extra_meta=None) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    files = []
    save_model(model, out / "model.txt")
    (out / "model_rendered.txt").write_text(render_model(model, cfg.report.precision) + "\n")
    files += ["model.txt", "model_rendered.txt"]
    coef, worst, missing = coefficient_rows(run, model, data.truth)
    _write_csv(out / "coefficients.csv", COEF_FIELDS, coef)
    summary = _summary(run, command, cfg, data, model, report, worst, missing, window, K, evals)
    summary.update(extra_summary or {})
    fields = SUMMARY_FIELDS + [k for k in summary if k not in SUMMARY_FIELDS]
    _write_csv(out / "summary.csv", fields, [summary])
    files += ["coefficients.csv", "summary.csv"]
    cut = split_index(data.traj.m, SplitSpec(data.split)) if data.split < 1 else data.traj.m
    tf, tr = trajectory_rows(data.traj, model, cut)
    _write_csv(out / "trajectory.csv", tf, tr)
    files.append("trajectory.csv")
    kr = kernel_rows(data.traj, model, data.bench)
    if kr is not None:
        _write_csv(out / "kernel.csv", *kr)
        files.append("kernel.csv")
    if config_path is not None:
        shutil.copyfile(config_path, out / "config.toml")
        files.append("config.toml")
    (out / "config.resolved.toml").write_text(dump_toml(raw))
    files.append("config.resolved.toml")
    _write_json(out / "metadata.json", _metadata(command, cfg, config_path, files + ["metadata.json"], extra_meta))
    return summary


# ---------------------------------------------------------------- commands


def _config_from_args(args) -> tuple[RunConfig, dict]:
    raw = read_raw(args.config) if getattr(args, "config", None) else {}
    over = {
        "solver.lambda": args.lam,
        "quadrature.K": args.K,
        "quadrature.kind": args.quadrature,
        "data.seed": args.seed,
        "data.split": args.split,
        "data.noise": args.noise,
        "report.out": args.out,
    }
    if args.benchmark is not None:
        raw.setdefault("data", {}).pop("path", None)
        over["data.benchmark"] = args.benchmark
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep or "." not in key:
            raise UsageError(f"--set expects section.key=value, got {item!r}")
        over[key] = _parse_value(value)
    raw = apply_overrides(raw, over)
    return from_dict(raw), raw


def _parse_value(text: str):
    import tomli

    try:
        return tomli.loads(f"v = {text}")["v"]
    except tomli.TOMLDecodeError:
        return text


def _run_name(cfg: RunConfig, out: Path) -> str:
    return cfg.report.name or out.name


def cmd_simulate(args) -> int:
    if args.config:
        raw = apply_overrides(read_raw(args.config), {"data.benchmark": args.benchmark})
        d = raw.get("data", {})
        name, overrides = d.get("benchmark"), dict(d.get("overrides", {}))
        noise = args.noise if args.noise is not None else d.get("noise", 0.0)
        seed = args.seed if args.seed is not None else d.get("seed", 0)
    else:
        name, overrides = args.benchmark, {}
        noise, seed = args.noise or 0.0, args.seed or 0
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        overrides[key.removeprefix("data.overrides.")] = _parse_value(value)
    if name is None:
        raise UsageError("simulate needs --benchmark or a config with [data] benchmark")
    if noise < 0:
        raise UsageError("--noise must be >= 0")
    bench = _benchmark(name, overrides)
    if args.no_lookup:
        bench.recipe = replace(bench.recipe, dense_lookup=0)
    try:
        traj = bench.simulate()
    except SimulationError as exc:
        raise StageError("simulate", exc) from None
    if noise > 0:
        traj = add_noise(traj, noise, seed)
    out = resolve_out(args.out or "data")
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{name}.csv"
    save_trajectory(traj, path)
    meta = {
        "benchmark": name,
        "params": bench.params,
        "kinds": list(bench.model.kinds),
        "names": list(bench.model.names),
        "truth": bench.truth,
        "window": list(bench.window),
        "T": bench.recipe.T,
        "m": bench.recipe.m,
        "h": bench.recipe.h,
        "train_fraction": bench.recipe.train_fraction,
        "noise": noise,
        "seed": seed,
        "version": __version__,
    }
    _write_json(sidecar_path(path), meta)
    print(f"wrote {path} ({traj.m} samples on [{traj.times[0]:g}, {traj.times[-1]:g}])")
    return EXIT_OK


def cmd_identify(args) -> int:
    cfg, raw = _config_from_args(args)
    if cfg.quadrature.optimized:
        raise UsageError("identify needs a fixed window and K; use 'optimize' for searched parameters")
    data = load_data(cfg)
    spec = cfg.library.build()
    q = cfg.quadrature
    rule = make_rule(q.kind, q.K, *q.window)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            if cfg.library.form == "black_box":
                model, report = bb_sindy(data.traj, rule.nodes, cfg.solver.lam, cfg.library.bb_degree,
                                         cfg.solver.method, data.split, data.kinds)
            else:
                model, report = dd_sindy(data.traj, data.kinds, spec, rule, cfg.solver.lam, cfg.solver.method,
                                         data.split, cfg.solver.max_iters)
    except NUMERIC_ERRORS as exc:
        raise StageError("identify", exc) from None
    out = resolve_out(cfg.report.out)
    summary = write_run(out, _run_name(cfg, out), "identify", cfg, raw, args.config, data, model, report,
                        tuple(q.window), q.K)
    _print_summary(summary)
    print(render_model(model, cfg.report.precision))
    return EXIT_OK


def cmd_optimize(args) -> int:
    cfg, raw = _config_from_args(args)
    if cfg.optimize is None:
        raise UsageError("optimize needs an [optimize] section")
    if cfg.library.form != "distributed":
        raise UsageError("optimize supports the distributed library form only")
    data = load_data(cfg)
    q = cfg.quadrature
    space = cfg.optimize.space(q.lower, q.upper)
    window = ("window_lower", "window_upper") if q.window == "optimize" else tuple(q.window)
    problem = IdentifyProblem(data.traj, data.kinds, cfg.library.build(), window, q.kind, q.K, cfg.solver.lam,
                              cfg.solver.method, data.split)
    seed = cfg.optimize.swarm.get("seed", cfg.data.seed)
    swarm = cfg.optimize.swarm_config(seed)
    out = resolve_out(cfg.report.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        res = optimize_and_identify(space, swarm, problem)
    except NUMERIC_ERRORS as exc:
        trace = getattr(exc, "trace", None)
        if trace is not None:
            trace.write_csv(out / "trace.csv")
        raise StageError("optimize", exc) from None
    res.trace.write_csv(out / "trace.csv")
    rows = [{"name": k, "value": v, "true": data.params.get(k)} for k, v in res.rho.items()]
    post = None
    if cfg.optimize.postprocess == "ricker":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            post = ricker_postprocess(res.rho)
        rows = [{"name": k, "value": v, "true": data.params.get(k)} for k, v in post.items()]
    elif cfg.optimize.postprocess:
        raise UsageError(f"unknown postprocess {cfg.optimize.postprocess!r}; valid: ricker")
    for r in rows:
        if r["true"] is not None and isinstance(r["true"], (int, float)):
            r["abs_error"] = abs(float(r["value"]) - float(r["true"]))
    _write_csv(out / "optimum.csv", ["name", "value", "true", "abs_error"], rows)
    extra = {f"rho.{r['name']}": r["value"] for r in rows}
    extra.update({f"rho_err.{r['name']}": r.get("abs_error") for r in rows if r.get("abs_error") is not None})
    model_window = res.model.window
    summary = write_run(out, _run_name(cfg, out), "optimize", cfg, raw, args.config, data, res.model, res.report,
                        model_window, res.model.K, evals=res.calls, extra_summary=extra,
                        extra_meta={"stop_reason": res.trace.stop_reason, "swarm_seed": swarm.seed,
                                    "raw_optimum": res.raw.tolist()})
    _print_summary(summary)
    for r in rows:
        print(f"  {r['name']:>10s} = {r['value']:.6g}" + (f"  (true {r['true']:.6g})" if r.get("abs_error") is not None else ""))
    return EXIT_OK


def _print_summary(s: dict) -> None:
    worst = s.get("max_coef_error")
    print(f"{s['run']}: rmse_train={s['rmse_train']:.3e} rmse_val={_fmt(s['rmse_val'])} "
          f"active={s['n_active']} max_coef_error={_fmt(worst)}")


def _fmt(v) -> str:
    return "n/a" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.3e}"


# ---------------------------------------------------------------- report


def _read_csv(path: Path) -> list[dict]:
    with path.open() as fh:
        return list(csv.DictReader(fh))


def _inputs(paths) -> tuple[list[dict], list[dict]]:
    summaries: dict[str, dict] = {}
    coefs: dict[tuple, dict] = {}
    for p in paths:
        p = Path(p) if Path(p).exists() else resolve_out(p)
        if p.is_dir():
            s, c = p / "summary.csv", p / "coefficients.csv"
        elif p.name.endswith("coefficients.csv"):
            s, c = p.with_name(p.name.replace("coefficients", "summary")), p
        else:
            s, c = p, p.with_name(p.name.replace("summary", "coefficients"))
        if not s.exists():
            raise UsageError(f"{p}: no summary.csv found")
        for row in _read_csv(s):
            summaries[row["run"]] = row
        if c.exists():
            for row in _read_csv(c):
                coefs[(row["run"], row["equation"], row["term"])] = row
    return list(summaries.values()), list(coefs.values())


def _float(v):
    try:
        return float(v)
    except (TypeError, ValueError):
        return None


def comparison_table(summaries: list[dict], coefs: list[dict]) -> tuple[list[str], list[list[str]]]:
    """Rows: coefficient errors, optimized-value errors, RMSE; one column per run."""
    runs = [s["run"] for s in summaries]
    header = ["quantity", *runs]
    rows: list[list[str]] = []
    terms = list(dict.fromkeys((c["equation"], c["term"]) for c in coefs if c.get("true", "") != ""
                               and _float(c["true"]) != 0.0))
    by = {(c["run"], c["equation"], c["term"]): c for c in coefs}
    for eq, term in terms:
        row = [f"|coef error| eq{eq} {term}"]
        for r in runs:
            c = by.get((r, eq, term))
            row.append("-" if c is None or c.get("abs_error", "") == "" else f"{float(c['abs_error']):.3e}")
        rows.append(row)
    opt = list(dict.fromkeys(k for s in summaries for k in s if k.startswith("rho_err.")))
    for k in opt:
        rows.append([f"|{k.removeprefix('rho_err.')} error|",
                     *[f"{float(s[k]):.3e}" if s.get(k) not in (None, "") else "-" for s in summaries]])
    for k in ("rmse_train", "rmse_val"):
        rows.append([k, *[f"{float(s[k]):.3e}" if s.get(k) not in (None, "") else "-" for s in summaries]])
    return header, rows


def _text_table(header, rows) -> str:
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    line = lambda r: "  ".join(str(x).ljust(w) for x, w in zip(r, widths))  # noqa: E731
    return "\n".join([line(header), line(["-" * w for w in widths]), *map(line, rows)]) + "\n"


SWEEP_AXES = ("K", "m", "lambda")
SWEEP_FIELDS = ["quadrature", "K", "m", "lambda", "run", "max_coef_error", "rmse_train", "rmse_val"]


def sweep_rows(summaries: list[dict]) -> list[dict]:
    key = lambda s: (s["quadrature"], _float(s["K"]) or 0, _float(s["m"]) or 0, _float(s["lambda"]) or 0)  # noqa: E731
    return sorted(summaries, key=key)


def sweep_pivot(summaries: list[dict], axis: str) -> tuple[list[str], list[dict]] | None:
    """Error against one axis, one column per quadrature kind and fixed setting of the other axes."""
    values = sorted({_float(s[axis]) for s in summaries if _float(s[axis]) is not None})
    if len(values) < 2:
        return None
    others = [a for a in SWEEP_AXES if a != axis]
    cols: dict[str, dict] = {}
    for s in summaries:
        fixed = [f"{a}={s[a]}" for a in others if len({x[a] for x in summaries}) > 1]
        name = "|".join([s["quadrature"], *fixed])
        cols.setdefault(name, {})[_float(s[axis])] = s["max_coef_error"]
    fields = [axis, *cols]
    rows = [{axis: int(v) if v.is_integer() and axis != "lambda" else v, **{c: cols[c].get(v) for c in cols}}
            for v in values]
    return fields, rows


def cmd_report(args) -> int:
    if not args.inputs:
        raise UsageError("report needs at least one run directory or summary.csv")
    summaries, coefs = _inputs(args.inputs)
    out = resolve_out(args.out or "report")
    out.mkdir(parents=True, exist_ok=True)
    fields = SUMMARY_FIELDS + sorted({k for s in summaries for k in s} - set(SUMMARY_FIELDS))
    _write_csv(out / "summary.csv", fields, summaries)
    _write_csv(out / "coefficients.csv", COEF_FIELDS, coefs)
    header, rows = comparison_table(summaries, coefs)
    with (out / "comparison.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    text = _text_table(header, rows)
    (out / "comparison.txt").write_text(text)
    _write_csv(out / "sweep.csv", SWEEP_FIELDS, sweep_rows(summaries))
    for axis in SWEEP_AXES:
        piv = sweep_pivot(summaries, axis)
        if piv is not None:
            _write_csv(out / f"sweep_vs_{axis}.csv", *piv)
    print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ddsindy", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=False):
        p.add_argument("config", nargs=None if config_required else "?", help="TOML run configuration")
        p.add_argument("--benchmark", help=f"benchmark recipe ({', '.join(bm.NAMES)})")
        p.add_argument("--out", help=f"output directory (relative paths go under ${OUT_ENV} if set)")
        p.add_argument("--noise", type=float, help="noise level relative to the per-component RMS")
        p.add_argument("--seed", type=int, help="seed for noise and the swarm")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override any config key")

    def fitting(p):
        p.add_argument("--lambda", dest="lam", type=float, help="sparsity threshold")
        p.add_argument("--K", type=int, help="number of quadrature nodes")
        p.add_argument("--quadrature", help="rectangles | trapezoid | clenshaw_curtis")
        p.add_argument("--split", type=float, help="training fraction")

    p = sub.add_parser("simulate", help="generate a benchmark dataset")
    common(p)
    p.add_argument("--no-lookup", action="store_true", help="omit the dense lookup record from the CSV")
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("identify", help="fit a model with a fixed window")
    common(p, config_required=True)
    fitting(p)
    p.set_defaults(func=cmd_identify)
    p = sub.add_parser("optimize", help="search window and atom parameters with a particle swarm")
    common(p, config_required=True)
    fitting(p)
    p.set_defaults(func=cmd_optimize)
    p = sub.add_parser("report", help="merge run outputs into comparison tables and sweep matrices")
    p.add_argument("inputs", nargs="*", help="run directories or summary.csv files")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (UsageError, ConfigError, DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StageError as exc:
        print(f"error in stage {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except NUMERIC_ERRORS as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
