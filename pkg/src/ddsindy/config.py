"""Run configuration: sectioned TOML files mapped onto dataclasses.

A config has the sections ``[data]``, ``[library]``, ``[quadrature]``,
``[solver]``, ``[report]`` and optionally ``[optimize]``. Command-line flags are
applied on top through :func:`apply_overrides`.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field
from pathlib import Path

import tomli

from . import library as lib
from .optimize import OptimizeError, Param, ParamSpace, SwarmConfig, compile_expr, expr_names
from .quadrature import normalize_kind

SECTIONS = ("data", "library", "quadrature", "solver", "optimize", "report")


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    benchmark: str | None = None
    path: str | None = None
    overrides: dict = field(default_factory=dict)  # benchmark parameter overrides
    noise: float = 0.0
    seed: int = 0
    split: float | None = None  # None: the benchmark recipe's fraction, else 0.8
    kinds: list[str] | None = None

    def __post_init__(self):
        if (self.benchmark is None) == (self.path is None):
            raise ConfigError("[data] needs exactly one of 'benchmark' or 'path'")
        if self.noise < 0:
            raise ConfigError("[data] noise must be >= 0")
        if self.split is not None and not 0 < self.split <= 1:
            raise ConfigError("[data] split must lie in (0, 1]")


@dataclass
class LibraryConfig:
    degree: int = 2
    symbols: list[str] = field(default_factory=lambda: ["sig", "x1d"])
    multipliers: list[str] = field(default_factory=list)
    instantaneous: list[str] = field(default_factory=list)
    keep_current_only: bool = False
    form: str = "distributed"  # distributed | black_box
    bb_degree: int = 1

    def __post_init__(self):
        if self.degree < 1:
            raise ConfigError("[library] degree must be >= 1")
        if self.form not in ("distributed", "black_box"):
            raise ConfigError("[library] form must be 'distributed' or 'black_box'")

    def build(self) -> lib.LibrarySpec:
        try:
            symbols = [lib.parse_symbol(s) for s in self.symbols]
            mult = [lib.parse_atom(a) for a in self.multipliers] or None
            inst = [lib.parse_atom(a) for a in self.instantaneous]
            return lib.build_library(symbols, self.degree, mult, inst, self.keep_current_only)
        except lib.LibraryError as exc:
            raise ConfigError(f"[library] {exc}") from None


@dataclass
class QuadratureConfig:
    kind: str = "trapezoid"
    K: int | str = 100
    window: list[float] | str = field(default_factory=lambda: [-1.0, 0.0])
    lower: str | None = None  # expressions used when window = "optimize"
    upper: str | None = None

    def __post_init__(self):
        try:
            self.kind = normalize_kind(self.kind)
        except ValueError as exc:
            raise ConfigError(f"[quadrature] {exc}") from None
        if isinstance(self.K, int) and self.K < 2:
            raise ConfigError("[quadrature] K must be >= 2")
        if self.window == "optimize":
            if self.lower is None or self.upper is None:
                raise ConfigError("[quadrature] window = 'optimize' needs 'lower' and 'upper' expressions")
        elif isinstance(self.window, str):
            raise ConfigError("[quadrature] window must be [a, b] or 'optimize'")
        else:
            if self.lower is not None or self.upper is not None:
                raise ConfigError("[quadrature] give either fixed window numbers or optimize bounds, not both")
            if len(self.window) != 2:
                raise ConfigError("[quadrature] window needs two numbers")
            a, b = map(float, self.window)
            if not a < b <= 0:
                raise ConfigError(f"[quadrature] window [{a}, {b}] must satisfy a < b <= 0")
            self.window = [a, b]

    @property
    def optimized(self) -> bool:
        return self.window == "optimize" or isinstance(self.K, str)


@dataclass
class SolverConfig:
    method: str = "stls"
    lam: float = 1e-2
    max_iters: int = 25

    def __post_init__(self):
        if self.method not in ("stls", "lasso"):
            raise ConfigError("[solver] method must be 'stls' or 'lasso'")
        if self.lam < 0:
            raise ConfigError("[solver] lambda must be >= 0")


@dataclass
class OptimizeConfig:
    params: list[dict]
    bindings: dict[str, str] = field(default_factory=dict)
    constraints: list[str] = field(default_factory=list)
    swarm: dict = field(default_factory=dict)
    postprocess: str | None = None  # "ricker" splits (n, tau, rate, a)

    def space(self, window_lower: str | None = None, window_upper: str | None = None) -> ParamSpace:
        bindings = dict(self.bindings)
        if window_lower is not None:
            bindings["window_lower"] = window_lower
            bindings["window_upper"] = window_upper
        try:
            params = [Param(p["name"], float(p["lower"]), float(p["upper"]), bool(p.get("integer", False)))
                      for p in self.params]
            return ParamSpace(params, bindings, list(self.constraints))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"[optimize] bad parameter entry ({exc})") from None
        except OptimizeError as exc:
            raise ConfigError(f"[optimize] {exc}") from None

    def swarm_config(self, seed: int | None = None) -> SwarmConfig:
        kw = dict(self.swarm)
        if seed is not None:
            kw["seed"] = seed
        try:
            return SwarmConfig(**kw)
        except TypeError as exc:
            raise ConfigError(f"[optimize.swarm] {exc}") from None
        except OptimizeError as exc:
            raise ConfigError(f"[optimize.swarm] {exc}") from None


@dataclass
class ReportConfig:
    out: str = "runs/run"
    precision: int = 4
    name: str | None = None


@dataclass
class RunConfig:
    data: DataConfig
    library: LibraryConfig = field(default_factory=LibraryConfig)
    quadrature: QuadratureConfig = field(default_factory=QuadratureConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    optimize: OptimizeConfig | None = None
    report: ReportConfig = field(default_factory=ReportConfig)

    def __post_init__(self):
        self.check()

    def check(self) -> None:
        if self.quadrature.optimized and self.optimize is None:
            raise ConfigError("[quadrature] is bound to optimization parameters but [optimize] is missing")
        spec = self.library.build()
        if self.optimize is None:
            if spec.slots:
                raise ConfigError(f"[library] atom parameters {list(spec.slots)} need an [optimize] section")
            return
        space = self.optimize.space(self.quadrature.lower, self.quadrature.upper)
        known = set(space.names) | set(space.bindings)
        missing = [s for s in spec.slots if s not in known]
        if missing:
            raise ConfigError(f"[optimize] no parameter or binding for atom slots {missing}")
        if isinstance(self.quadrature.K, str):
            extra = expr_names(compile_expr(self.quadrature.K)) - known
            if extra:
                raise ConfigError(f"[quadrature] K refers to unknown names {sorted(extra)}")

    def as_dict(self) -> dict:
        out = asdict(self)
        out["solver"]["lambda"] = out["solver"].pop("lam")
        return {k: v for k, v in out.items() if v is not None}


def _section(raw: dict, name: str, cls, rename: dict | None = None):
    body = dict(raw.get(name) or {})
    for old, new in (rename or {}).items():
        if old in body:
            body[new] = body.pop(old)
    try:
        return cls(**body)
    except TypeError as exc:
        raise ConfigError(f"[{name}] {exc}") from None


def from_dict(raw: dict) -> RunConfig:
    unknown = set(raw) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown sections {sorted(unknown)}; valid: {', '.join(SECTIONS)}")
    if "data" not in raw:
        raise ConfigError("missing [data] section")
    return RunConfig(
        data=_section(raw, "data", DataConfig),
        library=_section(raw, "library", LibraryConfig),
        quadrature=_section(raw, "quadrature", QuadratureConfig),
        solver=_section(raw, "solver", SolverConfig, {"lambda": "lam"}),
        optimize=_section(raw, "optimize", OptimizeConfig) if "optimize" in raw else None,
        report=_section(raw, "report", ReportConfig),
    )


def read_raw(path) -> dict:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            return tomli.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such config file") from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def load_config(path, overrides: dict | None = None) -> RunConfig:
    return from_dict(apply_overrides(read_raw(path), overrides or {}))


def apply_overrides(raw: dict, overrides: dict) -> dict:
    """Dotted keys, e.g. ``{"solver.lambda": 1e-3, "data.overrides.m": 50}``; None values are skipped."""
    raw = copy.deepcopy(raw)
    for key, value in overrides.items():
        if value is None:
            continue
        *path, name = key.split(".")
        node = raw
        for part in path:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot set {key}: {part} is not a table")
        node[name] = value
    return raw


def dump_toml(raw: dict) -> str:
    """Small TOML writer for the plain tables used by run configs."""
    lines: list[str] = []

    def val(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, (int, float)):
            return repr(v)
        if isinstance(v, str):
            return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
        if isinstance(v, (list, tuple)):
            return "[" + ", ".join(val(x) for x in v) + "]"
        if isinstance(v, dict):
            return "{" + ", ".join(f"{k} = {val(x)}" for k, x in v.items()) + "}"
        raise ConfigError(f"cannot write {type(v).__name__} to TOML")

    def table(prefix, body):
        scalars = {k: v for k, v in body.items() if not isinstance(v, dict) and v is not None}
        subs = {k: v for k, v in body.items() if isinstance(v, dict)}
        lines.append(f"[{prefix}]")
        lines.extend(f"{k} = {val(v)}" for k, v in scalars.items())
        lines.append("")
        for k, v in subs.items():
            table(f"{prefix}.{k}", v)

    for name in SECTIONS:
        if name in raw and raw[name] is not None:
            table(name, raw[name])
    return "\n".join(lines)
