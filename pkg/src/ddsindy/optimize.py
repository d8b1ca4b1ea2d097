"""External optimization of window bounds and nonlinear atom parameters with a
global-best particle swarm wrapped around DD-SINDy."""

from __future__ import annotations

import ast
import csv
import logging
import math
import operator
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .dataset import SampledTrajectory
from .identify import FitReport, IdentificationError, SparseModel, dd_sindy
from .library import LibraryError, LibrarySpec
from .quadrature import make_rule
from .regression import RegressionError

log = logging.getLogger(__name__)

PENALTY = 1e6


class OptimizeError(ValueError):
    pass


# ---------------------------------------------------------------- safe expressions

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNARY = {ast.USub: operator.neg, ast.UAdd: operator.pos}
_FUNCS = {"exp": math.exp, "log": math.log, "sqrt": math.sqrt, "abs": abs,
          "round": round, "min": min, "max": max}
_CONSTS = {"pi": math.pi, "e": math.e}


def compile_expr(text: str):
    """Parse an arithmetic expression over parameter names; returns the AST."""
    try:
        tree = ast.parse(str(text), mode="eval")
    except SyntaxError as exc:
        raise OptimizeError(f"bad expression {text!r}: {exc.msg}") from None
    for node in ast.walk(tree):
        ok = isinstance(node, (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Name, ast.Constant, ast.Call, ast.Load))
        ok = ok or type(node) in _BINOPS or type(node) in _UNARY
        if not ok:
            raise OptimizeError(f"expression {text!r} uses unsupported syntax {type(node).__name__}")
        if isinstance(node, ast.Call) and not (isinstance(node.func, ast.Name) and node.func.id in _FUNCS):
            raise OptimizeError(f"expression {text!r} calls an unknown function")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise OptimizeError(f"expression {text!r} has a non-numeric constant")
    return tree


def eval_expr(tree, env: dict) -> float:
    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant):
            return node.value
        if isinstance(node, ast.Name):
            if node.id in env:
                return env[node.id]
            if node.id in _CONSTS:
                return _CONSTS[node.id]
            raise OptimizeError(f"unknown name {node.id!r} in expression")
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp):
            return _UNARY[type(node.op)](ev(node.operand))
        if isinstance(node, ast.Call):
            return _FUNCS[node.func.id](*[ev(a) for a in node.args])
        raise OptimizeError(f"unsupported node {type(node).__name__}")

    return float(ev(tree))


def expr_names(tree) -> set[str]:
    called = {n.func.id for n in ast.walk(tree) if isinstance(n, ast.Call)}
    return {n.id for n in ast.walk(tree) if isinstance(n, ast.Name)} - called - set(_CONSTS)


# ---------------------------------------------------------------- parameter space


@dataclass(frozen=True)
class Param:
    name: str
    lower: float
    upper: float
    integer: bool = False

    def __post_init__(self):
        if not self.lower < self.upper:
            raise OptimizeError(f"parameter {self.name}: need lower < upper, got [{self.lower}, {self.upper}]")


@dataclass
class ParamSpace:
    """Named box-bounded parameters plus derived quantities.

    ``bindings`` maps slot names (atom parameter slots, ``window_lower``,
    ``window_upper``) to expressions over parameter names. ``constraints`` are
    expressions that must evaluate to >= 0 for a position to be feasible.
    Integer parameters are searched continuously and rounded at read-out.
    """

    params: list[Param]
    bindings: dict[str, str] = field(default_factory=dict)
    constraints: list[str] = field(default_factory=list)

    def __post_init__(self):
        names = [p.name for p in self.params]
        if not names:
            raise OptimizeError("parameter space is empty")
        if len(set(names)) != len(names):
            raise OptimizeError("duplicate parameter names")
        self._bind = {k: compile_expr(v) for k, v in self.bindings.items()}
        self._cons = [compile_expr(c) for c in self.constraints]
        known = set(names) | set(self.bindings)
        for k, tree in [*self._bind.items(), *(("constraint", t) for t in self._cons)]:
            missing = expr_names(tree) - known
            if missing:
                raise OptimizeError(f"{k}: unknown names {sorted(missing)}")

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.params]

    @property
    def dim(self) -> int:
        return len(self.params)

    @property
    def lower(self) -> np.ndarray:
        return np.array([p.lower for p in self.params])

    @property
    def upper(self) -> np.ndarray:
        return np.array([p.upper for p in self.params])

    def readout(self, x) -> dict[str, float]:
        """Parameter values with integer parameters rounded."""
        return {p.name: float(round(v)) if p.integer else float(v) for p, v in zip(self.params, x)}

    def values(self, x, rounded: bool = False) -> dict[str, float]:
        """Parameters plus evaluated bindings (bindings may refer to earlier bindings)."""
        env = self.readout(x) if rounded else {p.name: float(v) for p, v in zip(self.params, x)}
        pending = dict(self._bind)
        while pending:
            progressed = False
            for k, tree in list(pending.items()):
                if expr_names(tree) <= set(env):
                    env[k] = eval_expr(tree, env)
                    del pending[k]
                    progressed = True
            if not progressed:
                raise OptimizeError(f"circular bindings: {sorted(pending)}")
        return env

    def feasible(self, env: dict) -> bool:
        return all(eval_expr(c, env) >= 0 for c in self._cons)


@dataclass(frozen=True)
class SwarmConfig:
    particles: int = 25
    inertia: float = 0.729
    c1: float = 1.49445
    c2: float = 1.49445
    max_evals: int = 2000
    stall_tol: float = 1e-4
    stall_iters: int = 15
    seed: int = 0

    def __post_init__(self):
        if self.particles < 2:
            raise OptimizeError("need at least 2 particles")
        if self.max_evals < self.particles:
            raise OptimizeError("max_evals must be at least the number of particles")
        if self.stall_tol <= 0:
            raise OptimizeError("stall_tol must be positive")
        if self.stall_iters < 1:
            raise OptimizeError("stall_iters must be >= 1")


@dataclass
class OptTrace:
    names: list[str]
    iters: list[int] = field(default_factory=list)
    evals: list[int] = field(default_factory=list)
    best: list[float] = field(default_factory=list)
    positions: list[np.ndarray] = field(default_factory=list)
    stop_reason: str = ""

    def record(self, it, ev, best, pos):
        self.iters.append(it)
        self.evals.append(ev)
        self.best.append(float(best))
        self.positions.append(np.array(pos, dtype=float))

    @property
    def total_evals(self) -> int:
        return self.evals[-1] if self.evals else 0

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "evals", "best_objective", *self.names])
            for it, ev, b, pos in zip(self.iters, self.evals, self.best, self.positions):
                w.writerow([it, ev, repr(b), *(repr(float(v)) for v in pos)])


def particle_swarm(space: ParamSpace, config: SwarmConfig, objective: Callable[[np.ndarray], float]):
    """Global-best PSO with clamping and velocity reflection at the bounds.

    Random draws for each iteration are taken from the seeded stream before
    any evaluation, and results are reduced in particle order, so the run is
    reproducible whatever order evaluations happen in.
    Returns ``(best_position, trace)``.
    """
    rng = np.random.default_rng(config.seed)
    lo, hi = space.lower, space.upper
    span = hi - lo
    P, D = config.particles, space.dim
    x = lo + rng.random((P, D)) * span
    v = (rng.random((P, D)) - 0.5) * span * 0.2
    f = np.array([objective(xi) for xi in x])
    evals = P
    pbest, pval = x.copy(), f.copy()
    g = int(np.argmin(pval))
    gbest, gval = pbest[g].copy(), pval[g]
    trace = OptTrace(space.names)
    trace.record(0, evals, gval, gbest)
    stall = 0
    it = 0
    trace.stop_reason = "max_evals"
    while evals + P <= config.max_evals:
        it += 1
        r1 = rng.random((P, D))
        r2 = rng.random((P, D))
        v = config.inertia * v + config.c1 * r1 * (pbest - x) + config.c2 * r2 * (gbest - x)
        x = x + v
        below, above = x < lo, x > hi
        x = np.clip(x, lo, hi)
        v = np.where(below | above, -v, v)
        f = np.array([objective(xi) for xi in x])
        evals += P
        better = f < pval
        pbest[better], pval[better] = x[better], f[better]
        g = int(np.argmin(pval))
        old = gval
        if pval[g] < gval:
            gbest, gval = pbest[g].copy(), pval[g]
        trace.record(it, evals, gval, gbest)
        if old - gval < config.stall_tol * max(abs(old), 1e-300):
            stall += 1
            if stall >= config.stall_iters:
                trace.stop_reason = "stall"
                break
        else:
            stall = 0
    return gbest, trace


# ---------------------------------------------------------------- DD-SINDy objective


@dataclass
class IdentifyProblem:
    """Everything the objective needs besides the searched parameters.

    ``window`` holds two expressions (lower, upper) over parameter and binding
    names, or plain numbers for a fixed window. ``K`` may itself name a
    parameter to optimize the node count.
    """

    traj: SampledTrajectory
    kinds: tuple[str, ...] | str
    spec: LibrarySpec
    window: tuple[str | float, str | float]
    quadrature: str = "trapezoid"
    K: int | str = 100
    lam: float = 1e-2
    solver: str = "stls"
    train_fraction: float = 0.8
    require_full_coverage: bool = True

    def instantiate(self, env: dict):
        lo, hi = (eval_expr(compile_expr(str(w)), env) for w in self.window)
        K = self.K if isinstance(self.K, int) else int(round(eval_expr(compile_expr(self.K), env)))
        spec = self.spec.bind(env)
        return spec, lo, hi, K


def evaluate(problem: IdentifyProblem, env: dict) -> tuple[SparseModel, FitReport]:
    spec, lo, hi, K = problem.instantiate(env)
    if not lo < hi <= 0:
        raise IdentificationError(f"infeasible window [{lo:g}, {hi:g}]")
    rule = make_rule(problem.quadrature, K, lo, hi)
    model, report = dd_sindy(problem.traj, problem.kinds, spec, rule, problem.lam, problem.solver, problem.train_fraction)
    if problem.require_full_coverage and not report.row_mask.all():
        # errors over different row sets are not comparable
        raise IdentificationError(
            f"window [{lo:g}, {hi:g}] leaves {int((~report.row_mask).sum())} rows without data coverage"
        )
    return model, report


def objective(rho, space: ParamSpace, problem: IdentifyProblem) -> float:
    """Combined train+validation RMSE at ``rho``; ``PENALTY`` when infeasible."""
    try:
        env = space.values(rho)
        if not space.feasible(env):
            return PENALTY
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            _, report = evaluate(problem, env)
    except (IdentificationError, LibraryError, RegressionError, OptimizeError, ValueError, ZeroDivisionError, OverflowError):
        return PENALTY
    eps = report.eps
    return eps if np.isfinite(eps) else PENALTY


@dataclass
class OptimizeResult:
    rho: dict[str, float]
    raw: np.ndarray
    model: SparseModel
    report: FitReport
    trace: OptTrace
    calls: int


def optimize_and_identify(space: ParamSpace, config: SwarmConfig, problem: IdentifyProblem) -> OptimizeResult:
    calls = 0

    def fn(rho):
        nonlocal calls
        calls += 1
        return objective(rho, space, problem)

    # the final refit at the rounded optimum counts against the budget
    if config.max_evals <= config.particles:
        raise OptimizeError("max_evals must exceed the number of particles to leave room for the final fit")
    swarm = replace(config, max_evals=config.max_evals - 1)
    best, trace = particle_swarm(space, swarm, fn)
    env = space.values(best, rounded=True)
    try:
        if not space.feasible(env):
            raise IdentificationError("no feasible parameter vector found")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            model, report = evaluate(problem, env)
    except IdentificationError as exc:
        exc.trace = trace  # callers still get the search history
        raise
    calls += 1
    return OptimizeResult(env, best, model, report, trace, calls)


def ricker_postprocess(rho: dict) -> dict[str, float]:
    """Split the searched (n, tau, rate = alpha + d1, a) into the kernel parameters."""
    n = int(round(rho["n"]))
    tau = float(rho["tau"])
    alpha = n / tau
    d1 = float(rho["rate"]) - alpha
    if d1 < 0:
        warnings.warn(f"recovered d1 = {d1:.4g} is negative", RuntimeWarning, stacklevel=2)
    return {"n": n, "tau": tau, "alpha": alpha, "d1": d1, "a": float(rho["a"])}
