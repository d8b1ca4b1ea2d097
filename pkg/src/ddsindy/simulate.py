"""Forward solvers for renewal equations, delay integro-differential equations
and coupled RE/DIDE systems.

Every memory integral is replaced by a fixed quadrature rule first, which turns
the model into a multi-delay equation. The march then uses a fixed step ``h``:

* RE components are evaluated explicitly from already computed values
  (windows must be strictly lagged);
* DIDE components are advanced with classical RK4, delayed values come from
  cubic Hermite interpolation of the computed solution, the initial function is
  used for negative times.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dataset import SampledTrajectory
from .quadrature import QuadratureRule, make_rule

Kernel = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


class SimulationError(ValueError):
    pass


@dataclass
class DistributedTerm:
    """One memory integral over ``window``.

    ``kernel(sigma, shifted, current)`` gets nodes (K,), shifted states (K, n)
    and the current state (n,) and returns the (K, n) integrand, one column per
    equation (zero columns for equations the term does not enter).
    """

    window: tuple[float, float]
    kernel: Kernel
    quad: str = "trapezoid"
    K: int | None = None  # None: one node per solver step


@dataclass
class ModelDef:
    kinds: tuple[str, ...]
    terms: list[DistributedTerm]
    history: Callable[[np.ndarray], np.ndarray]
    local: Callable[[np.ndarray], np.ndarray] | None = None
    names: tuple[str, ...] | None = None
    name: str = "model"
    params: dict = field(default_factory=dict)
    history_span: float | None = None  # length of the initial segment to record; default tau_max

    def __post_init__(self):
        self.kinds = tuple(k.upper() for k in self.kinds)
        for k in self.kinds:
            if k not in ("RE", "DIDE"):
                raise SimulationError(f"equation kind must be RE or DIDE, got {k}")
        for term in self.terms:
            a, b = term.window
            if not a < b <= 0:
                raise SimulationError(f"window [{a}, {b}] must satisfy a < b <= 0")
        if self.names is None:
            self.names = tuple(f"x{j + 1}" for j in range(self.n))

    @property
    def n(self) -> int:
        return len(self.kinds)

    @property
    def tau_max(self) -> float:
        return max((-t.window[0] for t in self.terms), default=0.0)

    def local_part(self, x):
        if self.local is None:
            return np.zeros(self.n)
        return np.asarray(self.local(x), dtype=float)


def gamma_density(n: int, alpha: float, sigma):
    """alpha^n (-sigma)^(n-1) e^(alpha sigma) / (n-1)! for sigma <= 0."""
    s = np.asarray(sigma, dtype=float)
    if np.any(s > 0):
        raise SimulationError("gamma density is defined for sigma <= 0")
    if n < 1 or alpha <= 0:
        raise SimulationError("gamma density needs n >= 1 and alpha > 0")
    return alpha**n * (-s) ** (n - 1) * np.exp(alpha * s) / math.factorial(n - 1)


def term_rule(term: DistributedTerm, h: float) -> QuadratureRule:
    a, b = term.window
    K = term.K
    if K is None:
        K = max(2, int(round((b - a) / h)) + 1)
    return make_rule(term.quad, K, a, b)


def constant_state_rhs(model: ModelDef, x, K: int = 257) -> np.ndarray:
    """Right-hand side at a constant history x, with an accurate rule per window."""
    x = np.asarray(x, dtype=float)
    out = model.local_part(x).copy()
    for term in model.terms:
        rule = make_rule("clenshaw_curtis", K, *term.window)
        xs = np.broadcast_to(x, (rule.K, model.n))
        out += rule.weights @ term.kernel(rule.nodes, xs, x)
    return out


class _March:
    """Fixed-step solver state. Use through :func:`solve_re` and friends."""

    def __init__(self, model: ModelDef, T: float, h: float):
        if h <= 0 or T <= 0:
            raise SimulationError("need T > 0 and h > 0")
        N = int(round(T / h))
        if abs(N * h - T) > 1e-9 * max(1.0, T):
            raise SimulationError(f"T={T} is not a multiple of h={h}")
        self.model = model
        self.h = h
        self.N = N
        self.re = np.array([k == "RE" for k in model.kinds])
        self.dide = ~self.re
        self.rules = [term_rule(t, h) for t in model.terms]
        for term, rule in zip(model.terms, self.rules):
            gap = -rule.nodes[-1]
            if gap == 0 and self.re.any():
                raise SimulationError(
                    f"window [{term.window[0]}, {term.window[1]}] touches 0: renewal equations "
                    "need strictly lagged windows (fixed-point mode is not supported)"
                )
            if 0 < gap < h - 1e-12:
                raise SimulationError(
                    f"step h={h} exceeds the smallest positive delay {gap:g}; reduce h"
                )
        n = model.n
        self.X = np.full((N + 1, n), np.nan)
        self.F = np.full((N + 1, n), np.nan)
        self.filled = -1

    # -- past values
    def past(self, s):
        s = np.asarray(s, dtype=float)
        # t + sigma lands on 0 up to rounding: read the solution, not the history
        s = np.where(np.abs(s) < 1e-9 * self.h, 0.0, s)
        out = np.empty(s.shape + (self.model.n,))
        neg = s < 0
        if neg.any():
            out[neg] = np.asarray(self.model.history(s[neg]), dtype=float).reshape(-1, self.model.n)
        pos = ~neg
        if pos.any():
            sp = s[pos]
            hi = self.filled * self.h
            if np.any(sp > hi + 1e-9 * max(1.0, hi)):
                raise SimulationError("delayed value requested beyond the computed solution")
            if self.filled == 0:
                out[pos] = self.X[0]
            else:
                j = np.clip(np.floor(sp / self.h).astype(int), 0, self.filled - 1)
                th = np.clip(sp / self.h - j, 0.0, 1.0)[:, None]
                x0, x1 = self.X[j], self.X[j + 1]
                lin = (1 - th) * x0 + th * x1
                if self.dide.any():
                    f0, f1 = self.F[j], self.F[j + 1]
                    h00 = 2 * th**3 - 3 * th**2 + 1
                    h10 = th**3 - 2 * th**2 + th
                    h01 = -2 * th**3 + 3 * th**2
                    h11 = th**3 - th**2
                    herm = h00 * x0 + h10 * self.h * f0 + h01 * x1 + h11 * self.h * f1
                    lin[:, self.dide] = herm[:, self.dide]
                # grid hits are exact (the newest point has no slope yet)
                k = np.rint(sp / self.h).astype(int)
                on = (np.abs(sp / self.h - k) < 1e-9) & (k <= self.filled)
                lin[on] = self.X[k[on]]
                out[pos] = lin
        return out

    # -- right-hand sides
    def memory(self, t, current):
        """Sum of quadrature-discretised integrals at time t."""
        total = np.zeros(self.model.n)
        for term, rule in zip(self.model.terms, self.rules):
            nodes = rule.nodes
            xs = self.past(t + nodes)
            if nodes[-1] == 0:
                xs[-1] = current
            total += rule.weights @ term.kernel(nodes, xs, current)
        return total

    def full_state(self, t, y_dide):
        """Complete the state at time t: DIDE part given, RE part from its equation."""
        cur = np.full(self.model.n, np.nan)
        cur[self.dide] = y_dide
        if self.re.any():
            val = self.memory(t, cur) + self.model.local_part(cur)
            if not np.all(np.isfinite(val[self.re])):
                raise SimulationError("renewal components may not depend on current renewal values")
            cur[self.re] = val[self.re]
        return cur

    def rhs(self, t, cur):
        return (self.memory(t, cur) + self.model.local_part(cur))[self.dide]

    # -- march
    def run(self):
        m, h = self.model, self.h
        y = np.asarray(m.history(np.array([0.0])), dtype=float).reshape(m.n)[self.dide]
        cur = self.full_state(0.0, y)
        self.X[0] = cur
        self.filled = 0
        if self.dide.any():
            self.F[0, self.dide] = self.rhs(0.0, cur)
        for i in range(self.N):
            t = i * h
            if self.dide.any():
                k1 = self.F[i, self.dide]
                c2 = self.full_state(t + h / 2, y + h / 2 * k1)
                k2 = self.rhs(t + h / 2, c2)
                c3 = self.full_state(t + h / 2, y + h / 2 * k2)
                k3 = self.rhs(t + h / 2, c3)
                c4 = self.full_state(t + h, y + h * k3)
                k4 = self.rhs(t + h, c4)
                y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            cur = self.full_state(t + h, y)
            self.X[i + 1] = cur
            self.filled = i + 1
            if self.dide.any():
                self.F[i + 1, self.dide] = self.rhs(t + h, cur)
        return self

    def dense(self, times):
        """States and exact right-hand sides at arbitrary sample times."""
        times = np.asarray(times, dtype=float)
        states = np.empty((len(times), self.model.n))
        derivs = np.full((len(times), self.model.n), np.nan)
        for i, t in enumerate(times):
            if t < -1e-12 or t > self.N * self.h + 1e-9:
                raise SimulationError(f"sample time {t} outside [0, {self.N * self.h}]")
            t = min(max(t, 0.0), self.N * self.h)
            y = self.past(np.array([t]))[0][self.dide]
            cur = self.full_state(t, y)
            states[i] = cur
            if self.dide.any():
                derivs[i, self.dide] = self.rhs(t, cur)
        return states, derivs


def _history_segment(model: ModelDef, spacing: float):
    tau = max(model.tau_max, model.history_span or 0.0)
    if tau <= 0:
        return None, None
    k = max(2, int(math.ceil(tau / spacing)) + 1)
    ht = np.linspace(-tau, 0.0, k)
    hv = np.asarray(model.history(ht), dtype=float).reshape(k, model.n)
    return ht, hv


def _solve(
    model: ModelDef, T: float, h: float, sample_times=None, history_spacing=None, dense_lookup: int = 0
) -> SampledTrajectory:
    """March on [0, T] and sample.

    ``dense_lookup = r > 0`` attaches the solver's dense output on a grid r times
    finer than the step as the trajectory's lookup record.
    """
    march = _March(model, T, h).run()
    times = np.linspace(0.0, T, march.N + 1) if sample_times is None else np.asarray(sample_times, float)
    states, derivs = march.dense(times)
    if np.all(march.re):
        derivs = None
    spacing = history_spacing or (times[1] - times[0] if len(times) > 1 else h)
    ht, hv = _history_segment(model, spacing)
    lt = np.linspace(0.0, T, march.N * int(dense_lookup) + 1) if dense_lookup else None
    return SampledTrajectory(
        times,
        states,
        derivs=derivs,
        history_times=ht,
        history_values=hv,
        derivs_source=None if derivs is None else "exact",
        names=model.names,
        lookup_times=lt,
        lookup_values=None if lt is None else march.past(lt),
    )


def solve_re(model: ModelDef, T: float, h: float, sample_times=None, **kw) -> SampledTrajectory:
    if any(k != "RE" for k in model.kinds):
        raise SimulationError("solve_re handles renewal equations only; use solve_coupled")
    return _solve(model, T, h, sample_times, **kw)


def solve_dide(model: ModelDef, T: float, h: float, sample_times=None, **kw) -> SampledTrajectory:
    if any(k != "DIDE" for k in model.kinds):
        raise SimulationError("solve_dide handles DIDEs only; use solve_coupled")
    return _solve(model, T, h, sample_times, **kw)


def solve_coupled(model: ModelDef, T: float, h: float, sample_times=None, **kw) -> SampledTrajectory:
    return _solve(model, T, h, sample_times, **kw)


def solve(model: ModelDef, T: float, h: float, sample_times=None, **kw) -> SampledTrajectory:
    """Dispatch on the equation kinds."""
    kinds = set(model.kinds)
    if kinds == {"RE"}:
        return solve_re(model, T, h, sample_times, **kw)
    if kinds == {"DIDE"}:
        return solve_dide(model, T, h, sample_times, **kw)
    return solve_coupled(model, T, h, sample_times, **kw)
