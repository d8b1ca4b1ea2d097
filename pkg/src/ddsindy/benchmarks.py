"""Benchmark models, sampling recipes and ground-truth coefficient tables."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import SampledTrajectory
from .library import Atom, exp_neg_state, exp_sigma, gamma, shifted
from .simulate import DistributedTerm, ModelDef, gamma_density, solve

NAMES = ("logistic_re", "ricker_simple", "ricker_advanced", "daphnia")


@dataclass(frozen=True)
class Recipe:
    T: float
    m: int
    train_fraction: float
    h: float = 0.01
    nonuniform: bool = False
    jitter_seed: int = 0
    dense_lookup: int = 16  # refinement of the solver grid kept for shifted lookups; 0 drops it

    def sample_times(self) -> np.ndarray:
        t = np.linspace(0.0, self.T, self.m)
        if not self.nonuniform:
            return t
        # geometric jitter of the interior spacing, end points fixed
        rng = np.random.default_rng(self.jitter_seed)
        steps = np.exp(rng.uniform(-0.5, 0.5, self.m - 1))
        t = np.concatenate([[0.0], np.cumsum(steps)])
        return t * (self.T / t[-1])


@dataclass
class Benchmark:
    name: str
    model: ModelDef
    recipe: Recipe
    # per equation: {atom label: coefficient}; ground truth in library terms
    truth: list[dict[str, float]]
    window: tuple[float, float]
    params: dict = field(default_factory=dict)

    def simulate(self) -> SampledTrajectory:
        r = self.recipe
        return solve(self.model, r.T, r.h, r.sample_times(), dense_lookup=r.dense_lookup)


def _const_history(values):
    values = np.asarray(values, dtype=float)

    def phi(s):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        return np.broadcast_to(values, (s.size, values.size)).copy()

    return phi


def _params(defaults: dict, over: dict) -> dict:
    unknown = sorted(set(over) - set(defaults))
    if unknown:
        raise TypeError(f"unknown parameters {unknown}; valid: {', '.join(defaults)}")
    return {**defaults, **over}


def logistic_re(**over) -> Benchmark:
    p = _params(dict(a=-3.0, b=-1.0, phi=0.5, T=20.0, m=100, train_fraction=0.5, h=0.01, dense_lookup=16), over)

    def kernel(sig, xs, xc):
        return ((sig + 1.0) * xs[:, 0] * (1.0 - xs[:, 0]))[:, None]

    model = ModelDef(
        kinds=("RE",),
        terms=[DistributedTerm((p["a"], p["b"]), kernel, "trapezoid")],
        history=_const_history([p["phi"]]),
        name="logistic_re",
        params=p,
    )
    truth = [{"x1d": 1.0, "sig*x1d": 1.0, "x1d^2": -1.0, "sig*x1d^2": -1.0}]
    recipe = Recipe(p["T"], p["m"], p["train_fraction"], p["h"], dense_lookup=p["dense_lookup"])
    return Benchmark("logistic_re", model, recipe, truth, (p["a"], p["b"]), p)


def ricker_gamma_coefficient(d0, eta, n, tau) -> float:
    """Coefficient of sig^(n-1) e^{(alpha+d1) sig} e^{-a x} x in the Ricker kernel."""
    alpha = n / tau
    return d0 * math.exp(eta) * alpha**n * (-1) ** (n - 1) / math.factorial(n - 1)


def _ricker(name, p) -> Benchmark:
    n, tau = int(p["n"]), p["tau"]
    alpha = n / tau
    d0, eta, d1, a = p["d0"], p["eta"], p["d1"], p["a"]

    def kernel(sig, xs, xc):
        x = xs[:, 0]
        return (d0 * gamma_density(n, alpha, sig) * np.exp(eta + d1 * sig - a * x) * x)[:, None]

    def local(x):
        return np.array([-d0 * x[0]])

    window = (-p["trunc"] * tau, 0.0)
    model = ModelDef(
        kinds=("DIDE",),
        terms=[DistributedTerm(window, kernel, "rectangles", p["K_sim"])],
        history=_const_history([p["phi"]]),
        local=local,
        name=name,
        params=p,
        history_span=p["hist"],
    )
    p["gamma"] = ricker_gamma_coefficient(d0, eta, n, tau)
    p["alpha"] = alpha
    if p.get("truth_form", "monomial") == "gamma":
        # library form: (d0 e^eta) F[n,tau](s) e^{d1 s} e^{-a x(t+s)} x(t+s)
        atom = Atom.of(gamma(n, tau), exp_sigma(d1), exp_neg_state(0, a), shifted(0))
        truth = [{"x1": -d0, atom.label(): d0 * math.exp(eta)}]
    else:
        rate = alpha + d1
        sig_atom = f"sig^{n - 1}" if n > 2 else ("sig" if n == 2 else None)
        parts = [s for s in (sig_atom, f"exp({_num(rate)}*sig)", f"exp(-{_num(a)}*x1d)", "x1d") if s]
        truth = [{"x1": -d0, "*".join(parts): p["gamma"]}]
    recipe = Recipe(p["T"], p["m"], p["train_fraction"], p["h"], dense_lookup=p["dense_lookup"])
    return Benchmark(name, model, recipe, truth, window, p)


def _num(v: float) -> str:
    r = repr(float(v))
    return r[:-2] if r.endswith(".0") else r


def ricker_simple(**over) -> Benchmark:
    p = dict(d0=1.0, eta=math.log(80.0), a=1.0, d1=0.0, n=4, tau=1.0, trunc=10.0, phi=0.5, hist=20.0,
             K_sim=50, T=20.0, m=100, train_fraction=0.8, h=0.01, dense_lookup=16, truth_form="monomial")
    p = _params(p, over)
    return _ricker("ricker_simple", p)


def ricker_advanced(**over) -> Benchmark:
    # a 50-node rule is ~1% off the integral for the e^{4.5 sigma} decay; use one node per solver step
    p = dict(d0=1.0, eta=math.log(80.0), a=math.pi / 10, d1=0.5, n=4, tau=1.0, trunc=10.0, phi=0.5, hist=20.0,
             K_sim=1000, T=20.0, m=500, train_fraction=0.8, h=0.01, dense_lookup=16, truth_form="gamma")
    p = _params(p, over)
    return _ricker("ricker_advanced", p)


def ricker_equilibrium(p: dict) -> float:
    """Positive equilibrium of the untruncated Ricker model: e^eta (alpha/(alpha+d1))^n e^{-a x} = 1."""
    alpha = p["n"] / p["tau"]
    return (p["eta"] + p["n"] * math.log(alpha / (alpha + p["d1"]))) / p["a"]


def daphnia(**over) -> Benchmark:
    p = dict(r=1.0, gamma=1.0, K=1.0, beta=4.0, a_star=3.0, a_dagger=4.0, S0=None, b0=0.5,
             T=50.0, m=1733, train_fraction=0.8, h=0.01, nonuniform=True, jitter_seed=0, hist=10.0, dense_lookup=16)
    p = _params(p, over)
    a_star, a_dag = p["a_star"], p["a_dagger"]
    if p["S0"] is None:
        # makes b(0) from the renewal equation equal the constant history b0
        p["S0"] = 1.0 / (p["beta"] * (a_dag - a_star))
    beta, gam, r, K = p["beta"], p["gamma"], p["r"], p["K"]

    def kernel(sig, xs, xc):
        b = xs[:, 0]
        S = xc[1]
        return np.column_stack([beta * S * b, -gam * S * b])

    def local(x):
        S = x[1]
        return np.array([0.0, r * S * (1.0 - S / K)])

    model = ModelDef(
        kinds=("RE", "DIDE"),
        terms=[DistributedTerm((-a_dag, -a_star), kernel, "trapezoid")],
        history=_const_history([p["b0"], p["S0"]]),
        local=local,
        names=("b", "S"),
        name="daphnia",
        params=p,
        history_span=max(p["hist"], a_dag),
    )
    truth = [
        {"x2*x1d": beta},
        {"x2": r, "x2^2": -r / K, "x2*x1d": -gam},
    ]
    recipe = Recipe(p["T"], p["m"], p["train_fraction"], p["h"], p["nonuniform"], p["jitter_seed"], p["dense_lookup"])
    return Benchmark("daphnia", model, recipe, truth, (-a_dag, -a_star), p)


_BUILDERS = {
    "logistic_re": logistic_re,
    "ricker_simple": ricker_simple,
    "ricker_advanced": ricker_advanced,
    "daphnia": daphnia,
}


def benchmark(name: str, **overrides) -> Benchmark:
    try:
        build = _BUILDERS[name]
    except KeyError:
        raise KeyError(f"unknown benchmark {name!r}; valid names: {', '.join(NAMES)}") from None
    return build(**overrides)


def generate(name: str, **overrides) -> tuple[Benchmark, SampledTrajectory]:
    bench = benchmark(name, **overrides)
    return bench, bench.simulate()
