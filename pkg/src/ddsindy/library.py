"""Candidate atoms and design-matrix assembly.

An atom is a product of powered base symbols. Base symbols:

======================  ===============================  ==================
kind                    meaning                          label
======================  ===============================  ==================
``sig``                 delay variable sigma             ``sig``
``shifted``  (j)        x_j(t + sigma)                   ``x1d``
``current``  (j)        x_j(t)                           ``x1``
``exp_sigma`` (th)      exp(th * sigma)                  ``exp(4.5*sig)``
``exp_neg_state`` (j,th) exp(-th * x_j(t + sigma))       ``exp(-0.31*x1d)``
``gamma`` (n, tau)      Erlang density with rate n/tau   ``gam(4,1)``
======================  ===============================  ==================

Parameters of custom symbols are either numbers or slot names (strings) that
must be bound with :meth:`Atom.bind` before evaluation.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .dataset import SampledTrajectory, shifted_grid
from .quadrature import QuadratureRule

_KIND_ORDER = {"sig": 0, "exp_sigma": 1, "gamma": 2, "exp_neg_state": 3, "shifted": 4, "current": 5}
DELAY_KINDS = ("sig", "exp_sigma", "gamma")


class LibraryError(ValueError):
    pass


def _fmt(v, precision=None):
    if isinstance(v, str):
        return v
    if precision is None:
        r = repr(float(v))
        return r[:-2] if r.endswith(".0") else r
    return f"{float(v):.{precision}g}"


@dataclass(frozen=True)
class Symbol:
    kind: str
    j: int | None = None
    params: tuple = ()

    def __post_init__(self):
        if self.kind not in _KIND_ORDER:
            raise LibraryError(f"unknown symbol kind {self.kind!r}")

    # -- classification
    @property
    def uses_delay(self) -> bool:
        return self.kind in DELAY_KINDS

    @property
    def uses_shifted(self) -> bool:
        return self.kind in ("shifted", "exp_neg_state")

    @property
    def uses_current(self) -> bool:
        return self.kind == "current"

    @property
    def slots(self) -> tuple[str, ...]:
        return tuple(p for p in self.params if isinstance(p, str))

    def bind(self, values: dict) -> "Symbol":
        if not self.slots:
            return self
        try:
            params = tuple(float(values[p]) if isinstance(p, str) else p for p in self.params)
        except KeyError as exc:
            raise LibraryError(f"no value for parameter slot {exc.args[0]!r}") from None
        return Symbol(self.kind, self.j, params)

    def sort_key(self):
        return (_KIND_ORDER[self.kind], -1 if self.j is None else self.j, tuple(map(str, self.params)))

    def label(self, precision=None) -> str:
        k = self.kind
        if k == "sig":
            return "sig"
        if k == "shifted":
            return f"x{self.j + 1}d"
        if k == "current":
            return f"x{self.j + 1}"
        if k == "exp_sigma":
            return f"exp({_fmt(self.params[0], precision)}*sig)"
        if k == "exp_neg_state":
            return f"exp(-{_fmt(self.params[0], precision)}*x{self.j + 1}d)"
        return f"gam({_fmt(self.params[0], precision)},{_fmt(self.params[1], precision)})"

    def pretty(self, names, delay_var="s", precision=4) -> str:
        k = self.kind
        if k == "sig":
            return delay_var
        if k == "shifted":
            return f"{names[self.j]}(t+{delay_var})"
        if k == "current":
            return f"{names[self.j]}(t)"
        if k == "exp_sigma":
            return f"exp({_fmt(self.params[0], precision)}*{delay_var})"
        if k == "exp_neg_state":
            return f"exp(-{_fmt(self.params[0], precision)}*{names[self.j]}(t+{delay_var}))"
        return f"F[{_fmt(self.params[0], precision)},{_fmt(self.params[1], precision)}]({delay_var})"

    def evaluate(self, sigma, shifted, current):
        """sigma: (K, 1); shifted: (K, m, n); current: (m, n). Broadcastable result."""
        if self.slots:
            raise LibraryError(f"symbol {self.label()} has unbound slots {self.slots}")
        k = self.kind
        if k == "sig":
            return sigma
        if k == "shifted":
            return shifted[..., self.j]
        if k == "current":
            return current[:, self.j]
        if k == "exp_sigma":
            return np.exp(self.params[0] * sigma)
        if k == "exp_neg_state":
            return np.exp(-self.params[0] * shifted[..., self.j])
        return gamma_density_values(self.params[0], self.params[1], sigma)


def gamma_density_values(n, tau, sigma):
    """Erlang/gamma density alpha^n (-s)^(n-1) e^(alpha s) / Gamma(n), alpha = n/tau.

    Accepts real shape n >= 1 so that the shape can be searched continuously.
    """
    n = float(n)
    tau = float(tau)
    if n < 1 or tau <= 0:
        raise LibraryError(f"gamma density needs n >= 1 and tau > 0, got n={n}, tau={tau}")
    alpha = n / tau
    s = np.asarray(sigma, dtype=float)
    neg = np.maximum(-s, 0.0)
    with np.errstate(divide="ignore"):
        logv = n * math.log(alpha) + (n - 1) * np.log(neg) - alpha * neg - math.lgamma(n)
    out = np.exp(logv) if n > 1 else np.exp(math.log(alpha) - alpha * neg)
    return np.where(s > 0, 0.0, out)


# convenience constructors
def sig() -> Symbol:
    return Symbol("sig")


def shifted(j: int) -> Symbol:
    return Symbol("shifted", j)


def current(j: int) -> Symbol:
    return Symbol("current", j)


def exp_sigma(theta) -> Symbol:
    return Symbol("exp_sigma", None, (theta,))


def exp_neg_state(j: int, theta) -> Symbol:
    return Symbol("exp_neg_state", j, (theta,))


def gamma(n, tau) -> Symbol:
    return Symbol("gamma", None, (n, tau))


@dataclass(frozen=True)
class Atom:
    factors: tuple = ()  # ((Symbol, power), ...) canonical order, powers >= 1

    @classmethod
    def of(cls, *items) -> "Atom":
        """Build from symbols or (symbol, power) pairs, merging repeats."""
        powers: dict[Symbol, int] = {}
        for it in items:
            s, p = (it, 1) if isinstance(it, Symbol) else it
            if p < 0:
                raise LibraryError("negative powers are not supported")
            powers[s] = powers.get(s, 0) + p
        factors = tuple(sorted(((s, p) for s, p in powers.items() if p > 0), key=lambda f: f[0].sort_key()))
        seen = set()
        for s, _ in factors:
            key = (s.kind, s.j)
            if key in seen:
                raise LibraryError(f"two {s.kind} factors for the same component in one atom")
            seen.add(key)
        return cls(factors)

    def __mul__(self, other: "Atom") -> "Atom":
        return Atom.of(*self.factors, *other.factors)

    @property
    def degree(self) -> int:
        return sum(p for _, p in self.factors)

    @property
    def is_constant(self) -> bool:
        return not self.factors

    @property
    def uses_delay(self) -> bool:
        return any(s.uses_delay for s, _ in self.factors)

    @property
    def uses_shifted(self) -> bool:
        return any(s.uses_shifted for s, _ in self.factors)

    @property
    def uses_current(self) -> bool:
        return any(s.uses_current for s, _ in self.factors)

    @property
    def is_instantaneous(self) -> bool:
        return not (self.uses_delay or self.uses_shifted)

    def state_degree(self) -> int:
        """Degree in state values, counting only polynomial state factors."""
        return sum(p for s, p in self.factors if s.kind in ("shifted", "current"))

    @property
    def slots(self) -> tuple[str, ...]:
        out: list[str] = []
        for s, _ in self.factors:
            out += [p for p in s.slots if p not in out]
        return tuple(out)

    def bind(self, values: dict) -> "Atom":
        if not self.slots:
            return self
        return Atom(tuple((s.bind(values), p) for s, p in self.factors))

    def label(self, precision=None) -> str:
        if not self.factors:
            return "1"
        parts = []
        for s, p in self.factors:
            lab = s.label(precision)
            parts.append(lab if p == 1 else f"{lab}^{p}")
        return "*".join(parts)

    def pretty(self, names, delay_var="s", precision=4) -> str:
        if not self.factors:
            return "1"
        parts = []
        for s, p in self.factors:
            lab = s.pretty(names, delay_var, precision)
            parts.append(lab if p == 1 else f"{lab}^{p}")
        return "*".join(parts)

    def evaluate(self, sigma, shifted_vals, current_vals):
        out = 1.0
        for s, p in self.factors:
            v = s.evaluate(sigma, shifted_vals, current_vals)
            out = out * (v if p == 1 else v**p)
        return out

    def __str__(self):
        return self.label()


# ---------------------------------------------------------------- label parsing

_NUM = r"[-+]?(?:\d+\.?\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?|inf|nan)"
_SLOT = r"[A-Za-z_][A-Za-z_0-9]*"
_PARAM = rf"(?:{_NUM}|{_SLOT})"
_PATTERNS = [
    (re.compile(r"^sig$"), lambda m: sig()),
    (re.compile(r"^x(\d+)d$"), lambda m: shifted(int(m[1]) - 1)),
    (re.compile(r"^x(\d+)$"), lambda m: current(int(m[1]) - 1)),
    (re.compile(rf"^exp\(({_PARAM})\*sig\)$"), lambda m: exp_sigma(_param(m[1]))),
    (re.compile(rf"^exp\(-({_PARAM})\*x(\d+)d\)$"), lambda m: exp_neg_state(int(m[2]) - 1, _param(m[1]))),
    (re.compile(rf"^gam\(({_PARAM}),({_PARAM})\)$"), lambda m: gamma(_param(m[1]), _param(m[2]))),
]


def _param(text: str):
    try:
        return float(text)
    except ValueError:
        return text


def _split_top(text: str, sep: str) -> list[str]:
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == sep and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    parts.append("".join(cur))
    return parts


def parse_symbol(text: str) -> Symbol:
    text = text.strip()
    for pat, build in _PATTERNS:
        m = pat.match(text)
        if m:
            return build(m)
    raise LibraryError(f"cannot parse symbol {text!r}")


def parse_atom(label: str) -> Atom:
    label = label.strip()
    if label == "1":
        return Atom()
    items = []
    for part in _split_top(label, "*"):
        m = _POWER.match(part.strip())
        if m:
            items.append((parse_symbol(m[1]), int(m[2])))
        else:
            items.append((parse_symbol(part), 1))
    return Atom.of(*items)


_POWER = re.compile(r"^(.*)\^(\d+)$")


# ---------------------------------------------------------------- library specs


def enumerate_monomials(symbols, d: int) -> list[Atom]:
    """All monomials of total degree <= d in graded-lexicographic order, 1 first."""
    symbols = list(symbols)
    if not symbols:
        raise LibraryError("need at least one symbol")
    if d < 1:
        raise LibraryError(f"degree must be >= 1, got {d}")
    if len(set(symbols)) != len(symbols):
        raise LibraryError("duplicate symbols")
    out = [Atom()]
    for deg in range(1, d + 1):
        for combo in itertools.combinations_with_replacement(range(len(symbols)), deg):
            out.append(Atom.of(*(symbols[i] for i in combo)))
    return out


def is_separable_current(atom: Atom) -> bool:
    """True if the atom is (function of sigma) x (function of current state) with a state part.

    Under the integral such an atom is a constant multiple of an instantaneous
    atom, so keeping it in the distributed block only adds a collinear column.
    """
    return atom.uses_current and not atom.uses_shifted


@dataclass(frozen=True)
class LibrarySpec:
    distributed_atoms: tuple = ()
    instantaneous_atoms: tuple = ()
    degree: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "distributed_atoms", tuple(self.distributed_atoms))
        object.__setattr__(self, "instantaneous_atoms", tuple(self.instantaneous_atoms))
        for a in self.instantaneous_atoms:
            if not a.is_instantaneous:
                raise LibraryError(f"instantaneous atom {a.label()} depends on the delay or shifted states")
        for block in (self.distributed_atoms, self.instantaneous_atoms):
            labels = [a.label() for a in block]
            if len(set(labels)) != len(labels):
                raise LibraryError("duplicate atoms within a block")

    @property
    def atoms(self) -> tuple:
        return self.instantaneous_atoms + self.distributed_atoms

    @property
    def p(self) -> int:
        return len(self.distributed_atoms) + len(self.instantaneous_atoms)

    @property
    def slots(self) -> tuple[str, ...]:
        out: list[str] = []
        for a in self.atoms:
            out += [s for s in a.slots if s not in out]
        return tuple(out)

    def bind(self, values: dict) -> "LibrarySpec":
        return LibrarySpec(
            tuple(a.bind(values) for a in self.distributed_atoms),
            tuple(a.bind(values) for a in self.instantaneous_atoms),
            self.degree,
        )


def build_library(
    symbols,
    degree: int,
    multipliers=None,
    instantaneous=(),
    keep_current_only: bool = False,
) -> LibrarySpec:
    """Monomials over ``symbols`` times each multiplier atom, plus an instantaneous block.

    ``multipliers`` defaults to ``[1]``. Distributed atoms that only depend on the
    delay and the current state are dropped unless ``keep_current_only``.
    """
    monos = enumerate_monomials(symbols, degree)
    multipliers = list(multipliers) if multipliers else [Atom()]
    dist: list[Atom] = []
    seen = set()
    for mult in multipliers:
        for mono in monos:
            a = mult * mono
            if not keep_current_only and is_separable_current(a):
                continue
            if a.label() not in seen:
                seen.add(a.label())
                dist.append(a)
    return LibrarySpec(tuple(dist), tuple(instantaneous), degree)


# ---------------------------------------------------------------- assembly


@dataclass
class AssembledLibrary:
    matrix: np.ndarray
    labels: list[str]
    row_mask: np.ndarray
    atoms: list[Atom] = field(default_factory=list)

    def __post_init__(self):
        if self.matrix.shape[1] != len(self.labels):
            raise LibraryError("one label per column")


def assemble_distributed(traj: SampledTrajectory, rule: QuadratureRule, atoms) -> AssembledLibrary:
    atoms = list(atoms)
    vals, cov = shifted_grid(traj, rule.nodes)
    mask = cov.all(axis=0)
    if not mask.any():
        raise LibraryError(
            f"no sample has data coverage over the window [{rule.a:g}, {rule.b:g}] "
            f"(data spans [{traj.earliest_time:g}, {traj.times[-1]:g}])"
        )
    sh = vals[:, mask, :]
    cur = traj.states[mask]
    sigma = rule.nodes[:, None]
    m_eff = int(mask.sum())
    cache: dict = {}

    def factor(s: Symbol, p: int):
        key = (s, p)
        if key not in cache:
            v = s.evaluate(sigma, sh, cur)
            cache[key] = v if p == 1 else v**p
        return cache[key]

    mat = np.empty((m_eff, len(atoms)))
    for c, atom in enumerate(atoms):
        prod = np.ones((1, 1))
        for s, p in atom.factors:
            prod = prod * factor(s, p)
        prod = np.broadcast_to(prod, (rule.K, m_eff))
        mat[:, c] = rule.weights @ prod
    return AssembledLibrary(mat, [a.label() for a in atoms], mask, atoms)


def assemble_instantaneous(traj: SampledTrajectory, atoms) -> AssembledLibrary:
    atoms = list(atoms)
    mat = np.empty((traj.m, len(atoms)))
    for c, atom in enumerate(atoms):
        if not atom.is_instantaneous:
            raise LibraryError(f"atom {atom.label()} is not instantaneous")
        mat[:, c] = np.broadcast_to(atom.evaluate(None, None, traj.states), (traj.m,))
    return AssembledLibrary(mat, [a.label() for a in atoms], np.ones(traj.m, dtype=bool), atoms)


def concat(blocks) -> AssembledLibrary:
    blocks = list(blocks)
    if not blocks:
        raise LibraryError("nothing to concatenate")
    if len(blocks) == 1:
        return blocks[0]
    common = np.logical_and.reduce([b.row_mask for b in blocks])
    if not common.any():
        raise LibraryError("library blocks share no retained rows")
    mats = [b.matrix[common[b.row_mask]] for b in blocks]
    labels = [lab for b in blocks for lab in b.labels]
    atoms = [a for b in blocks for a in b.atoms]
    return AssembledLibrary(np.hstack(mats), labels, common, atoms)


def assemble(traj: SampledTrajectory, spec: LibrarySpec, rule: QuadratureRule | None) -> AssembledLibrary:
    """Instantaneous block followed by the distributed block."""
    blocks = []
    if spec.instantaneous_atoms:
        blocks.append(assemble_instantaneous(traj, spec.instantaneous_atoms))
    if spec.distributed_atoms:
        if rule is None:
            raise LibraryError("distributed atoms need a quadrature rule")
        blocks.append(assemble_distributed(traj, rule, spec.distributed_atoms))
    return concat(blocks)
