"""Identification pipelines: distributed-delay SINDy, black-box SINDy on lagged
values, and integral SINDy for ODEs, plus error metrics and model rendering."""

from __future__ import annotations

import itertools
import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import library as lib
from .dataset import (
    SampledTrajectory,
    SplitSpec,
    estimate_derivatives,
    shifted_grid,
    split_index,
)
from .library import AssembledLibrary, Atom, LibraryError, LibrarySpec
from .quadrature import QuadratureRule, make_rule
from .regression import fit_all

log = logging.getLogger(__name__)

KINDS = ("RE", "DIDE")


class IdentificationError(RuntimeError):
    pass


def normalize_kinds(kinds, n: int) -> tuple[str, ...]:
    if isinstance(kinds, str):
        kinds = [kinds] * n if "," not in kinds else kinds.split(",")
    kinds = tuple(k.strip().upper() for k in kinds)
    if len(kinds) != n:
        raise IdentificationError(f"need {n} equation kinds, got {len(kinds)}")
    for k in kinds:
        if k not in KINDS:
            raise IdentificationError(f"equation kind must be RE or DIDE, got {k!r}")
    return kinds


@dataclass
class SparseModel:
    xi: np.ndarray  # (p, n)
    spec: LibrarySpec
    kinds: tuple[str, ...]
    window: tuple[float, float] | None = None
    quadrature: str | None = None
    K: int | None = None
    names: tuple[str, ...] | None = None
    model_type: str = "dd"  # dd | bb | ode
    bb_lags: tuple[float, ...] = ()
    bb_labels: tuple[str, ...] = ()

    @property
    def n(self) -> int:
        return self.xi.shape[1]

    @property
    def labels(self) -> list[str]:
        if self.model_type == "bb":
            return list(self.bb_labels)
        return [a.label() for a in self.spec.atoms]

    @property
    def n_instantaneous(self) -> int:
        return len(self.spec.instantaneous_atoms)

    def rule(self) -> QuadratureRule | None:
        if self.window is None or not self.spec.distributed_atoms:
            return None
        return make_rule(self.quadrature, self.K, *self.window)

    def coefficients(self, j: int = 0) -> dict[str, float]:
        """Nonzero coefficients of equation j keyed by atom label."""
        return {lab: float(c) for lab, c in zip(self.labels, self.xi[:, j]) if c != 0}

    def design(self, traj: SampledTrajectory) -> AssembledLibrary:
        if self.model_type == "bb":
            return bb_features(traj, self.bb_lags, self.bb_labels)
        if self.model_type == "ode":
            return lib.assemble_instantaneous(traj, self.spec.instantaneous_atoms)
        return lib.assemble(traj, self.spec, self.rule())


@dataclass
class FitReport:
    rmse_train: float
    rmse_val: float | None
    eps: float
    rmse_train_components: list[float]
    rmse_val_components: list[float] | None
    n_train: int
    n_val: int
    target_sources: list[str]
    row_mask: np.ndarray
    rank_deficient: bool = False
    notes: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "rmse_train": self.rmse_train,
            "rmse_val": self.rmse_val,
            "eps": self.eps,
            "n_train": self.n_train,
            "n_val": self.n_val,
            "target_sources": ",".join(self.target_sources),
            "rank_deficient": self.rank_deficient,
        }


# ---------------------------------------------------------------- targets


def targets(traj: SampledTrajectory, kinds) -> tuple[np.ndarray, list[str]]:
    """Regression targets per component: states for RE, derivatives for DIDE.

    Derivatives come from the trajectory when stored (exact or measured), else
    from second-order finite differences.
    """
    kinds = normalize_kinds(kinds, traj.n)
    Y = traj.states.copy()
    sources = ["state"] * traj.n
    est = None
    for j, k in enumerate(kinds):
        if k != "DIDE":
            continue
        if traj.derivs is not None and np.all(np.isfinite(traj.derivs[:, j])):
            Y[:, j] = traj.derivs[:, j]
            sources[j] = traj.derivs_source or "measured"
        else:
            if est is None:
                est = estimate_derivatives(traj)
            Y[:, j] = est[:, j]
            sources[j] = "estimated"
    return Y, sources


def _rmse(res: np.ndarray) -> float:
    return float(np.sqrt(np.mean(res**2))) if res.size else float("nan")


def _score(theta, Y, xi, cut):
    res = Y - theta @ xi
    tr, va = res[:cut], res[cut:]
    n_val = va.shape[0]
    return FitReport(
        rmse_train=_rmse(tr),
        rmse_val=_rmse(va) if n_val else None,
        eps=_rmse(res),
        rmse_train_components=[_rmse(tr[:, j]) for j in range(res.shape[1])],
        rmse_val_components=[_rmse(va[:, j]) for j in range(res.shape[1])] if n_val else None,
        n_train=tr.shape[0],
        n_val=n_val,
        target_sources=[],
        row_mask=np.ones(0, bool),
    )


# ---------------------------------------------------------------- DD-SINDy


def dd_sindy(
    traj: SampledTrajectory,
    kinds,
    spec: LibrarySpec,
    rule: QuadratureRule | None,
    lam: float,
    solver: str = "stls",
    train_fraction: float = 1.0,
    max_iters: int = 25,
    normalize_columns: bool = True,
) -> tuple[SparseModel, FitReport]:
    """Quadrature-weighted sparse regression for RE/DIDE systems.

    The library is assembled once over all rows; the first ``train_fraction``
    of the trajectory rows (among those with data coverage) is used to fit and
    the remaining rows are scored as validation.
    """
    kinds = normalize_kinds(kinds, traj.n)
    if spec.slots:
        raise IdentificationError(f"library has unbound parameter slots {spec.slots}")
    try:
        A = lib.assemble(traj, spec, rule)
    except LibraryError as exc:
        window = "" if rule is None else f" for window [{rule.a:g}, {rule.b:g}]"
        raise IdentificationError(f"library assembly failed{window}: {exc}") from None
    Y_all, sources = targets(traj, kinds)
    Y = Y_all[A.row_mask]
    cut_row = split_index(traj.m, SplitSpec(train_fraction)) if train_fraction < 1 else traj.m
    cut = int(A.row_mask[:cut_row].sum())
    if cut == 0:
        raise IdentificationError("no training rows with data coverage; widen the data or shrink the window")
    coefs = fit_all(A.matrix[:cut], Y[:cut], lam, solver, A.labels, max_iters, normalize_columns)
    model = SparseModel(
        xi=coefs.xi,
        spec=spec,
        kinds=kinds,
        window=None if rule is None else (rule.a, rule.b),
        quadrature=None if rule is None else rule.kind,
        K=None if rule is None else rule.K,
        names=traj.names,
    )
    report = _score(A.matrix, Y, coefs.xi, cut)
    report.target_sources = sources
    report.row_mask = A.row_mask
    report.rank_deficient = coefs.rank_deficient
    return model, report


def reconstruction_error(model: SparseModel, traj_train: SampledTrajectory, traj_val: SampledTrajectory | None = None) -> dict:
    """Pooled RMSE of the residual over train and validation rows and all components."""
    parts = {}
    sq, count = 0.0, 0
    for name, tr in (("train", traj_train), ("val", traj_val)):
        if tr is None:
            continue
        A = model.design(tr)
        Y, _ = targets(tr, model.kinds)
        res = Y[A.row_mask] - A.matrix @ model.xi
        parts[name] = _rmse(res)
        parts[f"n_{name}"] = res.shape[0]
        sq += float(np.sum(res**2))
        count += res.size
    parts["eps"] = float(np.sqrt(sq / count)) if count else float("nan")
    return parts


# ---------------------------------------------------------------- BB-SINDy


def _lag_label(j: int, lag: float) -> str:
    return f"x{j + 1}" if lag == 0 else f"x{j + 1}[{lag!r}]"


_LAG = re.compile(r"^x(\d+)(?:\[([^\]]+)\])?$")


def bb_labels(n: int, lags, degree: int) -> list[str]:
    variables = [_lag_label(j, 0.0) for j in range(n)]
    variables += [_lag_label(j, float(s)) for s in lags if s != 0 for j in range(n)]
    out = ["1"]
    for deg in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(range(len(variables)), deg):
            counts: dict[int, int] = {}
            for i in combo:
                counts[i] = counts.get(i, 0) + 1
            out.append("*".join(variables[i] if c == 1 else f"{variables[i]}^{c}" for i, c in counts.items()))
    return out


def bb_features(traj: SampledTrajectory, lags, labels) -> AssembledLibrary:
    lags = np.asarray([s for s in lags if s != 0], dtype=float)
    if lags.size:
        vals, cov = shifted_grid(traj, lags)
        mask = cov.all(axis=0)
    else:
        vals, mask = np.empty((0, traj.m, traj.n)), np.ones(traj.m, bool)
    if not mask.any():
        raise IdentificationError("no rows with coverage for every lag")
    lag_index = {float(s): k for k, s in enumerate(lags)}
    mat = np.ones((int(mask.sum()), len(labels)))
    for c, label in enumerate(labels):
        if label == "1":
            continue
        for part in label.split("*"):
            base, _, pw = part.partition("^")
            m = _LAG.match(base)
            if not m:
                raise IdentificationError(f"bad BB label {label!r}")
            j = int(m[1]) - 1
            col = traj.states[mask, j] if m[2] is None else vals[lag_index[float(m[2])], mask, j]
            mat[:, c] *= col ** (int(pw) if pw else 1)
    return AssembledLibrary(mat, list(labels), mask, [])


def bb_sindy(
    traj: SampledTrajectory,
    lag_nodes,
    lam: float,
    degree: int = 1,
    solver: str = "stls",
    train_fraction: float = 1.0,
    kinds="DIDE",
) -> tuple[SparseModel, FitReport]:
    """Polynomial SINDy over current and lagged states, without quadrature weights."""
    kinds = normalize_kinds(kinds, traj.n)
    lags = tuple(float(s) for s in lag_nodes)
    labels = bb_labels(traj.n, lags, degree)
    A = bb_features(traj, lags, labels)
    Y_all, sources = targets(traj, kinds)
    Y = Y_all[A.row_mask]
    cut_row = split_index(traj.m, SplitSpec(train_fraction)) if train_fraction < 1 else traj.m
    cut = int(A.row_mask[:cut_row].sum())
    coefs = fit_all(A.matrix[:cut], Y[:cut], lam, solver, labels)
    model = SparseModel(coefs.xi, LibrarySpec(), kinds, names=traj.names, model_type="bb",
                        bb_lags=lags, bb_labels=tuple(labels))
    report = _score(A.matrix, Y, coefs.xi, cut)
    report.target_sources = sources
    report.row_mask = A.row_mask
    report.rank_deficient = coefs.rank_deficient
    return model, report


# ---------------------------------------------------------------- integral SINDy (ODE)


def _uniform(traj: SampledTrajectory) -> SampledTrajectory:
    dt = np.diff(traj.times)
    if np.ptp(dt) <= 1e-9 * dt.mean():
        return traj
    t = np.linspace(traj.times[0], traj.times[-1], traj.m)
    states = np.column_stack([np.interp(t, traj.times, traj.states[:, j]) for j in range(traj.n)])
    return SampledTrajectory(t, states, names=traj.names)


def integral_sindy_ode(
    traj: SampledTrajectory,
    spec: LibrarySpec | list,
    lam: float,
    solver: str = "stls",
    cumulative: str = "rectangles",
) -> tuple[SparseModel, FitReport]:
    """Regress x(t_i) - x(t_0) on cumulative quadrature sums of the library.

    ``cumulative`` is ``rectangles`` (left sums h * sum_{k<i}) or ``trapezoid``.
    Non-uniform grids are resampled linearly onto a uniform grid first.
    """
    if traj.m < 2:
        raise IdentificationError("integral SINDy needs at least 2 samples")
    if not isinstance(spec, LibrarySpec):
        spec = LibrarySpec((), tuple(spec))
    if spec.distributed_atoms:
        raise IdentificationError("integral SINDy for ODEs uses instantaneous atoms only")
    tr = _uniform(traj)
    h = tr.times[1] - tr.times[0]
    A = lib.assemble_instantaneous(tr, spec.instantaneous_atoms)
    Th = A.matrix
    if cumulative == "rectangles":
        C = h * np.vstack([np.zeros(Th.shape[1]), np.cumsum(Th[:-1], axis=0)])
    elif cumulative == "trapezoid":
        C = np.vstack([np.zeros(Th.shape[1]), np.cumsum(h * 0.5 * (Th[1:] + Th[:-1]), axis=0)])
    else:
        raise IdentificationError(f"unknown cumulative rule {cumulative!r}")
    Y = tr.states - tr.states[0]
    coefs = fit_all(C[1:], Y[1:], lam, solver, A.labels)
    model = SparseModel(coefs.xi, spec, ("DIDE",) * tr.n, names=tr.names, model_type="ode")
    report = _score(C[1:], Y[1:], coefs.xi, tr.m - 1)
    report.target_sources = ["integral"] * tr.n
    report.row_mask = np.ones(tr.m, bool)
    report.rank_deficient = coefs.rank_deficient
    return model, report


# ---------------------------------------------------------------- kernel evaluation


def evaluate_kernel(model: SparseModel, sigma_grid, state_values, current_values=None, component: int = 0):
    """Recovered kernel g(sigma, x) of one equation on a sigma grid.

    ``state_values`` is the (n,) state plugged in for x(t + sigma); the current
    state defaults to the same values.
    """
    sigma = np.asarray(sigma_grid, dtype=float)[:, None]
    x = np.atleast_1d(np.asarray(state_values, dtype=float))
    xc = x if current_values is None else np.atleast_1d(np.asarray(current_values, dtype=float))
    shifted = np.broadcast_to(x, (sigma.shape[0], 1, x.size))
    cur = xc[None, :]
    out = np.zeros(sigma.shape[0])
    ni = model.n_instantaneous
    for atom, c in zip(model.spec.distributed_atoms, model.xi[ni:, component]):
        if c != 0:
            out += c * np.broadcast_to(atom.evaluate(sigma, shifted, cur), (sigma.shape[0], 1))[:, 0]
    return out


# ---------------------------------------------------------------- rendering


def _coef(c: float, precision: int) -> str:
    return f"{abs(c):.{precision}g}"


def _terms(coefs, atoms, names, precision):
    out = []
    for c, a in zip(coefs, atoms):
        if c == 0:
            continue
        body = _coef(c, precision) if a.is_constant else f"{_coef(c, precision)}·{a.pretty(names, precision=precision + 2)}"
        out.append(("-" if c < 0 else "+", body))
    return out


def _join(terms) -> str:
    if not terms:
        return ""
    sign, body = terms[0]
    s = ("-" if sign == "-" else "") + body
    for sign, body in terms[1:]:
        s += f" {sign} {body}"
    return s


def render_model(model: SparseModel, precision: int = 4) -> str:
    names = model.names or tuple(f"x{j + 1}" for j in range(model.n))
    lines = []
    for j in range(model.n):
        lhs = f"{names[j]}'(t)" if model.kinds[j] == "DIDE" else f"{names[j]}(t)"
        xi = model.xi[:, j]
        if model.model_type == "bb":
            terms = [("-" if c < 0 else "+", f"{_coef(c, precision)}·{lab}") for c, lab in zip(xi, model.bb_labels) if c != 0]
            rhs = _join(terms)
        else:
            ni = model.n_instantaneous
            inst = _join(_terms(xi[:ni], model.spec.instantaneous_atoms, names, precision))
            dist = _join(_terms(xi[ni:], model.spec.distributed_atoms, names, precision))
            rhs = inst
            if dist:
                a, b = model.window
                integral = f"∫_{{{a:g}}}^{{{b:g}}} [ {dist} ] ds"
                rhs = f"{inst} + {integral}" if inst else integral
        lines.append(f"{lhs} = {rhs or '0'}")
    return "\n".join(lines)


def _pretty_to_label(text: str, names) -> str:
    out = text
    for j, nm in sorted(enumerate(names), key=lambda e: -len(e[1])):
        out = out.replace(f"{nm}(t+s)", f"@{j + 1}d@").replace(f"{nm}(t)", f"@{j + 1}@")
    out = re.sub(r"@(\d+)d@", r"x\1d", out)
    out = re.sub(r"@(\d+)@", r"x\1", out)
    out = re.sub(r"F\[([^,\]]+),([^\]]+)\]\(s\)", r"gam(\1,\2)", out)
    out = re.sub(r"(?<![a-z0-9])s(?![a-z0-9(])", "sig", out)
    return out


def parse_rendered(text: str, names) -> list[dict[str, float]]:
    """Inverse of :func:`render_model` for DD models: per equation, {label: coefficient}."""
    eqs = []
    for line in text.strip().splitlines():
        _, _, rhs = line.partition(" = ")
        coefs: dict[str, float] = {}
        if rhs.strip() == "0":
            eqs.append(coefs)
            continue
        chunks = re.split(r"\s*∫_\{[^}]*\}\^\{[^}]*\} \[ | \] ds", rhs)
        for chunk in chunks:
            chunk = chunk.strip()
            if chunk in ("", "+"):
                continue
            if chunk.endswith(" +"):
                chunk = chunk[:-2]
            tokens = re.split(r" ([+-]) ", " + " + chunk if not chunk.startswith("-") else " - " + chunk[1:])
            for sign, term in zip(tokens[1::2], tokens[2::2]):
                cstr, _, atom = term.partition("·")
                c = float(cstr) * (-1 if sign == "-" else 1)
                label = "1" if not atom else lib.parse_atom(_pretty_to_label(atom, names)).label()
                coefs[label] = c
        eqs.append(coefs)
    return eqs


# ---------------------------------------------------------------- model files


def save_model(model: SparseModel, path) -> None:
    lines = ["# ddsindy model file", "[model]", f"type = {model.model_type}"]
    names = model.names or tuple(f"x{j + 1}" for j in range(model.n))
    lines.append(f"names = {','.join(names)}")
    if model.model_type == "bb":
        lines.append(f"lags = {','.join(repr(float(s)) for s in model.bb_lags)}")
    if model.window is not None:
        lines += ["[window]", f"a = {model.window[0]!r}", f"b = {model.window[1]!r}"]
    if model.quadrature is not None:
        lines += ["[quadrature]", f"kind = {model.quadrature}", f"K = {model.K}"]
    for j in range(model.n):
        lines += [f"[equation {j + 1}]", f"kind = {model.kinds[j]}"]
        if model.model_type == "bb":
            lines += [f"bb.{lab} = {float(c)!r}" for lab, c in zip(model.bb_labels, model.xi[:, j])]
        else:
            ni = model.n_instantaneous
            lines += [f"inst.{a.label()} = {float(c)!r}" for a, c in zip(model.spec.instantaneous_atoms, model.xi[:ni, j])]
            lines += [f"dist.{a.label()} = {float(c)!r}" for a, c in zip(model.spec.distributed_atoms, model.xi[ni:, j])]
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path) -> SparseModel:
    sections: dict[str, list[tuple[str, str]]] = {}
    cur = None
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            cur = line[1:-1].strip()
            sections[cur] = []
            continue
        if cur is None:
            raise IdentificationError(f"{path}: entry outside a section: {line!r}")
        key, sep, val = line.rpartition(" = ")
        if not sep:
            raise IdentificationError(f"{path}: expected 'key = value', got {line!r}")
        sections[cur].append((key.strip(), val.strip()))
    meta = dict(sections.get("model", []))
    mtype = meta.get("type", "dd")
    names = tuple(meta["names"].split(",")) if "names" in meta else None
    eq_names = sorted((s for s in sections if s.startswith("equation ")), key=lambda s: int(s.split()[1]))
    kinds, cols = [], []
    inst_labels: list[str] = []
    dist_labels: list[str] = []
    bb: list[str] = []
    for k, sec in enumerate(eq_names):
        entries = sections[sec]
        kinds.append(dict(entries)["kind"])
        col = []
        il, dl, bl = [], [], []
        for key, val in entries:
            if key.startswith("inst."):
                il.append(key[5:])
            elif key.startswith("dist."):
                dl.append(key[5:])
            elif key.startswith("bb."):
                bl.append(key[3:])
            else:
                continue
            col.append(float(val))
        if k == 0:
            inst_labels, dist_labels, bb = il, dl, bl
        elif (il, dl, bl) != (inst_labels, dist_labels, bb):
            raise IdentificationError(f"{path}: equations must share one library")
        cols.append(col)
    xi = np.array(cols, dtype=float).T
    window = None
    if "window" in sections:
        w = dict(sections["window"])
        window = (float(w["a"]), float(w["b"]))
    quad, K = None, None
    if "quadrature" in sections:
        q = dict(sections["quadrature"])
        quad, K = q["kind"], int(q["K"])
    if mtype == "bb":
        lags = tuple(float(s) for s in meta.get("lags", "").split(",") if s)
        return SparseModel(xi, LibrarySpec(), tuple(kinds), names=names, model_type="bb",
                           bb_lags=lags, bb_labels=tuple(bb))
    spec = LibrarySpec(
        tuple(lib.parse_atom(s) for s in dist_labels),
        tuple(lib.parse_atom(s) for s in inst_labels),
    )
    return SparseModel(xi, spec, tuple(kinds), window, quad, K, names, mtype)


def coefficient_errors(model: SparseModel, truth: list[dict[str, float]]) -> list[dict[str, float]]:
    """Absolute error per atom for every atom that is active or true."""
    out = []
    for j, true in enumerate(truth):
        got = model.coefficients(j)
        canon_true = {_canon(k): v for k, v in true.items()}
        canon_got = {_canon(k): v for k, v in got.items()}
        keys = list(dict.fromkeys([*canon_true, *canon_got]))
        out.append({k: abs(canon_got.get(k, 0.0) - canon_true.get(k, 0.0)) for k in keys})
    return out


def _canon(label: str) -> str:
    try:
        return lib.parse_atom(label).label()
    except LibraryError:
        return label


def with_kinds(model: SparseModel, kinds) -> SparseModel:
    return replace(model, kinds=normalize_kinds(kinds, model.n))
