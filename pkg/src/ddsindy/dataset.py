"""Time-series containers, CSV I/O, shifted lookups, noise and splitting."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

T0_MARKER = "# --- t0 ---"
LOOKUP_MARKER = "# --- lookup ---"

# derivative provenance, in the order identification prefers them
DERIV_SOURCES = ("exact", "measured", "estimated")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class SampledTrajectory:
    times: np.ndarray
    states: np.ndarray
    derivs: np.ndarray | None = None
    history_times: np.ndarray | None = None
    history_values: np.ndarray | None = None
    derivs_source: str | None = None
    names: tuple[str, ...] | None = None
    # optional finer record of the same measurement, read only by shifted lookups
    lookup_times: np.ndarray | None = None
    lookup_values: np.ndarray | None = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)
        if times.ndim != 1 or states.ndim != 2:
            raise DatasetError("times must be 1-D and states 2-D")
        if states.shape[0] != times.shape[0]:
            raise DatasetError(f"{times.shape[0]} times but {states.shape[0]} state rows")
        if states.shape[1] < 1:
            raise DatasetError("need at least one state component")
        if np.any(np.diff(times) <= 0):
            raise DatasetError("non-monotone times: sample times must be strictly increasing")
        if self.derivs is not None:
            d = np.asarray(self.derivs, dtype=float)
            if d.ndim == 1:
                d = d[:, None]
            if d.shape != states.shape:
                raise DatasetError(f"derivs shape {d.shape} != states shape {states.shape}")
            object.__setattr__(self, "derivs", d)
            if self.derivs_source is None:
                object.__setattr__(self, "derivs_source", "measured")
        if (self.history_times is None) != (self.history_values is None):
            raise DatasetError("history_times and history_values go together")
        if self.history_times is not None:
            ht = np.asarray(self.history_times, dtype=float)
            hv = np.asarray(self.history_values, dtype=float)
            if hv.ndim == 1:
                hv = hv[:, None]
            if ht.ndim != 1 or hv.shape != (ht.shape[0], states.shape[1]):
                raise DatasetError("history values must be (len(history_times), n)")
            if len(ht) and (np.any(np.diff(ht) <= 0) or ht[-1] > times[0]):
                raise DatasetError("history times must be strictly increasing and <= times[0]")
            object.__setattr__(self, "history_times", ht)
            object.__setattr__(self, "history_values", hv)
        if (self.lookup_times is None) != (self.lookup_values is None):
            raise DatasetError("lookup_times and lookup_values go together")
        if self.lookup_times is not None:
            lt = np.asarray(self.lookup_times, dtype=float)
            lv = np.asarray(self.lookup_values, dtype=float)
            if lv.ndim == 1:
                lv = lv[:, None]
            if lt.ndim != 1 or len(lt) < 2 or lv.shape != (lt.shape[0], states.shape[1]):
                raise DatasetError("lookup record must have >= 2 rows of shape (len(lookup_times), n)")
            if np.any(np.diff(lt) <= 0):
                raise DatasetError("lookup times must be strictly increasing")
            object.__setattr__(self, "lookup_times", lt)
            object.__setattr__(self, "lookup_values", lv)
        if self.names is not None and len(self.names) != states.shape[1]:
            raise DatasetError("one name per state component")

    @property
    def m(self) -> int:
        return self.states.shape[0]

    @property
    def n(self) -> int:
        return self.states.shape[1]

    @property
    def has_history(self) -> bool:
        return self.history_times is not None and len(self.history_times) > 0

    @property
    def has_lookup(self) -> bool:
        return self.lookup_times is not None

    @property
    def earliest_time(self) -> float:
        if self.has_history:
            return float(min(self.history_times[0], self.times[0]))
        return float(self.times[0])

    def rows(self, idx) -> "SampledTrajectory":
        """Row subset keeping the history untouched."""
        return replace(
            self,
            times=self.times[idx],
            states=self.states[idx],
            derivs=None if self.derivs is None else self.derivs[idx],
        )


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8

    def __post_init__(self):
        if not 0.0 < self.train_fraction <= 1.0:
            raise DatasetError(f"train_fraction must lie in (0, 1], got {self.train_fraction}")


# ---------------------------------------------------------------- CSV I/O


def load_trajectory(path) -> SampledTrajectory:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"{path}: no such file")
    header = None
    hist_rows: list[list[float]] = []
    rows: list[list[float]] = []
    lookup_rows: list[list[float]] = []
    seen_marker = False
    in_lookup = False
    with path.open() as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                if line.replace(" ", "") == T0_MARKER.replace(" ", ""):
                    if seen_marker:
                        raise DatasetError(f"{path}:{lineno}: duplicate t0 marker")
                    seen_marker = True
                    hist_rows, rows = rows, []
                elif line.replace(" ", "") == LOOKUP_MARKER.replace(" ", ""):
                    in_lookup = True
                continue
            fields = [f.strip() for f in line.split(",")]
            if header is None:
                header = fields
                if header[0] != "t" or len(header) < 2:
                    raise DatasetError(f"{path}:{lineno}: header must start with 't' and name states")
                continue
            if len(fields) != len(header):
                raise DatasetError(
                    f"{path}:{lineno}: ragged row with {len(fields)} fields, header has {len(header)}"
                )
            try:
                (lookup_rows if in_lookup else rows).append([float(f) for f in fields])
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: cannot parse number ({exc})") from None
    if header is None:
        raise DatasetError(f"{path}: missing header")
    cols = header[1:]
    dcols = [c for c in cols if c.startswith("d") and c[1:] in cols]
    scols = [c for c in cols if c not in dcols]
    if dcols and [c[1:] for c in dcols] != scols:
        raise DatasetError(f"{path}: derivative columns must mirror state columns in order")
    if not rows:
        raise DatasetError(f"{path}: no data rows")
    data = np.array(rows)
    ns = len(scols)
    try:
        hist = None
        if hist_rows:
            h = np.array(hist_rows)
            hist = (h[:, 0], h[:, 1 : 1 + ns])
        look = np.array(lookup_rows) if lookup_rows else None
        return SampledTrajectory(
            times=data[:, 0],
            states=data[:, 1 : 1 + ns],
            derivs=data[:, 1 + ns :] if dcols else None,
            history_times=None if hist is None else hist[0],
            history_values=None if hist is None else hist[1],
            derivs_source="measured" if dcols else None,
            names=tuple(scols),
            lookup_times=None if look is None else look[:, 0],
            lookup_values=None if look is None else look[:, 1 : 1 + ns],
        )
    except DatasetError as exc:
        raise DatasetError(f"{path}: {exc}") from None


def save_trajectory(traj: SampledTrajectory, path, comment: str | None = None) -> None:
    path = Path(path)
    names = list(traj.names or [f"x{j + 1}" for j in range(traj.n)])
    header = ["t", *names]
    if traj.derivs is not None:
        header += [f"d{c}" for c in names]
    fmt = lambda v: repr(float(v))  # noqa: E731  round-trips exactly
    with path.open("w") as fh:
        if comment:
            for line in comment.splitlines():
                fh.write(f"# {line}\n")
        fh.write(",".join(header) + "\n")
        if traj.has_history:
            width = len(header) - 1 - traj.n
            for t, v in zip(traj.history_times, traj.history_values):
                fh.write(",".join([fmt(t), *map(fmt, v), *(["nan"] * width)]) + "\n")
            fh.write(T0_MARKER + "\n")
        for i in range(traj.m):
            vals = [fmt(traj.times[i]), *map(fmt, traj.states[i])]
            if traj.derivs is not None:
                vals += list(map(fmt, traj.derivs[i]))
            fh.write(",".join(vals) + "\n")
        if traj.has_lookup:
            fh.write(LOOKUP_MARKER + "\n")
            width = len(header) - 1 - traj.n
            for t, v in zip(traj.lookup_times, traj.lookup_values):
                fh.write(",".join([fmt(t), *map(fmt, v), *(["nan"] * width)]) + "\n")


# ---------------------------------------------------------------- lookups


def _coverage_tol(traj: SampledTrajectory) -> float:
    span = traj.times[-1] - traj.earliest_time
    return 1e-12 * max(1.0, abs(span), abs(traj.times[-1]))


def interpolate_at(traj: SampledTrajectory, query) -> tuple[np.ndarray, np.ndarray]:
    """Piecewise-linear state values at arbitrary times.

    Queries before ``times[0]`` read the history segment (bridged to the first
    sample if the history stops short of it); queries at or after ``times[0]``
    read the samples, or the finer lookup record where it covers them. The
    history therefore acts as a left limit, so a jump at
    the initial time (typical for renewal equations) is kept sharp.

    Returns ``(values, covered)`` with values of shape ``query.shape + (n,)``;
    uncovered entries are NaN.
    """
    q = np.asarray(query, dtype=float)
    flat = q.ravel()
    out = np.full((flat.size, traj.n), np.nan)
    tol = _coverage_tol(traj)
    t0 = traj.times[0]
    tend = traj.times[-1]
    flat = np.where(np.abs(flat - tend) <= tol, tend, flat)
    after = (flat >= t0 - tol) & (flat <= tend)
    before = np.zeros_like(after)
    if traj.has_history:
        ht, hv = traj.history_times, traj.history_values
        if ht[-1] < t0:
            ht = np.append(ht, t0)
            hv = np.vstack([hv, traj.states[:1]])
        flat = np.where(np.abs(flat - ht[0]) <= tol, ht[0], flat)
        before = (flat >= ht[0]) & (flat < t0 - tol)
        if len(ht) == 1:
            hist_vals = np.repeat(hv, before.sum(), axis=0)
        else:
            hist_vals = np.column_stack([np.interp(flat[before], ht, hv[:, j]) for j in range(traj.n)])
        out[before] = hist_vals
    qa = np.clip(flat[after], t0, tend)
    vals = np.column_stack([np.interp(qa, traj.times, traj.states[:, j]) for j in range(traj.n)])
    if traj.has_lookup:
        lt, lv = traj.lookup_times, traj.lookup_values
        inside = (qa >= lt[0]) & (qa <= lt[-1])
        if inside.any():
            vals[inside] = np.column_stack([np.interp(qa[inside], lt, lv[:, j]) for j in range(traj.n)])
    out[after] = vals
    covered = after | before
    return out.reshape(q.shape + (traj.n,)), covered.reshape(q.shape)


def shifted_values(traj: SampledTrajectory, sigma: float) -> tuple[np.ndarray, np.ndarray]:
    """States at ``times + sigma`` for the rows that have data coverage.

    Returns the (m_eff, n) matrix for the retained rows and the boolean row mask.
    """
    if sigma > 0:
        raise DatasetError(f"shift must be <= 0, got {sigma}")
    if sigma == 0:
        return traj.states.copy(), np.ones(traj.m, dtype=bool)
    vals, mask = interpolate_at(traj, traj.times + sigma)
    return vals[mask], mask


def shifted_grid(traj: SampledTrajectory, sigmas) -> tuple[np.ndarray, np.ndarray]:
    """Shifted values for several shifts at once: (K, m, n) values and (K, m) coverage."""
    sigmas = np.asarray(sigmas, dtype=float)
    if np.any(sigmas > 0):
        raise DatasetError("shifts must be <= 0")
    return interpolate_at(traj, traj.times[None, :] + sigmas[:, None])


# ---------------------------------------------------------------- derivatives / noise


def estimate_derivatives(traj: SampledTrajectory) -> np.ndarray:
    """Second-order finite differences on a possibly non-uniform grid."""
    if traj.m < 3:
        raise DatasetError(f"need at least 3 samples to estimate derivatives, got {traj.m}")
    return np.gradient(traj.states, traj.times, axis=0, edge_order=2)


def add_noise(traj: SampledTrajectory, level: float, seed: int) -> SampledTrajectory:
    """Additive Gaussian noise with std ``level * RMS`` of each state column.

    Derivatives, if present, are re-estimated from the noisy states. A lookup
    record is dropped, so shifted values come from the noisy samples; the
    history segment is left clean.
    """
    if level < 0:
        raise DatasetError(f"noise level must be >= 0, got {level}")
    if level == 0:
        return traj
    rng = np.random.default_rng(seed)
    rms = np.sqrt(np.mean(traj.states**2, axis=0))
    noisy = traj.states + rng.standard_normal(traj.states.shape) * (level * rms)
    out = replace(traj, states=noisy, derivs=None, derivs_source=None, lookup_times=None, lookup_values=None)
    if traj.derivs is not None:
        out = replace(out, derivs=estimate_derivatives(out), derivs_source="estimated")
    return out


# ---------------------------------------------------------------- splitting


def split_index(m: int, spec: SplitSpec) -> int:
    return int(math.ceil(spec.train_fraction * m - 1e-9))


def split(traj: SampledTrajectory, spec: SplitSpec) -> tuple[SampledTrajectory, SampledTrajectory]:
    """Contiguous prefix/suffix split.

    The validation part carries the original history followed by every training
    row as its history, so shifted lookups into the training era keep working.
    """
    cut = split_index(traj.m, spec)
    if cut <= 0 or cut >= traj.m:
        raise DatasetError(
            f"split with train_fraction={spec.train_fraction} leaves an empty subset (m={traj.m})"
        )
    train = traj.rows(slice(0, cut))
    ht = traj.times[:cut]
    hv = traj.states[:cut]
    if traj.has_history:
        keep = traj.history_times < traj.times[0]
        ht = np.concatenate([traj.history_times[keep], ht])
        hv = np.vstack([traj.history_values[keep], hv])
    val = replace(
        traj.rows(slice(cut, None)),
        history_times=ht,
        history_values=hv,
    )
    return train, val


def concat_rows(first: SampledTrajectory, second: SampledTrajectory) -> SampledTrajectory:
    """Inverse of :func:`split`: glue a prefix and a suffix back together."""
    derivs = None
    if first.derivs is not None and second.derivs is not None:
        derivs = np.vstack([first.derivs, second.derivs])
    return replace(
        first,
        times=np.concatenate([first.times, second.times]),
        states=np.vstack([first.states, second.states]),
        derivs=derivs,
    )
