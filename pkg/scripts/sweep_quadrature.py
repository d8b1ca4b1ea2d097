"""Coefficient error of the logistic RE fit against K, m and lambda for each quadrature kind.

Runs one ``ddsindy identify`` per setting (in parallel) and merges them with
``ddsindy report``, which writes sweep.csv and sweep_vs_<axis>.csv.

    python scripts/sweep_quadrature.py --out runs/sweep
"""

import argparse
import itertools
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from ddsindy.cli import main

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "logistic_re.toml"
KINDS = ("rectangles", "trapezoid", "clenshaw_curtis")


def one(job):
    out, kind, K, m, lam = job
    run = Path(out) / f"{kind}_K{K}_m{m}_lam{lam:g}"
    code = main(["identify", str(CONFIG), "--quadrature", kind, "--K", str(K), "--lambda", repr(lam),
                 "--set", f"data.overrides.m={m}", "--set", f'report.name="{run.name}"', "--out", str(run)])
    return str(run) if code == 0 else None


def main_sweep(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/sweep")
    ap.add_argument("--K", type=int, nargs="+", default=[8, 16, 32, 64, 128])
    ap.add_argument("--m", type=int, nargs="+", default=[50, 200, 1000])
    ap.add_argument("--lambda", dest="lam", type=float, nargs="+", default=[1e-1, 1e-2, 1e-3])
    ap.add_argument("--workers", type=int, default=None)
    args = ap.parse_args(argv)
    jobs = [(args.out, *j) for j in itertools.product(KINDS, args.K, args.m, args.lam)]
    with ProcessPoolExecutor(args.workers) as pool:
        runs = [r for r in pool.map(one, jobs) if r]
    return main(["report", *runs, "--out", str(Path(args.out) / "report")])


if __name__ == "__main__":
    raise SystemExit(main_sweep())
