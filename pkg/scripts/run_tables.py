"""Run every benchmark configuration and merge the results into comparison tables.

    python scripts/run_tables.py --out runs/tables [--seeds 0 1 2 3 4]
"""

import argparse
from pathlib import Path

from ddsindy.cli import main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def run(kind, config, out, *extra):
    code = main([kind, str(CONFIGS / config), "--out", str(out), *extra])
    print(f"{out}: exit {code}")
    return code


def main_tables(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/tables")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    args = ap.parse_args(argv)
    root = Path(args.out)
    groups = {
        "logistic": [run("identify", "logistic_re.toml", root / "logistic_d3"),
                     run("identify", "logistic_re.toml", root / "logistic_d2", "--set", "library.degree=2")],
        "ricker_simple": [run("identify", "ricker_simple.toml", root / "ricker_dd"),
                          run("identify", "ricker_simple_bb.toml", root / "ricker_bb")],
    }
    groups["ricker_advanced"] = [run("optimize", "ricker_advanced.toml", root / f"ricker_adv_seed{s}", "--seed", str(s))
                                 for s in args.seeds]
    groups["ricker_noisy"] = [run("optimize", "ricker_advanced.toml", root / f"ricker_noise_seed{s}",
                                  "--seed", str(s), "--noise", "0.2") for s in args.seeds]
    groups["daphnia"] = [run("optimize", "daphnia.toml", root / f"daphnia_seed{s}", "--seed", str(s))
                         for s in args.seeds]
    prefixes = {"logistic": "logistic_", "ricker_simple": "ricker_", "ricker_advanced": "ricker_adv_",
                "ricker_noisy": "ricker_noise_", "daphnia": "daphnia_"}
    for name, prefix in prefixes.items():
        dirs = [d for d in sorted(root.glob(f"{prefix}*")) if (d / "summary.csv").exists()]
        if name == "ricker_simple":
            dirs = [root / "ricker_dd", root / "ricker_bb"]
        main(["report", *map(str, dirs), "--out", str(root / f"table_{name}")])
    return 0


if __name__ == "__main__":
    raise SystemExit(main_tables())
