#!/usr/bin/env python3
"""
Simulation Tables Script
Runs the named Monte Carlo campaigns and writes one CSV + markdown per setting
"""

import os
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from drss.config import RunConfig  # noqa: E402
from drss.sim import DgpSpec, adjusted_grid, estimation_error_curve, run_setting  # noqa: E402

# name -> [(setting, N, p, pi, s_m, s_pi)]
TABLES = {
    "mcar": [("a", 10000, 10, 0.01, None, None), ("a", 50000, 10, 0.01, None, None), ("a", 10000, 10, 0.1, None, None),
             ("b", 10000, 10, 0.01, None, None)],
    "mar": [("c", 10000, 10, 0.01, None, None), ("d", 10000, 10, 0.01, None, None)],
    "highdim": [("a", 10000, 500, 0.01, None, None), ("c", 10000, 500, 0.01, None, None)],
    "sparse": [("c'", 50000, 500, 0.01, 3, 15), ("c'", 200000, 500, 0.01, 3, 15),
               ("c'", 50000, 500, 0.01, 15, 3), ("c'", 200000, 500, 0.01, 15, 3)],
    "stratified": [("e", 10000, 10, 0.01, None, None), ("e", 10000, 10, 0.1, None, None)],
    "adjusted": [("c", 10000, 10, 0.01, None, None), ("d", 10000, 10, 0.01, None, None),
                 ("f", 10000, 10, 0.01, None, None)],
}
RATE_NS = [12500, 50000, 200000]


def run_table(name, reps, out_dir, seed):
    """Run every setting of one named table and write its outputs"""
    out_dir.mkdir(parents=True, exist_ok=True)
    n_jobs = int(os.getenv("DRSS_N_JOBS", "1"))
    adjust = name == "adjusted"
    for setting, N, p, pi, s_m, s_pi in TABLES[name]:
        spec = DgpSpec.from_setting(setting, N, p, pi, s_m, s_pi)
        table_reps = RunConfig(p=p, reps=reps).replications
        grid = adjusted_grid() if adjust else None
        table = run_setting(spec, grid, table_reps, seed=seed, n_jobs=n_jobs, adjust=adjust, progress=True)
        stem = f"{name}_{setting.replace(chr(39), 'prime')}_N{N}_p{p}_pi{pi:g}"
        if s_m:
            stem += f"_sm{s_m}_spi{s_pi}"
        table.to_csv(out_dir / f"{stem}.csv")
        (out_dir / f"{stem}.md").write_text(f"## {spec.label}\n\n{table.to_markdown()}\n", encoding="utf-8")
        print(f"\n## {spec.label}\n")
        print(table.to_markdown())


def run_rates(reps, out_dir, seed):
    """Offset logistic estimation error against N, MLE (p=10) and lasso (p=500, s_pi=15)"""
    out_dir.mkdir(parents=True, exist_ok=True)
    n_jobs = int(os.getenv("DRSS_N_JOBS", "1"))
    reps = reps or 100
    mle = estimation_error_curve(RATE_NS, 10, 0.01, reps, seed, n_jobs=n_jobs)
    lasso = estimation_error_curve(RATE_NS, 500, 0.01, reps, seed, lasso=True, s_pi=15, n_jobs=n_jobs)
    mle.to_csv(out_dir / "rate_mle.csv", index=False, float_format="%.17g")
    lasso.to_csv(out_dir / "rate_lasso.csv", index=False, float_format="%.17g")
    print(mle.to_markdown(index=False))
    print(lasso.to_markdown(index=False))


def main():
    """Main function"""
    if len(sys.argv) < 2:
        print("Usage: python run_tables.py <table> [reps] [out_dir] [seed]")
        print(f"Tables: {', '.join(TABLES)}, rates, all")
        sys.exit(1)

    name = sys.argv[1]
    reps = int(sys.argv[2]) if len(sys.argv) > 2 else None
    out_dir = Path(sys.argv[3]) if len(sys.argv) > 3 else Path("results")
    seed = int(sys.argv[4]) if len(sys.argv) > 4 else 20240101

    if name not in TABLES and name not in ("rates", "all"):
        print(f"Error: unknown table '{name}'")
        sys.exit(1)

    try:
        names = list(TABLES) if name == "all" else [name] if name != "rates" else []
        for table_name in names:
            run_table(table_name, reps, out_dir, seed)
        if name in ("rates", "all"):
            run_rates(reps, out_dir, seed)
    except Exception as e:
        print(f"Error: {str(e)}")
        sys.exit(2)


if __name__ == "__main__":
    main()
