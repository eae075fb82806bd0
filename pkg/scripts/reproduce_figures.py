"""Run the convergence studies in scripts/plans and print fitted slopes.

    python scripts/reproduce_figures.py                 # all plans
    python scripts/reproduce_figures.py theta_sweep marking --jobs 2
"""
import argparse
import sys
from pathlib import Path

from afem.report import compare_markings, load_plan, run_experiment

PLANS = Path(__file__).parent / "plans"
DEFAULT = ["kappa_sweep_z1", "kappa_sweep_z2", "theta_sweep", "marking"]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("plans", nargs="*", default=DEFAULT)
    ap.add_argument("--jobs", type=int, default=1)
    a = ap.parse_args(argv)
    failed = False
    for name in a.plans:
        plan = load_plan(PLANS / f"{name}.ini")
        res = run_experiment(plan, jobs=a.jobs)
        print(f"{'run':<40} {'N':>8} {'eta':>8} {'H1':>8} {'entry':>6}")
        for row in res.summary:
            f = lambda v: "-" if v is None else f"{v:.3f}"
            print(f"{row['run']:<40} {row['final_elements']:>8} {f(row['eta_slope']):>8} "
                  f"{f(row['h1_slope']):>8} {str(row['corridor_entry']):>6}")
        if name == "marking":
            for row in compare_markings(plan.runs, res.runs):
                print(f"{row['reference']} vs {row['other']}: max eta deviation {row['max_deviation']:.3%}")
        failed |= bool(res.violations)
        print(f"figures: {', '.join(str(p) for p in res.figures)}\n")
    return 2 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
