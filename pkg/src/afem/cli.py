"""Command line entry point: ``afem run|sweep|report|mesh-dump``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .driver import RunConfig, run_afem
from .marking import MarkingStrategy
from .mesh import uniform_refine, write_mesh
from .problems import PROBLEMS, get_problem, singularity_exponent, variant_of
from .report import (ExperimentPlan, expand_section, load_plan, report_directory, run_experiment)

EXIT_THRESHOLD = 2


def _add_assert(p):
    p.add_argument("--assert", dest="check", action="store_true",
                   help="exit with status 2 if a run misses its expected slope interval")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="afem", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute an INI experiment plan")
    p.add_argument("plan", type=Path)
    p.add_argument("--jobs", type=int, default=None, help="parallel worker processes")
    p.add_argument("--output", type=Path, default=None, help="override the plan's output directory")
    _add_assert(p)

    p = sub.add_parser("sweep", help="kappa/theta/marking sweep from inline flags")
    p.add_argument("--problem", choices=sorted(PROBLEMS), required=True)
    p.add_argument("--kappa", type=float, nargs="+", default=[2.0])
    p.add_argument("--theta", type=float, nargs="+", default=[0.5])
    p.add_argument("--marking", nargs="+", default=["standard"], choices=["standard", "expanded", "maxguard"])
    p.add_argument("--max-elements", type=float, default=1e4)
    p.add_argument("--uniform", action="store_true", help="add a uniform-refinement run per kappa")
    p.add_argument("--output", type=Path, default=Path("out/sweep"))
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--timing", action="store_true", help="record wall times (CSV no longer byte-stable)")
    _add_assert(p)

    p = sub.add_parser("report", help="re-fit and re-plot an output directory")
    p.add_argument("directory", type=Path)
    _add_assert(p)

    p = sub.add_parser("mesh-dump", help="write a mesh in the text format")
    p.add_argument("--problem", choices=sorted(PROBLEMS), required=True)
    p.add_argument("--uniform-steps", type=int, default=0)
    p.add_argument("--adaptive", action="store_true", help="dump the final mesh of an adaptive run")
    p.add_argument("--kappa", type=float, default=2.0)
    p.add_argument("--theta", type=float, default=0.5)
    p.add_argument("--max-elements", type=float, default=1e3)
    p.add_argument("-o", "--output", type=Path, required=True)
    return ap


def _sweep_plan(a) -> ExperimentPlan:
    beta = singularity_exponent(variant_of(a.problem))
    opts = dict(problem=a.problem, kappa=" ".join(map(str, a.kappa)), theta=" ".join(map(str, a.theta)),
                marking=" ".join(a.marking), max_elements=str(int(a.max_elements)),
                uniform="both" if a.uniform else "false", timing=str(a.timing), figure="sweep")
    runs = []
    for s in expand_section("sweep", opts):
        lo, hi = (-beta / 2 - 0.06, -beta / 2 + 0.06) if s.uniform else (-0.58, -0.42)
        runs.append(type(s)(**{**s.__dict__, "expect_slope": (lo, hi)}))
    return ExperimentPlan(name="sweep", output=a.output, runs=runs, jobs=a.jobs)


def main(argv=None) -> int:
    a = build_parser().parse_args(argv)
    if a.command == "run":
        plan = load_plan(a.plan)
        if a.output is not None:
            plan.output = a.output
        res = run_experiment(plan, jobs=a.jobs)
    elif a.command == "sweep":
        res = run_experiment(_sweep_plan(a))
    elif a.command == "report":
        res = report_directory(a.directory)
    else:
        prob = get_problem(a.problem, a.kappa)
        if a.adaptive:
            cfg = RunConfig(problem=prob, strategy=MarkingStrategy(theta=a.theta),
                            max_elements=int(a.max_elements), errors=False)
            mesh = run_afem(cfg).final_mesh
        else:
            mesh = prob.domain()
            for _ in range(a.uniform_steps):
                mesh = uniform_refine(mesh)
        write_mesh(mesh, a.output)
        print(f"wrote {mesh.n_elements} elements to {a.output}")
        return 0
    for row in res.summary:
        print(f"{row['run']}: eta slope {row['eta_slope']}, H1 slope {row['h1_slope']}")
    if getattr(a, "check", False) and res.violations:
        return EXIT_THRESHOLD
    return 0


if __name__ == "__main__":
    sys.exit(main())
