"""Céa quotients along adaptive runs on the known-solution problem.

Small kappa approaches the quasi-optimal limit 1 quickly; large kappa shows
a long preasymptotic phase before the quotient settles.
"""
import argparse

from afem import MarkingStrategy, RunConfig, run_afem, z2_problem


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--kappa", type=float, nargs="+", default=[2.0, 16.0])
    ap.add_argument("--theta", type=float, default=0.2)
    ap.add_argument("--max-elements", type=float, default=2e5)
    a = ap.parse_args()
    for k in a.kappa:
        print(f"kappa = {k:g}")
        print(f"{'step':>4} {'N':>8} {'eta':>11} {'H1 error':>11} {'cea':>9} {'eps':>10}")
        cfg = RunConfig(problem=z2_problem(k), strategy=MarkingStrategy(theta=a.theta),
                        max_elements=int(a.max_elements), cea=True, quasi_orthogonality=True)
        for r in run_afem(cfg):
            eps = "" if r.qo_epsilon is None else f"{r.qo_epsilon:10.2e}"
            cea = "" if r.cea_quotient is None else f"{r.cea_quotient:9.5f}"
            print(f"{r.step:4d} {r.n_elements:8d} {r.eta:11.4e} {r.h1_error:11.4e} {cea:>9} {eps:>10}"
                  + ("" if r.solved else "  (not solved, refined uniformly)"))
        print()


if __name__ == "__main__":
    main()
