"""Start the adaptive loop at a wave number whose square is a discrete eigenvalue.

The initial Galerkin system is singular, so the first step carries the zero
iterate and refines uniformly. The run then proceeds normally.
"""
import numpy as np

from afem import MarkingStrategy, RunConfig, run_afem, z2_problem
from afem.fem import assemble, build_space
from afem.report import fit_rate
from afem.solver import discrete_eigenvalues


def main():
    base = z2_problem(0.0)
    lam = discrete_eigenvalues(assemble(build_space(base.domain()), base))
    print("coarse-mesh eigenvalues:", np.array2string(lam[:4], precision=6))
    kappa = float(np.sqrt(lam[0]))
    res = run_afem(RunConfig(problem=z2_problem(kappa), strategy=MarkingStrategy(theta=0.2),
                             max_elements=100_000, errors=False))
    for r in res[:4]:
        print(f"step {r.step}: N = {r.n_elements}, solved = {r.solved}, eta = {r.eta:.4e}, "
              f"pivot floor = {r.pivot_floor:.1e}")
    print(f"kappa = {kappa:.6f}, fallback steps = {sum(not r.solved for r in res)}, "
          f"eta slope = {fit_rate(res):.4f}")


if __name__ == "__main__":
    main()
