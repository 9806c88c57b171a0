"""Three cells in a line: the stochastic and certainty-equivalent solvers.

With full occupancy and one bin per histogram the interference is
deterministic, so every solver should land on the same optimum. Halving
the occupancy makes the interference random; the certainty-equivalent
program then over-estimates it and settles below the true optimum, while
the stochastic solver still finds it.

    python demos/three_cell_chain.py
"""
import numpy as np

from leap import optcore, solver_ce, solver_sl

DB = np.log(10.0) / 10.0


def chain(a, losses=(100.0, 104.0, 108.0), cross=8.0):
    serving = {c: ([l * DB], [1.0]) for c, l in enumerate(losses)}
    edges = {(e, c): (a, [losses[e] * DB], [(losses[e] + cross) * DB], [1.0])
             for e, c in ((0, 1), (1, 0), (1, 2), (2, 1))}
    return optcore.synthetic_instance(serving, edges)


for a in (1.0, 0.5):
    inst = chain(a)
    ce, _ = solver_ce.solve_ce(inst)
    exact, _ = solver_ce.solve_exact(inst)
    sl, trace = solver_sl.solve(inst, solver_sl.SolverConfig(iterations=50_000))
    print(f"occupancy {a}: exact {exact.objective:.5f}  stochastic {sl.objective:.5f}  "
          f"certainty-equivalent {ce.objective:.5f}")
    # one serving bin per cell: only the transmit power P0 * L^alpha is pinned
    # down, so solvers may return different (P0, alpha) pairs for it
    lin = 10.0 ** (np.array((100.0, 104.0, 108.0)) / 10.0)
    for name, s in (("stochastic", sl), ("exact", exact)):
        tx = s.p0_w_per_rb * lin ** s.alpha
        print(f"  {name:>10}: UE transmit power dBm/RB {np.round(10 * np.log10(tx * 1e3), 2)}")
    print(f"  max violation of the stochastic solution: "
          f"{optcore.feasibility_check(inst, trace.primal).max_violation:.1e}")
