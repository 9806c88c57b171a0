"""End to end on a small synthetic network.

Generates 14 cells on 1 km^2, bins the path-loss measurements, solves for
per-cell (P0, alpha, I*) and compares the resulting data rates with the best
fixed-alpha power control on a fresh UE drop.

    python demos/small_network.py
"""
from leap import baseline, evaluate, measurements, netmodel, optcore, solver_sl

net = netmodel.NetworkConfig(area_km2=1.0, macro_count=12, pico_count=2,
                             density_per_km2=300.0, seed=3)
snap = netmodel.generate_snapshot(net)
fresh = netmodel.generate_snapshot(net, cells=snap.cells, seed=4)
stats = measurements.build_statistics(snap, 1.0)
inst = optcore.build_instance(stats)
print(f"{inst.n_cells} cells, {inst.n_bins} serving bins, {inst.n_edges} interfering edges")

sol, trace = solver_sl.solve(inst, solver_sl.SolverConfig(iterations=20_000))
verdict = solver_sl.convergence_diagnostics(trace)
print(f"objective {sol.objective:.3f}; converged: {verdict.converged} {verdict.reasons}")

ref, best, _ = baseline.best_fa_fpc(stats, evaluate_fn=lambda s: evaluate.evaluate_snapshot(s, fresh))
print(f"best fixed-alpha setting: {best}")
ours = evaluate.evaluate_snapshot(sol, fresh, "leap")
theirs = evaluate.evaluate_snapshot(ref, fresh, "fa_fpc")
print("percentile  leap  fa_fpc  gain")
for q, g in evaluate.gain_table(ours, theirs).items():
    print(f"{q:>10}  {ours.percentiles[q]:.3f}  {theirs.percentiles[q]:.3f}  {g:.2f}x")
