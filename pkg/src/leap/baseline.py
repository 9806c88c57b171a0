"""Fractional power control with one fixed alpha for every cell (FA-FPC).

Each cell sets P0 so that its worst histogram bin reaches the decoding
threshold when the interference equals a nominal level; the same level is
the cell's assumed I*. The comparison picks the nominal level with the best
median data rate.
"""

from dataclasses import dataclass
import math

import numpy as np

from .evaluate import PowerControlSolution
from .optcore import Constants


@dataclass(frozen=True)
class FaFpcConfig:
    alpha: float = 0.8
    i_nominal_db_above_n0: float = 10.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")


DEFAULT_SWEEP = tuple(FaFpcConfig(0.8, x) for x in (5.0, 10.0, 15.0))


def fa_fpc_solution(statistics, config=None, constants=None):
    """Baseline parameters for every cell with a serving histogram.

    P0 = SINR_min * I_nom * l_worst^(1 - alpha), with l_worst the largest
    serving-bin midpoint. When that would push some bin over P_max, P0 is
    lowered to the largest value respecting the cap and the cell is flagged.
    Cells without UEs get the unclamped value for a unit loss.
    """
    config = config or FaFpcConfig()
    constants = constants or Constants()
    if not statistics.serving:
        raise ValueError("statistics contain no serving histograms")
    ln_pmax = math.log(constants.p_max)
    ln_inom = math.log(constants.n0) + config.i_nominal_db_above_n0 * math.log(10.0) / 10.0
    ln_smin = constants.gamma_min_db * math.log(10.0) / 10.0
    ids = tuple(statistics.cells) if statistics.cells else tuple(sorted(statistics.serving))
    p0 = np.empty(len(ids))
    flags = {}
    for k, c in enumerate(ids):
        h = statistics.serving.get(c)
        lam = (h.midpoints_db * math.log(10.0) / 10.0) if h is not None else np.zeros(1)
        ln_p0 = ln_smin + ln_inom + (1.0 - config.alpha) * lam.max()
        cap = ln_pmax - config.alpha * lam.max()
        if ln_p0 > cap:
            ln_p0 = cap
            flags[c] = "capped: worst bins below threshold"
        p0[k] = math.exp(ln_p0)
    n = len(ids)
    return PowerControlSolution(ids, p0, np.full(n, config.alpha), np.full(n, math.exp(ln_inom)),
                                constants.p_max, "fa_fpc", flags=flags)


def best_fa_fpc(statistics, sweep=DEFAULT_SWEEP, evaluate_fn=None, constants=None):
    """Sweep member with the highest median rate; ties go to the lower I_nom.

    ``evaluate_fn(solution)`` returns an EvaluationReport. Returns
    ``(solution, config, reports)`` with ``reports`` keyed by config.
    """
    if not sweep:
        raise ValueError("empty sweep")
    if evaluate_fn is None:
        raise ValueError("evaluate_fn is required")
    best = None
    reports = {}
    for cfg in sorted(sweep, key=lambda s: (s.i_nominal_db_above_n0, s.alpha)):
        sol = fa_fpc_solution(statistics, cfg, constants)
        rep = evaluate_fn(sol)
        reports[cfg] = rep
        # medians equal up to rounding count as ties
        if best is None or rep.percentiles[50] > best[2].percentiles[50] * (1 + 1e-9):
            best = (sol, cfg, rep)
    return best[0], best[1], reports
