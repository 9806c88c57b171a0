"""Scoring power-control solutions on a UE snapshot.

Every UE gets the SINR target implied by its cell's (P0, alpha, I*) and
the per-RB power cap; the data rate is log2(1 + target). Reports carry
per-UE rows, a percentile table, per-cell medians, and gains against a
reference report.
"""

from dataclasses import dataclass, field
import io
import math

import numpy as np

SCHEMA_VERSION = 1
PERCENTILES = (5, 10, 20, 50, 80, 90, 95)


@dataclass(frozen=True, eq=False)
class PowerControlSolution:
    """Per-cell FPC parameters in linear units.

    ``p0_w_per_rb`` and ``i_star_w`` are in Watts (per RB), ``alpha`` in
    [0, 1]. ``flags`` holds per-cell notes (e.g. capped baseline cells).
    """
    cell_ids: tuple
    p0_w_per_rb: np.ndarray
    alpha: np.ndarray
    i_star_w: np.ndarray
    p_max: float
    provenance: str
    objective: float = None
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.provenance not in ("sl", "ce", "fa_fpc", "exact", "analytic"):
            raise ValueError(f"unknown provenance {self.provenance!r}")

    def index(self, cell_id):
        try:
            return self.cell_ids.index(cell_id)
        except ValueError:
            raise KeyError(f"no power-control parameters for cell {cell_id}") from None

    def sinr_target(self, cell_id, loss):
        """Linear SINR target of a UE of ``cell_id`` with linear path loss ``loss``."""
        k = self.index(cell_id)
        return float(sinr_target(self.p0_w_per_rb[k], self.alpha[k], self.i_star_w[k],
                                 loss, self.p_max))

    def to_dict(self):
        cells = []
        for k, c in enumerate(self.cell_ids):
            cells.append({"id": c, "p0_w_per_rb": float(self.p0_w_per_rb[k]),
                          "alpha": float(self.alpha[k]), "i_star_w": float(self.i_star_w[k])})
        return {"schema_version": SCHEMA_VERSION, "kind": "power_control_solution",
                "provenance": self.provenance, "p_max_w_per_rb": self.p_max,
                "objective": self.objective,
                "flags": {str(k): v for k, v in sorted(self.flags.items())},
                "cells": cells}

    @classmethod
    def from_dict(cls, d):
        if d.get("schema_version") != SCHEMA_VERSION or d.get("kind") != "power_control_solution":
            raise ValueError("not a version-1 power-control solution")
        cells = d["cells"]
        return cls(tuple(c["id"] for c in cells),
                   np.array([c["p0_w_per_rb"] for c in cells]),
                   np.array([c["alpha"] for c in cells]),
                   np.array([c["i_star_w"] for c in cells]),
                   d["p_max_w_per_rb"], d["provenance"], d.get("objective"),
                   {int(k): v for k, v in d.get("flags", {}).items()})


def sinr_target(p0, alpha, i_star, loss, p_max):
    """min(P_max / l, P0 l^-(1-alpha)) / I*, evaluated in log domain."""
    ln_l = np.log(np.asarray(loss, dtype=float))
    if np.any(ln_l < 0):
        raise ValueError("path loss must be >= 1")
    capped = math.log(p_max) - ln_l
    fpc = np.log(p0) - (1.0 - np.asarray(alpha)) * ln_l
    return np.exp(np.minimum(capped, fpc) - np.log(i_star))


def data_rate(sinr):
    """Shannon rate log2(1 + SINR) in bits/s/Hz."""
    s = np.asarray(sinr, dtype=float)
    if np.any(s < 0):
        raise ValueError("SINR must be non-negative")
    out = np.log1p(s) / math.log(2.0)
    return out if out.ndim else float(out)


def percentiles(values, qs=PERCENTILES):
    """Linear-interpolation (type 7) percentiles."""
    return {q: float(np.percentile(values, q, method="linear")) for q in qs}


@dataclass(frozen=True, eq=False)
class EvaluationReport:
    label: str
    ue_ids: np.ndarray
    serving_cell: np.ndarray   # cell ids
    sinr: np.ndarray
    rate: np.ndarray
    percentiles: dict
    cell_medians: dict
    cell_kind: dict = field(default_factory=dict)

    def per_ue_csv(self):
        buf = io.StringIO()
        buf.write("ue_id,serving_cell,sinr_target,rate_bps_hz\n")
        for u, c, s, r in zip(self.ue_ids, self.serving_cell, self.sinr, self.rate):
            buf.write(f"{int(u)},{int(c)},{s:.9e},{r:.9e}\n")
        return buf.getvalue()

    def percentile_csv(self):
        buf = io.StringIO()
        buf.write("percentile,rate_bps_hz\n")
        for q, v in self.percentiles.items():
            buf.write(f"{q},{v:.9e}\n")
        return buf.getvalue()

    def cdf(self):
        """(x, y) columns of the empirical rate CDF."""
        x = np.sort(self.rate)
        return x, np.arange(1, len(x) + 1) / len(x)

    def cdf_csv(self):
        x, y = self.cdf()
        buf = io.StringIO()
        buf.write("rate_bps_hz,cdf\n")
        for a, b in zip(x, y):
            buf.write(f"{a:.9e},{b:.9e}\n")
        return buf.getvalue()

    def subset(self, kind):
        """Report restricted to UEs served by cells of one kind (macro/pico)."""
        mask = np.array([self.cell_kind.get(int(c)) == kind for c in self.serving_cell],
                        dtype=bool)
        return _make_report(self.label + ":" + kind, self.ue_ids[mask], self.serving_cell[mask],
                            self.sinr[mask], self.cell_kind)


def _make_report(label, ue_ids, serving, sinr, cell_kind):
    rate = data_rate(sinr)
    pct = percentiles(rate) if len(rate) else {q: float("nan") for q in PERCENTILES}
    medians = {}
    for c in np.unique(serving):
        medians[int(c)] = float(np.median(rate[serving == c]))
    return EvaluationReport(label, ue_ids, serving, sinr, rate, pct, medians, cell_kind)


def evaluate_snapshot(solution, snapshot, label=None):
    """Per-UE SINR targets and rates of ``solution`` on ``snapshot``."""
    ids = [c.id for c in snapshot.cells]
    used = set(np.unique(snapshot.serving).tolist())
    # raises KeyError naming the first cell without parameters
    col = np.array([solution.index(ids[k]) if k in used else -1 for k in range(len(ids))])
    k = col[snapshot.serving]
    loss = 10.0 ** (snapshot.serving_loss_db() / 10.0)
    sinr = sinr_target(solution.p0_w_per_rb[k], solution.alpha[k], solution.i_star_w[k],
                       loss, solution.p_max)
    serving_ids = np.array(ids, dtype=np.int64)[snapshot.serving]
    kind = {c.id: c.kind for c in snapshot.cells}
    return _make_report(label or solution.provenance, snapshot.ue_ids.copy(), serving_ids,
                        sinr, kind)


def gain_table(report, reference, qs=PERCENTILES):
    """Percentile ratios report / reference."""
    return {q: report.percentiles[q] / reference.percentiles[q] for q in qs}


def dominant_interferer_counts(statistics, threshold=0.05):
    """Per victim cell, the number of interferers e with a_{e->c} >= threshold."""
    counts = {c: 0 for c in statistics.cells}
    for (e, c), a in statistics.graph.occupancy.items():
        if a >= threshold:
            counts[c] = counts.get(c, 0) + 1
    return counts


def gain_by_interferer_count(report, reference, statistics, dominance_threshold=0.05):
    """Median per-cell gain grouped by the number of dominant interferers.

    Each cell's gain is the ratio of its median UE rate under ``report`` to
    that under ``reference``. Returns ``{count: (n_cells, median gain,
    sample std)}``; std is NaN for single-cell groups.
    """
    counts = dominant_interferer_counts(statistics, dominance_threshold)
    groups = {}
    for c, med in report.cell_medians.items():
        ref = reference.cell_medians.get(c)
        if ref is None or ref <= 0:
            continue
        groups.setdefault(counts.get(c, 0), []).append(med / ref)
    out = {}
    for k in sorted(groups):
        g = np.array(groups[k])
        out[k] = (len(g), float(np.median(g)), float(np.std(g, ddof=1)) if len(g) > 1 else float("nan"))
    return out


def gain_group_csv(groups):
    buf = io.StringIO()
    buf.write("dominant_interferers,cells,median_gain,std_gain\n")
    for k, (n, m, s) in groups.items():
        buf.write(f"{k},{n},{m:.9e},{s:.9e}\n")
    return buf.getvalue()


def gain_csv(gains):
    buf = io.StringIO()
    buf.write("percentile,gain\n")
    for q, g in gains.items():
        buf.write(f"{q},{g:.9e}\n")
    return buf.getvalue()
