"""Measurement statistics built from per-UE path-loss reports.

Four statistics per network: the serving-loss histogram of every cell, the
joint (serving loss, loss to the victim cell) histogram of every interfering
pair, the occupancy probability of every pair, and the load of every cell.
Histograms are kept sparse and binned in dB with anchors at 0 dB and
half-open bins ``[i*w, (i+1)*w)``.
"""

from dataclasses import dataclass, field
import hashlib
import json
import math

import numpy as np

from . import rng as _rng

SCHEMA_VERSION = 1
DB_TO_LN = math.log(10.0) / 10.0


def db_to_ln(x_db):
    """dB value of a linear ratio -> natural log of the same ratio."""
    return np.asarray(x_db, dtype=float) * DB_TO_LN


def ln_to_db(x_ln):
    return np.asarray(x_ln, dtype=float) / DB_TO_LN


def bin_index(x_db, width_db):
    """Bin indices for values in dB.

    When the width is a whole number of hundredths of a dB (every width the
    package uses) and the values are stored at 0.01 dB resolution, the
    division is done on integers so bin edges are exact.
    """
    x = np.asarray(x_db, dtype=float)
    w100 = width_db * 100.0
    if abs(w100 - round(w100)) < 1e-9 and np.all(np.abs(x * 100 - np.round(x * 100)) < 1e-6):
        return np.floor_divide(np.round(x * 100).astype(np.int64), int(round(w100)))
    return np.floor(x / width_db).astype(np.int64)


@dataclass(frozen=True, eq=False)
class Histogram1D:
    bin_width_db: float
    index: np.ndarray   # (k,) int
    counts: np.ndarray  # (k,) int

    @classmethod
    def from_samples(cls, samples_db, width_db):
        idx, counts = np.unique(bin_index(samples_db, width_db), return_counts=True)
        if len(idx) == 0:
            raise ValueError("histogram needs at least one sample")
        return cls(width_db, idx, counts)

    @property
    def total_samples(self):
        return int(self.counts.sum())

    @property
    def midpoints_db(self):
        return (self.index + 0.5) * self.bin_width_db

    @property
    def probability(self):
        return self.counts / self.counts.sum()

    @property
    def bins(self):
        return [(int(i), float(m), float(p))
                for i, m, p in zip(self.index, self.midpoints_db, self.probability)]


@dataclass(frozen=True, eq=False)
class Histogram2D:
    bin_width_db: float
    index: np.ndarray   # (k, 2) int
    counts: np.ndarray  # (k,) int

    @classmethod
    def from_samples(cls, first_db, second_db, width_db):
        pairs = np.column_stack((bin_index(first_db, width_db), bin_index(second_db, width_db)))
        if len(pairs) == 0:
            raise ValueError("histogram needs at least one sample")
        idx, counts = np.unique(pairs, axis=0, return_counts=True)
        return cls(width_db, idx, counts)

    @property
    def total_samples(self):
        return int(self.counts.sum())

    @property
    def midpoints_db(self):
        return (self.index + 0.5) * self.bin_width_db

    @property
    def probability(self):
        return self.counts / self.counts.sum()

    @property
    def bins(self):
        return [((int(i), int(j)), (float(a), float(b)), float(p))
                for (i, j), (a, b), p in zip(self.index, self.midpoints_db, self.probability)]

    def marginal(self, axis):
        idx, inv = np.unique(self.index[:, axis], return_inverse=True)
        return Histogram1D(self.bin_width_db, idx, np.bincount(inv, weights=self.counts).astype(np.int64))


@dataclass(frozen=True, eq=False)
class InterfererGraph:
    edges: dict       # victim c -> frozenset of interferers e
    occupancy: dict   # (e, c) -> a_{e->c}

    def interferers(self, c):
        return self.edges.get(c, frozenset())


@dataclass(frozen=True, eq=False)
class MeasurementStatistics:
    serving: dict     # c -> Histogram1D
    joint: dict       # (e, c) -> Histogram2D
    graph: InterfererGraph
    load: dict        # c -> rho_c
    bin_width_db: float
    snapshot_hash: str = ""
    cells: tuple = ()           # all cell ids, sorted
    cell_kind: dict = field(default_factory=dict)
    empty_cells: tuple = ()
    ue_counts: dict = field(default_factory=dict)
    report_counts: dict = field(default_factory=dict)  # (e, c) -> UEs of e audible at c

    def to_dict(self):
        cells = []
        for c in self.cells:
            entry = {"id": c, "kind": self.cell_kind.get(c, "macro"),
                     "load": self.load.get(c, 0.0), "ues": self.ue_counts.get(c, 0)}
            h = self.serving.get(c)
            if h is not None:
                entry["serving"] = [[int(i), round(float(m), 2), round(float(p), 9), int(n)]
                                    for i, m, p, n in zip(h.index, h.midpoints_db,
                                                          h.probability, h.counts)]
            cells.append(entry)
        edges = []
        for (e, c), h in sorted(self.joint.items()):
            edges.append({
                "interferer": e, "victim": c,
                "occupancy": round(self.graph.occupancy[(e, c)], 9),
                "reports": self.report_counts[(e, c)],
                "bins": [[int(i), int(j), round(float(a), 2), round(float(b), 2),
                          round(float(p), 9), int(n)]
                         for (i, j), (a, b), p, n in zip(h.index, h.midpoints_db,
                                                         h.probability, h.counts)],
            })
        return {"schema_version": SCHEMA_VERSION, "kind": "measurement_statistics",
                "bin_width_db": self.bin_width_db, "snapshot_hash": self.snapshot_hash,
                "empty_cells": list(self.empty_cells), "cells": cells, "edges": edges}

    @classmethod
    def from_dict(cls, d):
        if d.get("schema_version") != SCHEMA_VERSION or d.get("kind") != "measurement_statistics":
            raise ValueError("not a version-1 statistics document")
        w = d["bin_width_db"]
        serving, load, kind, ues = {}, {}, {}, {}
        for entry in d["cells"]:
            c = entry["id"]
            load[c] = entry["load"]
            kind[c] = entry["kind"]
            ues[c] = entry["ues"]
            if "serving" in entry:
                rows = entry["serving"]
                serving[c] = Histogram1D(w, np.array([r[0] for r in rows], dtype=np.int64),
                                         np.array([r[3] for r in rows], dtype=np.int64))
        joint, occ, reports, edges = {}, {}, {}, {}
        for entry in d["edges"]:
            key = (entry["interferer"], entry["victim"])
            rows = entry["bins"]
            joint[key] = Histogram2D(w, np.array([[r[0], r[1]] for r in rows], dtype=np.int64),
                                     np.array([r[5] for r in rows], dtype=np.int64))
            reports[key] = entry["reports"]
            occ[key] = reports[key] / ues[key[0]]
            edges.setdefault(key[1], set()).add(key[0])
        graph = InterfererGraph({c: frozenset(s) for c, s in edges.items()}, occ)
        return cls(serving, joint, graph, load, w, d.get("snapshot_hash", ""),
                   tuple(sorted(load)), kind, tuple(d.get("empty_cells", ())), ues, reports)


def snapshot_hash(snapshot):
    blob = json.dumps(snapshot.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def build_statistics(snapshot, bin_width_db=1.0):
    """Histograms, occupancies and loads for every cell and interfering pair.

    Every UE adds one sample to its serving cell's histogram. A UE of cell
    ``e`` that hears cell ``c`` adds a joint sample (loss to e, loss to c)
    to histogram ``(e, c)``; the occupancy of the pair is the fraction of
    cell-e UEs that hear c. Cells without UEs have no serving histogram and
    are listed in ``empty_cells``.
    """
    if not bin_width_db > 0:
        raise ValueError("bin width must be positive")
    if snapshot.n_ues == 0:
        raise ValueError("snapshot has no UEs")
    ids = [c.id for c in snapshot.cells]
    serving_db = snapshot.serving_loss_db()
    audible = ~np.isnan(snapshot.loss_db)

    serving, load, ue_counts = {}, {}, {}
    joint, occ, reports, edges = {}, {}, {}, {}
    empty = []
    for k, e in enumerate(ids):
        mine = np.flatnonzero(snapshot.serving == k)
        ue_counts[e] = len(mine)
        load[e] = float(len(mine))
        if len(mine) == 0:
            empty.append(e)
            continue
        serving[e] = Histogram1D.from_samples(serving_db[mine], bin_width_db)
        hears = audible[mine]
        for j in np.flatnonzero(hears.any(axis=0)):
            if j == k:
                continue
            rows = mine[hears[:, j]]
            c = ids[j]
            joint[(e, c)] = Histogram2D.from_samples(serving_db[rows],
                                                     snapshot.loss_db[rows, j], bin_width_db)
            reports[(e, c)] = len(rows)
            occ[(e, c)] = len(rows) / len(mine)
            edges.setdefault(c, set()).add(e)

    graph = InterfererGraph({c: frozenset(s) for c, s in edges.items()}, occ)
    kind = {c.id: c.kind for c in snapshot.cells}
    return MeasurementStatistics(serving, joint, graph, load, bin_width_db,
                                 snapshot_hash(snapshot), tuple(ids), kind, tuple(empty),
                                 ue_counts, reports)


def subsample(snapshot, fraction, seed):
    """Bernoulli-thin the UEs of a snapshot, keeping each with prob. ``fraction``."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    if fraction == 1:
        return snapshot
    u = _rng.stream(seed, "subsample").random(snapshot.n_ues)
    return snapshot.subset(u < fraction)
