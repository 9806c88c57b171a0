"""Synthetic heterogeneous LTE networks and UE snapshots.

Macro cells sit on a jittered hexagonal grid, picos are scattered at random,
UEs are dropped uniformly with density hotspots around the picos, and every
UE-to-cell link gets a log-distance path loss with correlated log-normal
shadowing. Path losses are linear ratios >= 1 everywhere except at the
storage boundary, where they are kept in dB rounded to 0.01 dB so that a
snapshot survives a round trip through its text serialization unchanged.
"""

from dataclasses import dataclass, field, asdict
import math

import numpy as np

from . import rng as _rng

SCHEMA_VERSION = 1


class PlacementError(ValueError):
    """Raised when cells cannot be placed under the spacing rules."""


@dataclass(frozen=True)
class Cell:
    id: int
    kind: str  # "macro" | "pico"
    position: tuple
    tx_power: float  # W, downlink

    def __post_init__(self):
        if self.kind not in ("macro", "pico"):
            raise ValueError(f"unknown cell kind {self.kind!r}")
        if not self.tx_power > 0:
            raise ValueError("tx_power must be positive")


@dataclass(frozen=True)
class UESample:
    id: int
    position: tuple
    serving_cell: int
    losses: dict  # cell id -> linear path loss, audible cells only


@dataclass(frozen=True)
class NetworkConfig:
    area_km2: float = 9.0
    macro_count: int = 115
    pico_count: int = 10
    density_per_km2: float = 450.0
    hotspot_factor: float = 2.0
    hotspot_radius_m: float = 100.0
    shadowing_sigma_db: float = 8.0
    shadowing_corr: float = 0.5
    pl0_db: float = 34.0
    d0_m: float = 1.0
    exponent_macro: float = 3.7
    exponent_pico: float = 3.0
    macro_power_w: float = 40.0
    pico_power_w: float = 4.0
    rsrp_threshold_dbm: float = -140.0
    min_isd_m: float = 100.0
    pico_macro_clearance_m: float = 50.0
    seed: int = 7

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown netmodel keys: {sorted(unknown)}")
        return cls(**d)


def _side_m(area_km2):
    return math.sqrt(area_km2) * 1000.0


def generate_topology(area_km2, macro_count, pico_count, seed, *,
                      min_isd_m=100.0, pico_macro_clearance_m=50.0,
                      macro_power_w=40.0, pico_power_w=4.0):
    """Place macros on a jittered hex grid and picos uniformly at random.

    The area is a square of the given size with its corner at the origin.
    Cell ids are 0..macro_count-1 for macros followed by the picos.
    """
    if area_km2 <= 0:
        raise ValueError("area must be positive")
    if macro_count < 0 or pico_count < 0:
        raise ValueError("cell counts must be non-negative")
    side = _side_m(area_km2)
    cells = []
    macros = _hex_sites(side, macro_count, min_isd_m, seed)
    for i, (x, y) in enumerate(macros):
        cells.append(Cell(i, "macro", (float(x), float(y)), macro_power_w))

    g = _rng.stream(seed, "pico-sites")
    placed = 0
    attempts = 0
    while placed < pico_count:
        attempts += 1
        if attempts > 10000 * max(pico_count, 1):
            raise PlacementError("could not place picos clear of macros")
        x, y = g.uniform(0.0, side, size=2)
        if len(macros) and np.min(np.hypot(macros[:, 0] - x, macros[:, 1] - y)) < pico_macro_clearance_m:
            continue
        cells.append(Cell(macro_count + placed, "pico", (float(x), float(y)), pico_power_w))
        placed += 1
    return cells


def _hex_sites(side, n, min_isd, seed):
    if n == 0:
        return np.empty((0, 2))
    area = side * side
    spacing = math.sqrt(2.0 * area / (math.sqrt(3.0) * n))
    while True:
        pts = _hex_lattice(side, spacing)
        if len(pts) >= n:
            break
        spacing *= 0.99
    if spacing < min_isd:
        raise PlacementError(
            f"{n} macros need {spacing:.1f} m spacing, below the {min_isd} m minimum")
    centre = np.array([side / 2, side / 2])
    d = np.hypot(*(pts - centre).T)
    order = np.lexsort((pts[:, 0], pts[:, 1], np.round(d, 6)))
    pts = pts[np.sort(order[:n])]
    # jitter inside a disc small enough to keep the minimum spacing
    radius = min(0.15 * spacing, (spacing - min_isd) / 2.0)
    g = _rng.stream(seed, "macro-jitter")
    r = radius * np.sqrt(g.random(n))
    phi = g.uniform(0.0, 2 * np.pi, n)
    pts = pts + np.column_stack((r * np.cos(phi), r * np.sin(phi)))
    return np.clip(pts, 0.0, side)


def _hex_lattice(side, spacing):
    dy = spacing * math.sqrt(3.0) / 2.0
    rows = int(side // dy) + 1
    pts = []
    for j in range(rows):
        y = dy / 2 + j * dy
        if y > side:
            break
        x0 = spacing / 2 if j % 2 == 0 else spacing
        xs = np.arange(x0, side, spacing)
        pts.extend((x, y) for x in xs)
    return np.array(pts, dtype=float).reshape(-1, 2)


def path_loss_db(distance_m, exponent, shadowing_db=0.0, pl0_db=34.0, d0_m=1.0):
    """Log-distance path loss in dB; distances below 1 m are clamped."""
    d = np.maximum(np.asarray(distance_m, dtype=float), 1.0)
    return pl0_db + 10.0 * exponent * np.log10(d / d0_m) + shadowing_db


def path_loss(tx, rx_position, shadowing_draw, config=None):
    """Linear path loss from cell ``tx`` to a receiver position.

    ``shadowing_draw`` is in dB. The result is clamped to >= 1.
    """
    cfg = config or NetworkConfig()
    d = math.hypot(rx_position[0] - tx.position[0], rx_position[1] - tx.position[1])
    n = cfg.exponent_macro if tx.kind == "macro" else cfg.exponent_pico
    pl = path_loss_db(d, n, shadowing_draw, cfg.pl0_db, cfg.d0_m)
    return max(10.0 ** (float(pl) / 10.0), 1.0)


def draw_shadowing(g, n_links, sigma_db, corr):
    """Shadowing draws (dB) for the links of one UE, pairwise correlated by ``corr``."""
    common = g.standard_normal()
    own = g.standard_normal(n_links)
    return sigma_db * (math.sqrt(corr) * common + math.sqrt(1.0 - corr) * own)


def drop_ues(cells, density_per_km2, hotspot_factor, seed, *, area_km2=9.0,
             hotspot_radius_m=100.0):
    """Uniform UE drop at base density plus extra density around each pico.

    Inside a disc of ``hotspot_radius_m`` around a pico the density is
    ``hotspot_factor`` times the base density (overlapping discs add up).
    Returns an (n, 2) array of positions in meters.
    """
    if density_per_km2 < 0:
        raise ValueError("density must be non-negative")
    if hotspot_factor < 1:
        raise ValueError("hotspot_factor must be >= 1")
    side = _side_m(area_km2)
    g = _rng.stream(seed, "ue-drop")
    n = g.poisson(density_per_km2 * area_km2)
    parts = [g.uniform(0.0, side, size=(n, 2))]
    extra = (hotspot_factor - 1.0) * density_per_km2 * math.pi * (hotspot_radius_m / 1000.0) ** 2
    for k, cell in enumerate(c for c in cells if c.kind == "pico"):
        gh = _rng.stream(seed, "hotspot", k)
        m = gh.poisson(extra) if extra > 0 else 0
        r = hotspot_radius_m * np.sqrt(gh.random(m))
        phi = gh.uniform(0.0, 2 * np.pi, m)
        pts = np.column_stack((cell.position[0] + r * np.cos(phi),
                               cell.position[1] + r * np.sin(phi)))
        inside = (pts >= 0).all(axis=1) & (pts <= side).all(axis=1)
        parts.append(pts[inside])
    return np.concatenate(parts) if parts else np.empty((0, 2))


def rsrp_dbm(tx_power_w, loss_db):
    return 10.0 * np.log10(np.asarray(tx_power_w) * 1000.0) - loss_db


def associate(ue_position, cells, loss_fn, threshold_dbm=-140.0):
    """Pick the serving cell by strongest RSRP.

    ``loss_fn(cell)`` returns the linear path loss to ``cell``. Returns
    ``(serving id, {cell id: linear loss})`` restricted to audible cells, or
    ``None`` when no cell is audible (a coverage hole).
    """
    best = None
    losses = {}
    for cell in sorted(cells, key=lambda c: c.id):
        loss = loss_fn(cell)
        p = float(rsrp_dbm(cell.tx_power, 10.0 * math.log10(loss)))
        if p < threshold_dbm:
            continue
        losses[cell.id] = loss
        if best is None or p > best[0]:
            best = (p, cell.id)
    if best is None:
        return None
    return best[1], losses


@dataclass(frozen=True, eq=False)
class NetworkSnapshot:
    """Cells, UE drop and the UE-to-cell path-loss matrix.

    ``loss_db[u, k]`` is the loss of UE ``u`` to ``cells[k]`` in dB (rounded
    to 0.01 dB), NaN where the cell is inaudible. ``serving[u]`` is the
    column index of the serving cell.
    """
    cells: tuple
    ue_ids: np.ndarray
    ue_positions: np.ndarray
    serving: np.ndarray
    loss_db: np.ndarray
    config_echo: dict = field(default_factory=dict)
    coverage_holes: int = 0

    @property
    def cell_ids(self):
        return [c.id for c in self.cells]

    @property
    def n_ues(self):
        return len(self.ue_ids)

    @property
    def ues(self):
        out = []
        for u in range(self.n_ues):
            row = self.loss_db[u]
            losses = {self.cells[k].id: 10.0 ** (row[k] / 10.0)
                      for k in np.flatnonzero(~np.isnan(row))}
            out.append(UESample(int(self.ue_ids[u]), tuple(self.ue_positions[u]),
                                self.cells[self.serving[u]].id, losses))
        return out

    def serving_loss_db(self):
        return self.loss_db[np.arange(self.n_ues), self.serving]

    def subset(self, mask):
        mask = np.asarray(mask, dtype=bool)
        return NetworkSnapshot(self.cells, self.ue_ids[mask], self.ue_positions[mask],
                               self.serving[mask], self.loss_db[mask],
                               dict(self.config_echo), self.coverage_holes)

    def to_dict(self):
        cells = [{"id": c.id, "kind": c.kind, "x": round(c.position[0], 3),
                  "y": round(c.position[1], 3), "tx_power_w": c.tx_power}
                 for c in self.cells]
        ues = []
        for u in range(self.n_ues):
            row = self.loss_db[u]
            audible = np.flatnonzero(~np.isnan(row))
            ues.append({
                "id": int(self.ue_ids[u]),
                "x": round(float(self.ue_positions[u, 0]), 3),
                "y": round(float(self.ue_positions[u, 1]), 3),
                "serving_cell": self.cells[self.serving[u]].id,
                "losses_db": {str(self.cells[k].id): round(float(row[k]), 2) for k in audible},
            })
        return {"schema_version": SCHEMA_VERSION, "kind": "network_snapshot",
                "config": self.config_echo, "coverage_holes": self.coverage_holes,
                "cells": cells, "ues": ues}

    @classmethod
    def from_dict(cls, d):
        if d.get("schema_version") != SCHEMA_VERSION or d.get("kind") != "network_snapshot":
            raise ValueError("not a version-1 network snapshot")
        cells = tuple(Cell(c["id"], c["kind"], (c["x"], c["y"]), c["tx_power_w"])
                      for c in sorted(d["cells"], key=lambda c: c["id"]))
        col = {c.id: k for k, c in enumerate(cells)}
        n = len(d["ues"])
        loss = np.full((n, len(cells)), np.nan)
        ids = np.empty(n, dtype=np.int64)
        pos = np.empty((n, 2))
        serving = np.empty(n, dtype=np.int64)
        for u, ue in enumerate(d["ues"]):
            ids[u] = ue["id"]
            pos[u] = (ue["x"], ue["y"])
            serving[u] = col[ue["serving_cell"]]
            for cid, v in ue["losses_db"].items():
                loss[u, col[int(cid)]] = v
        return cls(cells, ids, pos, serving, loss, d.get("config", {}),
                   d.get("coverage_holes", 0))


def generate_snapshot(config=None, cells=None, seed=None):
    """Build a full snapshot: topology, UE drop, shadowed losses, association.

    ``cells`` may be passed to drop a fresh UE population on an existing
    topology; ``seed`` overrides ``config.seed`` for the UE drop.
    """
    cfg = config or NetworkConfig()
    seed = cfg.seed if seed is None else seed
    if cells is None:
        cells = generate_topology(cfg.area_km2, cfg.macro_count, cfg.pico_count, cfg.seed,
                                  min_isd_m=cfg.min_isd_m,
                                  pico_macro_clearance_m=cfg.pico_macro_clearance_m,
                                  macro_power_w=cfg.macro_power_w,
                                  pico_power_w=cfg.pico_power_w)
    cells = tuple(sorted(cells, key=lambda c: c.id))
    pos = drop_ues(cells, cfg.density_per_km2, cfg.hotspot_factor, seed,
                   area_km2=cfg.area_km2, hotspot_radius_m=cfg.hotspot_radius_m)
    n, k = len(pos), len(cells)
    echo = asdict(cfg)
    echo["seed"] = seed
    if k == 0 or n == 0:
        return NetworkSnapshot(cells, np.arange(0), np.empty((0, 2)), np.empty(0, dtype=np.int64),
                               np.empty((0, k)), echo, n)

    cxy = np.array([c.position for c in cells])
    expo = np.array([cfg.exponent_macro if c.kind == "macro" else cfg.exponent_pico
                     for c in cells])
    power = np.array([c.tx_power for c in cells])
    shadow = np.empty((n, k))
    for u in range(n):
        shadow[u] = draw_shadowing(_rng.stream(seed, "shadowing", u), k,
                                   cfg.shadowing_sigma_db, cfg.shadowing_corr)
    dist = np.hypot(pos[:, None, 0] - cxy[None, :, 0], pos[:, None, 1] - cxy[None, :, 1])
    loss = path_loss_db(dist, expo[None, :], shadow, cfg.pl0_db, cfg.d0_m)
    loss = np.round(np.maximum(loss, 0.0), 2)

    rsrp = rsrp_dbm(power[None, :], loss)
    audible = rsrp >= cfg.rsrp_threshold_dbm
    covered = audible.any(axis=1)
    rsrp = np.where(audible, rsrp, -np.inf)
    serving = np.argmax(rsrp, axis=1)  # first maximum = lowest cell id
    loss = np.where(audible, loss, np.nan)

    return NetworkSnapshot(cells, np.arange(n)[covered], pos[covered], serving[covered],
                           loss[covered], echo, int(n - covered.sum()))
