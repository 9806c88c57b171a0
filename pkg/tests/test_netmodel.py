import math

import numpy as np
import pytest

from leap import netmodel, rng
from leap.netmodel import Cell, NetworkConfig


def test_default_topology_has_125_cells():
    cells = netmodel.generate_topology(9.0, 115, 10, 7)
    assert len(cells) == 125
    assert sum(c.kind == "pico" for c in cells) == 10
    assert [c.id for c in cells] == list(range(125))


def test_empty_topology():
    assert netmodel.generate_topology(1.0, 0, 0, 5) == []


def test_topology_deterministic():
    a = netmodel.generate_topology(2.0, 20, 3, 11)
    b = netmodel.generate_topology(2.0, 20, 3, 11)
    assert a == b


def test_path_loss_reference_distance():
    cell = Cell(0, "macro", (0.0, 0.0), 40.0)
    assert netmodel.path_loss(cell, (1.0, 0.0), 0.0) == pytest.approx(10 ** 3.4)


def test_path_loss_macro_100m():
    cell = Cell(0, "macro", (0.0, 0.0), 40.0)
    assert 10 * math.log10(netmodel.path_loss(cell, (100.0, 0.0), 0.0)) == pytest.approx(108.0)


def test_path_loss_never_below_one():
    cell = Cell(0, "pico", (0.0, 0.0), 4.0)
    assert netmodel.path_loss(cell, (0.0, 0.0), -200.0) == 1.0


def test_rsrp_macro_beats_pico():
    macro = Cell(0, "macro", (0.0, 0.0), 40.0)
    pico = Cell(1, "pico", (0.0, 0.0), 4.0)
    assert netmodel.rsrp_dbm(40.0, 90.0) == pytest.approx(-43.979, abs=1e-3)
    assert netmodel.rsrp_dbm(4.0, 85.0) == pytest.approx(-48.979, abs=1e-3)
    loss = {0: 10 ** 9.0, 1: 10 ** 8.5}
    serving, losses = netmodel.associate((0, 0), [pico, macro], lambda c: loss[c.id])
    assert serving == 0 and set(losses) == {0, 1}


def test_associate_tie_goes_to_lower_id():
    cells = [Cell(3, "macro", (0, 0), 40.0), Cell(1, "macro", (0, 0), 40.0)]
    assert netmodel.associate((0, 0), cells, lambda c: 1e10)[0] == 1


def test_associate_single_and_none():
    cell = Cell(4, "macro", (0, 0), 40.0)
    assert netmodel.associate((0, 0), [cell], lambda c: 1e10)[0] == 4
    # 46 dBm - 200 dB is far below -140 dBm
    assert netmodel.associate((0, 0), [cell], lambda c: 1e20) is None


def test_shadowing_marginals():
    g = rng.stream(1, "test-shadowing")
    draws = np.array([netmodel.draw_shadowing(g, 2, 8.0, 0.5) for _ in range(100_000)])
    assert abs(draws.std() / 8.0 - 1) < 0.02
    assert abs(np.corrcoef(draws[:, 0], draws[:, 1])[0, 1] - 0.5) < 0.05


def test_drop_count_reproducible():
    a = netmodel.drop_ues([], 450.0, 1.0, 3, area_km2=9.0)
    b = netmodel.drop_ues([], 450.0, 1.0, 3, area_km2=9.0)
    assert np.array_equal(a, b)
    assert abs(len(a) - 4050) < 5 * math.sqrt(4050)


def test_zero_density_is_empty():
    assert len(netmodel.drop_ues([], 0.0, 1.0, 3)) == 0


def test_hotspot_doubles_density():
    pico = Cell(0, "pico", (1500.0, 1500.0), 4.0)
    inside = outside = 0
    r, side = 100.0, 3000.0
    for seed in range(30):
        pts = netmodel.drop_ues([pico], 450.0, 2.0, seed, area_km2=9.0, hotspot_radius_m=r)
        d = np.hypot(pts[:, 0] - 1500, pts[:, 1] - 1500)
        inside += (d < r).sum()
        outside += (d >= r).sum()
    area_in = math.pi * r * r
    ratio = (inside / area_in) / (outside / (side * side - area_in))
    assert abs(ratio - 2.0) < 0.2


def test_snapshot_properties(small_snapshot):
    snap = small_snapshot
    loss = snap.loss_db
    assert np.all(np.nanmin(loss, axis=1) >= 0)
    power = np.array([c.tx_power for c in snap.cells])
    rsrp = np.where(np.isnan(loss), -np.inf, netmodel.rsrp_dbm(power[None, :], np.nan_to_num(loss)))
    best = rsrp.max(axis=1)
    assert np.all(rsrp[np.arange(snap.n_ues), snap.serving] == best)


def test_snapshot_deterministic_and_roundtrip(small_snapshot):
    from tests.conftest import SMALL
    again = netmodel.generate_snapshot(SMALL)
    assert again.to_dict() == small_snapshot.to_dict()
    back = netmodel.NetworkSnapshot.from_dict(small_snapshot.to_dict())
    assert back.to_dict() == small_snapshot.to_dict()


def test_config_rejects_unknown_keys():
    with pytest.raises((ValueError, TypeError)):
        NetworkConfig.from_dict({"bin_sise_db": 1})
