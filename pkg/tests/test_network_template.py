import numpy as np

from services.gas_exchange import ZONES
from services.network_template import (
    chamber_channel,
    measuring_point_network,
    water_patch_areas,
    water_patch_ids,
)
from services.thermal_net import assemble, steady_solve


def test_three_cylinders_give_fifty_nodes():
    network = measuring_point_network(3)
    assert len(network.nodes) == 50
    assert len({node.id for node in network.nodes}) == 50


def test_probes_sit_on_nodes():
    network = measuring_point_network(3)
    node_ids = {node.id for node in network.nodes}
    assert all(probe.node in node_ids for probe in network.probes)
    assert "liner_shoulder_c2" in {probe.name for probe in network.probes}


def test_channels_cover_chambers_zones_and_water():
    network = measuring_point_network(2)
    channels = set(network.channels)
    assert {chamber_channel(1), chamber_channel(2)} <= channels
    assert set(ZONES) <= channels
    assert len(water_patch_ids(network)) == len(water_patch_areas(network)) == 2 + 2 * 6


def test_assembles_and_solves():
    network = measuring_point_network(3)
    system = assemble(network, channels=network.channels)
    water = np.array([channel.startswith("water:") for channel in system.patch_channels])
    alpha = np.where(water, 5000.0, 500.0)
    T_eff = np.where(water, 360.0, 900.0)
    temperatures = steady_solve(system, alpha, T_eff)
    assert np.all((temperatures > 360.0) & (temperatures < 900.0))
