"""
Measuring-point network template: a ~50-node engine-block surrogate
"""
from typing import List

from services.gas_exchange import ZONES
from services.thermal_net import ConductiveLink, Probe, SurfacePatch, ThermalNetwork, ThermalNode

WATER_PREFIX = "water:"

# per-node heat capacity [J/K]
WALL_CAPACITY = 120.0
LINER_CAPACITY = 250.0
RING_CAPACITY = 40.0
PORT_CAPACITY = 150.0
WATER_SIDE_CAPACITY = 200.0
BLOCK_CAPACITY = 2000.0
CHANNEL_CAPACITY = 300.0


def chamber_channel(cylinder: int) -> str:
    return f"chamber_c{cylinder}"


def water_channel(patch_id: str) -> str:
    return f"{WATER_PREFIX}{patch_id}"


def water_patch_ids(network: ThermalNetwork) -> List[str]:
    """Water patch ids in patch order, taken from the 'water:' channel names"""
    return [p.channel[len(WATER_PREFIX) :] for p in network.patches if p.channel.startswith(WATER_PREFIX)]


def water_patch_areas(network: ThermalNetwork) -> List[float]:
    return [p.area for p in network.patches if p.channel.startswith(WATER_PREFIX)]


def measuring_point_network(n_cylinders: int = 3, initial_temperature: float = 350.0) -> ThermalNetwork:
    """
    Cylinder head and liner surrogate with the usual thermocouple positions

    Per cylinder: four chamber-wall nodes, liner shoulder/mid/bottom, intake
    and exhaust valve rings and ports, and four water-side nodes. Shared:
    one block node per cylinder plus the inlet and outlet water channels.
    Three cylinders give 50 nodes.
    """
    nodes: List[ThermalNode] = []
    links: List[ConductiveLink] = []
    patches: List[SurfacePatch] = []
    probes: List[Probe] = []

    def node(node_id: str, capacity: float):
        nodes.append(ThermalNode(id=node_id, capacity=capacity, initial_temperature=initial_temperature))

    def link(a: str, b: str, conductance: float):
        links.append(ConductiveLink(a=a, b=b, conductance=conductance))

    def patch(node_id: str, area: float, channel: str):
        patches.append(SurfacePatch(id=f"{node_id}@{channel}", node=node_id, area=area, channel=channel))

    node("water_inlet_channel", CHANNEL_CAPACITY)
    node("water_outlet_channel", CHANNEL_CAPACITY)
    patch("water_inlet_channel", 6e-3, water_channel("inlet_channel"))
    patch("water_outlet_channel", 6e-3, water_channel("outlet_channel"))
    probes += [
        Probe(name="inlet_channel", node="water_inlet_channel"),
        Probe(name="outlet_channel", node="water_outlet_channel"),
    ]

    intake_valve, exhaust_valve, intake_port, exhaust_port = ZONES
    for c in range(1, n_cylinders + 1):
        p = f"c{c}_"
        chamber = [f"{p}chamber_{i}" for i in range(1, 5)]
        water = [f"{p}water_{i}" for i in range(1, 5)]
        for name in chamber:
            node(name, WALL_CAPACITY)
        for name in ("liner_shoulder", "liner_mid", "liner_bottom"):
            node(p + name, LINER_CAPACITY)
        node(p + "ring_intake", RING_CAPACITY)
        node(p + "ring_exhaust", RING_CAPACITY)
        node(p + "port_intake", PORT_CAPACITY)
        node(p + "port_exhaust", PORT_CAPACITY)
        for name in water:
            node(name, WATER_SIDE_CAPACITY)
        node(f"block_{c}", BLOCK_CAPACITY)

        for i in range(4):
            link(chamber[i], chamber[(i + 1) % 4], 15.0)
            link(chamber[i], water[i], 25.0)
        link(chamber[0], p + "ring_intake", 8.0)
        link(chamber[2], p + "ring_exhaust", 8.0)
        link(p + "ring_intake", p + "port_intake", 6.0)
        link(p + "ring_exhaust", p + "port_exhaust", 6.0)
        link(p + "port_intake", water[0], 12.0)
        link(p + "port_exhaust", water[2], 12.0)
        link(chamber[1], p + "liner_shoulder", 10.0)
        link(p + "liner_shoulder", p + "liner_mid", 9.0)
        link(p + "liner_mid", p + "liner_bottom", 9.0)
        link(p + "liner_shoulder", water[1], 14.0)
        link(p + "liner_mid", water[3], 14.0)
        link(p + "liner_bottom", f"block_{c}", 20.0)
        link(water[3], f"block_{c}", 20.0)
        link("water_inlet_channel", water[0], 10.0)
        link("water_outlet_channel", water[2], 10.0)
        if c > 1:
            link(f"block_{c - 1}", f"block_{c}", 40.0)

        for name in chamber:
            patch(name, 2.0e-3, chamber_channel(c))
        patch(p + "liner_shoulder", 1.0e-3, chamber_channel(c))
        patch(p + "ring_intake", 4.0e-4, intake_valve)
        patch(p + "ring_exhaust", 4.0e-4, exhaust_valve)
        patch(p + "port_intake", 1.5e-3, intake_port)
        patch(p + "port_exhaust", 1.5e-3, exhaust_port)
        for name in water:
            patch(name, 4.0e-3, water_channel(name))
        patch(p + "liner_mid", 3.0e-3, water_channel(p + "liner_mid"))
        patch(p + "liner_bottom", 3.0e-3, water_channel(p + "liner_bottom"))

        probes += [
            Probe(name=f"liner_shoulder_c{c}", node=p + "liner_shoulder"),
            Probe(name=f"valve_ring_intake_c{c}", node=p + "ring_intake"),
            Probe(name=f"valve_ring_exhaust_c{c}", node=p + "ring_exhaust"),
            Probe(name=f"chamber_wall_c{c}", node=chamber[0]),
        ]

    return ThermalNetwork(nodes=nodes, links=links, patches=patches, probes=probes)
