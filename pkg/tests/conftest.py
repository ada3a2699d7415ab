from __future__ import annotations

from collections.abc import Callable
from pathlib import Path

import pytest

from migrasim.config import SimulationConstants
from migrasim.netmodel import Host, HostRole, Link, Topology
from migrasim.scenario import Scenario, parse_scenario
from migrasim.simcore import Simulator, TraceLog

SCENARIOS_DIR = Path(__file__).parent.parent / "scenarios"


def hypervisor(id: str, subnet: str = "lan", san: str = "san1") -> Host:
    return Host(id=id, subnet_id=subnet, storage_domain=san)


def router(id: str, subnet: str = "core") -> Host:
    return Host(id=id, subnet_id=subnet, role=HostRole.ROUTER)


def client(id: str, subnet: str = "access") -> Host:
    return Host(id=id, subnet_id=subnet, role=HostRole.CLIENT)


def link(a: str, b: str, capacity: float = 1e9, latency: float = 0.001) -> Link:
    return Link(a=a, b=b, capacity=capacity, latency=latency)


@pytest.fixture
def constants() -> SimulationConstants:
    return SimulationConstants()


@pytest.fixture
def sim() -> Simulator:
    return Simulator(seed=0)


@pytest.fixture
def trace() -> TraceLog:
    return TraceLog()


@pytest.fixture
def pair_topology() -> Topology:
    """
    Two hypervisors of one subnet and one SAN, joined by a dedicated 1 Gbit/s link.
    """
    return Topology(hosts=[hypervisor("h1"), hypervisor("h2")], links=[link("h1", "h2", 1e9, 0.0001)])


@pytest.fixture
def cross_topology() -> Topology:
    """
    c1 - r1 - ha (home subnet) and r1 - fa (visited subnet), no shared storage between ha and fa.
    """
    return Topology(
        hosts=[
            client("c1"),
            router("r1"),
            hypervisor("ha", subnet="home", san="san-home"),
            hypervisor("fa", subnet="visited", san="san-visited"),
        ],
        links=[
            link("c1", "r1", 1e9, 0.001),
            link("r1", "ha", 1e9, 0.002),
            link("r1", "fa", 1e9, 0.010),
        ],
    )


@pytest.fixture
def scenario_file() -> Callable[[str], Scenario]:
    def load(name: str) -> Scenario:
        path = SCENARIOS_DIR / name
        return parse_scenario(path.read_text(encoding="utf-8"), path.stem)

    return load
