from __future__ import annotations

import math

import numpy as np
import pytest
from conftest import client, hypervisor, link, router

from migrasim.errors import ScenarioError
from migrasim.migration import MigrationMode, MigrationOutcome
from migrasim.mobility import AddressBinding, MobilityMode
from migrasim.netmodel import FluidNetwork, Host, HostRole, Topology
from migrasim.services import (
    RequestSpec,
    ServiceLayer,
    Session,
    SessionState,
    SurrogateSet,
    account_interruption,
    control_hop,
    handle_request,
    select_surrogate,
)
from migrasim.simcore import Simulator, TraceLog


@pytest.fixture
def cdn_topology() -> Topology:
    """
    One client behind r1, a controller, two edge hypervisors at different distances and the origin datacenter.
    """
    return Topology(
        hosts=[
            client("c1"),
            router("r1"),
            Host(id="ctl", subnet_id="core", role=HostRole.CONTROLLER),
            hypervisor("far", "edge", "san-edge"),
            hypervisor("near", "edge", "san-edge"),
            hypervisor("dc", "dc", "san-dc"),
        ],
        links=[
            link("c1", "r1", latency=0.001),
            link("r1", "ctl", latency=0.001),
            link("r1", "far", latency=0.019),
            link("r1", "near", latency=0.004),
            link("r1", "dc", 1e10, 0.029),
        ],
    )


@pytest.fixture
def bindings() -> dict[str, AddressBinding]:
    return {
        vm: AddressBinding(vm=vm, home_host=host, current_host=host)
        for vm, host in [("sur1", "far"), ("sur2", "near"), ("origin1", "dc")]
    }


VIDEO = SurrogateSet(content="video", surrogates=["sur1", "sur2"], origin="origin1")


def session(**kwargs) -> Session:
    return Session(**{"id": "s1", "client": "c1", "vm": "vm1", "rate": 2e6, "timeout": 1.0} | kwargs)


# Sessions


def test_short_interruption_keeps_the_session():
    s = account_interruption(session(), "vm1", 4.0, 0.3)
    assert s.interruptions == [(4.0, 4.3)]
    assert s.max_interruption == pytest.approx(0.3)
    assert s.state is SessionState.ACTIVE


def test_interruption_over_the_timeout_drops_the_session():
    s = account_interruption(session(timeout=0.5), "vm1", 4.0, 0.6)
    assert s.dropped
    account_interruption(s, "vm1", 10.0, 0.1)
    assert s.interruptions == [(4.0, 4.6)]


def test_interruption_equal_to_the_timeout_is_tolerated():
    assert not account_interruption(session(timeout=0.5), "vm1", 0.0, 0.5).dropped


def test_other_vms_do_not_interrupt():
    s = account_interruption(session(), "vm2", 4.0, 5.0)
    assert s.interruptions == []
    assert s.max_interruption == 0.0


# Surrogate selection


def test_closest_surrogate_serves(cdn_topology: Topology, bindings: dict[str, AddressBinding]):
    assert select_surrogate(cdn_topology, "c1", VIDEO, bindings) == "sur2"


def test_equal_latency_goes_to_the_smallest_id(cdn_topology: Topology, bindings: dict[str, AddressBinding]):
    bindings["sur1"].current_host = "near"
    assert select_surrogate(cdn_topology, "c1", VIDEO, bindings) == "sur1"


def test_surrogates_in_downtime_are_skipped(cdn_topology: Topology, bindings: dict[str, AddressBinding]):
    assert select_surrogate(cdn_topology, "c1", VIDEO, bindings, excluded={"sur2"}) == "sur1"
    assert select_surrogate(cdn_topology, "c1", VIDEO, bindings, excluded={"sur1", "sur2"}) == "origin1"


def test_latencies_that_differ_only_by_rounding_still_tie():
    topo = Topology(
        hosts=[client("c1"), router("r1"), hypervisor("h2"), hypervisor("h9")],
        links=[link("c1", "r1", latency=0.1), link("r1", "h2", latency=0.2), link("c1", "h9", latency=0.3)],
    )
    located = {
        vm: AddressBinding(vm=vm, home_host=host, current_host=host) for vm, host in [("vm2", "h2"), ("vm9", "h9")]
    }
    surrogates = SurrogateSet(content="video", surrogates=["vm9", "vm2"], origin="vm9")
    assert select_surrogate(topo, "c1", surrogates, located) == "vm2"


def test_scaling_every_latency_keeps_the_choice():
    rng = np.random.default_rng(11)
    for _ in range(50):
        count = int(rng.integers(2, 7))
        latencies = rng.uniform(1e-4, 0.05, size=(count, 2))
        hosts = [f"h{i}" for i in range(count)]
        located = {
            f"vm{i}": AddressBinding(vm=f"vm{i}", home_host=host, current_host=host) for i, host in enumerate(hosts)
        }
        surrogates = SurrogateSet(content="video", surrogates=sorted(located), origin="vm0")
        edges = list(zip(hosts, latencies, strict=True))

        def build(scale: float) -> Topology:
            return Topology(
                hosts=[client("c1"), router("r1"), router("r2"), *(hypervisor(host) for host in hosts)],
                links=[
                    link("c1", "r1", latency=0.001 * scale),
                    link("c1", "r2", latency=0.002 * scale),
                    *(link("r1", host, latency=float(via_r1) * scale) for host, (via_r1, _) in edges),
                    *(link("r2", host, latency=float(via_r2) * scale) for host, (_, via_r2) in edges),
                ],
            )

        chosen = select_surrogate(build(1.0), "c1", surrogates, located)
        scale = float(rng.uniform(0.1, 10.0))
        assert select_surrogate(build(scale), "c1", surrogates, located) == chosen


def test_control_hop(cdn_topology: Topology, pair_topology: Topology):
    assert control_hop(cdn_topology, "c1") == pytest.approx(0.004)
    assert control_hop(cdn_topology, "c1", fixed=0.002) == 0.002
    assert control_hop(pair_topology, "h1") == 0.0


def test_request_latency_is_control_hop_plus_path(cdn_topology: Topology, bindings: dict[str, AddressBinding]):
    request = RequestSpec(client="c1", content="video", at=3.0)
    record = handle_request(cdn_topology, request, {"video": VIDEO}, bindings, 3.0, fixed_control_hop=0.002)
    assert record.served_by == "sur2"
    assert record.issued_at == 3.0
    assert record.latency == pytest.approx(0.002 + 0.005)

    bindings["sur2"].current_host = "dc"
    assert handle_request(cdn_topology, request, {"video": VIDEO}, bindings, 4.0).served_by == "sur1"


def test_unknown_content(cdn_topology: Topology, bindings: dict[str, AddressBinding]):
    request = RequestSpec(client="c1", content="audio", at=0.0)
    with pytest.raises(ScenarioError, match="unknown content audio"):
        handle_request(cdn_topology, request, {"video": VIDEO}, bindings, 0.0)


# Service layer


class Harness:
    def __init__(self, sessions: list[Session]) -> None:
        self.topology = Topology(
            hosts=[client("c1"), hypervisor("h1"), hypervisor("h2")],
            links=[link("c1", "h1"), link("h1", "h2")],
        )
        self.sim = Simulator()
        self.trace = TraceLog()
        self.network = FluidNetwork(self.topology, self.sim, self.trace)
        self.binding = AddressBinding(vm="vm1", home_host="h1", current_host="h1")
        self.layer = ServiceLayer(
            self.topology,
            {s.id: s for s in sessions},
            {},
            {"vm1": self.binding},
            self.network,
            self.sim,
            self.trace,
        )

    def migrate(self, start: float, t_downtime: float) -> None:
        self.sim.run_until(start)
        self.layer.on_downtime_start("vm1", start)
        self.sim.run_until(start + t_downtime)
        self.binding.current_host = "h2"
        self.binding.mode = MobilityMode.ARP
        self.binding.epoch += 1
        outcome = MigrationOutcome(
            vm="vm1",
            src="h1",
            dst="h2",
            mode=MigrationMode.SHARED_STORAGE,
            mobility=MobilityMode.ARP,
            t_start=0.0,
            t_downtime=t_downtime,
        )
        self.layer.on_switchover("vm1", start + t_downtime, outcome, self.binding)


def test_sessions_pause_during_downtime_and_resume_on_the_new_host():
    harness = Harness([session()])
    harness.layer.start_sessions()
    harness.migrate(1.0, 0.4)
    harness.sim.run_until(3.0)

    s = harness.layer.sessions["s1"]
    assert s.interruptions == [(1.0, 1.4)]
    assert s.state is SessionState.ACTIVE
    assert list(harness.network.active) == ["s1@1"]
    assert harness.network.active["s1@1"].dst == "h2"

    # nothing reaches vm1 while it is down
    delivered = [(r.start, r.end) for r in harness.network.delivery_log if r.flow.startswith("s1@")]
    assert delivered == [(0.0, 1.0)]


def test_session_over_its_timeout_is_not_resumed():
    harness = Harness([session(timeout=0.2)])
    harness.layer.start_sessions()
    harness.migrate(1.0, 0.4)
    harness.sim.run_until(3.0)
    assert harness.layer.sessions["s1"].dropped
    assert harness.network.active == {}


def test_downtime_still_open_at_scenario_end():
    harness = Harness([session(id="s1"), session(id="s2", rate=None)])
    harness.layer.start_sessions()
    harness.sim.run_until(1.0)
    harness.layer.on_downtime_start("vm1", 1.0)
    harness.sim.run_until(1.5)
    harness.layer.finish(1.5)

    for s in harness.layer.sessions.values():
        assert s.interruptions == [(1.0, 1.5)]
        assert s.state is SessionState.COMPLETED


def test_mean_latency_without_requests_is_nan():
    assert math.isnan(Harness([]).layer.mean_latency())
