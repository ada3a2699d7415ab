from __future__ import annotations

import math

import numpy as np
import pytest
from conftest import client, hypervisor, link, router

from migrasim.config import SimulationConstants
from migrasim.errors import InfeasibleMigration, ScenarioError
from migrasim.migration import (
    HIGH_LINK_SPEED_WARNING,
    MigrationEngine,
    MigrationMode,
    MigrationPlan,
    NetworkContinuity,
    StorageRequirement,
    VmSpec,
    check_feasibility,
    execute_migration,
    plan_precopy,
)
from migrasim.mobility import AddressBinding, MobilityMode
from migrasim.netmodel import Flow, FluidNetwork, Topology, shortest_path
from migrasim.simcore import Simulator, TraceLog
from migrasim.utils import GiB, MiB

SHARED = MigrationMode.SHARED_STORAGE
CONTEXT = MigrationMode.CONTEXT_TRANSFER
ARP = MobilityMode.ARP
MIP = MobilityMode.MIP


def precopy_oracle(
    mem: float, rate: float, dirty: float, threshold: float, max_rounds: int, cpu: float, t_redirect: float
) -> tuple[list[float], float, float]:
    """
    Brute-force pre-copy at a constant byte rate: `(round durations, downtime, total)`.
    """
    rounds: list[float] = []
    payload = mem
    for _ in range(max_rounds):
        rounds.append(payload / rate)
        payload = dirty * rounds[-1]
        if payload <= threshold:
            break
    downtime = (payload + cpu) / rate + t_redirect
    return rounds, downtime, math.fsum(rounds) + downtime


def pair(capacity: float = 1e9) -> Topology:
    return Topology(hosts=[hypervisor("h1"), hypervisor("h2")], links=[link("h1", "h2", capacity, 0.0001)])


def vm(host: str = "h1", mem: float = 480 * MiB, dirty: float = 0.0, **kwargs) -> dict[str, VmSpec]:
    return {"vm1": VmSpec(id="vm1", host=host, mem_bytes=mem, dirty_rate=dirty, **kwargs)}


# Pre-copy recurrence


def test_precopy_rounds_shrink_by_the_dirty_ratio():
    plan = plan_precopy(1024 * MiB, 128 * MiB, 32 * MiB, 4 * MiB, 30)
    assert plan.round_durations == (8.0, 2.0, 0.5, 0.125)
    assert plan.residual_bytes == 4 * MiB
    assert plan.converged


def test_no_dirtying_is_a_single_round():
    plan = plan_precopy(480 * MiB, 125e6, 0.0, 4 * MiB, 30)
    assert plan.round_durations == pytest.approx((4.02653184,))
    assert plan.residual_bytes == 0
    assert plan.converged


def test_dirty_rate_equal_to_link_rate_never_converges():
    plan = plan_precopy(1024 * MiB, 100 * MiB, 100 * MiB, 4 * MiB, 5)
    assert plan.round_durations == pytest.approx((10.24,) * 5)
    assert plan.residual_bytes == pytest.approx(1024 * MiB)
    assert not plan.converged


def test_dirty_rate_above_link_rate_hits_the_round_cap():
    plan = plan_precopy(64 * MiB, 10 * MiB, 20 * MiB, 4 * MiB, 30)
    assert len(plan.round_durations) == 30
    assert list(plan.round_durations) == sorted(plan.round_durations)
    assert not plan.converged


def test_precopy_estimate():
    plan = plan_precopy(1024 * MiB, 128 * MiB, 32 * MiB, 4 * MiB, 30)
    t_downtime, t_total = plan.estimate(128 * MiB, 4 * MiB, t_redirect=0.01)
    assert t_downtime == pytest.approx(8 * MiB / (128 * MiB) + 0.01)
    assert t_total == pytest.approx(10.625 + t_downtime)


@pytest.mark.parametrize(
    "args",
    [
        (0, 1.0, 0.0, 1.0, 1),
        (1.0, 0, 0.0, 1.0, 1),
        (1.0, 1.0, -1.0, 1.0, 1),
        (1.0, 1.0, 0.0, 0, 1),
        (1.0, 1.0, 0.0, 1.0, 0),
    ],
)
def test_precopy_rejects_bad_input(args):
    with pytest.raises(ValueError):
        plan_precopy(*args)


# Feasibility


def test_plan_between_one_host_is_refused():
    with pytest.raises(ValueError, match="already on"):
        MigrationPlan(vm="vm1", src="h1", dst="h1", mode=SHARED, mobility=ARP)


def test_shared_storage_inside_a_subnet(pair_topology: Topology):
    plan = MigrationPlan(vm="vm1", src="h1", dst="h2", mode=SHARED, mobility=ARP)
    report = check_feasibility(plan, pair_topology, vm())
    assert report.feasible
    assert report.storage is StorageRequirement.SHARED
    assert report.network_continuity is NetworkContinuity.ARP_BROADCAST
    assert report.same_subnet
    assert report.warnings == []
    assert report.bottleneck_capacity == 1e9


def test_shared_storage_needs_a_common_storage_domain(cross_topology: Topology):
    plan = MigrationPlan(vm="vm1", src="ha", dst="fa", mode=SHARED, mobility=MIP)
    report = check_feasibility(plan, cross_topology, vm("ha"))
    assert not report.feasible
    assert report.network_continuity is NetworkContinuity.TUNNEL_REQUIRED
    assert report.reasons == ["ha and fa do not share a storage domain"]


def test_context_transfer_over_a_slow_link_warns():
    topo = Topology(
        hosts=[client("c1"), router("r1"), hypervisor("ha", "home", "s1"), hypervisor("fa", "visited", "s2")],
        links=[link("c1", "r1"), link("r1", "ha"), link("r1", "fa", 5e8, 0.010)],
    )
    plan = MigrationPlan(vm="vm1", src="ha", dst="fa", mode=CONTEXT, mobility=MIP)
    report = check_feasibility(plan, topo, vm("ha"))
    assert report.feasible
    assert report.storage is StorageRequirement.MUST_TRANSFER
    assert report.network_continuity is NetworkContinuity.TUNNEL_REQUIRED
    assert report.warnings == [HIGH_LINK_SPEED_WARNING]
    assert report.bottleneck_capacity == 5e8


def test_arp_cannot_cross_subnets(cross_topology: Topology):
    plan = MigrationPlan(vm="vm1", src="ha", dst="fa", mode=CONTEXT, mobility=ARP)
    report = check_feasibility(plan, cross_topology, vm("ha"))
    assert not report.feasible
    assert report.network_continuity is NetworkContinuity.NONE
    assert "ARP announcements cannot cross subnets" in report.reasons


def test_arp_stays_in_the_home_subnet_after_a_tunnelled_move():
    topo = Topology(
        hosts=[
            hypervisor("ha", subnet="home", san="san-home"),
            hypervisor("fa1", subnet="visited", san="san-visited"),
            hypervisor("fa2", subnet="visited", san="san-visited"),
        ],
        links=[link("ha", "fa1"), link("fa1", "fa2")],
    )
    specs = vm("ha")
    report = check_feasibility(MigrationPlan(vm="vm1", src="fa1", dst="fa2", mode=SHARED, mobility=ARP), topo, specs)
    assert not report.feasible
    assert report.network_continuity is NetworkContinuity.NONE
    assert report.reasons == ["ARP cannot announce the address of vm1 outside the subnet of ha"]

    report = check_feasibility(MigrationPlan(vm="vm1", src="fa1", dst="fa2", mode=SHARED, mobility=MIP), topo, specs)
    assert report.feasible


def test_destination_must_be_a_hypervisor(cross_topology: Topology):
    plan = MigrationPlan(vm="vm1", src="ha", dst="r1", mode=CONTEXT, mobility=MIP)
    report = check_feasibility(plan, cross_topology, vm("ha"))
    assert not report.feasible
    assert "r1 is not a hypervisor host" in report.reasons


def test_infeasible_plan_is_refused_at_submit(cross_topology: Topology):
    plan = MigrationPlan(vm="vm1", src="ha", dst="fa", mode=SHARED, mobility=MIP)
    with pytest.raises(InfeasibleMigration) as info:
        execute_migration(plan, cross_topology, vm("ha"))
    assert info.value.exit_code == 3


# Execution


def test_operating_point_without_dirtying(pair_topology: Topology):
    plan = MigrationPlan(vm="vm1", src="h1", dst="h2", mode=SHARED, mobility=ARP)
    outcome = execute_migration(plan, pair_topology, vm(cpu_state_bytes=8 * MiB))
    assert outcome.rounds == 1
    assert outcome.converged
    assert outcome.t_redirect == pytest.approx(0.010)
    assert outcome.t_downtime == pytest.approx(8 * MiB / 125e6 + 0.010)
    assert outcome.t_total == pytest.approx(4.10364, rel=1e-5)
    assert outcome.t_total == pytest.approx(4.0, rel=0.1)
    assert outcome.t_downtime < 0.2


def test_operating_point_with_dirtying(pair_topology: Topology):
    plan = MigrationPlan(vm="vm1", src="h1", dst="h2", mode=SHARED, mobility=ARP, stop_threshold_bytes=4 * MiB)
    outcome = execute_migration(plan, pair_topology, vm(dirty=16 * MiB, cpu_state_bytes=8 * MiB))
    assert outcome.round_durations == pytest.approx([4.02653184, 0.54043196, 0.07253555], rel=1e-6)
    assert outcome.residual_bytes == pytest.approx(1216944.6, rel=1e-6)
    assert outcome.t_downtime == pytest.approx(0.0868444, rel=1e-5)
    assert outcome.t_total == pytest.approx(4.7263, rel=1e-4)


def test_shared_storage_ignores_disk_and_context_sizes():
    plan = MigrationPlan(vm="vm1", src="h1", dst="h2", mode=SHARED, mobility=ARP)
    baseline = execute_migration(plan, pair(), vm(dirty=16 * MiB))
    rng = np.random.default_rng(3)
    for _ in range(20):
        disk, context = (float(size) for size in rng.uniform(0, 64 * GiB, size=2))
        outcome = execute_migration(plan, pair(), vm(dirty=16 * MiB, disk_bytes=disk, context_bytes=context))
        assert outcome.t_downtime == baseline.t_downtime
        assert outcome.t_total == baseline.t_total
        assert outcome.bytes_total == baseline.bytes_total


def test_execution_matches_the_recurrence_on_random_inputs():
    rng = np.random.default_rng(2024)
    constants = SimulationConstants()
    for _ in range(200):
        capacity = float(rng.uniform(1e8, 1e10))
        rate = capacity / 8
        mem = float(rng.uniform(64 * MiB, 4 * GiB))
        dirty = float(rng.uniform(0.0, 0.9)) * rate
        threshold = float(rng.uniform(1 * MiB, 64 * MiB))
        max_rounds = int(rng.integers(1, 31))
        cpu = float(rng.uniform(0.0, 16 * MiB))

        plan = MigrationPlan(
            vm="vm1",
            src="h1",
            dst="h2",
            mode=SHARED,
            mobility=ARP,
            stop_threshold_bytes=threshold,
            max_rounds=max_rounds,
        )
        outcome = execute_migration(plan, pair(capacity), vm(mem=mem, dirty=dirty, cpu_state_bytes=cpu), constants)
        rounds, downtime, total = precopy_oracle(mem, rate, dirty, threshold, max_rounds, cpu, constants.arp_delay)

        assert outcome.rounds == len(rounds)
        assert outcome.round_durations == pytest.approx(rounds, rel=1e-9)
        assert outcome.t_downtime == pytest.approx(downtime, rel=1e-9)
        assert outcome.t_total == pytest.approx(total, rel=1e-9)


def test_non_convergence_is_reported(pair_topology: Topology):
    plan = MigrationPlan(vm="vm1", src="h1", dst="h2", mode=SHARED, mobility=ARP, max_rounds=4)
    outcome = execute_migration(plan, pair_topology, vm(dirty=200e6))
    assert outcome.rounds == 4
    assert not outcome.converged
    assert outcome.residual_bytes > plan.stop_threshold_bytes


def test_context_transfer_moves_disk_and_context_first(cross_topology: Topology):
    specs = vm("ha", mem=512 * MiB, dirty=16 * MiB, disk_bytes=10 * GiB, context_bytes=64 * MiB)
    plan = MigrationPlan(vm="vm1", src="ha", dst="fa", mode=CONTEXT, mobility=MIP)
    outcome = execute_migration(plan, cross_topology, specs)
    spec = specs["vm1"]

    assert outcome.t_disk == pytest.approx(10 * GiB * 8 / 1e9)
    assert outcome.t_disk == pytest.approx(85.9, abs=0.01)
    assert outcome.t_context == pytest.approx((64 * MiB + spec.cpu_state_bytes) / 125e6)
    # the tunnel is long up by then, only the binding update remains
    assert outcome.t_redirect == pytest.approx(0.012)
    assert outcome.t_total == pytest.approx(
        outcome.t_disk + outcome.t_context + outcome.t_precopy + outcome.t_downtime, rel=1e-12
    )

    sent = (
        spec.disk_bytes
        + spec.context_bytes
        + 2 * spec.cpu_state_bytes
        + math.fsum(outcome.round_durations) * 125e6
        + outcome.residual_bytes
    )
    assert outcome.bytes_total == pytest.approx(sent, rel=1e-9)


def _with_background(topo: Topology, plan: MigrationPlan, specs: dict[str, VmSpec], src: str, dst: str):
    sim = Simulator()
    trace = TraceLog()
    network = FluidNetwork(topo, sim, trace)
    bindings = {"vm1": AddressBinding(vm="vm1", home_host=plan.src, current_host=plan.src)}
    engine = MigrationEngine(topo, specs, bindings, network, sim, trace, SimulationConstants())
    network.launch(Flow(id="bulk", src=src, dst=dst, path=shortest_path(topo, src, dst)))
    engine.submit(plan)
    sim.run_until(1e6)
    return engine.outcomes[0]


def test_competing_elastic_flow_doubles_every_phase(cross_topology: Topology):
    specs = vm("ha", mem=512 * MiB, disk_bytes=1 * GiB, context_bytes=64 * MiB)
    plan = MigrationPlan(vm="vm1", src="ha", dst="fa", mode=CONTEXT, mobility=MIP)
    alone = execute_migration(plan, cross_topology, specs)
    shared = _with_background(cross_topology, plan, specs, "ha", "fa")

    assert shared.t_disk == pytest.approx(2 * alone.t_disk, rel=1e-9)
    assert shared.t_context == pytest.approx(2 * alone.t_context, rel=1e-9)
    assert shared.round_durations == pytest.approx([2 * d for d in alone.round_durations], rel=1e-9)
    assert shared.t_downtime - shared.t_redirect == pytest.approx(2 * (alone.t_downtime - alone.t_redirect), rel=1e-9)


def test_more_dirtying_never_makes_a_migration_cheaper():
    totals: list[float] = []
    volumes: list[float] = []
    plan = MigrationPlan(vm="vm1", src="h1", dst="h2", mode=SHARED, mobility=ARP)
    for dirty in np.linspace(0.0, 100e6, 21):
        outcome = execute_migration(plan, pair(), vm(dirty=float(dirty)))
        totals.append(outcome.t_total)
        volumes.append(outcome.bytes_total)
    assert totals == sorted(totals)
    assert volumes == sorted(volumes)


# Engine


def test_second_move_waits_for_the_first(pair_topology: Topology):
    sim = Simulator()
    trace = TraceLog()
    network = FluidNetwork(pair_topology, sim, trace)
    specs = vm()
    bindings = {"vm1": AddressBinding(vm="vm1", home_host="h1", current_host="h1")}
    engine = MigrationEngine(pair_topology, specs, bindings, network, sim, trace, SimulationConstants())
    engine.submit(MigrationPlan(vm="vm1", src="h1", dst="h2", mode=SHARED, mobility=ARP))
    engine.submit(MigrationPlan(vm="vm1", src="h2", dst="h1", mode=SHARED, mobility=ARP, start_at=1.0))
    sim.run_until(100.0)

    first, second = engine.outcomes
    assert second.t_start == pytest.approx(first.t_total)
    assert bindings["vm1"].current_host == "h1"
    assert bindings["vm1"].epoch == 2
    assert engine.unfinished() == []


def test_move_from_the_wrong_host_fails_at_start(pair_topology: Topology):
    sim = Simulator()
    trace = TraceLog()
    bindings = {"vm1": AddressBinding(vm="vm1", home_host="h1", current_host="h1")}
    network = FluidNetwork(pair_topology, sim, trace)
    engine = MigrationEngine(pair_topology, vm(), bindings, network, sim, trace, SimulationConstants())
    engine.submit(MigrationPlan(vm="vm1", src="h2", dst="h1", mode=SHARED, mobility=ARP))
    with pytest.raises(ScenarioError, match="vm1 is on h1, not on h2"):
        sim.run_until(10.0)
