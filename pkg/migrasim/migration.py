"""
Live-migration engine: feasibility against the live-migration requirements matrix, the pre-copy recurrence, and the
event-driven execution of shared-storage and context-transfer migrations over the fluid network.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from collections.abc import Mapping, Sequence
from enum import StrEnum
from typing import TYPE_CHECKING, NamedTuple, Protocol, Self

from pydantic import BaseModel, Field, model_validator

from .config import SimulationConstants
from .errors import InfeasibleMigration, ScenarioError
from .mobility import AddressBinding, MobilityMode, begin_mobility, complete_switchover
from .netmodel import (
    Flow,
    FluidNetwork,
    HostRole,
    Topology,
    bottleneck_capacity,
    same_storage_domain,
    same_subnet,
    shortest_path,
)
from .simcore import EventKind, SimEvent, Simulator, TraceLog

if TYPE_CHECKING:
    from .mobility import ArpPlan, TunnelState

logger = logging.getLogger(__name__)

HIGH_LINK_SPEED_WARNING = "high link speed required"


class MigrationMode(StrEnum):
    SHARED_STORAGE = "shared-storage"
    CONTEXT_TRANSFER = "context-transfer"


class StorageRequirement(StrEnum):
    SHARED = "shared"
    MUST_TRANSFER = "must-transfer"


class NetworkContinuity(StrEnum):
    ARP_BROADCAST = "arp-broadcast"
    TUNNEL_REQUIRED = "tunnel-required"
    NONE = "none"


class VmSpec(BaseModel):
    id: str
    host: str
    mem_bytes: float = Field(gt=0)
    disk_bytes: float = Field(default=0.0, ge=0)
    context_bytes: float = Field(default=0.0, ge=0, description="plug-ins, packages, libraries")
    cpu_state_bytes: float = Field(default=SimulationConstants().cpu_state, ge=0)
    dirty_rate: float = Field(default=0.0, ge=0, description="bytes/s")


class MigrationPlan(BaseModel):
    vm: str
    src: str
    dst: str
    mode: MigrationMode
    mobility: MobilityMode
    start_at: float = Field(default=0.0, ge=0)
    stop_threshold_bytes: float = Field(default=SimulationConstants().stop_threshold, gt=0)
    max_rounds: int = Field(default=SimulationConstants().max_rounds, ge=1)
    home_agent: str | None = None

    @model_validator(mode="after")
    def _distinct_hosts(self) -> Self:
        if self.src == self.dst:
            raise ValueError(f"{self.vm} is already on {self.dst}")
        return self


class FeasibilityReport(BaseModel):
    """
    One row of the live-migration requirements matrix, instantiated for a concrete plan.
    """

    feasible: bool
    cpu_state: str = "same context"
    storage: StorageRequirement
    network_continuity: NetworkContinuity
    memory: str = "copy-pages"
    warnings: list[str] = Field(default_factory=list)
    reasons: list[str] = Field(default_factory=list)
    bottleneck_capacity: float
    same_subnet: bool


class MigrationOutcome(BaseModel):
    vm: str
    src: str
    dst: str
    mode: MigrationMode
    mobility: MobilityMode
    t_start: float
    t_disk: float = 0.0
    t_context: float = 0.0
    round_durations: list[float] = Field(default_factory=list)
    t_downtime: float = 0.0
    t_redirect: float = 0.0
    t_total: float = 0.0
    rounds: int = 0
    bytes_total: float = 0.0
    converged: bool = True
    residual_bytes: float = 0.0
    warnings: list[str] = Field(default_factory=list)

    @property
    def t_precopy(self) -> float:
        return math.fsum(self.round_durations)


class PrecopyPlan(NamedTuple):
    round_durations: tuple[float, ...]
    residual_bytes: float
    converged: bool

    def estimate(self, rate: float, cpu_state_bytes: float, t_redirect: float = 0.0) -> tuple[float, float]:
        """
        Constant-rate downtime and total migration time for this plan, `(t_downtime, t_total)`.
        """
        t_downtime = (self.residual_bytes + cpu_state_bytes) / rate + t_redirect
        return t_downtime, math.fsum(self.round_durations) + t_downtime


def plan_precopy(mem: float, rate: float, dirty_rate: float, threshold: float, max_rounds: int) -> PrecopyPlan:
    """
    Iterate the pre-copy recurrence at a constant transfer rate (bytes and bytes/s).

    Round 1 sends the whole memory; every next round re-sends what got dirtied during the previous one. Stops when
    the next payload fits under `threshold` (converged) or after `max_rounds` rounds; the residual is what the
    stop-and-copy phase still has to move.
    """
    if mem <= 0 or rate <= 0 or dirty_rate < 0 or threshold <= 0 or max_rounds < 1:
        raise ValueError("plan_precopy needs mem > 0, rate > 0, dirty_rate >= 0, threshold > 0, max_rounds >= 1")

    durations: list[float] = []
    payload = mem
    while True:
        duration = payload / rate
        durations.append(duration)
        payload = dirty_rate * duration
        if payload <= threshold:
            return PrecopyPlan(tuple(durations), payload, True)
        if len(durations) >= max_rounds:
            return PrecopyPlan(tuple(durations), payload, False)


def check_feasibility(
    plan: MigrationPlan,
    topo: Topology,
    specs: Mapping[str, VmSpec],
    constants: SimulationConstants | None = None,
) -> FeasibilityReport:
    constants = constants or SimulationConstants()
    if plan.vm not in specs:
        raise ScenarioError(f"unknown vm {plan.vm}")
    topo.host(plan.src)
    dst = topo.host(plan.dst)

    path = shortest_path(topo, plan.src, plan.dst)
    bottleneck = bottleneck_capacity(path)
    local = same_subnet(topo, plan.src, plan.dst)
    reasons: list[str] = []
    warnings: list[str] = []

    if dst.role is not HostRole.HYPERVISOR:
        reasons.append(f"{plan.dst} is not a hypervisor host")

    if plan.mode is MigrationMode.SHARED_STORAGE:
        storage = StorageRequirement.SHARED
        if not same_storage_domain(topo, plan.src, plan.dst):
            reasons.append(f"{plan.src} and {plan.dst} do not share a storage domain")
    else:
        storage = StorageRequirement.MUST_TRANSFER
        if bottleneck < constants.link_speed_threshold:
            warnings.append(HIGH_LINK_SPEED_WARNING)

    continuity = NetworkContinuity.ARP_BROADCAST if local else NetworkContinuity.TUNNEL_REQUIRED
    if plan.mobility is MobilityMode.ARP and not local:
        # Live sessions would be lost: a gratuitous ARP never leaves its subnet.
        continuity = NetworkContinuity.NONE
        reasons.append("ARP announcements cannot cross subnets")
    elif plan.mobility is MobilityMode.ARP and not same_subnet(topo, specs[plan.vm].host, plan.dst):
        # The address still belongs to the home subnet after an earlier tunnelled move.
        continuity = NetworkContinuity.NONE
        reasons.append(f"ARP cannot announce the address of {plan.vm} outside the subnet of {specs[plan.vm].host}")
    if plan.mobility is MobilityMode.MIP:
        home_agent = plan.home_agent or plan.src
        shortest_path(topo, home_agent, plan.dst)

    return FeasibilityReport(
        feasible=not reasons,
        storage=storage,
        network_continuity=continuity,
        warnings=warnings,
        reasons=reasons,
        bottleneck_capacity=bottleneck,
        same_subnet=local,
    )


class MigrationPhase(StrEnum):
    PENDING = "pending"
    DISK = "disk"
    CONTEXT = "context"
    PRECOPY = "precopy"
    STOP_AND_COPY = "stop-and-copy"
    REDIRECT = "redirect"
    DONE = "done"


class MigrationListener(Protocol):
    def on_downtime_start(self, vm: str, now: float) -> None: ...

    def on_switchover(self, vm: str, now: float, outcome: MigrationOutcome, binding: AddressBinding) -> None: ...


class MigrationProcess:
    """
    One commanded migration driven by flow-end, round-complete and switchover events.
    """

    def __init__(
        self,
        plan: MigrationPlan,
        spec: VmSpec,
        binding: AddressBinding,
        engine: MigrationEngine,
        warnings: Sequence[str] = (),
    ) -> None:
        self.plan = plan
        self.spec = spec
        self.binding = binding
        self.engine = engine
        self.phase = MigrationPhase.PENDING
        self.index = binding.epoch + 1
        self.path = shortest_path(engine.topology, plan.src, plan.dst)
        self.redirect: TunnelState | ArpPlan | None = None
        self.downtime_started_at = 0.0
        self.t_stop_copy = 0.0
        self.outcome = MigrationOutcome(
            vm=plan.vm,
            src=plan.src,
            dst=plan.dst,
            mode=plan.mode,
            mobility=plan.mobility,
            t_start=0.0,
            warnings=list(warnings),
        )

    def start(self, now: float) -> None:
        self.outcome.t_start = now
        self.redirect = begin_mobility(self.plan, self.engine.topology, now, self.engine.constants, self.binding)
        self.engine.trace.emit(
            now,
            EventKind.MIGRATION_START,
            vm=self.plan.vm,
            src=self.plan.src,
            dst=self.plan.dst,
            mode=self.plan.mode,
            mobility=self.plan.mobility,
        )
        logger.info("migration of %s from %s to %s started at t=%.6gs", self.plan.vm, self.plan.src, self.plan.dst, now)
        if self.plan.mode is MigrationMode.CONTEXT_TRANSFER:
            self._launch(MigrationPhase.DISK, "disk", self.spec.disk_bytes)
        else:
            self._launch(MigrationPhase.PRECOPY, "round1", self.spec.mem_bytes)

    def _launch(self, phase: MigrationPhase, label: str, nbytes: float) -> None:
        self.phase = phase
        self.outcome.bytes_total += nbytes
        flow = Flow(
            id=f"{self.plan.vm}#{self.index}:{label}",
            src=self.plan.src,
            dst=self.plan.dst,
            path=self.path,
            size_bits=nbytes * 8,
            tag=f"migration-{phase}",
        )
        self.engine.network.launch(flow, owner=self)

    def on_flow_end(self, flow: Flow, now: float) -> None:
        match self.phase:
            case MigrationPhase.DISK:
                self.outcome.t_disk = flow.elapsed
                self._launch(MigrationPhase.CONTEXT, "context", self.spec.context_bytes + self.spec.cpu_state_bytes)
            case MigrationPhase.CONTEXT:
                self.outcome.t_context = flow.elapsed
                self._launch(MigrationPhase.PRECOPY, "round1", self.spec.mem_bytes)
            case MigrationPhase.PRECOPY:
                self.outcome.round_durations.append(flow.elapsed)
                self.engine.sim.schedule(now, EventKind.ROUND_COMPLETE, self)
            case MigrationPhase.STOP_AND_COPY:
                self.t_stop_copy = flow.elapsed
                self._begin_redirect(now)
            case _:
                raise RuntimeError(f"unexpected flow end for {flow.id} in phase {self.phase}")

    def on_round_complete(self, now: float) -> None:
        rounds = len(self.outcome.round_durations)
        last = self.outcome.round_durations[-1]
        payload = self.spec.dirty_rate * last
        self.engine.trace.emit(
            now, EventKind.ROUND_COMPLETE, vm=self.plan.vm, round=rounds, duration=last, dirty_bytes=payload
        )
        if payload <= self.plan.stop_threshold_bytes:
            self._stop_and_copy(now, payload, converged=True)
        elif rounds >= self.plan.max_rounds:
            logger.warning("%s did not converge after %d pre-copy rounds", self.plan.vm, rounds)
            self._stop_and_copy(now, payload, converged=False)
        else:
            self._launch(MigrationPhase.PRECOPY, f"round{rounds + 1}", payload)

    def _stop_and_copy(self, now: float, residual: float, converged: bool) -> None:
        self.outcome.converged = converged
        self.outcome.residual_bytes = residual
        self.outcome.rounds = len(self.outcome.round_durations)
        self.downtime_started_at = now
        for listener in self.engine.listeners:
            listener.on_downtime_start(self.plan.vm, now)
        self._launch(MigrationPhase.STOP_AND_COPY, "stop-copy", residual + self.spec.cpu_state_bytes)

    def _begin_redirect(self, now: float) -> None:
        if self.redirect is None:
            raise RuntimeError("mobility was never started")
        self.phase = MigrationPhase.REDIRECT
        self.outcome.t_redirect = complete_switchover(self.binding, self.redirect, self.engine.topology, now)
        self.engine.sim.schedule(now + self.outcome.t_redirect, EventKind.SWITCHOVER, self)

    def on_switchover(self, now: float) -> None:
        outcome = self.outcome
        outcome.t_downtime = self.t_stop_copy + outcome.t_redirect
        outcome.t_total = outcome.t_disk + outcome.t_context + outcome.t_precopy + outcome.t_downtime
        self.phase = MigrationPhase.DONE
        self.engine.trace.emit(
            now,
            EventKind.SWITCHOVER,
            vm=self.plan.vm,
            mode=self.plan.mobility,
            t_redirect=outcome.t_redirect,
            epoch=self.binding.epoch,
        )
        for listener in self.engine.listeners:
            listener.on_switchover(self.plan.vm, now, outcome, self.binding)
        logger.info(
            "migration of %s done at t=%.6gs (total %.6gs, downtime %.6gs)",
            self.plan.vm,
            now,
            outcome.t_total,
            outcome.t_downtime,
        )


class MigrationEngine:
    """
    Owns every migration of a run: starts them on migration-start events, defers a directive while the same VM is
    still moving, and collects the outcomes.
    """

    def __init__(
        self,
        topology: Topology,
        specs: Mapping[str, VmSpec],
        bindings: Mapping[str, AddressBinding],
        network: FluidNetwork,
        sim: Simulator,
        trace: TraceLog,
        constants: SimulationConstants,
    ) -> None:
        self.topology = topology
        self.specs = specs
        self.bindings = bindings
        self.network = network
        self.sim = sim
        self.trace = trace
        self.constants = constants
        self.listeners: list[MigrationListener] = []
        self.outcomes: list[MigrationOutcome] = []
        self.running: dict[str, MigrationProcess] = {}
        self._deferred: dict[str, deque[MigrationPlan]] = {}
        sim.on(EventKind.MIGRATION_START, self._on_migration_start)
        sim.on(EventKind.ROUND_COMPLETE, self._on_round_complete)
        sim.on(EventKind.SWITCHOVER, self._on_switchover)

    def submit(self, plan: MigrationPlan) -> SimEvent:
        """
        Refuse an infeasible plan, otherwise schedule its migration-start event.
        """
        report = check_feasibility(plan, self.topology, self.specs, self.constants)
        if not report.feasible:
            raise InfeasibleMigration(plan, report)
        return self.sim.schedule(plan.start_at, EventKind.MIGRATION_START, plan)

    def _on_migration_start(self, event: SimEvent) -> None:
        plan: MigrationPlan = event.payload
        if plan.vm in self.running:
            logger.warning("%s is still migrating at t=%.6gs, deferring the move to %s", plan.vm, event.at, plan.dst)
            self._deferred.setdefault(plan.vm, deque()).append(plan)
            return
        self._start(plan, event.at)

    def _start(self, plan: MigrationPlan, now: float) -> None:
        binding = self.bindings[plan.vm]
        if binding.current_host != plan.src:
            raise ScenarioError(f"{plan.vm} is on {binding.current_host}, not on {plan.src}")
        report = check_feasibility(plan, self.topology, self.specs, self.constants)
        process = MigrationProcess(plan, self.specs[plan.vm], binding, self, report.warnings)
        self.running[plan.vm] = process
        process.start(now)

    def _on_round_complete(self, event: SimEvent) -> None:
        process: MigrationProcess = event.payload
        process.on_round_complete(event.at)

    def _on_switchover(self, event: SimEvent) -> None:
        process: MigrationProcess = event.payload
        process.on_switchover(event.at)
        self.outcomes.append(process.outcome)
        del self.running[process.plan.vm]
        if queue := self._deferred.get(process.plan.vm):
            self._start(queue.popleft(), event.at)

    def unfinished(self) -> list[MigrationProcess]:
        return list(self.running.values())


def execute_migration(
    plan: MigrationPlan,
    topo: Topology,
    specs: Mapping[str, VmSpec],
    constants: SimulationConstants | None = None,
    horizon: float = 1e9,
) -> MigrationOutcome:
    """
    Run a single migration alone on `topo` and return its outcome.
    """
    constants = constants or SimulationConstants()
    sim = Simulator(max_events=constants.max_events)
    trace = TraceLog()
    network = FluidNetwork(topo, sim, trace)
    spec = specs[plan.vm]
    bindings = {plan.vm: AddressBinding(vm=plan.vm, home_host=spec.host, current_host=plan.src)}
    engine = MigrationEngine(topo, specs, bindings, network, sim, trace, constants)
    engine.submit(plan)
    sim.run_until(horizon)
    if not engine.outcomes:
        raise RuntimeError(f"migration of {plan.vm} did not finish before t={horizon}")
    return engine.outcomes[0]
