"""
Client sessions with continuity accounting, and the vCDN controller that redirects requests to the closest surrogate.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Collection, Mapping
from enum import StrEnum
from typing import TYPE_CHECKING

from pydantic import BaseModel, Field

from .errors import ScenarioError
from .mobility import AddressBinding, one_way_latency, route_to_vm
from .netmodel import Flow, FluidNetwork, HostRole, Topology, latency_key
from .simcore import EventKind, SimEvent

if TYPE_CHECKING:
    from .migration import MigrationOutcome
    from .simcore import Simulator, TraceLog

logger = logging.getLogger(__name__)


class SessionState(StrEnum):
    ACTIVE = "active"
    INTERRUPTED = "interrupted"
    DROPPED = "dropped"
    COMPLETED = "completed"


class Session(BaseModel):
    id: str
    client: str
    vm: str
    rate: float | None = Field(default=None, gt=0, description="streaming demand in bit/s, None is elastic")
    timeout: float = Field(gt=0, description="longest tolerable interruption, seconds")
    state: SessionState = SessionState.ACTIVE
    interruptions: list[tuple[float, float]] = Field(default_factory=list)

    @property
    def max_interruption(self) -> float:
        return max((end - start for start, end in self.interruptions), default=0.0)

    @property
    def dropped(self) -> bool:
        return self.state is SessionState.DROPPED


class SurrogateSet(BaseModel):
    content: str
    surrogates: list[str] = Field(min_length=1)
    origin: str


class RequestSpec(BaseModel):
    client: str
    content: str
    at: float = Field(ge=0)


class RequestRecord(BaseModel):
    client: str
    content: str
    issued_at: float
    served_by: str
    latency: float


def account_interruption(session: Session, vm: str, start: float, t_downtime: float) -> Session:
    """
    Record the interruption a migration of `vm` caused to `session`. The window already includes the redirection
    delay. Sessions bound to another VM, or already dropped, are left untouched.
    """
    if session.vm != vm or session.state is SessionState.DROPPED:
        return session
    session.interruptions.append((start, start + t_downtime))
    session.state = SessionState.DROPPED if t_downtime > session.timeout else SessionState.ACTIVE
    return session


def select_surrogate(
    topo: Topology,
    client: str,
    surrogate_set: SurrogateSet,
    bindings: Mapping[str, AddressBinding],
    excluded: Collection[str] = (),
) -> str:
    """
    The eligible surrogate closest to `client` by current path latency, smallest id on ties. Surrogates in their
    migration downtime are not eligible; when none is left the origin serves.
    """
    candidates = sorted(vm for vm in surrogate_set.surrogates if vm not in excluded)
    if not candidates:
        return surrogate_set.origin
    return min(candidates, key=lambda vm: (latency_key(one_way_latency(topo, client, bindings[vm].current_host)), vm))


def control_hop(topo: Topology, client: str, fixed: float | None = None) -> float:
    """
    Client -> controller -> client round trip, through the closest controller host (no controller, no hop).
    """
    if fixed is not None:
        return fixed
    controllers = sorted(host.id for host in topo.hosts if host.role is HostRole.CONTROLLER)
    if not controllers:
        return 0.0
    return min(2 * one_way_latency(topo, client, controller) for controller in controllers)


def handle_request(
    topo: Topology,
    request: RequestSpec,
    sets: Mapping[str, SurrogateSet],
    bindings: Mapping[str, AddressBinding],
    clock: float,
    *,
    excluded: Collection[str] = (),
    fixed_control_hop: float | None = None,
) -> RequestRecord:
    if (surrogate_set := sets.get(request.content)) is None:
        raise ScenarioError(f"unknown content {request.content}")
    served_by = select_surrogate(topo, request.client, surrogate_set, bindings, excluded)
    latency = control_hop(topo, request.client, fixed_control_hop) + one_way_latency(
        topo, request.client, bindings[served_by].current_host
    )
    return RequestRecord(
        client=request.client, content=request.content, issued_at=clock, served_by=served_by, latency=latency
    )


class ServiceLayer:
    """
    Runtime side of sessions and requests. Listens to migrations: sessions pinned to a VM are suspended during its
    downtime and re-pathed at switchover, requests simply avoid it.
    """

    def __init__(
        self,
        topology: Topology,
        sessions: Mapping[str, Session],
        sets: Mapping[str, SurrogateSet],
        bindings: Mapping[str, AddressBinding],
        network: FluidNetwork,
        sim: Simulator,
        trace: TraceLog,
        fixed_control_hop: float | None = None,
    ) -> None:
        self.topology = topology
        self.sessions = sessions
        self.sets = sets
        self.bindings = bindings
        self.network = network
        self.sim = sim
        self.trace = trace
        self.fixed_control_hop = fixed_control_hop
        self.records: list[RequestRecord] = []
        self.in_downtime: dict[str, float] = {}
        self._flows: dict[str, Flow] = {}
        sim.on(EventKind.REQUEST_ARRIVAL, self._on_request)

    def start_sessions(self) -> None:
        for session in self.sessions.values():
            self._launch(session)

    def schedule_requests(self, requests: list[RequestSpec]) -> None:
        for request in requests:
            self.sim.schedule(request.at, EventKind.REQUEST_ARRIVAL, request)

    def _launch(self, session: Session) -> None:
        binding = self.bindings[session.vm]
        route = route_to_vm(self.topology, session.client, binding)
        flow = Flow(
            id=f"{session.id}@{binding.epoch}",
            src=session.client,
            dst=binding.current_host,
            path=route.path,
            demand=session.rate,
            vm=session.vm,
            tag="session",
        )
        self._flows[session.id] = flow
        self.network.launch(flow)

    def on_downtime_start(self, vm: str, now: float) -> None:
        self.in_downtime[vm] = now
        for session in self.sessions.values():
            if session.vm == vm and session.state is SessionState.ACTIVE:
                session.state = SessionState.INTERRUPTED
                self.network.halt(self._flows[session.id])

    def on_switchover(self, vm: str, now: float, outcome: MigrationOutcome, binding: AddressBinding) -> None:
        start = self.in_downtime.pop(vm, now)
        for session in self.sessions.values():
            if session.vm != vm or session.state is not SessionState.INTERRUPTED:
                continue
            account_interruption(session, vm, start, outcome.t_downtime)
            if session.dropped:
                logger.warning(
                    "session %s dropped: %.6gs interruption over a %.6gs timeout",
                    session.id,
                    outcome.t_downtime,
                    session.timeout,
                )
                continue
            self._launch(session)

    def _on_request(self, event: SimEvent) -> None:
        request: RequestSpec = event.payload
        record = handle_request(
            self.topology,
            request,
            self.sets,
            self.bindings,
            event.at,
            excluded=self.in_downtime,
            fixed_control_hop=self.fixed_control_hop,
        )
        self.records.append(record)
        self.trace.emit(
            event.at,
            EventKind.REQUEST_ARRIVAL,
            client=record.client,
            content=record.content,
            served_by=record.served_by,
            latency=record.latency,
        )

    def finish(self, now: float) -> None:
        """
        Close the books at scenario end: a downtime still open counts up to `now`, surviving sessions complete.
        """
        for session in self.sessions.values():
            if session.state is SessionState.INTERRUPTED:
                start = self.in_downtime.get(session.vm, now)
                account_interruption(session, session.vm, start, now - start)
            if session.state is SessionState.ACTIVE:
                session.state = SessionState.COMPLETED

    def mean_latency(self) -> float:
        if not self.records:
            return math.nan
        return math.fsum(record.latency for record in self.records) / len(self.records)
