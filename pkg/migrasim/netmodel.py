"""
Network world model: hosts, links, subnets and storage domains, shortest-latency routing and the max-min fair
fluid bandwidth model shared by migration and session traffic.
"""

from __future__ import annotations

import heapq
import logging
import math
from collections import Counter, defaultdict
from collections.abc import Iterable
from enum import StrEnum
from typing import TYPE_CHECKING, Any, NamedTuple, Protocol, Self

from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, model_validator

from .errors import ScenarioError
from .simcore import EventKind, SimEvent

if TYPE_CHECKING:
    from .simcore import Simulator, TraceLog

logger = logging.getLogger(__name__)

type LinkKey = tuple[str, str]
type Path = tuple[Link, ...]

# Relative slack under which a link counts as saturated during progressive filling.
_SATURATION_EPS = 1e-12


class HostRole(StrEnum):
    HYPERVISOR = "hypervisor-host"
    ROUTER = "router"
    CLIENT = "client-attach"
    CONTROLLER = "controller"


class Host(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: str
    subnet_id: str
    storage_domain: str | None = None
    role: HostRole = HostRole.HYPERVISOR

    @model_validator(mode="after")
    def _hypervisor_has_storage(self) -> Self:
        if self.role is HostRole.HYPERVISOR and self.storage_domain is None:
            raise ValueError(f"hypervisor host {self.id} needs a storage domain (san=...)")
        return self


def link_key(a: str, b: str) -> LinkKey:
    return (a, b) if a <= b else (b, a)


class Link(BaseModel):
    model_config = ConfigDict(frozen=True)

    a: str
    b: str
    capacity: float = Field(gt=0, description="bit/s")
    latency: float = Field(ge=0, description="one-way propagation, seconds")

    @model_validator(mode="after")
    def _no_self_loop(self) -> Self:
        if self.a == self.b:
            raise ValueError(f"link {self.a}-{self.b} connects a host to itself")
        return self

    @property
    def key(self) -> LinkKey:
        return link_key(self.a, self.b)

    @property
    def label(self) -> str:
        return "-".join(self.key)

    def other(self, host: str) -> str:
        return self.b if host == self.a else self.a


class Topology(BaseModel):
    hosts: list[Host] = Field(default_factory=list)
    links: list[Link] = Field(default_factory=list)
    _hosts: dict[str, Host] = PrivateAttr(default_factory=dict)
    _links: dict[LinkKey, Link] = PrivateAttr(default_factory=dict)
    _adjacency: dict[str, list[tuple[str, Link]]] = PrivateAttr(default_factory=dict)
    _routes: dict[tuple[str, str], Path] = PrivateAttr(default_factory=dict)

    @model_validator(mode="after")
    def _init_maps(self) -> Self:
        for host in self.hosts:
            if host.id in self._hosts:
                raise ValueError(f"Duplicate host {host.id}")
            self._hosts[host.id] = host
            self._adjacency[host.id] = []

        for link in self.links:
            for end in (link.a, link.b):
                if end not in self._hosts:
                    raise ValueError(f"link {link.label} references unknown host {end}")
            if link.key in self._links:
                raise ValueError(f"Duplicate link {link.label}")
            self._links[link.key] = link
            self._adjacency[link.a].append((link.b, link))
            self._adjacency[link.b].append((link.a, link))

        for neighbours in self._adjacency.values():
            neighbours.sort(key=lambda item: item[0])
        return self

    def __contains__(self, host_id: object) -> bool:
        return host_id in self._hosts

    def host(self, host_id: str) -> Host:
        try:
            return self._hosts[host_id]
        except KeyError:
            raise ScenarioError(f"unknown host {host_id}") from None

    def link(self, key: LinkKey) -> Link:
        return self._links[key]

    @property
    def subnets(self) -> dict[str, list[str]]:
        """
        The subnet partition of the hosts, subnet id -> sorted host ids.
        """
        partition: dict[str, list[str]] = defaultdict(list)
        for host in sorted(self.hosts, key=lambda h: h.id):
            partition[host.subnet_id].append(host.id)
        return dict(sorted(partition.items()))

    @property
    def route_cache(self) -> dict[tuple[str, str], Path]:
        return self._routes

    def neighbours(self, host_id: str) -> list[tuple[str, Link]]:
        return self._adjacency[host_id]

    def is_connected(self, host_ids: Iterable[str]) -> bool:
        wanted = sorted(set(host_ids))
        if not wanted:
            return True
        seen = {wanted[0]}
        stack = [wanted[0]]
        while stack:
            for neighbour, _ in self._adjacency[stack.pop()]:
                if neighbour not in seen:
                    seen.add(neighbour)
                    stack.append(neighbour)
        return all(host_id in seen for host_id in wanted)


def latency_key(seconds: float) -> int:
    """
    Latency in whole nanoseconds. Routes and surrogates compare latencies at this resolution, so that
    100 ms + 200 ms ties with 300 ms.
    """
    return round(seconds * 1e9)


def shortest_path(topo: Topology, a: str, b: str) -> Path:
    """
    Minimum-latency path from `a` to `b`, ties broken by the lexicographically smallest node-id sequence.

    Routes are static, so results are memoized on the topology.
    """
    topo.host(a)
    topo.host(b)
    if (cached := topo.route_cache.get((a, b))) is not None:
        return cached

    # Heap entries are (latency in ns, node sequence, links): equal latencies pop in node-sequence order.
    heap: list[tuple[int, tuple[str, ...], Path]] = [(0, (a,), ())]
    settled: set[str] = set()
    route: Path | None = None
    while heap:
        latency, nodes, links = heapq.heappop(heap)
        node = nodes[-1]
        if node in settled:
            continue
        settled.add(node)
        if node == b:
            route = links
            break
        for neighbour, link in topo.neighbours(node):
            if neighbour not in settled:
                heapq.heappush(heap, (latency + latency_key(link.latency), (*nodes, neighbour), (*links, link)))

    if route is None:
        raise ScenarioError(f"no route between {a} and {b}")
    topo.route_cache[(a, b)] = route
    return route


def path_latency(path: Path) -> float:
    return math.fsum(link.latency for link in path)


def path_nodes(path: Path, start: str) -> list[str]:
    nodes = [start]
    for link in path:
        nodes.append(link.other(nodes[-1]))
    return nodes


def bottleneck_capacity(path: Path) -> float:
    """
    Smallest capacity along the path, infinite for an empty path.
    """
    return min((link.capacity for link in path), default=math.inf)


def same_subnet(topo: Topology, a: str, b: str) -> bool:
    return topo.host(a).subnet_id == topo.host(b).subnet_id


def same_storage_domain(topo: Topology, a: str, b: str) -> bool:
    if a == b:
        return True
    domain = topo.host(a).storage_domain
    return domain is not None and domain == topo.host(b).storage_domain


class FlowOwner(Protocol):
    def on_flow_end(self, flow: Flow, now: float) -> None: ...


class Flow(BaseModel):
    """
    A fluid transfer along a fixed path. `demand=None` is elastic, `size_bits=None` is open-ended (it only ends when
    halted).
    """

    id: str
    src: str
    dst: str
    path: Path
    demand: float | None = Field(default=None, ge=0)
    size_bits: float | None = Field(default=None, ge=0)
    vm: str | None = None
    tag: str = "flow"
    allocated_rate: float = 0.0
    remaining_bits: float = math.inf
    delivered_bits: float = 0.0
    elapsed: float = 0.0
    started_at: float | None = None
    last_update: float = 0.0
    halted: bool = False
    _end_event: SimEvent | None = PrivateAttr(default=None)
    _owner: FlowOwner | None = PrivateAttr(default=None)

    def model_post_init(self, _: Any) -> None:
        if self.size_bits is not None:
            self.remaining_bits = self.size_bits

    @property
    def owner(self) -> FlowOwner | None:
        return self._owner

    @owner.setter
    def owner(self, value: FlowOwner | None) -> None:
        self._owner = value

    @property
    def link_usage(self) -> Counter[LinkKey]:
        return Counter(link.key for link in self.path)


def allocate_bandwidth(topo: Topology, flows: Iterable[Flow]) -> dict[str, float]:
    """
    Max-min fair rates by progressive filling: raise every unfrozen flow by the same amount until a link saturates
    or a bounded flow reaches its demand, freeze those flows, repeat.

    A flow crossing the same link twice (triangle routes) weighs twice on it. Flows with an empty path take no link
    capacity and get their demand, or nothing when elastic.
    """
    flows = list(flows)
    rates: dict[str, float] = {}
    usage: dict[str, Counter[LinkKey]] = {}
    unfrozen: list[Flow] = []
    residual: dict[LinkKey, float] = {}

    for flow in flows:
        rates[flow.id] = 0.0
        if not flow.path:
            rates[flow.id] = flow.demand or 0.0
            continue
        if flow.demand == 0:
            continue
        usage[flow.id] = flow.link_usage
        unfrozen.append(flow)
        for key in usage[flow.id]:
            residual.setdefault(key, topo.link(key).capacity)

    while unfrozen:
        weight: dict[LinkKey, float] = defaultdict(float)
        for flow in unfrozen:
            for key, count in usage[flow.id].items():
                weight[key] += count

        increment = min(residual[key] / w for key, w in weight.items())
        for flow in unfrozen:
            if flow.demand is not None:
                increment = min(increment, flow.demand - rates[flow.id])
        increment = max(increment, 0.0)

        for flow in unfrozen:
            rates[flow.id] += increment
            for key, count in usage[flow.id].items():
                residual[key] = max(residual[key] - count * increment, 0.0)

        saturated = {key for key in weight if residual[key] <= _SATURATION_EPS * topo.link(key).capacity}
        still_growing: list[Flow] = []
        for flow in unfrozen:
            if flow.demand is not None and rates[flow.id] >= flow.demand * (1 - _SATURATION_EPS):
                rates[flow.id] = flow.demand
            elif not saturated.intersection(usage[flow.id]):
                still_growing.append(flow)
        if len(still_growing) == len(unfrozen):  # pragma: no cover - progressive filling always freezes something
            raise RuntimeError("progressive filling made no progress")
        unfrozen = still_growing

    return rates


class DeliveryRecord(NamedTuple):
    start: float
    end: float
    flow: str
    src: str
    dst: str
    vm: str | None
    rate: float
    bits: float


class AllocationSnapshot(NamedTuple):
    at: float
    rates: dict[str, float]
    link_load: dict[LinkKey, float]


class FluidNetwork:
    """
    Piecewise-constant fluid network. Rates are recomputed exactly at flow-start and flow-end events; between events
    every flow moves at a constant rate.
    """

    def __init__(self, topology: Topology, sim: Simulator, trace: TraceLog) -> None:
        self.topology = topology
        self.sim = sim
        self.trace = trace
        self.active: dict[str, Flow] = {}
        self.delivery_log: list[DeliveryRecord] = []
        self.allocations: list[AllocationSnapshot] = []
        sim.on(EventKind.FLOW_START, self._on_flow_start)
        sim.on(EventKind.FLOW_END, self._on_flow_end)

    def launch(self, flow: Flow, owner: FlowOwner | None = None) -> None:
        """
        Queue a flow-start event for `flow` at the current clock.
        """
        flow.owner = owner
        self.sim.schedule(self.sim.clock, EventKind.FLOW_START, flow)

    def halt(self, flow: Flow) -> None:
        """
        Queue a flow-end event that stops `flow` at the current clock, whatever is left to send.
        """
        if flow.id not in self.active or flow.halted:
            return
        flow.halted = True
        self.sim.cancel(flow._end_event)  # pyright: ignore[reportPrivateUsage]
        end_event = self.sim.schedule(self.sim.clock, EventKind.FLOW_END, flow)
        flow._end_event = end_event  # pyright: ignore[reportPrivateUsage]

    def _on_flow_start(self, event: SimEvent) -> None:
        flow: Flow = event.payload
        now = event.at
        if flow.id in self.active:
            raise ValueError(f"flow {flow.id} is already active")
        self._advance(now)
        flow.started_at = now
        flow.last_update = now
        self.active[flow.id] = flow
        self.trace.emit(
            now,
            EventKind.FLOW_START,
            flow=flow.id,
            tag=flow.tag,
            src=flow.src,
            dst=flow.dst,
            size=flow.size_bits,
            demand=flow.demand,
            path=">".join(_path_labels(flow)),
        )
        self._reallocate(now)

    def _on_flow_end(self, event: SimEvent) -> None:
        flow: Flow = event.payload
        now = event.at
        if self.active.get(flow.id) is not flow:
            return

        if not flow.halted:
            # Natural completion: the last segment lasts exactly remaining/rate.
            dt = flow.remaining_bits / flow.allocated_rate if flow.remaining_bits > 0 else 0.0
            if flow.remaining_bits > 0:
                self._log_delivery(flow, flow.last_update, flow.last_update + dt, flow.remaining_bits)
            flow.elapsed += dt
            flow.delivered_bits += flow.remaining_bits
            flow.remaining_bits = 0.0
            flow.last_update = now

        self._advance(now)
        del self.active[flow.id]
        flow._end_event = None  # pyright: ignore[reportPrivateUsage]
        flow.allocated_rate = 0.0
        self.trace.emit(
            now,
            EventKind.FLOW_END,
            flow=flow.id,
            tag=flow.tag,
            elapsed=flow.elapsed,
            delivered=flow.delivered_bits,
            halted=flow.halted,
        )
        self._reallocate(now)
        if flow.owner is not None:
            flow.owner.on_flow_end(flow, now)

    def _advance(self, now: float) -> None:
        for flow in self.active.values():
            dt = now - flow.last_update
            if dt <= 0:
                continue
            bits = flow.allocated_rate * dt
            if flow.size_bits is not None:
                bits = min(bits, flow.remaining_bits)
                flow.remaining_bits -= bits
            if bits > 0:
                self._log_delivery(flow, flow.last_update, now, bits)
            flow.delivered_bits += bits
            flow.elapsed += dt
            flow.last_update = now

    def _log_delivery(self, flow: Flow, start: float, end: float, bits: float) -> None:
        self.delivery_log.append(
            DeliveryRecord(start, end, flow.id, flow.src, flow.dst, flow.vm, flow.allocated_rate, bits)
        )

    def _reallocate(self, now: float) -> None:
        rates = allocate_bandwidth(self.topology, self.active.values())
        link_load: dict[LinkKey, float] = defaultdict(float)

        for flow in self.active.values():
            rate = rates[flow.id]
            for key, count in flow.link_usage.items():
                link_load[key] += count * rate
            changed = rate != flow.allocated_rate
            flow.allocated_rate = rate
            if changed:
                self.trace.emit(now, "allocation", flow=flow.id, rate=rate, links=",".join(_path_labels(flow)))
            if flow.halted or flow.size_bits is None:
                continue
            if changed or flow._end_event is None:  # pyright: ignore[reportPrivateUsage]
                self._reschedule_end(flow, now)

        self.allocations.append(AllocationSnapshot(now, dict(rates), dict(link_load)))

    def _reschedule_end(self, flow: Flow, now: float) -> None:
        self.sim.cancel(flow._end_event)  # pyright: ignore[reportPrivateUsage]
        flow._end_event = None  # pyright: ignore[reportPrivateUsage]
        if flow.remaining_bits <= 0:
            flow._end_event = self.sim.schedule(now, EventKind.FLOW_END, flow)  # pyright: ignore[reportPrivateUsage]
        elif flow.allocated_rate > 0:
            at = now + flow.remaining_bits / flow.allocated_rate
            flow._end_event = self.sim.schedule(at, EventKind.FLOW_END, flow)  # pyright: ignore[reportPrivateUsage]
        else:
            logger.debug("flow %s is starved at t=%s", flow.id, now)


def _path_labels(flow: Flow) -> list[str]:
    return [link.label for link in flow.path]
