"""
Hypervisor-controlled traffic redirection.

Cross-subnet moves use a Mobile-IP style tunnel between the home agent (the hypervisor of the VM's home network)
and the foreign agent (the destination hypervisor), set up as soon as the migration starts. Same-subnet moves only
need a gratuitous ARP announcement once the VM resumes.
"""

from __future__ import annotations

import logging
from enum import StrEnum
from typing import TYPE_CHECKING, NamedTuple

from pydantic import BaseModel, Field

from .netmodel import Path, path_latency, shortest_path

if TYPE_CHECKING:
    from .config import SimulationConstants
    from .migration import MigrationPlan
    from .netmodel import Topology

logger = logging.getLogger(__name__)


class MobilityMode(StrEnum):
    ARP = "arp"
    MIP = "mip"


class TunnelStatus(StrEnum):
    PENDING = "pending"
    UP = "up"
    TORN_DOWN = "torn-down"


class TunnelState(BaseModel):
    vm: str
    ha: str
    fa: str
    established_at: float = Field(ge=0)
    setup_cost: float = Field(ge=0)
    status: TunnelStatus = TunnelStatus.PENDING

    @property
    def ready_at(self) -> float:
        return self.established_at + self.setup_cost

    def refresh(self, clock: float) -> TunnelStatus:
        if self.status is TunnelStatus.PENDING and clock >= self.ready_at:
            self.status = TunnelStatus.UP
        return self.status

    def tear_down(self) -> None:
        self.status = TunnelStatus.TORN_DOWN


class ArpPlan(BaseModel):
    vm: str
    dst: str
    announced_at: float = Field(ge=0)
    delay: float = Field(ge=0)


class AddressBinding(BaseModel):
    vm: str
    home_host: str
    current_host: str
    epoch: int = 0
    mode: MobilityMode | None = None
    tunnel: TunnelState | None = None


def one_way_latency(topo: Topology, a: str, b: str) -> float:
    return path_latency(shortest_path(topo, a, b))


def begin_mobility(
    plan: MigrationPlan,
    topo: Topology,
    clock: float,
    constants: SimulationConstants,
    binding: AddressBinding | None = None,
) -> TunnelState | ArpPlan:
    """
    Prepare the redirection at migration start. A tunnel is launched right away and its handshake overlaps the
    transfer phases; an ARP plan only records the announcement delay.
    """
    if plan.mobility is MobilityMode.ARP:
        return ArpPlan(vm=plan.vm, dst=plan.dst, announced_at=clock, delay=constants.arp_delay)

    ha = plan.home_agent or (binding.home_host if binding is not None else plan.src)
    rtt = 2 * one_way_latency(topo, ha, plan.dst)
    tunnel = TunnelState(
        vm=plan.vm,
        ha=ha,
        fa=plan.dst,
        established_at=clock,
        setup_cost=2 * rtt + constants.crypto_overhead,
    )
    logger.debug("tunnel %s -> %s for %s will be up at t=%.6gs", ha, plan.dst, plan.vm, tunnel.ready_at)
    return tunnel


def complete_switchover(
    binding: AddressBinding, redirect: TunnelState | ArpPlan, topo: Topology, clock: float
) -> float:
    """
    Called when the stop-and-copy transfer is over. Rebinds the VM to its new host and returns how long traffic
    redirection still takes (`t_redirect`).
    """
    if isinstance(redirect, ArpPlan):
        t_redirect = redirect.delay
        if binding.tunnel is not None:
            binding.tunnel.tear_down()
            binding.tunnel = None
        binding.current_host = redirect.dst
        binding.mode = MobilityMode.ARP
    else:
        binding_update = one_way_latency(topo, redirect.ha, redirect.fa)
        if redirect.refresh(clock) is TunnelStatus.UP:
            t_redirect = binding_update
        else:
            t_redirect = (redirect.ready_at - clock) + binding_update
        if binding.tunnel is not None and binding.tunnel is not redirect:
            binding.tunnel.tear_down()
        binding.tunnel = redirect
        binding.home_host = redirect.ha
        binding.current_host = redirect.fa
        binding.mode = MobilityMode.MIP

    binding.epoch += 1
    return t_redirect


class RedirectRoute(NamedTuple):
    segments: tuple[Path, ...]

    @property
    def path(self) -> Path:
        return tuple(link for segment in self.segments for link in segment)

    @property
    def latency(self) -> float:
        return path_latency(self.path)


def post_migration_path(topo: Topology, client: str, binding: AddressBinding) -> RedirectRoute:
    """
    Route from `client` to a migrated VM: triangle client -> HA -> FA -> VM host through the tunnel, or the direct
    shortest path after an ARP move.
    """
    if binding.epoch <= 0:
        raise ValueError(f"{binding.vm} never migrated")

    if binding.mode is MobilityMode.MIP and binding.tunnel is not None:
        tunnel = binding.tunnel
        return RedirectRoute(
            (
                shortest_path(topo, client, tunnel.ha),
                shortest_path(topo, tunnel.ha, tunnel.fa),
                shortest_path(topo, tunnel.fa, binding.current_host),
            )
        )
    return RedirectRoute((shortest_path(topo, client, binding.current_host),))


def route_to_vm(topo: Topology, client: str, binding: AddressBinding) -> RedirectRoute:
    """
    Current data-plane route to the VM, whether it ever moved or not.
    """
    if binding.epoch == 0:
        return RedirectRoute((shortest_path(topo, client, binding.current_host),))
    return post_migration_path(topo, client, binding)

