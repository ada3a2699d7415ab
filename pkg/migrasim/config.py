from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field

from .utils import MiB


class SimulationConstants(BaseModel):
    """
    Tunable model constants. A scenario `set` directive overrides the project config file, which overrides these
    defaults.
    """

    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    arp_delay: float = Field(default=0.010, ge=0, description="gratuitous ARP convergence delay, seconds")
    crypto_overhead: float = Field(default=0.050, ge=0, description="secure tunnel handshake cost, seconds")
    link_speed_threshold: float = Field(default=1e9, gt=0, description="context-transfer warning threshold, bit/s")
    stop_threshold: float = Field(default=4 * MiB, gt=0, description="pre-copy stop threshold, bytes")
    max_rounds: int = Field(default=30, ge=1)
    cpu_state: float = Field(default=8 * MiB, ge=0, description="cpu_state_bytes when a vm does not declare it")
    max_events: int = Field(default=10**7, ge=1)
    control_hop: float | None = Field(
        default=None, ge=0, description="fixed controller round trip; derived from the controller host when unset"
    )


class MigrasimConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    out_dir: str | None = Field(default=None)
    constants: SimulationConstants = Field(default_factory=SimulationConstants)
