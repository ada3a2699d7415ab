"""
Scenario files: a line-oriented grammar, `#` comments, whitespace separated `key=value` pairs.

    host <id> subnet=<id> [san=<id>] [role=router|client|controller]
    link <a> <b> bw=<N><Kbps|Mbps|Gbps> lat=<N><ms|s>
    vm <id> host=<h> mem=<N><MiB|GiB> [disk=...] [context=...] [cpu=...] dirty=<N><MiB/s|GiB/s>
    session <id> client=<h> vm=<v> rate=<...>|elastic timeout=<N>s
    content <id> origin=<vm> surrogates=<vm,vm,...>
    request client=<h> content=<id> at=<N>s [every=<N>s until=<N>s]
    migrate <vm> to=<h> at=<N>s mode=shared|full mobility=arp|mip [threshold=...] [max_rounds=N] [ha=<h>]
    set arp_delay=<N>ms | crypto_overhead=<N>ms | link_speed_threshold=<...> | ...
    run duration=<N>s seed=<N>
"""

from __future__ import annotations

import logging
import re
from collections.abc import Callable
from typing import Any, NamedTuple

from pydantic import BaseModel, Field, ValidationError

from .config import SimulationConstants
from .errors import ScenarioError
from .migration import MigrationMode, MigrationPlan, VmSpec
from .mobility import MobilityMode
from .netmodel import Host, HostRole, Link, Topology, link_key
from .services import RequestSpec, Session, SurrogateSet
from .utils import (
    BANDWIDTH_UNITS,
    BYTE_RATE_UNITS,
    SIZE_UNITS,
    TIME_UNITS,
    format_exact,
    parse_quantity,
)

logger = logging.getLogger(__name__)

_IDENT_RE = re.compile(r"[A-Za-z0-9_.:\-]+")
_TOKEN_RE = re.compile(r"\S+")

ROLE_ALIASES: dict[str, HostRole] = {
    "hypervisor": HostRole.HYPERVISOR,
    "hypervisor-host": HostRole.HYPERVISOR,
    "router": HostRole.ROUTER,
    "client": HostRole.CLIENT,
    "client-attach": HostRole.CLIENT,
    "controller": HostRole.CONTROLLER,
}
MODE_ALIASES: dict[str, MigrationMode] = {
    "shared": MigrationMode.SHARED_STORAGE,
    "shared-storage": MigrationMode.SHARED_STORAGE,
    "full": MigrationMode.CONTEXT_TRANSFER,
    "context-transfer": MigrationMode.CONTEXT_TRANSFER,
}
MOBILITY_ALIASES: dict[str, MobilityMode] = {"arp": MobilityMode.ARP, "mip": MobilityMode.MIP}


# Directive records (what the file says, before cross-references are resolved)


class RequestDirective(BaseModel):
    client: str
    content: str
    at: float = Field(ge=0)
    every: float | None = Field(default=None, gt=0)
    until: float | None = Field(default=None, ge=0)

    def arrivals(self, horizon: float) -> list[float]:
        if self.every is None:
            return [self.at]
        until = min(self.until if self.until is not None else horizon, horizon)
        times: list[float] = []
        k = 0
        while (t := self.at + k * self.every) <= until:
            times.append(t)
            k += 1
        return times


class MigrateDirective(BaseModel):
    vm: str
    to: str
    at: float = Field(ge=0)
    mode: MigrationMode
    mobility: MobilityMode
    threshold: float | None = Field(default=None, gt=0)
    max_rounds: int | None = Field(default=None, ge=1)
    ha: str | None = None


class Scenario(BaseModel):
    name: str = "scenario"
    hosts: list[Host] = Field(default_factory=list)
    links: list[Link] = Field(default_factory=list)
    vms: list[VmSpec] = Field(default_factory=list)
    sessions: list[Session] = Field(default_factory=list)
    contents: list[SurrogateSet] = Field(default_factory=list)
    requests: list[RequestDirective] = Field(default_factory=list)
    migrations: list[MigrateDirective] = Field(default_factory=list)
    overrides: dict[str, float] = Field(default_factory=dict)
    duration: float = Field(gt=0)
    seed: int = 0
    lines: dict[str, int] = Field(default_factory=dict, exclude=True)

    def constants(self, defaults: SimulationConstants | None = None) -> SimulationConstants:
        """
        `defaults` (the project config, or the built-in values) with this scenario's `set` overrides on top.
        """
        base = (defaults or SimulationConstants()).model_dump()
        return SimulationConstants.model_validate(base | self.overrides)

    def line_of(self, key: str) -> int | None:
        return self.lines.get(key)

    def topology(self) -> Topology:
        return Topology(hosts=self.hosts, links=self.links)

    def vm_specs(self) -> dict[str, VmSpec]:
        return {vm.id: vm for vm in self.vms}

    def surrogate_sets(self) -> dict[str, SurrogateSet]:
        return {content.content: content for content in self.contents}

    def request_arrivals(self) -> list[RequestSpec]:
        arrivals = [
            RequestSpec(client=request.client, content=request.content, at=at)
            for request in self.requests
            for at in request.arrivals(self.duration)
        ]
        return sorted(arrivals, key=lambda request: request.at)

    def migration_plans(self, constants: SimulationConstants | None = None) -> list[tuple[MigrationPlan, int | None]]:
        """
        Resolve the source of every migrate directive by replaying them in time order (declaration order on ties).
        """
        constants = constants or self.constants()
        location = {vm.id: vm.host for vm in self.vms}
        ordered = sorted(enumerate(self.migrations), key=lambda item: (item[1].at, item[0]))
        plans: list[tuple[MigrationPlan, int | None]] = []
        for index, directive in ordered:
            line = self.line_of(f"migrate:{index}")
            try:
                plan = MigrationPlan(
                    vm=directive.vm,
                    src=location[directive.vm],
                    dst=directive.to,
                    mode=directive.mode,
                    mobility=directive.mobility,
                    start_at=directive.at,
                    stop_threshold_bytes=directive.threshold or constants.stop_threshold,
                    max_rounds=directive.max_rounds or constants.max_rounds,
                    home_agent=directive.ha,
                )
            except ValidationError as e:
                raise ScenarioError(_first_error(e), line) from None
            location[directive.vm] = directive.to
            plans.append((plan, line))
        return plans


# Value parsers


type ValueParser = Callable[[str], Any]


def _ident(text: str) -> str:
    if not _IDENT_RE.fullmatch(text):
        raise ValueError(f"invalid identifier {text!r}")
    return text


def _ident_list(text: str) -> list[str]:
    return [_ident(item) for item in text.split(",")]


def _quantity(units: dict[str, float]) -> ValueParser:
    return lambda text: parse_quantity(text, units)


def _integer(text: str) -> int:
    if not re.fullmatch(r"\d+", text):
        raise ValueError(f"expected a non-negative integer, got {text!r}")
    return int(text)


def _choice[T](aliases: dict[str, T]) -> Callable[[str], T]:
    def parse(text: str) -> T:
        try:
            return aliases[text]
        except KeyError:
            raise ValueError(f"expected one of {'|'.join(aliases)}, got {text!r}") from None

    return parse


def _rate(text: str) -> float | None:
    if text == "elastic":
        return None
    return parse_quantity(text, BANDWIDTH_UNITS)


_bandwidth = _quantity(BANDWIDTH_UNITS)
_time = _quantity(TIME_UNITS)
_size = _quantity(SIZE_UNITS)
_byte_rate = _quantity(BYTE_RATE_UNITS)


class KeySpec(NamedTuple):
    parse: ValueParser
    required: bool = False


class DirectiveSpec(NamedTuple):
    positional: tuple[str, ...]
    keys: dict[str, KeySpec]


SET_KEYS: dict[str, KeySpec] = {
    "arp_delay": KeySpec(_time),
    "crypto_overhead": KeySpec(_time),
    "link_speed_threshold": KeySpec(_bandwidth),
    "stop_threshold": KeySpec(_size),
    "max_rounds": KeySpec(_integer),
    "cpu_state": KeySpec(_size),
    "max_events": KeySpec(_integer),
    "control_hop": KeySpec(_time),
}

DIRECTIVES: dict[str, DirectiveSpec] = {
    "host": DirectiveSpec(
        ("id",),
        {"subnet": KeySpec(_ident, True), "san": KeySpec(_ident), "role": KeySpec(_choice(ROLE_ALIASES))},
    ),
    "link": DirectiveSpec(("a", "b"), {"bw": KeySpec(_bandwidth, True), "lat": KeySpec(_time, True)}),
    "vm": DirectiveSpec(
        ("id",),
        {
            "host": KeySpec(_ident, True),
            "mem": KeySpec(_size, True),
            "disk": KeySpec(_size),
            "context": KeySpec(_size),
            "cpu": KeySpec(_size),
            "dirty": KeySpec(_byte_rate, True),
        },
    ),
    "session": DirectiveSpec(
        ("id",),
        {
            "client": KeySpec(_ident, True),
            "vm": KeySpec(_ident, True),
            "rate": KeySpec(_rate, True),
            "timeout": KeySpec(_time, True),
        },
    ),
    "content": DirectiveSpec(("id",), {"origin": KeySpec(_ident, True), "surrogates": KeySpec(_ident_list, True)}),
    "request": DirectiveSpec(
        (),
        {
            "client": KeySpec(_ident, True),
            "content": KeySpec(_ident, True),
            "at": KeySpec(_time, True),
            "every": KeySpec(_time),
            "until": KeySpec(_time),
        },
    ),
    "migrate": DirectiveSpec(
        ("vm",),
        {
            "to": KeySpec(_ident, True),
            "at": KeySpec(_time, True),
            "mode": KeySpec(_choice(MODE_ALIASES), True),
            "mobility": KeySpec(_choice(MOBILITY_ALIASES), True),
            "threshold": KeySpec(_size),
            "max_rounds": KeySpec(_integer),
            "ha": KeySpec(_ident),
        },
    ),
    "set": DirectiveSpec((), SET_KEYS),
    "run": DirectiveSpec((), {"duration": KeySpec(_time, True), "seed": KeySpec(_integer)}),
}


class Directive(NamedTuple):
    keyword: str
    args: dict[str, str]
    values: dict[str, Any]
    line: int


def _first_error(error: ValidationError) -> str:
    first = error.errors()[0]
    where = ".".join(str(part) for part in first["loc"])
    return f"{where}: {first['msg']}" if where else first["msg"]


def tokenize(line: str) -> list[tuple[str, int]]:
    """
    Split a line into `(token, column)` pairs, columns 1-based, comments stripped.
    """
    code = line.split("#", 1)[0]
    return [(match.group(), match.start() + 1) for match in _TOKEN_RE.finditer(code)]


def parse_directive(line: str, lineno: int) -> Directive | None:
    tokens = tokenize(line)
    if not tokens:
        return None
    (keyword, column), *rest = tokens
    if (spec := DIRECTIVES.get(keyword)) is None:
        raise ScenarioError(f"unknown directive {keyword!r}", lineno, column)

    args: dict[str, str] = {}
    values: dict[str, Any] = {}
    positional = list(spec.positional)
    for token, column in rest:
        if "=" not in token:
            if not positional:
                raise ScenarioError(f"unexpected argument {token!r} for {keyword}", lineno, column)
            name = positional.pop(0)
            try:
                args[name] = _ident(token)
            except ValueError as e:
                raise ScenarioError(str(e), lineno, column) from None
            continue

        key, _, raw = token.partition("=")
        if key not in spec.keys:
            raise ScenarioError(f"unknown key {key!r} for {keyword}", lineno, column)
        if key in values:
            raise ScenarioError(f"duplicate key {key!r}", lineno, column)
        try:
            values[key] = spec.keys[key].parse(raw)
        except ValueError as e:
            raise ScenarioError(f"{key}: {e}", lineno, column + len(key) + 1) from None

    if positional:
        raise ScenarioError(f"{keyword} is missing <{positional[0]}>", lineno, len(line.rstrip()) + 1)
    for key, key_spec in spec.keys.items():
        if key_spec.required and key not in values:
            raise ScenarioError(f"{keyword} is missing {key}=", lineno)
    return Directive(keyword, args, values, lineno)


class _ScenarioBuilder:
    def __init__(self, name: str, defaults: SimulationConstants) -> None:
        self.name = name
        self.defaults = defaults
        self.data: dict[str, list[Any]] = {
            "hosts": [],
            "links": [],
            "vms": [],
            "sessions": [],
            "contents": [],
            "requests": [],
            "migrations": [],
        }
        self.overrides: dict[str, float] = {}
        self.run: Directive | None = None
        self.lines: dict[str, int] = {}
        self.vm_cpu: dict[str, float | None] = {}

    def claim(self, key: str, line: int, what: str) -> None:
        if key in self.lines:
            raise ScenarioError(f"duplicate {what} (first declared on line {self.lines[key]})", line)
        self.lines[key] = line

    def add(self, directive: Directive) -> None:
        args, values, line = directive.args, directive.values, directive.line
        try:
            match directive.keyword:
                case "host":
                    self.claim(f"host:{args['id']}", line, f"host {args['id']}")
                    self.data["hosts"].append(
                        Host(
                            id=args["id"],
                            subnet_id=values["subnet"],
                            storage_domain=values.get("san"),
                            role=values.get("role", HostRole.HYPERVISOR),
                        )
                    )
                case "link":
                    a, b = link_key(args["a"], args["b"])
                    self.claim(f"link:{a}-{b}", line, f"link {a}-{b}")
                    self.data["links"].append(
                        Link(a=args["a"], b=args["b"], capacity=values["bw"], latency=values["lat"])
                    )
                case "vm":
                    self.claim(f"vm:{args['id']}", line, f"vm {args['id']}")
                    self.vm_cpu[args["id"]] = values.get("cpu")
                    self.data["vms"].append(
                        VmSpec(
                            id=args["id"],
                            host=values["host"],
                            mem_bytes=values["mem"],
                            disk_bytes=values.get("disk", 0.0),
                            context_bytes=values.get("context", 0.0),
                            dirty_rate=values["dirty"],
                        )
                    )
                case "session":
                    self.claim(f"session:{args['id']}", line, f"session {args['id']}")
                    self.data["sessions"].append(
                        Session(
                            id=args["id"],
                            client=values["client"],
                            vm=values["vm"],
                            rate=values["rate"],
                            timeout=values["timeout"],
                        )
                    )
                case "content":
                    self.claim(f"content:{args['id']}", line, f"content {args['id']}")
                    self.data["contents"].append(
                        SurrogateSet(content=args["id"], origin=values["origin"], surrogates=values["surrogates"])
                    )
                case "request":
                    self.lines[f"request:{len(self.data['requests'])}"] = line
                    self.data["requests"].append(RequestDirective(**values))
                case "migrate":
                    self.lines[f"migrate:{len(self.data['migrations'])}"] = line
                    self.data["migrations"].append(MigrateDirective(vm=args["vm"], **values))
                case "set":
                    for key, value in values.items():
                        self.overrides[key] = value
                        self.lines[f"set:{key}"] = line
                case "run":
                    if self.run is not None:
                        raise ScenarioError(f"duplicate run directive (first on line {self.run.line})", line)
                    self.run = directive
        except ValidationError as e:
            raise ScenarioError(_first_error(e), line) from None

    def build(self, end_line: int) -> Scenario:
        """
        `end_line` is the line just past the last one, where whole-file errors are reported.
        """
        if self.run is None:
            raise ScenarioError("missing `run duration=...` directive", end_line)
        if not self.data["hosts"]:
            raise ScenarioError("a scenario needs at least one host", end_line)

        try:
            constants = SimulationConstants.model_validate(self.defaults.model_dump() | self.overrides)
        except ValidationError as e:
            first = str(e.errors()[0]["loc"][0])
            raise ScenarioError(_first_error(e), self.lines.get(f"set:{first}")) from None

        for vm in self.data["vms"]:
            cpu = self.vm_cpu[vm.id]
            vm.cpu_state_bytes = constants.cpu_state if cpu is None else cpu

        try:
            scenario = Scenario(
                name=self.name,
                **self.data,
                overrides=self.overrides,
                duration=self.run.values["duration"],
                seed=self.run.values.get("seed", 0),
                lines=self.lines,
            )
        except ValidationError as e:
            raise ScenarioError(_first_error(e), self.run.line) from None
        validate_references(scenario, constants)
        return scenario


def parse_scenario(text: str, name: str = "scenario", defaults: SimulationConstants | None = None) -> Scenario:
    """
    Parse and validate a scenario. Every error carries the offending line (and column when it is known).

    `defaults` fills in what the scenario does not `set`, e.g. the cpu state size of VMs declared without `cpu=`.
    """
    builder = _ScenarioBuilder(name, defaults or SimulationConstants())
    lines = text.removeprefix("\ufeff").splitlines()
    for lineno, line in enumerate(lines, 1):
        if (directive := parse_directive(line, lineno)) is not None:
            builder.add(directive)
    return builder.build(len(lines) + 1)


def validate_references(scenario: Scenario, constants: SimulationConstants | None = None) -> None:
    """
    Every cross-reference must resolve, and every host an entity refers to must be reachable from the others.
    """
    hosts = {host.id: host for host in scenario.hosts}
    vms = scenario.vm_specs()
    contents = scenario.surrogate_sets()
    referenced: list[tuple[str, int | None]] = []

    def need_host(host_id: str, key: str, what: str) -> None:
        if host_id not in hosts:
            raise ScenarioError(f"{what} references unknown host {host_id}", scenario.line_of(key))
        referenced.append((host_id, scenario.line_of(key)))

    def need_vm(vm_id: str, key: str, what: str) -> None:
        if vm_id not in vms:
            raise ScenarioError(f"{what} references unknown vm {vm_id}", scenario.line_of(key))

    for link in scenario.links:
        a, b = link_key(link.a, link.b)
        for end in (link.a, link.b):
            if end not in hosts:
                raise ScenarioError(f"link {a}-{b} references unknown host {end}", scenario.line_of(f"link:{a}-{b}"))

    for vm in scenario.vms:
        need_host(vm.host, f"vm:{vm.id}", f"vm {vm.id}")
        if hosts[vm.host].role is not HostRole.HYPERVISOR:
            raise ScenarioError(
                f"vm {vm.id} must run on a hypervisor host, {vm.host} is a {hosts[vm.host].role}",
                scenario.line_of(f"vm:{vm.id}"),
            )

    for session in scenario.sessions:
        need_host(session.client, f"session:{session.id}", f"session {session.id}")
        need_vm(session.vm, f"session:{session.id}", f"session {session.id}")

    for content in scenario.contents:
        key = f"content:{content.content}"
        need_vm(content.origin, key, f"content {content.content}")
        for surrogate in content.surrogates:
            need_vm(surrogate, key, f"content {content.content}")

    for index, request in enumerate(scenario.requests):
        key = f"request:{index}"
        need_host(request.client, key, "request")
        if request.content not in contents:
            raise ScenarioError(f"request references unknown content {request.content}", scenario.line_of(key))

    for index, migration in enumerate(scenario.migrations):
        key = f"migrate:{index}"
        need_vm(migration.vm, key, "migrate")
        need_host(migration.to, key, f"migrate {migration.vm}")
        if migration.ha is not None:
            need_host(migration.ha, key, f"migrate {migration.vm}")

    for host in scenario.hosts:
        if host.role is HostRole.CONTROLLER:
            referenced.append((host.id, scenario.line_of(f"host:{host.id}")))

    topology = scenario.topology()
    for host_id, line in referenced:
        if not topology.is_connected((referenced[0][0], host_id)):
            raise ScenarioError(f"{host_id} is not reachable from {referenced[0][0]}", line)

    # Replaying the migrations catches moves to the host a VM already sits on.
    scenario.migration_plans(constants)


def render_scenario(scenario: Scenario) -> str:
    """
    Canonical text of a scenario: declaration order kept, base units, exact numbers.
    """
    out: list[str] = []
    for host in scenario.hosts:
        parts = [f"host {host.id} subnet={host.subnet_id}"]
        if host.storage_domain is not None:
            parts.append(f"san={host.storage_domain}")
        if host.role is not HostRole.HYPERVISOR:
            parts.append(f"role={host.role}")
        out.append(" ".join(parts))
    out.extend(
        f"link {link.a} {link.b} bw={format_exact(link.capacity)}bps lat={format_exact(link.latency)}s"
        for link in scenario.links
    )
    out.extend(
        f"vm {vm.id} host={vm.host} mem={format_exact(vm.mem_bytes)}B disk={format_exact(vm.disk_bytes)}B "
        f"context={format_exact(vm.context_bytes)}B cpu={format_exact(vm.cpu_state_bytes)}B "
        f"dirty={format_exact(vm.dirty_rate)}B/s"
        for vm in scenario.vms
    )
    for session in scenario.sessions:
        rate = "elastic" if session.rate is None else f"{format_exact(session.rate)}bps"
        out.append(
            f"session {session.id} client={session.client} vm={session.vm} rate={rate} "
            f"timeout={format_exact(session.timeout)}s"
        )
    out.extend(
        f"content {content.content} origin={content.origin} surrogates={','.join(content.surrogates)}"
        for content in scenario.contents
    )
    for request in scenario.requests:
        line = f"request client={request.client} content={request.content} at={format_exact(request.at)}s"
        if request.every is not None:
            line += f" every={format_exact(request.every)}s"
        if request.until is not None:
            line += f" until={format_exact(request.until)}s"
        out.append(line)
    for migration in scenario.migrations:
        mode = "shared" if migration.mode is MigrationMode.SHARED_STORAGE else "full"
        line = (
            f"migrate {migration.vm} to={migration.to} at={format_exact(migration.at)}s mode={mode} "
            f"mobility={migration.mobility}"
        )
        if migration.threshold is not None:
            line += f" threshold={format_exact(migration.threshold)}B"
        if migration.max_rounds is not None:
            line += f" max_rounds={migration.max_rounds}"
        if migration.ha is not None:
            line += f" ha={migration.ha}"
        out.append(line)
    if scenario.overrides:
        settings = (f"{key}={_render_constant(key, value)}" for key, value in scenario.overrides.items())
        out.append("set " + " ".join(settings))
    out.append(f"run duration={format_exact(scenario.duration)}s seed={scenario.seed}")
    return "".join(f"{line}\n" for line in out)


def _render_constant(key: str, value: float) -> str:
    match key:
        case "max_rounds" | "max_events":
            return str(int(value))
        case "link_speed_threshold":
            return f"{format_exact(value)}bps"
        case "stop_threshold" | "cpu_state":
            return f"{format_exact(value)}B"
        case _:
            return f"{format_exact(value)}s"
