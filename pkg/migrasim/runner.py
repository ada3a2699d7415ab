"""
Run orchestration: wires the event loop, the fluid network, the migration engine and the service layer for one
scenario, and turns the run into the CSV and trace artifacts.
"""

from __future__ import annotations

import logging
from typing import NamedTuple, Self

from .config import SimulationConstants
from .errors import InfeasibleMigration, MigrasimError, ScenarioError
from .exporter import migrations_frame, requests_frame, sessions_frame, to_csv
from .migration import FeasibilityReport, MigrationEngine, MigrationOutcome, MigrationPlan, check_feasibility
from .mobility import AddressBinding
from .netmodel import FluidNetwork
from .scenario import Scenario
from .services import ServiceLayer
from .simcore import EventKind, SimEvent, Simulator, TraceLog

logger = logging.getLogger(__name__)


class PlanCheck(NamedTuple):
    plan: MigrationPlan
    report: FeasibilityReport
    line: int | None


class RunOutput(NamedTuple):
    migrations_csv: str
    sessions_csv: str
    requests_csv: str
    trace: str
    exit_code: int
    error: MigrasimError | None = None
    outcomes: tuple[MigrationOutcome, ...] = ()


def check_plans(scenario: Scenario, constants: SimulationConstants) -> list[PlanCheck]:
    """
    Feasibility report of every migrate directive, in the order they will fire.
    """
    topology = scenario.topology()
    specs = scenario.vm_specs()
    checks: list[PlanCheck] = []
    for plan, line in scenario.migration_plans(constants):
        try:
            report = check_feasibility(plan, topology, specs, constants)
        except ScenarioError as e:
            raise ScenarioError(e.message, e.line or line, e.column) from None
        checks.append(PlanCheck(plan, report, line))
    return checks


def validate_scenario(scenario: Scenario, constants: SimulationConstants) -> list[PlanCheck]:
    """
    Everything `run --validate-only` does: raises `InfeasibleMigration` on the first refused plan.
    """
    checks = check_plans(scenario, constants)
    for check in checks:
        if not check.report.feasible:
            raise InfeasibleMigration(check.plan, check.report, check.line)
    return checks


class Simulation:
    def __init__(self, scenario: Scenario, defaults: SimulationConstants | None = None, seed: int | None = None):
        self.scenario = scenario
        self.constants = scenario.constants(defaults)
        self.seed = scenario.seed if seed is None else seed
        self.sim = Simulator(seed=self.seed, max_events=self.constants.max_events)
        self.trace = TraceLog()
        self.topology = scenario.topology()
        self.network = FluidNetwork(self.topology, self.sim, self.trace)
        self.bindings = {
            vm.id: AddressBinding(vm=vm.id, home_host=vm.host, current_host=vm.host) for vm in scenario.vms
        }
        self.sessions = {session.id: session.model_copy(deep=True) for session in scenario.sessions}
        self.engine = MigrationEngine(
            self.topology, scenario.vm_specs(), self.bindings, self.network, self.sim, self.trace, self.constants
        )
        self.services = ServiceLayer(
            self.topology,
            self.sessions,
            scenario.surrogate_sets(),
            self.bindings,
            self.network,
            self.sim,
            self.trace,
            self.constants.control_hop,
        )
        self.engine.listeners.append(self.services)
        self.sim.on(EventKind.SCENARIO_END, self._on_scenario_end)
        self.started = False
        self.finished = False

    def run(self) -> Self:
        checks = validate_scenario(self.scenario, self.constants)
        self.started = True
        self.services.start_sessions()
        self.services.schedule_requests(self.scenario.request_arrivals())
        for check in checks:
            if check.plan.start_at > self.scenario.duration:
                logger.warning(
                    "migration of %s at t=%.6gs is past the scenario end", check.plan.vm, check.plan.start_at
                )
                continue
            self.engine.submit(check.plan)
        self.sim.schedule(self.scenario.duration, EventKind.SCENARIO_END)
        self.sim.run_until(self.scenario.duration)
        return self

    def _on_scenario_end(self, event: SimEvent) -> None:
        self.services.finish(event.at)
        for process in self.engine.unfinished():
            logger.warning(
                "migration of %s (started at t=%.6gs) still in phase %s at scenario end, no row written",
                process.plan.vm,
                process.outcome.t_start,
                process.phase,
            )
        self.trace.emit(
            event.at,
            EventKind.SCENARIO_END,
            migrations=len(self.engine.outcomes),
            requests=len(self.services.records),
            events=self.sim.dispatched,
        )
        self.finished = True

    def output(self, error: MigrasimError | None = None) -> RunOutput:
        name = self.scenario.name
        return RunOutput(
            migrations_csv=to_csv(migrations_frame(name, self.engine.outcomes)),
            sessions_csv=to_csv(sessions_frame(name, self.sessions.values() if self.started else ())),
            requests_csv=to_csv(requests_frame(name, self.services.records)),
            trace=self.trace.render(),
            exit_code=0 if error is None else error.exit_code,
            error=error,
            outcomes=tuple(self.engine.outcomes),
        )


def run_scenario(scenario: Scenario, defaults: SimulationConstants | None = None, seed: int | None = None) -> RunOutput:
    """
    Run `scenario` to its duration. Errors are reported through the exit code; whatever completed before them is
    still exported.
    """
    simulation = Simulation(scenario, defaults, seed)
    try:
        simulation.run()
    except MigrasimError as e:
        logger.debug("run of %s stopped: %s", scenario.name, e)
        return simulation.output(e)
    return simulation.output()
