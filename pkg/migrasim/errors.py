from __future__ import annotations

from collections.abc import Sequence
from pathlib import Path
from typing import TYPE_CHECKING, ClassVar

if TYPE_CHECKING:
    from .migration import FeasibilityReport, MigrationPlan


class MigrasimError(Exception):
    """
    Base class for every error the CLI turns into an exit code.
    """

    exit_code: ClassVar[int] = 1


class MissingConfigFile(MigrasimError):
    def __init__(self, paths: Sequence[Path]):
        self.paths = paths
        super().__init__(f"Missing config file: {' or '.join(map(str, paths))}")


class ScenarioError(MigrasimError):
    """
    Anything wrong with a scenario: syntax, units, duplicates, dangling references, unreachable hosts.
    """

    exit_code = 2

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.message = message
        self.line = line
        self.column = column
        super().__init__(str(self))

    def __str__(self) -> str:
        if self.line is None:
            return self.message
        if self.column is None:
            return f"line {self.line}: {self.message}"
        return f"line {self.line}, column {self.column}: {self.message}"


class InfeasibleMigration(MigrasimError):
    exit_code = 3

    def __init__(self, plan: MigrationPlan, report: FeasibilityReport, line: int | None = None):
        self.plan = plan
        self.report = report
        self.line = line
        reasons = "; ".join(report.reasons) or "infeasible"
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}migration of {plan.vm} from {plan.src} to {plan.dst} refused ({reasons})")


class EventBudgetExceeded(MigrasimError):
    exit_code = 4

    def __init__(self, budget: int, at: float):
        self.budget = budget
        self.at = at
        super().__init__(f"event budget of {budget} dispatches exceeded at t={at:.9g}s")


class SchedulingError(MigrasimError):
    """
    An event was scheduled before the current clock. Always a model bug.
    """

    def __init__(self, at: float, now: float):
        self.at = at
        self.now = now
        super().__init__(f"cannot schedule an event at t={at!r} before the clock (t={now!r})")


class MissingResults(MigrasimError):
    def __init__(self, path: Path):
        self.path = path
        super().__init__(f"{path} not found, run a scenario first (migrasim run <file> --out-dir ...)")
