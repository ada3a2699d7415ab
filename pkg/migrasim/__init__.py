from .config import SimulationConstants as SimulationConstants
from .migration import (
    MigrationPlan as MigrationPlan,
    check_feasibility as check_feasibility,
    execute_migration as execute_migration,
    plan_precopy as plan_precopy,
)
from .runner import run_scenario as run_scenario
from .scenario import parse_scenario as parse_scenario, render_scenario as render_scenario
