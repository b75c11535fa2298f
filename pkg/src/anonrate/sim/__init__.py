from anonrate.sim.engine import RunTranscript, Simulation, run
from anonrate.sim.metrics import AnonymityReport, check_assertions, linkage_report, metrics
from anonrate.sim.scenario import Scenario, ScenarioError, bundled, load_scenario, scenario_from_dict

__all__ = [
    "AnonymityReport",
    "RunTranscript",
    "Scenario",
    "ScenarioError",
    "Simulation",
    "bundled",
    "check_assertions",
    "linkage_report",
    "load_scenario",
    "metrics",
    "run",
    "scenario_from_dict",
]
