"""Simulated raw-data distribution, tape backup, purge policy and chunked processing."""

from .errors import FlowError
from .scenario import Scenario, load_scenario, parse_scenario
from .system import Facility

__all__ = ["Facility", "FlowError", "Scenario", "load_scenario", "parse_scenario"]
__version__ = "0.1.0"
