"""edgecache: service caching and resource allocation for a multi-location edge server."""

from edgecache.scenario import Scenario, ScenarioConfig, sample_scenario

__all__ = ["Scenario", "ScenarioConfig", "sample_scenario"]
__version__ = "0.1.0"
