"""Per-vehicle traffic simulation on a traffic atlas."""
from .atlas import AtlasLayout, TrafficAtlas
from .control import IntersectionControl, read_controls
from .engine import RoadNetwork, SimConfig, UtilizationSample, World, sample_metrics
from .planning import DepartureHistogram, init_edge_weights, plan_routes, sample_departures
from .runner import SimulationReport, run_iterations, write_edge_series, write_vehicles
from .vehicles import CAR, TRUCK, VehicleParams, VehicleState, co_emission_rate, fuel_rate, idm_acceleration

__all__ = [
    "AtlasLayout", "TrafficAtlas", "IntersectionControl", "read_controls", "RoadNetwork", "SimConfig",
    "UtilizationSample", "World", "sample_metrics", "DepartureHistogram", "init_edge_weights",
    "plan_routes", "sample_departures", "SimulationReport", "run_iterations", "write_edge_series",
    "write_vehicles", "CAR", "TRUCK", "VehicleParams", "VehicleState", "co_emission_rate", "fuel_rate",
    "idm_acceleration",
]
