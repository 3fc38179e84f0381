"""Road-network preparation, static traffic assignment and per-vehicle simulation."""
from .graph import EdgeRecord, NodeRecord, RoadGraph, load_graph

__version__ = "0.1.0"

__all__ = ["EdgeRecord", "NodeRecord", "RoadGraph", "load_graph", "__version__"]
