"""Simulator for distributed shortest-path algorithms in a network that
combines a local graph of unbounded bandwidth with a capacity-bounded global
network."""

from .engine import HybridNetwork, SimConfig
from .graphs import Graph, INF, io_read, io_write

__version__ = "0.1.0"

__all__ = ["Graph", "HybridNetwork", "INF", "SimConfig", "io_read", "io_write", "__version__"]
