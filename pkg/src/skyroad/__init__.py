"""skyroad: joint UAV-UGV emergency network simulation and training.

A discrete-time simulator of an air-ground relay network (road-constrained
ground vehicles feeding aerial base stations that serve ground users) together
with an advantage actor-critic trainer wrapped in a meta-learning loop, plus a
CLI experiment harness.
"""

__version__ = "0.1.0"

from .channel import ChannelParams, LinkBudget
from .scenario import (FleetParams, QoSParams, RoadGraph, Task, TaskDistribution,
                       build_graph, grid_graph, project_to_graph, sample_task)

__all__ = [
    "ChannelParams",
    "LinkBudget",
    "FleetParams",
    "QoSParams",
    "RoadGraph",
    "Task",
    "TaskDistribution",
    "build_graph",
    "grid_graph",
    "project_to_graph",
    "sample_task",
    "__version__",
]
