"""Octree AMR workload: a conserved scalar field on fixed-size sub-grids."""

from .kernel import LeafPlan, fill_ghosts, serial_step
from .mesh import RegridResult, build_initial_tree, regrid
from .octree import (
    FACES,
    Octree,
    SubGrid,
    assign_owners,
    check_partition,
    count_amr_boundaries,
    enforce_two_to_one,
    is_balanced,
    prolong,
    restrict,
    total_mass,
)
from .scenario import Blob, ScenarioConfig, two_blob_scenario
from .workload import AmrSimulation, WorkloadCounters, step

__all__ = [
    "AmrSimulation", "Blob", "FACES", "LeafPlan", "Octree", "RegridResult", "ScenarioConfig",
    "SubGrid", "WorkloadCounters", "assign_owners", "build_initial_tree", "check_partition",
    "count_amr_boundaries", "enforce_two_to_one", "fill_ghosts", "is_balanced", "prolong",
    "regrid", "restrict", "serial_step", "step", "total_mass", "two_blob_scenario",
]
