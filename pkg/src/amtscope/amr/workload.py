"""The AMR workload scheduled on the task runtime.

Each step spawns one task per leaf, depending on the previous step's tasks
of the leaf and of every face neighbour, plus one restriction task per
interior node.  Steps between two regrids are spawned up front, so
neighbouring regions of the mesh may run several steps apart.
"""

from __future__ import annotations

import logging
from typing import Callable, Optional

import numpy as np

from ..counters import AtomicCounter, CounterRegistry, per_locality_provider
from ..runtime import Runtime
from .kernel import LeafPlan, build_plans
from .mesh import build_initial_tree, regrid
from .octree import Octree, assign_owners, count_amr_boundaries, restrict, total_mass

logger = logging.getLogger(__name__)

COUNTER_NAMES = {
    "subgrids": ("workload/subgrids", "total number of sub-grids processed"),
    "leaves": ("workload/subgrid_leaves", "total number of subgrid leaves processed"),
    "amr_boundaries": ("workload/amr_boundaries", "total number of AMR boundaries processed"),
}


class WorkloadCounters:
    """Per-locality application counters."""

    def __init__(self, num_localities: int):
        self.subgrids = [AtomicCounter() for _ in range(num_localities)]
        self.leaves = [AtomicCounter() for _ in range(num_localities)]
        self.amr_boundaries = [AtomicCounter() for _ in range(num_localities)]

    def install(self, registry: CounterRegistry):
        for attr, (name, description) in COUNTER_NAMES.items():
            registry.install_counter_type(name, per_locality_provider(getattr(self, attr)), description)

    @staticmethod
    def _total(counters):
        return sum(c.total for c in counters)

    @property
    def subgrids_processed(self):
        return self._total(self.subgrids)

    @property
    def leaves_processed(self):
        return self._total(self.leaves)

    @property
    def amr_boundaries_processed(self):
        return self._total(self.amr_boundaries)


class _LeafTask:
    __slots__ = ("plan", "agas", "subgrids", "leaves", "amr")

    def __init__(self, plan: LeafPlan, agas, counters: WorkloadCounters):
        loc = plan.owner
        self.plan = plan
        self.agas = agas
        self.subgrids = counters.subgrids[loc]
        self.leaves = counters.leaves[loc]
        self.amr = counters.amr_boundaries[loc] if plan.amr_faces else None

    def __call__(self, own, *nbrs):
        self.agas.resolve_many(self.plan.dep_gids)
        out = self.plan.advance(own, nbrs)
        self.subgrids.add(1)
        self.leaves.add(1)
        if self.amr is not None:
            self.amr.add(self.plan.amr_faces)
        return out


class _RestrictTask:
    __slots__ = ("subgrids",)

    def __init__(self, counter):
        self.subgrids = counter

    def __call__(self, *children):
        self.subgrids.add(1)
        return restrict(children)


class AmrSimulation:
    """Drives a scenario on a runtime: distribution, stepping, regridding.

    ``on_event(name)`` is called with ``"step_complete"`` after every step and
    ``"regrid_complete"`` after every regrid.
    """

    def __init__(self, runtime: Runtime, config, tree: Optional[Octree] = None,
                 on_event: Optional[Callable[[str], None]] = None):
        config.validate()
        self.runtime = runtime
        self.config = config
        self.dt = config.time_step
        self.tree = tree if tree is not None else build_initial_tree(config)
        self.counters = WorkloadCounters(runtime.num_localities)
        self.on_event = on_event
        self.steps_done = 0
        self.regrids = 0
        self._plans = None
        self.distribute()

    def install_counters(self, registry: Optional[CounterRegistry] = None):
        self.counters.install(registry if registry is not None else self.runtime.counters)

    # placement -----------------------------------------------------------

    def distribute(self):
        """Assign leaves to localities along the Morton curve and sync AGAS."""
        agas = self.runtime.agas
        nodes = list(self.tree.walk())
        previous = {n.key: n.owner for n in nodes if n.gid is not None}
        assign_owners(self.tree, self.runtime.num_localities)
        live = set()
        for node in nodes:
            if node.gid is None:
                node.gid = agas.register_object(node.owner, node)
            elif previous.get(node.key) != node.owner:
                agas.migrate(node.gid, node.owner)
            live.add(node.gid)
        for gid in getattr(self, "_registered", set()) - live:
            agas.unregister(gid)
        self._registered = live
        self._plans = None

    def locality_leaf_counts(self):
        counts = [0] * self.runtime.num_localities
        for leaf in self.tree.leaves():
            counts[leaf.owner] += 1
        return counts

    # stepping ------------------------------------------------------------

    def plans(self):
        if self._plans is None:
            self._plans = build_plans(self.tree, self.config, self.dt)
        return self._plans

    def _emit(self, name):
        if self.on_event is not None:
            self.on_event(name)

    def advance(self, steps: int):
        """Run ``steps`` steps on the current mesh without regridding."""
        if steps <= 0:
            return
        rt = self.runtime
        plans = self.plans()
        tasks = {key: _LeafTask(plan, rt.agas, self.counters) for key, plan in plans.items()}
        interior = [n for n in self.tree.walk() if not n.is_leaf]
        interior.reverse()  # children before parents
        restrictors = {n.key: _RestrictTask(self.counters.subgrids[n.owner]) for n in interior}
        prev = {key: rt.ready(self.tree.nodes[key].cells) for key in plans}
        roots = []
        for _ in range(steps):
            cur = {}
            for key, plan in plans.items():
                deps = [prev[key]]
                deps.extend(prev[k] for k in plan.deps)
                cur[key] = rt.spawn(plan.owner, tasks[key], deps, label="leaf_update")
            level_handles = dict(cur)
            for node in interior:
                kids = [level_handles[c.key] for c in node.children]
                level_handles[node.key] = rt.spawn(node.owner, restrictors[node.key], kids,
                                                   label="restrict")
            roots.append(level_handles[self.tree.root.key])
            prev = cur
        for root in roots:
            rt.wait(root)
            self.steps_done += 1
            self._emit("step_complete")
        for key, handle in prev.items():
            self.tree.nodes[key].cells = rt.wait(handle)

    def regrid(self):
        result = regrid(self.tree, self.config)
        self.regrids += 1
        self.distribute()
        self._emit("regrid_complete")
        return result

    def run(self, steps: Optional[int] = None):
        """Advance ``steps`` (default: the scenario's) with periodic regrids."""
        steps = self.config.steps if steps is None else steps
        interval = self.config.regrid_interval
        remaining = steps
        while remaining > 0:
            chunk = remaining if interval <= 0 else min(interval, remaining)
            self.advance(chunk)
            remaining -= chunk
            if interval > 0 and remaining > 0:
                self.regrid()
        return self.tree

    # diagnostics ---------------------------------------------------------

    def total_mass(self):
        return total_mass(self.tree)

    def amr_boundaries(self):
        return count_amr_boundaries(self.tree)


def step(tree: Octree, config, runtime: Runtime, dt: Optional[float] = None) -> Octree:
    """One task-parallel step of ``tree`` on ``runtime`` (one task per leaf)."""
    if dt is not None and dt != config.time_step:
        from dataclasses import replace
        config = replace(config, dt=dt)
    sim = AmrSimulation(runtime, config, tree=tree)
    sim.advance(1)
    return sim.tree
