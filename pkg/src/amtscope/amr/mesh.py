"""Building and regridding the octree from a scenario's refinement criterion."""

from __future__ import annotations

from dataclasses import dataclass

from .octree import Octree, enforce_two_to_one, FACES


def build_initial_tree(config) -> Octree:
    """Refine from the root wherever any sampled cell exceeds the threshold, then balance."""
    config.validate()
    tree = Octree(config.cells_per_edge)
    tree.root.cells = config.evaluate(tree.root)
    stack = [tree.root]
    while stack:
        node = stack.pop()
        if node.level < config.max_level and config.needs_refinement(node.cells):
            stack.extend(tree.refine(node, config.evaluate))
    enforce_two_to_one(tree, config.evaluate)
    return tree


@dataclass
class RegridResult:
    refined: int = 0
    coarsened: int = 0

    @property
    def changed(self):
        return bool(self.refined or self.coarsened)


def _coarsening_keeps_balance(tree, node):
    for axis, side in FACES:
        idx = list(node.index)
        idx[axis] += side
        if not 0 <= idx[axis] < (1 << node.level):
            continue
        nb = tree.nodes.get((node.level, *idx))
        if nb is None or nb.is_leaf:
            continue
        bit = 0 if side > 0 else 1
        for child in nb.children:
            if ((child.index[axis] & 1) == bit) and not child.is_leaf:
                return False
    return True


def regrid(tree: Octree, config) -> RegridResult:
    """Refine leaves that meet the criterion, coarsen quiet sibling groups, rebalance.

    New children inherit their parent's values by injection and merged
    parents take the mean of their children, so total mass is unchanged up
    to round-off.
    """
    result = RegridResult()
    stack = tree.leaves()
    while stack:
        node = stack.pop()
        if node.level < config.max_level and config.needs_refinement(node.cells):
            stack.extend(tree.refine(node))
            result.refined += 1
    changed = True
    while changed:
        changed = False
        candidates = [
            n for n in tree.interior() if all(c.is_leaf for c in n.children)
        ]
        for node in sorted(candidates, key=lambda n: -n.level):
            if not all(c.is_leaf for c in node.children):
                continue
            if all(config.allows_coarsening(c.cells) for c in node.children) and \
                    _coarsening_keeps_balance(tree, node):
                tree.coarsen(node)
                result.coarsened += 1
                changed = True
    before = len(tree)
    enforce_two_to_one(tree)
    result.refined += (len(tree) - before) // 8
    return result
