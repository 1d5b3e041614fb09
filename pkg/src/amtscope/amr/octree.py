"""Octree of fixed-size sub-grids over the unit cube.

A node at ``level`` with lattice index ``(i, j, k)`` covers the box
``[i, i+1] x [j, j+1] x [k, k+1] * 2**-level`` and, when it is a leaf, owns an
``N x N x N`` array of cell values indexed ``[x, y, z]``.  Children are
ordered by Morton octant ``bx | by << 1 | bz << 2``, so a depth-first walk
lists leaves along the Z-order space-filling curve.
"""

from __future__ import annotations

import math
from typing import Callable, Iterator, Optional

import numpy as np

from ..errors import ContractError

FACES = tuple((axis, side) for axis in range(3) for side in (-1, 1))

BOUNDARY = "boundary"
SAME = "same"
COARSE = "coarse"
FINE = "fine"


def octant_offsets(octant):
    return octant & 1, (octant >> 1) & 1, (octant >> 2) & 1


def tangential_axes(axis):
    return tuple(a for a in range(3) if a != axis)


class SubGrid:
    __slots__ = ("level", "index", "cells", "children", "parent", "owner", "gid")

    def __init__(self, level, index, parent=None):
        self.level = level
        self.index = tuple(index)
        self.cells: Optional[np.ndarray] = None
        self.children: Optional[tuple] = None
        self.parent = parent
        self.owner = 0
        self.gid = None

    @property
    def key(self):
        return (self.level, *self.index)

    @property
    def is_leaf(self):
        return self.children is None

    @property
    def size(self):
        return 1.0 / (1 << self.level)

    @property
    def box(self):
        """``(x0, y0, z0, x1, y1, z1)``; exact, since all coordinates are dyadic."""
        h = self.size
        i, j, k = self.index
        return (i * h, j * h, k * h, (i + 1) * h, (j + 1) * h, (k + 1) * h)

    def child_index(self, octant):
        bx, by, bz = octant_offsets(octant)
        i, j, k = self.index
        return (2 * i + bx, 2 * j + by, 2 * k + bz)

    def __repr__(self):
        kind = "leaf" if self.is_leaf else "node"
        return f"<SubGrid {kind} L{self.level} {self.index} owner={self.owner}>"


def cell_centers(level, index, n, axis):
    """Cell-centre coordinates of a sub-grid along ``axis``; exact for power-of-two ``n``."""
    res = n << level
    g = index[axis] * n + np.arange(n)
    return (2 * g + 1) / (2 * res)


class Octree:
    def __init__(self, cells_per_edge=8):
        if cells_per_edge < 2 or cells_per_edge % 2:
            raise ValueError("cells_per_edge must be an even integer >= 2")
        self.n = cells_per_edge
        self.root = SubGrid(0, (0, 0, 0))
        self.nodes = {self.root.key: self.root}

    # traversal -----------------------------------------------------------

    def walk(self) -> Iterator[SubGrid]:
        """Pre-order depth-first walk (Morton order)."""
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            if node.children is not None:
                stack.extend(reversed(node.children))

    def leaves(self) -> list[SubGrid]:
        return [n for n in self.walk() if n.is_leaf]

    def interior(self) -> list[SubGrid]:
        return [n for n in self.walk() if not n.is_leaf]

    def __len__(self):
        return len(self.nodes)

    @property
    def depth(self):
        return max(key[0] for key in self.nodes)

    def cell_volume(self, node):
        return (node.size / self.n) ** 3

    # structure -----------------------------------------------------------

    def refine(self, node: SubGrid, init: Optional[Callable] = None):
        """Split a leaf into 8 children; ``init(child)`` supplies their cells.

        Without ``init`` the children inherit the parent's values by injection.
        """
        if not node.is_leaf:
            raise ContractError(f"{node!r} is already refined")
        kids = []
        for octant in range(8):
            child = SubGrid(node.level + 1, node.child_index(octant), node)
            child.owner = node.owner
            kids.append(child)
            self.nodes[child.key] = child
        node.children = tuple(kids)
        for octant, child in enumerate(kids):
            child.cells = init(child) if init is not None else prolong(node.cells, octant)
        node.cells = None
        return node.children

    def coarsen(self, node: SubGrid):
        """Merge 8 leaf children back into ``node`` by conservative averaging."""
        if node.is_leaf or any(not c.is_leaf for c in node.children):
            raise ContractError(f"{node!r} does not have 8 leaf children")
        node.cells = restrict([c.cells for c in node.children])
        for c in node.children:
            del self.nodes[c.key]
        node.children = None

    def containing(self, level, index) -> Optional[SubGrid]:
        """Deepest existing node at or above ``level`` containing lattice cell ``index``."""
        for m in range(level, -1, -1):
            shift = level - m
            node = self.nodes.get((m, index[0] >> shift, index[1] >> shift, index[2] >> shift))
            if node is not None:
                return node
        return None

    def neighbor(self, leaf: SubGrid, axis: int, side: int):
        """``(kind, nodes)`` across one face of ``leaf``.

        ``kind`` is ``boundary``, ``same``, ``coarse`` (one level coarser),
        ``fine`` (the 4 children on the face, ordered by tangential bits), or
        ``"unbalanced"`` when the 2:1 rule is violated; in that case ``nodes``
        holds the offending coarser leaf or finer interior nodes.
        """
        level = leaf.level
        idx = list(leaf.index)
        idx[axis] += side
        if not 0 <= idx[axis] < (1 << level):
            return BOUNDARY, ()
        node = self.nodes.get((level, *idx))
        if node is None:
            coarse = self.containing(level, idx)
            if coarse.level == level - 1:
                return COARSE, (coarse,)
            return "unbalanced", (coarse,)
        if node.is_leaf:
            return SAME, (node,)
        bit = 0 if side > 0 else 1
        t1, t2 = tangential_axes(axis)
        kids = []
        for b1 in (0, 1):
            for b2 in (0, 1):
                off = [0, 0, 0]
                off[axis], off[t1], off[t2] = bit, b1, b2
                kids.append(node.children[off[0] | off[1] << 1 | off[2] << 2])
        deep = [k for k in kids if not k.is_leaf]
        if deep:
            return "unbalanced", tuple(deep)
        return FINE, tuple(kids)

    def copy(self):
        other = Octree(self.n)
        other.nodes = {}
        mapping = {}
        for node in self.walk():
            clone = SubGrid(node.level, node.index, mapping.get(id(node.parent)))
            clone.owner = node.owner
            clone.gid = node.gid
            clone.cells = None if node.cells is None else node.cells.copy()
            mapping[id(node)] = clone
            other.nodes[clone.key] = clone
        for node in self.walk():
            if node.children is not None:
                mapping[id(node)].children = tuple(mapping[id(c)] for c in node.children)
        other.root = mapping[id(self.root)]
        return other


# transfer operators ------------------------------------------------------


def prolong(cells: np.ndarray, octant: int) -> np.ndarray:
    """Piecewise-constant injection of one octant of ``cells`` onto a child grid."""
    n = cells.shape[0]
    h = n // 2
    bx, by, bz = octant_offsets(octant)
    block = cells[bx * h:(bx + 1) * h, by * h:(by + 1) * h, bz * h:(bz + 1) * h]
    return block.repeat(2, axis=0).repeat(2, axis=1).repeat(2, axis=2)


def restrict(children_cells) -> np.ndarray:
    """Average 8 child grids (Morton order) onto one parent grid."""
    n = children_cells[0].shape[0]
    h = n // 2
    out = np.empty((n, n, n))
    for octant, cells in enumerate(children_cells):
        bx, by, bz = octant_offsets(octant)
        out[bx * h:(bx + 1) * h, by * h:(by + 1) * h, bz * h:(bz + 1) * h] = (
            cells.reshape(h, 2, h, 2, h, 2).mean(axis=(1, 3, 5))
        )
    return out


# balance and boundaries --------------------------------------------------


def enforce_two_to_one(tree: Octree, init: Optional[Callable] = None) -> Octree:
    """Refine coarse leaves until face-adjacent leaves differ by at most one level."""
    changed = True
    while changed:
        changed = False
        for leaf in sorted(tree.leaves(), key=lambda n: -n.level):
            if not leaf.is_leaf:
                continue
            for axis, side in FACES:
                kind, nodes = tree.neighbor(leaf, axis, side)
                if kind == "unbalanced" and nodes[0].level < leaf.level:
                    tree.refine(nodes[0], init)
                    changed = True
    return tree


def is_balanced(tree: Octree) -> bool:
    return all(
        tree.neighbor(leaf, axis, side)[0] != "unbalanced"
        for leaf in tree.leaves()
        for axis, side in FACES
    )


def amr_faces(tree: Octree, leaf: SubGrid) -> int:
    """Number of faces on which ``leaf`` abuts a coarser leaf."""
    count = 0
    for axis, side in FACES:
        kind, _ = tree.neighbor(leaf, axis, side)
        if kind == COARSE:
            count += 1
        elif kind == "unbalanced":
            raise ContractError(f"tree is not 2:1 balanced at {leaf!r}")
    return count


def count_amr_boundaries(tree: Octree) -> int:
    """Number of (fine leaf, coarse neighbour, face) triples."""
    return sum(amr_faces(tree, leaf) for leaf in tree.leaves())


# field diagnostics -------------------------------------------------------


def total_mass(tree: Octree) -> float:
    return math.fsum(float(leaf.cells.sum()) * tree.cell_volume(leaf) for leaf in tree.leaves())


def check_partition(tree: Octree) -> bool:
    """True when leaf boxes tile the unit cube with neither gaps nor overlaps."""
    depth = tree.depth
    total = 0
    boxes = []
    for leaf in tree.leaves():
        shift = depth - leaf.level
        lo = tuple(c << shift for c in leaf.index)
        boxes.append((lo, 1 << shift))
        total += (1 << shift) ** 3
    if total != (1 << depth) ** 3:
        return False
    occupied = np.zeros((1 << depth,) * 3, dtype=np.int8)
    for (x, y, z), s in boxes:
        occupied[x:x + s, y:y + s, z:z + s] += 1
    return bool((occupied == 1).all())


def assign_owners(tree: Octree, num_localities: int) -> list[list[SubGrid]]:
    """Split leaves along the Morton curve into contiguous, equal-count chunks.

    Interior nodes go to the owner of their first leaf.  Returns the leaves
    of each locality.
    """
    leaves = tree.leaves()
    base, extra = divmod(len(leaves), num_localities)
    chunks = []
    start = 0
    for loc in range(num_localities):
        size = base + (1 if loc < extra else 0)
        chunk = leaves[start:start + size]
        for leaf in chunk:
            leaf.owner = loc
        chunks.append(chunk)
        start += size
    for node in reversed(list(tree.walk())):
        if not node.is_leaf:
            node.owner = node.children[0].owner
    return chunks
