"""Ghost exchange and the first-order upwind update of one leaf.

Every face flux is computed from exactly the same operands by both leaves
sharing the face.  Where a coarse leaf meets four fine leaves, both sides
evaluate the flux on the fine sub-faces and the coarse leaf uses their
mean, so the mass leaving one side is the mass entering the other and the
scheme conserves mass to round-off.
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractError, DependencyError
from .octree import BOUNDARY, COARSE, FACES, FINE, SAME, Octree, SubGrid, cell_centers, tangential_axes


def _layer_index(axis, pos):
    sl = [slice(None)] * 3
    sl[axis] = pos
    return tuple(sl)


def inject(layer):
    """Coarse face cells -> fine ghost cells (each value copied to a 2x2 block)."""
    return layer.repeat(2, axis=0).repeat(2, axis=1)


def coarse_portion(coarse_layer, fine_index, axis):
    """The quarter of a coarse face layer that lies against the fine leaf."""
    h = coarse_layer.shape[0] // 2
    t1, t2 = tangential_axes(axis)
    b1, b2 = fine_index[t1] & 1, fine_index[t2] & 1
    return coarse_layer[b1 * h:(b1 + 1) * h, b2 * h:(b2 + 1) * h]


def assemble_fine(layers):
    """Four N x N fine face layers (tangential-bit order) -> one 2N x 2N layer."""
    (a, b), (c, d) = (layers[0], layers[1]), (layers[2], layers[3])
    return np.block([[a, b], [c, d]])


def restrict_face(fine_layer):
    """Mean over each 2x2 block of fine face cells."""
    n = fine_layer.shape[0] // 2
    return fine_layer.reshape(n, 2, n, 2).mean(axis=(1, 3))


def face_flux(up, um, qlo, qhi, diffusion, h):
    flux = up * qlo + um * qhi
    if diffusion:
        flux = flux - diffusion * (qhi - qlo) / h
    return flux


def fill_ghosts(tree: Octree, leaf: SubGrid) -> dict:
    """One ghost layer per face, keyed ``(axis, side)``.

    Same-level neighbours are copied, coarser ones injected, finer ones
    averaged; domain faces reflect the leaf's own boundary layer.
    """
    n = tree.n
    ghosts = {}
    for axis, side in FACES:
        kind, nbrs = tree.neighbor(leaf, axis, side)
        theirs = _layer_index(axis, 0 if side > 0 else n - 1)
        if kind == "unbalanced":
            raise ContractError(f"tree is not 2:1 balanced at {leaf!r}")
        for nb in nbrs:
            if nb.cells is None:
                raise DependencyError(f"no data for neighbour {nb!r} of {leaf!r}")
        if kind == BOUNDARY:
            ghosts[axis, side] = leaf.cells[_layer_index(axis, 0 if side < 0 else n - 1)].copy()
        elif kind == SAME:
            ghosts[axis, side] = nbrs[0].cells[theirs].copy()
        elif kind == COARSE:
            ghosts[axis, side] = inject(coarse_portion(nbrs[0].cells[theirs], leaf.index, axis))
        else:
            ghosts[axis, side] = restrict_face(assemble_fine([nb.cells[theirs] for nb in nbrs]))
    return ghosts


class LeafPlan:
    """Precomputed geometry, velocities and neighbour wiring for one leaf.

    ``deps`` lists neighbour keys in the order their payloads are passed to
    :meth:`advance` after the leaf's own cells.
    """

    def __init__(self, tree: Octree, leaf: SubGrid, config, dt: float):
        n = tree.n
        level, index = leaf.level, leaf.index
        self.key = leaf.key
        self.owner = leaf.owner
        self.gid = leaf.gid
        self.n = n
        dx = 1.0 / (n << level)
        self.dt_dx = dt / dx
        self.diffusion = float(config.diffusion)
        self.dx = dx
        xc = cell_centers(level, index, n, 0)
        yc = cell_centers(level, index, n, 1)
        ux = config.normal_velocity(0, y=yc)
        uy = config.normal_velocity(1, x=xc)
        uz = config.normal_velocity(2)
        # interior faces: u_x varies with y, u_y with x, u_z is constant
        self.up = (np.maximum(ux, 0.0).reshape(1, n, 1), np.maximum(uy, 0.0).reshape(n, 1, 1),
                   np.maximum(uz, 0.0))
        self.um = (np.minimum(ux, 0.0).reshape(1, n, 1), np.minimum(uy, 0.0).reshape(n, 1, 1),
                   np.minimum(uz, 0.0))
        # the same on a face, laid out (t1, t2)
        self.face_up = (self.up[0].reshape(n, 1), self.up[1].reshape(n, 1), self.up[2])
        self.face_um = (self.um[0].reshape(n, 1), self.um[1].reshape(n, 1), self.um[2])

        self.deps = []
        self.dep_gids = []
        slot = {}
        self.faces = []
        self.amr_faces = 0
        for axis, side in FACES:
            kind, nbrs = tree.neighbor(leaf, axis, side)
            if kind == "unbalanced":
                raise ContractError(f"tree is not 2:1 balanced at {leaf!r}")
            idx = []
            for nb in nbrs:
                if nb.key not in slot:
                    slot[nb.key] = len(self.deps)
                    self.deps.append(nb.key)
                    self.dep_gids.append(nb.gid)
                idx.append(slot[nb.key])
            extra = None
            if kind == COARSE:
                self.amr_faces += 1
                h_cf = 3.0 / (2.0 * (n << level))
                extra = h_cf
            elif kind == FINE:
                t1 = tangential_axes(axis)[0]
                res_f = n << (level + 1)
                g = 2 * index[t1] * n + np.arange(2 * n)
                tc = (2 * g + 1) / (2 * res_f)
                if axis == 0:
                    u = config.normal_velocity(0, y=tc).reshape(2 * n, 1)
                elif axis == 1:
                    u = config.normal_velocity(1, x=tc).reshape(2 * n, 1)
                else:
                    u = config.normal_velocity(2)
                h_cf = 3.0 / (2.0 * res_f)
                extra = (np.maximum(u, 0.0), np.minimum(u, 0.0), h_cf)
            self.faces.append((axis, side, kind, tuple(idx), extra))

    def advance(self, own: np.ndarray, nbrs) -> np.ndarray:
        n = self.n
        q = own
        up, um = self.up, self.um
        D = self.diffusion
        dx = self.dx
        fx = np.empty((n + 1, n, n))
        fy = np.empty((n, n + 1, n))
        fz = np.empty((n, n, n + 1))
        fx[1:n] = face_flux(up[0], um[0], q[:-1], q[1:], D, dx)
        fy[:, 1:n] = face_flux(up[1], um[1], q[:, :-1], q[:, 1:], D, dx)
        fz[:, :, 1:n] = face_flux(up[2], um[2], q[:, :, :-1], q[:, :, 1:], D, dx)
        fluxes = (fx, fy, fz)
        for axis, side, kind, idx, extra in self.faces:
            own_layer = q[_layer_index(axis, n - 1 if side > 0 else 0)]
            theirs = _layer_index(axis, 0 if side > 0 else n - 1)
            if kind == BOUNDARY:
                flux = 0.0
            elif kind == SAME:
                ghost = nbrs[idx[0]][theirs]
                fup, fum = self.face_up[axis], self.face_um[axis]
                if side > 0:
                    flux = face_flux(fup, fum, own_layer, ghost, D, dx)
                else:
                    flux = face_flux(fup, fum, ghost, own_layer, D, dx)
            elif kind == COARSE:
                coarse = nbrs[idx[0]]
                if coarse is None:
                    raise DependencyError(f"missing coarse neighbour data for {self.key}")
                ghost = inject(coarse_portion(coarse[theirs], self.key[1:], axis))
                fup, fum = self.face_up[axis], self.face_um[axis]
                if side > 0:
                    flux = face_flux(fup, fum, own_layer, ghost, D, extra)
                else:
                    flux = face_flux(fup, fum, ghost, own_layer, D, extra)
            else:
                fine = assemble_fine([nbrs[i][theirs] for i in idx])
                mine = inject(own_layer)
                sup, sum_, h_cf = extra
                if side > 0:
                    sub = face_flux(sup, sum_, mine, fine, D, h_cf)
                else:
                    sub = face_flux(sup, sum_, fine, mine, D, h_cf)
                flux = restrict_face(sub)
            fluxes[axis][_layer_index(axis, n if side > 0 else 0)] = flux
        div = (fx[1:] - fx[:-1]) + (fy[:, 1:] - fy[:, :-1]) + (fz[:, :, 1:] - fz[:, :, :-1])
        return q - self.dt_dx * div


def build_plans(tree: Octree, config, dt: float) -> dict:
    return {leaf.key: LeafPlan(tree, leaf, config, dt) for leaf in tree.leaves()}


def serial_step(tree: Octree, config, dt: float = None, plans: dict = None) -> Octree:
    """Advance every leaf once in a plain loop (reference for the task-parallel path)."""
    if dt is None:
        dt = config.time_step
    if plans is None:
        plans = build_plans(tree, config, dt)
    nodes = tree.nodes
    new = {}
    for key, plan in plans.items():
        new[key] = plan.advance(nodes[key].cells, [nodes[k].cells for k in plan.deps])
    for key, cells in new.items():
        nodes[key].cells = cells
    return tree
