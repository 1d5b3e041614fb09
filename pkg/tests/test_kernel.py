import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from amtscope.amr import ScenarioConfig, serial_step
from amtscope.amr.kernel import build_plans, fill_ghosts, inject, restrict_face
from amtscope.amr.octree import total_mass

from trees import gather, random_tree, uniform_tree


def const(value, n=4):
    return lambda node: np.full((n, n, n), float(value))


def config(n=4, **kw):
    kw.setdefault("cells_per_edge", n)
    kw.setdefault("max_level", 3)
    return ScenarioConfig(**kw)


def uniform_upwind(q, cfg, dt):
    """Independent global-array reference: upwind advection + central diffusion, closed walls."""
    m = q.shape[0]
    dx = 1.0 / m
    c = (np.arange(m) + 0.5) / m
    vx, vy, vz = cfg.velocity
    w = cfg.angular_velocity
    ux = (vx - w * (c - 0.5)).reshape(1, m, 1)
    uy = (vy + w * (c - 0.5)).reshape(m, 1, 1)
    uz = vz
    D = cfg.diffusion
    div = np.zeros_like(q)
    for axis, u in ((0, ux), (1, uy), (2, uz)):
        lo = np.take(q, range(m - 1), axis=axis)
        hi = np.take(q, range(1, m), axis=axis)
        flux = np.maximum(u, 0) * lo + np.minimum(u, 0) * hi - D * (hi - lo) / dx
        shape = list(q.shape)
        shape[axis] = 1
        full = np.concatenate([np.zeros(shape), flux, np.zeros(shape)], axis=axis)
        div += np.diff(full, axis=axis)
    return q - dt / dx * div


@pytest.mark.parametrize("diffusion", [0.0, 1e-3])
@pytest.mark.parametrize("level", [0, 1, 2])
def test_uniform_tree_matches_global_reference(level, diffusion):
    rng = np.random.default_rng(level)
    n = 4
    tree = uniform_tree(level, n, lambda node: rng.random((n, n, n)))
    cfg = config(n, max_level=level, diffusion=diffusion, velocity=(0.3, -0.2, 0.5))
    q0 = gather(tree, level)
    dt = cfg.time_step
    serial_step(tree, cfg, dt)
    np.testing.assert_allclose(gather(tree, level), uniform_upwind(q0, cfg, dt), rtol=1e-13,
                               atol=1e-15)


def test_ghosts_of_constant_field_are_constant():
    rng = np.random.default_rng(0)
    tree = random_tree(rng, max_level=3, n=4)
    for leaf in tree.leaves():
        leaf.cells = np.full((4, 4, 4), 3.25)
    for leaf in tree.leaves():
        for layer in fill_ghosts(tree, leaf).values():
            assert layer.shape == (4, 4) and np.all(layer == 3.25)


def test_fine_ghost_injects_coarse_value():
    tree = uniform_tree(1, 4, const(0))
    tree.refine(tree.root.children[0])
    coarse = tree.nodes[1, 1, 0, 0]
    coarse.cells = np.full((4, 4, 4), 7.0)
    fine = tree.nodes[2, 1, 0, 0]
    assert np.all(fill_ghosts(tree, fine)[0, 1] == 7.0)
    layer = np.arange(16.0).reshape(4, 4)
    assert np.array_equal(inject(layer)[::2, ::2], layer)


def test_coarse_ghost_is_mean_of_fine_cells():
    assert restrict_face(np.array([[2.0, 4.0], [6.0, 8.0]]))[0, 0] == 5.0


def test_missing_neighbour_data_is_reported():
    from amtscope.errors import DependencyError

    tree = uniform_tree(1, 4, const(1))
    tree.nodes[1, 1, 0, 0].cells = None
    with pytest.raises(DependencyError):
        fill_ghosts(tree, tree.nodes[1, 0, 0, 0])


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 2e-3))
def test_step_conserves_mass(seed, diffusion):
    rng = np.random.default_rng(seed)
    tree = random_tree(rng, max_level=3, n=4)
    cfg = config(4, diffusion=diffusion, velocity=tuple(rng.uniform(-1, 1, 3)))
    before = total_mass(tree)
    for _ in range(3):
        serial_step(tree, cfg)
    assert abs(total_mass(tree) - before) <= 1e-12 * abs(before)


@settings(max_examples=20)
@given(st.integers(0, 2**32 - 1))
def test_no_motion_leaves_field_bitwise_unchanged(seed):
    rng = np.random.default_rng(seed)
    tree = random_tree(rng, max_level=3, n=4)
    before = {leaf.key: leaf.cells.copy() for leaf in tree.leaves()}
    serial_step(tree, config(4, angular_velocity=0.0, dt=1e-3))
    assert all(np.array_equal(leaf.cells, before[leaf.key]) for leaf in tree.leaves())


@settings(max_examples=20)
@given(st.integers(0, 2**32 - 1))
def test_constant_field_under_diffusion_is_unchanged(seed):
    rng = np.random.default_rng(seed)
    tree = random_tree(rng, max_level=3, n=4)
    for leaf in tree.leaves():
        leaf.cells = np.full((4, 4, 4), 0.5)
    serial_step(tree, config(4, angular_velocity=0.0, diffusion=1e-3))
    assert all(np.all(leaf.cells == 0.5) for leaf in tree.leaves())


def test_uniform_drift_keeps_interior_constant():
    # with a constant velocity only cells touching a wall can change
    rng = np.random.default_rng(4)
    tree = random_tree(rng, max_level=3, n=4)
    for leaf in tree.leaves():
        leaf.cells = np.full((4, 4, 4), 2.0)
    serial_step(tree, config(4, angular_velocity=0.0, velocity=(0.7, -0.4, 0.2)))
    for leaf in tree.leaves():
        cells = leaf.cells
        edge = (1 << leaf.level) - 1
        sl = []
        for axis in range(3):
            start = 1 if leaf.index[axis] == 0 else 0
            stop = 3 if leaf.index[axis] == edge else 4
            sl.append(slice(start, stop))
        np.testing.assert_allclose(cells[tuple(sl)], 2.0, rtol=1e-14)


def test_plan_wiring_lists_each_neighbour_once():
    tree = uniform_tree(1, 4, const(1))
    tree.refine(tree.root.children[0])
    plans = build_plans(tree, config(4), 1e-3)
    coarse = plans[1, 1, 0, 0]
    assert len(coarse.deps) == len(set(coarse.deps)) == 4 + 2
    assert plans[2, 1, 0, 0].amr_faces == 1
    assert sum(p.amr_faces for p in plans.values()) == 12
