import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from amtscope.amr import Blob, ScenarioConfig, build_initial_tree, regrid
from amtscope.amr.octree import check_partition, is_balanced, total_mass
from amtscope.errors import ConfigurationError

from trees import brute_force_balanced, brute_force_partition


def leaf_keys(tree):
    return sorted(leaf.key for leaf in tree.leaves())


def oracle_leaves(cfg):
    """Recursive criterion on the analytic field, then naive 2:1 splitting of key sets."""
    n = cfg.cells_per_edge

    def hot(level, index):
        res = n << level
        axes = [(2 * (index[a] * n + np.arange(n)) + 1) / (2 * res) for a in range(3)]
        x, y, z = np.meshgrid(*axes, indexing="ij")
        return bool((cfg.field_at(x, y, z) > cfg.threshold).any())

    def walk(level, index):
        if level < cfg.max_level and hot(level, index):
            out = []
            for o in range(8):
                child = tuple(2 * index[a] + ((o >> a) & 1) for a in range(3))
                out.extend(walk(level + 1, child))
            return out
        return [(level, *index)]

    leaves = set(walk(0, (0, 0, 0)))

    def cover(level, idx):
        for key in leaves:
            shift = level - key[0]
            if shift >= 0 and all((idx[a] >> shift) == key[1 + a] for a in range(3)):
                return key
        return None

    changed = True
    while changed:
        changed = False
        for key in sorted(leaves, key=lambda k: -k[0]):
            level, idx = key[0], key[1:]
            for axis in range(3):
                for side in (-1, 1):
                    nb = list(idx)
                    nb[axis] += side
                    if not 0 <= nb[axis] < (1 << level):
                        continue
                    other = cover(level, nb)
                    if other is not None and other[0] < level - 1:
                        leaves.remove(other)
                        lv, oi = other[0], other[1:]
                        leaves.update(
                            (lv + 1, *(2 * oi[a] + ((o >> a) & 1) for a in range(3)))
                            for o in range(8)
                        )
                        changed = True
                        break
                if changed:
                    break
            if changed:
                break
    return sorted(leaves)


def test_threshold_above_field_gives_root_leaf():
    tree = build_initial_tree(ScenarioConfig(threshold=10.0))
    assert leaf_keys(tree) == [(0, 0, 0, 0)]


def test_threshold_zero_refines_everywhere():
    tree = build_initial_tree(ScenarioConfig(threshold=0.0, max_level=1))
    assert len(tree.leaves()) == 8 and all(leaf.level == 1 for leaf in tree.leaves())


@pytest.mark.parametrize("max_level", [2, 3])
def test_two_blob_tree_matches_recursive_oracle(max_level):
    cfg = ScenarioConfig(max_level=max_level)
    assert leaf_keys(build_initial_tree(cfg)) == oracle_leaves(cfg)


def test_off_centre_blob_matches_oracle():
    cfg = ScenarioConfig(max_level=3, blobs=(Blob((0.13, 0.8, 0.61), 0.04, 1.0),))
    assert leaf_keys(build_initial_tree(cfg)) == oracle_leaves(cfg)


def test_static_field_reaches_a_fixed_point():
    cfg = ScenarioConfig(max_level=3)
    tree = build_initial_tree(cfg)
    regrid(tree, cfg)
    keys = leaf_keys(tree)
    result = regrid(tree, cfg)
    assert not result.changed and leaf_keys(tree) == keys


def test_regrid_follows_a_moved_blob():
    old = ScenarioConfig(max_level=3, blobs=(Blob((0.3125, 0.3125, 0.3125), 0.05, 1.0),))
    new = ScenarioConfig(max_level=3, blobs=(Blob((0.6875, 0.6875, 0.6875), 0.05, 1.0),))
    tree = build_initial_tree(old)
    for leaf in tree.leaves():
        leaf.cells = new.evaluate(leaf)
    regrid(tree, new)
    fresh = build_initial_tree(new)

    def deep_in_octant(t, octant_hi):
        return {leaf.key for leaf in t.leaves()
                if leaf.level == 3 and all((c >= 4) == octant_hi for c in leaf.index)}

    assert deep_in_octant(fresh, True) and deep_in_octant(tree, True)
    assert deep_in_octant(fresh, True) <= deep_in_octant(tree, True)
    assert not deep_in_octant(tree, False)
    assert is_balanced(tree) and check_partition(tree)


@settings(max_examples=15)
@given(st.tuples(*[st.floats(0.1, 0.9)] * 3), st.tuples(*[st.floats(0.1, 0.9)] * 3))
def test_regrid_keeps_mass_partition_and_balance(a, b):
    first = ScenarioConfig(max_level=3, cells_per_edge=4, blobs=(Blob(a, 0.06, 1.0),))
    second = ScenarioConfig(max_level=3, cells_per_edge=4, blobs=(Blob(b, 0.06, 1.0),))
    tree = build_initial_tree(first)
    for leaf in tree.leaves():
        leaf.cells = second.evaluate(leaf)
    before = total_mass(tree)
    regrid(tree, second)
    assert total_mass(tree) == pytest.approx(before, rel=1e-12)
    assert check_partition(tree) and brute_force_partition(tree)
    assert is_balanced(tree) and brute_force_balanced(tree)


def test_scenario_validation():
    with pytest.raises(ConfigurationError):
        ScenarioConfig(dt=1.0).validate()
    with pytest.raises(ConfigurationError):
        ScenarioConfig(cells_per_edge=3).validate()
    with pytest.raises(ConfigurationError):
        ScenarioConfig(max_level=-1).validate()
    cfg = ScenarioConfig()
    assert cfg.courant() == pytest.approx(cfg.cfl)


def test_scenario_round_trip_and_digest():
    cfg = ScenarioConfig(max_level=2, diffusion=1e-4)
    again = ScenarioConfig.from_dict(cfg.to_dict())
    assert again == cfg and again.digest() == cfg.digest()
    assert ScenarioConfig(max_level=3).digest() != cfg.digest()
