import numpy as np

from causalmix.bart import BartHyper, BartMcmc, fit_continuous_bart
from causalmix.rng import RngStream
from causalmix.trees import (
    CATEGORICAL,
    CONTINUOUS,
    DecisionTree,
    SplitRule,
    forest_from_json,
    forest_to_json,
)


def _grown_tree(n=20):
    rng = RngStream(1)
    x = rng.uniform(size=(n, 2))
    tree = DecisionTree(n)
    rule = SplitRule(0, CONTINUOUS, cutoff=0.5)
    members = np.arange(n)
    go_left = rule.goes_left(x[:, 0])
    tree.grow(tree.root, rule, members, go_left)
    return tree, x, go_left


def test_grow_routes_rows_and_counts():
    tree, x, go_left = _grown_tree()
    assert tree.n_leaves == 2
    assert tree.n_prunable == 1
    assert not tree.is_stump
    left_slot = tree.root.left.slot
    right_slot = tree.root.right.slot
    assert np.all(tree.obs_slot[go_left] == left_slot)
    assert np.all(tree.obs_slot[~go_left] == right_slot)


def test_prune_restores_stump():
    tree, x, _ = _grown_tree()
    tree.prune(tree.root)
    assert tree.is_stump
    assert tree.n_leaves == 1
    assert tree.n_prunable == 0
    assert np.all(tree.obs_slot == tree.root.slot)


def test_two_level_prunable_bookkeeping():
    tree, x, go_left = _grown_tree()
    # split the left child again
    left = tree.root.left
    members = np.flatnonzero(tree.obs_slot == left.slot)
    rule = SplitRule(1, CONTINUOUS, cutoff=0.4)
    gl = rule.goes_left(x[members, 1])
    tree.grow(left, rule, members, gl)
    assert tree.n_leaves == 3
    # root no longer prunable, the grown child is
    assert tree.n_prunable == 1
    assert tree.prunable_nodes() == [left]
    tree.prune(left)
    assert tree.n_prunable == 1
    assert tree.prunable_nodes() == [tree.root]


def test_fits_match_frozen_predictions():
    tree, x, _ = _grown_tree()
    tree.leaf_values[tree.root.left.slot] = 1.5
    tree.leaf_values[tree.root.right.slot] = -2.5
    frozen = tree.freeze()
    assert np.array_equal(tree.fits(), frozen.predict(x))
    assert frozen.n_leaves == 2
    assert list(frozen.rule_vars()) == [0]


def test_partition_property_random_forest():
    rng = RngStream(7)
    x = np.column_stack([
        rng.uniform(size=(120, 3)),
        rng.integers(0, 3, size=120).astype(float),
    ])
    y = rng.standard_normal(120)
    post = fit_continuous_bart(
        x, y, BartHyper(ntree=5), BartMcmc(nskip=20, ndpost=10), RngStream(8),
        var_types=["continuous"] * 3 + ["categorical"],
    )
    xnew = np.column_stack([
        rng.uniform(-0.5, 1.5, size=(200, 3)),
        rng.integers(0, 5, size=200).astype(float),  # includes unseen categories
    ])
    for forest in post.forests:
        for t in forest.trees:
            slots = t.leaf_slot_of(xnew)
            assert np.all(t.var[slots] < 0)  # every row lands in a leaf
            assert np.array_equal(t.value[slots], t.predict(xnew))


def test_categorical_rule_membership():
    rule = SplitRule(2, CATEGORICAL, left_cats=[0.0, 2.0])
    col = np.array([0.0, 1.0, 2.0, 3.0, 0.0])
    assert np.array_equal(rule.goes_left(col), [True, False, True, False, True])


def test_serialization_roundtrip_bit_exact():
    rng = RngStream(21)
    x = np.column_stack([
        rng.uniform(size=(150, 2)),
        rng.integers(0, 4, size=150).astype(float),
    ])
    y = np.sin(3 * x[:, 0]) + x[:, 2] + 0.1 * rng.standard_normal(150)
    post = fit_continuous_bart(
        x, y, BartHyper(ntree=8), BartMcmc(nskip=30, ndpost=12), RngStream(22),
        var_types=["continuous", "continuous", "categorical"],
    )
    text = forest_to_json(post.forests)
    loaded = forest_from_json(text)
    xnew = np.column_stack([
        rng.uniform(size=(60, 2)),
        rng.integers(0, 4, size=60).astype(float),
    ])
    for orig, back in zip(post.forests, loaded):
        assert np.array_equal(orig.predict(xnew), back.predict(xnew))
        assert np.array_equal(orig.predict(x), back.predict(x))
