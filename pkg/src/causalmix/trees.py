"""Binary decision trees for the sum-of-trees sampler.

Two representations: a mutable :class:`DecisionTree` that the backfitter
grows and prunes in place while tracking which training row sits in which
leaf, and an immutable :class:`FrozenTree` (flat arrays) snapshotted into
posteriors, used for prediction and serialization.
"""

from __future__ import annotations

import json
from typing import Optional

import numpy as np

__all__ = [
    "SplitRule",
    "Node",
    "DecisionTree",
    "FrozenTree",
    "FrozenForest",
    "forest_to_json",
    "forest_from_json",
]

CONTINUOUS = 0
CATEGORICAL = 1


class SplitRule:
    """A routing rule: ``x[var] < cutoff`` or ``x[var] in left_cats`` goes left."""

    __slots__ = ("var", "kind", "cutoff", "left_cats", "accept_ratio")

    def __init__(self, var: int, kind: int, cutoff: float = np.nan, left_cats=None):
        self.var = int(var)
        self.kind = int(kind)
        self.cutoff = float(cutoff)
        self.left_cats = None if left_cats is None else frozenset(float(c) for c in left_cats)
        # capped Metropolis ratio of the grow that installed this rule
        self.accept_ratio = np.nan
        if self.kind == CATEGORICAL and not self.left_cats:
            raise ValueError("categorical rule needs a nonempty left set")

    def goes_left(self, col: np.ndarray) -> np.ndarray:
        if self.kind == CONTINUOUS:
            return col < self.cutoff
        return np.isin(col, list(self.left_cats))

    def __repr__(self):
        if self.kind == CONTINUOUS:
            return f"SplitRule(x{self.var} < {self.cutoff:g})"
        return f"SplitRule(x{self.var} in {sorted(self.left_cats)})"


class Node:
    __slots__ = ("depth", "parent", "rule", "left", "right", "slot")

    def __init__(self, depth: int, parent: Optional["Node"] = None, slot: int = -1):
        self.depth = depth
        self.parent = parent
        self.rule: Optional[SplitRule] = None
        self.left: Optional[Node] = None
        self.right: Optional[Node] = None
        self.slot = slot  # leaf slot id; -1 for internal nodes

    @property
    def is_leaf(self) -> bool:
        return self.rule is None


class DecisionTree:
    """Mutable tree tracking training-row membership per leaf.

    ``obs_slot[i]`` is the leaf slot holding row ``i``; ``leaf_values`` is
    indexed by slot.  Slots are recycled through a free list so bincount
    reductions over slots stay dense.
    """

    def __init__(self, n_obs: int):
        self.root = Node(depth=0, slot=0)
        self.slots: list = [self.root]
        self.free: list = []
        self.leaf_values = np.zeros(8)
        self.obs_slot = np.zeros(n_obs, dtype=np.intp)
        self.n_leaves = 1
        self.n_prunable = 0  # internal nodes with two leaf children

    # -- queries ---------------------------------------------------------
    @property
    def is_stump(self) -> bool:
        return self.root.is_leaf

    def leaf_nodes(self) -> list:
        return [nd for nd in self.slots if nd is not None]

    def prunable_nodes(self) -> list:
        out = []
        stack = [self.root]
        while stack:
            nd = stack.pop()
            if nd.is_leaf:
                continue
            if nd.left.is_leaf and nd.right.is_leaf:
                out.append(nd)
            else:
                stack.append(nd.left)
                stack.append(nd.right)
        return out

    def fits(self) -> np.ndarray:
        """Per-row prediction of this tree on the training data."""
        return self.leaf_values[self.obs_slot]

    # -- mutations -------------------------------------------------------
    def _new_slot(self, node: Node) -> int:
        if self.free:
            s = self.free.pop()
            self.slots[s] = node
        else:
            s = len(self.slots)
            self.slots.append(node)
            if s >= self.leaf_values.shape[0]:
                self.leaf_values = np.concatenate(
                    [self.leaf_values, np.zeros(self.leaf_values.shape[0])]
                )
        self.leaf_values[s] = 0.0
        return s

    def grow(self, node: Node, rule: SplitRule, members: np.ndarray, go_left: np.ndarray):
        """Split leaf ``node`` by ``rule``; ``members``/``go_left`` route rows."""
        parent_was_prunable = (
            node.parent is not None
            and node.parent.left.is_leaf
            and node.parent.right.is_leaf
        )
        slot_l = node.slot
        node.rule = rule
        node.slot = -1
        node.left = Node(node.depth + 1, parent=node, slot=slot_l)
        self.slots[slot_l] = node.left
        node.right = Node(node.depth + 1, parent=node)
        slot_r = self._new_slot(node.right)
        node.right.slot = slot_r
        self.obs_slot[members[~go_left]] = slot_r
        self.leaf_values[slot_l] = 0.0
        self.n_leaves += 1
        self.n_prunable += 1 - (1 if parent_was_prunable else 0)

    def prune(self, node: Node):
        """Collapse an internal node whose children are both leaves."""
        slot_l, slot_r = node.left.slot, node.right.slot
        self.obs_slot[self.obs_slot == slot_r] = slot_l
        self.slots[slot_r] = None
        self.free.append(slot_r)
        node.rule = None
        node.left = None
        node.right = None
        node.slot = slot_l
        self.slots[slot_l] = node
        self.leaf_values[slot_l] = 0.0
        self.n_leaves -= 1
        parent_now_prunable = (
            node.parent is not None
            and node.parent.left.is_leaf
            and node.parent.right.is_leaf
        )
        self.n_prunable += (1 if parent_now_prunable else 0) - 1

    def freeze(self) -> "FrozenTree":
        """Snapshot to flat arrays (preorder node layout)."""
        nodes = []
        stack = [(self.root, -1, 0)]  # node, parent index, side (0 left/1 right)
        order = []
        while stack:
            nd, pidx, side = stack.pop()
            idx = len(order)
            order.append((nd, pidx, side))
            if not nd.is_leaf:
                stack.append((nd.right, idx, 1))
                stack.append((nd.left, idx, 0))
        m = len(order)
        var = np.full(m, -1, dtype=np.int32)
        kind = np.full(m, -1, dtype=np.int8)
        cut = np.full(m, np.nan)
        cats: list = [None] * m
        left = np.full(m, -1, dtype=np.int32)
        right = np.full(m, -1, dtype=np.int32)
        value = np.zeros(m)
        for idx, (nd, pidx, side) in enumerate(order):
            if pidx >= 0:
                (left if side == 0 else right)[pidx] = idx
            if nd.is_leaf:
                value[idx] = self.leaf_values[nd.slot]
            else:
                var[idx] = nd.rule.var
                kind[idx] = nd.rule.kind
                if nd.rule.kind == CONTINUOUS:
                    cut[idx] = nd.rule.cutoff
                else:
                    cats[idx] = nd.rule.left_cats
        return FrozenTree(var, kind, cut, cats, left, right, value)


class FrozenTree:
    """Immutable flat-array tree: node 0 is the root; var < 0 marks leaves."""

    __slots__ = ("var", "kind", "cut", "cats", "left", "right", "value")

    def __init__(self, var, kind, cut, cats, left, right, value):
        self.var = var
        self.kind = kind
        self.cut = cut
        self.cats = cats
        self.left = left
        self.right = right
        self.value = value

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.var < 0))

    def rule_vars(self) -> np.ndarray:
        return self.var[self.var >= 0]

    def predict(self, x: np.ndarray) -> np.ndarray:
        out = np.empty(x.shape[0])
        stack = [(0, np.arange(x.shape[0]))]
        while stack:
            idx, rows = stack.pop()
            if rows.size == 0:
                continue
            v = self.var[idx]
            if v < 0:
                out[rows] = self.value[idx]
                continue
            col = x[rows, v]
            if self.kind[idx] == CONTINUOUS:
                go_left = col < self.cut[idx]
            else:
                go_left = np.isin(col, list(self.cats[idx]))
            stack.append((self.left[idx], rows[go_left]))
            stack.append((self.right[idx], rows[~go_left]))
        return out

    def leaf_slot_of(self, x: np.ndarray) -> np.ndarray:
        """Index of the node each row lands in (for partition checks)."""
        out = np.empty(x.shape[0], dtype=np.int64)
        stack = [(0, np.arange(x.shape[0]))]
        while stack:
            idx, rows = stack.pop()
            if rows.size == 0:
                continue
            v = self.var[idx]
            if v < 0:
                out[rows] = idx
                continue
            col = x[rows, v]
            if self.kind[idx] == CONTINUOUS:
                go_left = col < self.cut[idx]
            else:
                go_left = np.isin(col, list(self.cats[idx]))
            stack.append((self.left[idx], rows[go_left]))
            stack.append((self.right[idx], rows[~go_left]))
        return out


class FrozenForest:
    """A kept posterior draw: M frozen trees summed for prediction."""

    __slots__ = ("trees",)

    def __init__(self, trees: list):
        self.trees = trees

    def predict(self, x: np.ndarray) -> np.ndarray:
        per_tree = np.stack([t.predict(x) for t in self.trees])
        return np.sum(per_tree, axis=0)

    def rule_counts(self, p: int) -> np.ndarray:
        counts = np.zeros(p, dtype=np.int64)
        for t in self.trees:
            np.add.at(counts, t.rule_vars(), 1)
        return counts


# -------------------------------------------------------------- serialization

def _tree_to_records(tree: FrozenTree) -> list:
    records = []
    m = tree.var.shape[0]
    parent = np.full(m, -1, dtype=int)
    side = np.full(m, "", dtype=object)
    for i in range(m):
        if tree.var[i] >= 0:
            parent[tree.left[i]] = i
            side[tree.left[i]] = "L"
            parent[tree.right[i]] = i
            side[tree.right[i]] = "R"
    for i in range(m):
        rec = {"id": int(i), "parent": int(parent[i])}
        if parent[i] >= 0:
            rec["side"] = side[i]
        if tree.var[i] >= 0:
            rec["var"] = int(tree.var[i])
            if tree.kind[i] == CONTINUOUS:
                rec["kind"] = "continuous"
                rec["cutoff"] = float(tree.cut[i])
            else:
                rec["kind"] = "categorical"
                rec["left_cats"] = sorted(float(c) for c in tree.cats[i])
        else:
            rec["value"] = float(tree.value[i])
        records.append(rec)
    return records


def _tree_from_records(records: list) -> FrozenTree:
    m = len(records)
    var = np.full(m, -1, dtype=np.int32)
    kind = np.full(m, -1, dtype=np.int8)
    cut = np.full(m, np.nan)
    cats: list = [None] * m
    left = np.full(m, -1, dtype=np.int32)
    right = np.full(m, -1, dtype=np.int32)
    value = np.zeros(m)
    for rec in records:
        i = rec["id"]
        if "var" in rec:
            var[i] = rec["var"]
            if rec["kind"] == "continuous":
                kind[i] = CONTINUOUS
                cut[i] = rec["cutoff"]
            else:
                kind[i] = CATEGORICAL
                cats[i] = frozenset(rec["left_cats"])
        else:
            value[i] = rec["value"]
        if rec["parent"] >= 0:
            if rec["side"] == "L":
                left[rec["parent"]] = i
            else:
                right[rec["parent"]] = i
    return FrozenTree(var, kind, cut, cats, left, right, value)


def forest_to_json(forests: list) -> str:
    """Serialize kept forests to a JSON string (list of draws, each a list of trees)."""
    payload = [[_tree_to_records(t) for t in f.trees] for f in forests]
    return json.dumps(payload)


def forest_from_json(text: str) -> list:
    payload = json.loads(text)
    return [FrozenForest([_tree_from_records(r) for r in trees]) for trees in payload]
