"""Binary regression trees grown by exhaustive variance-reduction split search.

The same grower backs the quantile boosting ensemble and the quantile
regression forest. Every leaf keeps the training-row indices that reached it,
which boosting uses for quantile leaf updates and forests use for CDF queries.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Optional

import numpy as np
from numba import njit

__all__ = ["TreeParams", "Tree", "grow", "route"]


@dataclass(frozen=True)
class TreeParams:
    """Growth controls for a single tree.

    ``max_depth=None`` grows until nodes can no longer be split.
    ``features_per_split=None`` searches every feature at every node.
    """

    max_depth: Optional[int] = None
    min_node: int = 1
    features_per_split: Optional[int] = None
    rng_seed: int = 0

    def __post_init__(self):
        if self.min_node < 1:
            raise ValueError(f"min_node must be >= 1, got {self.min_node}")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError(f"max_depth must be >= 0 or None, got {self.max_depth}")
        if self.features_per_split is not None and self.features_per_split < 1:
            raise ValueError("features_per_split must be >= 1")

    def resolved_features(self, n_features: int) -> int:
        k = n_features if self.features_per_split is None else self.features_per_split
        if not 1 <= k <= n_features:
            raise ValueError(
                f"features_per_split={k} outside 1..{n_features}"
            )
        return k


@dataclass(frozen=True, eq=False)
class Tree:
    """Array-encoded binary tree.

    Node ``i`` is a leaf iff ``feature[i] == -1``. Leaf members live in
    ``members[leaf_start[i]:leaf_start[i] + leaf_size[i]]``; for internal nodes
    both fields are -1 and 0.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    leaf_start: np.ndarray
    leaf_size: np.ndarray
    members: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.feature.shape[0])

    @property
    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.feature < 0)

    def is_leaf(self, node: int) -> bool:
        return bool(self.feature[node] < 0)

    def leaf_members(self, node: int) -> np.ndarray:
        s = self.leaf_start[node]
        if s < 0:
            raise ValueError(f"node {node} is not a leaf")
        return self.members[s:s + self.leaf_size[node]]

    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[i] + 1
                depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, X) -> np.ndarray:
        """Leaf index reached by every row of ``X``."""
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        return _apply(X, self.feature, self.threshold, self.left, self.right)

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def with_values(self, value: np.ndarray) -> "Tree":
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self.value.shape:
            raise ValueError("value array must have one entry per node")
        return Tree(self.feature, self.threshold, self.left, self.right, value,
                    self.leaf_start, self.leaf_size, self.members)

    def to_dict(self, include_members: bool = True) -> dict[str, Any]:
        """JSON-ready node list with explicit child indices."""
        nodes = []
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                nodes.append({
                    "id": i,
                    "feature": int(self.feature[i]),
                    "threshold": float(self.threshold[i]),
                    "left": int(self.left[i]),
                    "right": int(self.right[i]),
                    "value": float(self.value[i]),
                })
            else:
                node = {"id": i, "value": float(self.value[i]),
                        "n": int(self.leaf_size[i])}
                if include_members:
                    node["members"] = [int(j) for j in self.leaf_members(i)]
                nodes.append(node)
        return {"nodes": nodes}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Tree":
        nodes = sorted(d["nodes"], key=lambda n: n["id"])
        n = len(nodes)
        feature = np.full(n, -1, dtype=np.int32)
        threshold = np.zeros(n)
        left = np.full(n, -1, dtype=np.int32)
        right = np.full(n, -1, dtype=np.int32)
        value = np.zeros(n)
        leaf_start = np.full(n, -1, dtype=np.int64)
        leaf_size = np.zeros(n, dtype=np.int64)
        members: list[int] = []
        for i, node in enumerate(nodes):
            if node["id"] != i:
                raise ValueError("tree node ids must be 0..n-1")
            value[i] = node["value"]
            if "feature" in node:
                feature[i] = node["feature"]
                threshold[i] = node["threshold"]
                left[i] = node["left"]
                right[i] = node["right"]
            else:
                leaf_start[i] = len(members)
                mem = node.get("members")
                if mem is None:
                    leaf_size[i] = node.get("n", 0)
                    leaf_start[i] = -1 if leaf_size[i] == 0 else len(members)
                    members.extend([-1] * int(leaf_size[i]))
                else:
                    leaf_size[i] = len(mem)
                    members.extend(mem)
        return cls(feature, threshold, left, right, value, leaf_start, leaf_size,
                   np.asarray(members, dtype=np.int32))


def grow(x_matrix, target, row_subset=None, params: TreeParams = TreeParams()) -> Tree:
    """Grow one regression tree on ``row_subset`` of the training matrix.

    Each split maximises the reduction in the sum of squared deviations of
    ``target`` over midpoints between consecutive distinct feature values.
    Ties go to the lowest feature index, then the smallest threshold. Row
    indices may repeat (bootstrap samples); repeats count as separate members.
    """
    X = np.ascontiguousarray(x_matrix, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("x_matrix must be two-dimensional")
    t = np.ascontiguousarray(target, dtype=np.float64)
    if t.shape[0] != X.shape[0]:
        raise ValueError("target length does not match x_matrix rows")
    if row_subset is None:
        rows = np.arange(X.shape[0], dtype=np.int32)
    else:
        rows = np.ascontiguousarray(row_subset, dtype=np.int32)
    if rows.size == 0:
        raise ValueError("row_subset is empty")
    if not (np.all(np.isfinite(X[rows])) and np.all(np.isfinite(t[rows]))):
        raise ValueError("missing or non-finite values in the referenced rows")
    k = params.resolved_features(X.shape[1])
    depth = -1 if params.max_depth is None else int(params.max_depth)
    arrays = _grow(X, t, rows, depth, int(params.min_node), int(k),
                   int(params.rng_seed) & 0x7FFFFFFF)
    return Tree(*arrays)


def route(tree: Tree, x) -> int:
    """Leaf reached by a single feature vector (``x <= threshold`` goes left)."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    return int(tree.apply(x)[0])


@njit(cache=True)
def _apply(X, feature, threshold, left, right):
    n = X.shape[0]
    out = np.empty(n, dtype=np.int32)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@njit(cache=True)
def _grow(X, target, rows, max_depth, min_node, n_sub, seed):
    np.random.seed(seed)
    m = rows.shape[0]
    p = X.shape[1]
    cap = 2 * m + 1
    feature = np.full(cap, -1, dtype=np.int32)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int32)
    right = np.full(cap, -1, dtype=np.int32)
    value = np.zeros(cap)
    leaf_start = np.full(cap, -1, dtype=np.int64)
    leaf_size = np.zeros(cap, dtype=np.int64)

    work = rows.copy()
    buf = np.empty(m, dtype=np.int32)
    feats = np.arange(p)
    st_node = np.empty(cap, dtype=np.int64)
    st_start = np.empty(cap, dtype=np.int64)
    st_end = np.empty(cap, dtype=np.int64)
    st_depth = np.empty(cap, dtype=np.int64)
    sp = 0
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = m
    st_depth[0] = 0
    sp = 1
    n_nodes = 1

    while sp > 0:
        sp -= 1
        node = st_node[sp]
        s = st_start[sp]
        e = st_end[sp]
        d = st_depth[sp]
        n = e - s

        total = 0.0
        for i in range(s, e):
            total += target[work[i]]
        mean = total / n
        value[node] = mean

        best_gain = 0.0
        best_f = -1
        best_thr = 0.0
        if (max_depth < 0 or d < max_depth) and n >= 2 * min_node:
            tc = np.empty(n)
            sse = 0.0
            ssum = 0.0
            for i in range(n):
                tc[i] = target[work[s + i]] - mean
                sse += tc[i] * tc[i]
                ssum += tc[i]
            if n_sub < p:
                for i in range(p):
                    feats[i] = i
                for i in range(n_sub):
                    j = i + np.random.randint(0, p - i)
                    tmp = feats[i]
                    feats[i] = feats[j]
                    feats[j] = tmp
                chosen = np.sort(feats[:n_sub].copy())
            else:
                chosen = np.arange(p)
            vals = np.empty(n)
            for fi in range(chosen.shape[0]):
                f = chosen[fi]
                for i in range(n):
                    vals[i] = X[work[s + i], f]
                order = np.argsort(vals, kind="mergesort")
                cum = 0.0
                for k in range(1, n):
                    cum += tc[order[k - 1]]
                    if k < min_node or n - k < min_node:
                        continue
                    lo = vals[order[k - 1]]
                    hi = vals[order[k]]
                    if lo == hi:
                        continue
                    rest = ssum - cum
                    gain = cum * cum / k + rest * rest / (n - k) - ssum * ssum / n
                    if gain > best_gain * (1.0 + 1e-12):
                        best_gain = gain
                        best_f = f
                        thr = 0.5 * (lo + hi)
                        if not (lo <= thr < hi):
                            thr = lo
                        best_thr = thr
            if best_f >= 0 and not (best_gain > 1e-12 * sse):
                best_f = -1

        if best_f < 0:
            leaf_start[node] = s
            leaf_size[node] = n
            continue

        # stable partition of work[s:e] around the threshold
        nl = 0
        for i in range(s, e):
            if X[work[i], best_f] <= best_thr:
                work[s + nl] = work[i]
                nl += 1
            else:
                buf[i - s - nl] = work[i]
        for i in range(n - nl):
            work[s + nl + i] = buf[i]

        feature[node] = best_f
        threshold[node] = best_thr
        li = n_nodes
        ri = n_nodes + 1
        n_nodes += 2
        left[node] = li
        right[node] = ri
        # right pushed first so the left subtree is expanded first
        st_node[sp] = ri
        st_start[sp] = s + nl
        st_end[sp] = e
        st_depth[sp] = d + 1
        sp += 1
        st_node[sp] = li
        st_start[sp] = s
        st_end[sp] = s + nl
        st_depth[sp] = d + 1
        sp += 1

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(),
            left[:n_nodes].copy(), right[:n_nodes].copy(),
            value[:n_nodes].copy(), leaf_start[:n_nodes].copy(),
            leaf_size[:n_nodes].copy(), work)
