"""Cluster trees and block trees.

Clusters are numbered in pre-order, so the subtree rooted at ``t`` is the
contiguous id range ``t .. tree.last[t] - 1``; ascending ids visit fathers
before sons and descending ids visit sons before fathers.  Indices are
permuted once at construction so that every cluster owns a contiguous range
``start[t]:stop[t]`` of the permuted index set.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = [
    "ADMISSIBLE",
    "INADMISSIBLE",
    "SUBDIVIDED",
    "BlockTree",
    "ClusterTree",
    "build_block_tree",
    "build_cluster_tree",
    "sparsity_constant",
]

SUBDIVIDED, ADMISSIBLE, INADMISSIBLE = 0, 1, 2
_KIND_NAMES = {SUBDIVIDED: "subdivided", ADMISSIBLE: "admissible", INADMISSIBLE: "inadmissible"}


@dataclass
class ClusterTree:
    points: np.ndarray                 # characteristic points in permuted order
    perm: np.ndarray                   # perm[i] = original index at tree position i
    start: list = field(default_factory=list)
    stop: list = field(default_factory=list)
    sons: list = field(default_factory=list)
    father: list = field(default_factory=list)
    level: list = field(default_factory=list)
    last: list = field(default_factory=list)
    lo: Optional[np.ndarray] = None
    hi: Optional[np.ndarray] = None
    # "pair" marks a father whose two sons are subdomains decoupled by a
    # separator (nested dissection); everything else is "geo"
    split: list = field(default_factory=list)

    root = 0

    @property
    def n(self) -> int:
        return len(self.perm)

    @property
    def size(self) -> int:
        return len(self.start)

    @property
    def depth(self) -> int:
        return max(self.level)

    def card(self, t: int) -> int:
        return self.stop[t] - self.start[t]

    def is_leaf(self, t: int) -> bool:
        return not self.sons[t]

    def sons_plus(self, t: int) -> tuple:
        return self.sons[t] or (t,)

    def leaves(self) -> list:
        return [t for t in range(self.size) if not self.sons[t]]

    def in_subtree(self, t: int, root: int) -> bool:
        return root <= t < self.last[root]

    def subtree(self, root: int) -> range:
        return range(root, self.last[root])

    def pred(self, t: int) -> list:
        """``t`` and all its ancestors, from ``t`` up to the root."""
        out = [t]
        while self.father[t] >= 0:
            t = self.father[t]
            out.append(t)
        return out

    def diam(self, t: int) -> float:
        return float(np.linalg.norm(self.hi[t] - self.lo[t]))

    def dist(self, t: int, s: int) -> float:
        gap = np.maximum(0.0, np.maximum(self.lo[t] - self.hi[s], self.lo[s] - self.hi[t]))
        return float(np.linalg.norm(gap))

    def to_json(self) -> str:
        """Debug dump: one record per node with id, index range, box and sons."""
        nodes = [
            {"id": t, "range": [self.start[t], self.stop[t]], "sons": list(self.sons[t]),
             "box": [self.lo[t].tolist(), self.hi[t].tolist()], "split": self.split[t]}
            for t in range(self.size)
        ]
        return json.dumps({"format": "h2arith-cluster-tree", "version": 1, "n": self.n,
                           "perm": self.perm.tolist(), "nodes": nodes})


def _separator_split(pts: np.ndarray, axis: int):
    """Split on the middle grid line along ``axis``; the line itself is the separator."""
    vals = np.unique(pts[:, axis])
    if vals.size < 3:
        return None
    mid = vals[vals.size // 2]
    tol = 1e-10 * max(1.0, abs(mid))
    left = np.nonzero(pts[:, axis] < mid - tol)[0]
    right = np.nonzero(pts[:, axis] > mid + tol)[0]
    sep = np.nonzero(np.abs(pts[:, axis] - mid) <= tol)[0]
    if not left.size or not right.size or not sep.size:
        return None
    return left, right, sep


def _bisect(pts: np.ndarray, axis: int, lo: np.ndarray, hi: np.ndarray):
    mid = 0.5 * (lo[axis] + hi[axis])
    mask = pts[:, axis] <= mid
    left, right = np.nonzero(mask)[0], np.nonzero(~mask)[0]
    if not left.size or not right.size:
        order = np.argsort(pts[:, axis], kind="stable")
        h = len(order) // 2
        left, right = np.sort(order[:h]), np.sort(order[h:])
    return left, right


def build_cluster_tree(points, leaf_size: int = 32, strategy: str = "geometric_bisection",
                       support: float = 0.0) -> ClusterTree:
    """Build a binary cluster tree over ``points`` (shape ``n x d``).

    ``strategy="geometric_bisection"`` halves the bounding box along its
    longest side.  ``strategy="dd"`` applies nested dissection for points on
    a regular grid: a domain is split into a pair node holding the two
    subdomains and a separator cluster (the middle grid line), separators
    are then bisected geometrically.

    ``support`` pads every bounding box by that radius, so boxes cover the
    supports of the basis functions attached to the points (mesh width for
    nodal finite elements) and neighbouring supports never look separated.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.shape[0] == 0:
        raise ValueError("cannot build a cluster tree over an empty index set")
    if leaf_size < 1:
        raise ValueError("leaf_size must be at least 1")
    if support < 0:
        raise ValueError("support radius must be non-negative")
    if strategy not in ("geometric_bisection", "dd"):
        raise ValueError(f"unknown clustering strategy {strategy!r}")

    order: list = []
    tree = ClusterTree(points=None, perm=None)
    los, his = [], []

    def new_node(idx, father, level, split="geo"):
        t = tree.size
        tree.start.append(len(order))
        tree.stop.append(len(order))
        tree.sons.append(())
        tree.father.append(father)
        tree.level.append(level)
        tree.last.append(t + 1)
        tree.split.append(split)
        sub = pts[idx]
        los.append(sub.min(axis=0) - support)
        his.append(sub.max(axis=0) + support)
        return t

    def finish(t):
        tree.stop[t] = len(order)
        tree.last[t] = tree.size

    def grow(idx, father, level, domain):
        t = new_node(idx, father, level)
        if len(idx) <= leaf_size:
            order.extend(idx.tolist())
            finish(t)
            return t
        sub = pts[idx]
        axis = int(np.argmax(sub.max(axis=0) - sub.min(axis=0)))
        parts = _separator_split(sub, axis) if domain else None
        if parts is not None:
            left, right, sep = parts
            pair_idx = idx[np.concatenate([left, right])]
            p = new_node(pair_idx, t, level + 1, split="pair")
            a = grow(idx[left], p, level + 2, True)
            b = grow(idx[right], p, level + 2, True)
            tree.sons[p] = (a, b)
            finish(p)
            c = grow(idx[sep], t, level + 1, False)
            tree.sons[t] = (p, c)
        else:
            lo, hi = sub.min(axis=0), sub.max(axis=0)
            left, right = _bisect(sub, axis, lo, hi)
            a = grow(idx[left], t, level + 1, domain)
            b = grow(idx[right], t, level + 1, domain)
            tree.sons[t] = (a, b)
        finish(t)
        return t

    grow(np.arange(pts.shape[0]), -1, 0, strategy == "dd")
    tree.perm = np.asarray(order, dtype=np.int64)
    tree.points = pts[tree.perm]
    tree.lo = np.asarray(los)
    tree.hi = np.asarray(his)
    return tree


class BlockTree:
    """Block tree over ``rows x cols`` with admissible/inadmissible leaves."""

    def __init__(self, rows: ClusterTree, cols: ClusterTree, eta: float):
        self.rows = rows
        self.cols = cols
        self.eta = float(eta)
        self.t: list = []
        self.s: list = []
        self.kind: list = []
        self.sons: list = []
        self.lookup: dict = {}
        self.row_adm = [[] for _ in range(rows.size)]
        self.col_adm = [[] for _ in range(cols.size)]
        self.row_near = [[] for _ in range(rows.size)]
        self.col_near = [[] for _ in range(cols.size)]
        self._leaf_cache: dict = {}
        self.csp = 0

    root = 0

    @property
    def size(self) -> int:
        return len(self.t)

    def block(self, t: int, s: int) -> int:
        return self.lookup[(t, s)]

    def kind_of(self, t: int, s: int) -> int:
        return self.kind[self.lookup[(t, s)]]

    def admissible_leaves(self) -> list:
        return [(self.t[b], self.s[b]) for b in range(self.size) if self.kind[b] == ADMISSIBLE]

    def inadmissible_leaves(self) -> list:
        return [(self.t[b], self.s[b]) for b in range(self.size) if self.kind[b] == INADMISSIBLE]

    def leaves_below(self, b: int):
        """Admissible and inadmissible leaves of the block subtree rooted at ``b``."""
        hit = self._leaf_cache.get(b)
        if hit is not None:
            return hit
        adm, near = [], []
        stack = [b]
        while stack:
            c = stack.pop()
            k = self.kind[c]
            if k == ADMISSIBLE:
                adm.append((self.t[c], self.s[c]))
            elif k == INADMISSIBLE:
                near.append((self.t[c], self.s[c]))
            else:
                stack.extend(reversed(self.sons[c]))
        hit = (adm, near)
        self._leaf_cache[b] = hit
        return hit

    def kind_name(self, b: int) -> str:
        return _KIND_NAMES[self.kind[b]]

    @property
    def is_square(self) -> bool:
        return self.rows is self.cols


def _admissible(rows: ClusterTree, cols: ClusterTree, t: int, s: int, eta: float) -> bool:
    if rows is cols and t != s:
        ft = rows.father[t]
        if ft >= 0 and ft == rows.father[s] and rows.split[ft] == "pair":
            return True
    d = rows.dist(t, s) if rows is cols else _cross_dist(rows, cols, t, s)
    if d <= 0.0:
        return False
    return max(rows.diam(t), cols.diam(s)) <= eta * d


def _cross_dist(rows, cols, t, s):
    gap = np.maximum(0.0, np.maximum(rows.lo[t] - cols.hi[s], cols.lo[s] - rows.hi[t]))
    return float(np.linalg.norm(gap))


def build_block_tree(rows: ClusterTree, cols: ClusterTree, eta: float = 2.0) -> BlockTree:
    """Block tree using ``max(diam t, diam s) <= eta * dist(t, s)`` on bounding boxes.

    Siblings below a nested-dissection pair node are admissible as well:
    the separator decouples them exactly.  Inadmissible leaves are only
    created when both clusters are leaves.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    bt = BlockTree(rows, cols, eta)
    stack = [(rows.root, cols.root, -1)]
    while stack:
        t, s, parent = stack.pop()
        b = bt.size
        bt.t.append(t)
        bt.s.append(s)
        bt.sons.append([])
        bt.lookup[(t, s)] = b
        if parent >= 0:
            bt.sons[parent].append(b)
        if _admissible(rows, cols, t, s, eta):
            bt.kind.append(ADMISSIBLE)
            bt.row_adm[t].append(s)
            bt.col_adm[s].append(t)
        elif rows.is_leaf(t) and cols.is_leaf(s):
            bt.kind.append(INADMISSIBLE)
            bt.row_near[t].append(s)
            bt.col_near[s].append(t)
        else:
            bt.kind.append(SUBDIVIDED)
            kids = [(t2, s2) for t2 in rows.sons_plus(t) for s2 in cols.sons_plus(s)]
            for t2, s2 in reversed(kids):
                stack.append((t2, s2, b))
    for lst in (bt.row_adm, bt.col_adm, bt.row_near, bt.col_near):
        for x in lst:
            x.sort()
    bt.csp = sparsity_constant(bt)
    return bt


def sparsity_constant(bt: BlockTree) -> int:
    """Largest number of blocks sharing one row cluster or one column cluster."""
    row_count = np.zeros(bt.rows.size, dtype=np.int64)
    col_count = np.zeros(bt.cols.size, dtype=np.int64)
    np.add.at(row_count, np.asarray(bt.t), 1)
    np.add.at(col_count, np.asarray(bt.s), 1)
    return int(max(row_count.max(), col_count.max()))
