"""Local low-rank update of a diagonal block.

Adds ``X Y^T`` to the block ``(t, t)`` of an H2-matrix for clusters on every
level and prints the measured work next to the cluster size, then checks the
result against a dense reference.
"""
import numpy as np

from h2arith import (LowRankFactor, TruncationControl, add_lowrank_local, build_block_tree,
                     build_cluster_tree, densify, h2_from_dense)
from h2arith.linalg_core import measure

n, k = 2048, 4
pts = (np.arange(n) + 0.5) / n
tree = build_cluster_tree(pts[:, None], 16)
bt = build_block_tree(tree, tree, 1.0)
x = tree.points[:, 0]
A = np.log(np.abs(x[:, None] - x[None]) + 1.0 / n)
ctl = TruncationControl(1e-8)
G = h2_from_dense(A, bt, ctl)
rng = np.random.default_rng(0)

print(f"{'level':>5} {'|t|':>6} {'work':>12} {'work/|t|':>10} {'error':>10}")
t = 0
while True:
    X, Y = rng.standard_normal((tree.card(t), k)), rng.standard_normal((tree.card(t), k))
    Z = G.copy()
    with measure() as w:
        add_lowrank_local(Z, t, t, LowRankFactor(X, Y), ctl)
    ref = A.copy()
    sl = slice(tree.start[t], tree.stop[t])
    ref[sl, sl] += X @ Y.T
    err = np.linalg.norm(densify(Z) - ref, 2) / np.linalg.norm(ref, 2)
    print(f"{tree.level[t]:5d} {tree.card(t):6d} {w[0]:12.0f} {w[0] / tree.card(t):10.1f} "
          f"{err:10.2e}")
    if tree.is_leaf(t):
        break
    t = tree.sons[t][0]
