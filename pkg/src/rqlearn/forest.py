"""Bagged regression trees on flat arrays.

Trees are grown with variance-reduction splits, per-node feature
subsampling, and bootstrap rows.  All randomness is pre-drawn in Python from
seeded generators, so the jitted kernels are pure functions and identical
results are produced with or without numba (only speed differs).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(f):
            return f

        return wrap


@njit(cache=True)
def _build_tree(x, y, idx, min_leaf, mtry, max_depth, featpool, feat, thr, left, right, value):
    max_nodes = feat.shape[0]
    stack_node = np.empty(max_nodes, dtype=np.int64)
    stack_lo = np.empty(max_nodes, dtype=np.int64)
    stack_hi = np.empty(max_nodes, dtype=np.int64)
    stack_depth = np.empty(max_nodes, dtype=np.int64)

    node_count = 1
    sp = 0
    stack_node[sp] = 0
    stack_lo[sp] = 0
    stack_hi[sp] = idx.shape[0]
    stack_depth[sp] = 0
    sp += 1

    while sp > 0:
        sp -= 1
        nid = stack_node[sp]
        lo = stack_lo[sp]
        hi = stack_hi[sp]
        depth = stack_depth[sp]
        m = hi - lo

        ysub = np.empty(m)
        total = 0.0
        for i in range(m):
            ysub[i] = y[idx[lo + i]]
            total += ysub[i]
        mean = total / m

        feat[nid] = -1
        value[nid] = mean
        if m < 2 * min_leaf or depth >= max_depth or node_count + 2 > max_nodes:
            continue

        best_score = total * total / m
        best_f = -1
        best_thr = 0.0
        vals = np.empty(m)
        for t in range(mtry):
            f = featpool[nid, t]
            for i in range(m):
                vals[i] = x[idx[lo + i], f]
            order = np.argsort(vals)
            sl = 0.0
            prev = vals[order[0]]
            improved = False
            cand_thr = 0.0
            cand_score = best_score
            for i in range(m - 1):
                sl += ysub[order[i]]
                nl = i + 1
                nr = m - nl
                if nr < min_leaf:
                    break
                cur = vals[order[i + 1]]
                if nl < min_leaf or cur == prev:
                    prev = cur
                    continue
                sr = total - sl
                score = sl * sl / nl + sr * sr / nr
                if score > cand_score:
                    cand_score = score
                    cand_thr = 0.5 * (prev + cur)
                    improved = True
                prev = cur
            if improved and cand_score > best_score:
                best_score = cand_score
                best_f = f
                best_thr = cand_thr

        if best_f < 0:
            continue

        # Stable in-place partition of idx[lo:hi] around the threshold.
        buf = np.empty(m, dtype=np.int64)
        nl = 0
        for i in range(m):
            if x[idx[lo + i], best_f] <= best_thr:
                buf[nl] = idx[lo + i]
                nl += 1
        nr = nl
        for i in range(m):
            if x[idx[lo + i], best_f] > best_thr:
                buf[nr] = idx[lo + i]
                nr += 1
        for i in range(m):
            idx[lo + i] = buf[i]

        lid = node_count
        rid = node_count + 1
        node_count += 2
        feat[nid] = best_f
        thr[nid] = best_thr
        left[nid] = lid
        right[nid] = rid

        stack_node[sp] = lid
        stack_lo[sp] = lo
        stack_hi[sp] = lo + nl
        stack_depth[sp] = depth + 1
        sp += 1
        stack_node[sp] = rid
        stack_lo[sp] = lo + nl
        stack_hi[sp] = hi
        stack_depth[sp] = depth + 1
        sp += 1

    return node_count


@njit(cache=True)
def _predict_forest(feat, thr, left, right, value, roots, x, out):
    n_trees = roots.shape[0]
    for t in range(n_trees):
        root = roots[t]
        for i in range(x.shape[0]):
            nid = root
            while feat[nid] >= 0:
                if x[i, feat[nid]] <= thr[nid]:
                    nid = left[nid]
                else:
                    nid = right[nid]
            out[i] += value[nid]
    for i in range(x.shape[0]):
        out[i] /= n_trees


@dataclass(frozen=True)
class Forest:
    """All trees stacked into flat arrays; child ids are absolute offsets."""

    feat: np.ndarray
    thr: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    roots: np.ndarray
    n_features: int

    @staticmethod
    def fit(X, y, n_trees: int, min_leaf: int, mtry: int, max_depth: int, seed: int) -> "Forest":
        x = np.ascontiguousarray(X, dtype=np.float64)
        yv = np.ascontiguousarray(y, dtype=np.float64)
        n, d = x.shape
        max_nodes = max(8, 4 * (n // max(min_leaf, 1)) + 8)
        parts: List[tuple] = []
        base_feats = np.arange(d, dtype=np.int64)
        for t in range(n_trees):
            rng = np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, t]))
            idx = rng.integers(0, n, size=n).astype(np.int64)
            featpool = rng.permuted(np.broadcast_to(base_feats, (max_nodes, d)), axis=1)
            feat = np.full(max_nodes, -1, dtype=np.int64)
            thr = np.zeros(max_nodes)
            left = np.zeros(max_nodes, dtype=np.int64)
            right = np.zeros(max_nodes, dtype=np.int64)
            value = np.zeros(max_nodes)
            count = _build_tree(
                x, yv, idx, min_leaf, mtry, max_depth,
                np.ascontiguousarray(featpool), feat, thr, left, right, value,
            )
            parts.append((feat[:count], thr[:count], left[:count], right[:count], value[:count]))

        roots = np.zeros(n_trees, dtype=np.int64)
        offset = 0
        for t, (feat, _, left, right, _) in enumerate(parts):
            roots[t] = offset
            internal = feat >= 0
            left[internal] += offset
            right[internal] += offset
            offset += feat.shape[0]
        return Forest(
            feat=np.concatenate([p[0] for p in parts]),
            thr=np.concatenate([p[1] for p in parts]),
            left=np.concatenate([p[2] for p in parts]),
            right=np.concatenate([p[3] for p in parts]),
            value=np.concatenate([p[4] for p in parts]),
            roots=roots,
            n_features=d,
        )

    def predict(self, X) -> np.ndarray:
        x = np.ascontiguousarray(X, dtype=np.float64)
        out = np.zeros(x.shape[0])
        _predict_forest(self.feat, self.thr, self.left, self.right, self.value, self.roots, x, out)
        return out
