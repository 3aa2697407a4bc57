"""Numba kernels for exact greedy tree construction and traversal.

The build kernel works level by level on pre-sorted columns: per feature it
regroups the globally value-sorted row order by node (stable counting sort),
scans each node's segment once for the best threshold, then partitions rows.
Split statistics are accumulated sequentially in value-sorted order so that
gains are bit-identical to a plain enumeration over sorted values.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def scan_split_segment(XT, g, h, seg, c, lam, gamma, mch):
    """Best (gain, threshold) for one node at one feature.

    ``XT`` is the feature-major (m x n) matrix; ``seg`` holds the node's rows
    sorted by feature c's value (ties in row order).
    Candidates are midpoints between consecutive distinct values; children
    whose hessian sum falls below ``mch`` are skipped. Returns gain -inf when
    no candidate exists.
    """
    sz = seg.shape[0]
    Gj = 0.0
    Hj = 0.0
    for t in range(sz):
        r = seg[t]
        Gj += g[r]
        Hj += h[r]
    best = -np.inf
    bthr = 0.0
    gl = 0.0
    hl = 0.0
    for t in range(sz - 1):
        r = seg[t]
        gl += g[r]
        hl += h[r]
        v = XT[c, r]
        v2 = XT[c, seg[t + 1]]
        if v == v2:
            continue
        hr = Hj - hl
        if hl < mch or hr < mch:
            continue
        gr = Gj - gl
        tot = gl + gr
        cand = (
            0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam) - tot * tot / (hl + hr + lam))
            - gamma
        )
        if cand > best:
            best = cand
            bthr = 0.5 * (v + v2)
    return best, bthr


@njit(cache=True)
def build_tree_arrays(XT, g, h, col_order, row_mask, cols, max_depth, lam, gamma, mch):
    """Grow one tree; returns (feature, threshold, left, right, weight, gain) arrays.

    Node 0 is the root; internal nodes have feature >= 0, leaves carry the
    regularized weight -G/(H+lam). Children are appended in creation order.
    """
    n = XT.shape[1]
    n_sub = 0
    for i in range(n):
        if row_mask[i]:
            n_sub += 1
    cap = 2 * n_sub + 2
    feat = np.full(cap, -1, np.int32)
    thr = np.zeros(cap, np.float64)
    left = np.full(cap, -1, np.int32)
    right = np.full(cap, -1, np.int32)
    weight = np.zeros(cap, np.float64)
    gain = np.zeros(cap, np.float64)
    depth = np.zeros(cap, np.int64)
    node_off = np.zeros(cap, np.int64)
    node_size = np.zeros(cap, np.int64)
    Gs = np.zeros(cap, np.float64)
    Hs = np.zeros(cap, np.float64)
    best_gain = np.full(cap, -np.inf, np.float64)
    best_feat = np.full(cap, -1, np.int64)
    best_thr = np.zeros(cap, np.float64)

    node_id = np.full(n, -1, np.int64)
    rows_by_node = np.empty(n_sub, np.int64)
    k = 0
    gsum = 0.0
    hsum = 0.0
    for i in range(n):
        if row_mask[i]:
            rows_by_node[k] = i
            node_id[i] = 0
            gsum += g[i]
            hsum += h[i]
            k += 1
    Gs[0] = gsum
    Hs[0] = hsum
    node_off[0] = 0
    node_size[0] = n_sub

    grouped = np.empty(n_sub, np.int64)
    buf = np.empty(n_sub, np.int64)
    pos = np.empty(cap, np.int64)

    n_nodes = 1
    level_start = 0
    level_end = 1
    while level_start < level_end:
        if depth[level_start] < max_depth:
            for ci in range(cols.shape[0]):
                c = cols[ci]
                for nd in range(level_start, level_end):
                    pos[nd] = node_off[nd]
                for t in range(n):
                    r = col_order[c, t]
                    nd = node_id[r]
                    if nd >= level_start:
                        grouped[pos[nd]] = r
                        pos[nd] += 1
                for nd in range(level_start, level_end):
                    sz = node_size[nd]
                    if sz < 2:
                        continue
                    off = node_off[nd]
                    cand, cthr = scan_split_segment(
                        XT, g, h, grouped[off:off + sz], c, lam, gamma, mch
                    )
                    if cand > best_gain[nd]:
                        best_gain[nd] = cand
                        best_feat[nd] = c
                        best_thr[nd] = cthr
        for nd in range(level_start, level_end):
            off = node_off[nd]
            sz = node_size[nd]
            if depth[nd] < max_depth and best_feat[nd] >= 0 and best_gain[nd] > 0.0:
                c = best_feat[nd]
                t0 = best_thr[nd]
                nl = 0
                for t in range(off, off + sz):
                    r = rows_by_node[t]
                    if XT[c, r] < t0:
                        buf[off + nl] = r
                        nl += 1
                nr = 0
                for t in range(off, off + sz):
                    r = rows_by_node[t]
                    if not (XT[c, r] < t0):
                        buf[off + nl + nr] = r
                        nr += 1
                for t in range(off, off + sz):
                    rows_by_node[t] = buf[t]
                lid = n_nodes
                rid = n_nodes + 1
                n_nodes += 2
                feat[nd] = np.int32(c)
                thr[nd] = t0
                left[nd] = lid
                right[nd] = rid
                gain[nd] = best_gain[nd]
                node_off[lid] = off
                node_size[lid] = nl
                node_off[rid] = off + nl
                node_size[rid] = sz - nl
                depth[lid] = depth[nd] + 1
                depth[rid] = depth[nd] + 1
                gs = 0.0
                hs = 0.0
                for t in range(off, off + nl):
                    r = rows_by_node[t]
                    node_id[r] = lid
                    gs += g[r]
                    hs += h[r]
                Gs[lid] = gs
                Hs[lid] = hs
                gs = 0.0
                hs = 0.0
                for t in range(off + nl, off + sz):
                    r = rows_by_node[t]
                    node_id[r] = rid
                    gs += g[r]
                    hs += h[r]
                Gs[rid] = gs
                Hs[rid] = hs
            else:
                denom = Hs[nd] + lam
                if denom > 0.0:
                    weight[nd] = -Gs[nd] / denom
                else:
                    weight[nd] = 0.0
        level_start = level_end
        level_end = n_nodes
    return (
        feat[:n_nodes].copy(),
        thr[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        weight[:n_nodes].copy(),
        gain[:n_nodes].copy(),
    )


@njit(cache=True)
def predict_tree_sum(X, feat, thr, left, right, weight, out):
    """Add each row's leaf weight to ``out`` (accumulator across trees)."""
    n = X.shape[0]
    for i in range(n):
        nd = 0
        f = feat[nd]
        while f >= 0:
            if X[i, f] < thr[nd]:
                nd = left[nd]
            else:
                nd = right[nd]
            f = feat[nd]
        out[i] += weight[nd]
