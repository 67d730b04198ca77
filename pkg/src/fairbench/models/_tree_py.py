"""Pure numpy twin of the compiled tree kernels.

Same splitmix64 stream, same DFS growth order and the same first-best split
rule as ``_tree_ext``; the two backends produce identical trees.
"""
import numpy as np

_MASK = (1 << 64) - 1


def _splitmix64(state):
    state = (state + 0x9E3779B97F4A7C15) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, z ^ (z >> 31)


def build_tree(X, y, w, order, max_depth, min_samples_leaf, max_features, seed):
    n, d = X.shape
    order = np.array(order, dtype=np.int64, copy=True)
    feature, threshold, left, right, value = [-1], [0.0], [-1], [-1], [0.0]
    state = int(seed) & _MASK
    stack = [(0, 0, n, 0)]
    wy = w * y

    while stack:
        node, start, end, depth = stack.pop()
        seg0 = order[0, start:end]
        W = np.cumsum(w[seg0])[-1]
        P = np.cumsum(wy[seg0])[-1]
        value[node] = P / W

        if P == 0.0 or P == W:
            continue
        if max_depth >= 0 and depth >= max_depth:
            continue
        if end - start < 2 * min_samples_leaf:
            continue

        perm = list(range(d))
        for k in range(d - 1, 0, -1):
            state, u = _splitmix64(state)
            j = u % (k + 1)
            perm[k], perm[j] = perm[j], perm[k]

        best_score, best_feature, best_pos = -1.0, -1, -1
        visited = 0
        for f in perm:
            if visited >= max_features:
                break
            seg = order[f, start:end]
            xs = X[seg, f]
            if xs[0] == xs[-1]:
                continue
            visited += 1
            wl = np.cumsum(w[seg])[:-1]
            pl = np.cumsum(wy[seg])[:-1]
            wr = W - wl
            pr = P - pl
            m = end - start
            pos = np.arange(1, m)
            valid = (xs[:-1] < xs[1:]) & (pos >= min_samples_leaf) & (m - pos >= min_samples_leaf)
            if not valid.any():
                continue
            with np.errstate(divide="ignore", invalid="ignore"):
                score = (pl * pl + (wl - pl) * (wl - pl)) / wl + (pr * pr + (wr - pr) * (wr - pr)) / wr
            score = np.where(valid, score, -np.inf)
            i = int(np.argmax(score))
            if score[i] > best_score:
                best_score, best_feature, best_pos = float(score[i]), f, start + i

        if best_feature < 0:
            continue

        f = best_feature
        a = X[order[f, best_pos], f]
        b = X[order[f, best_pos + 1], f]
        t = (a + b) / 2.0
        if t >= b:
            t = a
        goes_left = X[:, f] <= t
        nl = 0
        for g in range(d):
            seg = order[g, start:end]
            mask = goes_left[seg]
            nl = int(mask.sum())
            order[g, start:end] = np.concatenate([seg[mask], seg[~mask]])

        n_nodes = len(feature)
        feature[node], threshold[node] = f, float(t)
        left[node], right[node] = n_nodes, n_nodes + 1
        feature += [-1, -1]
        threshold += [0.0, 0.0]
        left += [-1, -1]
        right += [-1, -1]
        value += [0.0, 0.0]
        stack.append((n_nodes + 1, start + nl, end, depth + 1))
        stack.append((n_nodes, start, start + nl, depth + 1))

    return (np.asarray(feature, dtype=np.int64), np.asarray(threshold, dtype=np.float64),
            np.asarray(left, dtype=np.int64), np.asarray(right, dtype=np.int64),
            np.asarray(value, dtype=np.float64))


def forest_votes(X, feature, threshold, left, right, value, offsets):
    n = X.shape[0]
    votes = np.zeros(n)
    rows = np.arange(n)
    for tr in range(len(offsets) - 1):
        base = offsets[tr]
        node = np.zeros(n, dtype=np.int64)
        while True:
            f = feature[base + node]
            internal = f >= 0
            if not internal.any():
                break
            idx = rows[internal]
            nd = node[internal]
            go_left = X[idx, f[internal]] <= threshold[base + nd]
            node[internal] = np.where(go_left, left[base + nd], right[base + nd])
        votes += value[base + node] >= 0.5
    return votes / (len(offsets) - 1)
