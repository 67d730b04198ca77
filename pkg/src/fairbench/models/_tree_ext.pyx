# cython: language_level=3
"""Compiled CART kernels: weighted-Gini tree growth and forest voting.

Must stay in lockstep with ``_tree_py``; both consume the same splitmix64
stream and scan candidate splits in the same order, so identical inputs
give identical trees.
"""
import numpy as np

from libc.stdint cimport int64_t, uint64_t


cdef inline uint64_t _next(uint64_t* state) noexcept nogil:
    cdef uint64_t z
    state[0] = state[0] + <uint64_t>0x9E3779B97F4A7C15
    z = state[0]
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EB
    return z ^ (z >> 31)


def build_tree(const double[:, ::1] X, const double[::1] y, const double[::1] w,
               int64_t[:, ::1] order, int max_depth, int min_samples_leaf,
               int max_features, uint64_t seed):
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t d = X.shape[1]
    cdef Py_ssize_t cap = 2 * n + 1

    feature_arr = np.full(cap, -1, dtype=np.int64)
    threshold_arr = np.zeros(cap, dtype=np.float64)
    left_arr = np.full(cap, -1, dtype=np.int64)
    right_arr = np.full(cap, -1, dtype=np.int64)
    value_arr = np.zeros(cap, dtype=np.float64)
    cdef int64_t[::1] feature = feature_arr
    cdef double[::1] threshold = threshold_arr
    cdef int64_t[::1] left = left_arr
    cdef int64_t[::1] right = right_arr
    cdef double[::1] value = value_arr

    # explicit DFS stack of (node, start, end, depth)
    stack_arr = np.zeros((cap, 4), dtype=np.int64)
    cdef int64_t[:, ::1] stack = stack_arr
    perm_arr = np.zeros(d, dtype=np.int64)
    cdef int64_t[::1] perm = perm_arr
    goes_left_arr = np.zeros(n, dtype=np.uint8)
    cdef unsigned char[::1] goes_left = goes_left_arr
    buf_arr = np.zeros(n, dtype=np.int64)
    cdef int64_t[::1] buf = buf_arr

    cdef uint64_t state = seed
    cdef Py_ssize_t top = 0
    cdef Py_ssize_t n_nodes = 1
    cdef Py_ssize_t node, start, end, depth, i, j, k, f, g, r, r_next, pos
    cdef Py_ssize_t best_feature, best_pos, visited, nl
    cdef double W, P, wl, pl, wr, pr, score, best_score, a, b, t, xv
    cdef uint64_t u

    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = n
    stack[0, 3] = 0
    top = 1

    with nogil:
        while top > 0:
            top -= 1
            node = stack[top, 0]
            start = stack[top, 1]
            end = stack[top, 2]
            depth = stack[top, 3]

            W = 0.0
            P = 0.0
            for i in range(start, end):
                r = order[0, i]
                W = W + w[r]
                P = P + w[r] * y[r]
            value[node] = P / W

            if P == 0.0 or P == W:
                continue
            if max_depth >= 0 and depth >= max_depth:
                continue
            if end - start < 2 * min_samples_leaf:
                continue

            for k in range(d):
                perm[k] = k
            k = d - 1
            while k > 0:
                u = _next(&state)
                j = <Py_ssize_t>(u % <uint64_t>(k + 1))
                f = perm[k]
                perm[k] = perm[j]
                perm[j] = f
                k -= 1

            best_score = -1.0
            best_feature = -1
            best_pos = -1
            visited = 0
            for k in range(d):
                if visited >= max_features:
                    break
                f = perm[k]
                if X[order[f, start], f] == X[order[f, end - 1], f]:
                    continue
                visited += 1
                wl = 0.0
                pl = 0.0
                for i in range(start, end - 1):
                    r = order[f, i]
                    wl = wl + w[r]
                    pl = pl + w[r] * y[r]
                    r_next = order[f, i + 1]
                    if X[r, f] < X[r_next, f]:
                        if i + 1 - start >= min_samples_leaf and end - i - 1 >= min_samples_leaf:
                            wr = W - wl
                            pr = P - pl
                            score = (pl * pl + (wl - pl) * (wl - pl)) / wl + (pr * pr + (wr - pr) * (wr - pr)) / wr
                            if score > best_score:
                                best_score = score
                                best_feature = f
                                best_pos = i

            if best_feature < 0:
                continue

            f = best_feature
            a = X[order[f, best_pos], f]
            b = X[order[f, best_pos + 1], f]
            t = (a + b) / 2.0
            if t >= b:
                t = a

            for i in range(start, end):
                r = order[f, i]
                goes_left[r] = 1 if X[r, f] <= t else 0
            nl = 0
            for g in range(d):
                nl = 0
                pos = 0
                for i in range(start, end):
                    r = order[g, i]
                    if goes_left[r]:
                        order[g, start + nl] = r
                        nl += 1
                    else:
                        buf[pos] = r
                        pos += 1
                for i in range(pos):
                    order[g, start + nl + i] = buf[i]

            feature[node] = f
            threshold[node] = t
            left[node] = n_nodes
            right[node] = n_nodes + 1
            # right pushed first so the left child is grown first
            stack[top, 0] = n_nodes + 1
            stack[top, 1] = start + nl
            stack[top, 2] = end
            stack[top, 3] = depth + 1
            top += 1
            stack[top, 0] = n_nodes
            stack[top, 1] = start
            stack[top, 2] = start + nl
            stack[top, 3] = depth + 1
            top += 1
            n_nodes += 2

    return (feature_arr[:n_nodes].copy(), threshold_arr[:n_nodes].copy(),
            left_arr[:n_nodes].copy(), right_arr[:n_nodes].copy(),
            value_arr[:n_nodes].copy())


def forest_votes(const double[:, ::1] X, const int64_t[::1] feature,
                 const double[::1] threshold, const int64_t[::1] left,
                 const int64_t[::1] right, const double[::1] value,
                 const int64_t[::1] offsets):
    """Fraction of trees voting class 1 for every row of ``X``."""
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t n_trees = offsets.shape[0] - 1
    out_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, tr, base, node
    cdef double votes
    with nogil:
        for i in range(n):
            votes = 0.0
            for tr in range(n_trees):
                base = offsets[tr]
                node = 0
                while feature[base + node] >= 0:
                    if X[i, feature[base + node]] <= threshold[base + node]:
                        node = left[base + node]
                    else:
                        node = right[base + node]
                if value[base + node] >= 0.5:
                    votes = votes + 1.0
            out[i] = votes / n_trees
    return out_arr
