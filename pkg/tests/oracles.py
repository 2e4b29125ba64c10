"""Independent reference implementations used across the test suite."""
import itertools

import numpy as np


def full_sort_adjacency(score, k, direction):
    """Stable full sort per row; self excluded, then added back."""
    n = score.shape[0]
    rows = []
    for i in range(n):
        others = [j for j in range(n) if j != i]
        key = (lambda j: (score[i, j], j)) if direction == "smallest" else (lambda j: (-score[i, j], j))
        rows.append(sorted(sorted(others, key=key)[:k] + [i]))
    return np.array(rows, dtype=np.int64)


def dense_adjacency(neighbors):
    n = neighbors.shape[0]
    a = np.zeros((n, n))
    for i, row in enumerate(neighbors):
        for j in row:
            a[i, j] = 1.0
    return a


def dense_normalized(a):
    d = a.sum(axis=1)
    dm = np.diag(1.0 / np.sqrt(d))
    return dm @ a @ dm


def dense_gcn(a, h, weights):
    a_hat = dense_normalized(a)
    for w in weights:
        h = np.maximum(a_hat @ h @ w, 0.0)
    return h


def brute_force_assignment_cost(cost):
    """Minimum total cost over all injections rows -> columns (vectorised over permutations)."""
    n, m = cost.shape
    if n == 0:
        return 0.0
    perms = np.array(list(itertools.permutations(range(m), n)))
    return float(cost[np.arange(n)[None, :], perms].sum(axis=1).min())


def point_loss_loops(points, conf, gt, gt_to_prop, lambda1, lambda2, eps_log=1e-12):
    """Per-term loop evaluation of the classification + localisation objective."""
    m = len(conf)
    matched = set(int(j) for j in gt_to_prop)
    pos = 0.0
    for j in gt_to_prop:
        pos += np.log(max(conf[j], eps_log))
    neg = 0.0
    for j in range(m):
        if j not in matched:
            neg += np.log(max(1.0 - conf[j], eps_log))
    cls = -(pos + lambda2 * neg) / m
    loc = 0.0
    if len(gt):
        for i, j in enumerate(gt_to_prop):
            loc += (gt[i][0] - points[j][0]) ** 2 + (gt[i][1] - points[j][1]) ** 2
        loc /= len(gt)
    return cls + lambda1 * loc, cls, loc


def density_loss_loops(m, g):
    total, n = 0.0, 0
    for i in range(m.shape[0]):
        for j in range(m.shape[1]):
            total += (m[i, j] - g[i, j]) ** 2
            n += 1
    return total / n
