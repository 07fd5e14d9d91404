"""Reference implementations that share no code with the library paths they check."""

import itertools
import math

import numpy as np


def jaccard_set_loss(mistakes, positives):
    """|M| / |P u M| with the empty set mapping to 0."""
    if not mistakes:
        return 0.0
    return len(mistakes) / len(positives | mistakes)


def lovasz_extension_bruteforce(scores, labels):
    """Lovasz extension of the Jaccard set loss at the hinge-error vector.

    Evaluated as the integral over thresholds t of Delta({i : m_i >= t}),
    with Delta computed for each level set from its definition.
    """
    labels = [int(v) for v in labels]
    errors = [max(0.0, 1.0 - s * (2 * y - 1)) for s, y in zip(scores, labels)]
    positives = {i for i, y in enumerate(labels) if y == 1}
    levels = sorted(set(errors) | {0.0}, reverse=True)
    total = 0.0
    for upper, lower in zip(levels, levels[1:]):
        level_set = {i for i, m in enumerate(errors) if m >= upper}
        total += (upper - lower) * jaccard_set_loss(level_set, positives)
    return total


def lovasz_extension_permutation_max(scores, labels):
    """Same extension as the maximum over all orderings of the greedy chain sum.

    Valid because the Jaccard set loss is submodular.
    """
    labels = [int(v) for v in labels]
    errors = [max(0.0, 1.0 - s * (2 * y - 1)) for s, y in zip(scores, labels)]
    positives = {i for i, y in enumerate(labels) if y == 1}
    best = -math.inf
    for perm in itertools.permutations(range(len(errors))):
        acc, prev, chain = 0.0, 0.0, set()
        for i in perm:
            chain.add(i)
            cur = jaccard_set_loss(chain, positives)
            acc += errors[i] * (cur - prev)
            prev = cur
        best = max(best, acc)
    return best


def mean_by_loop(values, labels, k):
    """Per-instance mean via an explicit Python accumulation pass."""
    sums = [np.zeros(np.shape(values)[-1]) if np.ndim(values) == 3 else 0.0 for _ in range(k)]
    counts = [0] * k
    h, w = labels.shape
    for r in range(h):
        for c in range(w):
            lab = labels[r, c]
            if lab > 0:
                sums[lab - 1] = sums[lab - 1] + values[r, c]
                counts[lab - 1] += 1
    return [s / n for s, n in zip(sums, counts)]


def embedding_loss_reference(embedding, sigma, labels):
    """Straight-line evaluation of the foreground-only embedding loss."""
    k = int(labels.max())
    centroids = mean_by_loop(embedding, labels, k)
    sigmas = mean_by_loop(sigma, labels, k)
    fg = [(r, c) for r in range(labels.shape[0]) for c in range(labels.shape[1]) if labels[r, c] > 0]
    total = 0.0
    for j in range(k):
        scores, ys = [], []
        for r, c in fg:
            d2 = float(np.sum((embedding[r, c] - centroids[j]) ** 2))
            phi = math.exp(-d2 / (2 * sigmas[j] ** 2))
            scores.append(2 * phi - 1)
            ys.append(1 if labels[r, c] == j + 1 else 0)
        total += lovasz_extension_bruteforce(scores, ys)
    return total / k


def iou_bruteforce(pred, gt, p, g):
    inter = union = 0
    for a, b in zip(np.ravel(pred), np.ravel(gt)):
        inter += (a == p) and (b == g)
        union += (a == p) or (b == g)
    return inter / union if union else 0.0


def region_neighbors(points, i, eps):
    return [j for j in range(len(points)) if np.hypot(*(points[j] - points[i])) <= eps]


def dbscan_bruteforce(points, eps, min_pts):
    """Textbook DBSCAN with O(n^2) neighborhoods; labels 0 noise, 1..K."""
    n = len(points)
    labels = [0] * n
    visited = [False] * n
    cluster = 0
    for i in range(n):
        if visited[i]:
            continue
        visited[i] = True
        nb = region_neighbors(points, i, eps)
        if len(nb) < min_pts:
            continue
        cluster += 1
        labels[i] = cluster
        queue = list(nb)
        while queue:
            j = queue.pop()
            if labels[j] == 0:
                labels[j] = cluster
            if not visited[j]:
                visited[j] = True
                nbj = region_neighbors(points, j, eps)
                if len(nbj) >= min_pts:
                    queue.extend(nbj)
    return np.array(labels)


def canonical_partition(labels):
    """Partition as a frozenset of frozensets of indices (noise dropped)."""
    groups = {}
    for i, lab in enumerate(np.ravel(labels)):
        if lab > 0:
            groups.setdefault(int(lab), set()).add(i)
    return frozenset(frozenset(g) for g in groups.values())
