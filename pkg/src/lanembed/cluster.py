"""Post-processing: seed-driven Gaussian clustering and a grid-indexed DBSCAN baseline."""

from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array

from ._validation import check_field, check_open_unit, check_plane, check_positive, check_same_grid
from .exceptions import ConfigError, DomainError, ShapeError


@dataclass(frozen=True)
class ClusterParams:
    seed_threshold: float = 0.5
    prob_threshold: float = 0.5
    max_instances: int = 32
    min_pixels: int = 8

    def __post_init__(self):
        try:
            check_open_unit(self.seed_threshold, "seed_threshold")
            check_open_unit(self.prob_threshold, "prob_threshold")
        except DomainError as exc:
            raise ConfigError(str(exc)) from exc
        if self.max_instances < 1:
            raise ConfigError(f"max_instances must be >= 1, got {self.max_instances}")
        if self.min_pixels < 0:
            raise ConfigError(f"min_pixels must be >= 0, got {self.min_pixels}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown ClusterParams fields: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class DbscanParams:
    eps: float = 2.0
    min_pts: int = 3

    def __post_init__(self):
        if not self.eps > 0:
            raise ConfigError(f"eps must be > 0, got {self.eps}")
        if self.min_pts < 1:
            raise ConfigError(f"min_pts must be >= 1, got {self.min_pts}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown DbscanParams fields: {sorted(unknown)}")
        return cls(**data)


def _relabel_consecutive(flat_labels, min_pixels):
    """Drop ids with fewer than ``min_pixels`` members and renumber the rest 1..K in order."""
    k = int(flat_labels.max()) if flat_labels.size else 0
    counts = np.bincount(flat_labels, minlength=k + 1)
    keep = counts >= max(min_pixels, 1)
    keep[0] = False
    mapping = np.zeros(k + 1, dtype=np.int64)
    mapping[keep] = np.arange(1, int(keep.sum()) + 1)
    return mapping[flat_labels]


def fast_cluster(embedding, sigma, seed, fg_mask, params=None):
    """Greedy seed-then-mask clustering of foreground embeddings.

    Each round takes the unassigned foreground pixel with the highest seed
    score (ties go to the smallest row-major index), uses its embedding as
    the center and its sigma as the bandwidth, and claims every unassigned
    foreground pixel whose Gaussian affinity reaches ``prob_threshold``.
    Stops when no unassigned pixel reaches ``seed_threshold`` or after
    ``max_instances`` rounds. Instances under ``min_pixels`` go back to 0.
    """
    params = params or ClusterParams()
    emb = check_field(embedding, channels=2, name="embedding")
    sig = check_plane(sigma, name="sigma")
    s = check_plane(seed, name="seed")
    fg = np.asarray(fg_mask, dtype=bool)
    check_same_grid(emb, sig, s, fg, names=["embedding", "sigma", "seed", "fg_mask"])
    if np.any(sig[fg] <= 0):
        raise DomainError("sigma must be > 0 on every foreground pixel")

    pts = emb[fg]
    sf = sig[fg]
    seed_f = s[fg]
    out = np.zeros(len(pts), dtype=np.int64)
    unassigned = np.arange(len(pts))
    log_pr = np.log(params.prob_threshold)

    for inst in range(1, params.max_instances + 1):
        scores = seed_f[unassigned]
        best = int(np.argmax(scores)) if scores.size else -1
        if best < 0 or scores[best] < params.seed_threshold:
            break
        center_idx = unassigned[best]
        center = pts[center_idx]
        bw = sf[center_idx]
        diff = pts[unassigned] - center
        d2 = np.einsum("ij,ij->i", diff, diff)
        # phi >= Pr  <=>  -d2 / (2 bw^2) >= ln Pr
        claimed = -d2 / (2.0 * bw * bw) >= log_pr
        out[unassigned[claimed]] = inst
        unassigned = unassigned[~claimed]

    labels = np.zeros(fg.shape, dtype=np.int64)
    labels[fg] = _relabel_consecutive(out, params.min_pixels)
    return labels


# -- DBSCAN --------------------------------------------------------------------


def _grid_dbscan(points, eps, min_pts):
    """DBSCAN with a uniform grid of cell size ``eps``; returns labels 0 (noise) or 1..K."""
    n = len(points)
    labels = np.zeros(n, dtype=np.int64)
    if n == 0:
        return labels, np.zeros(n, dtype=bool)
    cells = np.floor(points / eps).astype(np.int64)
    uniq, inv = np.unique(cells, axis=0, return_inverse=True)
    inv = inv.ravel()
    order = np.argsort(inv, kind="stable")
    bounds = np.cumsum(np.bincount(inv, minlength=len(uniq)))[:-1]
    buckets = {tuple(c): m for c, m in zip(uniq.tolist(), np.split(order, bounds))}
    block_cache = {}
    eps2 = eps * eps

    def candidates(cell):
        cached = block_cache.get(cell)
        if cached is None:
            cx, cy = cell
            parts = [buckets[(cx + dx, cy + dy)] for dx in (-1, 0, 1) for dy in (-1, 0, 1) if (cx + dx, cy + dy) in buckets]
            cached = np.concatenate(parts)
            block_cache[cell] = cached
        return cached

    def neighbors(i):
        cand = candidates(tuple(cells[i].tolist()))
        diff = points[cand] - points[i]
        return cand[np.einsum("ij,ij->i", diff, diff) <= eps2]

    visited = np.zeros(n, dtype=bool)
    core = np.zeros(n, dtype=bool)
    cluster = 0
    for i in range(n):
        if visited[i]:
            continue
        visited[i] = True
        nb = neighbors(i)
        if len(nb) < min_pts:
            continue
        cluster += 1
        core[i] = True
        labels[i] = cluster
        frontier = [nb]
        while frontier:
            nb = frontier.pop()
            fresh = nb[labels[nb] == 0]
            labels[fresh] = cluster
            for j in fresh[~visited[fresh]]:
                visited[j] = True
                nbj = neighbors(j)
                if len(nbj) >= min_pts:
                    core[j] = True
                    frontier.append(nbj)
    return labels, core


def dbscan(embedding, fg_mask, params=None):
    """DBSCAN over the foreground embeddings; noise is 0, clusters 1..K in discovery order."""
    params = params or DbscanParams()
    emb = check_field(embedding, channels=2, name="embedding")
    fg = np.asarray(fg_mask, dtype=bool)
    check_same_grid(emb, fg, names=["embedding", "fg_mask"])
    flat, _ = _grid_dbscan(emb[fg], params.eps, params.min_pts)
    labels = np.zeros(fg.shape, dtype=np.int64)
    labels[fg] = flat
    return labels


# -- matching ------------------------------------------------------------------


@dataclass
class Matching:
    """``pairs`` holds ``(pred_id, gt_id, iou)`` in acceptance order."""

    pairs: list = field(default_factory=list)
    unmatched_pred: list = field(default_factory=list)
    unmatched_gt: list = field(default_factory=list)


def iou_table(pred, gt):
    """Pairwise IoU between every pred id and gt id; returns ``(table, pred_ids, gt_ids)``."""
    pred = np.asarray(pred, dtype=np.int64)
    gt = np.asarray(gt, dtype=np.int64)
    if pred.shape != gt.shape:
        raise ShapeError(f"pred shape {pred.shape} != gt shape {gt.shape}")
    pred_ids = np.unique(pred[pred > 0])
    gt_ids = np.unique(gt[gt > 0])
    np_, ng = (int(pred.max()) if pred.size else 0) + 1, (int(gt.max()) if gt.size else 0) + 1
    joint = np.bincount((pred * ng + gt).ravel(), minlength=np_ * ng).reshape(np_, ng)
    area_p = joint.sum(axis=1)
    area_g = joint.sum(axis=0)
    inter = joint[np.ix_(pred_ids, gt_ids)]
    union = area_p[pred_ids][:, None] + area_g[gt_ids][None, :] - inter
    table = np.where(union > 0, inter / np.maximum(union, 1), 0.0)
    return table, pred_ids, gt_ids


def match_instances(pred, gt, iou_threshold=0.5):
    """Greedy one-to-one matching by descending IoU (ties by pred id, then gt id)."""
    table, pred_ids, gt_ids = iou_table(pred, gt)
    cands = [
        (-table[i, j], int(p), int(g))
        for i, p in enumerate(pred_ids)
        for j, g in enumerate(gt_ids)
        if table[i, j] >= iou_threshold and table[i, j] > 0
    ]
    cands.sort()
    used_p, used_g = set(), set()
    result = Matching()
    for neg_iou, p, g in cands:
        if p in used_p or g in used_g:
            continue
        used_p.add(p)
        used_g.add(g)
        result.pairs.append((p, g, -neg_iou))
    result.unmatched_pred = [int(p) for p in pred_ids if p not in used_p]
    result.unmatched_gt = [int(g) for g in gt_ids if g not in used_g]
    return result


# -- estimators ----------------------------------------------------------------


class SeedClusterer(ClusterMixin, BaseEstimator):
    """Estimator wrapper around :func:`fast_cluster`.

    ``X`` is an ``(H, W, 4)`` stack of ``[e_x, e_y, sigma, S]`` maps, as
    produced by ``SpatialEmbeddingFitter.transform``. ``fg_mask`` defaults to
    every pixel.
    """

    def __init__(self, seed_threshold=0.5, prob_threshold=0.5, max_instances=32, min_pixels=8):
        self.seed_threshold = seed_threshold
        self.prob_threshold = prob_threshold
        self.max_instances = max_instances
        self.min_pixels = min_pixels

    def fit(self, X, y=None, fg_mask=None):
        maps = check_field(X, channels=4, name="X")
        if fg_mask is None:
            fg_mask = np.ones(maps.shape[:2], dtype=bool)
        params = ClusterParams(self.seed_threshold, self.prob_threshold, self.max_instances, self.min_pixels)
        self.labels_ = fast_cluster(maps[..., :2], maps[..., 2], maps[..., 3], fg_mask, params)
        self.n_instances_ = int(self.labels_.max())
        return self


class GridDBSCAN(ClusterMixin, BaseEstimator):
    """DBSCAN on 2-D points with a uniform grid index of cell size ``eps``.

    Unlike scikit-learn's DBSCAN, noise is labeled 0 and clusters 1..K.
    """

    def __init__(self, eps=2.0, min_pts=3):
        self.eps = eps
        self.min_pts = min_pts

    def fit(self, X, y=None):
        check_positive(self.eps, "eps")
        pts = check_array(X, dtype=np.float64, ensure_min_samples=0)
        if pts.shape[1] != 2:
            raise ShapeError(f"X must have 2 columns, got {pts.shape[1]}")
        self.labels_, core = _grid_dbscan(pts, float(self.eps), int(self.min_pts))
        self.core_sample_indices_ = np.flatnonzero(core)
        return self
