"""Lane-point accuracy, instance-level clustering quality and a post-processing timing harness."""

import csv
import statistics
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from ._validation import check_labels
from .cluster import ClusterParams, DbscanParams, dbscan, fast_cluster, match_instances
from .core import make_coordinate_maps
from .exceptions import ConfigError, LanembedError

# TuSimple convention: 20 px tolerance at 1280 px width
REFERENCE_TOLERANCE = 20.0
REFERENCE_WIDTH = 1280


class BenchSanityError(LanembedError):
    """The two clusterers disagree on an input where they must agree."""


@dataclass(frozen=True)
class EvalParams:
    point_tolerance: float = REFERENCE_TOLERANCE
    lane_accept_threshold: float = 0.85
    iou_threshold: float = 0.5

    def __post_init__(self):
        if not self.point_tolerance > 0:
            raise ConfigError(f"point_tolerance must be > 0, got {self.point_tolerance}")
        if not 0 < self.lane_accept_threshold < 1:
            raise ConfigError(f"lane_accept_threshold must be in (0, 1), got {self.lane_accept_threshold}")

    @classmethod
    def for_width(cls, width, **kwargs):
        """Scale the point tolerance linearly from 20 px at width 1280."""
        return cls(point_tolerance=REFERENCE_TOLERANCE * width / REFERENCE_WIDTH, **kwargs)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown EvalParams fields: {sorted(unknown)}")
        return cls(**data)


@dataclass
class EvalReport:
    accuracy: float
    fp_rate: float
    fn_rate: float
    mean_instance_iou: float
    per_scene: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)

    def to_csv(self, path):
        """One row per scene."""
        if not self.per_scene:
            return
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(self.per_scene[0]))
            writer.writeheader()
            writer.writerows(self.per_scene)


@dataclass
class TimingReport:
    fast_ms: float
    dbscan_ms: float
    speedup_ratio: float
    runs: int
    warmup: int
    scenes: int

    def to_dict(self):
        return asdict(self)


# -- lane points ---------------------------------------------------------------


def extract_pred_lanes(labels, row_stride):
    """Mean column of each instance on every sampled row it occupies.

    Returns a list (instance ``k`` at index ``k - 1``) of ``{row: x}`` dicts.
    """
    labels, k = check_labels(labels)
    rows = np.arange(0, labels.shape[0], row_stride)
    cols = np.arange(labels.shape[1], dtype=np.float64)
    lanes = []
    for inst in range(1, k + 1):
        lane = {}
        for r in rows:
            hit = labels[r] == inst
            if hit.any():
                lane[int(r)] = float(cols[hit].mean())
        lanes.append(lane)
    return lanes


def _point_hits(pred, gt, tol):
    return sum(1 for r, x in gt.items() if r in pred and abs(pred[r] - x) <= tol)


def tusimple_eval(pred_lanes, gt_lanes, params=None):
    """Accuracy, FP rate and FN rate over row-sampled lane points.

    Lanes are paired one-to-one greedily by per-lane point accuracy (the
    fraction of a gt lane's rows hit within ``point_tolerance``). A paired
    pred lane is a true positive when that accuracy reaches
    ``lane_accept_threshold``. Accuracy is the number of correct points over
    all paired lanes divided by the total number of gt points.
    """
    params = params or EvalParams()
    tol = params.point_tolerance
    gt_points = sum(len(g) for g in gt_lanes)
    hits = np.zeros((len(pred_lanes), len(gt_lanes)), dtype=np.int64)
    for i, p in enumerate(pred_lanes):
        for j, g in enumerate(gt_lanes):
            hits[i, j] = _point_hits(p, g, tol)
    frac = hits / np.array([max(len(g), 1) for g in gt_lanes])[None, :] if gt_lanes else hits.astype(float)

    cands = sorted(
        ((-frac[i, j], i, j) for i in range(len(pred_lanes)) for j in range(len(gt_lanes)) if hits[i, j] > 0)
    )
    used_p, used_g = set(), set()
    correct = 0
    tp = 0
    for neg, i, j in cands:
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        correct += hits[i, j]
        if -neg >= params.lane_accept_threshold:
            tp += 1
    accuracy = correct / gt_points if gt_points else 1.0
    fp_rate = (len(pred_lanes) - tp) / len(pred_lanes) if pred_lanes else 0.0
    fn_rate = (len(gt_lanes) - tp) / len(gt_lanes) if gt_lanes else 0.0
    return float(accuracy), float(fp_rate), float(fn_rate)


# -- instance quality ----------------------------------------------------------


def clustering_quality(pred, gt, params=None):
    """Return ``(mean_iou, precision, recall)`` from greedy IoU matching.

    Conventions: mean IoU is 0 when nothing matches; precision is 0 when
    there are no predictions but some gt instances; both empty gives 1.
    """
    params = params or EvalParams()
    m = match_instances(pred, gt, params.iou_threshold)
    n_pred = len(m.pairs) + len(m.unmatched_pred)
    n_gt = len(m.pairs) + len(m.unmatched_gt)
    if n_pred == 0 and n_gt == 0:
        return 1.0, 1.0, 1.0
    mean_iou = float(np.mean([p[2] for p in m.pairs])) if m.pairs else 0.0
    precision = len(m.pairs) / n_pred if n_pred else 0.0
    recall = len(m.pairs) / n_gt if n_gt else 1.0
    return mean_iou, float(precision), float(recall)


def evaluate_scene(pred, scene, params=None):
    """Per-scene metrics as a flat dict."""
    params = params or EvalParams.for_width(scene.labels.shape[1])
    pred_lanes = extract_pred_lanes(pred, scene.config.row_stride)
    acc, fp, fn = tusimple_eval(pred_lanes, scene.lanes, params)
    iou, precision, recall = clustering_quality(pred, scene.labels, params)
    return {
        "accuracy": acc,
        "fp_rate": fp,
        "fn_rate": fn,
        "mean_instance_iou": iou,
        "precision": precision,
        "recall": recall,
        "pred_instances": int(np.max(pred, initial=0)),
        "gt_instances": scene.num_instances,
    }


def evaluate(preds, scenes, params=None):
    """Average per-scene metrics into an EvalReport."""
    rows = [evaluate_scene(p, s, params) for p, s in zip(preds, scenes)]
    if not rows:
        return EvalReport(1.0, 0.0, 0.0, 1.0, [])
    mean = {k: float(np.mean([r[k] for r in rows])) for k in ("accuracy", "fp_rate", "fn_rate", "mean_instance_iou")}
    return EvalReport(per_scene=rows, **mean)


# -- timing ----------------------------------------------------------------------


def converged_fields(scene, sigma=2.0, spread=0.25, rng_seed=0):
    """Fields a fully trained model would emit for ``scene``.

    Every foreground embedding sits near its instance's mean pixel position
    (Gaussian jitter of ``spread`` px), sigma is constant and the seed map
    equals the own-instance affinity. Returns ``(embedding, sigma, seed, fg)``.
    """
    rng = np.random.default_rng(rng_seed)
    labels = scene.labels
    h, w = labels.shape
    coords = make_coordinate_maps(h, w).stack().astype(np.float64)
    fg = labels > 0
    emb = coords.copy()
    k = int(labels.max())
    lab = labels[fg] - 1
    counts = np.bincount(lab, minlength=k)
    centers = np.stack([np.bincount(lab, weights=coords[fg][:, c], minlength=k) for c in (0, 1)], axis=1)
    centers /= counts[:, None]
    emb[fg] = centers[lab] + rng.normal(0.0, spread, size=(fg.sum(), 2))
    sig = np.full((h, w), float(sigma))
    seed = np.zeros((h, w))
    d2 = ((emb[fg] - centers[lab]) ** 2).sum(axis=1)
    seed[fg] = np.exp(-d2 / (2.0 * sigma * sigma))
    return emb, sig, seed, fg


def _median_ms(fn, runs, warmup):
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1e3)
    return statistics.median(times)


def bench_clustering(batch, params=None, dbscan_params=None, runs=20, warmup=3):
    """Median per-scene wall time of fast_cluster and dbscan on identical inputs.

    ``batch`` is a sequence of ``(embedding, sigma, seed, fg_mask)`` tuples.
    Before timing, both methods must report the same number of instances
    on every input; otherwise BenchSanityError is raised.
    """
    params = params or ClusterParams()
    dbscan_params = dbscan_params or DbscanParams()
    if runs < 1:
        raise ConfigError("runs must be >= 1")
    for i, (emb, sig, seed, fg) in enumerate(batch):
        n_fast = int(fast_cluster(emb, sig, seed, fg, params).max(initial=0))
        n_db = int(dbscan(emb, fg, dbscan_params).max(initial=0))
        if n_fast != n_db:
            raise BenchSanityError(f"scene {i}: fast_cluster found {n_fast} instances, dbscan {n_db}")

    fast_t, db_t = [], []
    with threadpool_limits(limits=1):
        for emb, sig, seed, fg in batch:
            fast_t.append(_median_ms(lambda: fast_cluster(emb, sig, seed, fg, params), runs, warmup))
            db_t.append(_median_ms(lambda: dbscan(emb, fg, dbscan_params), runs, warmup))
    fast_ms = statistics.median(fast_t)
    db_ms = statistics.median(db_t)
    return TimingReport(
        fast_ms=fast_ms,
        dbscan_ms=db_ms,
        speedup_ratio=db_ms / fast_ms,
        runs=runs,
        warmup=warmup,
        scenes=len(batch),
    )
