"""Deterministic synthetic lane scenes with exact ground truth."""

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import read_labels, write_labels
from .exceptions import ConfigError

MAX_ATTEMPTS = 1000


@dataclass(frozen=True)
class SynthConfig:
    height: int = 64
    width: int = 128
    num_lanes: int = 4
    thickness: int = 3
    curvature_range: tuple = (-8.0, 8.0)
    rng_seed: int = 0
    row_stride: int = 4

    def __post_init__(self):
        object.__setattr__(self, "curvature_range", tuple(float(v) for v in self.curvature_range))
        if self.height < 1 or self.width < 1:
            raise ConfigError(f"grid must be at least 1x1, got {self.height}x{self.width}")
        if not 1 <= self.num_lanes <= 8:
            raise ConfigError(f"num_lanes must be in 1..8, got {self.num_lanes}")
        if self.thickness < 1:
            raise ConfigError(f"thickness must be >= 1, got {self.thickness}")
        if self.row_stride < 1:
            raise ConfigError(f"row_stride must be >= 1, got {self.row_stride}")
        if len(self.curvature_range) != 2 or self.curvature_range[0] > self.curvature_range[1]:
            raise ConfigError(f"curvature_range must be (low, high), got {self.curvature_range}")

    def to_dict(self):
        d = asdict(self)
        d["curvature_range"] = list(self.curvature_range)
        return d

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown SynthConfig fields: {sorted(unknown)}")
        return cls(**data)


@dataclass
class LaneScene:
    """Ground truth for one scene.

    ``lanes[k]`` maps sampled row -> centerline x (column units) of instance
    ``k + 1``; ``coefficients[k]`` is its ``(a, b, c)``.
    """

    labels: np.ndarray
    lanes: list
    coefficients: np.ndarray
    config: SynthConfig = field(default_factory=SynthConfig)

    @property
    def fg_mask(self):
        return self.labels > 0

    @property
    def num_instances(self):
        return len(self.lanes)


def lane_x(coeffs, rows, height):
    """Centerline column of a quadratic lane ``a + b t + c t^2`` at ``t = row / height``."""
    a, b, c = coeffs
    t = np.asarray(rows, dtype=np.float64) / height
    return a + b * t + c * t * t


def rasterize_lane(coeffs, thickness, height, width):
    """Mark, on each row, the columns within ``thickness / 2`` of the centerline."""
    mask = np.zeros((height, width), dtype=bool)
    xs = lane_x(coeffs, np.arange(height), height)
    half = thickness / 2.0
    for r, x in enumerate(xs):
        lo = max(math.ceil(x - half), 0)
        hi = min(math.floor(x + half), width - 1)
        if lo <= hi:
            mask[r, lo : hi + 1] = True
    return mask


def _compatible(xs, others, min_gap):
    return all(np.all(np.abs(xs - o) >= min_gap) for o in others)


def generate_scene(cfg):
    """Sample ``cfg.num_lanes`` non-touching quadratic lanes and rasterize them.

    Lanes are drawn one at a time and redrawn until they stay inside the image
    and keep ``2 * thickness`` horizontal separation from every accepted lane
    at every row. Raises ConfigError after ``MAX_ATTEMPTS`` draws.
    """
    rng = np.random.default_rng(cfg.rng_seed)
    rows = np.arange(cfg.height)
    lo, hi = cfg.curvature_range
    min_gap = 2.0 * cfg.thickness
    accepted, traces = [], []
    attempts = 0
    while len(accepted) < cfg.num_lanes:
        if attempts >= MAX_ATTEMPTS:
            raise ConfigError(
                f"could not place {cfg.num_lanes} lanes in a {cfg.width}px wide image "
                f"after {MAX_ATTEMPTS} attempts"
            )
        attempts += 1
        coeffs = (rng.uniform(0.0, cfg.width - 1.0), rng.uniform(lo, hi), rng.uniform(lo, hi))
        xs = lane_x(coeffs, rows, cfg.height)
        if xs.min() < 0 or xs.max() > cfg.width - 1:
            continue
        if _compatible(xs, traces, min_gap):
            accepted.append(coeffs)
            traces.append(xs)

    # ids run left to right at the bottom row
    order = np.argsort([t[-1] for t in traces], kind="stable")
    coefficients = np.array([accepted[i] for i in order], dtype=np.float64)
    labels = np.zeros((cfg.height, cfg.width), dtype=np.int64)
    for k, coeffs in enumerate(coefficients, start=1):
        labels[rasterize_lane(coeffs, cfg.thickness, cfg.height, cfg.width)] = k

    sampled = np.arange(0, cfg.height, cfg.row_stride)
    lanes = []
    for k, coeffs in enumerate(coefficients, start=1):
        xs = lane_x(coeffs, sampled, cfg.height)
        lanes.append({int(r): float(x) for r, x in zip(sampled, xs) if np.any(labels[r] == k)})
    return LaneScene(labels=labels, lanes=lanes, coefficients=coefficients, config=cfg)


def save_scene(scene, directory):
    """Persist a scene as ``labels.lel`` plus a ``scene.json`` sidecar."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_labels(directory / "labels.lel", scene.labels)
    sidecar = {
        "config": scene.config.to_dict(),
        "coefficients": scene.coefficients.tolist(),
        "lanes": [{str(r): x for r, x in lane.items()} for lane in scene.lanes],
    }
    (directory / "scene.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def load_scene(directory):
    directory = Path(directory)
    labels = read_labels(directory / "labels.lel")
    sidecar = json.loads((directory / "scene.json").read_text())
    lanes = [{int(r): float(x) for r, x in lane.items()} for lane in sidecar["lanes"]]
    return LaneScene(
        labels=labels,
        lanes=lanes,
        coefficients=np.asarray(sidecar["coefficients"], dtype=np.float64).reshape(-1, 3),
        config=SynthConfig.from_dict(sidecar["config"]),
    )
