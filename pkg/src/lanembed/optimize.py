"""Direct heavy-ball optimization of offset, bandwidth and seed fields.

Each scene is fit on its own: the per-pixel fields play the role of a
network's output maps. Bandwidth and seed are parametrized as
``sigma = exp(sigma_logit)`` and ``S = logistic(seed_logit)`` so their
constraints hold after every step without projection.
"""

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_labels
from .core import make_coordinate_maps, read_field, spatial_embedding, write_field
from .exceptions import ConfigError, FormatError, NumericError
from .losses import LossConfig, total_loss_and_gradients

logger = logging.getLogger(__name__)

INIT_SIGMA = 1.0
INIT_SEED = 0.01


def _logistic(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


@dataclass(frozen=True)
class FitConfig:
    step_size: float = 100.0
    momentum: float = 0.9
    max_steps: int = 2000
    stop_tolerance: float = 0.0
    rng_seed: int = 0
    loss: LossConfig = LossConfig()

    def __post_init__(self):
        if isinstance(self.loss, dict):
            object.__setattr__(self, "loss", LossConfig.from_dict(self.loss))
        if not self.step_size >= 0:
            raise ConfigError(f"step_size must be >= 0, got {self.step_size}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.max_steps < 1:
            raise ConfigError(f"max_steps must be >= 1, got {self.max_steps}")
        if not self.stop_tolerance >= 0:
            raise ConfigError(f"stop_tolerance must be >= 0, got {self.stop_tolerance}")

    def to_dict(self):
        d = asdict(self)
        d["loss"] = self.loss.to_dict()
        return d

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown FitConfig fields: {sorted(unknown)}")
        return cls(**data)

    def digest(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


@dataclass(frozen=True)
class FieldState:
    """Optimizable fields (float32) and the heavy-ball velocity, if any."""

    offsets_raw: np.ndarray
    sigma_logit: np.ndarray
    seed_logit: np.ndarray
    velocity: tuple = None

    @property
    def shape(self):
        return self.sigma_logit.shape

    @property
    def sigma(self):
        return np.exp(self.sigma_logit.astype(np.float64))

    @property
    def seed(self):
        return _logistic(self.seed_logit)

    def embedding(self):
        return spatial_embedding(self.offsets_raw, make_coordinate_maps(*self.shape))

    def maps(self):
        """Stack ``[e_x, e_y, sigma, S]`` into an ``(H, W, 4)`` float32 array."""
        e = self.embedding()
        return np.concatenate(
            [e, self.sigma[..., None].astype(np.float32), self.seed[..., None].astype(np.float32)], axis=-1
        )


def init_state(labels, cfg=None):
    """Zero offsets, ``sigma == 1`` and ``S == 0.01`` everywhere."""
    labels, _ = check_labels(labels)
    h, w = labels.shape
    return FieldState(
        offsets_raw=np.zeros((h, w, 2), dtype=np.float32),
        sigma_logit=np.full((h, w), math.log(INIT_SIGMA), dtype=np.float32),
        seed_logit=np.full((h, w), math.log(INIT_SEED / (1.0 - INIT_SEED)), dtype=np.float32),
    )


def step(state, labels, cfg):
    """One heavy-ball update of all three fields.

    Returns the new state and the LossReport evaluated *before* the update.
    ``grad_norms`` in the report are L-inf norms in parameter space
    (offsets, sigma logits, seed logits).
    """
    sigma = state.sigma
    seed = state.seed
    report, grads = total_loss_and_gradients(state.offsets_raw, sigma, seed, labels, cfg.loss)
    g = (
        grads.d_offsets,
        grads.d_sigma * sigma,
        grads.d_seed * seed * (1.0 - seed),
    )
    names = ("offsets", "sigma_logit", "seed_logit")
    for name, arr in zip(names, g):
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite gradient in {name}", field=name)
    report.grad_norms = {name: float(np.abs(arr).max()) for name, arr in zip(names, g)}

    velocity = state.velocity or (0.0, 0.0, 0.0)
    new_velocity = tuple(gi + cfg.momentum * vi for gi, vi in zip(g, velocity))
    params = (state.offsets_raw, state.sigma_logit, state.seed_logit)
    with np.errstate(over="ignore", invalid="ignore"):
        updated = [(p - cfg.step_size * v).astype(np.float32) for p, v in zip(params, new_velocity)]
    for name, arr in zip(names, updated):
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite parameters in {name}", field=name)
    new_state = FieldState(*updated, velocity=new_velocity)
    return new_state, report


def fit(labels, cfg=None):
    """Run ``step`` until ``max_steps`` or the gradient L-inf norm falls to ``stop_tolerance``."""
    cfg = cfg or FitConfig()
    labels, _ = check_labels(labels)
    state = init_state(labels, cfg)
    trajectory = []
    for i in range(cfg.max_steps):
        state, report = step(state, labels, cfg)
        trajectory.append(report)
        if max(report.grad_norms.values()) <= cfg.stop_tolerance:
            break
        if i % 500 == 0:
            logger.debug("step %d total %.6f", i, report.total)
    return replace(state, velocity=None), trajectory


# -- checkpoints ---------------------------------------------------------------


def save_checkpoint(state, directory, step_count, cfg):
    """Write the three fields as LEF1 files plus ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_field(directory / "offsets.lef", state.offsets_raw)
    write_field(directory / "sigma_logit.lef", state.sigma_logit)
    write_field(directory / "seed_logit.lef", state.seed_logit)
    manifest = {"step_count": int(step_count), "cfg_hash": cfg.digest(), "config": cfg.to_dict()}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_checkpoint(directory):
    directory = Path(directory)
    offsets = read_field(directory / "offsets.lef")
    sigma_logit = read_field(directory / "sigma_logit.lef")
    seed_logit = read_field(directory / "seed_logit.lef")
    if offsets.shape[2] != 2 or sigma_logit.shape[2] != 1 or seed_logit.shape[2] != 1:
        raise FormatError(f"{directory}: unexpected checkpoint channel counts")
    if not offsets.shape[:2] == sigma_logit.shape[:2] == seed_logit.shape[:2]:
        raise FormatError(f"{directory}: checkpoint fields disagree in grid size")
    return FieldState(offsets, sigma_logit[:, :, 0], seed_logit[:, :, 0])


class SpatialEmbeddingFitter(TransformerMixin, BaseEstimator):
    """Fit per-pixel embedding, bandwidth and seed fields to one labeling.

    ``fit(labels)`` optimizes the fields; ``transform`` returns the fitted
    ``[e_x, e_y, sigma, S]`` maps, which :class:`lanembed.cluster.SeedClusterer`
    consumes.

    Attributes
    ----------
    state_ : FieldState
    trajectory_ : list of LossReport
    n_iter_ : int
    """

    def __init__(
        self,
        step_size=100.0,
        momentum=0.9,
        max_steps=2000,
        stop_tolerance=0.0,
        random_state=0,
        prob_threshold=0.5,
        delta_margin=4.0,
        delta_push=8.0,
        weights=(1.0, 0.01, 0.1, 1.0),
    ):
        self.step_size = step_size
        self.momentum = momentum
        self.max_steps = max_steps
        self.stop_tolerance = stop_tolerance
        self.random_state = random_state
        self.prob_threshold = prob_threshold
        self.delta_margin = delta_margin
        self.delta_push = delta_push
        self.weights = weights

    def _config(self):
        loss = LossConfig(self.prob_threshold, self.delta_margin, self.delta_push, self.weights)
        return FitConfig(
            step_size=self.step_size,
            momentum=self.momentum,
            max_steps=self.max_steps,
            stop_tolerance=self.stop_tolerance,
            rng_seed=self.random_state,
            loss=loss,
        )

    def fit(self, X, y=None):
        labels, _ = check_labels(X, name="X")
        self.state_, self.trajectory_ = fit(labels, self._config())
        self.n_iter_ = len(self.trajectory_)
        return self

    def transform(self, X=None):
        check_is_fitted(self, "state_")
        if X is not None and np.shape(X)[:2] != self.state_.shape:
            raise ValueError(f"X grid {np.shape(X)[:2]} does not match fitted grid {self.state_.shape}")
        return self.state_.maps()
