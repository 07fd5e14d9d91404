"""Embedding, bandwidth-saturation, push and seed losses with analytic gradients.

All four terms are evaluated in float64. Gradients are returned with respect
to the offset field, the per-pixel bandwidth ``sigma`` and the seed
probability map; reparametrizations (log-sigma, seed logits) are chain-ruled
by :mod:`lanembed.optimize`.
"""

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ._validation import (
    check_field,
    check_labels,
    check_open_unit,
    check_plane,
    check_positive,
    check_same_grid,
)
from .core import instance_stats, make_coordinate_maps
from .exceptions import ConfigError, DomainError

TERMS = ("embedding", "bandwidth", "push", "seed")


@dataclass(frozen=True)
class LossConfig:
    """Loss hyperparameters.

    ``weights`` are ``(w_e, w_b, w_d, w_s)`` for the embedding, bandwidth
    saturation, push and seed terms.
    """

    prob_threshold: float = 0.5
    delta_margin: float = 4.0
    delta_push: float = 8.0
    weights: tuple = (1.0, 0.01, 0.1, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        try:
            check_open_unit(self.prob_threshold, "prob_threshold")
            check_positive(self.delta_margin, "delta_margin")
            check_positive(self.delta_push, "delta_push")
        except DomainError as exc:
            raise ConfigError(str(exc)) from exc
        if len(self.weights) != 4 or any(not w >= 0 for w in self.weights):
            raise ConfigError(f"weights must be four nonnegative reals, got {self.weights}")

    def to_dict(self):
        d = asdict(self)
        d["weights"] = list(self.weights)
        return d

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - {"prob_threshold", "delta_margin", "delta_push", "weights"}
        if unknown:
            raise ConfigError(f"unknown LossConfig fields: {sorted(unknown)}")
        return cls(**data)


@dataclass
class LossReport:
    total: float
    embedding: float
    bandwidth: float
    push: float
    seed: float
    grad_norms: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


@dataclass
class Gradients:
    d_offsets: np.ndarray
    d_sigma: np.ndarray
    d_seed: np.ndarray


# -- scalar building blocks ---------------------------------------------------


def gaussian_affinity(e_i, c_k, sigma_k):
    """``exp(-|e_i - c_k|^2 / (2 sigma_k^2))``."""
    if not sigma_k > 0:
        raise DomainError(f"sigma_k must be > 0, got {sigma_k}")
    d2 = float(np.sum((np.asarray(e_i, dtype=np.float64) - np.asarray(c_k, dtype=np.float64)) ** 2))
    return math.exp(-d2 / (2.0 * sigma_k * sigma_k))


def margin(sigma_k, prob_threshold):
    """Radius at which the Gaussian affinity with bandwidth ``sigma_k`` equals the threshold."""
    if not sigma_k > 0:
        raise DomainError(f"sigma_k must be > 0, got {sigma_k}")
    check_open_unit(prob_threshold, "prob_threshold")
    return math.sqrt(-2.0 * sigma_k * sigma_k * math.log(prob_threshold))


# -- Lovasz hinge -------------------------------------------------------------


def _jaccard_increments(gt_sorted):
    """Discrete gradient of the Jaccard loss along a sorted label vector."""
    gts = gt_sorted.sum()
    intersection = gts - np.cumsum(gt_sorted)
    union = gts + np.cumsum(1.0 - gt_sorted)
    jaccard = 1.0 - intersection / union
    jaccard[1:] = np.diff(jaccard)
    return jaccard


def _check_binary(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.size == 0:
        raise DomainError("lovasz_hinge needs at least one element")
    if s.shape != y.shape:
        raise DomainError(f"scores and labels differ in length: {s.size} vs {y.size}")
    if not np.all((y == 0) | (y == 1)):
        raise DomainError("labels must be 0 or 1")
    return s, y.astype(np.float64)


def lovasz_hinge_grad(scores, labels):
    """Lovasz hinge value, its subgradient w.r.t. ``scores``, and the per-element coefficients.

    The sort permutation is taken with a stable sort, so ties resolve in
    index order. The third return holds, for every element, the Jaccard
    increment it was weighted by.
    """
    s, y = _check_binary(scores, labels)
    signs = 2.0 * y - 1.0
    errors = np.maximum(1.0 - s * signs, 0.0)
    order = np.argsort(-errors, kind="stable")
    coeff = _jaccard_increments(y[order])
    value = float(np.dot(errors[order], coeff))
    per_elem = np.empty_like(coeff)
    per_elem[order] = coeff
    grad = np.where(errors > 0, -signs * per_elem, 0.0)
    return value, grad, per_elem


def lovasz_hinge(scores, labels):
    """Lovasz extension of the Jaccard loss applied to hinge errors."""
    return lovasz_hinge_grad(scores, labels)[0]


# -- per-term evaluation ------------------------------------------------------


def _embedding_term(emb, sig, labels, k, pattern=None):
    """Return L_e and its gradients w.r.t. embedding (H, W, 2) and sigma (H, W)."""
    fg = labels > 0
    if not fg.any():
        raise DomainError("embedding loss needs at least one foreground pixel")
    ef = emb[fg]
    sf = sig[fg]
    lab = labels[fg] - 1
    counts = np.bincount(lab, minlength=k)
    cent = np.stack(
        [np.bincount(lab, weights=ef[:, 0], minlength=k), np.bincount(lab, weights=ef[:, 1], minlength=k)],
        axis=1,
    ) / counts[:, None]
    smean = np.bincount(lab, weights=sf, minlength=k) / counts

    ge = np.zeros_like(ef)
    gs = np.zeros_like(sf)
    total = 0.0
    for j in range(k):
        diff = ef - cent[j]
        d2 = np.einsum("ij,ij->i", diff, diff)
        s2 = smean[j] * smean[j]
        phi = np.exp(-d2 / (2.0 * s2))
        member = lab == j
        value, dscore, coeff = lovasz_hinge_grad(2.0 * phi - 1.0, member)
        total += value
        if pattern is not None:
            pattern.append(np.where(np.abs(1.0 - (2.0 * phi - 1.0) * (2.0 * member - 1.0)) > 1e-9, coeff, 0.0))
        dphi = 2.0 * dscore / k
        w = dphi * phi / s2
        # phi depends on e_i directly, on C_j (mean embedding) and on sigma_j (mean sigma)
        ge -= w[:, None] * diff
        ge[member] += (w[:, None] * diff).sum(axis=0) / counts[j]
        gs[member] += np.dot(dphi * phi, d2) / (s2 * smean[j]) / counts[j]

    grad_e = np.zeros_like(emb)
    grad_s = np.zeros_like(sig)
    grad_e[fg] = ge
    grad_s[fg] = gs
    return total / k, grad_e, grad_s


def _bandwidth_term(sigma_mean, cfg, pattern=None):
    """Return L_b and dL_b / d sigma_k."""
    k = len(sigma_mean)
    scale = math.sqrt(-2.0 * math.log(cfg.prob_threshold))
    excess = scale * sigma_mean - cfg.delta_margin
    active = excess > 0
    if pattern is not None:
        pattern.append(active)
    return float(np.where(active, excess, 0.0).sum() / k), np.where(active, scale / k, 0.0)


def _push_term(centroid, cfg, pattern=None):
    """Return L_d and dL_d / d C_k."""
    k = len(centroid)
    grad = np.zeros_like(centroid)
    if k < 2:
        return 0.0, grad
    diff = centroid[:, None, :] - centroid[None, :, :]
    dist = np.sqrt(np.einsum("abi,abi->ab", diff, diff))
    hinge = np.maximum(2.0 * cfg.delta_push - dist, 0.0)
    np.fill_diagonal(hinge, 0.0)
    if pattern is not None:
        pattern.append(hinge > 0)
    norm = k * (k - 1)
    value = float((hinge**2).sum() / norm)
    safe = np.where(dist > 0, dist, 1.0)
    # ordered pairs (a, b) and (b, a) contribute equally, hence the factor 2
    coef = np.where(dist > 0, -2.0 * 2.0 * hinge / safe, 0.0) / norm
    grad = np.einsum("ab,abi->ai", coef, diff)
    return value, grad


def seed_targets(embedding, sigma, labels):
    """Seed regression target: own-instance affinity on foreground, 0 elsewhere."""
    emb = check_field(embedding, channels=2, name="embedding")
    sig = check_plane(sigma, name="sigma")
    labels, _ = check_labels(labels)
    check_same_grid(emb, sig, labels, names=["embedding", "sigma", "labels"])
    target = np.zeros(labels.shape)
    fg = labels > 0
    if not fg.any():
        return target
    stats = instance_stats(emb, sig, labels)
    lab = labels[fg] - 1
    diff = emb[fg] - stats.centroid[lab]
    s = stats.sigma_mean[lab]
    target[fg] = np.exp(-np.einsum("ij,ij->i", diff, diff) / (2.0 * s * s))
    return target


# -- public per-term losses ---------------------------------------------------


def embedding_loss(embedding, sigma, labels, cfg=None):
    """Mean over instances of the Lovasz hinge on foreground affinities.

    Background pixels are excluded entirely; only foreground embeddings and
    bandwidths enter the computation.
    """
    emb = check_field(embedding, channels=2, name="embedding")
    sig = check_plane(sigma, name="sigma")
    labels, k = check_labels(labels)
    check_same_grid(emb, sig, labels, names=["embedding", "sigma", "labels"])
    if k == 0:
        raise DomainError("embedding loss needs at least one foreground pixel")
    if np.any(sig[labels > 0] <= 0):
        raise DomainError("sigma must be > 0 on every foreground pixel")
    return _embedding_term(emb, sig, labels, k)[0]


def bandwidth_saturation_loss(stats, cfg=None):
    cfg = cfg or LossConfig()
    return _bandwidth_term(np.asarray(stats.sigma_mean, dtype=np.float64), cfg)[0]


def push_loss(stats, cfg=None):
    cfg = cfg or LossConfig()
    return _push_term(np.asarray(stats.centroid, dtype=np.float64), cfg)[0]


def seed_loss(seed, embedding, sigma, labels, cfg=None):
    """Mean squared error of the seed map against detached affinity targets over all pixels."""
    s = check_plane(seed, name="seed")
    target = seed_targets(embedding, sigma, labels)
    check_same_grid(s, target, names=["seed", "labels"])
    return float(np.mean((s - target) ** 2))


# -- aggregate ----------------------------------------------------------------


def _evaluate(offsets, sigma, seed, labels, cfg, pattern=None):
    off = check_field(offsets, channels=2, name="offsets")
    sig = check_plane(sigma, name="sigma")
    s = check_plane(seed, name="seed")
    labels, k = check_labels(labels)
    check_same_grid(off, sig, s, labels, names=["offsets", "sigma", "seed", "labels"])
    if k == 0:
        raise DomainError("loss needs at least one foreground instance")
    fg = labels > 0
    if np.any(sig[fg] <= 0):
        raise DomainError("sigma must be > 0 on every foreground pixel")

    h, w = labels.shape
    emb = make_coordinate_maps(h, w).stack().astype(np.float64) + off
    w_e, w_b, w_d, w_s = cfg.weights

    l_e, ge, gs = _embedding_term(emb, sig, labels, k, pattern)

    stats = instance_stats(emb, sig, labels)
    l_b, gsk = _bandwidth_term(stats.sigma_mean, cfg, pattern)
    l_d, gck = _push_term(stats.centroid, cfg, pattern)
    lab = labels[fg] - 1
    counts = stats.pixel_count

    target = np.zeros(labels.shape)
    diff = emb[fg] - stats.centroid[lab]
    sm = stats.sigma_mean[lab]
    target[fg] = np.exp(-np.einsum("ij,ij->i", diff, diff) / (2.0 * sm * sm))
    l_s = float(np.mean((s - target) ** 2))

    d_off = w_e * ge
    d_off[fg] += w_d * gck[lab] / counts[lab, None]
    d_sig = w_e * gs
    d_sig[fg] += w_b * gsk[lab] / counts[lab]
    d_seed = w_s * 2.0 * (s - target) / s.size

    total = w_e * l_e + w_b * l_b + w_d * l_d + w_s * l_s
    grads = Gradients(d_offsets=d_off, d_sigma=d_sig, d_seed=d_seed)
    report = LossReport(
        total=float(total),
        embedding=float(l_e),
        bandwidth=float(l_b),
        push=float(l_d),
        seed=float(l_s),
        grad_norms={
            "offsets": float(np.abs(d_off).max()),
            "sigma": float(np.abs(d_sig).max()),
            "seed": float(np.abs(d_seed).max()),
        },
    )
    return report, grads, target


def total_loss_and_gradients(offsets, sigma, seed, labels, cfg=None):
    """Weighted sum of the four losses and its gradients.

    Parameters
    ----------
    offsets : array (H, W, 2)
    sigma : array (H, W), positive on the foreground
    seed : array (H, W), seed probabilities
    labels : int array (H, W), 0 background, 1..K instances
    cfg : LossConfig

    Returns
    -------
    (LossReport, Gradients)
        Gradients flow through each embedding, through every centroid (the
        mean embedding of its instance) and through every instance bandwidth
        (the mean sigma). The seed loss treats its targets as constants and so
        contributes to ``d_seed`` only.
    """
    report, grads, _ = _evaluate(offsets, sigma, seed, labels, cfg or LossConfig())
    return report, grads


def kink_pattern(offsets, sigma, seed, labels, cfg=None):
    """Piecewise-linear structure of the loss at a point.

    Two points with equal patterns lie on the same smooth piece: same Lovasz
    weight for every element with non-zero error, same active hinges.
    """
    pattern = []
    _evaluate(offsets, sigma, seed, labels, cfg or LossConfig(), pattern)
    return pattern
