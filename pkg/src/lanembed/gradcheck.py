"""Central finite-difference checks for the loss gradients."""

from dataclasses import dataclass

import numpy as np

from .losses import TERMS, LossConfig, _evaluate, kink_pattern, total_loss_and_gradients

FIELDS = ("offsets", "sigma", "seed")


def _same_pattern(p, q):
    return len(p) == len(q) and all(a.shape == b.shape and np.array_equal(a, b) for a, b in zip(p, q))


@dataclass
class FDResult:
    """Finite-difference gradients per loss term and field.

    ``fd[term][field]`` has the shape of the field; ``smooth[field]`` is
    False at coordinates where the ±eps probes landed on different smooth
    pieces of the loss (sort-order changes or hinges switching).
    """

    fd: dict
    smooth: dict


def finite_difference(offsets, sigma, seed, labels, cfg=None, eps=1e-3):
    """Central differences of every loss term w.r.t. every parameter coordinate.

    The seed term is differenced with its affinity targets frozen at the base
    point, matching its detached definition; the ``"total"`` entry is the
    weighted sum under that convention.
    """
    cfg = cfg or LossConfig()
    base = {
        "offsets": np.array(offsets, dtype=np.float64),
        "sigma": np.array(sigma, dtype=np.float64),
        "seed": np.array(seed, dtype=np.float64),
    }
    _, _, target0 = _evaluate(base["offsets"], base["sigma"], base["seed"], labels, cfg)

    fd = {t: {f: np.zeros_like(base[f]) for f in FIELDS} for t in TERMS + ("total",)}
    smooth = {f: np.ones(base[f].shape, dtype=bool) for f in FIELDS}

    for name in FIELDS:
        arr = base[name]
        for idx in np.ndindex(arr.shape):
            probes = []
            for sign in (1.0, -1.0):
                pert = dict(base)
                pert[name] = arr.copy()
                pert[name][idx] += sign * eps
                pattern = []
                report, _, _ = _evaluate(pert["offsets"], pert["sigma"], pert["seed"], labels, cfg, pattern)
                seed_frozen = float(np.mean((pert["seed"] - target0) ** 2))
                probes.append((report, seed_frozen, pattern))
            (rp, sp, pp), (rm, sm, pm) = probes
            values = {
                "embedding": (rp.embedding, rm.embedding),
                "bandwidth": (rp.bandwidth, rm.bandwidth),
                "push": (rp.push, rm.push),
                "seed": (sp, sm),
            }
            w = dict(zip(TERMS, cfg.weights))
            total = [sum(w[t] * values[t][i] for t in TERMS) for i in (0, 1)]
            values["total"] = tuple(total)
            for term, (vp, vm) in values.items():
                fd[term][name][idx] = (vp - vm) / (2.0 * eps)
            smooth[name][idx] = _same_pattern(pp, pm)
    return FDResult(fd=fd, smooth=smooth)


def analytic(offsets, sigma, seed, labels, cfg=None):
    """Analytic gradients per term (one-hot weights) plus the weighted total."""
    cfg = cfg or LossConfig()
    out = {}
    for i, term in enumerate(TERMS):
        weights = [0.0] * 4
        weights[i] = 1.0
        one_hot = LossConfig(cfg.prob_threshold, cfg.delta_margin, cfg.delta_push, weights)
        _, g = total_loss_and_gradients(offsets, sigma, seed, labels, one_hot)
        out[term] = {"offsets": g.d_offsets, "sigma": g.d_sigma, "seed": g.d_seed}
    _, g = total_loss_and_gradients(offsets, sigma, seed, labels, cfg)
    out["total"] = {"offsets": g.d_offsets, "sigma": g.d_sigma, "seed": g.d_seed}
    return out


def relative_error(a, f, mask=None, floor=1e-8):
    """``max |a - f| / max(|a|_inf, |f|_inf, floor)`` over the masked coordinates."""
    a = np.asarray(a, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    if mask is None:
        mask = np.ones(a.shape, dtype=bool)
    if not mask.any():
        return 0.0
    scale = max(np.abs(a).max(), np.abs(f).max(), floor)
    return float(np.abs(a - f)[mask].max() / scale)


def check_gradients(offsets, sigma, seed, labels, cfg=None, eps=1e-3):
    """Return ``{term: max relative error over fields}`` at smooth coordinates.

    Also returns the fraction of coordinates that were skipped as kinks.
    """
    cfg = cfg or LossConfig()
    fd = finite_difference(offsets, sigma, seed, labels, cfg, eps)
    an = analytic(offsets, sigma, seed, labels, cfg)
    errors = {}
    for term in an:
        errors[term] = max(relative_error(an[term][f], fd.fd[term][f], fd.smooth[f]) for f in FIELDS)
    n = sum(m.size for m in fd.smooth.values())
    skipped = sum(int((~m).sum()) for m in fd.smooth.values()) / n
    return errors, skipped
