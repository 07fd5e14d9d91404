import numpy as np
import pytest

from conftest import random_scene
from lanembed.gradcheck import analytic, check_gradients, finite_difference, relative_error
from lanembed.losses import LossConfig

# bandwidth term active (margins up to ~3.5 px exceed delta_margin) and push active
ACTIVE = LossConfig(prob_threshold=0.5, delta_margin=2.0, delta_push=8.0, weights=(1.0, 0.5, 0.3, 1.0))


@pytest.mark.parametrize("k", [1, 2, 3])
@pytest.mark.parametrize("seed", [0, 1])
def test_all_terms_match_finite_differences(k, seed):
    rng = np.random.default_rng(100 + 10 * k + seed)
    labels, off, sig, s = random_scene(rng, 6, 6, k)
    errors, skipped = check_gradients(off, sig, s, labels, ACTIVE)
    assert skipped < 0.2
    for term, err in errors.items():
        assert err < 1e-4, term


def test_bandwidth_term_is_exercised(rng):
    labels, off, sig, s = random_scene(rng, 6, 6, 2)
    an = analytic(off, sig, s, labels, ACTIVE)
    assert np.abs(an["bandwidth"]["sigma"]).max() > 0
    assert np.abs(an["push"]["offsets"]).max() > 0


def test_seed_term_touches_only_seed(rng):
    labels, off, sig, s = random_scene(rng, 6, 6, 2)
    an = analytic(off, sig, s, labels, ACTIVE)
    assert not an["seed"]["offsets"].any()
    assert not an["seed"]["sigma"].any()


def test_background_gets_no_embedding_gradient(rng):
    labels, off, sig, s = random_scene(rng, 6, 6, 2)
    an = analytic(off, sig, s, labels, ACTIVE)
    bg = labels == 0
    for term in ("embedding", "bandwidth", "push"):
        assert not an[term]["offsets"][bg].any()
        assert not an[term]["sigma"][bg].any()


def test_fd_smooth_mask_shapes(rng):
    labels, off, sig, s = random_scene(rng, 4, 4, 1)
    res = finite_difference(off, sig, s, labels, ACTIVE)
    assert res.smooth["offsets"].shape == (4, 4, 2)
    assert res.fd["total"]["seed"].shape == (4, 4)


def test_relative_error():
    assert relative_error([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert relative_error([1.0, 2.0], [1.0, 1.0]) == 0.5
    assert relative_error([0.0], [0.0]) == 0.0
    assert relative_error([1.0, 5.0], [1.0, 0.0], mask=np.array([True, False])) == 0.0
