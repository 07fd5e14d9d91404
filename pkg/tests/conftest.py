import numpy as np
import pytest


def random_scene(rng, height=8, width=8, k=2, fg_prob=0.6):
    """Random labeling with every id present, plus random offsets, sigma and seed."""
    labels = np.where(rng.random((height, width)) < fg_prob, rng.integers(1, k + 1, (height, width)), 0)
    for inst in range(1, k + 1):
        labels[(inst - 1) % height, (inst - 1) // height] = inst
    offsets = rng.normal(0.0, 1.5, (height, width, 2))
    sigma = rng.uniform(1.5, 3.0, (height, width))
    seed = rng.uniform(0.0, 1.0, (height, width))
    return labels, offsets, sigma, seed


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def record_acceptance(number, title, passed, detail):
    ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} | {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
