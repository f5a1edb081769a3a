import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=50, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


MNIST_DIR = os.environ.get("KIERA_MNIST", "/root/data/mnist")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_config(**kw):
    """A learner small enough to train in milliseconds."""
    from kiera.learner import LearnerConfig

    base = dict(extractor_dims=(16, 8, 4), initial_width=4, n_init=20, epochs=2,
                batch_size=10, labelled_per_class=3, grace=5, seed=0)
    base.update(kw)
    return LearnerConfig(**base)


def blob_stream(seed, n, centers, dim=16, noise=0.05):
    """Images in [0, 1] drawn around fixed prototype vectors, with labels."""
    r = np.random.default_rng(seed)
    protos = np.random.default_rng(99).uniform(0, 1, (max(centers) + 1, dim))
    y = r.choice(centers, size=n)
    X = np.clip(protos[y] + r.normal(0, noise, (n, dim)), 0, 1)
    return X, y


# Acceptance criteria register their verdict here; the summary hook prints
# one line per criterion at the end of the session.
ACCEPTANCE: dict[int, tuple[str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        verdict, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {verdict}  {detail}")
