from pathlib import Path

import numpy as np
import pytest

from kgnli.models import ModelConfig, PairFeatures

FIXTURES = Path(__file__).parent / "fixtures"

# Acceptance results, printed once at the end of the session.
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")


@pytest.fixture
def fixtures():
    return FIXTURES


def numeric_grad(fn, x, h=1e-6):
    """Central differences of scalar ``fn()`` w.r.t. array ``x`` (mutated in place)."""
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + h
        up = fn()
        x[idx] = orig - h
        down = fn()
        x[idx] = orig
        g[idx] = (up - down) / (2 * h)
    return g


def random_features(rng, cfg: ModelConfig, k=None, j=None, kc=None, jc=None) -> PairFeatures:
    k = k or int(rng.integers(1, 6))
    j = j or int(rng.integers(1, 6))
    kc = int(rng.integers(0, 6)) if kc is None else kc
    jc = int(rng.integers(0, 6)) if jc is None else jc
    return PairFeatures(rng.normal(size=(k, cfg.word_dim)), rng.normal(size=(j, cfg.word_dim)),
                        rng.normal(size=(kc, cfg.concept_dim)),
                        rng.normal(size=(jc, cfg.concept_dim)))


def jitter(params, rng, scale=0.2):
    """Move every parameter off its init (zero biases put relus on kinks)."""
    for name in params:
        params[name].data += rng.normal(0.0, scale, params[name].shape)
