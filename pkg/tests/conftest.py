"""Shared fixtures: a small synthetic corpus and ready-made model bundles."""

from __future__ import annotations

import numpy as np
import pytest

from epvkit.models.bundle import initial_bundle, save_bundle
from epvkit.pipeline import PipelineConfig, corpus_split, synthesize_corpus
from epvkit.pitch import GridSpec

from builders import make_bundle

# Smallest corpus that still populates every model role (including both
# goal outcomes for the shot model) across train/val/test splits.
TINY_CORPUS = dict(n_matches=6, match_minutes=10.0, seed=1)


@pytest.fixture(scope="session")
def tiny_matches():
    config = PipelineConfig(**TINY_CORPUS)
    return synthesize_corpus(config)


@pytest.fixture(scope="session")
def tiny_split(tiny_matches):
    return corpus_split(tiny_matches, PipelineConfig(**TINY_CORPUS))


@pytest.fixture(scope="session")
def random_bundle():
    """Untrained but structurally complete bundle on the full-size grid."""
    return initial_bundle(seed=7)


@pytest.fixture(scope="session")
def small_grid():
    return GridSpec(16, 16)


@pytest.fixture(scope="session")
def small_bundle(small_grid):
    """Untrained bundle whose surface models run on a 16x16 grid (fast)."""
    return make_bundle(seed=3, grid=small_grid)


@pytest.fixture(scope="session")
def bundle_dir(tmp_path_factory, random_bundle):
    """The full-size bundle saved to disk in the on-disk artifact layout."""
    out = tmp_path_factory.mktemp("bundle")
    save_bundle(random_bundle, out)
    return out


@pytest.fixture()
def rng():
    return np.random.default_rng(20260823)
