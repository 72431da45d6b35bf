"""Shared fixtures: toy vocabularies, a reference backend, and a small
synthetic frame dataset on disk."""

from __future__ import annotations

import numpy as np
import pytest

from mobmod.cli import builtin_vocabulary
from mobmod.encoder import ReferenceBackend
from mobmod.labels import BENIGN, MALICIOUS
from mobmod_testlib import TOY_MERGES, TOY_TOKENS, build_manifest, make_vocabulary


@pytest.fixture(scope="session")
def toy_vocab():
    return make_vocabulary(TOY_TOKENS, TOY_MERGES)


@pytest.fixture(scope="session")
def char_vocab():
    return builtin_vocabulary()


@pytest.fixture(scope="session")
def reference_backend():
    return ReferenceBackend(seed=0)


@pytest.fixture(scope="session")
def synthetic_manifest(tmp_path_factory):
    root = tmp_path_factory.mktemp("clips")
    return build_manifest(root)


@pytest.fixture(scope="session")
def separable_features(reference_backend):
    """Pooled 768-d reference features for 40 linearly separable clips."""
    rng = np.random.default_rng(7)
    feats, labels = [], []
    for i in range(40):
        malicious = i % 2 == 0
        base = 0.15 if malicious else 0.75
        frames = [
            np.clip(rng.normal(base, 0.05, size=(3, 224, 224)), -3, 3).astype(np.float32)
            for _ in range(3)
        ]
        f768, _ = reference_backend.encode_frames(frames)
        feats.append(np.mean(f768, axis=0))
        labels.append(MALICIOUS if malicious else BENIGN)
    return np.stack(feats), labels
