"""Shared fixtures: a small synthetic corpus and a desk-scale run config."""

import numpy as np
import pytest

from dmha import synthdata as sd
from dmha import trainer as tr
from dmha.config import RunConfig


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """3 speakers x 3 utterances x 1.2 s, seed 7; returns (dir, utterances)."""
    root = tmp_path_factory.mktemp("corpus")
    manifest = sd.generate_corpus(root, num_speakers=3, utts_per_speaker=3,
                                  duration_s=1.2, seed=7)
    return root, tr.load_manifest(manifest)


@pytest.fixture(scope="session")
def tiny_run_config():
    """Smallest config that exercises every stage (D = 8*2*5 = 80)."""
    return RunConfig(base_channels=2, hidden=16, pooling="dmha", heads=2,
                     s=5.0, m=0.2, chunk_frames=64, batch_size=4, lr=1e-3,
                     max_epochs=2, validation_fraction=0.0, seed=7).validate()


@pytest.fixture
def rng():
    return np.random.default_rng(0)
