import os
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import pytest

from src.model import ModelConfig, ModelWeights
from src.synth import build_synth_model


@pytest.fixture
def small_config() -> ModelConfig:
    return ModelConfig(num_layers=2, d_model=16, ffn_dim=32, num_heads=2, vocab_size=40, max_seq_len=8)


@pytest.fixture
def gated_config() -> ModelConfig:
    return ModelConfig(num_layers=2, d_model=16, ffn_dim=32, num_heads=2, vocab_size=40, max_seq_len=8,
                       activation="silu", ffn_variant="gated", norm="layernorm")


@pytest.fixture
def small_weights(small_config) -> ModelWeights:
    return ModelWeights.random(small_config, seed=3, scale=0.3)


@pytest.fixture(scope="session")
def suite():
    """Seed-0 desk suite: 4 layers, d=64, m=256, 5 forget and 20 retain facts."""
    return build_synth_model(5, 20, ModelConfig(), seed=0)


@pytest.fixture(scope="session")
def suite_dir(suite, tmp_path_factory):
    out = tmp_path_factory.mktemp("suite")
    suite.save(out)
    return out
